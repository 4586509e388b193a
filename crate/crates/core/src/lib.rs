//! Message-size-aware scheduling of stream processing at the edge.
//!
//! Documents arrive at an edge node, may be shrunk by a stream operator on
//! one of `M` CPU slots, and are uploaded over a capped link with at most `N`
//! concurrent transfers. The scheduler prioritizes processing for documents
//! whose CPU-normalized size reduction is expected to be largest, learning
//! that ratio online with a piecewise-linear spline over stream index.
//!
//! This crate is `no_std` (it needs `alloc`) and holds everything that does
//! not touch the filesystem or the network:
//!
//! - [`document`]: the document life-cycle state machine
//! - [`estimator`]: the online ratio spline
//! - [`policy`]: processing and upload selection rules
//! - [`link`]: fluid processor-sharing model of the upload channel
//! - [`sim`]: deterministic discrete-event engine
//! - [`workload`]: synthetic workloads with locally correlated ratios
//! - [`fill`]: the border-seeded threshold flood fill operator
//! - [`trace`]: life-cycle trace events and their validator

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod document;
pub mod estimator;
pub mod fill;
pub mod link;
pub mod policy;
pub mod seed;
pub mod sim;
pub mod stats;
pub mod trace;
pub mod workload;

pub use document::{
    normalized_reduction, DocIndex, Document, DocumentState, LifecycleError, LifecycleEvent,
};
pub use estimator::{EstimatorError, RatioSpline};
pub use fill::{threshold_flood_fill, Connectivity, GrayImage, DEFAULT_THRESHOLD};
pub use link::{mbps_to_bytes_per_sec, LinkError, SharedLink};
pub use policy::{
    ProcessChooser, ProcessPolicy, ProcessScheduler, QueueEntry, Selection, SelectionKind,
    UploadChooser, UploadPolicy, UploadScheduler,
};
pub use sim::{run, run_many, run_with, RunMetrics, SimConfig, SimError, SimOutcome};
pub use stats::BoxSummary;
pub use trace::{validate_trace, EventKind, TraceError, TraceEvent, TraceLimits};
pub use workload::{Bump, ProfileSpec, Workload, WorkloadDoc, WorkloadError};
