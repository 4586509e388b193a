//! Filesystem, network and command-line side of the edge scheduler.
//!
//! - [`manifest`]: workload manifests (CSV)
//! - [`formats`]: trace, metrics, spline and figure CSVs
//! - [`operator`]: PNG decode, flood fill, re-encode
//! - [`gateway`]: HTTP service that persists uploaded documents
//! - [`agent`]: directory-watching edge agent with worker pools
//! - [`bench`]: paired-seed benchmark over named configurations
//! - [`config`]: TOML configuration file

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::result_large_err)]

pub mod agent;
pub mod bench;
pub mod config;
pub mod cputime;
pub mod formats;
pub mod gateway;
pub mod manifest;
pub mod operator;

pub use edgeprio_core as core;
