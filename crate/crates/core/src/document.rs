//! Documents and their life cycle.
//!
//! ```text
//!   QueuedRaw ──StartProcessing──▶ Processing ──ProcessingDone──▶ QueuedProcessed
//!       │                              │                              │
//!       │                              └──ProcessingFailed────────────┤
//!       └───────────StartUpload──────▶ Uploading ◀──StartUpload───────┘
//!                                          │
//!                                      UploadDone
//!                                          ▼
//!                                       Uploaded
//! ```
//!
//! A failed processing attempt lands in `QueuedProcessed` with no measured
//! size, so the document is uploaded with its original bytes and never
//! offered to the operator again.

use core::fmt;

use thiserror::Error;

/// Position of a document in the stream.
pub type DocIndex = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DocumentState {
    QueuedRaw,
    Processing,
    QueuedProcessed,
    Uploading,
    Uploaded,
}

impl DocumentState {
    pub fn is_queued(self) -> bool {
        matches!(
            self,
            DocumentState::QueuedRaw | DocumentState::QueuedProcessed
        )
    }
}

impl fmt::Display for DocumentState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DocumentState::QueuedRaw => "queued(unprocessed)",
            DocumentState::Processing => "processing",
            DocumentState::QueuedProcessed => "queued(processed)",
            DocumentState::Uploading => "uploading",
            DocumentState::Uploaded => "uploaded",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LifecycleEvent {
    StartProcessing {
        at: f64,
    },
    ProcessingDone {
        at: f64,
        processed_size: u64,
        cpu_cost: f64,
    },
    ProcessingFailed {
        at: f64,
    },
    StartUpload {
        at: f64,
    },
    UploadDone {
        at: f64,
    },
}

impl LifecycleEvent {
    pub fn at(&self) -> f64 {
        match *self {
            LifecycleEvent::StartProcessing { at }
            | LifecycleEvent::ProcessingDone { at, .. }
            | LifecycleEvent::ProcessingFailed { at }
            | LifecycleEvent::StartUpload { at }
            | LifecycleEvent::UploadDone { at } => at,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LifecycleEvent::StartProcessing { .. } => "StartProcessing",
            LifecycleEvent::ProcessingDone { .. } => "ProcessingDone",
            LifecycleEvent::ProcessingFailed { .. } => "ProcessingFailed",
            LifecycleEvent::StartUpload { .. } => "StartUpload",
            LifecycleEvent::UploadDone { .. } => "UploadDone",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LifecycleError {
    #[error("document {index}: illegal transition {event} from state {from}")]
    IllegalTransition {
        index: DocIndex,
        from: DocumentState,
        event: &'static str,
    },
    #[error("document {0} has not been processed")]
    NotYetProcessed(DocIndex),
    #[error("document {index}: invalid measurement ({reason})")]
    InvalidMeasurement {
        index: DocIndex,
        reason: &'static str,
    },
}

/// Times at which each transition happened, relative to stream start.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timestamps {
    pub arrived: f64,
    pub processing_started: Option<f64>,
    pub processing_finished: Option<f64>,
    pub upload_started: Option<f64>,
    pub uploaded: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub index: DocIndex,
    pub arrival_time: f64,
    pub original_size: u64,
    pub processed_size: Option<u64>,
    pub cpu_cost: Option<f64>,
    pub state: DocumentState,
    /// Set when the operator failed on this document.
    pub processing_failed: bool,
    pub timestamps: Timestamps,
}

impl Document {
    pub fn new(index: DocIndex, arrival_time: f64, original_size: u64) -> Self {
        Document {
            index,
            arrival_time,
            original_size,
            processed_size: None,
            cpu_cost: None,
            state: DocumentState::QueuedRaw,
            processing_failed: false,
            timestamps: Timestamps {
                arrived: arrival_time,
                ..Timestamps::default()
            },
        }
    }

    /// Applies `event`, leaving the document untouched on error.
    pub fn transition(&mut self, event: LifecycleEvent) -> Result<(), LifecycleError> {
        use DocumentState::*;
        use LifecycleEvent::*;

        let next = match (self.state, event) {
            (QueuedRaw, StartProcessing { .. }) => Processing,
            (
                Processing,
                ProcessingDone {
                    processed_size,
                    cpu_cost,
                    ..
                },
            ) => {
                if processed_size == 0 || processed_size > self.original_size {
                    return Err(LifecycleError::InvalidMeasurement {
                        index: self.index,
                        reason: "processed size outside (0, original]",
                    });
                }
                if !(cpu_cost > 0.0) || !cpu_cost.is_finite() {
                    return Err(LifecycleError::InvalidMeasurement {
                        index: self.index,
                        reason: "cpu cost must be positive",
                    });
                }
                QueuedProcessed
            }
            (Processing, ProcessingFailed { .. }) => QueuedProcessed,
            (QueuedRaw | QueuedProcessed, StartUpload { .. }) => Uploading,
            (Uploading, UploadDone { .. }) => Uploaded,
            (from, event) => {
                return Err(LifecycleError::IllegalTransition {
                    index: self.index,
                    from,
                    event: event.name(),
                })
            }
        };

        let at = event.at();
        match event {
            StartProcessing { .. } => self.timestamps.processing_started = Some(at),
            ProcessingDone {
                processed_size,
                cpu_cost,
                ..
            } => {
                self.processed_size = Some(processed_size);
                self.cpu_cost = Some(cpu_cost);
                self.timestamps.processing_finished = Some(at);
            }
            ProcessingFailed { .. } => {
                self.processing_failed = true;
                self.timestamps.processing_finished = Some(at);
            }
            StartUpload { .. } => self.timestamps.upload_started = Some(at),
            UploadDone { .. } => self.timestamps.uploaded = Some(at),
        }
        self.state = next;
        Ok(())
    }

    /// Bytes that go over the link: the processed size if processing
    /// completed before upload, else the original size.
    pub fn upload_size(&self) -> u64 {
        self.processed_size.unwrap_or(self.original_size)
    }

    pub fn is_processed(&self) -> bool {
        self.processed_size.is_some()
    }
}

/// Bytes saved per CPU-second: `(original - processed) / cpu_cost`.
pub fn normalized_reduction(doc: &Document) -> Result<f64, LifecycleError> {
    match (doc.processed_size, doc.cpu_cost) {
        (Some(processed), Some(cost)) => Ok(reduction_ratio(doc.original_size, processed, cost)),
        _ => Err(LifecycleError::NotYetProcessed(doc.index)),
    }
}

/// The ratio formula on raw measurements. Every producer of ratios (simulator,
/// workload ground truth, agent) goes through this so values agree bit for bit.
pub fn reduction_ratio(original_size: u64, processed_size: u64, cpu_cost: f64) -> f64 {
    original_size.saturating_sub(processed_size) as f64 / cpu_cost
}
