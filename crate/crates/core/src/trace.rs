//! Timestamped life-cycle events and the validator shared by simulator and
//! agent traces.

use alloc::collections::BTreeMap;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::document::{DocIndex, Document, DocumentState, LifecycleError, LifecycleEvent};
use crate::policy::SelectionKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Arrive,
    ProcStart(SelectionKind),
    ProcEnd,
    ProcFail,
    UploadStart,
    UploadEnd,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Arrive => "arrive",
            EventKind::ProcStart(SelectionKind::Prio) => "proc_start_prio",
            EventKind::ProcStart(SelectionKind::Search) => "proc_start_search",
            EventKind::ProcStart(SelectionKind::Plain) => "proc_start_plain",
            EventKind::ProcEnd => "proc_end",
            EventKind::ProcFail => "proc_fail",
            EventKind::UploadStart => "upload_start",
            EventKind::UploadEnd => "upload_end",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownEventKind;

impl fmt::Display for UnknownEventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("unknown event kind")
    }
}

impl core::error::Error for UnknownEventKind {}

impl FromStr for EventKind {
    type Err = UnknownEventKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "arrive" => EventKind::Arrive,
            "proc_start_prio" => EventKind::ProcStart(SelectionKind::Prio),
            "proc_start_search" => EventKind::ProcStart(SelectionKind::Search),
            "proc_start_plain" => EventKind::ProcStart(SelectionKind::Plain),
            "proc_end" => EventKind::ProcEnd,
            "proc_fail" => EventKind::ProcFail,
            "upload_start" => EventKind::UploadStart,
            "upload_end" => EventKind::UploadEnd,
            _ => return Err(UnknownEventKind),
        })
    }
}

/// One trace row. `detail` carries bytes for arrive/upload events, the
/// spline estimate at selection for `proc_start_*`, and the measured
/// normalized reduction for `proc_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEvent {
    pub time: f64,
    pub index: DocIndex,
    pub kind: EventKind,
    pub detail: f64,
}

impl TraceEvent {
    pub fn new(time: f64, index: DocIndex, kind: EventKind, detail: f64) -> Self {
        TraceEvent {
            time,
            index,
            kind,
            detail,
        }
    }
}

/// Bounds the validator enforces beyond the state machine.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TraceLimits {
    pub cpu_slots: Option<usize>,
    pub upload_slots: Option<usize>,
    /// Every arrived document must end `Uploaded`.
    pub require_complete: bool,
    /// Exact number of distinct documents expected.
    pub expected_docs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("event {position}: time {time} precedes previous event")]
    TimeWentBackwards { position: usize, time: f64 },
    #[error("event {position}: non-finite time")]
    BadTime { position: usize },
    #[error("event {position}: document {index} arrived twice")]
    DuplicateArrival { position: usize, index: DocIndex },
    #[error("event {position}: document {index} has events before arriving")]
    NotArrived { position: usize, index: DocIndex },
    #[error("event {position}: {source}")]
    Lifecycle {
        position: usize,
        source: LifecycleError,
    },
    #[error("event {position}: {what} concurrency {count} exceeds limit {limit}")]
    Concurrency {
        position: usize,
        what: &'static str,
        count: usize,
        limit: usize,
    },
    #[error("document {index} ended in state {state}")]
    Incomplete {
        index: DocIndex,
        state: DocumentState,
    },
    #[error("expected {expected} documents, trace has {found}")]
    DocumentCount { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TraceSummary {
    pub documents: usize,
    pub processed: usize,
    pub uploaded: usize,
    pub max_processing: usize,
    pub max_uploading: usize,
}

/// Replays `events` through the document state machine.
pub fn validate_trace(
    events: &[TraceEvent],
    limits: TraceLimits,
) -> Result<TraceSummary, TraceError> {
    let mut docs: BTreeMap<DocIndex, Document> = BTreeMap::new();
    let mut summary = TraceSummary::default();
    let mut processing = 0usize;
    let mut uploading = 0usize;
    let mut last = f64::NEG_INFINITY;

    for (position, ev) in events.iter().enumerate() {
        if !ev.time.is_finite() {
            return Err(TraceError::BadTime { position });
        }
        if ev.time < last {
            return Err(TraceError::TimeWentBackwards {
                position,
                time: ev.time,
            });
        }
        last = ev.time;

        if ev.kind == EventKind::Arrive {
            if docs.contains_key(&ev.index) {
                return Err(TraceError::DuplicateArrival {
                    position,
                    index: ev.index,
                });
            }
            // Sizes are not checked here; the state machine is.
            docs.insert(ev.index, Document::new(ev.index, ev.time, u64::MAX));
            continue;
        }

        let doc = docs.get_mut(&ev.index).ok_or(TraceError::NotArrived {
            position,
            index: ev.index,
        })?;
        let at = ev.time;
        let event = match ev.kind {
            EventKind::Arrive => unreachable!(),
            EventKind::ProcStart(_) => LifecycleEvent::StartProcessing { at },
            EventKind::ProcEnd => LifecycleEvent::ProcessingDone {
                at,
                processed_size: 1,
                cpu_cost: 1.0,
            },
            EventKind::ProcFail => LifecycleEvent::ProcessingFailed { at },
            EventKind::UploadStart => LifecycleEvent::StartUpload { at },
            EventKind::UploadEnd => LifecycleEvent::UploadDone { at },
        };
        doc.transition(event)
            .map_err(|source| TraceError::Lifecycle { position, source })?;

        match ev.kind {
            EventKind::ProcStart(_) => processing += 1,
            EventKind::ProcEnd | EventKind::ProcFail => {
                processing -= 1;
                if ev.kind == EventKind::ProcEnd {
                    summary.processed += 1;
                }
            }
            EventKind::UploadStart => uploading += 1,
            EventKind::UploadEnd => {
                uploading -= 1;
                summary.uploaded += 1;
            }
            EventKind::Arrive => {}
        }
        summary.max_processing = summary.max_processing.max(processing);
        summary.max_uploading = summary.max_uploading.max(uploading);
        for (what, count, limit) in [
            ("processing", processing, limits.cpu_slots),
            ("upload", uploading, limits.upload_slots),
        ] {
            if let Some(limit) = limit {
                if count > limit {
                    return Err(TraceError::Concurrency {
                        position,
                        what,
                        count,
                        limit,
                    });
                }
            }
        }
    }

    summary.documents = docs.len();
    if limits.require_complete {
        if let Some(doc) = docs.values().find(|d| d.state != DocumentState::Uploaded) {
            return Err(TraceError::Incomplete {
                index: doc.index,
                state: doc.state,
            });
        }
    }
    if let Some(expected) = limits.expected_docs {
        if expected != docs.len() {
            return Err(TraceError::DocumentCount {
                expected,
                found: docs.len(),
            });
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ev(time: f64, index: DocIndex, kind: EventKind) -> TraceEvent {
        TraceEvent::new(time, index, kind, 0.0)
    }

    fn complete() -> TraceLimits {
        TraceLimits {
            require_complete: true,
            ..TraceLimits::default()
        }
    }

    #[test]
    fn accepts_both_paths() {
        let t = vec![
            ev(0.0, 0, EventKind::Arrive),
            ev(0.0, 0, EventKind::ProcStart(SelectionKind::Prio)),
            ev(0.5, 1, EventKind::Arrive),
            ev(0.5, 1, EventKind::UploadStart),
            ev(1.0, 0, EventKind::ProcEnd),
            ev(1.0, 0, EventKind::UploadStart),
            ev(2.0, 1, EventKind::UploadEnd),
            ev(2.5, 0, EventKind::UploadEnd),
        ];
        let s = validate_trace(&t, complete()).unwrap();
        assert_eq!(s.documents, 2);
        assert_eq!(s.processed, 1);
        assert_eq!(s.uploaded, 2);
        assert_eq!(s.max_uploading, 2);
    }

    #[test]
    fn rejects_processing_after_upload_start() {
        let t = vec![
            ev(0.0, 0, EventKind::Arrive),
            ev(0.0, 0, EventKind::UploadStart),
            ev(0.1, 0, EventKind::ProcStart(SelectionKind::Search)),
        ];
        assert!(matches!(
            validate_trace(&t, TraceLimits::default()),
            Err(TraceError::Lifecycle { position: 2, .. })
        ));
    }

    #[test]
    fn rejects_time_reversal_and_unknown_docs() {
        let t = vec![ev(1.0, 0, EventKind::Arrive), ev(0.5, 1, EventKind::Arrive)];
        assert!(matches!(
            validate_trace(&t, TraceLimits::default()),
            Err(TraceError::TimeWentBackwards { position: 1, .. })
        ));
        let t = vec![ev(1.0, 0, EventKind::UploadStart)];
        assert!(matches!(
            validate_trace(&t, TraceLimits::default()),
            Err(TraceError::NotArrived { .. })
        ));
        let t = vec![ev(0.0, 0, EventKind::Arrive), ev(0.0, 0, EventKind::Arrive)];
        assert!(matches!(
            validate_trace(&t, TraceLimits::default()),
            Err(TraceError::DuplicateArrival { .. })
        ));
    }

    #[test]
    fn enforces_limits_and_completion() {
        let t = vec![
            ev(0.0, 0, EventKind::Arrive),
            ev(0.0, 1, EventKind::Arrive),
            ev(0.0, 0, EventKind::UploadStart),
            ev(0.0, 1, EventKind::UploadStart),
        ];
        let limits = TraceLimits {
            upload_slots: Some(1),
            ..TraceLimits::default()
        };
        assert!(matches!(
            validate_trace(&t, limits),
            Err(TraceError::Concurrency { what: "upload", .. })
        ));
        assert!(matches!(
            validate_trace(&t, complete()),
            Err(TraceError::Incomplete { index: 0, .. })
        ));
        let limits = TraceLimits {
            expected_docs: Some(3),
            ..TraceLimits::default()
        };
        assert!(matches!(
            validate_trace(&t, limits),
            Err(TraceError::DocumentCount {
                expected: 3,
                found: 2
            })
        ));
    }

    #[test]
    fn failed_processing_is_uploaded_as_original() {
        let t = vec![
            ev(0.0, 0, EventKind::Arrive),
            ev(0.0, 0, EventKind::ProcStart(SelectionKind::Plain)),
            ev(0.2, 0, EventKind::ProcFail),
            ev(0.2, 0, EventKind::UploadStart),
            ev(0.4, 0, EventKind::UploadEnd),
        ];
        let s = validate_trace(&t, complete()).unwrap();
        assert_eq!(s.processed, 0);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [
            EventKind::Arrive,
            EventKind::ProcStart(SelectionKind::Prio),
            EventKind::ProcStart(SelectionKind::Search),
            EventKind::ProcStart(SelectionKind::Plain),
            EventKind::ProcEnd,
            EventKind::ProcFail,
            EventKind::UploadStart,
            EventKind::UploadEnd,
        ] {
            assert_eq!(k.as_str().parse::<EventKind>(), Ok(k));
        }
        assert!("process".parse::<EventKind>().is_err());
    }
}
