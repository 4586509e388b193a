//! Deterministic discrete-event simulation of the edge node.
//!
//! Events at equal timestamps are applied in a fixed order: processing
//! completions, then upload completions, then delayed link admissions, then
//! arrivals, each group by document index. After each batch the engine fills
//! free CPU slots first and free upload slots second.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::document::{
    normalized_reduction, DocIndex, Document, DocumentState, LifecycleError, LifecycleEvent,
};
use crate::estimator::{EstimatorError, RatioSpline};
use crate::link::{mbps_to_bytes_per_sec, LinkError, SharedLink};
use crate::policy::{
    ProcessChooser, ProcessPolicy, ProcessScheduler, QueueEntry, UploadChooser, UploadPolicy,
    UploadScheduler,
};
use crate::seed;
use crate::stats::BoxSummary;
use crate::trace::{EventKind, TraceEvent};
use crate::workload::Workload;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub num_cpu_slots: usize,
    pub max_concurrent_uploads: usize,
    /// Upload capacity in bits per second.
    pub link_capacity_bps: f64,
    pub process_policy: ProcessPolicy,
    pub upload_policy: UploadPolicy,
    pub seed: u64,
    /// Upload processed sizes with no edge CPU (`ffill,0`).
    pub offline_preprocessed: bool,
    /// Fixed delay between claiming an upload slot and the first byte.
    pub upload_overhead: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_cpu_slots: 1,
            max_concurrent_uploads: 4,
            link_capacity_bps: 16_000_000.0,
            process_policy: ProcessPolicy::splines(),
            upload_policy: UploadPolicy::InversePriority,
            seed: 0,
            offline_preprocessed: false,
            upload_overhead: 0.0,
        }
    }
}

impl SimConfig {
    pub fn link_bytes_per_sec(&self) -> f64 {
        mbps_to_bytes_per_sec(self.link_capacity_bps / 1e6)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.validate_for(self.process_policy != ProcessPolicy::NoProcessing)
    }

    fn validate_for(&self, processes: bool) -> Result<(), SimError> {
        if processes && self.num_cpu_slots == 0 {
            return Err(SimError::InvalidConfig(
                "processing needs at least one cpu slot",
            ));
        }
        if processes && self.offline_preprocessed {
            return Err(SimError::InvalidConfig(
                "offline preprocessed runs do no edge processing",
            ));
        }
        if self.max_concurrent_uploads == 0 {
            return Err(SimError::InvalidConfig("need at least one upload slot"));
        }
        if !(self.link_capacity_bps > 0.0) || !self.link_capacity_bps.is_finite() {
            return Err(SimError::InvalidConfig("link capacity must be positive"));
        }
        if !(self.upload_overhead >= 0.0) || !self.upload_overhead.is_finite() {
            return Err(SimError::InvalidConfig(
                "upload overhead must be non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("workload is empty")]
    EmptyWorkload,
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("policy selected document {0}, which is not eligible")]
    IneligibleSelection(DocIndex),
    #[error("no pending events but {0} documents not uploaded")]
    Stalled(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    /// First arrival to last upload completion, in seconds.
    pub end_to_end_latency: f64,
    pub bytes_uploaded_total: u64,
    /// Relative to the workload's original sizes.
    pub bytes_saved_total: u64,
    pub docs_processed_at_edge: usize,
    /// Arrival to upload completion, by document index.
    pub per_doc_latency: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub metrics: RunMetrics,
    pub trace: Vec<TraceEvent>,
    /// Final spline revision.
    pub spline: RatioSpline,
    /// Final document records, by index.
    pub documents: Vec<Document>,
}

impl SimOutcome {
    pub fn processed_flags(&self) -> Vec<bool> {
        self.documents.iter().map(Document::is_processed).collect()
    }
}

/// Runs `workload` under the policies named in `config`.
pub fn run(config: &SimConfig, workload: &Workload) -> Result<SimOutcome, SimError> {
    config.validate()?;
    let mut chooser = ProcessScheduler::new(config.process_policy, seed::derive(config.seed, 1));
    let mut uploader = UploadScheduler::new(config.upload_policy, seed::derive(config.seed, 2));
    run_with(config, workload, &mut chooser, &mut uploader)
}

/// Runs `workload` with arbitrary choosers; the policies named in `config`
/// are ignored.
pub fn run_with(
    config: &SimConfig,
    workload: &Workload,
    chooser: &mut dyn ProcessChooser,
    uploader: &mut dyn UploadChooser,
) -> Result<SimOutcome, SimError> {
    config.validate_for(chooser.processes())?;
    if workload.is_empty() {
        return Err(SimError::EmptyWorkload);
    }
    Engine::new(config, workload, chooser, uploader)?.run()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatSummary {
    pub latencies: Vec<f64>,
    pub summary: BoxSummary,
}

/// Runs `repeats` independent repetitions, seeding repeat `r` with
/// `seed::derive(config.seed, r)`.
pub fn run_many(
    config: &SimConfig,
    workload: &Workload,
    repeats: usize,
) -> Result<RepeatSummary, SimError> {
    if repeats == 0 {
        return Err(SimError::InvalidConfig("repeats must be positive"));
    }
    let mut latencies = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let cfg = SimConfig {
            seed: seed::derive(config.seed, r as u64),
            ..*config
        };
        latencies.push(run(&cfg, workload)?.metrics.end_to_end_latency);
    }
    let summary = BoxSummary::from_samples(&latencies).expect("repeats > 0");
    Ok(RepeatSummary { latencies, summary })
}

struct Engine<'a> {
    config: &'a SimConfig,
    workload: &'a Workload,
    chooser: &'a mut dyn ProcessChooser,
    uploader: &'a mut dyn UploadChooser,
    docs: Vec<Document>,
    queued: BTreeSet<DocIndex>,
    cpu: Vec<Option<(DocIndex, f64)>>,
    link: SharedLink,
    pending_admit: Vec<(f64, DocIndex)>,
    spline: RatioSpline,
    trace: Vec<TraceEvent>,
    next_arrival: usize,
    uploaded: usize,
}

impl<'a> Engine<'a> {
    fn new(
        config: &'a SimConfig,
        workload: &'a Workload,
        chooser: &'a mut dyn ProcessChooser,
        uploader: &'a mut dyn UploadChooser,
    ) -> Result<Self, SimError> {
        let slots = if chooser.processes() {
            config.num_cpu_slots
        } else {
            0
        };
        Ok(Engine {
            config,
            workload,
            chooser,
            uploader,
            docs: Vec::with_capacity(workload.len()),
            queued: BTreeSet::new(),
            cpu: vec![None; slots],
            link: SharedLink::new(config.link_bytes_per_sec(), config.max_concurrent_uploads)?,
            pending_admit: Vec::new(),
            spline: RatioSpline::new(),
            trace: Vec::with_capacity(workload.len() * 5),
            next_arrival: 0,
            uploaded: 0,
        })
    }

    fn next_event_time(&self) -> Option<f64> {
        let cpu = self.cpu.iter().flatten().map(|&(_, t)| t);
        let link = self.link.next_completion().map(|(_, t)| t);
        let pending = self.pending_admit.iter().map(|&(t, _)| t);
        let arrival = self
            .workload
            .docs()
            .get(self.next_arrival)
            .map(|d| d.arrival_time);
        cpu.chain(link)
            .chain(pending)
            .chain(arrival)
            .min_by(f64::total_cmp)
    }

    fn run(mut self) -> Result<SimOutcome, SimError> {
        let n = self.workload.len();
        let start = self.workload.docs()[0].arrival_time;
        self.link.advance(start)?;

        while self.uploaded < n {
            let now = self
                .next_event_time()
                .ok_or(SimError::Stalled(n - self.uploaded))?;
            self.finish_processing(now)?;
            self.finish_uploads(now)?;
            self.admit_pending(now)?;
            self.arrivals(now);
            self.schedule(now)?;
        }
        Ok(self.into_outcome(start))
    }

    fn finish_processing(&mut self, now: f64) -> Result<(), SimError> {
        let mut done: Vec<(DocIndex, usize)> = self
            .cpu
            .iter()
            .enumerate()
            .filter_map(|(slot, s)| s.filter(|&(_, t)| t <= now).map(|(i, _)| (i, slot)))
            .collect();
        done.sort_unstable();
        for (index, slot) in done {
            self.cpu[slot] = None;
            let truth = self.workload.docs()[index as usize];
            let doc = &mut self.docs[index as usize];
            doc.transition(LifecycleEvent::ProcessingDone {
                at: now,
                processed_size: truth.processed_size,
                cpu_cost: truth.cpu_cost,
            })?;
            let ratio = normalized_reduction(doc)?;
            self.spline.observe(index, ratio)?;
            self.queued.insert(index);
            self.trace
                .push(TraceEvent::new(now, index, EventKind::ProcEnd, ratio));
        }
        Ok(())
    }

    fn finish_uploads(&mut self, now: f64) -> Result<(), SimError> {
        for index in self.link.advance(now)? {
            let doc = &mut self.docs[index as usize];
            doc.transition(LifecycleEvent::UploadDone { at: now })?;
            self.uploaded += 1;
            let bytes = doc.upload_size() as f64;
            self.trace
                .push(TraceEvent::new(now, index, EventKind::UploadEnd, bytes));
        }
        Ok(())
    }

    fn admit_pending(&mut self, now: f64) -> Result<(), SimError> {
        let mut ready: Vec<DocIndex> = self
            .pending_admit
            .iter()
            .filter(|&&(t, _)| t <= now)
            .map(|&(_, i)| i)
            .collect();
        if ready.is_empty() {
            return Ok(());
        }
        ready.sort_unstable();
        self.pending_admit.retain(|&(t, _)| t > now);
        for index in ready {
            let size = self.docs[index as usize].upload_size();
            self.link.admit(index, size, now)?;
        }
        Ok(())
    }

    fn arrivals(&mut self, now: f64) {
        while let Some(truth) = self.workload.docs().get(self.next_arrival) {
            if truth.arrival_time > now {
                break;
            }
            let size = if self.config.offline_preprocessed {
                truth.processed_size
            } else {
                truth.original_size
            };
            self.docs
                .push(Document::new(truth.index, truth.arrival_time, size));
            self.queued.insert(truth.index);
            self.trace.push(TraceEvent::new(
                now,
                truth.index,
                EventKind::Arrive,
                size as f64,
            ));
            self.next_arrival += 1;
        }
    }

    fn snapshot(&self, raw_only: bool) -> Vec<QueueEntry> {
        self.queued
            .iter()
            .map(|&i| &self.docs[i as usize])
            .filter(|d| !raw_only || d.state == DocumentState::QueuedRaw)
            .map(|d| QueueEntry {
                index: d.index,
                arrival_time: d.arrival_time,
                processed_at: if d.state == DocumentState::QueuedProcessed {
                    d.timestamps.processing_finished
                } else {
                    None
                },
            })
            .collect()
    }

    fn schedule(&mut self, now: f64) -> Result<(), SimError> {
        for slot in 0..self.cpu.len() {
            if self.cpu[slot].is_some() {
                continue;
            }
            let queue = self.snapshot(true);
            if queue.is_empty() {
                break;
            }
            let Some(sel) = self.chooser.choose(&queue, &self.spline) else {
                break;
            };
            if !queue.iter().any(|e| e.index == sel.index) {
                return Err(SimError::IneligibleSelection(sel.index));
            }
            let estimate = self.spline.estimate(sel.index);
            self.docs[sel.index as usize]
                .transition(LifecycleEvent::StartProcessing { at: now })?;
            self.queued.remove(&sel.index);
            let cost = self.workload.docs()[sel.index as usize].cpu_cost;
            self.cpu[slot] = Some((sel.index, now + cost));
            self.trace.push(TraceEvent::new(
                now,
                sel.index,
                EventKind::ProcStart(sel.kind),
                estimate,
            ));
        }

        while self.link.len() + self.pending_admit.len() < self.config.max_concurrent_uploads {
            let queue = self.snapshot(false);
            let Some(index) = self.uploader.choose(&queue, &self.spline) else {
                break;
            };
            if !self.queued.remove(&index) {
                return Err(SimError::IneligibleSelection(index));
            }
            let doc = &mut self.docs[index as usize];
            doc.transition(LifecycleEvent::StartUpload { at: now })?;
            let size = doc.upload_size();
            self.trace.push(TraceEvent::new(
                now,
                index,
                EventKind::UploadStart,
                size as f64,
            ));
            if self.config.upload_overhead > 0.0 {
                self.pending_admit
                    .push((now + self.config.upload_overhead, index));
            } else {
                self.link.admit(index, size, now)?;
            }
        }
        Ok(())
    }

    fn into_outcome(self, start: f64) -> SimOutcome {
        let mut bytes_uploaded_total = 0;
        let mut bytes_saved_total = 0;
        let mut docs_processed_at_edge = 0;
        let mut last = start;
        let mut per_doc_latency = Vec::with_capacity(self.docs.len());
        for (doc, truth) in self.docs.iter().zip(self.workload.docs()) {
            let uploaded = doc.upload_size();
            bytes_uploaded_total += uploaded;
            bytes_saved_total += truth.original_size - uploaded;
            docs_processed_at_edge += usize::from(doc.is_processed());
            let done = doc.timestamps.uploaded.unwrap_or(start);
            last = last.max(done);
            per_doc_latency.push(done - doc.arrival_time);
        }
        SimOutcome {
            metrics: RunMetrics {
                end_to_end_latency: last - start,
                bytes_uploaded_total,
                bytes_saved_total,
                docs_processed_at_edge,
                per_doc_latency,
            },
            trace: self.trace,
            spline: self.spline,
            documents: self.docs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{validate_trace, TraceLimits};
    use crate::workload::WorkloadDoc;

    fn flat(n: usize, size: u64, processed: u64, cost: f64) -> Workload {
        Workload::new(
            (0..n)
                .map(|i| WorkloadDoc {
                    index: i as DocIndex,
                    arrival_time: 0.0,
                    original_size: size,
                    processed_size: processed,
                    cpu_cost: cost,
                })
                .collect(),
        )
        .unwrap()
    }

    fn upload_only(capacity_bps: f64, n: usize) -> SimConfig {
        SimConfig {
            num_cpu_slots: 0,
            max_concurrent_uploads: n,
            link_capacity_bps: capacity_bps,
            process_policy: ProcessPolicy::NoProcessing,
            upload_policy: UploadPolicy::Fifo,
            ..SimConfig::default()
        }
    }

    #[test]
    fn upload_only_is_work_conserving() {
        let w = flat(10, 2_000_000, 2_000_000, 1.0);
        let out = run(&upload_only(16e6, 4), &w).unwrap();
        assert!((out.metrics.end_to_end_latency - 10.0).abs() < 1e-9);
        assert_eq!(out.metrics.bytes_uploaded_total, 20_000_000);
        assert_eq!(out.metrics.docs_processed_at_edge, 0);
    }

    #[test]
    fn single_document_processed_then_uploaded() {
        let w = flat(1, 2_000_000, 1_000_000, 1.0);
        let cfg = SimConfig {
            num_cpu_slots: 1,
            link_capacity_bps: 8e6,
            ..SimConfig::default()
        };
        let out = run(&cfg, &w).unwrap();
        assert_eq!(out.metrics.end_to_end_latency, 2.0);
        assert_eq!(out.metrics.bytes_saved_total, 1_000_000);
        let kinds: Vec<_> = out.trace.iter().map(|e| e.kind.as_str()).collect();
        assert_eq!(
            kinds,
            [
                "arrive",
                "proc_start_prio",
                "proc_end",
                "upload_start",
                "upload_end"
            ]
        );
    }

    #[test]
    fn offline_preprocessed_matches_upload_only_of_processed_sizes() {
        let w = flat(6, 2_000_000, 1_500_000, 1.0);
        let offline = SimConfig {
            offline_preprocessed: true,
            ..upload_only(16e6, 4)
        };
        let a = run(&offline, &w).unwrap();
        let b = run(&upload_only(16e6, 4), &flat(6, 1_500_000, 1_500_000, 1.0)).unwrap();
        assert_eq!(a.metrics.end_to_end_latency, b.metrics.end_to_end_latency);
        assert_eq!(a.metrics.bytes_saved_total, 3_000_000);
    }

    #[test]
    fn rejects_invalid_configs() {
        let w = flat(1, 10, 10, 1.0);
        let cfg = SimConfig {
            num_cpu_slots: 0,
            ..SimConfig::default()
        };
        assert!(matches!(run(&cfg, &w), Err(SimError::InvalidConfig(_))));
        let cfg = SimConfig {
            offline_preprocessed: true,
            ..SimConfig::default()
        };
        assert!(matches!(run(&cfg, &w), Err(SimError::InvalidConfig(_))));
        let cfg = SimConfig {
            max_concurrent_uploads: 0,
            ..upload_only(1e6, 1)
        };
        assert!(run(&cfg, &w).is_err());
    }

    #[test]
    fn upload_overhead_delays_transfers() {
        let w = flat(1, 2_000_000, 2_000_000, 1.0);
        let cfg = SimConfig {
            upload_overhead: 0.25,
            ..upload_only(16e6, 1)
        };
        let out = run(&cfg, &w).unwrap();
        assert_eq!(out.metrics.end_to_end_latency, 1.25);
    }

    #[test]
    fn traces_validate() {
        let spec = crate::workload::ProfileSpec {
            n_docs: 60,
            ..crate::workload::ProfileSpec::reference(5)
        };
        let w = crate::workload::generate(&spec).unwrap();
        for m in 1..=3 {
            let cfg = SimConfig {
                num_cpu_slots: m,
                ..SimConfig::default()
            };
            let out = run(&cfg, &w).unwrap();
            let limits = TraceLimits {
                cpu_slots: Some(m),
                upload_slots: Some(4),
                require_complete: true,
                expected_docs: Some(60),
            };
            validate_trace(&out.trace, limits).unwrap();
        }
    }

    #[test]
    fn run_many_single_repeat_collapses() {
        let w = flat(3, 1_000_000, 500_000, 0.5);
        let r = run_many(&SimConfig::default(), &w, 1).unwrap();
        let s = r.summary;
        assert_eq!(s.min, s.max);
        assert_eq!(s.median, r.latencies[0]);
        assert!(run_many(&SimConfig::default(), &w, 0).is_err());
    }

    #[test]
    fn deterministic_policies_have_zero_spread() {
        let w = flat(8, 1_000_000, 500_000, 0.5);
        let r = run_many(&SimConfig::default(), &w, 5).unwrap();
        assert_eq!(r.summary.spread(), 0.0);
    }
}
