//! Processing and upload selection rules.
//!
//! All rules are pure functions over a snapshot of the queue. Ties always go
//! to the lowest stream index.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::document::DocIndex;
use crate::estimator::RatioSpline;

/// Default for the explore step: every fifth processing decision searches.
pub const DEFAULT_SAMPLING_PERIOD: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessPolicy {
    /// Highest estimated ratio first; every `sampling_period`-th decision
    /// probes the least-explored stream region instead.
    SplinePriority {
        sampling_period: u32,
    },
    RandomOrder,
    Fifo,
    NoProcessing,
}

impl ProcessPolicy {
    pub fn splines() -> Self {
        ProcessPolicy::SplinePriority {
            sampling_period: DEFAULT_SAMPLING_PERIOD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UploadPolicy {
    /// Processed documents first (in completion order), then unprocessed
    /// documents in ascending estimated ratio.
    InversePriority,
    Fifo,
    RandomOrder,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsePolicyError(pub alloc::string::String);

impl fmt::Display for ParsePolicyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown policy `{}`", self.0)
    }
}

impl core::error::Error for ParsePolicyError {}

impl FromStr for ProcessPolicy {
    type Err = ParsePolicyError;

    /// `splines`, `splines:K`, `random`, `fifo` or `none`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParsePolicyError(s.into());
        match s {
            "splines" => Ok(ProcessPolicy::splines()),
            "random" => Ok(ProcessPolicy::RandomOrder),
            "fifo" => Ok(ProcessPolicy::Fifo),
            "none" => Ok(ProcessPolicy::NoProcessing),
            _ => {
                let k = s.strip_prefix("splines:").ok_or_else(err)?;
                let k: u32 = k.parse().map_err(|_| err())?;
                if k == 0 {
                    return Err(err());
                }
                Ok(ProcessPolicy::SplinePriority { sampling_period: k })
            }
        }
    }
}

impl fmt::Display for ProcessPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProcessPolicy::SplinePriority { sampling_period }
                if *sampling_period == DEFAULT_SAMPLING_PERIOD =>
            {
                f.write_str("splines")
            }
            ProcessPolicy::SplinePriority { sampling_period } => {
                write!(f, "splines:{sampling_period}")
            }
            ProcessPolicy::RandomOrder => f.write_str("random"),
            ProcessPolicy::Fifo => f.write_str("fifo"),
            ProcessPolicy::NoProcessing => f.write_str("none"),
        }
    }
}

impl FromStr for UploadPolicy {
    type Err = ParsePolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inverse" => Ok(UploadPolicy::InversePriority),
            "fifo" => Ok(UploadPolicy::Fifo),
            "random" => Ok(UploadPolicy::RandomOrder),
            _ => Err(ParsePolicyError(s.into())),
        }
    }
}

impl fmt::Display for UploadPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UploadPolicy::InversePriority => "inverse",
            UploadPolicy::Fifo => "fifo",
            UploadPolicy::RandomOrder => "random",
        })
    }
}

/// One queued document as seen by a policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueEntry {
    pub index: DocIndex,
    pub arrival_time: f64,
    /// When processing finished; `None` while unprocessed.
    pub processed_at: Option<f64>,
}

impl QueueEntry {
    pub fn is_processed(&self) -> bool {
        self.processed_at.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SelectionKind {
    /// Highest estimated ratio.
    Prio,
    /// Exploration of the least-known stream region.
    Search,
    /// Chosen by a baseline rule (random or arrival order).
    Plain,
}

impl SelectionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionKind::Prio => "prio",
            SelectionKind::Search => "search",
            SelectionKind::Plain => "plain",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub index: DocIndex,
    pub kind: SelectionKind,
}

fn argmax_estimate<'a>(
    entries: impl Iterator<Item = &'a QueueEntry>,
    spline: &RatioSpline,
) -> Option<DocIndex> {
    let mut best: Option<(f64, DocIndex)> = None;
    for e in entries {
        let est = spline.estimate(e.index);
        best = match best {
            Some((b, bi)) if b > est || (b == est && bi < e.index) => Some((b, bi)),
            _ => Some((est, e.index)),
        };
    }
    best.map(|(_, i)| i)
}

fn argmin_estimate<'a>(
    entries: impl Iterator<Item = &'a QueueEntry>,
    spline: &RatioSpline,
) -> Option<DocIndex> {
    let mut best: Option<(f64, DocIndex)> = None;
    for e in entries {
        let est = spline.estimate(e.index);
        best = match best {
            Some((b, bi)) if b < est || (b == est && bi < e.index) => Some((b, bi)),
            _ => Some((est, e.index)),
        };
    }
    best.map(|(_, i)| i)
}

fn earliest_by<'a>(
    entries: impl Iterator<Item = &'a QueueEntry>,
    key: impl Fn(&QueueEntry) -> f64,
) -> Option<DocIndex> {
    entries
        .min_by(|a, b| key(a).total_cmp(&key(b)).then(a.index.cmp(&b.index)))
        .map(|e| e.index)
}

fn uniform<'a, R: Rng + ?Sized>(
    entries: impl Iterator<Item = &'a QueueEntry>,
    rng: &mut R,
) -> Option<DocIndex> {
    // Sorted so the draw depends only on the set, not the snapshot order.
    let mut idx: Vec<DocIndex> = entries.map(|e| e.index).collect();
    if idx.is_empty() {
        return None;
    }
    idx.sort_unstable();
    Some(idx[rng.random_range(0..idx.len())])
}

/// Chooses the next document to process. Entries that are already processed
/// are ignored.
pub fn next_to_process<R: Rng + ?Sized>(
    policy: ProcessPolicy,
    queue: &[QueueEntry],
    spline: &RatioSpline,
    decision_counter: u64,
    rng: &mut R,
) -> Option<Selection> {
    let raw = || queue.iter().filter(|e| !e.is_processed());
    let plain = |index| Selection {
        index,
        kind: SelectionKind::Plain,
    };
    match policy {
        ProcessPolicy::NoProcessing => None,
        ProcessPolicy::Fifo => earliest_by(raw(), |e| e.arrival_time).map(plain),
        ProcessPolicy::RandomOrder => uniform(raw(), rng).map(plain),
        ProcessPolicy::SplinePriority { sampling_period } => {
            let k = u64::from(sampling_period.max(1));
            if decision_counter % k == k - 1 {
                let candidates: Vec<DocIndex> = raw().map(|e| e.index).collect();
                spline.search_target(&candidates).map(|index| Selection {
                    index,
                    kind: SelectionKind::Search,
                })
            } else {
                argmax_estimate(raw(), spline).map(|index| Selection {
                    index,
                    kind: SelectionKind::Prio,
                })
            }
        }
    }
}

/// Chooses the next document to upload from all queued documents.
pub fn next_to_upload<R: Rng + ?Sized>(
    policy: UploadPolicy,
    queue: &[QueueEntry],
    spline: &RatioSpline,
    rng: &mut R,
) -> Option<DocIndex> {
    match policy {
        UploadPolicy::InversePriority => {
            let processed = queue.iter().filter(|e| e.is_processed());
            earliest_by(processed, |e| e.processed_at.unwrap_or(f64::INFINITY))
                .or_else(|| argmin_estimate(queue.iter(), spline))
        }
        UploadPolicy::Fifo => earliest_by(queue.iter(), |e| e.arrival_time),
        UploadPolicy::RandomOrder => uniform(queue.iter(), rng),
    }
}

/// Something that picks documents for processing. The simulator runs any
/// implementation, which lets tests plug in clairvoyant oracles.
pub trait ProcessChooser {
    fn choose(&mut self, queue: &[QueueEntry], spline: &RatioSpline) -> Option<Selection>;

    /// Whether this chooser ever selects anything.
    fn processes(&self) -> bool {
        true
    }
}

/// Something that picks documents to upload from all queued documents.
pub trait UploadChooser {
    fn choose(&mut self, queue: &[QueueEntry], spline: &RatioSpline) -> Option<DocIndex>;
}

/// A [`ProcessPolicy`] with its own seeded generator and decision counter.
#[derive(Debug, Clone)]
pub struct ProcessScheduler {
    policy: ProcessPolicy,
    rng: ChaCha8Rng,
    decisions: u64,
}

impl ProcessScheduler {
    pub fn new(policy: ProcessPolicy, seed: u64) -> Self {
        ProcessScheduler {
            policy,
            rng: ChaCha8Rng::seed_from_u64(seed),
            decisions: 0,
        }
    }

    pub fn policy(&self) -> ProcessPolicy {
        self.policy
    }

    pub fn decisions(&self) -> u64 {
        self.decisions
    }
}

impl ProcessChooser for ProcessScheduler {
    fn choose(&mut self, queue: &[QueueEntry], spline: &RatioSpline) -> Option<Selection> {
        let sel = next_to_process(self.policy, queue, spline, self.decisions, &mut self.rng);
        if sel.is_some() {
            self.decisions += 1;
        }
        sel
    }

    fn processes(&self) -> bool {
        self.policy != ProcessPolicy::NoProcessing
    }
}

#[derive(Debug, Clone)]
pub struct UploadScheduler {
    policy: UploadPolicy,
    rng: ChaCha8Rng,
}

impl UploadScheduler {
    pub fn new(policy: UploadPolicy, seed: u64) -> Self {
        UploadScheduler {
            policy,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn policy(&self) -> UploadPolicy {
        self.policy
    }
}

impl UploadChooser for UploadScheduler {
    fn choose(&mut self, queue: &[QueueEntry], spline: &RatioSpline) -> Option<DocIndex> {
        next_to_upload(self.policy, queue, spline, &mut self.rng)
    }
}
