//! Paired-seed benchmark over named configurations.
//!
//! Keys follow the usual table of configurations:
//!
//! | key | meaning |
//! |---|---|
//! | `0,r` | no edge processing, random upload order |
//! | `M,s` | `M` cores, spline priority with inverse upload order |
//! | `M,r` | `M` cores, random processing and upload order |
//! | `ffill,0` | documents preprocessed offline, upload only |
//!
//! Repeat `r` of every configuration uses the same workload realization and
//! the same simulator seed, so configurations are compared pairwise.

use std::fmt::Write as _;

use edgeprio_core::seed::derive;
use edgeprio_core::sim::{run, RunMetrics, SimConfig, SimError};
use edgeprio_core::workload::{generate, ProfileSpec, Workload, WorkloadError};
use edgeprio_core::{BoxSummary, ProcessPolicy, TraceEvent, UploadPolicy};
use rayon::prelude::*;
use thiserror::Error;

use crate::formats::{MetricsRow, SummaryRow};

/// Every configuration of the standard table, in display order.
pub const TABLE_KEYS: [&str; 8] = ["0,r", "1,s", "2,s", "3,s", "1,r", "2,r", "3,r", "ffill,0"];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("configuration key `{0}` listed twice")]
    DuplicateKey(String),
    #[error("no configurations given")]
    NoConfigs,
    #[error("repeats must be positive")]
    ZeroRepeats,
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("{config} repeat {repeat}: {source}")]
    Sim {
        config: String,
        repeat: usize,
        source: SimError,
    },
}

/// Applies a configuration key to `base`, keeping link and slot settings.
pub fn parse_key(key: &str, base: &SimConfig) -> Result<SimConfig, BenchError> {
    let unknown = || BenchError::UnknownKey(key.to_owned());
    let (left, right) = key.split_once(',').ok_or_else(unknown)?;
    let (left, right) = (left.trim(), right.trim());
    let cfg = match (left, right) {
        ("ffill", "0") => SimConfig {
            num_cpu_slots: 0,
            process_policy: ProcessPolicy::NoProcessing,
            upload_policy: UploadPolicy::RandomOrder,
            offline_preprocessed: true,
            ..*base
        },
        ("0", "r") => SimConfig {
            num_cpu_slots: 0,
            process_policy: ProcessPolicy::NoProcessing,
            upload_policy: UploadPolicy::RandomOrder,
            offline_preprocessed: false,
            ..*base
        },
        (m, kind) => {
            let m: usize = m.parse().map_err(|_| unknown())?;
            if m == 0 {
                return Err(unknown());
            }
            let (process_policy, upload_policy) = match kind {
                "s" => (ProcessPolicy::splines(), UploadPolicy::InversePriority),
                "r" => (ProcessPolicy::RandomOrder, UploadPolicy::RandomOrder),
                _ => return Err(unknown()),
            };
            SimConfig {
                num_cpu_slots: m,
                process_policy,
                upload_policy,
                offline_preprocessed: false,
                ..*base
            }
        }
    };
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub enum WorkloadSource {
    /// A fresh realization per repeat, seeded like the simulator.
    Generated(ProfileSpec),
    /// The same workload for every repeat.
    Fixed(Workload),
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub workload: WorkloadSource,
    pub configs: Vec<String>,
    pub repeats: usize,
    pub seed: u64,
    /// Link and slot settings shared by every configuration.
    pub base: SimConfig,
    pub keep_traces: bool,
}

impl BenchSpec {
    pub fn new(workload: WorkloadSource, seed: u64) -> Self {
        BenchSpec {
            workload,
            configs: TABLE_KEYS.iter().map(|k| (*k).to_owned()).collect(),
            repeats: 5,
            seed,
            base: SimConfig::default(),
            keep_traces: false,
        }
    }

    pub fn repeat_seed(&self, repeat: usize) -> u64 {
        derive(self.seed, repeat as u64)
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: String,
    pub repeat: usize,
    pub seed: u64,
    pub metrics: RunMetrics,
    pub trace: Option<Vec<TraceEvent>>,
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    /// Ordered by configuration, then repeat.
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<(String, BoxSummary)>,
    pub repeats: usize,
}

impl BenchResult {
    pub fn latencies(&self, config: &str) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.config == config)
            .map(|r| r.metrics.end_to_end_latency)
            .collect()
    }

    pub fn summary(&self, config: &str) -> Option<&BoxSummary> {
        self.summaries
            .iter()
            .find(|(c, _)| c == config)
            .map(|(_, s)| s)
    }

    pub fn metrics_rows(&self) -> Vec<MetricsRow> {
        self.runs
            .iter()
            .map(|r| MetricsRow {
                config: r.config.clone(),
                repeat: r.repeat,
                seed: r.seed,
                end_to_end_latency: r.metrics.end_to_end_latency,
                bytes_uploaded_total: r.metrics.bytes_uploaded_total,
                bytes_saved_total: r.metrics.bytes_saved_total,
                docs_processed_at_edge: r.metrics.docs_processed_at_edge,
            })
            .collect()
    }

    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        self.summaries
            .iter()
            .map(|(c, s)| SummaryRow::new(c.clone(), s))
            .collect()
    }

    /// Fixed-width table of the latency summaries, in seconds.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "config", "min", "q1", "median", "q3", "max", "mean"
        );
        for (c, s) in &self.summaries {
            let _ = writeln!(
                out,
                "{:<8} {:>9.2} {:>9.2} {:>9.2} {:>9.2} {:>9.2} {:>9.2}",
                c, s.min, s.q1, s.median, s.q3, s.max, s.mean
            );
        }
        out
    }
}

/// Runs every configuration for every repeat. Configuration keys are all
/// checked before anything runs.
pub fn run_bench(spec: &BenchSpec) -> Result<BenchResult, BenchError> {
    if spec.configs.is_empty() {
        return Err(BenchError::NoConfigs);
    }
    if spec.repeats == 0 {
        return Err(BenchError::ZeroRepeats);
    }
    let mut configs = Vec::with_capacity(spec.configs.len());
    for (i, key) in spec.configs.iter().enumerate() {
        if spec.configs[..i].contains(key) {
            return Err(BenchError::DuplicateKey(key.clone()));
        }
        configs.push((key.clone(), parse_key(key, &spec.base)?));
    }

    let workloads: Vec<Workload> = match &spec.workload {
        WorkloadSource::Generated(profile) => (0..spec.repeats)
            .into_par_iter()
            .map(|r| generate(&profile.clone().with_seed(spec.repeat_seed(r))))
            .collect::<Result<_, _>>()?,
        WorkloadSource::Fixed(w) => vec![w.clone()],
    };

    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..spec.repeats).map(move |r| (c, r)))
        .collect();
    let runs = jobs
        .into_par_iter()
        .map(|(c, r)| {
            let (key, base) = &configs[c];
            let seed = spec.repeat_seed(r);
            let cfg = SimConfig { seed, ..*base };
            let workload = &workloads[r.min(workloads.len() - 1)];
            let out = run(&cfg, workload).map_err(|source| BenchError::Sim {
                config: key.clone(),
                repeat: r,
                source,
            })?;
            Ok(RunRecord {
                config: key.clone(),
                repeat: r,
                seed,
                metrics: out.metrics,
                trace: spec.keep_traces.then_some(out.trace),
            })
        })
        .collect::<Result<Vec<_>, BenchError>>()?;

    let summaries = configs
        .iter()
        .map(|(key, _)| {
            let lat: Vec<f64> = runs
                .iter()
                .filter(|r| &r.config == key)
                .map(|r| r.metrics.end_to_end_latency)
                .collect();
            (
                key.clone(),
                BoxSummary::from_samples(&lat).expect("repeats > 0"),
            )
        })
        .collect();
    Ok(BenchResult {
        runs,
        summaries,
        repeats: spec.repeats,
    })
}
