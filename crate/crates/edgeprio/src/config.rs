//! Optional TOML configuration file. Every key is optional; command-line
//! flags take precedence.
//!
//! ```toml
//! seed = 7
//! out = "runs/today"
//!
//! [workload]
//! n_docs = 759
//! arrival_period = 0.6
//! bumps = [[40, 36, 0.4], [150, 46, 0.36]]
//!
//! [sim]
//! cpu_slots = 1
//! max_concurrent_uploads = 4
//! link_mbps = 16
//! process_policy = "splines"
//! upload_policy = "inverse"
//!
//! [bench]
//! configs = ["0,r", "1,s", "1,r", "ffill,0"]
//! repeats = 5
//!
//! [agent]
//! watch = "/data/incoming"
//! gateway = "http://10.0.0.2:8080"
//! stream_id = "scan-1"
//!
//! [gateway]
//! listen = "0.0.0.0:8080"
//! storage = "/srv/edgeprio"
//!
//! [operator]
//! threshold = 30
//! connectivity = 4
//! ```

use std::path::{Path, PathBuf};

use edgeprio_core::workload::{Bump, ProfileSpec};
use edgeprio_core::{Connectivity, ProcessPolicy, SimConfig, UploadPolicy};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("invalid {key}: {message}")]
    Invalid { key: &'static str, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workload: WorkloadSection,
    pub sim: SimSection,
    pub bench: BenchSection,
    pub agent: AgentSection,
    pub gateway: GatewaySection,
    pub operator: OperatorSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSection {
    pub manifest: Option<PathBuf>,
    pub n_docs: Option<usize>,
    pub mean_size: Option<u64>,
    pub size_jitter: Option<f64>,
    pub noise: Option<f64>,
    pub cost_base: Option<f64>,
    pub cost_per_byte: Option<f64>,
    pub cost_jitter: Option<f64>,
    pub arrival_period: Option<f64>,
    pub arrival_jitter: Option<f64>,
    /// `[center, half_width, peak]` triples.
    pub bumps: Option<Vec<[f64; 3]>>,
}

impl WorkloadSection {
    pub fn apply(&self, mut spec: ProfileSpec) -> ProfileSpec {
        macro_rules! set {
            ($($field:ident => $($target:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$field { spec.$($target).+ = v; })*
            };
        }
        set!(
            n_docs => n_docs,
            mean_size => mean_size,
            size_jitter => size_jitter,
            noise => noise,
            cost_base => cost.base,
            cost_per_byte => cost.per_byte,
            cost_jitter => cost.jitter,
            arrival_period => arrival.period,
            arrival_jitter => arrival.jitter,
        );
        if let Some(b) = &self.bumps {
            spec.bumps = b.iter().map(|&[c, w, p]| Bump::new(c, w, p)).collect();
        }
        spec
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub cpu_slots: Option<usize>,
    pub max_concurrent_uploads: Option<usize>,
    pub link_mbps: Option<f64>,
    pub process_policy: Option<String>,
    pub upload_policy: Option<String>,
    pub upload_overhead: Option<f64>,
}

impl SimSection {
    pub fn apply(&self, mut cfg: SimConfig) -> Result<SimConfig, ConfigError> {
        if let Some(v) = self.cpu_slots {
            cfg.num_cpu_slots = v;
        }
        if let Some(v) = self.max_concurrent_uploads {
            cfg.max_concurrent_uploads = v;
        }
        if let Some(v) = self.link_mbps {
            cfg.link_capacity_bps = v * 1e6;
        }
        if let Some(p) = &self.process_policy {
            cfg.process_policy = parse_process(p, "sim.process_policy")?;
        }
        if let Some(p) = &self.upload_policy {
            cfg.upload_policy = parse_upload(p, "sim.upload_policy")?;
        }
        if let Some(v) = self.upload_overhead {
            cfg.upload_overhead = v;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub configs: Option<Vec<String>>,
    pub repeats: Option<usize>,
    pub traces: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub watch: Option<PathBuf>,
    pub gateway: Option<String>,
    pub stream_id: Option<String>,
    pub process_workers: Option<usize>,
    pub upload_workers: Option<usize>,
    pub process_policy: Option<String>,
    pub upload_policy: Option<String>,
    pub poll_interval_ms: Option<u64>,
    pub retry_attempts: Option<u32>,
    pub retry_backoff_ms: Option<u64>,
    pub upload_rate: Option<f64>,
    pub work_dir: Option<PathBuf>,
    pub trace_out: Option<PathBuf>,
    pub max_docs: Option<usize>,
    pub idle_exit_secs: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub listen: Option<String>,
    pub storage: Option<PathBuf>,
    pub max_body: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorSection {
    pub threshold: Option<u8>,
    /// 4 or 8.
    pub connectivity: Option<u8>,
}

pub fn parse_process(s: &str, key: &'static str) -> Result<ProcessPolicy, ConfigError> {
    s.parse().map_err(
        |e: edgeprio_core::policy::ParsePolicyError| ConfigError::Invalid {
            key,
            message: e.to_string(),
        },
    )
}

pub fn parse_upload(s: &str, key: &'static str) -> Result<UploadPolicy, ConfigError> {
    s.parse().map_err(
        |e: edgeprio_core::policy::ParsePolicyError| ConfigError::Invalid {
            key,
            message: e.to_string(),
        },
    )
}

pub fn parse_connectivity(n: u8) -> Result<Connectivity, ConfigError> {
    match n {
        4 => Ok(Connectivity::Four),
        8 => Ok(Connectivity::Eight),
        _ => Err(ConfigError::Invalid {
            key: "connectivity",
            message: format!("expected 4 or 8, got {n}"),
        }),
    }
}

pub fn parse(text: &str, path: &Path) -> Result<FileConfig, ConfigError> {
    toml::from_str(text).map_err(|source| ConfigError::Toml {
        path: path.to_owned(),
        source,
    })
}

pub fn load(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse(&text, path)
}
