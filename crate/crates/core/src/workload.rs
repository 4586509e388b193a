//! Synthetic workloads whose reduction ratio is a bumpy, locally correlated
//! function of stream index.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::document::{reduction_ratio, DocIndex};

/// Upper bound on the fraction of bytes the operator can remove.
pub const MAX_REDUCTION: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkloadError {
    #[error("invalid profile: {0}")]
    InvalidSpec(&'static str),
    #[error("document {index}: invalid {field}")]
    InvariantViolation { index: usize, field: &'static str },
    #[error("workload is empty")]
    Empty,
}

/// One document's ground truth. `processed_size` and `cpu_cost` are what
/// the operator would produce; schedulers only see them after processing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkloadDoc {
    pub index: DocIndex,
    pub arrival_time: f64,
    pub original_size: u64,
    pub processed_size: u64,
    pub cpu_cost: f64,
}

impl WorkloadDoc {
    pub fn true_ratio(&self) -> f64 {
        reduction_ratio(self.original_size, self.processed_size, self.cpu_cost)
    }

    pub fn reduction_fraction(&self) -> f64 {
        1.0 - self.processed_size as f64 / self.original_size as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    docs: Vec<WorkloadDoc>,
}

impl Workload {
    /// Validates indices (dense from 0), arrival order, sizes and costs.
    pub fn new(docs: Vec<WorkloadDoc>) -> Result<Self, WorkloadError> {
        if docs.is_empty() {
            return Err(WorkloadError::Empty);
        }
        let mut prev_arrival = f64::NEG_INFINITY;
        for (pos, d) in docs.iter().enumerate() {
            let bad = |field| WorkloadError::InvariantViolation { index: pos, field };
            if d.index as usize != pos {
                return Err(bad("index"));
            }
            if !d.arrival_time.is_finite() || d.arrival_time < 0.0 || d.arrival_time < prev_arrival
            {
                return Err(bad("arrival_time"));
            }
            if d.original_size == 0 {
                return Err(bad("original_size"));
            }
            if d.processed_size == 0 || d.processed_size > d.original_size {
                return Err(bad("processed_size"));
            }
            if !(d.cpu_cost > 0.0) || !d.cpu_cost.is_finite() {
                return Err(bad("cpu_cost"));
            }
            prev_arrival = d.arrival_time;
        }
        Ok(Workload { docs })
    }

    pub fn docs(&self) -> &[WorkloadDoc] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn total_original_bytes(&self) -> u64 {
        self.docs.iter().map(|d| d.original_size).sum()
    }

    pub fn total_processed_bytes(&self) -> u64 {
        self.docs.iter().map(|d| d.processed_size).sum()
    }

    pub fn true_ratios(&self) -> Vec<f64> {
        self.docs.iter().map(WorkloadDoc::true_ratio).collect()
    }
}

/// A raised-cosine bump of reduction fraction centered on a stream index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub center: f64,
    /// Half-width in documents; the bump is zero beyond `center ± width`.
    pub width: f64,
    pub peak: f64,
}

impl Bump {
    pub const fn new(center: f64, width: f64, peak: f64) -> Self {
        Bump {
            center,
            width,
            peak,
        }
    }

    pub fn at(&self, index: f64) -> f64 {
        let x = (index - self.center) / self.width;
        if x.abs() >= 1.0 {
            0.0
        } else {
            self.peak * 0.5 * (1.0 + libm::cos(PI * x))
        }
    }
}

/// CPU seconds = `(base + per_byte * original_size) * (1 ± jitter)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub base: f64,
    pub per_byte: f64,
    pub jitter: f64,
}

/// Document `i` arrives at `(i + jitter * u) * period`, `u ∈ [0, 1)`, which
/// keeps arrivals ordered for any jitter below one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalModel {
    pub period: f64,
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSpec {
    pub n_docs: usize,
    pub mean_size: u64,
    pub size_jitter: f64,
    pub bumps: Vec<Bump>,
    /// Amplitude of uniform additive noise on the reduction fraction.
    pub noise: f64,
    pub cost: CostModel,
    pub arrival: ArrivalModel,
    pub seed: u64,
}

/// Bumps of the reference profile over 759 documents.
const REFERENCE_BUMPS: [Bump; 7] = [
    Bump::new(40.0, 36.0, 0.40),
    Bump::new(150.0, 46.0, 0.36),
    Bump::new(262.0, 32.0, 0.30),
    Bump::new(365.0, 52.0, 0.40),
    Bump::new(478.0, 30.0, 0.26),
    Bump::new(585.0, 44.0, 0.38),
    Bump::new(700.0, 38.0, 0.32),
];

impl ProfileSpec {
    /// The reference workload: 759 documents of about 2 MB arriving every
    /// 0.6 s. On a 16 Mbps link one core can process about half of the
    /// documents before they must be uploaded, while three cores keep up
    /// with arrivals.
    pub fn reference(seed: u64) -> Self {
        ProfileSpec {
            n_docs: 759,
            mean_size: 2_000_000,
            size_jitter: 0.1,
            bumps: REFERENCE_BUMPS.to_vec(),
            noise: 0.03,
            cost: CostModel {
                base: 0.6,
                per_byte: 6e-7,
                jitter: 0.2,
            },
            arrival: ArrivalModel {
                period: 0.6,
                jitter: 0.5,
            },
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let unit = |x: f64| (0.0..1.0).contains(&x);
        if self.n_docs == 0 {
            return Err(WorkloadError::InvalidSpec("n_docs must be positive"));
        }
        if u32::try_from(self.n_docs).is_err() {
            return Err(WorkloadError::InvalidSpec("n_docs too large"));
        }
        if self.mean_size == 0 {
            return Err(WorkloadError::InvalidSpec("mean_size must be positive"));
        }
        if !unit(self.size_jitter) || !unit(self.cost.jitter) || !unit(self.arrival.jitter) {
            return Err(WorkloadError::InvalidSpec("jitters must lie in [0, 1)"));
        }
        if !(0.0..=MAX_REDUCTION).contains(&self.noise) {
            return Err(WorkloadError::InvalidSpec("noise must lie in [0, 0.4]"));
        }
        for b in &self.bumps {
            if !(0.0..=MAX_REDUCTION).contains(&b.peak) {
                return Err(WorkloadError::InvalidSpec("bump peak must lie in [0, 0.4]"));
            }
            if !(b.width > 0.0) || !b.center.is_finite() || !b.width.is_finite() {
                return Err(WorkloadError::InvalidSpec("bump width must be positive"));
            }
        }
        let c = &self.cost;
        if !(c.base >= 0.0 && c.per_byte >= 0.0) || !(c.base + c.per_byte > 0.0) {
            return Err(WorkloadError::InvalidSpec("cpu cost must be positive"));
        }
        if !(self.arrival.period >= 0.0) || !self.arrival.period.is_finite() {
            return Err(WorkloadError::InvalidSpec(
                "arrival period must be non-negative",
            ));
        }
        Ok(())
    }

    /// Noise-free reduction fraction at `index`.
    pub fn profile_at(&self, index: f64) -> f64 {
        self.bumps
            .iter()
            .map(|b| b.at(index))
            .sum::<f64>()
            .clamp(0.0, MAX_REDUCTION)
    }
}

fn symmetric(rng: &mut ChaCha8Rng) -> f64 {
    rng.random::<f64>() * 2.0 - 1.0
}

/// Draws a workload. The result depends only on `spec`.
pub fn generate(spec: &ProfileSpec) -> Result<Workload, WorkloadError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut docs = Vec::with_capacity(spec.n_docs);
    for i in 0..spec.n_docs {
        let x = i as f64;
        // Fixed draw order per document keeps workloads stable across edits
        // to any single model.
        let u_arrival = rng.random::<f64>();
        let u_size = symmetric(&mut rng);
        let u_noise = symmetric(&mut rng);
        let u_cost = symmetric(&mut rng);

        let arrival_time = (x + spec.arrival.jitter * u_arrival) * spec.arrival.period;
        let size = libm::round(spec.mean_size as f64 * (1.0 + spec.size_jitter * u_size));
        let original_size = (size as u64).max(1);
        let bumps: f64 = spec.bumps.iter().map(|b| b.at(x)).sum();
        let fraction = (bumps + spec.noise * u_noise).clamp(0.0, MAX_REDUCTION);
        let processed = libm::round(original_size as f64 * (1.0 - fraction)) as u64;
        let processed_size = processed.clamp(1, original_size);
        let cpu_cost = (spec.cost.base + spec.cost.per_byte * original_size as f64)
            * (1.0 + spec.cost.jitter * u_cost);

        docs.push(WorkloadDoc {
            index: i as DocIndex,
            arrival_time,
            original_size,
            processed_size,
            cpu_cost,
        });
    }
    Workload::new(docs)
}
