//! Fluid processor-sharing model of a capped upload channel.
//!
//! Every active transfer drains at `capacity / active`, so the link as a
//! whole always drains at exactly `capacity` while non-empty.

use alloc::vec::Vec;

use thiserror::Error;

use crate::document::DocIndex;

/// Residual byte count below which a transfer counts as finished.
const COMPLETION_EPS: f64 = 1e-3;

/// Converts megabits per second to bytes per second (1 Mbps = 125,000 B/s).
pub fn mbps_to_bytes_per_sec(mbps: f64) -> f64 {
    mbps * 125_000.0
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("link already carries {0} transfers")]
    LinkFull(usize),
    #[error("cannot advance from {from} back to {to}")]
    NegativeInterval { from: f64, to: f64 },
    #[error("transfer of document {0} would have completed before the requested time")]
    MissedCompletion(DocIndex),
    #[error("transfer size must be positive")]
    EmptyTransfer,
    #[error("document {0} is already on the link")]
    Duplicate(DocIndex),
    #[error("invalid link parameters")]
    InvalidParameters,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transfer {
    pub index: DocIndex,
    pub size: u64,
    pub remaining: f64,
    pub admitted_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharedLink {
    capacity: f64,
    max_concurrent: usize,
    active: Vec<Transfer>,
    clock: f64,
}

impl SharedLink {
    /// `capacity` in bytes per second.
    pub fn new(capacity: f64, max_concurrent: usize) -> Result<Self, LinkError> {
        if !(capacity > 0.0) || !capacity.is_finite() || max_concurrent == 0 {
            return Err(LinkError::InvalidParameters);
        }
        Ok(SharedLink {
            capacity,
            max_concurrent,
            active: Vec::new(),
            clock: 0.0,
        })
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn max_concurrent(&self) -> usize {
        self.max_concurrent
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn active(&self) -> &[Transfer] {
        &self.active
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.active.len() >= self.max_concurrent
    }

    /// Current per-transfer rate in bytes per second.
    pub fn share(&self) -> f64 {
        if self.active.is_empty() {
            0.0
        } else {
            self.capacity / self.active.len() as f64
        }
    }

    /// Starts a transfer at `now`, first draining the link up to `now`.
    pub fn admit(&mut self, index: DocIndex, size: u64, now: f64) -> Result<(), LinkError> {
        if size == 0 {
            return Err(LinkError::EmptyTransfer);
        }
        if self.is_full() {
            return Err(LinkError::LinkFull(self.active.len()));
        }
        if self.active.iter().any(|t| t.index == index) {
            return Err(LinkError::Duplicate(index));
        }
        let done = self.advance(now)?;
        if let Some(&i) = done.first() {
            return Err(LinkError::MissedCompletion(i));
        }
        self.active.push(Transfer {
            index,
            size,
            remaining: size as f64,
            admitted_at: now,
        });
        Ok(())
    }

    /// Projected finish time of `index` if membership does not change.
    pub fn projected_finish(&self, index: DocIndex) -> Option<f64> {
        let share = self.share();
        self.active
            .iter()
            .find(|t| t.index == index)
            .map(|t| self.clock + t.remaining / share)
    }

    /// Earliest projected completion, ties to the lowest index.
    pub fn next_completion(&self) -> Option<(DocIndex, f64)> {
        let share = self.share();
        self.active
            .iter()
            .min_by(|a, b| {
                a.remaining
                    .total_cmp(&b.remaining)
                    .then(a.index.cmp(&b.index))
            })
            .map(|t| (t.index, self.clock + t.remaining / share))
    }

    /// Drains every transfer from the link clock up to `to` and returns the
    /// transfers that finished, sorted by index. No completion may fall
    /// strictly before `to`.
    pub fn advance(&mut self, to: f64) -> Result<Vec<DocIndex>, LinkError> {
        if to < self.clock {
            return Err(LinkError::NegativeInterval {
                from: self.clock,
                to,
            });
        }
        let dt = to - self.clock;
        if dt > 0.0 && !self.active.is_empty() {
            let drained = dt * self.share();
            // Tolerate accumulated rounding, but not a genuinely skipped completion.
            let slack = COMPLETION_EPS.max(drained * 1e-9);
            if let Some(t) = self.active.iter().find(|t| t.remaining - drained < -slack) {
                return Err(LinkError::MissedCompletion(t.index));
            }
            for t in &mut self.active {
                t.remaining -= drained;
            }
        }
        self.clock = to;
        let mut done: Vec<DocIndex> = self
            .active
            .iter()
            .filter(|t| t.remaining <= COMPLETION_EPS)
            .map(|t| t.index)
            .collect();
        self.active.retain(|t| t.remaining > COMPLETION_EPS);
        done.sort_unstable();
        Ok(done)
    }
}
