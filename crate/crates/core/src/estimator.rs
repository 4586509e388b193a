//! Online estimate of CPU-normalized size reduction over stream index.
//!
//! Observations are knots of a piecewise-linear interpolant. Between knots
//! the estimate is linear, outside the knot range it is held at the nearest
//! knot's value, and with no knots it is `default_prior`. Each observation is
//! a single ordered insert, so re-estimation after a document finishes is
//! `O(log k)` to locate plus `O(k)` to shift.

use alloc::vec::Vec;

use thiserror::Error;

use crate::document::DocIndex;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EstimatorError {
    #[error("ratio must be finite and non-negative, got {0}")]
    NegativeRatio(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioSpline {
    knots: Vec<(DocIndex, f64)>,
    default_prior: f64,
}

impl Default for RatioSpline {
    fn default() -> Self {
        Self::new()
    }
}

impl RatioSpline {
    /// Empty spline with a zero prior.
    pub fn new() -> Self {
        Self::with_prior(0.0)
    }

    pub fn with_prior(default_prior: f64) -> Self {
        RatioSpline {
            knots: Vec::new(),
            default_prior,
        }
    }

    pub fn knots(&self) -> &[(DocIndex, f64)] {
        &self.knots
    }

    pub fn default_prior(&self) -> f64 {
        self.default_prior
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// Inserts a knot, replacing any existing knot at the same index.
    pub fn observe(&mut self, index: DocIndex, ratio: f64) -> Result<(), EstimatorError> {
        if !(ratio >= 0.0) || !ratio.is_finite() {
            return Err(EstimatorError::NegativeRatio(ratio));
        }
        match self.knots.binary_search_by_key(&index, |&(i, _)| i) {
            Ok(pos) => self.knots[pos].1 = ratio,
            Err(pos) => self.knots.insert(pos, (index, ratio)),
        }
        Ok(())
    }

    pub fn estimate(&self, index: DocIndex) -> f64 {
        let knots = &self.knots;
        let (first, last) = match (knots.first(), knots.last()) {
            (Some(&f), Some(&l)) => (f, l),
            _ => return self.default_prior,
        };
        if index <= first.0 {
            return first.1;
        }
        if index >= last.0 {
            return last.1;
        }
        match knots.binary_search_by_key(&index, |&(i, _)| i) {
            Ok(pos) => knots[pos].1,
            Err(pos) => {
                // first.0 < index < last.0, so 0 < pos < len
                let (i0, r0) = knots[pos - 1];
                let (i1, r1) = knots[pos];
                let t = f64::from(index - i0) / f64::from(i1 - i0);
                r0 + (r1 - r0) * t
            }
        }
    }

    /// Distance from `index` to the closest knot, `None` without knots.
    pub fn distance_to_nearest_knot(&self, index: DocIndex) -> Option<u32> {
        if self.knots.is_empty() {
            return None;
        }
        let pos = self.knots.partition_point(|&(i, _)| i < index);
        let right = self.knots.get(pos).map(|&(i, _)| i - index);
        let left = pos.checked_sub(1).map(|p| index - self.knots[p].0);
        match (left, right) {
            (Some(l), Some(r)) => Some(l.min(r)),
            (Some(d), None) | (None, Some(d)) => Some(d),
            (None, None) => None,
        }
    }

    /// Picks the candidate farthest from any knot, ties to the lowest index.
    /// Without knots this is the lowest candidate.
    pub fn search_target(&self, candidates: &[DocIndex]) -> Option<DocIndex> {
        if self.knots.is_empty() {
            return candidates.iter().copied().min();
        }
        let mut best: Option<(u32, DocIndex)> = None;
        for &c in candidates {
            let d = self.distance_to_nearest_knot(c).unwrap_or(0);
            best = match best {
                Some((bd, bi)) if bd > d || (bd == d && bi < c) => Some((bd, bi)),
                _ => Some((d, c)),
            };
        }
        best.map(|(_, i)| i)
    }
}
