//! Reference implementations used as test oracles. Each one is written the
//! slow, obvious way and shares no code with the crate under test.

#![allow(dead_code)]

use std::collections::VecDeque;

use edgeprio_core::policy::{ProcessChooser, QueueEntry, Selection, SelectionKind, UploadChooser};
use edgeprio_core::{DocIndex, RatioSpline, SharedLink};

/// Time-stepped fluid link: every `dt` seconds each active transfer drains
/// `capacity * dt / active`. A transfer that finishes inside a step reports
/// the interpolated instant and its unused share goes to the others in that
/// step. Returns completion times in schedule order.
pub fn fluid_link_oracle(capacity: f64, schedule: &[(f64, u64)], dt: f64) -> Vec<f64> {
    let mut remaining: Vec<f64> = schedule.iter().map(|&(_, s)| s as f64).collect();
    let mut done: Vec<Option<f64>> = vec![None; schedule.len()];
    let mut step = 0u64;
    while done.iter().any(Option::is_none) {
        let t = step as f64 * dt;
        let active: Vec<usize> = (0..schedule.len())
            .filter(|&i| done[i].is_none() && schedule[i].0 <= t + 1e-12)
            .collect();
        if !active.is_empty() {
            let share = capacity * dt / active.len() as f64;
            let mut spare = 0.0;
            let mut left = Vec::new();
            for &i in &active {
                if remaining[i] <= share {
                    done[i] = Some(t + dt * remaining[i] / share);
                    spare += share - remaining[i];
                    remaining[i] = 0.0;
                } else {
                    remaining[i] -= share;
                    left.push(i);
                }
            }
            for &i in &left {
                remaining[i] -= spare / left.len() as f64;
                if remaining[i] <= 1e-9 {
                    done[i] = Some(t + dt);
                }
            }
        }
        step += 1;
    }
    done.into_iter().map(Option::unwrap).collect()
}

/// Drives a [`SharedLink`] through an admission schedule (sorted by time)
/// and returns each transfer's completion time.
pub fn drive_link(capacity: f64, schedule: &[(f64, u64)]) -> Vec<f64> {
    let mut link = SharedLink::new(capacity, schedule.len().max(1)).unwrap();
    let mut finish = vec![f64::NAN; schedule.len()];
    let mut next = 0;
    while next < schedule.len() || !link.is_empty() {
        let admit_at = schedule.get(next).map(|&(t, _)| t);
        match (link.next_completion(), admit_at) {
            (Some((_, tc)), Some(ta)) if ta < tc => {
                link.admit(next as DocIndex, schedule[next].1, ta).unwrap();
                next += 1;
            }
            (Some((_, tc)), _) => {
                for i in link.advance(tc).unwrap() {
                    finish[i as usize] = tc;
                }
            }
            (None, Some(ta)) => {
                link.admit(next as DocIndex, schedule[next].1, ta).unwrap();
                next += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    finish
}

/// Literal version of the operator: pad with a black frame, breadth-first
/// search from the frame corner over 4-neighbours `<= threshold`, crop.
pub fn bfs_fill_oracle(width: usize, height: usize, pixels: &[u8], threshold: u8) -> Vec<u8> {
    let (pw, ph) = (width + 2, height + 2);
    let mut padded = vec![0u8; pw * ph];
    for y in 0..height {
        for x in 0..width {
            padded[(y + 1) * pw + x + 1] = pixels[y * width + x];
        }
    }
    let mut visited = vec![false; pw * ph];
    let mut queue = VecDeque::new();
    visited[0] = true;
    queue.push_back((0usize, 0usize));
    while let Some((x, y)) = queue.pop_front() {
        padded[y * pw + x] = 0;
        let mut visit = |nx: usize, ny: usize| {
            let p = ny * pw + nx;
            if !visited[p] && padded[p] <= threshold {
                visited[p] = true;
                queue.push_back((nx, ny));
            }
        };
        if x > 0 {
            visit(x - 1, y);
        }
        if x + 1 < pw {
            visit(x + 1, y);
        }
        if y > 0 {
            visit(x, y - 1);
        }
        if y + 1 < ph {
            visit(x, y + 1);
        }
    }
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            out.push(padded[(y + 1) * pw + x + 1]);
        }
    }
    out
}

/// Linear scan for the bracketing segment; clamps outside the knot range.
pub fn brute_interpolate(knots: &[(u32, f64)], q: u32, prior: f64) -> f64 {
    if knots.is_empty() {
        return prior;
    }
    let mut sorted = knots.to_vec();
    sorted.sort_by_key(|k| k.0);
    if q <= sorted[0].0 {
        return sorted[0].1;
    }
    if q >= sorted[sorted.len() - 1].0 {
        return sorted[sorted.len() - 1].1;
    }
    for w in sorted.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 == q {
            return y0;
        }
        if x0 < q && q < x1 {
            let slope = (y1 - y0) / (x1 as f64 - x0 as f64);
            return y0 + slope * (q as f64 - x0 as f64);
        }
    }
    unreachable!()
}

/// Processes the queued document with the highest true ratio.
pub struct ClairvoyantProcess(pub Vec<f64>);

impl ProcessChooser for ClairvoyantProcess {
    fn choose(&mut self, queue: &[QueueEntry], _: &RatioSpline) -> Option<Selection> {
        let mut best: Option<(f64, DocIndex)> = None;
        for e in queue.iter().filter(|e| !e.is_processed()) {
            let r = self.0[e.index as usize];
            if best.is_none_or(|(b, bi)| r > b || (r == b && e.index < bi)) {
                best = Some((r, e.index));
            }
        }
        best.map(|(_, index)| Selection {
            index,
            kind: SelectionKind::Prio,
        })
    }
}

/// Uploads processed documents first, then the lowest true ratio.
pub struct ClairvoyantUpload(pub Vec<f64>);

impl UploadChooser for ClairvoyantUpload {
    fn choose(&mut self, queue: &[QueueEntry], _: &RatioSpline) -> Option<DocIndex> {
        let processed = queue
            .iter()
            .filter_map(|e| e.processed_at.map(|t| (t, e.index)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((_, i)) = processed {
            return Some(i);
        }
        let mut best: Option<(f64, DocIndex)> = None;
        for e in queue {
            let r = self.0[e.index as usize];
            if best.is_none_or(|(b, bi)| r < b || (r == b && e.index < bi)) {
                best = Some((r, e.index));
            }
        }
        best.map(|(_, i)| i)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Sample autocorrelation at `lag`.
pub fn autocorrelation(xs: &[f64], lag: usize) -> f64 {
    let m = mean(xs);
    let var: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    let cov: f64 = xs.windows(lag + 1).map(|w| (w[0] - m) * (w[lag] - m)).sum();
    cov / var
}
