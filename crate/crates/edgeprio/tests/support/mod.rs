#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use edgeprio::operator::encode_gray;
use edgeprio_core::{EventKind, GrayImage, TraceEvent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// PNG with a noisy dark frame `border` pixels wide around a bright,
/// lightly textured interior.
pub fn framed_noise_png(w: usize, h: usize, border: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let edge = x < border || y < border || x + border >= w || y + border >= h;
            px.push(if edge {
                rng.random_range(0..30)
            } else {
                rng.random_range(180..200)
            });
        }
    }
    encode_gray(&GrayImage::from_pixels(w, h, px).unwrap())
}

/// PNG of bright noise that the operator cannot shrink.
pub fn bright_noise_png(w: usize, h: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = (0..w * h).map(|_| rng.random_range(31..=255)).collect();
    encode_gray(&GrayImage::from_pixels(w, h, px).unwrap())
}

pub fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a hidden temporary name so the watcher never sees a
/// partial file.
pub fn drop_file(dir: &Path, name: &str, bytes: &[u8]) {
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).unwrap();
    fs::rename(&tmp, dir.join(name)).unwrap();
}

pub struct UploadOrderStats {
    pub processed_uploads: usize,
    pub original_uploads: usize,
}

/// Replays a trace and checks every upload decision against the inverse
/// rule: while any processed document waits, only the one that finished
/// processing first may start uploading.
pub fn check_inverse_priority(trace: &[TraceEvent]) -> Result<UploadOrderStats, String> {
    // index -> processing finish time, for processed documents still queued
    let mut waiting: BTreeMap<u32, f64> = BTreeMap::new();
    let mut processed = std::collections::BTreeSet::new();
    let mut stats = UploadOrderStats {
        processed_uploads: 0,
        original_uploads: 0,
    };
    for e in trace {
        match e.kind {
            EventKind::ProcEnd => {
                waiting.insert(e.index, e.time);
                processed.insert(e.index);
            }
            EventKind::UploadStart => {
                let earliest = waiting
                    .iter()
                    .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(b.0)))
                    .map(|(&i, _)| i);
                if processed.contains(&e.index) {
                    if earliest != Some(e.index) {
                        return Err(format!(
                            "t={}: uploaded {} before {:?}",
                            e.time, e.index, earliest
                        ));
                    }
                    waiting.remove(&e.index);
                    stats.processed_uploads += 1;
                } else {
                    if let Some(i) = earliest {
                        return Err(format!(
                            "t={}: uploaded unprocessed {} while processed {} waited",
                            e.time, e.index, i
                        ));
                    }
                    stats.original_uploads += 1;
                }
            }
            _ => {}
        }
    }
    Ok(stats)
}
