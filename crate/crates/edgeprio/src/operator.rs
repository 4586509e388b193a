//! The image operator applied to files: decode an 8-bit grayscale PNG, run
//! the border-seeded threshold fill, re-encode losslessly.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use edgeprio_core::{threshold_flood_fill, Connectivity, GrayImage};
use thiserror::Error;

use crate::cputime::thread_cpu_time;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorReport {
    pub original_size: u64,
    pub processed_size: u64,
    /// CPU time of decode, fill and encode on the calling thread.
    pub cpu_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FillSettings {
    pub threshold: u8,
    pub connectivity: Connectivity,
}

impl Default for FillSettings {
    fn default() -> Self {
        FillSettings {
            threshold: edgeprio_core::DEFAULT_THRESHOLD,
            connectivity: Connectivity::Four,
        }
    }
}

/// Decodes an 8-bit grayscale PNG. Other color types and depths are errors.
pub fn decode_gray(bytes: &[u8]) -> Result<GrayImage, OperatorError> {
    let decode = |e: png::DecodingError| OperatorError::Decode(e.to_string());
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(decode)?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(OperatorError::Decode(format!(
            "expected 8-bit grayscale, found {:?} at {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| OperatorError::Decode("image too large".into()))?;
    let mut buf = vec![0; size];
    let frame = reader.next_frame(&mut buf).map_err(decode)?;
    buf.truncate(frame.buffer_size());
    GrayImage::from_pixels(w, h, buf).ok_or_else(|| OperatorError::Decode("empty image".into()))
}

/// Encodes with the highest compression effort so sizes are reproducible.
pub fn encode_gray(img: &GrayImage) -> Vec<u8> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(png::Compression::High);
    let mut writer = enc.write_header().expect("in-memory PNG header");
    writer
        .write_image_data(img.pixels())
        .expect("in-memory PNG data");
    writer.finish().expect("in-memory PNG trailer");
    out
}

/// Runs the operator on PNG bytes, returning the new bytes and CPU seconds.
pub fn process_bytes(
    input: &[u8],
    settings: FillSettings,
) -> Result<(Vec<u8>, f64), OperatorError> {
    let t0 = thread_cpu_time();
    let img = decode_gray(input)?;
    let filled = threshold_flood_fill(&img, settings.threshold, settings.connectivity);
    let out = encode_gray(&filled);
    Ok((out, (thread_cpu_time() - t0).as_secs_f64()))
}

pub fn process_file(
    path_in: &Path,
    path_out: &Path,
    settings: FillSettings,
) -> Result<OperatorReport, OperatorError> {
    let input = fs::read(path_in).map_err(|source| OperatorError::Read {
        path: path_in.to_owned(),
        source,
    })?;
    let (output, cpu_seconds) = process_bytes(&input, settings)?;
    fs::write(path_out, &output).map_err(|source| OperatorError::Write {
        path: path_out.to_owned(),
        source,
    })?;
    Ok(OperatorReport {
        original_size: input.len() as u64,
        processed_size: output.len() as u64,
        cpu_seconds,
    })
}
