//! Border-seeded threshold flood fill on 8-bit grayscale images.
//!
//! The image is treated as if surrounded by a one-pixel black frame. Every
//! pixel at or below the threshold that is connected to that frame through
//! other such pixels is set to black. Dark noise touching the image border
//! collapses to a constant, which lossless codecs compress well.

use alloc::vec;
use alloc::vec::Vec;

/// Intensity at or below which pixels are filled.
pub const DEFAULT_THRESHOLD: u8 = 30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    /// Row-major pixels; `None` if the length does not match or a side is zero.
    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Option<Self> {
        (width > 0 && height > 0 && width.checked_mul(height) == Some(pixels.len())).then_some(
            GrayImage {
                width,
                height,
                pixels,
            },
        )
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Option<Self> {
        Self::from_pixels(width, height, vec![value; width.checked_mul(height)?])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

/// Fills from the border over pixels `<= threshold`, setting them to 0.
pub fn threshold_flood_fill(
    img: &GrayImage,
    threshold: u8,
    connectivity: Connectivity,
) -> GrayImage {
    let (w, h) = (img.width, img.height);
    let mut out = img.clone();
    let mut seen = vec![false; w * h];
    let mut frontier: Vec<usize> = Vec::new();

    // Every edge pixel touches the virtual frame.
    let push = |p: usize, seen: &mut [bool], frontier: &mut Vec<usize>| {
        if !seen[p] && img.pixels[p] <= threshold {
            seen[p] = true;
            frontier.push(p);
        }
    };
    for x in 0..w {
        push(x, &mut seen, &mut frontier);
        push((h - 1) * w + x, &mut seen, &mut frontier);
    }
    for y in 0..h {
        push(y * w, &mut seen, &mut frontier);
        push(y * w + w - 1, &mut seen, &mut frontier);
    }

    const FOUR: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
    const EIGHT: [(isize, isize); 8] = [
        (1, 0),
        (-1, 0),
        (0, 1),
        (0, -1),
        (1, 1),
        (1, -1),
        (-1, 1),
        (-1, -1),
    ];
    let offsets: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &FOUR,
        Connectivity::Eight => &EIGHT,
    };

    while let Some(p) = frontier.pop() {
        out.pixels[p] = 0;
        let (x, y) = ((p % w) as isize, (p / w) as isize);
        for &(dx, dy) in offsets {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            push(ny as usize * w + nx as usize, &mut seen, &mut frontier);
        }
    }
    out
}
