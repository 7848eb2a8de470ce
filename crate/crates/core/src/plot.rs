//! Log-magnitude spectrogram images written as binary PGM.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Border added on every side of a panel, in pixels.
pub const MARGIN: usize = 4;
pub const DEFAULT_RANGE_DB: f64 = 80.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage { width, height, pixels: vec![0; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_pgm())?;
        Ok(())
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Data("not a binary 8-bit PGM".into());
        let mut fields = Vec::new();
        let mut i = 0;
        while fields.len() < 4 {
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            let s = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if s == i {
                return Err(bad());
            }
            fields.push(std::str::from_utf8(&bytes[s..i]).map_err(|_| bad())?.to_string());
        }
        if fields[0] != "P5" || fields[3] != "255" {
            return Err(bad());
        }
        let width: usize = fields[1].parse().map_err(|_| bad())?;
        let height: usize = fields[2].parse().map_err(|_| bad())?;
        let data = bytes.get(i + 1..i + 1 + width * height).ok_or_else(bad)?;
        Ok(GrayImage { width, height, pixels: data.to_vec() })
    }
}

/// `bins x frames` magnitudes to an image with low frequencies at the bottom.
/// Intensity maps `[peak - range_db, peak]` dB linearly onto 0..=255; a
/// silent input gives an all-zero image.
pub fn spectrogram_image(magnitude: &Array2<f64>, range_db: f64) -> GrayImage {
    let (bins, frames) = magnitude.dim();
    let mut img = GrayImage::new(frames + 2 * MARGIN, bins + 2 * MARGIN);
    let peak = magnitude.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return img;
    }
    for ((f, t), &m) in magnitude.indexed_iter() {
        let db = if m > 0.0 { 20.0 * (m / peak).log10() } else { -range_db };
        let v = ((db + range_db) / range_db).clamp(0.0, 1.0) * 255.0;
        img.set(MARGIN + t, MARGIN + bins - 1 - f, v.round() as u8);
    }
    img
}

/// Places images left to right, top-aligned.
pub fn side_by_side(images: &[GrayImage]) -> GrayImage {
    let width = images.iter().map(|i| i.width).sum();
    let height = images.iter().map(|i| i.height).max().unwrap_or(0);
    let mut out = GrayImage::new(width, height);
    let mut x0 = 0;
    for img in images {
        for y in 0..img.height {
            for x in 0..img.width {
                out.set(x0 + x, y, img.get(x, y));
            }
        }
        x0 += img.width;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions_include_margins() {
        let m = Array2::from_shape_fn((257, 30), |(f, t)| (f + t) as f64 + 1.0);
        let img = spectrogram_image(&m, DEFAULT_RANGE_DB);
        assert_eq!((img.width, img.height), (30 + 2 * MARGIN, 257 + 2 * MARGIN));
        // Peak at the highest bin of the last frame, drawn top right.
        assert_eq!(img.get(MARGIN + 29, MARGIN), 255);
    }

    #[test]
    fn silent_input_is_uniform() {
        let img = spectrogram_image(&Array2::zeros((9, 5)), DEFAULT_RANGE_DB);
        assert!(img.pixels.iter().all(|&p| p == 0));
    }

    #[test]
    fn pgm_round_trip_and_panels() {
        let a = spectrogram_image(&Array2::from_elem((4, 3), 1.0), 60.0);
        let b = spectrogram_image(&Array2::from_elem((6, 2), 0.5), 60.0);
        let p = side_by_side(&[a.clone(), b.clone()]);
        assert_eq!(p.width, a.width + b.width);
        assert_eq!(p.height, b.height);
        assert_eq!(GrayImage::from_pgm(&p.to_pgm()).unwrap(), p);
        assert!(GrayImage::from_pgm(b"P2\n1 1\n255\n0").is_err());
    }
}
