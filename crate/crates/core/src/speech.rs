//! Phoneme-labelled pseudo-speech used as self-contained source material.
//!
//! Voiced phonemes are harmonic series whose partials are shaped by two or
//! three formant resonances; unvoiced ones are narrow noise bands made of
//! random-phase partials. Speakers differ in pitch and formant scale.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Toy inventory size; labels run from 1 to this value (0 is the CTC blank).
pub const NUM_PHONEMES: usize = 32;
const NUM_VOICED: usize = 24;
const F1: [f64; 4] = [300.0, 480.0, 720.0, 1000.0];
const F2: [f64; 6] = [950.0, 1300.0, 1750.0, 2300.0, 2950.0, 3700.0];
const FRICATIVE_CENTERS: [f64; 8] = [2300.0, 2800.0, 3400.0, 4100.0, 4900.0, 5800.0, 6700.0, 7500.0];
const TARGET_RMS: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Speaker {
    pub id: u32,
    pub f0: f64,
    pub formant_scale: f64,
}

impl Speaker {
    pub fn sample<R: Rng>(id: u32, rng: &mut R) -> Self {
        Speaker { id, f0: rng.gen_range(90.0..250.0), formant_scale: rng.gen_range(0.92..1.08) }
    }
}

/// `n` speakers with ids `first_id..first_id+n`.
pub fn speaker_pool(first_id: u32, n: usize, seed: u64) -> Vec<Speaker> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n as u32).map(|i| Speaker::sample(first_id + i, &mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub samples: Vec<f64>,
    pub labels: Vec<usize>,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeechConfig {
    pub sample_rate: u32,
    pub segment_ms: (f64, f64),
    pub gap_ms: (f64, f64),
    pub lead_ms: (f64, f64),
}

impl Default for SpeechConfig {
    fn default() -> Self {
        SpeechConfig { sample_rate: 16_000, segment_ms: (100.0, 200.0), gap_ms: (30.0, 80.0), lead_ms: (20.0, 120.0) }
    }
}

pub fn is_voiced(label: usize) -> bool {
    (1..=NUM_VOICED).contains(&label)
}

/// Formant centres of a voiced label before speaker scaling.
pub fn formants(label: usize) -> Option<[f64; 3]> {
    if !is_voiced(label) {
        return None;
    }
    let i = label - 1;
    let (f1, f2) = (F1[i / F2.len()], F2[i % F2.len()]);
    Some([f1, f2, f2.max(f1 * 2.0) + 900.0])
}

fn ms(x: f64, sr: u32) -> usize {
    (x * 1e-3 * sr as f64).round() as usize
}

fn raised_cosine_env(n: usize, ramp: usize) -> impl Fn(usize) -> f64 {
    let ramp = ramp.min(n / 2).max(1);
    move |i| {
        let k = i.min(n - 1 - i);
        if k >= ramp {
            1.0
        } else {
            0.5 - 0.5 * (PI * k as f64 / ramp as f64).cos()
        }
    }
}

fn voiced<R: Rng>(label: usize, spk: &Speaker, n: usize, sr: f64, rng: &mut R) -> Vec<f64> {
    let fm = formants(label).expect("voiced label");
    let fm = fm.map(|f| f * spk.formant_scale);
    let bw = [90.0, 130.0, 180.0];
    let f0 = spk.f0 * rng.gen_range(0.95..1.05);
    // Gentle pitch glide across the segment.
    let glide: f64 = rng.gen_range(-0.06..0.06);
    let nyq = 0.5 * sr - 200.0;
    let mut out = vec![0.0; n];
    let mut h = 1;
    loop {
        let fh = f0 * h as f64;
        if fh * (1.0 + glide.abs()) >= nyq {
            break;
        }
        let amp: f64 = fm
            .iter()
            .zip(bw)
            .enumerate()
            .map(|(k, (f, b))| {
                let x = (fh - f) / b;
                (0.6f64).powi(k as i32) / (1.0 + x * x)
            })
            .sum::<f64>()
            + 0.01;
        let phase0 = rng.gen_range(0.0..2.0 * PI);
        let mut phase = phase0;
        for (i, o) in out.iter_mut().enumerate() {
            let inst = fh * (1.0 + glide * i as f64 / n as f64);
            phase += 2.0 * PI * inst / sr;
            *o += amp * phase.sin();
        }
        h += 1;
    }
    out
}

fn fricative<R: Rng>(label: usize, n: usize, sr: f64, rng: &mut R) -> Vec<f64> {
    let fc = FRICATIVE_CENTERS[label - NUM_VOICED - 1];
    let (lo, hi) = (fc * 0.9, (fc * 1.1).min(0.5 * sr - 100.0));
    let mut out = vec![0.0; n];
    for _ in 0..48 {
        let f = rng.gen_range(lo..hi);
        let ph = rng.gen_range(0.0..2.0 * PI);
        let w = 2.0 * PI * f / sr;
        for (i, o) in out.iter_mut().enumerate() {
            *o += (w * i as f64 + ph).sin();
        }
    }
    out
}

fn normalize_rms(x: &mut [f64], target: f64) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / rms);
    }
}

/// Renders one labelled segment.
pub fn render_phoneme<R: Rng>(label: usize, spk: &Speaker, n: usize, sample_rate: u32, rng: &mut R) -> Result<Vec<f64>> {
    if !(1..=NUM_PHONEMES).contains(&label) {
        return Err(Error::InvalidArgument(format!("phoneme {label} outside 1..={NUM_PHONEMES}")));
    }
    let sr = sample_rate as f64;
    let mut x = if is_voiced(label) { voiced(label, spk, n, sr, rng) } else { fricative(label, n, sr, rng) };
    normalize_rms(&mut x, 1.0);
    let env = raised_cosine_env(n, ms(15.0, sample_rate));
    for (i, v) in x.iter_mut().enumerate() {
        *v *= env(i);
    }
    Ok(x)
}

/// A `duration_s` utterance: silence-separated phonemes drawn uniformly from
/// the inventory, normalised to a fixed RMS.
pub fn generate_utterance(spk: &Speaker, duration_s: f64, config: &SpeechConfig, seed: u64) -> Result<Utterance> {
    let sr = config.sample_rate;
    let total = (duration_s * sr as f64).round() as usize;
    if total < ms(config.segment_ms.1 + config.lead_ms.1, sr) {
        return Err(Error::InvalidArgument(format!("utterance of {duration_s} s is too short")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = vec![0.0; total];
    let mut segments = Vec::new();
    let mut at = ms(rng.gen_range(config.lead_ms.0..config.lead_ms.1), sr);
    loop {
        let len = ms(rng.gen_range(config.segment_ms.0..config.segment_ms.1), sr);
        if at + len > total.saturating_sub(ms(config.gap_ms.0, sr)) {
            break;
        }
        let label = rng.gen_range(1..=NUM_PHONEMES);
        let seg = render_phoneme(label, spk, len, sr, &mut rng)?;
        samples[at..at + len].copy_from_slice(&seg);
        segments.push(Segment { start: at, end: at + len, label });
        at += len + ms(rng.gen_range(config.gap_ms.0..config.gap_ms.1), sr);
    }
    normalize_rms(&mut samples, TARGET_RMS);
    let labels = segments.iter().map(|s| s.label).collect();
    Ok(Utterance { samples, labels, segments })
}
