use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::dsp::{magnitude_phase, stft, FrameSpec};
use crate::error::{Error, Result};
use crate::mask::hole_fraction;
use crate::metrics::{edit_distance, sdr, si_snr};
use crate::nn::ctc::greedy_decode;
use crate::nn::CldnnLite;

pub const HOLE_FLOOR_RATIO: f64 = 0.1;
pub const HOLE_ACTIVE_DB: f64 = -40.0;

/// Angle-difference buckets in degrees; the first is closed on both ends.
pub const ANGLE_BUCKETS: [(f64, f64); 4] = [(0.0, 15.0), (15.0, 45.0), (45.0, 90.0), (90.0, 180.0)];

pub fn angle_bucket(diff_deg: f64) -> &'static str {
    const NAMES: [&str; 4] = ["0-15", "15-45", "45-90", "90-180"];
    let i = ANGLE_BUCKETS.iter().position(|&(_, hi)| diff_deg <= hi).unwrap_or(ANGLE_BUCKETS.len() - 1);
    NAMES[i]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceScore {
    pub utt_id: String,
    pub sir_db: f64,
    pub angle_diff_deg: f64,
    pub angle_bucket: String,
    pub si_snr_in: f64,
    pub si_snr_out: f64,
    pub si_snr_improvement: f64,
    pub sdr_out: f64,
    pub hole_fraction: f64,
    pub cer: Option<f64>,
    #[serde(skip)]
    pub edits: usize,
    #[serde(skip)]
    pub ref_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSummary {
    /// `None` for the overall row.
    pub sir_db: Option<f64>,
    pub angle_bucket: String,
    pub count: usize,
    pub si_snr_in: f64,
    pub si_snr_out: f64,
    pub si_snr_improvement: f64,
    pub sdr_out: f64,
    pub hole_fraction: f64,
    /// Total edits over total reference symbols.
    pub cer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub utterances: Vec<UtteranceScore>,
    pub buckets: Vec<BucketSummary>,
    pub overall: BucketSummary,
}

fn summarize(sir_db: Option<f64>, bucket: &str, rows: &[&UtteranceScore]) -> BucketSummary {
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&UtteranceScore) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    let cer = rows.iter().all(|r| r.cer.is_some()).then(|| {
        let (e, l) = rows.iter().fold((0, 0), |(e, l), r| (e + r.edits, l + r.ref_len));
        e as f64 / l.max(1) as f64
    });
    BucketSummary {
        sir_db,
        angle_bucket: bucket.to_string(),
        count: rows.len(),
        si_snr_in: mean(|r| r.si_snr_in),
        si_snr_out: mean(|r| r.si_snr_out),
        si_snr_improvement: mean(|r| r.si_snr_improvement),
        sdr_out: mean(|r| r.sdr_out),
        hole_fraction: mean(|r| r.hole_fraction),
        cer: if rows.is_empty() { None } else { cer },
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

impl EvalReport {
    pub fn median_hole_fraction(&self) -> f64 {
        median(self.utterances.iter().map(|u| u.hole_fraction).collect())
    }

    pub fn median_si_snr(&self) -> f64 {
        median(self.utterances.iter().map(|u| u.si_snr_out).collect())
    }

    /// Line-delimited JSON: one line per utterance, then one per bucket and
    /// the overall summary.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for u in &self.utterances {
            out.push_str(&serde_json::to_string(u)?);
            out.push('\n');
        }
        for b in self.buckets.iter().chain(std::iter::once(&self.overall)) {
            out.push_str(&serde_json::to_string(b)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Hole thresholds used by [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoleOptions {
    pub floor_ratio: f64,
    pub active_db: f64,
}

impl Default for HoleOptions {
    fn default() -> Self {
        HoleOptions { floor_ratio: HOLE_FLOOR_RATIO, active_db: HOLE_ACTIVE_DB }
    }
}

/// Hole fraction of `estimate` after scaling it by its least-squares gain
/// onto `reference`; SI-SNR training leaves the output level free.
pub fn aligned_hole_fraction(estimate: &[f64], reference: &[f64], opts: HoleOptions) -> Result<f64> {
    let ee: f64 = estimate.iter().map(|v| v * v).sum();
    let gain = if ee > 0.0 { estimate.iter().zip(reference).map(|(a, b)| a * b).sum::<f64>() / ee } else { 0.0 };
    let aligned: Vec<f64> = estimate.iter().map(|v| v * gain).collect();
    let fs = FrameSpec::default();
    let (em, _) = magnitude_phase(&stft(&aligned, &fs)?);
    let (rm, _) = magnitude_phase(&stft(reference, &fs)?);
    hole_fraction(&em, &rm, opts.floor_ratio, opts.active_db)
}

/// Scores `estimate` against the reverberant target of `sample`.
fn score(sample: &Sample, estimate: &[f64], am: Option<&CldnnLite>, opts: HoleOptions) -> Result<UtteranceScore> {
    let reference = &sample.reverb_target;
    if estimate.len() != reference.len() {
        return Err(Error::Data(format!(
            "{}: estimate has {} samples, reference {}",
            sample.record.id,
            estimate.len(),
            reference.len()
        )));
    }
    let si_in = si_snr(&sample.reference_mixture(), reference)?;
    let si_out = si_snr(estimate, reference)?;
    let holes = aligned_hole_fraction(estimate, reference, opts)?;
    let labels = &sample.record.transcript_labels;
    let (cer, edits) = match am {
        Some(am) => {
            let hyp = greedy_decode(&am.log_probs(estimate)?);
            let e = edit_distance(&hyp, labels);
            (Some(e as f64 / labels.len().max(1) as f64), e)
        }
        None => (None, 0),
    };
    let scene = &sample.record.scene;
    let diff = scene.angle_difference();
    Ok(UtteranceScore {
        utt_id: sample.record.id.clone(),
        sir_db: scene.sir_db,
        angle_diff_deg: diff,
        angle_bucket: angle_bucket(diff).to_string(),
        si_snr_in: si_in,
        si_snr_out: si_out,
        si_snr_improvement: si_out - si_in,
        sdr_out: sdr(estimate, reference)?,
        hole_fraction: holes,
        cer,
        edits,
        ref_len: labels.len(),
    })
}

/// Per-utterance scores plus summaries per (SIR, angle bucket) cell.
pub fn evaluate(samples: &[Sample], estimates: &[Vec<f64>], am: Option<&CldnnLite>) -> Result<EvalReport> {
    evaluate_with(samples, estimates, am, HoleOptions::default())
}

pub fn evaluate_with(samples: &[Sample], estimates: &[Vec<f64>], am: Option<&CldnnLite>, opts: HoleOptions) -> Result<EvalReport> {
    if samples.len() != estimates.len() {
        return Err(Error::Data(format!("{} estimates for {} scenes", estimates.len(), samples.len())));
    }
    let utterances: Vec<UtteranceScore> = samples
        .par_iter()
        .zip(estimates.par_iter())
        .map(|(s, e)| score(s, e, am, opts))
        .collect::<Result<_>>()?;
    let mut cells: BTreeMap<(i64, usize), Vec<&UtteranceScore>> = BTreeMap::new();
    for sir in crate::room::SIR_CHOICES_DB {
        for b in 0..ANGLE_BUCKETS.len() {
            cells.insert(((sir * 1000.0).round() as i64, b), Vec::new());
        }
    }
    for u in &utterances {
        let b = ANGLE_BUCKETS.iter().position(|&(_, hi)| u.angle_diff_deg <= hi).unwrap_or(ANGLE_BUCKETS.len() - 1);
        cells.entry(((u.sir_db * 1000.0).round() as i64, b)).or_default().push(u);
    }
    let buckets = cells
        .iter()
        .map(|(&(sir, b), rows)| summarize(Some(sir as f64 / 1000.0), angle_bucket(ANGLE_BUCKETS[b].1), rows))
        .collect();
    let all: Vec<&UtteranceScore> = utterances.iter().collect();
    let overall = summarize(None, "all", &all);
    Ok(EvalReport { utterances, buckets, overall })
}
