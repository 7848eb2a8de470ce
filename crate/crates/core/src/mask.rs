//! Time-frequency masks, waveform reconstruction and the spectral-hole
//! statistic.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, ComplexSpectrogram};
use crate::error::{shape_err, Error, Result};

/// Magnitude clip applied to oracle complex masks.
pub const ORACLE_CIRM_CLIP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Irm,
    Cirm,
}

impl std::fmt::Display for MaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskKind::Irm => "irm",
            MaskKind::Cirm => "cirm",
        })
    }
}

/// A non-negative real ratio mask or an unbounded complex one.
#[derive(Debug, Clone, PartialEq)]
pub enum Mask {
    Irm(Array2<f64>),
    Cirm { re: Array2<f64>, im: Array2<f64> },
}

impl Mask {
    pub fn kind(&self) -> MaskKind {
        match self {
            Mask::Irm(_) => MaskKind::Irm,
            Mask::Cirm { .. } => MaskKind::Cirm,
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        match self {
            Mask::Irm(m) => m.dim(),
            Mask::Cirm { re, .. } => re.dim(),
        }
    }

    pub fn identity(kind: MaskKind, bins: usize, frames: usize) -> Mask {
        match kind {
            MaskKind::Irm => Mask::Irm(Array2::ones((bins, frames))),
            MaskKind::Cirm => Mask::Cirm {
                re: Array2::ones((bins, frames)),
                im: Array2::zeros((bins, frames)),
            },
        }
    }

    /// Masked spectrogram of the reference-channel mixture.
    pub fn apply_to(&self, mixture: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
        match self {
            Mask::Irm(m) => {
                check_dim(m.dim(), mixture)?;
                if m.iter().any(|v| !(*v >= 0.0)) {
                    return Err(Error::InvalidArgument(
                        "ratio mask entries must be non-negative".into(),
                    ));
                }
                // M |Y| exp(i phase(Y)) == M Y, and zero bins keep phase 0.
                let mut bins = mixture.bins.clone();
                ndarray::Zip::from(&mut bins).and(m).for_each(|b, &g| *b *= g);
                ComplexSpectrogram::new(bins, mixture.frame_spec)
            }
            Mask::Cirm { re, im } => {
                check_dim(re.dim(), mixture)?;
                if re.dim() != im.dim() {
                    return Err(shape_err("complex mask planes differ"));
                }
                let mut bins = mixture.bins.clone();
                ndarray::Zip::from(&mut bins)
                    .and(re)
                    .and(im)
                    .for_each(|b, &r, &i| *b *= Complex64::new(r, i));
                ComplexSpectrogram::new(bins, mixture.frame_spec)
            }
        }
    }
}

fn check_dim(dim: (usize, usize), mixture: &ComplexSpectrogram) -> Result<()> {
    if dim != mixture.bins.dim() {
        return Err(shape_err(format!(
            "mask {:?} does not match spectrogram {:?}",
            dim,
            mixture.bins.dim()
        )));
    }
    Ok(())
}

/// `istft((M * |Y1|) exp(i phi_1))`; the output keeps the mixture phase.
pub fn apply_irm(mask: &Mask, mixture_spec: &ComplexSpectrogram, num_samples: usize) -> Result<Vec<f64>> {
    if mask.kind() != MaskKind::Irm {
        return Err(Error::InvalidArgument("apply_irm needs a ratio mask".into()));
    }
    dsp::istft(&mask.apply_to(mixture_spec)?, num_samples)
}

/// `istft(M_c * Y1)` with full complex multiplication.
pub fn apply_cirm(mask: &Mask, mixture_spec: &ComplexSpectrogram, num_samples: usize) -> Result<Vec<f64>> {
    if mask.kind() != MaskKind::Cirm {
        return Err(Error::InvalidArgument("apply_cirm needs a complex mask".into()));
    }
    dsp::istft(&mask.apply_to(mixture_spec)?, num_samples)
}

/// Dispatches on the mask kind.
pub fn reconstruct(mask: &Mask, mixture_spec: &ComplexSpectrogram, num_samples: usize) -> Result<Vec<f64>> {
    dsp::istft(&mask.apply_to(mixture_spec)?, num_samples)
}

/// Oracle ratio mask `|S| / |Y|` (0 where the mixture bin is zero).
pub fn oracle_irm(target: &ComplexSpectrogram, mixture: &ComplexSpectrogram) -> Result<Mask> {
    if target.bins.dim() != mixture.bins.dim() {
        return Err(shape_err("oracle mask inputs differ in shape"));
    }
    let mut m = Array2::zeros(target.bins.dim());
    ndarray::Zip::from(&mut m)
        .and(&target.bins)
        .and(&mixture.bins)
        .for_each(|o, s, y| {
            let d = y.norm();
            *o = if d > 0.0 { s.norm() / d } else { 0.0 };
        });
    Ok(Mask::Irm(m))
}

/// Oracle complex mask `S / Y`, magnitude clipped to `clip` (pass
/// `f64::INFINITY` for no clipping).
pub fn oracle_cirm(target: &ComplexSpectrogram, mixture: &ComplexSpectrogram, clip: f64) -> Result<Mask> {
    if target.bins.dim() != mixture.bins.dim() {
        return Err(shape_err("oracle mask inputs differ in shape"));
    }
    let dim = target.bins.dim();
    let (mut re, mut im) = (Array2::zeros(dim), Array2::zeros(dim));
    for ((f, n), y) in mixture.bins.indexed_iter() {
        if y.norm() == 0.0 {
            continue;
        }
        let mut q = target.bins[[f, n]] / y;
        let mag = q.norm();
        if mag > clip {
            q *= clip / mag;
        }
        re[[f, n]] = q.re;
        im[[f, n]] = q.im;
    }
    Ok(Mask::Cirm { re, im })
}

/// Fraction of reference-active bins (reference at most `active_thresh_db`
/// below its peak) where the enhanced magnitude falls below
/// `floor_ratio * reference`.
pub fn hole_fraction(
    enhanced_mag: &Array2<f64>,
    reference_mag: &Array2<f64>,
    floor_ratio: f64,
    active_thresh_db: f64,
) -> Result<f64> {
    if enhanced_mag.dim() != reference_mag.dim() {
        return Err(shape_err("hole_fraction inputs differ in shape"));
    }
    let peak = reference_mag.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::Data("no active bins in reference".into()));
    }
    let thresh = peak * 10f64.powf(active_thresh_db / 20.0);
    let mut active = 0usize;
    let mut holes = 0usize;
    for (e, r) in enhanced_mag.iter().zip(reference_mag) {
        if *r >= thresh {
            active += 1;
            if *e < floor_ratio * r {
                holes += 1;
            }
        }
    }
    Ok(holes as f64 / active as f64)
}
