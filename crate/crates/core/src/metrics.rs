//! Training objectives and evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::features::LfbLayer;

/// Guard added to the residual energy of SI-SNR.
pub const SI_SNR_EPS: f64 = 1e-8;
/// Value reported by [`sdr`] for a perfect estimate.
pub const SDR_CAP_DB: f64 = 100.0;

const DB: f64 = 10.0 / std::f64::consts::LN_10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Sisnr,
    SisnrPlusLfb,
    CtcJoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub mode: LossMode,
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { mode: LossMode::Sisnr, alpha: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

fn zero_mean(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// SI-SNR in dB.
pub fn si_snr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    si_snr_impl(estimate, reference, false).map(|(v, _)| v)
}

/// SI-SNR in dB together with its gradient with respect to `estimate`.
pub fn si_snr_grad(estimate: &[f64], reference: &[f64]) -> Result<(f64, Vec<f64>)> {
    si_snr_impl(estimate, reference, true)
}

fn si_snr_impl(estimate: &[f64], reference: &[f64], want_grad: bool) -> Result<(f64, Vec<f64>)> {
    if estimate.len() != reference.len() {
        return Err(shape_err(format!(
            "si_snr lengths differ: {} vs {}",
            estimate.len(),
            reference.len()
        )));
    }
    if estimate.is_empty() {
        return Err(Error::InvalidArgument("si_snr of empty signals".into()));
    }
    let s = zero_mean(reference);
    let e_hat = zero_mean(estimate);
    let ss = dot(&s, &s);
    if ss == 0.0 {
        return Err(Error::InvalidArgument("zero reference in si_snr".into()));
    }
    let alpha = dot(&e_hat, &s) / ss;
    let target: Vec<f64> = s.iter().map(|v| alpha * v).collect();
    let resid: Vec<f64> = e_hat.iter().zip(&target).map(|(a, b)| a - b).collect();
    let p = dot(&target, &target);
    let en = dot(&resid, &resid) + SI_SNR_EPS;
    if p == 0.0 {
        return Err(Error::Numerical("estimate has no component along the reference".into()));
    }
    let value = DB * (p.ln() - en.ln());
    if !want_grad {
        return Ok((value, Vec::new()));
    }
    // target and resid are zero-mean, so the mean-removal Jacobian is a no-op.
    let grad = target
        .iter()
        .zip(&resid)
        .map(|(t, r)| 2.0 * DB * (t / p - r / en))
        .collect();
    Ok((value, grad))
}

/// `-SI-SNR + alpha * MSE(LFB(estimate), LFB(reference))` and its gradient.
pub fn multitask_loss(estimate: &[f64], reference: &[f64], alpha: f64) -> Result<(f64, Vec<f64>)> {
    multitask_loss_with(&LfbLayer::default(), estimate, reference, alpha)
}

pub fn multitask_loss_with(
    lfb: &LfbLayer,
    estimate: &[f64],
    reference: &[f64],
    alpha: f64,
) -> Result<(f64, Vec<f64>)> {
    LossConfig { mode: LossMode::SisnrPlusLfb, alpha }.validate()?;
    let (v, g) = si_snr_grad(estimate, reference)?;
    let mut loss = -v;
    let mut grad: Vec<f64> = g.iter().map(|x| -x).collect();
    if alpha == 0.0 {
        return Ok((loss, grad));
    }
    let (fe, cache) = lfb.forward(estimate)?;
    let fr = lfb.apply(reference)?;
    let n = fe.len() as f64;
    let diff = &fe - &fr;
    loss += alpha * diff.iter().map(|d| d * d).sum::<f64>() / n;
    let gf = diff.mapv(|d| 2.0 * alpha * d / n);
    for (a, b) in grad.iter_mut().zip(lfb.backward(&cache, &gf)) {
        *a += b;
    }
    Ok((loss, grad))
}

/// Plain signal-to-distortion ratio, capped at [`SDR_CAP_DB`].
pub fn sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(shape_err("sdr lengths differ"));
    }
    let num = dot(reference, reference);
    let den: f64 = estimate.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    if den == 0.0 {
        return Ok(SDR_CAP_DB);
    }
    if num == 0.0 {
        return Err(Error::InvalidArgument("zero reference in sdr".into()));
    }
    Ok((10.0 * (num / den).log10()).min(SDR_CAP_DB))
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Symbol error rate: edit distance over reference length.
pub fn cer<T: PartialEq>(hypothesis: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::InvalidArgument("empty reference in cer".into()));
    }
    Ok(edit_distance(hypothesis, reference) as f64 / reference.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn hand_example() {
        // Mean removal maps [1.1, -0.9] onto [1, -1], so only the guard
        // term is left in the denominator.
        let v = si_snr(&[1.1, -0.9], &[1.0, -1.0]).unwrap();
        let expect = 10.0 * (2.0f64 / SI_SNR_EPS).log10();
        assert!((v - expect).abs() < 1e-9, "{v}");
        // A zero-mean case with a nonzero residual: projection 0.95 s,
        // residual [0.15, 0.15, 0.1, -0.4].
        let v = si_snr(&[1.1, -0.8, 0.1, -0.4], &[1.0, -1.0, 0.0, 0.0]).unwrap();
        let expect = 10.0 * (1.805f64 / (0.215 + SI_SNR_EPS)).log10();
        assert!((v - expect).abs() < 1e-9);
    }

    #[test]
    fn scaled_copy_hits_ceiling() {
        let s = random(1600, 1);
        let e: Vec<f64> = s.iter().map(|v| 2.5 * v).collect();
        assert!(si_snr(&e, &s).unwrap() >= 60.0);
    }

    #[test]
    fn scale_invariance() {
        let s = random(800, 2);
        let n = random(800, 3);
        let e: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + 0.3 * b).collect();
        let base = si_snr(&e, &s).unwrap();
        for k in [0.1, 1.0, 10.0] {
            let scaled: Vec<f64> = e.iter().map(|v| k * v).collect();
            assert!((si_snr(&scaled, &s).unwrap() - base).abs() < 1e-6);
        }
    }

    #[test]
    fn errors() {
        assert!(si_snr(&[1.0, 2.0], &[1.0]).is_err());
        assert!(si_snr(&[1.0, 2.0], &[3.0, 3.0]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = random(64, 4);
        let n = random(64, 5);
        let e: Vec<f64> = s.iter().zip(&n).map(|(a, b)| 0.7 * a + 0.4 * b).collect();
        let (_, g) = si_snr_grad(&e, &s).unwrap();
        let h = 1e-6;
        for i in 0..e.len() {
            let mut p = e.clone();
            p[i] += h;
            let mut m = e.clone();
            m[i] -= h;
            let fd = (si_snr(&p, &s).unwrap() - si_snr(&m, &s).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(1e-2), "{i}: {fd} vs {}", g[i]);
        }
        // Rescaling the estimate leaves the value unchanged.
        let along: f64 = zero_mean(&e).iter().zip(&g).map(|(x, y)| x * y).sum();
        assert!(along.abs() < 1e-6, "{along}");
    }

    #[test]
    fn multitask_cases() {
        let s = random(1600, 6);
        let (l, _) = multitask_loss(&s, &s, 1.0).unwrap();
        assert_eq!(l, -si_snr(&s, &s).unwrap());
        let e: Vec<f64> = s.iter().zip(random(1600, 7)).map(|(a, b)| a + 0.2 * b).collect();
        let (l0, g0) = multitask_loss(&e, &s, 0.0).unwrap();
        let (v, g) = si_snr_grad(&e, &s).unwrap();
        assert_eq!(l0, -v);
        assert!(g0.iter().zip(&g).all(|(a, b)| *a == -b));
        let (l1, _) = multitask_loss(&e, &s, 1.0).unwrap();
        assert!(l1 >= -v);
        assert!(multitask_loss(&e, &s, -1.0).is_err());
    }

    #[test]
    fn multitask_gradient() {
        let s = random(1600, 8);
        let e: Vec<f64> = s.iter().zip(random(1600, 9)).map(|(a, b)| a + 0.5 * b).collect();
        let (_, g) = multitask_loss(&e, &s, 1.0).unwrap();
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..30 {
            let i = rng.gen_range(0..e.len());
            let mut p = e.clone();
            p[i] += h;
            let mut m = e.clone();
            m[i] -= h;
            let fd = (multitask_loss(&p, &s, 1.0).unwrap().0 - multitask_loss(&m, &s, 1.0).unwrap().0) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * fd.abs() + 1e-6, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn sdr_cases() {
        let s = random(16000, 11);
        assert_eq!(sdr(&s, &s).unwrap(), SDR_CAP_DB);
        assert!(sdr(&vec![0.0; s.len()], &s).unwrap().abs() < 1e-12);
        let twice: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        assert!(sdr(&twice, &s).unwrap().abs() < 1e-12);
        // Noise scaled to exactly -10 dB of the reference energy.
        let n = random(16000, 12);
        let k = (0.1 * dot(&s, &s) / dot(&n, &n)).sqrt();
        let noisy: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + k * b).collect();
        assert!((sdr(&noisy, &s).unwrap() - 10.0).abs() < 0.1);
    }

    #[test]
    fn cer_cases() {
        assert_eq!(cer(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
        assert_eq!(cer::<u8>(&[], &[1, 2, 3]).unwrap(), 1.0);
        assert!((cer(&['a', 'x', 'c', 'd'], &['a', 'b', 'c']).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(cer::<u8>(&[1], &[]).is_err());
        assert_eq!(edit_distance(&[1, 2], &[2, 1]), 2);
        assert_eq!(edit_distance::<u8>(&[], &[]), 0);
    }
}
