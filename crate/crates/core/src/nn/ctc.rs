//! Connectionist temporal classification: loss, gradient and greedy decoding.
//! Row 0 of a log-probability matrix is the blank symbol.

use ndarray::Array2;

use crate::error::{shape_err, Error, Result};

pub const BLANK: usize = 0;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Minimum number of frames that can emit `labels`.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check(log_probs: &Array2<f64>, labels: &[usize]) -> Result<()> {
    let (k, t) = log_probs.dim();
    if k < 2 || t == 0 {
        return Err(shape_err(format!("ctc log-probabilities {k}x{t}")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l == BLANK || l >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} outside 1..{k}")));
    }
    if min_frames(labels) > t {
        return Err(Error::InvalidArgument(format!(
            "label too long for frame count: {} labels need {} frames, have {t}",
            labels.len(),
            min_frames(labels)
        )));
    }
    Ok(())
}

/// Negative log-likelihood of `labels`.
pub fn ctc_loss(log_probs: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    check(log_probs, labels)?;
    let ext = extend(labels);
    let alpha = forward(log_probs, &ext);
    Ok(-total(&alpha, ext.len()))
}

/// Negative log-likelihood and its gradient with respect to the
/// log-probabilities (minus the posterior state occupancy).
pub fn ctc_loss_grad(log_probs: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    check(log_probs, labels)?;
    let (k, t_len) = log_probs.dim();
    let ext = extend(labels);
    let s_len = ext.len();
    let alpha = forward(log_probs, &ext);
    let log_z = total(&alpha, s_len);
    // beta[s][t]: log-probability of finishing from state s at frame t,
    // excluding the emission at t.
    let mut beta = Array2::from_elem((s_len, t_len), f64::NEG_INFINITY);
    beta[[s_len - 1, t_len - 1]] = 0.0;
    if s_len > 1 {
        beta[[s_len - 2, t_len - 1]] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[[s, t + 1]] + log_probs[[ext[s], t + 1]];
            if s + 1 < s_len {
                acc = log_add(acc, beta[[s + 1, t + 1]] + log_probs[[ext[s + 1], t + 1]]);
            }
            if s + 2 < s_len && ext[s + 2] != BLANK && ext[s + 2] != ext[s] {
                acc = log_add(acc, beta[[s + 2, t + 1]] + log_probs[[ext[s + 2], t + 1]]);
            }
            beta[[s, t]] = acc;
        }
    }
    let mut grad = Array2::zeros((k, t_len));
    for t in 0..t_len {
        for s in 0..s_len {
            let v = alpha[[s, t]] + beta[[s, t]];
            if v > f64::NEG_INFINITY {
                grad[[ext[s], t]] -= (v - log_z).exp();
            }
        }
    }
    Ok((-log_z, grad))
}

fn extend(labels: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(BLANK);
    for &l in labels {
        ext.push(l);
        ext.push(BLANK);
    }
    ext
}

fn forward(log_probs: &Array2<f64>, ext: &[usize]) -> Array2<f64> {
    let t_len = log_probs.ncols();
    let s_len = ext.len();
    let mut alpha = Array2::from_elem((s_len, t_len), f64::NEG_INFINITY);
    alpha[[0, 0]] = log_probs[[ext[0], 0]];
    if s_len > 1 {
        alpha[[1, 0]] = log_probs[[ext[1], 0]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha[[s, t - 1]];
            if s >= 1 {
                acc = log_add(acc, alpha[[s - 1, t - 1]]);
            }
            if s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2] {
                acc = log_add(acc, alpha[[s - 2, t - 1]]);
            }
            alpha[[s, t]] = acc + log_probs[[ext[s], t]];
        }
    }
    alpha
}

fn total(alpha: &Array2<f64>, s_len: usize) -> f64 {
    let t = alpha.ncols() - 1;
    let last = alpha[[s_len - 1, t]];
    if s_len > 1 {
        log_add(last, alpha[[s_len - 2, t]])
    } else {
        last
    }
}

/// Per-frame argmax, repeats collapsed, blanks removed.
pub fn greedy_decode(log_probs: &Array2<f64>) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for col in log_probs.columns() {
        let best = col
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
            .0;
        if Some(best) != prev && best != BLANK {
            out.push(best);
        }
        prev = Some(best);
    }
    out
}
