//! Central finite-difference checks for graph functions.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::graph::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Coordinates probed per input tensor; larger tensors are subsampled.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-6, rel_tol: 1e-4, abs_tol: 1e-6, max_coords: 24, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    pub max_rel_err: f64,
    /// (input, flat index, analytic, numeric) of the worst failing probe.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences, for every input tensor.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone(), false)).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.scalar(out))
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport { checked: 0, failures: 0, max_rel_err: 0.0, worst: None };
    let mut worst_rel = -1.0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v);
        let n = inputs[k].len();
        let coords: Vec<usize> = if n <= opts.max_coords {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        for idx in coords {
            let at = (idx / inputs[k].ncols(), idx % inputs[k].ncols());
            let orig = inputs[k][at];
            work[k][at] = orig + opts.step;
            let fp = eval(&work)?;
            work[k][at] = orig - opts.step;
            let fm = eval(&work)?;
            work[k][at] = orig;
            let numeric = (fp - fm) / (2.0 * opts.step);
            let a = analytic[at];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
            report.checked += 1;
            let ok = rel <= opts.rel_tol || abs < opts.abs_tol;
            if abs >= opts.abs_tol {
                report.max_rel_err = report.max_rel_err.max(rel);
            }
            if !ok {
                report.failures += 1;
                if rel > worst_rel {
                    worst_rel = rel;
                    report.worst = Some((k, idx, a, numeric));
                }
            }
        }
    }
    Ok(report)
}
