//! Tape-based reverse-mode differentiation over 2-D `f64` tensors.
//!
//! Tensors are laid out with features on rows and time on columns. A scalar
//! is a 1x1 tensor.

use ndarray::{s, Array2, Axis, Zip};

use crate::dsp::{self, FrameSpec};
use crate::error::{shape_err, Error, Result};
use crate::features::LfbLayer;
use crate::metrics;
use crate::nn::ctc;

pub type Tensor = Array2<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

type BackFn = Box<dyn Fn(&Tensor, &[&Tensor], &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    parents: Vec<usize>,
    backward: Option<BackFn>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    values: Vec<Tensor>,
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v` (zeros if it did not
    /// influence the loss).
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(self.shapes[v.0]))
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(shape_err(format!("{op}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn col_sum(g: &Tensor) -> Tensor {
    g.sum_axis(Axis(1)).insert_axis(Axis(1))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0][[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf. Gradients are tracked only when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.values.push(value);
        self.nodes.push(Node { parents: Vec::new(), backward: None, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, parents: &[Var], backward: BackFn) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.values.push(value);
        self.nodes.push(Node {
            parents: parents.iter().map(|p| p.0).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.values[loss.0].dim() != (1, 1) {
            return Err(shape_err("backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::from_elem((1, 1), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(back) = &node.backward else { continue };
            let Some(g) = grads[i].take() else { continue };
            let parents: Vec<&Tensor> = node.parents.iter().map(|&p| &self.values[p]).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| self.nodes[p].requires_grad).collect();
            let pg = back(&g, &parents, &needs);
            for ((&p, gp), need) in node.parents.iter().zip(pg).zip(&needs) {
                if !need {
                    continue;
                }
                if let Some(gp) = gp {
                    match &mut grads[p] {
                        Some(acc) => *acc += &gp,
                        slot => *slot = Some(gp),
                    }
                }
            }
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes: self.values.iter().map(|v| v.dim()).collect() })
    }

    // ---- linear algebra and elementwise ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if va.ncols() != vb.nrows() {
            return Err(shape_err(format!("matmul: {:?} x {:?}", va.dim(), vb.dim())));
        }
        let out = va.dot(vb);
        Ok(self.push(
            out,
            &[a, b],
            Box::new(|g, p, need| {
                vec![
                    need[0].then(|| g.dot(&p[1].t())),
                    need[1].then(|| p[0].t().dot(g)),
                ]
            }),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(&self.values[a.0], &self.values[b.0], "add")?;
        let out = &self.values[a.0] + &self.values[b.0];
        Ok(self.push(out, &[a, b], Box::new(|g, _, need| vec![need[0].then(|| g.clone()), need[1].then(|| g.clone())])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(&self.values[a.0], &self.values[b.0], "sub")?;
        let out = &self.values[a.0] - &self.values[b.0];
        Ok(self.push(out, &[a, b], Box::new(|g, _, need| vec![need[0].then(|| g.clone()), need[1].then(|| -g)])))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(&self.values[a.0], &self.values[b.0], "mul")?;
        let out = &self.values[a.0] * &self.values[b.0];
        Ok(self.push(
            out,
            &[a, b],
            Box::new(|g, p, need| vec![need[0].then(|| g * p[1]), need[1].then(|| g * p[0])]),
        ))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = &self.values[a.0] * k;
        self.push(out, &[a], Box::new(move |g, _, _| vec![Some(g * k)]))
    }

    /// Adds a column vector `b` (rows x 1) to every column of `x`.
    pub fn add_col_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (&self.values[x.0], &self.values[b.0]);
        if vb.dim() != (vx.nrows(), 1) {
            return Err(shape_err(format!("bias {:?} for input {:?}", vb.dim(), vx.dim())));
        }
        let out = vx + vb;
        Ok(self.push(out, &[x, b], Box::new(|g, _, need| vec![need[0].then(|| g.clone()), need[1].then(|| col_sum(g))])))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::from_elem((1, 1), self.values[x.0].sum());
        self.push(out, &[x], Box::new(|g, p, _| vec![Some(Tensor::from_elem(p[0].dim(), g[[0, 0]]))]))
    }

    // ---- activations and normalization ----

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.values[x.0].mapv(|v| v.max(0.0));
        self.push(
            out,
            &[x],
            Box::new(|g, p, _| {
                let mut gx = g.clone();
                Zip::from(&mut gx).and(p[0]).for_each(|a, &v| {
                    if v <= 0.0 {
                        *a = 0.0
                    }
                });
                vec![Some(gx)]
            }),
        )
    }

    /// Parametric ReLU with a single learned slope (`a` is 1x1).
    pub fn prelu(&mut self, x: Var, a: Var) -> Result<Var> {
        if self.values[a.0].dim() != (1, 1) {
            return Err(shape_err("prelu slope must be 1x1"));
        }
        let slope = self.values[a.0][[0, 0]];
        let out = self.values[x.0].mapv(|v| if v > 0.0 { v } else { slope * v });
        Ok(self.push(
            out,
            &[x, a],
            Box::new(|g, p, need| {
                let slope = p[1][[0, 0]];
                let gx = need[0].then(|| {
                    let mut gx = g.clone();
                    Zip::from(&mut gx).and(p[0]).for_each(|a, &v| {
                        if v <= 0.0 {
                            *a *= slope
                        }
                    });
                    gx
                });
                let ga = need[1].then(|| {
                    let mut s = 0.0;
                    Zip::from(g).and(p[0]).for_each(|&gv, &v| {
                        if v <= 0.0 {
                            s += gv * v
                        }
                    });
                    Tensor::from_elem((1, 1), s)
                });
                vec![gx, ga]
            }),
        ))
    }

    /// Global layer normalization: statistics over the whole tensor, per-row
    /// gain and bias.
    pub fn gln(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        const EPS: f64 = 1e-8;
        let vx = &self.values[x.0];
        let rows = vx.nrows();
        for v in [gamma, beta] {
            if self.values[v.0].dim() != (rows, 1) {
                return Err(shape_err("gln gain/bias must be rows x 1"));
            }
        }
        let n = vx.len() as f64;
        let mean = vx.sum() / n;
        let var = vx.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + EPS).sqrt();
        let xhat = vx.mapv(|v| (v - mean) * inv);
        let out = &xhat * &self.values[gamma.0] + &self.values[beta.0];
        Ok(self.push(
            out,
            &[x, gamma, beta],
            Box::new(move |g, p, need| {
                let gx = need[0].then(|| {
                    let gxh = g * p[1];
                    let n = gxh.len() as f64;
                    let m1 = gxh.sum() / n;
                    let m2 = (&gxh * &xhat).sum() / n;
                    let mut gx = gxh;
                    Zip::from(&mut gx).and(&xhat).for_each(|a, &h| *a = inv * (*a - m1 - h * m2));
                    gx
                });
                let gg = need[1].then(|| col_sum(&(g * &xhat)));
                let gb = need[2].then(|| col_sum(g));
                vec![gx, gg, gb]
            }),
        ))
    }

    /// Column-wise log-softmax (each column is a distribution over rows).
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut out = self.values[x.0].clone();
        for mut col in out.columns_mut() {
            let m = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + col.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            col.mapv_inplace(|v| v - lse);
        }
        let y = out.clone();
        self.push(
            out,
            &[x],
            Box::new(move |g, _, _| {
                let mut gx = g.clone();
                for (mut gc, yc) in gx.columns_mut().into_iter().zip(y.columns()) {
                    let s: f64 = gc.sum();
                    Zip::from(&mut gc).and(&yc).for_each(|a, &l| *a -= l.exp() * s);
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Subtracts each row's mean over time.
    pub fn cmn(&mut self, x: Var) -> Var {
        let vx = &self.values[x.0];
        let mean = vx.mean_axis(Axis(1)).unwrap().insert_axis(Axis(1));
        let out = vx - &mean;
        self.push(
            out,
            &[x],
            Box::new(|g, _, _| {
                let m = g.mean_axis(Axis(1)).unwrap().insert_axis(Axis(1));
                vec![Some(g - &m)]
            }),
        )
    }

    // ---- shape ----

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let vx = &self.values[x.0];
        if start > end || end > vx.nrows() {
            return Err(shape_err(format!("row slice {start}..{end} of {}", vx.nrows())));
        }
        let out = vx.slice(s![start..end, ..]).to_owned();
        let dim = vx.dim();
        Ok(self.push(
            out,
            &[x],
            Box::new(move |g, _, _| {
                let mut gx = Tensor::zeros(dim);
                gx.slice_mut(s![start..end, ..]).assign(g);
                vec![Some(gx)]
            }),
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat of nothing"));
        }
        let views: Vec<_> = parts.iter().map(|p| self.values[p.0].view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).map_err(|e| shape_err(format!("concat: {e}")))?;
        let rows: Vec<usize> = views.iter().map(|v| v.nrows()).collect();
        Ok(self.push(
            out,
            parts,
            Box::new(move |g, _, need| {
                let mut at = 0;
                rows.iter()
                    .zip(need)
                    .map(|(&r, &n)| {
                        let part = n.then(|| g.slice(s![at..at + r, ..]).to_owned());
                        at += r;
                        part
                    })
                    .collect()
            }),
        ))
    }

    // ---- convolutions ----

    /// Depthwise convolution along time with "same" zero padding. `w` holds
    /// one kernel per row (channels x taps); no bias.
    pub fn depthwise_conv(&mut self, x: Var, w: Var, dilation: usize) -> Result<Var> {
        let (vx, vw) = (&self.values[x.0], &self.values[w.0]);
        if vw.nrows() != vx.nrows() || vw.ncols() % 2 == 0 {
            return Err(shape_err(format!("depthwise kernel {:?} for input {:?}", vw.dim(), vx.dim())));
        }
        let taps = vw.ncols();
        let half = (taps / 2) as isize;
        let d = dilation as isize;
        let t_len = vx.ncols() as isize;
        let offsets: Vec<isize> = (0..taps as isize).map(|k| (k - half) * d).collect();
        let mut out = Tensor::zeros(vx.dim());
        for c in 0..vx.nrows() {
            let xr = vx.row(c);
            let mut yr = out.row_mut(c);
            for (k, &off) in offsets.iter().enumerate() {
                let wk = vw[[c, k]];
                let lo = (-off).max(0);
                let hi = (t_len - off).min(t_len);
                for t in lo..hi {
                    yr[t as usize] += wk * xr[(t + off) as usize];
                }
            }
        }
        Ok(self.push(
            out,
            &[x, w],
            Box::new(move |g, p, need| {
                let (vx, vw) = (p[0], p[1]);
                let mut gx = need[0].then(|| Tensor::zeros(vx.dim()));
                let mut gw = need[1].then(|| Tensor::zeros(vw.dim()));
                for c in 0..vx.nrows() {
                    let gr = g.row(c);
                    for (k, &off) in offsets.iter().enumerate() {
                        let lo = (-off).max(0);
                        let hi = (t_len - off).min(t_len);
                        if let Some(gx) = gx.as_mut() {
                            let wk = vw[[c, k]];
                            for t in lo..hi {
                                gx[[c, (t + off) as usize]] += wk * gr[t as usize];
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            let xr = vx.row(c);
                            let mut acc = 0.0;
                            for t in lo..hi {
                                acc += gr[t as usize] * xr[(t + off) as usize];
                            }
                            gw[[c, k]] += acc;
                        }
                    }
                }
                vec![gx, gw]
            }),
        ))
    }

    /// 3x3 convolution over a stack of feature maps with padding 1.
    ///
    /// `x` stacks `in_maps` maps of `height` rows each (row = map*height + h)
    /// with time on columns. `w` is `out_maps x (in_maps*9)`, `b` is
    /// `out_maps x 1`. The output stacks `out_maps` maps of
    /// `(height-1)/stride.0 + 1` rows.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: Conv2dGeom) -> Result<Var> {
        let (vx, vw, vb) = (&self.values[x.0], &self.values[w.0], &self.values[b.0]);
        if vx.nrows() != geom.in_maps * geom.height {
            return Err(shape_err(format!(
                "conv2d input has {} rows, expected {}x{}",
                vx.nrows(),
                geom.in_maps,
                geom.height
            )));
        }
        let out_maps = vw.nrows();
        if vw.ncols() != geom.in_maps * 9 || vb.dim() != (out_maps, 1) {
            return Err(shape_err("conv2d kernel or bias shape"));
        }
        let t_in = vx.ncols();
        let (h_out, t_out) = geom.output_dims(t_in);
        let col = im2col(vx, &geom, t_in);
        let mut flat = vw.dot(&col);
        flat += vb;
        let out = flat
            .into_shape_with_order((out_maps * h_out, t_out))
            .map_err(|e| shape_err(e.to_string()))?;
        Ok(self.push(
            out,
            &[x, w, b],
            Box::new(move |g, p, need| {
                let gflat = g
                    .view()
                    .into_shape_with_order((out_maps, h_out * t_out))
                    .expect("conv2d gradient layout");
                let gw = need[1].then(|| gflat.dot(&col.t()));
                let gb = need[2].then(|| gflat.sum_axis(Axis(1)).insert_axis(Axis(1)));
                let gx = need[0].then(|| {
                    let gcol = p[1].t().dot(&gflat);
                    col2im(&gcol, &geom, t_in)
                });
                vec![gx, gw, gb]
            }),
        ))
    }

    // ---- recurrence ----

    /// LSTM recurrence over precomputed input projections.
    ///
    /// `xproj` is `4U x T` (input weights times input plus bias, gate order
    /// i, f, g, o); `wh` is `4U x U`. Zero initial state. Returns `U x T`.
    pub fn lstm(&mut self, xproj: Var, wh: Var) -> Result<Var> {
        let (vx, vw) = (&self.values[xproj.0], &self.values[wh.0]);
        let u = vw.ncols();
        if vw.nrows() != 4 * u || vx.nrows() != 4 * u {
            return Err(shape_err(format!("lstm shapes {:?} / {:?}", vx.dim(), vw.dim())));
        }
        let t_len = vx.ncols();
        let mut gates = Tensor::zeros((4 * u, t_len));
        let mut cells = Tensor::zeros((u, t_len));
        let mut hs = Tensor::zeros((u, t_len));
        let mut h = ndarray::Array1::<f64>::zeros(u);
        let mut c = ndarray::Array1::<f64>::zeros(u);
        for t in 0..t_len {
            let mut a = vx.column(t).to_owned();
            a += &vw.dot(&h);
            for j in 0..u {
                let i_g = sigmoid(a[j]);
                let f_g = sigmoid(a[u + j]);
                let g_g = a[2 * u + j].tanh();
                let o_g = sigmoid(a[3 * u + j]);
                c[j] = f_g * c[j] + i_g * g_g;
                h[j] = o_g * c[j].tanh();
                gates[[j, t]] = i_g;
                gates[[u + j, t]] = f_g;
                gates[[2 * u + j, t]] = g_g;
                gates[[3 * u + j, t]] = o_g;
            }
            cells.column_mut(t).assign(&c);
            hs.column_mut(t).assign(&h);
        }
        let out = hs.clone();
        Ok(self.push(
            out,
            &[xproj, wh],
            Box::new(move |g, p, need| {
                let vw = p[1];
                let mut da = Tensor::zeros((4 * u, t_len));
                let mut dh_next = ndarray::Array1::<f64>::zeros(u);
                let mut dc_next = ndarray::Array1::<f64>::zeros(u);
                for t in (0..t_len).rev() {
                    for j in 0..u {
                        let (i_g, f_g, g_g, o_g) =
                            (gates[[j, t]], gates[[u + j, t]], gates[[2 * u + j, t]], gates[[3 * u + j, t]]);
                        let ct = cells[[j, t]];
                        let tc = ct.tanh();
                        let c_prev = if t > 0 { cells[[j, t - 1]] } else { 0.0 };
                        let dh = g[[j, t]] + dh_next[j];
                        let d_o = dh * tc;
                        let dc = dh * o_g * (1.0 - tc * tc) + dc_next[j];
                        da[[j, t]] = dc * g_g * i_g * (1.0 - i_g);
                        da[[u + j, t]] = dc * c_prev * f_g * (1.0 - f_g);
                        da[[2 * u + j, t]] = dc * i_g * (1.0 - g_g * g_g);
                        da[[3 * u + j, t]] = d_o * o_g * (1.0 - o_g);
                        dc_next[j] = dc * f_g;
                    }
                    dh_next = vw.t().dot(&da.column(t));
                }
                let gw = need[1].then(|| {
                    // h_{t-1} for each column, zero at t = 0.
                    let mut prev = Tensor::zeros((u, t_len));
                    if t_len > 1 {
                        prev.slice_mut(s![.., 1..]).assign(&hs.slice(s![.., ..t_len - 1]));
                    }
                    da.dot(&prev.t())
                });
                vec![need[0].then_some(da), gw]
            }),
        ))
    }

    // ---- signal-domain ops ----

    /// Inverse STFT of a real/imaginary pair, truncated to `num_samples`.
    /// Output is `1 x num_samples`.
    pub fn istft(&mut self, re: Var, im: Var, spec: FrameSpec, num_samples: usize) -> Result<Var> {
        let (vr, vi) = (&self.values[re.0], &self.values[im.0]);
        same_shape(vr, vi, "istft")?;
        if vr.nrows() != spec.num_bins() {
            return Err(shape_err(format!("istft expects {} bins, got {}", spec.num_bins(), vr.nrows())));
        }
        let frames = vr.ncols();
        if num_samples > spec.span(frames) {
            return Err(shape_err(format!(
                "{num_samples} samples requested from {frames} frames"
            )));
        }
        let mut wave = dsp::overlap_add(vr, vi, &spec);
        wave.truncate(num_samples);
        let out = Tensor::from_shape_vec((1, num_samples), wave).expect("row vector");
        let bins = vr.nrows();
        Ok(self.push(
            out,
            &[re, im],
            Box::new(move |g, _, need| {
                let flat: Vec<f64> = g.iter().copied().collect();
                let (gre, gim) = dsp::overlap_add_adjoint(&flat, bins, frames, &spec);
                vec![need[0].then_some(gre), need[1].then_some(gim)]
            }),
        ))
    }

    /// Log mel filterbank of a `1 x L` waveform.
    pub fn lfb(&mut self, wave: Var, layer: &LfbLayer) -> Result<Var> {
        let vw = &self.values[wave.0];
        if vw.nrows() != 1 {
            return Err(shape_err("lfb expects a 1 x L waveform"));
        }
        let samples: Vec<f64> = vw.iter().copied().collect();
        let (out, cache) = layer.forward(&samples)?;
        let layer = layer.clone();
        Ok(self.push(
            out,
            &[wave],
            Box::new(move |g, _, _| {
                let gw = layer.backward(&cache, g);
                vec![Some(Tensor::from_shape_vec((1, gw.len()), gw).expect("row vector"))]
            }),
        ))
    }

    // ---- losses ----

    /// Negative SI-SNR of a `1 x L` estimate against a fixed reference.
    pub fn neg_si_snr(&mut self, estimate: Var, reference: &[f64]) -> Result<Var> {
        let ve = &self.values[estimate.0];
        if ve.nrows() != 1 {
            return Err(shape_err("si_snr expects a 1 x L estimate"));
        }
        let samples: Vec<f64> = ve.iter().copied().collect();
        let (v, grad) = metrics::si_snr_grad(&samples, reference)?;
        let grad = Tensor::from_shape_vec((1, grad.len()), grad).expect("row vector");
        Ok(self.push(
            Tensor::from_elem((1, 1), -v),
            &[estimate],
            Box::new(move |g, _, _| vec![Some(&grad * (-g[[0, 0]]))]),
        ))
    }

    /// Mean squared difference over all entries.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(&self.values[a.0], &self.values[b.0], "mse")?;
        let diff = &self.values[a.0] - &self.values[b.0];
        let n = diff.len() as f64;
        let v = diff.iter().map(|d| d * d).sum::<f64>() / n;
        Ok(self.push(
            Tensor::from_elem((1, 1), v),
            &[a, b],
            Box::new(move |g, _, need| {
                let k = 2.0 * g[[0, 0]] / n;
                vec![need[0].then(|| &diff * k), need[1].then(|| &diff * -k)]
            }),
        ))
    }

    /// CTC negative log-likelihood of `labels` under column-wise
    /// log-probabilities (blank is row 0).
    pub fn ctc_loss(&mut self, log_probs: Var, labels: &[usize]) -> Result<Var> {
        let (nll, grad) = ctc::ctc_loss_grad(&self.values[log_probs.0], labels)?;
        if !nll.is_finite() {
            return Err(Error::Numerical("non-finite CTC loss".into()));
        }
        Ok(self.push(
            Tensor::from_elem((1, 1), nll),
            &[log_probs],
            Box::new(move |g, _, _| vec![Some(&grad * g[[0, 0]])]),
        ))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Geometry of a [`Graph::conv2d`] call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub in_maps: usize,
    pub height: usize,
    /// Stride along (rows, time).
    pub stride: (usize, usize),
}

impl Conv2dGeom {
    pub fn output_dims(&self, t_in: usize) -> (usize, usize) {
        ((self.height - 1) / self.stride.0 + 1, (t_in.max(1) - 1) / self.stride.1 + 1)
    }
}

fn im2col(x: &Tensor, geom: &Conv2dGeom, t_in: usize) -> Tensor {
    let (h_out, t_out) = geom.output_dims(t_in);
    let mut col = Tensor::zeros((geom.in_maps * 9, h_out * t_out));
    for ci in 0..geom.in_maps {
        for kh in 0..3 {
            for kw in 0..3 {
                let r = ci * 9 + kh * 3 + kw;
                let mut row = col.row_mut(r);
                for ho in 0..h_out {
                    let hi = (ho * geom.stride.0 + kh) as isize - 1;
                    if hi < 0 || hi >= geom.height as isize {
                        continue;
                    }
                    let src = x.row(ci * geom.height + hi as usize);
                    for to in 0..t_out {
                        let ti = (to * geom.stride.1 + kw) as isize - 1;
                        if ti >= 0 && (ti as usize) < t_in {
                            row[ho * t_out + to] = src[ti as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(gcol: &Tensor, geom: &Conv2dGeom, t_in: usize) -> Tensor {
    let (h_out, t_out) = geom.output_dims(t_in);
    let mut gx = Tensor::zeros((geom.in_maps * geom.height, t_in));
    for ci in 0..geom.in_maps {
        for kh in 0..3 {
            for kw in 0..3 {
                let row = gcol.row(ci * 9 + kh * 3 + kw);
                for ho in 0..h_out {
                    let hi = (ho * geom.stride.0 + kh) as isize - 1;
                    if hi < 0 || hi >= geom.height as isize {
                        continue;
                    }
                    let mut dst = gx.row_mut(ci * geom.height + hi as usize);
                    for to in 0..t_out {
                        let ti = (to * geom.stride.1 + kw) as isize - 1;
                        if ti >= 0 && (ti as usize) < t_in {
                            dst[ti as usize] += row[ho * t_out + to];
                        }
                    }
                }
            }
        }
    }
    gx
}
