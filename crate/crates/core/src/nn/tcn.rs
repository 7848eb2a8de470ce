//! Dilated temporal convolutional mask estimator.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::ComplexSpectrogram;
use crate::error::{shape_err, Error, Result};
use crate::features::FeaturePack;
use crate::mask::{Mask, MaskKind};
use crate::nn::graph::{Graph, Var};
use crate::nn::hparams::{get_parsed, Hparams};
use crate::nn::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TcnConfig {
    pub input_rows: usize,
    pub bins: usize,
    pub bottleneck: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub repeats: usize,
    pub mask_kind: MaskKind,
}

impl TcnConfig {
    pub fn new(mask_kind: MaskKind) -> Self {
        TcnConfig { input_rows: 2056, bins: 257, bottleneck: 64, hidden: 128, blocks: 4, repeats: 2, mask_kind }
    }

    pub fn output_rows(&self) -> usize {
        match self.mask_kind {
            MaskKind::Irm => self.bins,
            MaskKind::Cirm => 2 * self.bins,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.input_rows, self.bins, self.bottleneck, self.hidden, self.blocks, self.repeats].contains(&0) {
            return Err(Error::InvalidArgument(format!("degenerate TCN config {self:?}")));
        }
        Ok(())
    }

    pub fn to_hparams(&self) -> Hparams {
        let mut h = BTreeMap::new();
        h.insert("tcn.input_rows".into(), self.input_rows.to_string());
        h.insert("tcn.bins".into(), self.bins.to_string());
        h.insert("tcn.bottleneck".into(), self.bottleneck.to_string());
        h.insert("tcn.hidden".into(), self.hidden.to_string());
        h.insert("tcn.blocks".into(), self.blocks.to_string());
        h.insert("tcn.repeats".into(), self.repeats.to_string());
        h.insert("tcn.mask_kind".into(), self.mask_kind.to_string());
        h
    }

    pub fn from_hparams(h: &Hparams) -> Result<Self> {
        let mask_kind = match h.get("tcn.mask_kind").map(String::as_str) {
            Some("irm") => MaskKind::Irm,
            Some("cirm") => MaskKind::Cirm,
            other => return Err(Error::Data(format!("bad tcn.mask_kind {other:?}"))),
        };
        let c = TcnConfig {
            input_rows: get_parsed(h, "tcn.input_rows")?,
            bins: get_parsed(h, "tcn.bins")?,
            bottleneck: get_parsed(h, "tcn.bottleneck")?,
            hidden: get_parsed(h, "tcn.hidden")?,
            blocks: get_parsed(h, "tcn.blocks")?,
            repeats: get_parsed(h, "tcn.repeats")?,
            mask_kind,
        };
        c.validate()?;
        Ok(c)
    }
}

struct Block {
    w1: usize,
    b1: usize,
    a1: usize,
    g1: usize,
    be1: usize,
    dw: usize,
    db: usize,
    a2: usize,
    g2: usize,
    be2: usize,
    w2: usize,
    b2: usize,
    dilation: usize,
}

pub struct TcnMaskNet {
    pub config: TcnConfig,
    pub params: ParamSet,
    in_gamma: usize,
    in_beta: usize,
    in_w: usize,
    in_b: usize,
    blocks: Vec<Block>,
    head_w: usize,
    head_b: usize,
}

/// Output of [`TcnMaskNet::forward`]: the mask planes on the graph.
#[derive(Debug, Clone, Copy)]
pub struct MaskVars {
    pub kind: MaskKind,
    pub re: Var,
    /// Imaginary plane, complex masks only.
    pub im: Option<Var>,
}

const HEAD_INIT_SCALE: f64 = 0.1;

impl TcnMaskNet {
    /// Random initialisation; the head bias starts at the identity mask.
    pub fn new(config: TcnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (b, h) = (config.bottleneck, config.hidden);
        let mut p = ParamSet::new();
        let in_gamma = p.add("in.gamma", Array2::ones((config.input_rows, 1)));
        let in_beta = p.add("in.beta", Array2::zeros((config.input_rows, 1)));
        let in_w = p.add_scaled("in.w", b, config.input_rows, config.input_rows, &mut rng);
        let in_b = p.add("in.b", Array2::zeros((b, 1)));
        let mut blocks = Vec::new();
        for r in 0..config.repeats {
            for x in 0..config.blocks {
                let n = |s: &str| format!("r{r}.x{x}.{s}");
                blocks.push(Block {
                    w1: p.add_scaled(&n("w1"), h, b, b, &mut rng),
                    b1: p.add(&n("b1"), Array2::zeros((h, 1))),
                    a1: p.add(&n("a1"), Array2::from_elem((1, 1), 0.25)),
                    g1: p.add(&n("g1"), Array2::ones((h, 1))),
                    be1: p.add(&n("be1"), Array2::zeros((h, 1))),
                    dw: p.add_scaled(&n("dw"), h, 3, 3, &mut rng),
                    db: p.add(&n("db"), Array2::zeros((h, 1))),
                    a2: p.add(&n("a2"), Array2::from_elem((1, 1), 0.25)),
                    g2: p.add(&n("g2"), Array2::ones((h, 1))),
                    be2: p.add(&n("be2"), Array2::zeros((h, 1))),
                    w2: p.add_scaled(&n("w2"), b, h, h, &mut rng),
                    b2: p.add(&n("b2"), Array2::zeros((b, 1))),
                    dilation: 1 << x,
                });
            }
        }
        let out = config.output_rows();
        let head_w = p.add_scaled("head.w", out, b, b, &mut rng);
        p.get_mut(head_w).mapv_inplace(|v| v * HEAD_INIT_SCALE);
        let mut bias = Array2::zeros((out, 1));
        bias.slice_mut(ndarray::s![..config.bins, ..]).fill(1.0);
        let head_b = p.add("head.b", bias);
        Ok(TcnMaskNet { config, params: p, in_gamma, in_beta, in_w, in_b, blocks, head_w, head_b })
    }

    /// Network whose mask is exactly the identity (zero head weights).
    pub fn identity(config: TcnConfig, seed: u64) -> Result<Self> {
        let mut net = Self::new(config, seed)?;
        net.params.get_mut(net.head_w).fill(0.0);
        Ok(net)
    }

    pub fn from_params(config: TcnConfig, params: &ParamSet) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        if params.len() != net.params.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} tensors, TCN expects {}",
                params.len(),
                net.params.len()
            )));
        }
        if net.params.load_from(params)? != net.params.len() {
            return Err(Error::Data("checkpoint tensor names do not match the TCN".into()));
        }
        Ok(net)
    }

    pub fn head_weight_slot(&self) -> usize {
        self.head_w
    }

    /// Builds the mask from a `input_rows x N` feature matrix.
    pub fn forward(&self, g: &mut Graph, p: &[Var], features: Var) -> Result<MaskVars> {
        let rows = g.value(features).nrows();
        if rows != self.config.input_rows {
            return Err(shape_err(format!(
                "feature rows {rows}, network expects {}",
                self.config.input_rows
            )));
        }
        let x = g.gln(features, p[self.in_gamma], p[self.in_beta])?;
        let x = g.matmul(p[self.in_w], x)?;
        let mut x = g.add_col_bias(x, p[self.in_b])?;
        for blk in &self.blocks {
            let y = g.matmul(p[blk.w1], x)?;
            let y = g.add_col_bias(y, p[blk.b1])?;
            let y = g.prelu(y, p[blk.a1])?;
            let y = g.gln(y, p[blk.g1], p[blk.be1])?;
            let y = g.depthwise_conv(y, p[blk.dw], blk.dilation)?;
            let y = g.add_col_bias(y, p[blk.db])?;
            let y = g.prelu(y, p[blk.a2])?;
            let y = g.gln(y, p[blk.g2], p[blk.be2])?;
            let y = g.matmul(p[blk.w2], y)?;
            let y = g.add_col_bias(y, p[blk.b2])?;
            x = g.add(x, y)?;
        }
        let out = g.matmul(p[self.head_w], x)?;
        let out = g.add_col_bias(out, p[self.head_b])?;
        let bins = self.config.bins;
        Ok(match self.config.mask_kind {
            MaskKind::Irm => MaskVars { kind: MaskKind::Irm, re: g.relu(out), im: None },
            MaskKind::Cirm => MaskVars {
                kind: MaskKind::Cirm,
                re: g.slice_rows(out, 0, bins)?,
                im: Some(g.slice_rows(out, bins, 2 * bins)?),
            },
        })
    }

    /// Inference without gradient tracking.
    pub fn predict(&self, features: &FeaturePack) -> Result<Mask> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let f = g.constant(features.concatenated.clone());
        let m = self.forward(&mut g, &p, f)?;
        Ok(match m.im {
            None => Mask::Irm(g.value(m.re).clone()),
            Some(im) => Mask::Cirm { re: g.value(m.re).clone(), im: g.value(im).clone() },
        })
    }
}

/// Applies mask planes to the reference-channel mixture on the graph and
/// returns the masked real and imaginary planes.
pub fn apply_mask(g: &mut Graph, mask: MaskVars, mix_re: Var, mix_im: Var) -> Result<(Var, Var)> {
    match mask.im {
        None => Ok((g.mul(mask.re, mix_re)?, g.mul(mask.re, mix_im)?)),
        Some(mi) => {
            let a = g.mul(mask.re, mix_re)?;
            let b = g.mul(mi, mix_im)?;
            let re = g.sub(a, b)?;
            let c = g.mul(mask.re, mix_im)?;
            let d = g.mul(mi, mix_re)?;
            let im = g.add(c, d)?;
            Ok((re, im))
        }
    }
}

/// Features -> mask -> masked spectrum -> waveform (`1 x num_samples`).
pub fn enhance_on_graph(
    net: &TcnMaskNet,
    g: &mut Graph,
    p: &[Var],
    features: Var,
    mixture: &ComplexSpectrogram,
    num_samples: usize,
) -> Result<Var> {
    let mask = net.forward(g, p, features)?;
    let yr = g.constant(mixture.re());
    let yi = g.constant(mixture.im());
    let (re, im) = apply_mask(g, mask, yr, yi)?;
    g.istft(re, im, mixture.frame_spec, num_samples)
}

/// Convenience: enhanced waveform for a feature pack and reference spectrum.
pub fn enhance(net: &TcnMaskNet, features: &FeaturePack, mixture: &ComplexSpectrogram, num_samples: usize) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let p = net.params.bind(&mut g, false);
    let f = g.constant(features.concatenated.clone());
    let w = enhance_on_graph(net, &mut g, &p, f, mixture, num_samples)?;
    Ok(g.value(w).iter().copied().collect())
}
