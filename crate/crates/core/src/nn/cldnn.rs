//! Small convolutional + recurrent acoustic model with a CTC output layer.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::LfbLayer;
use crate::nn::graph::{Conv2dGeom, Graph, Var};
use crate::nn::hparams::{get_parsed, Hparams};
use crate::nn::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CldnnConfig {
    pub num_filters: usize,
    pub conv_maps: usize,
    /// Stride of the second convolution along (frequency, time).
    pub conv_stride: (usize, usize),
    pub lstm_layers: usize,
    pub units: usize,
    /// Phoneme classes, not counting blank.
    pub num_phonemes: usize,
}

impl Default for CldnnConfig {
    fn default() -> Self {
        CldnnConfig { num_filters: 40, conv_maps: 32, conv_stride: (2, 2), lstm_layers: 2, units: 128, num_phonemes: 32 }
    }
}

impl CldnnConfig {
    pub fn validate(&self) -> Result<()> {
        let CldnnConfig { num_filters, conv_maps, conv_stride, lstm_layers, units, num_phonemes } = *self;
        if [num_filters, conv_maps, conv_stride.0, conv_stride.1, lstm_layers, units, num_phonemes].contains(&0) {
            return Err(Error::InvalidArgument(format!("degenerate acoustic model config {self:?}")));
        }
        Ok(())
    }

    fn conv2_geom(&self) -> Conv2dGeom {
        Conv2dGeom { in_maps: self.conv_maps, height: self.num_filters, stride: self.conv_stride }
    }

    /// Output frames for `lfb_frames` input frames.
    pub fn output_frames(&self, lfb_frames: usize) -> usize {
        self.conv2_geom().output_dims(lfb_frames).1
    }

    pub fn to_hparams(&self) -> Hparams {
        let mut h = BTreeMap::new();
        h.insert("am.num_filters".into(), self.num_filters.to_string());
        h.insert("am.conv_maps".into(), self.conv_maps.to_string());
        h.insert("am.conv_stride_f".into(), self.conv_stride.0.to_string());
        h.insert("am.conv_stride_t".into(), self.conv_stride.1.to_string());
        h.insert("am.lstm_layers".into(), self.lstm_layers.to_string());
        h.insert("am.units".into(), self.units.to_string());
        h.insert("am.num_phonemes".into(), self.num_phonemes.to_string());
        h
    }

    pub fn from_hparams(h: &Hparams) -> Result<Self> {
        let c = CldnnConfig {
            num_filters: get_parsed(h, "am.num_filters")?,
            conv_maps: get_parsed(h, "am.conv_maps")?,
            conv_stride: (get_parsed(h, "am.conv_stride_f")?, get_parsed(h, "am.conv_stride_t")?),
            lstm_layers: get_parsed(h, "am.lstm_layers")?,
            units: get_parsed(h, "am.units")?,
            num_phonemes: get_parsed(h, "am.num_phonemes")?,
        };
        c.validate()?;
        Ok(c)
    }
}

struct LstmLayer {
    wx: usize,
    wh: usize,
    b: usize,
}

pub struct CldnnLite {
    pub config: CldnnConfig,
    pub params: ParamSet,
    pub lfb: LfbLayer,
    c1w: usize,
    c1b: usize,
    c2w: usize,
    c2b: usize,
    lstm: Vec<LstmLayer>,
    l1w: usize,
    l1b: usize,
    l2w: usize,
    l2b: usize,
}

impl CldnnLite {
    pub fn new(config: CldnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let lfb = LfbLayer::new(config.num_filters, 400, 160, 512, 16_000)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let m = config.conv_maps;
        let u = config.units;
        let c1w = p.add_scaled("conv1.w", m, 9, 9, &mut rng);
        let c1b = p.add("conv1.b", Array2::zeros((m, 1)));
        let c2w = p.add_scaled("conv2.w", m, m * 9, m * 9, &mut rng);
        let c2b = p.add("conv2.b", Array2::zeros((m, 1)));
        let mut input = m * config.conv2_geom().output_dims(1).0;
        let mut lstm = Vec::new();
        for l in 0..config.lstm_layers {
            let wx = p.add_scaled(&format!("lstm{l}.wx"), 4 * u, input, input, &mut rng);
            let wh = p.add_scaled(&format!("lstm{l}.wh"), 4 * u, u, u, &mut rng);
            let mut bias = Array2::zeros((4 * u, 1));
            bias.slice_mut(ndarray::s![u..2 * u, ..]).fill(1.0);
            let b = p.add(&format!("lstm{l}.b"), bias);
            lstm.push(LstmLayer { wx, wh, b });
            input = u;
        }
        let l1w = p.add_scaled("fc1.w", u, u, u, &mut rng);
        let l1b = p.add("fc1.b", Array2::zeros((u, 1)));
        let out = config.num_phonemes + 1;
        let l2w = p.add_scaled("fc2.w", out, u, u, &mut rng);
        let l2b = p.add("fc2.b", Array2::zeros((out, 1)));
        Ok(CldnnLite { config, params: p, lfb, c1w, c1b, c2w, c2b, lstm, l1w, l1b, l2w, l2b })
    }

    pub fn from_params(config: CldnnConfig, params: &ParamSet) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        if params.len() != net.params.len() || net.params.load_from(params)? != net.params.len() {
            return Err(Error::Data("checkpoint tensors do not match the acoustic model".into()));
        }
        Ok(net)
    }

    /// Per-frame log-probabilities `(P+1) x frames` for a `1 x L` waveform.
    pub fn forward(&self, g: &mut Graph, p: &[Var], wave: Var) -> Result<Var> {
        let feats = g.lfb(wave, &self.lfb)?;
        let feats = g.cmn(feats);
        self.forward_features(g, p, feats)
    }

    /// Same as [`forward`](Self::forward) from a precomputed LFB matrix.
    pub fn forward_features(&self, g: &mut Graph, p: &[Var], feats: Var) -> Result<Var> {
        let c = &self.config;
        let geom1 = Conv2dGeom { in_maps: 1, height: c.num_filters, stride: (1, 1) };
        let x = g.conv2d(feats, p[self.c1w], p[self.c1b], geom1)?;
        let x = g.relu(x);
        let x = g.conv2d(x, p[self.c2w], p[self.c2b], c.conv2_geom())?;
        let mut x = g.relu(x);
        for layer in &self.lstm {
            let proj = g.matmul(p[layer.wx], x)?;
            let proj = g.add_col_bias(proj, p[layer.b])?;
            x = g.lstm(proj, p[layer.wh])?;
        }
        let x = g.matmul(p[self.l1w], x)?;
        let x = g.add_col_bias(x, p[self.l1b])?;
        let x = g.relu(x);
        let x = g.matmul(p[self.l2w], x)?;
        let x = g.add_col_bias(x, p[self.l2b])?;
        Ok(g.log_softmax(x))
    }

    /// Inference without gradient tracking.
    pub fn log_probs(&self, wave: &[f64]) -> Result<Array2<f64>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let w = g.constant(Array2::from_shape_vec((1, wave.len()), wave.to_vec()).expect("row vector"));
        let out = self.forward(&mut g, &p, w)?;
        Ok(g.value(out).clone())
    }
}
