//! Training regimes: mask-network training (IRM or cIRM, SI-SNR with an
//! optional filterbank MSE term), acoustic-model pretraining on a
//! multi-condition mix, and CTC-driven joint fine-tuning.

mod am;
mod enhancement;
mod evaluate;
pub mod experiment;
mod joint;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::dsp::{ComplexSpectrogram, FrameSpec, MultiChannelWave};
use crate::error::{Error, Result};
use crate::features::{feature_pack, multichannel_stft, SteeringRatio};
use crate::mask::MaskKind;
use crate::nn::{Graph, ParamSet, Tensor, Var};

pub use am::{am_examples, train_am, AmExample, AmTrained};
pub use enhancement::{enhance_corpus, enhance_sample, train_enhancement, validation_si_snr, EnhTrained};
pub use evaluate::{
    aligned_hole_fraction, angle_bucket, evaluate, evaluate_with, BucketSummary, EvalReport, HoleOptions, UtteranceScore,
    ANGLE_BUCKETS, HOLE_ACTIVE_DB, HOLE_FLOOR_RATIO,
};
pub use joint::{joint_finetune, JointTrained};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    BaseIrmSisnr,
    Sept1CirmSisnr,
    Sept2CirmMultitask,
    AmPretrain,
    Joint,
    JointFrozenAm,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::BaseIrmSisnr,
        Regime::Sept1CirmSisnr,
        Regime::Sept2CirmMultitask,
        Regime::AmPretrain,
        Regime::Joint,
        Regime::JointFrozenAm,
    ];

    /// Short system name used on the command line.
    pub fn short_name(&self) -> &'static str {
        match self {
            Regime::BaseIrmSisnr => "base",
            Regime::Sept1CirmSisnr => "sept-1",
            Regime::Sept2CirmMultitask => "sept-2",
            Regime::AmPretrain => "am",
            Regime::Joint => "joint",
            Regime::JointFrozenAm => "joint-frozen",
        }
    }

    pub fn config_name(&self) -> &'static str {
        match self {
            Regime::BaseIrmSisnr => "base_irm_sisnr",
            Regime::Sept1CirmSisnr => "sept1_cirm_sisnr",
            Regime::Sept2CirmMultitask => "sept2_cirm_multitask",
            Regime::AmPretrain => "am_pretrain",
            Regime::Joint => "joint",
            Regime::JointFrozenAm => "joint_frozen_am",
        }
    }

    pub fn mask_kind(&self) -> Option<MaskKind> {
        match self {
            Regime::BaseIrmSisnr => Some(MaskKind::Irm),
            Regime::Sept1CirmSisnr | Regime::Sept2CirmMultitask => Some(MaskKind::Cirm),
            _ => None,
        }
    }

    pub fn is_enhancement(&self) -> bool {
        self.mask_kind().is_some()
    }

    pub fn is_joint(&self) -> bool {
        matches!(self, Regime::Joint | Regime::JointFrozenAm)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.short_name() == s || r.config_name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Regime::ALL.iter().map(|r| r.short_name()).collect();
                Error::InvalidArgument(format!("unknown regime {s:?}; expected one of {{{}}}", names.join(", ")))
            })
    }
}

/// Audio conditions an acoustic model can be trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmCondition {
    Clean,
    Reverb,
    Mixture,
    Enhanced,
}

impl AmCondition {
    pub const ALL: [AmCondition; 4] = [AmCondition::Clean, AmCondition::Reverb, AmCondition::Mixture, AmCondition::Enhanced];

    pub fn name(&self) -> &'static str {
        match self {
            AmCondition::Clean => "clean",
            AmCondition::Reverb => "reverb",
            AmCondition::Mixture => "mixture",
            AmCondition::Enhanced => "enhanced",
        }
    }
}

impl FromStr for AmCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AmCondition::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown AM condition {s:?}")))
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeConfig {
    pub regime: Regime,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Weight of the filterbank MSE term (sept-2).
    pub alpha: f64,
    pub am_training_mix: Vec<AmCondition>,
    /// Weight of an extra SI-SNR term during joint fine-tuning.
    pub joint_sisnr_weight: f64,
    /// Keep the parameters of the best validation epoch instead of the last.
    pub keep_best: bool,
    pub deterministic: bool,
}

impl RegimeConfig {
    pub fn new(regime: Regime) -> Self {
        let (epochs, lr) = match regime {
            Regime::AmPretrain => (12, 1e-3),
            Regime::Joint | Regime::JointFrozenAm => (3, 1e-4),
            _ => (8, 1e-3),
        };
        RegimeConfig {
            regime,
            epochs,
            batch_size: 4,
            lr,
            seed: 0,
            alpha: 1.0,
            am_training_mix: AmCondition::ALL.to_vec(),
            joint_sisnr_weight: 0.0,
            keep_best: true,
            deterministic: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.alpha >= 0.0) || !(self.joint_sisnr_weight >= 0.0) {
            return Err(Error::InvalidArgument("loss weights must be >= 0".into()));
        }
        if self.regime == Regime::AmPretrain && self.am_training_mix.is_empty() {
            return Err(Error::InvalidArgument("am_training_mix is empty".into()));
        }
        Ok(())
    }

    /// Key-value view, also used for checkpoint hyperparameters.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mix: Vec<&str> = self.am_training_mix.iter().map(|c| c.name()).collect();
        vec![
            ("regime".into(), self.regime.config_name().into()),
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("alpha".into(), self.alpha.to_string()),
            ("am_training_mix".into(), mix.join(",")),
            ("joint_sisnr_weight".into(), self.joint_sisnr_weight.to_string()),
            ("keep_best".into(), self.keep_best.to_string()),
            ("deterministic".into(), self.deterministic.to_string()),
        ]
    }

    /// Applies one `key = value` setting; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::InvalidArgument(format!("bad value {v:?} for {key}")))
        }
        match key {
            "regime" => self.regime = value.parse()?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "am_training_mix" => {
                self.am_training_mix = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "joint_sisnr_weight" => self.joint_sisnr_weight = parse(key, value)?,
            "keep_best" => self.keep_best = parse(key, value)?,
            "deterministic" => self.deterministic = parse(key, value)?,
            _ => return Err(Error::InvalidArgument(format!("unknown training key {key:?}"))),
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub regime: String,
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean validation SI-SNR (enhancement) or CER (acoustic model).
    pub valid_metric: f64,
    pub valid_metric_name: String,
    pub wall_s: f64,
    pub seed: u64,
}

pub fn write_log(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Everything the mask network needs for one utterance. The mixture is
/// zero-padded to a whole number of frames; `padded_len` is the length the
/// network reconstructs and `num_samples` the original length.
#[derive(Debug, Clone)]
pub struct EnhInput {
    pub features: Array2<f64>,
    pub mixture_spec: ComplexSpectrogram,
    pub num_samples: usize,
    pub padded_len: usize,
}

impl EnhInput {
    pub fn from_sample(sample: &Sample) -> Result<Self> {
        let fs = FrameSpec::default();
        let n = sample.mixture.len();
        let padded_len = fs.covering_len(n);
        let specs = if padded_len == n {
            multichannel_stft(&sample.mixture, &fs)?
        } else {
            let mut x = Array2::zeros((sample.mixture.channels(), padded_len));
            x.slice_mut(ndarray::s![.., ..n]).assign(&sample.mixture.samples);
            multichannel_stft(&MultiChannelWave::new(x, sample.mixture.sample_rate)?, &fs)?
        };
        let scene = &sample.record.scene;
        let steering = SteeringRatio::new(&scene.array, scene.target_doa, &fs)?;
        let pack = feature_pack(&specs, &steering)?;
        Ok(EnhInput {
            features: pack.concatenated,
            mixture_spec: specs.into_iter().next().expect("at least one channel"),
            num_samples: n,
            padded_len,
        })
    }

    /// `x` zero-padded to `padded_len`.
    pub fn pad(&self, x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        v.resize(self.padded_len, 0.0);
        v
    }
}

/// A parameter set taking part in a gradient computation.
pub(crate) struct Bound<'a> {
    pub params: &'a ParamSet,
    pub trainable: bool,
}

/// Mean loss and mean gradients over a batch. Examples run in parallel; the
/// per-example gradients are summed in batch order, so the result does not
/// depend on the thread count.
pub(crate) fn batch_gradients<F>(sets: &[Bound<'_>], items: &[usize], f: F) -> Result<(f64, Vec<Option<Vec<Tensor>>>)>
where
    F: Fn(&mut Graph, &[Vec<Var>], usize) -> Result<Var> + Sync,
{
    let per: Vec<Result<(f64, Vec<Option<Vec<Tensor>>>)>> = items
        .par_iter()
        .map(|&i| {
            let mut g = Graph::new();
            let vars: Vec<Vec<Var>> = sets.iter().map(|s| s.params.bind(&mut g, s.trainable)).collect();
            let loss = f(&mut g, &vars, i)?;
            let v = g.scalar(loss);
            if !v.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss on example {i}")));
            }
            let mut grads = g.backward(loss)?;
            let out = sets
                .iter()
                .zip(&vars)
                .map(|(s, vs)| s.trainable.then(|| vs.iter().map(|&x| grads.take(x)).collect()))
                .collect();
            Ok((v, out))
        })
        .collect();
    let n = items.len() as f64;
    let mut total = 0.0;
    let mut acc: Vec<Option<Vec<Tensor>>> = sets.iter().map(|_| None).collect();
    for r in per {
        let (v, grads) = r?;
        total += v;
        for (a, g) in acc.iter_mut().zip(grads) {
            match (a.as_mut(), g) {
                (None, Some(g)) => *a = Some(g),
                (Some(a), Some(g)) => a.iter_mut().zip(g).for_each(|(x, y)| *x += &y),
                _ => {}
            }
        }
    }
    for a in acc.iter_mut().flatten() {
        a.iter_mut().for_each(|t| t.mapv_inplace(|v| v / n));
    }
    Ok((total / n, acc))
}

/// Per-epoch example order.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x7a11);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

pub(crate) fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().flat_map(|t| t.iter()).map(|v| v * v).sum::<f64>().sqrt()
}
