use std::time::Instant;

use rayon::prelude::*;

use super::{batch_gradients, epoch_order, Bound, EnhInput, EpochRecord, Regime, RegimeConfig};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::features::{LfbLayer, MIC_PAIRS};
use crate::metrics::si_snr;
use crate::nn::tcn::enhance_on_graph;
use crate::nn::{Adam, Checkpoint, Graph, TcnConfig, TcnMaskNet, Var};

pub struct EnhTrained {
    pub net: TcnMaskNet,
    pub regime: Regime,
    pub log: Vec<EpochRecord>,
}

impl EnhTrained {
    pub fn checkpoint(&self, config: &RegimeConfig) -> Checkpoint {
        enh_checkpoint(&self.net, config)
    }
}

pub(crate) fn enh_checkpoint(net: &TcnMaskNet, config: &RegimeConfig) -> Checkpoint {
    let mut h = net.config.to_hparams();
    for (k, v) in config.to_pairs() {
        h.insert(format!("train.{k}"), v);
    }
    Checkpoint::new("tcn", h, net.params.clone())
}

/// Enhanced reference-channel waveform of one scene.
pub fn enhance_sample(net: &TcnMaskNet, sample: &Sample) -> Result<Vec<f64>> {
    let needed = MIC_PAIRS.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(1);
    let ch = sample.mixture.channels();
    if ch < needed || ch != sample.record.scene.array.num_mics {
        return Err(Error::Data(format!(
            "{}: mixture has {ch} channels, expected {} (at least {needed})",
            sample.record.id, sample.record.scene.array.num_mics
        )));
    }
    let inp = EnhInput::from_sample(sample)?;
    let mut g = Graph::new();
    let p = net.params.bind(&mut g, false);
    let f = g.constant(inp.features);
    let w = enhance_on_graph(net, &mut g, &p, f, &inp.mixture_spec, inp.padded_len)?;
    Ok(g.value(w).iter().take(inp.num_samples).copied().collect())
}

/// Enhances every scene; output `i` belongs to `samples[i]`.
pub fn enhance_corpus(net: &TcnMaskNet, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
    samples.par_iter().map(|s| enhance_sample(net, s)).collect()
}

/// Mean SI-SNR of the enhanced validation set against the reverberant target.
pub fn validation_si_snr(net: &TcnMaskNet, valid: &[Sample]) -> Result<f64> {
    let scores: Vec<f64> = valid
        .par_iter()
        .map(|s| si_snr(&enhance_sample(net, s)?, &s.reverb_target))
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len().max(1) as f64)
}

/// Training loss of one example on an existing graph, with the enhanced
/// waveform (padded to whole frames).
pub(crate) fn enhancement_loss(
    g: &mut Graph,
    net: &TcnMaskNet,
    p: &[Var],
    sample: &Sample,
    alpha: f64,
    lfb: &LfbLayer,
) -> Result<(Var, Var)> {
    let inp = EnhInput::from_sample(sample)?;
    let target = inp.pad(&sample.reverb_target);
    let f = g.constant(inp.features);
    let wave = enhance_on_graph(net, g, p, f, &inp.mixture_spec, inp.padded_len)?;
    let mut loss = g.neg_si_snr(wave, &target)?;
    if alpha > 0.0 {
        let est = g.lfb(wave, lfb)?;
        let reference = g.constant(lfb.apply(&target)?);
        let mse = g.mse(est, reference)?;
        let mse = g.scale(mse, alpha);
        loss = g.add(loss, mse)?;
    }
    Ok((loss, wave))
}

/// Trains the mask network of an enhancement regime. The mask kind comes
/// from the regime; `init` warm-starts from existing parameters.
pub fn train_enhancement(
    config: &RegimeConfig,
    tcn: TcnConfig,
    init: Option<&TcnMaskNet>,
    train: &[Sample],
    valid: &[Sample],
) -> Result<EnhTrained> {
    config.validate()?;
    let kind = config
        .regime
        .mask_kind()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not an enhancement regime", config.regime)))?;
    if train.is_empty() {
        return Err(Error::Data("empty training manifest".into()));
    }
    let tcn = TcnConfig { mask_kind: kind, ..tcn };
    let mut net = match init {
        Some(n) => TcnMaskNet::from_params(tcn, &n.params)?,
        None => TcnMaskNet::new(tcn, config.seed)?,
    };
    let alpha = if config.regime == Regime::Sept2CirmMultitask { config.alpha } else { 0.0 };
    let lfb = LfbLayer::default();
    let mut adam = Adam::new(&net.params, config.lr);
    let mut log = Vec::new();
    let mut best: Option<(f64, crate::nn::ParamSet)> = None;
    let start = Instant::now();
    for epoch in 1..=config.epochs {
        let order = epoch_order(train.len(), config.seed, epoch);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grads) = {
                let sets = [Bound { params: &net.params, trainable: true }];
                batch_gradients(&sets, batch, |g, p, i| {
                    Ok(enhancement_loss(g, &net, &p[0], &train[i], alpha, &lfb)?.0)
                })?
            };
            let grads = grads.into_iter().next().flatten().expect("trainable set");
            adam.step(&mut net.params, &grads)?;
            loss_sum += loss * batch.len() as f64;
        }
        let metric = if valid.is_empty() { f64::NAN } else { validation_si_snr(&net, valid)? };
        log::info!("{} epoch {epoch}: loss {:.4} valid si-snr {metric:.3}", config.regime, loss_sum / train.len() as f64);
        log.push(EpochRecord {
            regime: config.regime.config_name().into(),
            epoch,
            train_loss: loss_sum / train.len() as f64,
            valid_metric: metric,
            valid_metric_name: "si_snr_db".into(),
            wall_s: start.elapsed().as_secs_f64(),
            seed: config.seed,
        });
        if config.keep_best && metric.is_finite() && best.as_ref().is_none_or(|(b, _)| metric > *b) {
            best = Some((metric, net.params.clone()));
        }
    }
    if let Some((_, params)) = best {
        net.params = params;
    }
    Ok(EnhTrained { net, regime: config.regime, log })
}
