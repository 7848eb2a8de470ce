use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;

use super::{batch_gradients, epoch_order, AmCondition, Bound, EpochRecord, Regime, RegimeConfig};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::metrics::edit_distance;
use crate::nn::ctc::greedy_decode;
use crate::nn::{Adam, Checkpoint, CldnnConfig, CldnnLite, ParamSet};

/// A labelled single-channel waveform.
#[derive(Debug, Clone)]
pub struct AmExample {
    pub wave: Vec<f64>,
    pub labels: Vec<usize>,
    pub condition: AmCondition,
}

/// The selected conditions of every scene, scene-major. `enhanced[i]` is the
/// enhanced output for `samples[i]` and is required when
/// [`AmCondition::Enhanced`] is selected.
pub fn am_examples(samples: &[Sample], conditions: &[AmCondition], enhanced: Option<&[Vec<f64>]>) -> Result<Vec<AmExample>> {
    if conditions.contains(&AmCondition::Enhanced) {
        match enhanced {
            None => return Err(Error::InvalidArgument("enhanced condition requested without enhanced audio".into())),
            Some(e) if e.len() != samples.len() => {
                return Err(Error::Data(format!("{} enhanced waveforms for {} scenes", e.len(), samples.len())))
            }
            _ => {}
        }
    }
    let mut out = Vec::with_capacity(samples.len() * conditions.len());
    for (i, s) in samples.iter().enumerate() {
        if s.record.transcript_labels.is_empty() {
            return Err(Error::Data(format!("{} has no transcript", s.record.id)));
        }
        for &c in conditions {
            let wave = match c {
                AmCondition::Clean => s.clean.clone(),
                AmCondition::Reverb => s.reverb_target.clone(),
                AmCondition::Mixture => s.reference_mixture(),
                AmCondition::Enhanced => enhanced.expect("checked above")[i].clone(),
            };
            out.push(AmExample { wave, labels: s.record.transcript_labels.clone(), condition: c });
        }
    }
    Ok(out)
}

pub struct AmTrained {
    pub net: CldnnLite,
    pub log: Vec<EpochRecord>,
}

impl AmTrained {
    pub fn checkpoint(&self, config: &RegimeConfig) -> Checkpoint {
        am_checkpoint(&self.net, config)
    }
}

pub(crate) fn am_checkpoint(net: &CldnnLite, config: &RegimeConfig) -> Checkpoint {
    let mut h = net.config.to_hparams();
    for (k, v) in config.to_pairs() {
        h.insert(format!("train.{k}"), v);
    }
    Checkpoint::new("cldnn", h, net.params.clone())
}

/// Corpus-level symbol error rate of greedy decoding over `waves`.
pub(crate) fn corpus_cer(net: &CldnnLite, waves: &[&[f64]], labels: &[&[usize]]) -> Result<f64> {
    let counts: Vec<(usize, usize)> = waves
        .par_iter()
        .zip(labels.par_iter())
        .map(|(w, l)| {
            let hyp = greedy_decode(&net.log_probs(w)?);
            Ok((edit_distance(&hyp, l), l.len()))
        })
        .collect::<Result<_>>()?;
    let (e, n) = counts.iter().fold((0, 0), |(a, b), (x, y)| (a + x, b + y));
    if n == 0 {
        return Err(Error::Data("no reference labels".into()));
    }
    Ok(e as f64 / n as f64)
}

/// CTC training of the acoustic model over the union of `train` examples.
/// `init` warm-starts from an existing model (for instance a clean-only one).
pub fn train_am(
    config: &RegimeConfig,
    am: CldnnConfig,
    init: Option<&CldnnLite>,
    train: &[AmExample],
    valid: &[AmExample],
) -> Result<AmTrained> {
    config.validate()?;
    if config.regime != Regime::AmPretrain {
        return Err(Error::InvalidArgument(format!("{} is not the acoustic-model regime", config.regime)));
    }
    if train.is_empty() {
        return Err(Error::Data("empty training manifest".into()));
    }
    let mut net = match init {
        Some(n) => CldnnLite::from_params(am, &n.params)?,
        None => CldnnLite::new(am, config.seed)?,
    };
    // The filterbank is fixed, so training can start from precomputed LFBs.
    let feats: Vec<Array2<f64>> = train.par_iter().map(|x| net.lfb.apply(&x.wave)).collect::<Result<_>>()?;
    let vw: Vec<&[f64]> = valid.iter().map(|x| x.wave.as_slice()).collect();
    let vl: Vec<&[usize]> = valid.iter().map(|x| x.labels.as_slice()).collect();
    let mut adam = Adam::new(&net.params, config.lr);
    let mut log = Vec::new();
    let mut best: Option<(f64, ParamSet)> = None;
    let start = Instant::now();
    for epoch in 1..=config.epochs {
        let order = epoch_order(train.len(), config.seed, epoch);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grads) = {
                let sets = [Bound { params: &net.params, trainable: true }];
                batch_gradients(&sets, batch, |g, p, i| {
                    let x = g.constant(feats[i].clone());
                    let x = g.cmn(x);
                    let logp = net.forward_features(g, &p[0], x)?;
                    g.ctc_loss(logp, &train[i].labels)
                })?
            };
            let grads = grads.into_iter().next().flatten().expect("trainable set");
            adam.step(&mut net.params, &grads)?;
            loss_sum += loss * batch.len() as f64;
        }
        let metric = if valid.is_empty() { f64::NAN } else { corpus_cer(&net, &vw, &vl)? };
        log::info!("am epoch {epoch}: loss {:.4} valid cer {metric:.4}", loss_sum / train.len() as f64);
        log.push(EpochRecord {
            regime: config.regime.config_name().into(),
            epoch,
            train_loss: loss_sum / train.len() as f64,
            valid_metric: metric,
            valid_metric_name: "cer".into(),
            wall_s: start.elapsed().as_secs_f64(),
            seed: config.seed,
        });
        if config.keep_best && metric.is_finite() && best.as_ref().is_none_or(|(b, _)| metric < *b) {
            best = Some((metric, net.params.clone()));
        }
    }
    if let Some((_, params)) = best {
        net.params = params;
    }
    Ok(AmTrained { net, log })
}
