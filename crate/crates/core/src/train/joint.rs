use std::time::Instant;

use super::am::{am_checkpoint, corpus_cer};
use super::enhancement::{enh_checkpoint, enhance_corpus, enhancement_loss};
use super::{batch_gradients, epoch_order, global_norm, Bound, EpochRecord, Regime, RegimeConfig};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::features::LfbLayer;
use crate::nn::{Adam, Checkpoint, CldnnLite, ParamSet, TcnMaskNet};

pub struct JointTrained {
    pub enh: TcnMaskNet,
    pub am: CldnnLite,
    pub log: Vec<EpochRecord>,
}

impl JointTrained {
    pub fn checkpoints(&self, config: &RegimeConfig) -> (Checkpoint, Checkpoint) {
        (enh_checkpoint(&self.enh, config), am_checkpoint(&self.am, config))
    }
}

/// Fine-tunes the mask network (and, unless the regime freezes it, the
/// acoustic model) with the CTC loss of the recognizer on enhanced audio.
pub fn joint_finetune(
    config: &RegimeConfig,
    enh: &TcnMaskNet,
    am: &CldnnLite,
    train: &[Sample],
    valid: &[Sample],
) -> Result<JointTrained> {
    config.validate()?;
    if !config.regime.is_joint() {
        return Err(Error::InvalidArgument(format!("{} is not a joint regime", config.regime)));
    }
    if train.is_empty() {
        return Err(Error::Data("empty training manifest".into()));
    }
    let freeze_am = config.regime == Regime::JointFrozenAm;
    let mut enh = TcnMaskNet::from_params(enh.config, &enh.params)?;
    let mut am = CldnnLite::from_params(am.config, &am.params)?;
    let lfb = LfbLayer::default();
    let w_sisnr = config.joint_sisnr_weight;
    let mut adam_enh = Adam::new(&enh.params, config.lr);
    let mut adam_am = Adam::new(&am.params, config.lr);
    let vw: Vec<Vec<usize>> = valid.iter().map(|s| s.record.transcript_labels.clone()).collect();
    let valid_cer = |enh: &TcnMaskNet, am: &CldnnLite| -> Result<f64> {
        let waves = enhance_corpus(enh, valid)?;
        let w: Vec<&[f64]> = waves.iter().map(Vec::as_slice).collect();
        let l: Vec<&[usize]> = vw.iter().map(Vec::as_slice).collect();
        corpus_cer(am, &w, &l)
    };
    let mut log = Vec::new();
    let mut best: Option<(f64, ParamSet, ParamSet)> = None;
    let start = Instant::now();
    let mut checked_path = false;
    for epoch in 1..=config.epochs {
        let order = epoch_order(train.len(), config.seed, epoch);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grads) = {
                let sets = [
                    Bound { params: &enh.params, trainable: true },
                    Bound { params: &am.params, trainable: !freeze_am },
                ];
                batch_gradients(&sets, batch, |g, p, i| {
                    let s = &train[i];
                    let (neg_sisnr, wave) = enhancement_loss(g, &enh, &p[0], s, 0.0, &lfb)?;
                    let logp = am.forward(g, &p[1], wave)?;
                    let ctc = g.ctc_loss(logp, &s.record.transcript_labels)?;
                    if w_sisnr > 0.0 {
                        let extra = g.scale(neg_sisnr, w_sisnr);
                        g.add(ctc, extra)
                    } else {
                        Ok(ctc)
                    }
                })?
            };
            let mut grads = grads.into_iter();
            let g_enh = grads.next().flatten().expect("trainable set");
            if !checked_path {
                let norm = global_norm(&g_enh);
                if !(norm > 0.0) {
                    return Err(Error::Numerical(format!(
                        "disconnected gradient: CTC gradient reaching the mask network has norm {norm}"
                    )));
                }
                checked_path = true;
            }
            adam_enh.step(&mut enh.params, &g_enh)?;
            if let Some(g_am) = grads.next().flatten() {
                adam_am.step(&mut am.params, &g_am)?;
            }
            loss_sum += loss * batch.len() as f64;
        }
        let metric = if valid.is_empty() { f64::NAN } else { valid_cer(&enh, &am)? };
        log::info!("{} epoch {epoch}: loss {:.4} valid cer {metric:.4}", config.regime, loss_sum / train.len() as f64);
        log.push(EpochRecord {
            regime: config.regime.config_name().into(),
            epoch,
            train_loss: loss_sum / train.len() as f64,
            valid_metric: metric,
            valid_metric_name: "cer".into(),
            wall_s: start.elapsed().as_secs_f64(),
            seed: config.seed,
        });
        if config.keep_best && metric.is_finite() && best.as_ref().is_none_or(|(b, _, _)| metric < *b) {
            best = Some((metric, enh.params.clone(), am.params.clone()));
        }
    }
    if let Some((_, pe, pa)) = best {
        enh.params = pe;
        am.params = pa;
    }
    Ok(JointTrained { enh, am, log })
}
