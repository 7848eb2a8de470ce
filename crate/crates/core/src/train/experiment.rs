//! End-to-end comparison of the systems on one synthesized dataset: the three
//! enhancement regimes, a multi-condition acoustic model, and joint
//! fine-tuning with a trainable or frozen recognizer.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    am_examples, enhance_corpus, evaluate, joint_finetune, train_am, train_enhancement, AmCondition, EpochRecord,
    EvalReport, Regime, RegimeConfig,
};
use crate::dataset::{synthesize_split, DatasetConfig, SourceMaterial, Split};
use crate::error::Result;
use crate::mask::MaskKind;
use crate::nn::checkpoint::params_hash;
use crate::nn::{CldnnConfig, TcnConfig};

/// Sizes and schedule of one comparison run. The acoustic model is first
/// trained on clean speech and then on the multi-condition union, starting
/// from the clean model.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecipe {
    pub dataset: DatasetConfig,
    pub tcn: TcnConfig,
    pub am: CldnnConfig,
    pub enh_epochs: usize,
    pub am_clean_epochs: usize,
    pub am_epochs: usize,
    pub joint_epochs: usize,
    pub batch_size: usize,
    pub enh_lr: f64,
    pub am_lr: f64,
    pub alpha: f64,
}

impl Default for ExperimentRecipe {
    fn default() -> Self {
        ExperimentRecipe {
            dataset: DatasetConfig::default(),
            tcn: TcnConfig { bottleneck: 32, hidden: 64, ..TcnConfig::new(MaskKind::Cirm) },
            // A second LSTM layer stalls at the all-blank CTC plateau on
            // this data; one layer trains in a few epochs.
            am: CldnnConfig { conv_maps: 8, units: 64, lstm_layers: 1, ..CldnnConfig::default() },
            enh_epochs: 10,
            am_clean_epochs: 15,
            am_epochs: 12,
            joint_epochs: 8,
            batch_size: 4,
            enh_lr: 1e-3,
            am_lr: 3e-3,
            alpha: 1.0,
        }
    }
}

/// Test-set results of one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemResult {
    pub system: String,
    /// Best validation SI-SNR seen during enhancement training.
    pub valid_si_snr: Option<f64>,
    pub test_si_snr: f64,
    pub median_hole_fraction: f64,
    pub cer: f64,
    pub params_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub seed: u64,
    pub systems: Vec<SystemResult>,
    pub mixture_cer: f64,
    pub am_hash: String,
    pub log: Vec<EpochRecord>,
    pub wall_s: f64,
}

impl ExperimentResult {
    pub fn system(&self, regime: Regime) -> &SystemResult {
        self.systems
            .iter()
            .find(|s| s.system == regime.short_name())
            .expect("every system is evaluated")
    }
}

fn best_valid(log: &[EpochRecord]) -> Option<f64> {
    log.iter().map(|r| r.valid_metric).filter(|v| v.is_finite()).reduce(f64::max)
}

fn summary(system: Regime, report: &EvalReport, valid: Option<f64>, hash: String) -> SystemResult {
    SystemResult {
        system: system.short_name().into(),
        valid_si_snr: valid,
        test_si_snr: report.overall.si_snr_out,
        median_hole_fraction: report.median_hole_fraction(),
        cer: report.overall.cer.unwrap_or(f64::NAN),
        params_hash: hash,
    }
}

/// Runs every regime with training seed `seed` on the dataset drawn with the
/// same seed.
pub fn run_experiment(recipe: &ExperimentRecipe, seed: u64) -> Result<ExperimentResult> {
    let start = Instant::now();
    let dcfg = DatasetConfig { seed, ..recipe.dataset.clone() };
    let material = SourceMaterial::synthetic(&dcfg);
    let train = synthesize_split(&dcfg, &material, Split::Train)?;
    let valid = synthesize_split(&dcfg, &material, Split::Valid)?;
    let test = synthesize_split(&dcfg, &material, Split::Test)?;
    let config = |regime: Regime, epochs: usize, lr: f64| RegimeConfig {
        epochs,
        lr,
        seed,
        alpha: recipe.alpha,
        batch_size: recipe.batch_size,
        ..RegimeConfig::new(regime)
    };
    let mut log = Vec::new();
    let mut enh = Vec::new();
    for regime in [Regime::BaseIrmSisnr, Regime::Sept1CirmSisnr, Regime::Sept2CirmMultitask] {
        let t = train_enhancement(&config(regime, recipe.enh_epochs, recipe.enh_lr), recipe.tcn, None, &train, &valid)?;
        log.extend(t.log.iter().cloned());
        enh.push(t);
    }
    let base_train = enhance_corpus(&enh[0].net, &train)?;
    let base_valid = enhance_corpus(&enh[0].net, &valid)?;
    let clean = [AmCondition::Clean];
    let am_clean = train_am(
        &config(Regime::AmPretrain, recipe.am_clean_epochs, recipe.am_lr),
        recipe.am,
        None,
        &am_examples(&train, &clean, None)?,
        &am_examples(&valid, &clean, None)?,
    )?;
    log.extend(am_clean.log.iter().cloned());
    let mix = AmCondition::ALL;
    let am_train = am_examples(&train, &mix, Some(&base_train))?;
    let am_valid = am_examples(&valid, &mix, Some(&base_valid))?;
    let am_cfg = config(Regime::AmPretrain, recipe.am_epochs, recipe.am_lr);
    let am = train_am(&am_cfg, recipe.am, Some(&am_clean.net), &am_train, &am_valid)?;
    log.extend(am.log.iter().cloned());

    let mut systems = Vec::new();
    for t in &enh {
        let out = enhance_corpus(&t.net, &test)?;
        let report = evaluate(&test, &out, Some(&am.net))?;
        systems.push(summary(t.regime, &report, best_valid(&t.log), params_hash(&t.net.params)));
    }
    let sept1 = &enh[1].net;
    for regime in [Regime::Joint, Regime::JointFrozenAm] {
        let j = joint_finetune(&config(regime, recipe.joint_epochs, recipe.enh_lr / 10.0), sept1, &am.net, &train, &valid)?;
        log.extend(j.log.iter().cloned());
        let out = enhance_corpus(&j.enh, &test)?;
        let report = evaluate(&test, &out, Some(&j.am))?;
        systems.push(summary(regime, &report, None, params_hash(&j.enh.params)));
    }
    let mixtures: Vec<Vec<f64>> = test.iter().map(|s| s.reference_mixture()).collect();
    let mixture_cer = evaluate(&test, &mixtures, Some(&am.net))?.overall.cer.unwrap_or(f64::NAN);
    Ok(ExperimentResult {
        seed,
        systems,
        mixture_cer,
        am_hash: params_hash(&am.net.params),
        log,
        wall_s: start.elapsed().as_secs_f64(),
    })
}
