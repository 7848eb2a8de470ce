use farspeech::dataset::{synthesize_split, DatasetConfig, SourceMaterial, Split};
use farspeech::metrics::si_snr;
use farspeech::nn::checkpoint::params_hash;
use farspeech::nn::{CldnnConfig, CldnnLite, TcnConfig, TcnMaskNet};
use farspeech::train::{
    am_examples, enhance_corpus, enhance_sample, joint_finetune, train_am, train_enhancement, AmCondition,
};
use farspeech::{MaskKind, Regime, RegimeConfig, Sample};

fn data(n_train: usize, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    let cfg = DatasetConfig { n_train, n_valid: 2, n_test: 2, seed, ..DatasetConfig::default() };
    let m = SourceMaterial::synthetic(&cfg);
    (synthesize_split(&cfg, &m, Split::Train).unwrap(), synthesize_split(&cfg, &m, Split::Valid).unwrap())
}

fn small_tcn() -> TcnConfig {
    TcnConfig { bottleneck: 16, hidden: 32, blocks: 3, repeats: 1, ..TcnConfig::new(MaskKind::Cirm) }
}

fn small_am() -> CldnnConfig {
    CldnnConfig { conv_maps: 8, units: 48, lstm_layers: 1, ..CldnnConfig::default() }
}

fn cfg(regime: Regime, epochs: usize, lr: f64) -> RegimeConfig {
    RegimeConfig { epochs, lr, batch_size: 2, ..RegimeConfig::new(regime) }
}

#[test]
fn overfits_one_utterance() {
    let (train, _) = data(1, 4);
    let s = &train[0];
    let before = si_snr(&s.reference_mixture(), &s.reverb_target).unwrap();
    let c = RegimeConfig { batch_size: 1, ..cfg(Regime::Sept1CirmSisnr, 60, 3e-3) };
    let out = train_enhancement(&c, small_tcn(), None, &train, &train).unwrap();
    let after = si_snr(&enhance_sample(&out.net, s).unwrap(), &s.reverb_target).unwrap();
    assert!(after - before >= 5.0, "{before:.2} dB -> {after:.2} dB");
}

#[test]
fn am_overfits_ten_utterances() {
    let (train, _) = data(10, 5);
    let ex = am_examples(&train, &[AmCondition::Clean], None).unwrap();
    let c = RegimeConfig { batch_size: 2, ..cfg(Regime::AmPretrain, 200, 3e-3) };
    let out = train_am(&c, small_am(), None, &ex, &ex).unwrap();
    let best = out.log.iter().map(|r| r.valid_metric).fold(f64::INFINITY, f64::min);
    assert!(best < 0.05, "best cer {best}");
}

#[test]
fn multitask_with_zero_weight_is_sept1() {
    let (train, valid) = data(3, 6);
    let a = train_enhancement(&cfg(Regime::Sept1CirmSisnr, 1, 1e-3), small_tcn(), None, &train, &valid).unwrap();
    let c = RegimeConfig { alpha: 0.0, ..cfg(Regime::Sept2CirmMultitask, 1, 1e-3) };
    let b = train_enhancement(&c, small_tcn(), None, &train, &valid).unwrap();
    assert_eq!(params_hash(&a.net.params), params_hash(&b.net.params));
    let c = RegimeConfig { alpha: 1.0, ..c };
    let d = train_enhancement(&c, small_tcn(), None, &train, &valid).unwrap();
    assert_ne!(params_hash(&a.net.params), params_hash(&d.net.params));
}

#[test]
fn frozen_joint_keeps_the_acoustic_model() {
    let (train, valid) = data(2, 7);
    let enh = TcnMaskNet::new(small_tcn(), 1).unwrap();
    let am = CldnnLite::new(small_am(), 2).unwrap();
    let c = RegimeConfig { keep_best: false, ..cfg(Regime::JointFrozenAm, 1, 1e-3) };
    let out = joint_finetune(&c, &enh, &am, &train, &valid).unwrap();
    assert_eq!(params_hash(&out.am.params), params_hash(&am.params));
    // CTC gradients reach the mask network through the waveform.
    assert_ne!(params_hash(&out.enh.params), params_hash(&enh.params));

    let c = RegimeConfig { keep_best: false, ..cfg(Regime::Joint, 1, 1e-3) };
    let out = joint_finetune(&c, &enh, &am, &train, &valid).unwrap();
    assert_ne!(params_hash(&out.am.params), params_hash(&am.params));
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let (train, valid) = data(4, 8);
    let c = RegimeConfig { deterministic: true, ..cfg(Regime::Sept1CirmSisnr, 1, 1e-3) };
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let one = pool(1).install(|| train_enhancement(&c, small_tcn(), None, &train, &valid).unwrap());
    let four = pool(4).install(|| train_enhancement(&c, small_tcn(), None, &train, &valid).unwrap());
    assert_eq!(one.checkpoint(&c).to_bytes(), four.checkpoint(&c).to_bytes());
    let e1 = pool(1).install(|| enhance_corpus(&one.net, &valid).unwrap());
    let e4 = pool(3).install(|| enhance_corpus(&one.net, &valid).unwrap());
    assert_eq!(e1, e4);
}

#[test]
fn wrong_regime_is_rejected() {
    let (train, valid) = data(1, 9);
    assert!(train_enhancement(&cfg(Regime::AmPretrain, 1, 1e-3), small_tcn(), None, &train, &valid).is_err());
    let enh = TcnMaskNet::new(small_tcn(), 1).unwrap();
    let am = CldnnLite::new(small_am(), 2).unwrap();
    assert!(joint_finetune(&cfg(Regime::BaseIrmSisnr, 1, 1e-3), &enh, &am, &train, &valid).is_err());
}
