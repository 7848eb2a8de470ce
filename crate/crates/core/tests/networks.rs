use farspeech::dataset::{synthesize_sample, DatasetConfig, SourceMaterial, Split};
use farspeech::nn::tcn::enhance_on_graph;
use farspeech::nn::{CldnnConfig, CldnnLite, Graph, TcnConfig, TcnMaskNet};
use farspeech::train::EnhInput;
use farspeech::{MaskKind, Sample};
use ndarray::Array2;

fn scene(duration_s: f64) -> Sample {
    let cfg = DatasetConfig { n_train: 1, n_valid: 1, n_test: 1, duration_s, seed: 11, ..DatasetConfig::default() };
    synthesize_sample(&cfg, &SourceMaterial::synthetic(&cfg), Split::Train, 0).unwrap()
}

fn small_tcn(kind: MaskKind) -> TcnConfig {
    TcnConfig { bottleneck: 8, hidden: 16, blocks: 2, repeats: 1, ..TcnConfig::new(kind) }
}

fn run(net: &TcnMaskNet, inp: &EnhInput) -> Vec<f64> {
    let mut g = Graph::new();
    let p = net.params.bind(&mut g, false);
    let f = g.constant(inp.features.clone());
    let w = enhance_on_graph(net, &mut g, &p, f, &inp.mixture_spec, inp.padded_len).unwrap();
    g.value(w).iter().copied().collect()
}

#[test]
fn zero_irm_head_silences_the_output() {
    let s = scene(1.0);
    let inp = EnhInput::from_sample(&s).unwrap();
    let mut net = TcnMaskNet::new(small_tcn(MaskKind::Irm), 1).unwrap();
    let head = net.head_weight_slot();
    net.params.get_mut(head).fill(0.0);
    net.params.get_mut(head + 1).fill(0.0);
    assert!(run(&net, &inp).iter().all(|&v| v == 0.0));
}

#[test]
fn identity_cirm_returns_the_reference_channel() {
    let s = scene(2.0);
    let inp = EnhInput::from_sample(&s).unwrap();
    assert_eq!(inp.padded_len, inp.num_samples);
    let net = TcnMaskNet::identity(small_tcn(MaskKind::Cirm), 1).unwrap();
    let out = run(&net, &inp);
    let mix = s.reference_mixture();
    let peak = mix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // The first and last half-frame lack a full overlap.
    let inner = 256..mix.len() - 256;
    let err = out[inner.clone()].iter().zip(&mix[inner]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-5 * peak, "max error {err}");
}

#[test]
fn padded_input_covers_the_utterance() {
    let s = scene(1.0);
    let inp = EnhInput::from_sample(&s).unwrap();
    assert_eq!(inp.num_samples, 16_000);
    // 61 whole frames cover 15872 samples; one more is needed.
    assert_eq!(inp.padded_len, 16_128);
    assert_eq!(inp.mixture_spec.num_frames(), 62);
    let net = TcnMaskNet::identity(small_tcn(MaskKind::Cirm), 1).unwrap();
    let out = farspeech::train::enhance_sample(&net, &s).unwrap();
    assert_eq!(out.len(), 16_000);
}

#[test]
fn am_posteriors_are_distributions_with_expected_frame_count() {
    let cfg = CldnnConfig { conv_maps: 4, units: 16, lstm_layers: 1, ..CldnnConfig::default() };
    let am = CldnnLite::new(cfg, 3).unwrap();
    let s = scene(2.0);
    let logp = am.log_probs(&s.clean).unwrap();
    let lfb_frames = am.lfb.num_frames(s.clean.len()).unwrap();
    assert_eq!(lfb_frames, 198);
    assert_eq!(logp.dim(), (33, cfg.output_frames(lfb_frames)));
    assert_eq!(cfg.output_frames(lfb_frames), 99);
    for col in logp.columns() {
        let total: f64 = col.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(col.iter().all(|v| *v <= 0.0));
    }
}

#[test]
fn tcn_rejects_wrong_feature_rows() {
    let net = TcnMaskNet::new(small_tcn(MaskKind::Cirm), 1).unwrap();
    let mut g = Graph::new();
    let p = net.params.bind(&mut g, false);
    let f = g.constant(Array2::zeros((10, 5)));
    assert!(net.forward(&mut g, &p, f).is_err());
}
