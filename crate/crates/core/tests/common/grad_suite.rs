//! Finite-difference gradient cases shared by the gradient tests and the
//! acceptance run. Each case builds a random instance from a seed.

use farspeech::dsp::{self, FrameSpec, MultiChannelWave};
use farspeech::features::{self, LfbLayer, SteeringRatio};
use farspeech::mask::MaskKind;
use farspeech::nn::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use farspeech::nn::tcn::{self, TcnConfig, TcnMaskNet};
use farspeech::nn::{CldnnConfig, CldnnLite, Conv2dGeom, Graph, Tensor, Var};
use farspeech::room::ArrayGeometry;
use farspeech::Result;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Case = (&'static str, fn(u64) -> Result<GradCheckReport>);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x5eed)
}

fn rand_t(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Array2::from_shape_fn((rows, cols), |_| r.gen_range(-1.0..1.0))
}

fn opts(seed: u64) -> GradCheckOptions {
    GradCheckOptions { seed, ..GradCheckOptions::default() }
}

// Reduces any output to a scalar with fixed random weights so every
// coordinate of the output carries a distinct sensitivity.
fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.value(x).dim();
    let mut rg = rng(seed.wrapping_add(991));
    let w = g.constant(rand_t(&mut rg, r, c));
    let y = g.mul(x, w)?;
    Ok(g.sum(y))
}

fn matmul(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (m, k, n) = (r.gen_range(1..6), r.gen_range(1..6), r.gen_range(1..6));
    let xs = [rand_t(&mut r, m, k), rand_t(&mut r, k, n)];
    check_gradients(&xs, |g, v| {
        let y = g.matmul(v[0], v[1])?;
        weighted_sum(g, y, seed)
    }, opts(seed))
}

fn elementwise(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (m, n) = (r.gen_range(1..5), r.gen_range(1..5));
    let xs = [rand_t(&mut r, m, n), rand_t(&mut r, m, n), rand_t(&mut r, m, 1)];
    check_gradients(&xs, |g, v| {
        let a = g.add(v[0], v[1])?;
        let b = g.mul(a, v[1])?;
        let c = g.sub(b, v[0])?;
        let d = g.scale(c, -1.7);
        let e = g.add_col_bias(d, v[2])?;
        weighted_sum(g, e, seed)
    }, opts(seed))
}

fn activations(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (m, n) = (r.gen_range(2..6), r.gen_range(2..6));
    let xs = [rand_t(&mut r, m, n), Tensor::from_elem((1, 1), r.gen_range(0.05..0.5))];
    check_gradients(&xs, |g, v| {
        let a = g.prelu(v[0], v[1])?;
        let b = g.relu(v[0]);
        let c = g.add(a, b)?;
        weighted_sum(g, c, seed)
    }, opts(seed))
}

fn gln(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (m, n) = (r.gen_range(2..6), r.gen_range(2..6));
    let xs = [rand_t(&mut r, m, n), rand_t(&mut r, m, 1), rand_t(&mut r, m, 1)];
    check_gradients(&xs, |g, v| {
        let y = g.gln(v[0], v[1], v[2])?;
        weighted_sum(g, y, seed)
    }, opts(seed))
}

fn log_softmax_cmn(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (m, n) = (r.gen_range(2..6), r.gen_range(1..6));
    let xs = [rand_t(&mut r, m, n).mapv(|v| 3.0 * v)];
    check_gradients(&xs, |g, v| {
        let a = g.log_softmax(v[0]);
        let b = g.cmn(v[0]);
        let c = g.add(a, b)?;
        weighted_sum(g, c, seed)
    }, opts(seed))
}

fn slice_concat(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let n = r.gen_range(1..5);
    let xs = [rand_t(&mut r, 5, n), rand_t(&mut r, 2, n)];
    check_gradients(&xs, |g, v| {
        let a = g.slice_rows(v[0], 1, 4)?;
        let c = g.concat_rows(&[v[1], a, v[0]])?;
        weighted_sum(g, c, seed)
    }, opts(seed))
}

fn depthwise(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (c, t) = (r.gen_range(1..4), r.gen_range(1..12));
    let dil = 1 << r.gen_range(0..3);
    let xs = [rand_t(&mut r, c, t), rand_t(&mut r, c, 3)];
    check_gradients(&xs, |g, v| {
        let y = g.depthwise_conv(v[0], v[1], dil)?;
        weighted_sum(g, y, seed)
    }, opts(seed))
}

fn conv2d(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (cin, cout, h, t) = (r.gen_range(1..3), r.gen_range(1..3), r.gen_range(2..6), r.gen_range(2..7));
    let stride = (r.gen_range(1..3), r.gen_range(1..3));
    let geom = Conv2dGeom { in_maps: cin, height: h, stride };
    let xs = [rand_t(&mut r, cin * h, t), rand_t(&mut r, cout, cin * 9), rand_t(&mut r, cout, 1)];
    check_gradients(&xs, |g, v| {
        let y = g.conv2d(v[0], v[1], v[2], geom)?;
        weighted_sum(g, y, seed)
    }, opts(seed))
}

fn lstm(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (u, t) = (r.gen_range(1..4), r.gen_range(1..6));
    let xs = [rand_t(&mut r, 4 * u, t), rand_t(&mut r, 4 * u, u)];
    check_gradients(&xs, |g, v| {
        let y = g.lstm(v[0], v[1])?;
        weighted_sum(g, y, seed)
    }, opts(seed))
}

fn complex_mask(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (f, n) = (r.gen_range(1..5), r.gen_range(1..5));
    let xs = [rand_t(&mut r, f, n), rand_t(&mut r, f, n), rand_t(&mut r, f, n), rand_t(&mut r, f, n)];
    check_gradients(&xs, |g, v| {
        let m = tcn::MaskVars { kind: MaskKind::Cirm, re: v[0], im: Some(v[1]) };
        let (re, im) = tcn::apply_mask(g, m, v[2], v[3])?;
        let a = weighted_sum(g, re, seed)?;
        let b = weighted_sum(g, im, seed + 1)?;
        g.add(a, b)
    }, opts(seed))
}

fn istft(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let spec = FrameSpec::new(16, 8, 16_000)?;
    let frames = r.gen_range(1..5);
    let len = spec.span(frames) - r.gen_range(0..8);
    let xs = [rand_t(&mut r, 9, frames), rand_t(&mut r, 9, frames)];
    check_gradients(&xs, |g, v| {
        let y = g.istft(v[0], v[1], spec, len)?;
        weighted_sum(g, y, seed)
    }, opts(seed))
}

fn lfb(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let layer = LfbLayer::new(8, 64, 32, 64, 16_000)?;
    let len = 64 + 32 * r.gen_range(0..4);
    let xs = [rand_t(&mut r, 1, len)];
    check_gradients(&xs, |g, v| {
        let y = g.lfb(v[0], &layer)?;
        weighted_sum(g, y, seed)
    }, opts(seed))
}

fn losses(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let n = r.gen_range(8..40);
    let reference: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let xs = [rand_t(&mut r, 1, n), rand_t(&mut r, 1, n)];
    check_gradients(&xs, move |g, v| {
        let a = g.neg_si_snr(v[0], &reference)?;
        let b = g.mse(v[0], v[1])?;
        g.add(a, b)
    }, opts(seed))
}

fn ctc(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (k, t) = (r.gen_range(2..5), r.gen_range(3..7));
    let len = r.gen_range(1..3);
    let labels: Vec<usize> = (0..len).map(|_| r.gen_range(1..k)).collect();
    let xs = [rand_t(&mut r, k, t).mapv(|v| 2.0 * v)];
    check_gradients(&xs, move |g, v| {
        let lp = g.log_softmax(v[0]);
        g.ctc_loss(lp, &labels)
    }, opts(seed))
}

/// Random six-channel wave, its reference-channel spectrum and features for
/// `frames` STFT frames.
fn tiny_scene(r: &mut ChaCha8Rng, frames: usize) -> Result<(features::FeaturePack, dsp::ComplexSpectrogram, Vec<f64>, usize)> {
    let spec = FrameSpec::default();
    let len = spec.span(frames);
    let wave = Array2::from_shape_fn((6, len), |_| r.gen_range(-0.5..0.5));
    let wave = MultiChannelWave::new(wave, 16_000)?;
    let specs = features::multichannel_stft(&wave, &spec)?;
    let steer = SteeringRatio::new(&ArrayGeometry::default(), r.gen_range(0.0..360.0), &spec)?;
    let pack = features::feature_pack(&specs, &steer)?;
    let target: Vec<f64> = (0..len).map(|_| r.gen_range(-0.5..0.5)).collect();
    Ok((pack, specs[0].clone(), target, len))
}

fn tiny_tcn(kind: MaskKind, seed: u64) -> Result<TcnMaskNet> {
    let cfg = TcnConfig { bottleneck: 4, hidden: 8, blocks: 1, repeats: 1, ..TcnConfig::new(kind) };
    TcnMaskNet::new(cfg, seed)
}

fn enhancement_path(kind: MaskKind, seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (pack, mix, target, len) = tiny_scene(&mut r, 3)?;
    let mut net = tiny_tcn(kind, seed)?;
    // Larger head weights make the head gradient non-trivial.
    let hw = net.head_weight_slot();
    net.params.get_mut(hw).mapv_inplace(|v| 10.0 * v);
    let inputs: Vec<Tensor> = net.params.iter().map(|(_, t)| t.clone()).collect();
    let feats = pack.concatenated.clone();
    check_gradients(&inputs, |g, p| {
        let f = g.constant(feats.clone());
        let w = tcn::enhance_on_graph(&net, g, p, f, &mix, len)?;
        g.neg_si_snr(w, &target)
    }, GradCheckOptions { max_coords: 6, ..opts(seed) })
}

fn enhancement_irm(seed: u64) -> Result<GradCheckReport> {
    enhancement_path(MaskKind::Irm, seed)
}

fn enhancement_cirm(seed: u64) -> Result<GradCheckReport> {
    enhancement_path(MaskKind::Cirm, seed)
}

fn tiny_am(seed: u64) -> Result<CldnnLite> {
    let cfg = CldnnConfig { num_filters: 40, conv_maps: 2, conv_stride: (2, 2), lstm_layers: 1, units: 3, num_phonemes: 3 };
    CldnnLite::new(cfg, seed)
}

fn recognition_path(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let am = tiny_am(seed)?;
    let len = 1600;
    let labels: Vec<usize> = (0..r.gen_range(1..3)).map(|_| r.gen_range(1..4)).collect();
    let mut inputs: Vec<Tensor> = vec![rand_t(&mut r, 1, len)];
    // Zero-initialised biases would put ReLU inputs exactly on the kink.
    inputs.extend(am.params.iter().map(|(_, t)| t + &rand_t(&mut r, t.nrows(), t.ncols()).mapv(|v| 0.1 * v)));
    check_gradients(&inputs, |g, v| {
        let lp = am.forward(g, &v[1..], v[0])?;
        g.ctc_loss(lp, &labels)
    }, GradCheckOptions { max_coords: 6, ..opts(seed) })
}

pub fn cases() -> Vec<Case> {
    vec![
        ("matmul", matmul),
        ("add/sub/mul/scale/bias", elementwise),
        ("relu/prelu", activations),
        ("global layer norm", gln),
        ("log-softmax/cmn", log_softmax_cmn),
        ("slice/concat", slice_concat),
        ("depthwise dilated conv", depthwise),
        ("conv2d", conv2d),
        ("lstm", lstm),
        ("complex mask multiply", complex_mask),
        ("istft overlap-add", istft),
        ("lfb", lfb),
        ("si-snr/mse", losses),
        ("ctc", ctc),
        ("features->tcn(irm)->istft->si-snr", enhancement_irm),
        ("features->tcn(cirm)->istft->si-snr", enhancement_cirm),
        ("waveform->lfb->cldnn->ctc", recognition_path),
    ]
}

/// Runs `instances` seeds of a case; returns (passed, failure description).
pub fn run_case(case: &Case, instances: u64) -> (bool, String) {
    for seed in 0..instances {
        match (case.1)(seed) {
            Ok(rep) if rep.passed() => {}
            Ok(rep) => return (false, format!("seed {seed}: {rep:?}")),
            Err(e) => return (false, format!("seed {seed}: {e}")),
        }
    }
    (true, String::new())
}
