//! Input features for the mask estimator (LPS, IPDs, angle feature) and the
//! log mel filterbank used by the multitask loss and the acoustic model.

use std::f64::consts::PI;

use ndarray::{s, Array2};
use num_complex::Complex64;

use crate::dsp::{self, ComplexSpectrogram, FrameSpec, MultiChannelWave};
use crate::error::{shape_err, Error, Result};
use crate::room::{ArrayGeometry, SOUND_SPEED};

/// Floor applied to `|Y|^2` before the log in [`lps`].
pub const LPS_FLOOR: f64 = 1e-12;

/// Microphone pairs (0-based) used for IPDs and the angle feature.
pub const MIC_PAIRS: [(usize, usize); 6] = [(0, 3), (1, 4), (2, 5), (0, 1), (2, 3), (4, 5)];

/// Log-power spectrum `log(max(|Y|^2, 1e-12))`.
pub fn lps(spec: &ComplexSpectrogram) -> Array2<f64> {
    spec.bins.mapv(|c| c.norm_sqr().max(LPS_FLOOR).ln())
}

/// Inter-channel phase difference `angle(Y1 / Y2)` wrapped to `(-pi, pi]`.
/// Bins where either channel is zero give 0.
pub fn ipd(spec_k1: &ComplexSpectrogram, spec_k2: &ComplexSpectrogram) -> Result<Array2<f64>> {
    if spec_k1.bins.dim() != spec_k2.bins.dim() {
        return Err(shape_err(format!(
            "ipd inputs differ: {:?} vs {:?}",
            spec_k1.bins.dim(),
            spec_k2.bins.dim()
        )));
    }
    let mut out = Array2::zeros(spec_k1.bins.dim());
    ndarray::Zip::from(&mut out)
        .and(&spec_k1.bins)
        .and(&spec_k2.bins)
        .for_each(|o, &a, &b| *o = dsp::wrapped_arg(a * b.conj()));
    Ok(out)
}

/// Far-field steering phasors `e_k(f) = exp(-i 2 pi f tau_k)` of a target
/// direction, one row per microphone pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringRatio {
    pub doa_deg: f64,
    pub pairs: Vec<(usize, usize)>,
    /// `[pairs x bins]`
    pub coeffs: Array2<Complex64>,
}

impl SteeringRatio {
    pub fn new(geometry: &ArrayGeometry, doa_deg: f64, frame_spec: &FrameSpec) -> Result<Self> {
        Self::with_pairs(geometry, doa_deg, frame_spec, &MIC_PAIRS)
    }

    pub fn with_pairs(
        geometry: &ArrayGeometry,
        doa_deg: f64,
        frame_spec: &FrameSpec,
        pairs: &[(usize, usize)],
    ) -> Result<Self> {
        if !doa_deg.is_finite() {
            return Err(Error::InvalidArgument("target direction must be known".into()));
        }
        let mics = geometry.mic_positions();
        if let Some(&(a, b)) = pairs.iter().find(|(a, b)| *a >= mics.len() || *b >= mics.len()) {
            return Err(Error::InvalidArgument(format!(
                "pair ({a}, {b}) outside a {}-mic array",
                mics.len()
            )));
        }
        let u = [doa_deg.to_radians().cos(), doa_deg.to_radians().sin(), 0.0];
        let bins = frame_spec.num_bins();
        let mut coeffs = Array2::zeros((pairs.len(), bins));
        for (k, &(a, b)) in pairs.iter().enumerate() {
            let dp: f64 = (0..3).map(|i| (mics[a][i] - mics[b][i]) * u[i]).sum();
            let tau = -dp / SOUND_SPEED;
            for f in 0..bins {
                let hz = f as f64 * frame_spec.sample_rate as f64 / frame_spec.kernel_size as f64;
                coeffs[[k, f]] = Complex64::from_polar(1.0, -2.0 * PI * hz * tau);
            }
        }
        Ok(SteeringRatio {
            doa_deg,
            pairs: pairs.to_vec(),
            coeffs,
        })
    }
}

/// Target-direction angle feature `sum_k cos(IPD_k - angle(e_k))`, in
/// `[-K, K]`. Bins where a pair has a zero channel contribute nothing for
/// that pair.
pub fn angle_feature(specs: &[ComplexSpectrogram], steering: &SteeringRatio) -> Result<Array2<f64>> {
    let Some(first) = specs.first() else {
        return Err(Error::InvalidArgument("no channels".into()));
    };
    let dim = first.bins.dim();
    if specs.iter().any(|s| s.bins.dim() != dim) {
        return Err(shape_err("channel spectrograms differ in shape"));
    }
    if steering.coeffs.ncols() != dim.0 {
        return Err(shape_err("steering bins do not match spectrogram"));
    }
    let mut af = Array2::zeros(dim);
    for (k, &(a, b)) in steering.pairs.iter().enumerate() {
        if a >= specs.len() || b >= specs.len() {
            return Err(shape_err(format!("pair ({a}, {b}) needs more channels")));
        }
        let ya = &specs[a].bins;
        let yb = &specs[b].bins;
        for f in 0..dim.0 {
            let e = steering.coeffs[[k, f]].conj();
            for n in 0..dim.1 {
                let r = ya[[f, n]] * yb[[f, n]].conj();
                let m = r.norm();
                if m > 0.0 {
                    af[[f, n]] += (e * r).re / m;
                }
            }
        }
    }
    Ok(af)
}

/// Mask-network input: LPS of the reference channel, IPDs and the angle
/// feature stacked along rows.
#[derive(Debug, Clone)]
pub struct FeaturePack {
    pub lps: Array2<f64>,
    pub ipds: Array2<f64>,
    pub af: Array2<f64>,
    pub concatenated: Array2<f64>,
}

impl FeaturePack {
    pub fn new(lps: Array2<f64>, ipds: Array2<f64>, af: Array2<f64>) -> Result<Self> {
        let n = lps.ncols();
        if ipds.ncols() != n || af.ncols() != n {
            return Err(shape_err("feature planes disagree on frame count"));
        }
        let rows = lps.nrows() + ipds.nrows() + af.nrows();
        let mut concatenated = Array2::zeros((rows, n));
        let (a, b) = (lps.nrows(), lps.nrows() + ipds.nrows());
        concatenated.slice_mut(s![..a, ..]).assign(&lps);
        concatenated.slice_mut(s![a..b, ..]).assign(&ipds);
        concatenated.slice_mut(s![b.., ..]).assign(&af);
        Ok(FeaturePack {
            lps,
            ipds,
            af,
            concatenated,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.concatenated.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.concatenated.nrows()
    }
}

/// Rows of the concatenated plane for a given STFT size and pair count.
pub fn feature_rows(frame_spec: &FrameSpec, num_pairs: usize) -> usize {
    frame_spec.num_bins() * (num_pairs + 2)
}

/// Builds the feature pack from per-channel spectrograms (channel 0 is the
/// reference).
pub fn feature_pack(specs: &[ComplexSpectrogram], steering: &SteeringRatio) -> Result<FeaturePack> {
    let reference = specs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no channels".into()))?;
    let (bins, frames) = reference.bins.dim();
    let mut ipds = Array2::zeros((bins * steering.pairs.len(), frames));
    for (k, &(a, b)) in steering.pairs.iter().enumerate() {
        if a >= specs.len() || b >= specs.len() {
            return Err(shape_err(format!("pair ({a}, {b}) needs more channels")));
        }
        ipds.slice_mut(s![k * bins..(k + 1) * bins, ..])
            .assign(&ipd(&specs[a], &specs[b])?);
    }
    let af = angle_feature(specs, steering)?;
    FeaturePack::new(lps(reference), ipds, af)
}

/// STFT of every channel.
pub fn multichannel_stft(wave: &MultiChannelWave, frame_spec: &FrameSpec) -> Result<Vec<ComplexSpectrogram>> {
    (0..wave.channels())
        .map(|c| dsp::stft(wave.channel(c).as_slice().expect("contiguous"), frame_spec))
        .collect()
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters over the one-sided spectrum, `[filters x bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub weights: Array2<f64>,
}

impl MelFilterbank {
    pub fn new(num_filters: usize, fft_size: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Result<Self> {
        if num_filters == 0 || fft_size < 2 || !(fmax > fmin) || fmin < 0.0 {
            return Err(Error::InvalidArgument("invalid mel filterbank parameters".into()));
        }
        let bins = fft_size / 2 + 1;
        let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..num_filters + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (num_filters + 1) as f64))
            .collect();
        let mut weights = Array2::zeros((num_filters, bins));
        for m in 0..num_filters {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            for f in 0..bins {
                let hz = f as f64 * sample_rate as f64 / fft_size as f64;
                let w = if hz > l && hz <= c {
                    (hz - l) / (c - l)
                } else if hz > c && hz < r {
                    (r - hz) / (r - c)
                } else {
                    0.0
                };
                weights[[m, f]] = w;
            }
        }
        Ok(MelFilterbank { weights })
    }

    pub fn num_filters(&self) -> usize {
        self.weights.nrows()
    }
}

/// Log mel filterbank layer: Hamming-windowed frames zero-padded to the FFT
/// size, power spectrum, a fixed `bins -> filters` linear map and a floored
/// log. Differentiable with respect to the waveform.
#[derive(Debug, Clone)]
pub struct LfbLayer {
    pub filterbank: MelFilterbank,
    pub win_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub floor: f64,
    window: Vec<f64>,
}

/// Intermediate values kept by [`LfbLayer::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LfbCache {
    spectra: Vec<Vec<Complex64>>,
    mel: Array2<f64>,
    num_samples: usize,
}

impl Default for LfbLayer {
    fn default() -> Self {
        Self::new(40, 400, 160, 512, 16_000).expect("default LFB parameters are valid")
    }
}

impl LfbLayer {
    pub fn new(num_filters: usize, win_len: usize, hop: usize, fft_size: usize, sample_rate: u32) -> Result<Self> {
        if win_len > fft_size || hop == 0 || win_len == 0 {
            return Err(Error::InvalidArgument("invalid LFB framing".into()));
        }
        let filterbank = MelFilterbank::new(num_filters, fft_size, sample_rate, 0.0, sample_rate as f64 / 2.0)?;
        let window = (0..win_len)
            .map(|k| 0.54 - 0.46 * (2.0 * PI * k as f64 / (win_len - 1) as f64).cos())
            .collect();
        Ok(LfbLayer {
            filterbank,
            win_len,
            hop,
            fft_size,
            floor: 1e-8,
            window,
        })
    }

    pub fn num_frames(&self, num_samples: usize) -> Result<usize> {
        if num_samples < self.win_len {
            return Err(Error::InsufficientSamples {
                needed: self.win_len,
                got: num_samples,
            });
        }
        Ok((num_samples - self.win_len) / self.hop + 1)
    }

    pub fn forward(&self, wave: &[f64]) -> Result<(Array2<f64>, LfbCache)> {
        let frames = self.num_frames(wave.len())?;
        let bins = self.fft_size / 2 + 1;
        let fft = dsp::forward_fft(self.fft_size);
        let mut power = Array2::zeros((bins, frames));
        let mut spectra = Vec::with_capacity(frames);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_size];
        for n in 0..frames {
            let start = n * self.hop;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = if k < self.win_len {
                    Complex64::new(wave[start + k] * self.window[k], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            fft.process(&mut buf);
            for f in 0..bins {
                power[[f, n]] = buf[f].norm_sqr();
            }
            spectra.push(buf[..bins].to_vec());
        }
        let mel = self.filterbank.weights.dot(&power);
        let out = mel.mapv(|v| v.max(self.floor).ln());
        Ok((
            out,
            LfbCache {
                spectra,
                mel,
                num_samples: wave.len(),
            },
        ))
    }

    /// Gradient with respect to the waveform given a gradient on the output.
    pub fn backward(&self, cache: &LfbCache, grad: &Array2<f64>) -> Vec<f64> {
        let mut g_mel = grad.clone();
        ndarray::Zip::from(&mut g_mel)
            .and(&cache.mel)
            .for_each(|g, &m| *g = if m > self.floor { *g / m } else { 0.0 });
        let g_power = self.filterbank.weights.t().dot(&g_mel);
        let ifft = dsp::inverse_fft(self.fft_size);
        let mut out = vec![0.0; cache.num_samples];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_size];
        for (n, spectrum) in cache.spectra.iter().enumerate() {
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            for (f, x) in spectrum.iter().enumerate() {
                buf[f] = x * g_power[[f, n]];
            }
            ifft.process(&mut buf);
            let start = n * self.hop;
            for k in 0..self.win_len {
                out[start + k] += 2.0 * buf[k].re * self.window[k];
            }
        }
        out
    }

    pub fn apply(&self, wave: &[f64]) -> Result<Array2<f64>> {
        self.forward(wave).map(|(out, _)| out)
    }
}

/// Log filterbank features of a 16 kHz mono waveform with the default
/// 40-filter, 25 ms / 10 ms layer.
pub fn lfb(waveform: &[f64]) -> Result<Array2<f64>> {
    LfbLayer::default().apply(waveform)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::room::{simulate_rir, AbsorptionModel, RoomSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spec(seed: u64, frames: usize) -> ComplexSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fs = FrameSpec::default();
        let bins = Array2::from_shape_fn((257, frames), |_| {
            Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))
        });
        ComplexSpectrogram::new(bins, fs).unwrap()
    }

    #[test]
    fn lps_values() {
        let fs = FrameSpec::default();
        let ones = ComplexSpectrogram::new(Array2::from_elem((257, 3), Complex64::new(0.6, 0.8)), fs).unwrap();
        assert!(lps(&ones).iter().all(|v| v.abs() < 1e-15));
        let zeros = ComplexSpectrogram::zeros(2, fs);
        assert!(lps(&zeros).iter().all(|v| (v - (-27.631021115928547)).abs() < 1e-12));
        let r = random_spec(1, 4);
        for (l, c) in lps(&r).iter().zip(&r.bins) {
            if c.norm_sqr() > LPS_FLOOR {
                assert!((l.exp() / c.norm_sqr() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ipd_invariances() {
        let a = random_spec(2, 5);
        assert!(ipd(&a, &a).unwrap().iter().all(|v| *v == 0.0));
        let mut b = a.clone();
        b.bins.mapv_inplace(|c| c * 3.0);
        assert!(ipd(&a, &b).unwrap().iter().all(|v| v.abs() < 1e-12));
        let c = random_spec(3, 5);
        let p = ipd(&a, &c).unwrap();
        let q = ipd(&c, &a).unwrap();
        for (x, y) in p.iter().zip(&q) {
            let s = (x + y).rem_euclid(2.0 * PI);
            assert!(s < 1e-9 || (2.0 * PI - s) < 1e-9);
            assert!(*x > -PI && *x <= PI);
        }
        assert!(ipd(&a, &random_spec(4, 6)).is_err());
    }

    #[test]
    fn ipd_of_delayed_tone() {
        let fs = FrameSpec::default();
        let bin = 40usize;
        let hz = bin as f64 * 16000.0 / 512.0;
        let d = 3usize;
        let x: Vec<f64> = (0..8000).map(|t| (2.0 * PI * hz * t as f64 / 16000.0).sin()).collect();
        let y: Vec<f64> = (0..8000)
            .map(|t| if t >= d { x[t - d] } else { 0.0 })
            .collect();
        let p = ipd(&dsp::stft(&x, &fs).unwrap(), &dsp::stft(&y, &fs).unwrap()).unwrap();
        let expected = (2.0 * PI * hz * d as f64 / 16000.0 + PI).rem_euclid(2.0 * PI) - PI;
        for n in 1..p.ncols() {
            assert!((p[[bin, n]] - expected).abs() < 0.05, "{} vs {expected}", p[[bin, n]]);
        }
    }

    fn steering_matched(seed: u64) -> (Vec<ComplexSpectrogram>, SteeringRatio) {
        let g = ArrayGeometry::default();
        let fs = FrameSpec::default();
        let st = SteeringRatio::new(&g, 30.0, &fs).unwrap();
        let base = random_spec(seed, 4);
        let mut specs = vec![base.clone(); 6];
        // Build channels consistent with the steering phase for every pair by
        // giving channel m the phase of a far-field wave.
        let mics = g.mic_positions();
        let u = [30f64.to_radians().cos(), 30f64.to_radians().sin()];
        for (m, spec) in specs.iter_mut().enumerate() {
            let t = -(mics[m][0] * u[0] + mics[m][1] * u[1]) / SOUND_SPEED;
            for f in 0..257 {
                let hz = f as f64 * 16000.0 / 512.0;
                let rot = Complex64::from_polar(1.0, -2.0 * PI * hz * t);
                for n in 0..4 {
                    spec.bins[[f, n]] = base.bins[[f, n]] * rot;
                }
            }
        }
        (specs, st)
    }

    #[test]
    fn angle_feature_extremes() {
        let (specs, st) = steering_matched(5);
        let af = angle_feature(&specs, &st).unwrap();
        assert!(af.iter().all(|v| (v - 6.0).abs() < 1e-9));
        let mut flipped = specs.clone();
        // Observed phases offset from the steering phases by pi on every pair.
        let mut neg = st.clone();
        neg.coeffs.mapv_inplace(|c| -c);
        let af2 = angle_feature(&flipped, &neg).unwrap();
        assert!(af2.iter().all(|v| (v + 6.0).abs() < 1e-9));
        // Gains per channel do not matter.
        for (m, s) in flipped.iter_mut().enumerate() {
            s.bins.mapv_inplace(|c| c * (1.0 + m as f64));
        }
        let af3 = angle_feature(&flipped, &st).unwrap();
        assert!(af3.iter().all(|v| (v - 6.0).abs() < 1e-9));
        assert!(af.iter().all(|v| (-6.0..=6.0).contains(v)));
    }

    #[test]
    fn angle_feature_prefers_target_direction() {
        let fs = FrameSpec::default();
        let mut room = RoomSpec::new([6.0, 6.0, 3.0], 0.3);
        room.max_image_order = 0;
        room.absorption = AbsorptionModel::Sabine;
        let g = ArrayGeometry::with_center([3.0, 3.0, 1.5]);
        let src = [3.0 + 2.0 * 40f64.to_radians().cos(), 3.0 + 2.0 * 40f64.to_radians().sin(), 1.5];
        let rir = simulate_rir(&room, &src, &g, 16000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s: Vec<f64> = (0..16000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let chans: Vec<ComplexSpectrogram> = (0..6)
            .map(|m| dsp::stft(&dsp::convolve(&s, &rir.channel(m), 16000), &fs).unwrap())
            .collect();
        let on = angle_feature(&chans, &SteeringRatio::new(&g, 40.0, &fs).unwrap()).unwrap();
        let off = angle_feature(&chans, &SteeringRatio::new(&g, 130.0, &fs).unwrap()).unwrap();
        // Speech-active bins: skip DC and the top band where spatial aliasing is weak.
        let band = s![8..250, 2..];
        let m_on = on.slice(band).mean().unwrap();
        let m_off = off.slice(band).mean().unwrap();
        assert!(m_on > m_off + 0.5, "{m_on} vs {m_off}");
    }

    #[test]
    fn feature_pack_shape() {
        let g = ArrayGeometry::default();
        let fs = FrameSpec::default();
        let specs: Vec<_> = (0..6).map(|i| random_spec(10 + i, 7)).collect();
        let st = SteeringRatio::new(&g, 0.0, &fs).unwrap();
        let fp = feature_pack(&specs, &st).unwrap();
        assert_eq!(fp.num_rows(), 2056);
        assert_eq!(feature_rows(&fs, 6), 2056);
        assert_eq!(fp.num_frames(), 7);
        assert!(fp.ipds.iter().all(|v| *v > -PI && *v <= PI));
        assert!(fp.af.iter().all(|v| v.abs() <= 6.0 + 1e-12));
        assert!(SteeringRatio::new(&g, f64::NAN, &fs).is_err());
    }

    #[test]
    fn mel_filterbank_coverage() {
        let fb = MelFilterbank::new(40, 512, 16000, 0.0, 8000.0).unwrap();
        assert_eq!(fb.weights.dim(), (40, 257));
        assert!(fb.weights.iter().all(|w| *w >= 0.0));
        for m in 0..40 {
            assert!(fb.weights.row(m).sum() > 0.0);
        }
        for f in 1..256 {
            assert!(fb.weights.column(f).sum() > 0.0, "bin {f} uncovered");
        }
    }

    #[test]
    fn lfb_shape_silence_and_scaling() {
        let silence = lfb(&vec![0.0; 16000]).unwrap();
        assert_eq!(silence.dim(), (40, (16000 - 400) / 160 + 1));
        assert!(silence.iter().all(|v| (v - 1e-8f64.ln()).abs() < 1e-12));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..4000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let (a, b) = (lfb(&x).unwrap(), lfb(&x2).unwrap());
        for (p, q) in a.iter().zip(&b) {
            assert!((q - p - 4f64.ln()).abs() < 1e-6);
        }
        assert!(lfb(&[0.0; 399]).is_err());
    }

    #[test]
    fn lfb_gradient_matches_finite_differences() {
        let layer = LfbLayer::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..720).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let weights = Array2::from_shape_fn((40, 3), |_| rng.gen_range(-1.0..1.0));
        let loss = |w: &[f64]| (layer.apply(w).unwrap() * &weights).sum();
        let (_, cache) = layer.forward(&x).unwrap();
        let g = layer.backward(&cache, &weights);
        for i in (0..x.len()).step_by(37) {
            let h = 1e-6;
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let num = (loss(&xp) - loss(&xm)) / (2.0 * h);
            let err = (num - g[i]).abs();
            assert!(err <= 1e-4 * num.abs().max(g[i].abs()) || err < 1e-6, "{i}: {num} vs {}", g[i]);
        }
    }
}
