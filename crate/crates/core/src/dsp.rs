//! Fixed STFT / iSTFT transforms with square-root Hann windows.
//!
//! Frames are not centred: frame `n` covers samples `[n*hop, n*hop + kernel)`.
//! At 50% overlap the analysis and synthesis windows multiply to a periodic
//! Hann window, whose shifted copies sum to exactly one, so `istft(stft(x))`
//! reproduces `x` everywhere two frames overlap.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    SqrtHann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub kernel_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub window: Window,
}

impl Default for FrameSpec {
    fn default() -> Self {
        FrameSpec {
            kernel_size: 512,
            hop: 256,
            sample_rate: DEFAULT_SAMPLE_RATE,
            window: Window::SqrtHann,
        }
    }
}

impl FrameSpec {
    pub fn new(kernel_size: usize, hop: usize, sample_rate: u32) -> Result<Self> {
        let spec = FrameSpec {
            kernel_size,
            hop,
            sample_rate,
            window: Window::SqrtHann,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks size constraints and that the window pair sums to a constant
    /// under overlap-add at the configured hop.
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.hop == 0 || self.hop > self.kernel_size {
            return Err(Error::InvalidArgument(format!(
                "frame spec requires 0 < hop <= kernel_size, got kernel {} hop {}",
                self.kernel_size, self.hop
            )));
        }
        if self.kernel_size % self.hop != 0 {
            return Err(Error::InvalidArgument(
                "kernel_size must be a multiple of hop".into(),
            ));
        }
        let gain = self.cola_gain();
        let w = self.window();
        for phase in 0..self.hop {
            let sum: f64 = (phase..self.kernel_size)
                .step_by(self.hop)
                .map(|k| w[k] * w[k])
                .sum();
            if (sum - gain).abs() > 1e-9 * gain.max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "window does not satisfy constant overlap-add at hop {}",
                    self.hop
                )));
            }
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.kernel_size / 2 + 1
    }

    pub fn num_frames(&self, num_samples: usize) -> Result<usize> {
        if num_samples < self.kernel_size {
            return Err(Error::InsufficientSamples {
                needed: self.kernel_size,
                got: num_samples,
            });
        }
        Ok((num_samples - self.kernel_size) / self.hop + 1)
    }

    /// Shortest framed length (a whole number of hops past one frame) that is
    /// at least `num_samples`.
    pub fn covering_len(&self, num_samples: usize) -> usize {
        if num_samples <= self.kernel_size {
            return self.kernel_size;
        }
        self.span((num_samples - self.kernel_size).div_ceil(self.hop) + 1)
    }

    /// Number of samples covered by `num_frames` frames.
    pub fn span(&self, num_frames: usize) -> usize {
        if num_frames == 0 {
            0
        } else {
            (num_frames - 1) * self.hop + self.kernel_size
        }
    }

    pub fn window(&self) -> Vec<f64> {
        match self.window {
            Window::SqrtHann => sqrt_hann(self.kernel_size),
        }
    }

    /// Overlap-add sum of analysis times synthesis window.
    pub fn cola_gain(&self) -> f64 {
        let w = self.window();
        w.iter().map(|v| v * v).sum::<f64>() / self.hop as f64
    }
}

/// Periodic square-root Hann window.
pub fn sqrt_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| (0.5 - 0.5 * (2.0 * PI * k as f64 / n as f64).cos()).sqrt())
        .collect()
}

/// Multi-channel waveform, one row per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelWave {
    pub samples: Array2<f64>,
    pub sample_rate: u32,
}

impl MultiChannelWave {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::Data("waveform must have at least one channel".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("waveform contains non-finite samples".into()));
        }
        Ok(MultiChannelWave {
            samples,
            sample_rate,
        })
    }

    pub fn from_mono(samples: &[f64], sample_rate: u32) -> Result<Self> {
        let arr = Array2::from_shape_vec((1, samples.len()), samples.to_vec())
            .map_err(|e| shape_err(e.to_string()))?;
        Self::new(arr, sample_rate)
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }

    pub fn channel(&self, c: usize) -> ArrayView1<'_, f64> {
        self.samples.row(c)
    }

    pub fn channel_vec(&self, c: usize) -> Vec<f64> {
        self.samples.row(c).to_vec()
    }
}

/// One-sided complex spectrogram, `bins[f, n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub bins: Array2<Complex64>,
    pub frame_spec: FrameSpec,
}

impl ComplexSpectrogram {
    pub fn new(bins: Array2<Complex64>, frame_spec: FrameSpec) -> Result<Self> {
        if bins.nrows() != frame_spec.num_bins() {
            return Err(shape_err(format!(
                "spectrogram has {} bins, frame spec implies {}",
                bins.nrows(),
                frame_spec.num_bins()
            )));
        }
        Ok(ComplexSpectrogram { bins, frame_spec })
    }

    pub fn zeros(num_frames: usize, frame_spec: FrameSpec) -> Self {
        ComplexSpectrogram {
            bins: Array2::zeros((frame_spec.num_bins(), num_frames)),
            frame_spec,
        }
    }

    pub fn num_bins(&self) -> usize {
        self.bins.nrows()
    }

    pub fn num_frames(&self) -> usize {
        self.bins.ncols()
    }

    pub fn re(&self) -> Array2<f64> {
        self.bins.mapv(|c| c.re)
    }

    pub fn im(&self) -> Array2<f64> {
        self.bins.mapv(|c| c.im)
    }

    pub fn from_parts(re: &Array2<f64>, im: &Array2<f64>, frame_spec: FrameSpec) -> Result<Self> {
        if re.dim() != im.dim() {
            return Err(shape_err("real and imaginary planes differ in shape"));
        }
        let mut bins = Array2::zeros(re.dim());
        ndarray::Zip::from(&mut bins)
            .and(re)
            .and(im)
            .for_each(|b, &r, &i| *b = Complex64::new(r, i));
        Self::new(bins, frame_spec)
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn forward_fft(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

pub(crate) fn inverse_fft(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// Short-time Fourier transform of one channel.
pub fn stft(wave: &[f64], spec: &FrameSpec) -> Result<ComplexSpectrogram> {
    spec.validate()?;
    let frames = spec.num_frames(wave.len())?;
    let k = spec.kernel_size;
    let bins_n = spec.num_bins();
    let window = spec.window();
    let fft = forward_fft(k);
    let mut buf = vec![Complex64::new(0.0, 0.0); k];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut bins = Array2::zeros((bins_n, frames));
    for n in 0..frames {
        let start = n * spec.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(wave[start + i] * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for f in 0..bins_n {
            bins[[f, n]] = buf[f];
        }
    }
    Ok(ComplexSpectrogram {
        bins,
        frame_spec: *spec,
    })
}

/// Inverse STFT by windowed overlap-add, trimmed to `num_samples`.
pub fn istft(spectrogram: &ComplexSpectrogram, num_samples: usize) -> Result<Vec<f64>> {
    let spec = spectrogram.frame_spec;
    spec.validate()?;
    if spectrogram.num_bins() != spec.num_bins() {
        return Err(shape_err("spectrogram bins inconsistent with frame spec"));
    }
    let span = spec.span(spectrogram.num_frames());
    if num_samples > span {
        return Err(Error::InvalidArgument(format!(
            "requested {num_samples} samples but {} frames reconstruct only {span}",
            spectrogram.num_frames()
        )));
    }
    let mut out = overlap_add(&spectrogram.re(), &spectrogram.im(), &spec);
    out.truncate(num_samples);
    Ok(out)
}

/// Overlap-add synthesis from separate real/imaginary planes. The output
/// covers the full span of the frames. Imaginary parts of the DC and
/// Nyquist bins are ignored.
pub(crate) fn overlap_add(re: &Array2<f64>, im: &Array2<f64>, spec: &FrameSpec) -> Vec<f64> {
    let k = spec.kernel_size;
    let frames = re.ncols();
    let bins_n = re.nrows();
    let window = spec.window();
    let gain = spec.cola_gain();
    let ifft = inverse_fft(k);
    let mut buf = vec![Complex64::new(0.0, 0.0); k];
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    let mut out = vec![0.0; spec.span(frames)];
    let scale = 1.0 / (k as f64 * gain);
    for n in 0..frames {
        for f in 0..bins_n {
            let v = Complex64::new(re[[f, n]], im[[f, n]]);
            buf[f] = v;
        }
        buf[0].im = 0.0;
        if k % 2 == 0 {
            buf[k / 2].im = 0.0;
        }
        for f in bins_n..k {
            buf[f] = buf[k - f].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = n * spec.hop;
        for i in 0..k {
            out[start + i] += buf[i].re * window[i] * scale;
        }
    }
    out
}

/// Adjoint of [`overlap_add`] restricted to its first `num_samples` outputs:
/// maps a gradient on the waveform to gradients on the real and imaginary
/// planes.
pub(crate) fn overlap_add_adjoint(
    grad: &[f64],
    bins_n: usize,
    frames: usize,
    spec: &FrameSpec,
) -> (Array2<f64>, Array2<f64>) {
    let k = spec.kernel_size;
    let window = spec.window();
    let gain = spec.cola_gain();
    let fft = forward_fft(k);
    let mut buf = vec![Complex64::new(0.0, 0.0); k];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut gre = Array2::zeros((bins_n, frames));
    let mut gim = Array2::zeros((bins_n, frames));
    let scale = 1.0 / (k as f64 * gain);
    for n in 0..frames {
        let start = n * spec.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            let g = grad.get(start + i).copied().unwrap_or(0.0);
            *b = Complex64::new(g * window[i] * scale, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for f in 0..bins_n {
            let c = if f == 0 || (k % 2 == 0 && f == k / 2) { 1.0 } else { 2.0 };
            gre[[f, n]] = c * buf[f].re;
            gim[[f, n]] = if c == 1.0 { 0.0 } else { c * buf[f].im };
        }
    }
    (gre, gim)
}

/// Element-wise modulus and argument. The argument lies in `(-pi, pi]` and
/// zero bins get phase 0.
pub fn magnitude_phase(spec: &ComplexSpectrogram) -> (Array2<f64>, Array2<f64>) {
    let mag = spec.bins.mapv(|c| c.norm());
    let phase = spec.bins.mapv(wrapped_arg);
    (mag, phase)
}

pub(crate) fn wrapped_arg(c: Complex64) -> f64 {
    if c.re == 0.0 && c.im == 0.0 {
        return 0.0;
    }
    let a = c.im.atan2(c.re);
    if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}

/// Spectral energy `sum_f c_f |X_f|^2 / K` (one-sided weights `c_f`), equal
/// to the time-domain energy of a signal that vanishes outside the
/// fully-overlapped interior.
pub fn spectral_energy(spec: &ComplexSpectrogram) -> f64 {
    let k = spec.frame_spec.kernel_size;
    let bins_n = spec.num_bins();
    let mut total = 0.0;
    for (f, row) in spec.bins.outer_iter().enumerate() {
        let c = if f == 0 || (k % 2 == 0 && f == bins_n - 1) { 1.0 } else { 2.0 };
        total += c * row.iter().map(|v| v.norm_sqr()).sum::<f64>();
    }
    total / (k as f64 * spec.frame_spec.cola_gain())
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn to_array1(x: &[f64]) -> Array1<f64> {
    Array1::from(x.to_vec())
}

/// Linear convolution of `x` with `h`, truncated to `out_len` samples.
pub fn convolve(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; out_len];
    }
    let full = x.len() + h.len() - 1;
    let n = full.next_power_of_two();
    let fft = forward_fft(n);
    let ifft = inverse_fft(n);
    let mut a: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    let mut b: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(h.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    fft.process(&mut a);
    fft.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    ifft.process(&mut a);
    let scale = 1.0 / n as f64;
    (0..out_len)
        .map(|i| if i < full { a[i].re * scale } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn direct_dft(frame: &[f64], f: usize) -> Complex64 {
        let k = frame.len();
        frame
            .iter()
            .enumerate()
            .map(|(i, &x)| Complex64::from_polar(x, -2.0 * PI * (f * i) as f64 / k as f64))
            .sum()
    }

    #[test]
    fn zero_input_gives_zero_spectrogram() {
        let spec = FrameSpec::default();
        let s = stft(&vec![0.0; 16000], &spec).unwrap();
        assert_eq!(s.num_frames(), 61);
        assert_eq!(s.num_bins(), 257);
        assert!(s.bins.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn short_input_is_rejected() {
        let err = stft(&[0.0; 100], &FrameSpec::default()).unwrap_err();
        assert!(err.to_string().contains("insufficient samples"));
    }

    #[test]
    fn sine_peaks_at_expected_bin_and_matches_direct_dft() {
        let spec = FrameSpec::default();
        let x: Vec<f64> = (0..16000)
            .map(|t| (2.0 * PI * 1000.0 * t as f64 / 16000.0).sin())
            .collect();
        let s = stft(&x, &spec).unwrap();
        let w = spec.window();
        for n in [0, 17, 60] {
            let col = s.bins.column(n);
            let peak = (0..col.len())
                .max_by(|&a, &b| col[a].norm().partial_cmp(&col[b].norm()).unwrap())
                .unwrap();
            assert_eq!(peak, 32);
            let frame: Vec<f64> = (0..512).map(|i| x[n * 256 + i] * w[i]).collect();
            for f in [0, 5, 32, 100, 256] {
                let d = direct_dft(&frame, f);
                assert!((d - col[f]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn round_trip_interior() {
        let spec = FrameSpec::default();
        let x = noise(16000, 3);
        let s = stft(&x, &spec).unwrap();
        let span = spec.span(s.num_frames());
        let y = istft(&s, span).unwrap();
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for t in 512..(span - 512) {
            assert!((x[t] - y[t]).abs() < 1e-6 * peak);
        }
    }

    #[test]
    fn round_trip_against_direct_overlap_add() {
        // Independent synthesis: inverse DFT by direct summation per frame.
        let spec = FrameSpec::new(64, 32, 16000).unwrap();
        let x = noise(640, 9);
        let s = stft(&x, &spec).unwrap();
        let w = spec.window();
        let k = 64usize;
        let mut oracle = vec![0.0; spec.span(s.num_frames())];
        for n in 0..s.num_frames() {
            for i in 0..k {
                let mut v = 0.0;
                for f in 0..k {
                    let c = if f <= k / 2 { s.bins[[f, n]] } else { s.bins[[k - f, n]].conj() };
                    v += (c * Complex64::from_polar(1.0, 2.0 * PI * (f * i) as f64 / k as f64)).re;
                }
                oracle[n * 32 + i] += v / k as f64 * w[i];
            }
        }
        let y = istft(&s, oracle.len()).unwrap();
        for (a, b) in y.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_spectrogram_gives_silence() {
        let spec = FrameSpec::default();
        let s = ComplexSpectrogram::zeros(10, spec);
        let y = istft(&s, spec.span(10)).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn istft_rejects_overlong_request() {
        let spec = FrameSpec::default();
        let s = ComplexSpectrogram::zeros(3, spec);
        assert!(istft(&s, spec.span(3) + 1).is_err());
    }

    #[test]
    fn magnitude_phase_conventions() {
        let spec = FrameSpec::new(4, 2, 16000).unwrap();
        let mut s = ComplexSpectrogram::zeros(2, spec);
        s.bins[[0, 0]] = Complex64::new(-1.0, 0.0);
        s.bins[[1, 0]] = Complex64::new(-1.0, -0.0);
        let (m, p) = magnitude_phase(&s);
        assert_eq!(m[[0, 0]], 1.0);
        assert_eq!(p[[0, 0]], PI);
        assert_eq!(p[[1, 0]], PI);
        assert_eq!(m[[2, 1]], 0.0);
        assert_eq!(p[[2, 1]], 0.0);
    }

    #[test]
    fn magnitude_phase_recomposes() {
        let spec = FrameSpec::default();
        let s = stft(&noise(2048, 1), &spec).unwrap();
        let (m, p) = magnitude_phase(&s);
        for ((c, &mag), &ph) in s.bins.iter().zip(&m).zip(&p) {
            assert!((Complex64::from_polar(mag, ph) - c).norm() < 1e-12 * (1.0 + mag));
            assert!(ph > -PI && ph <= PI);
        }
    }

    #[test]
    fn linearity() {
        let spec = FrameSpec::default();
        let x = noise(4000, 1);
        let y = noise(4000, 2);
        let (a, b) = (0.7, -2.3);
        let z: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let (sx, sy, sz) = (
            stft(&x, &spec).unwrap(),
            stft(&y, &spec).unwrap(),
            stft(&z, &spec).unwrap(),
        );
        for ((p, q), r) in sx.bins.iter().zip(&sy.bins).zip(&sz.bins) {
            assert!((p * a + q * b - r).norm() < 1e-9);
        }
    }

    #[test]
    fn parseval_energy_on_interior_supported_signal() {
        let spec = FrameSpec::default();
        let mut x = noise(8192, 4);
        for v in x.iter_mut().take(512) {
            *v = 0.0;
        }
        for v in x.iter_mut().skip(8192 - 512) {
            *v = 0.0;
        }
        let s = stft(&x, &spec).unwrap();
        let e = energy(&x);
        assert!((spectral_energy(&s) - e).abs() < 1e-6 * e);
    }

    #[test]
    fn fft_convolution_matches_direct_sum() {
        let x = noise(300, 5);
        let h = noise(40, 6);
        let y = convolve(&x, &h, 350);
        for (t, v) in y.iter().enumerate() {
            let mut d = 0.0;
            for (j, hv) in h.iter().enumerate() {
                if t >= j && t - j < x.len() {
                    d += hv * x[t - j];
                }
            }
            assert!((d - v).abs() < 1e-10);
        }
    }

    #[test]
    fn invalid_frame_specs() {
        assert!(FrameSpec::new(0, 1, 16000).is_err());
        assert!(FrameSpec::new(512, 600, 16000).is_err());
        assert!(FrameSpec::new(512, 200, 16000).is_err());
        assert!(FrameSpec::new(512, 128, 16000).is_ok());
    }
}
