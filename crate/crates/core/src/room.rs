//! Image-method room impulse responses for shoebox rooms and two-speaker
//! reverberant mixtures recorded by a uniform circular array.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, MultiChannelWave};
use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub const SOUND_SPEED: f64 = 343.0;
pub const WALL_CLEARANCE: f64 = 0.3;
pub const SIR_CHOICES_DB: [f64; 3] = [-6.0, 0.0, 6.0];
pub const ROOM_MIN: Vec3 = [3.0, 3.0, 2.5];
pub const ROOM_MAX: Vec3 = [8.0, 10.0, 6.0];
pub const RT60_RANGE: (f64, f64) = (0.05, 0.5);
pub const DISTANCE_RANGE: (f64, f64) = (1.0, 5.0);

/// Default reflection-order cap. High enough that the length cutoff
/// `(rt60 + 50 ms) * fs` is what bounds every sampled room.
pub const DEFAULT_MAX_IMAGE_ORDER: usize = 100;

/// Taps of the windowed-sinc fractional delay kernel.
pub const SINC_TAPS: usize = 81;

/// Images arriving later than this (seconds) are placed at the nearest
/// integer sample instead of through the sinc kernel.
pub const FRACTIONAL_DELAY_HORIZON: f64 = 0.1;

const MAX_ALPHA: f64 = 1.0 - 1e-6;
const MIN_SOURCE_DISTANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub num_mics: usize,
    pub radius: f64,
    pub center: Vec3,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        ArrayGeometry {
            num_mics: 6,
            radius: 0.035,
            center: [0.0; 3],
        }
    }
}

impl ArrayGeometry {
    pub fn with_center(center: Vec3) -> Self {
        ArrayGeometry {
            center,
            ..Default::default()
        }
    }

    /// Microphone `m` sits at angle `2*pi*m/num_mics` in the horizontal plane.
    pub fn mic_positions(&self) -> Vec<Vec3> {
        (0..self.num_mics)
            .map(|m| {
                let a = 2.0 * PI * m as f64 / self.num_mics as f64;
                [
                    self.center[0] + self.radius * a.cos(),
                    self.center[1] + self.radius * a.sin(),
                    self.center[2],
                ]
            })
            .collect()
    }

    /// Azimuth in degrees `[0, 360)` of `pos` as seen from the array centre.
    pub fn doa_of(&self, pos: &Vec3) -> f64 {
        let a = (pos[1] - self.center[1]).atan2(pos[0] - self.center[0]).to_degrees();
        a.rem_euclid(360.0)
    }
}

/// How the simulator turns `rt60` into a wall absorption coefficient.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsorptionModel {
    /// Sabine's relation, see [`rt60_to_absorption`].
    Sabine,
    /// Absorption chosen so the image-lattice energy decay, measured the
    /// way a Schroeder T20 fit would, matches `rt60`.
    #[default]
    DecayMatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dims: Vec3,
    pub rt60: f64,
    pub sound_speed: f64,
    pub max_image_order: usize,
    #[serde(default)]
    pub absorption: AbsorptionModel,
}

impl RoomSpec {
    pub fn new(dims: Vec3, rt60: f64) -> Self {
        RoomSpec {
            dims,
            rt60,
            sound_speed: SOUND_SPEED,
            max_image_order: DEFAULT_MAX_IMAGE_ORDER,
            absorption: AbsorptionModel::default(),
        }
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + x * z + y * z)
    }

    pub fn contains(&self, p: &Vec3, clearance: f64) -> bool {
        (0..3).all(|i| p[i] >= clearance && p[i] <= self.dims[i] - clearance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub room: RoomSpec,
    pub array: ArrayGeometry,
    pub target_pos: Vec3,
    pub interferer_pos: Vec3,
    pub target_doa: f64,
    pub interferer_doa: f64,
    pub sir_db: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// Angle between the two speakers as seen from the array, in `[0, 180]`.
    pub fn angle_difference(&self) -> f64 {
        let d = (self.target_doa - self.interferer_doa).rem_euclid(360.0);
        d.min(360.0 - d)
    }

    pub fn validate(&self) -> Result<()> {
        let room = &self.room;
        for p in [&self.target_pos, &self.interferer_pos] {
            if !room.contains(p, WALL_CLEARANCE - 1e-9) {
                return Err(Error::Data("speaker closer than 0.3 m to a wall".into()));
            }
            let d = distance(p, &self.array.center);
            if !(DISTANCE_RANGE.0 - 1e-9..=DISTANCE_RANGE.1 + 1e-9).contains(&d) {
                return Err(Error::Data(format!("speaker-array distance {d:.3} m outside [1, 5]")));
            }
        }
        for m in self.array.mic_positions() {
            if !room.contains(&m, WALL_CLEARANCE - 1e-9) {
                return Err(Error::Data("microphone closer than 0.3 m to a wall".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub taps: Array2<f64>,
    pub sample_rate: u32,
}

impl Rir {
    pub fn len(&self) -> usize {
        self.taps.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.ncols() == 0
    }

    pub fn channel(&self, m: usize) -> Vec<f64> {
        self.taps.row(m).to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Absorption {
    pub alpha: f64,
    /// Set when Sabine's relation asked for `alpha >= 1` and the value was clamped.
    pub clamped: bool,
}

impl Absorption {
    /// Pressure reflection coefficient per wall bounce.
    pub fn reflection(&self) -> f64 {
        (1.0 - self.alpha).sqrt()
    }
}

pub fn distance(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Uniform wall absorption from Sabine's relation `alpha = 0.161 V / (S T60)`.
pub fn rt60_to_absorption(room: &RoomSpec) -> Result<Absorption> {
    let v = room.volume();
    if !(room.rt60 > 0.0) || !(v > 0.0) {
        return Err(Error::InvalidArgument(
            "rt60 and room volume must be positive".into(),
        ));
    }
    let alpha = 0.161 * v / (room.surface() * room.rt60);
    if alpha >= 1.0 {
        log::warn!(
            "room too small for requested RT60 {:.3} s (alpha {alpha:.3}); clamping",
            room.rt60
        );
        return Ok(Absorption {
            alpha: MAX_ALPHA,
            clamped: true,
        });
    }
    Ok(Absorption {
        alpha,
        clamped: false,
    })
}

/// Expected Schroeder T20 of a shoebox image-method RIR.
///
/// Images at distance `r` in direction `u` have undergone about
/// `r * sum_i |u_i| / L_i` reflections, and lattice density cancels
/// spherical spreading, so the reverberant energy envelope is a direction
/// average of exponentials. The direct path at `direct_distance` is added
/// on top before fitting -5..-25 dB.
fn lattice_t20(dims: &Vec3, alpha: f64, direct_distance: f64, c: f64) -> Option<f64> {
    const DIRECTIONS: usize = 400;
    let k = -(1.0 - alpha).ln();
    let golden = PI * (3.0 - 5f64.sqrt());
    let rates: Vec<f64> = (0..DIRECTIONS)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / DIRECTIONS as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = i as f64 * golden;
            let u = [r * phi.cos(), r * phi.sin(), z];
            k * c * (0..3).map(|j| u[j].abs() / dims[j]).sum::<f64>()
        })
        .collect();
    let volume: f64 = dims.iter().product();
    let t0 = direct_distance / c;
    let tail = |t: f64| -> f64 {
        rates.iter().map(|r| (-r * (t - t0)).exp() / r).sum::<f64>() / DIRECTIONS as f64 * c
            / (4.0 * PI * volume)
    };
    let direct = 1.0 / (16.0 * PI * PI * direct_distance * direct_distance);
    let total = direct + tail(t0);
    let slowest = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    // -25 dB is reached no later than when the slowest direction gets there.
    let horizon = 25.0 / (10.0 * std::f64::consts::LOG10_E) / slowest * 1.5;
    let steps = 400;
    let mut pts = Vec::with_capacity(steps);
    for i in 0..=steps {
        let t = t0 + horizon * i as f64 / steps as f64;
        let db = 10.0 * (tail(t) / total).log10();
        if (-25.0..=-5.0).contains(&db) {
            pts.push((t, db));
        }
    }
    fit_decay(&pts)
}

fn fit_decay(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope < 0.0).then(|| -60.0 / slope)
}

/// Absorption whose simulated decay matches `room.rt60` for a source at
/// `direct_distance` from the receivers. Falls back to clamping like
/// [`rt60_to_absorption`] when no absorption is high enough.
pub fn decay_matched_absorption(room: &RoomSpec, direct_distance: f64) -> Result<Absorption> {
    let sabine = rt60_to_absorption(room)?;
    let c = room.sound_speed;
    let t60 = |a: f64| lattice_t20(&room.dims, a, direct_distance, c);
    match t60(MAX_ALPHA) {
        Some(t) if t < room.rt60 => {}
        _ => return Ok(Absorption { alpha: MAX_ALPHA, clamped: true }),
    }
    let (mut lo, mut hi) = (1e-6, MAX_ALPHA);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        match t60(mid) {
            Some(t) if t > room.rt60 => lo = mid,
            Some(_) => hi = mid,
            None => return Ok(sabine),
        }
    }
    Ok(Absorption {
        alpha: 0.5 * (lo + hi),
        clamped: false,
    })
}

struct Image {
    pos: Vec3,
    gain: f64,
}

fn enumerate_images(room: &RoomSpec, source: &Vec3, reflection: f64, max_dist: f64) -> Vec<Image> {
    let mut images = Vec::new();
    let l = room.dims;
    let n_max: Vec<i64> = (0..3)
        .map(|i| (max_dist / (2.0 * l[i])).ceil() as i64 + 1)
        .collect();
    // Per-axis candidate coordinates with their reflection counts.
    let axis = |i: usize| -> Vec<(f64, usize)> {
        let mut out = Vec::new();
        for n in -n_max[i]..=n_max[i] {
            for q in 0..2i64 {
                let coord = (1 - 2 * q) as f64 * source[i] + 2.0 * n as f64 * l[i];
                let order = ((n - q).abs() + n.abs()) as usize;
                out.push((coord, order));
            }
        }
        out
    };
    let (ax, ay, az) = (axis(0), axis(1), axis(2));
    for &(x, ox) in &ax {
        for &(y, oy) in &ay {
            if ox + oy > room.max_image_order {
                continue;
            }
            for &(z, oz) in &az {
                let order = ox + oy + oz;
                if order > room.max_image_order {
                    continue;
                }
                images.push(Image {
                    pos: [x, y, z],
                    gain: reflection.powi(order as i32),
                });
            }
        }
    }
    images
}

fn hann_sinc(x: f64, half: f64, sin_pi_frac: f64, m: i64) -> f64 {
    // sin(pi (m - frac)) = -(-1)^m sin(pi frac), computed once per image.
    if x.abs() >= half {
        return 0.0;
    }
    let window = 0.5 * (1.0 + (PI * x / half).cos());
    let sinc = if x.abs() < 1e-12 {
        1.0
    } else {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        -sign * sin_pi_frac / (PI * x)
    };
    window * sinc
}

/// Multi-channel RIR by the image method with uniform absorption.
///
/// Each image contributes `reflection^order / (4 pi d)` at delay `d / c`.
/// Images within [`FRACTIONAL_DELAY_HORIZON`] go through an 81-tap
/// Hann-windowed sinc; later ones are rounded to the nearest sample. The
/// result is high-passed at 100 Hz.
pub fn simulate_rir(room: &RoomSpec, source: &Vec3, mics: &ArrayGeometry, sample_rate: u32) -> Result<Rir> {
    let absorption = match room.absorption {
        AbsorptionModel::Sabine => rt60_to_absorption(room)?,
        AbsorptionModel::DecayMatched => {
            decay_matched_absorption(room, distance(source, &mics.center).max(MIN_SOURCE_DISTANCE))?
        }
    };
    let fs = sample_rate as f64;
    let c = room.sound_speed;
    let mic_pos = mics.mic_positions();
    if !room.contains(source, 0.0) {
        return Err(Error::InvalidArgument("source outside room".into()));
    }
    for m in &mic_pos {
        if !room.contains(m, 0.0) {
            return Err(Error::InvalidArgument("microphone outside room".into()));
        }
        if distance(m, source) < MIN_SOURCE_DISTANCE {
            return Err(Error::InvalidArgument(
                "source coincides with a microphone (< 1 cm)".into(),
            ));
        }
    }
    let half = (SINC_TAPS / 2) as i64;
    let max_direct = mic_pos
        .iter()
        .map(|m| distance(m, source) / c * fs)
        .fold(0.0, f64::max);
    let len = (((room.rt60 + 0.05) * fs).ceil() as usize).max(max_direct.ceil() as usize + half as usize + 2);
    let max_dist = len as f64 / fs * c + SINC_TAPS as f64 / fs * c;
    let images = enumerate_images(room, source, absorption.reflection(), max_dist);
    let horizon = FRACTIONAL_DELAY_HORIZON * fs;
    let mut taps = Array2::zeros((mic_pos.len(), len));
    for (mi, m) in mic_pos.iter().enumerate() {
        let mut row = taps.row_mut(mi);
        for img in &images {
            let d = distance(&img.pos, m);
            let delay = d / c * fs;
            if delay >= (len as i64 + half) as f64 {
                continue;
            }
            let amp = img.gain / (4.0 * PI * d);
            if delay > horizon {
                let n = delay.round() as usize;
                if n < len {
                    row[n] += amp;
                }
                continue;
            }
            let centre = delay.round() as i64;
            let frac = delay - centre as f64;
            let sin_pi_frac = (PI * frac).sin();
            for m_off in -half..=half {
                let n = centre + m_off;
                if n < 0 || n >= len as i64 {
                    continue;
                }
                let x = n as f64 - delay;
                row[n as usize] += amp * hann_sinc(x, half as f64 + 1.0, sin_pi_frac, m_off);
            }
        }
    }
    for mut row in taps.rows_mut() {
        allen_berkley_highpass(row.as_slice_mut().expect("contiguous"), fs);
    }
    Ok(Rir { taps, sample_rate })
}

/// 100 Hz high-pass from Allen and Berkley. All image gains are positive,
/// so without it late reflections pile up coherently at low frequencies.
fn allen_berkley_highpass(h: &mut [f64], fs: f64) {
    let w = 2.0 * PI * 100.0 / fs;
    let r1 = (-w).exp();
    let b1 = 2.0 * r1 * w.cos();
    let b2 = -r1 * r1;
    let a1 = -(1.0 + r1);
    let mut y = [0.0f64; 3];
    for v in h.iter_mut() {
        y[2] = y[1];
        y[1] = y[0];
        y[0] = b1 * y[1] + b2 * y[2] + *v;
        *v = y[0] + a1 * y[1] + r1 * y[2];
    }
}

/// Reverberant mixture together with its components.
#[derive(Debug, Clone)]
pub struct SceneAudio {
    pub mixture: MultiChannelWave,
    pub reverb_target: MultiChannelWave,
    /// The reverberant interferer after SIR scaling.
    pub reverb_interferer: MultiChannelWave,
    pub interferer_gain: f64,
}

fn reverberate(src: &[f64], rir: &Rir, len: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rir.taps.nrows(), len));
    for m in 0..rir.taps.nrows() {
        let y = dsp::convolve(src, rir.taps.row(m).as_slice().expect("contiguous"), len);
        out.row_mut(m).assign(&ndarray::Array1::from(y));
    }
    out
}

/// Convolves both sources with their RIRs and scales the interferer so the
/// reference-channel reverberant energy ratio equals `scene.sir_db`.
/// The output length equals the target source length.
pub fn synthesize_scene(scene: &SceneSpec, target_src: &[f64], interf_src: &[f64], sample_rate: u32) -> Result<SceneAudio> {
    if dsp::energy(target_src) == 0.0 || dsp::energy(interf_src) == 0.0 {
        return Err(Error::Data("cannot set SIR: zero-energy source".into()));
    }
    let len = target_src.len();
    let rir_t = simulate_rir(&scene.room, &scene.target_pos, &scene.array, sample_rate)?;
    let rir_i = simulate_rir(&scene.room, &scene.interferer_pos, &scene.array, sample_rate)?;
    let target = reverberate(target_src, &rir_t, len);
    let interf = reverberate(interf_src, &rir_i, len);
    let e_t = target.row(0).iter().map(|v| v * v).sum::<f64>();
    let e_i = interf.row(0).iter().map(|v| v * v).sum::<f64>();
    if e_t == 0.0 || e_i == 0.0 {
        return Err(Error::Data("cannot set SIR: zero-energy reverberant source".into()));
    }
    let gain = (e_t / (e_i * 10f64.powf(scene.sir_db / 10.0))).sqrt();
    let interf = interf * gain;
    let mixture = &target + &interf;
    Ok(SceneAudio {
        mixture: MultiChannelWave::new(mixture, sample_rate)?,
        reverb_target: MultiChannelWave::new(target, sample_rate)?,
        reverb_interferer: MultiChannelWave::new(interf, sample_rate)?,
        interferer_gain: gain,
    })
}

fn sample_position(rng: &mut ChaCha8Rng, room: &RoomSpec, center: &Vec3) -> Option<(Vec3, f64)> {
    for _ in 0..200 {
        let d = rng.gen_range(DISTANCE_RANGE.0..=DISTANCE_RANGE.1);
        let doa: f64 = rng.gen_range(0.0..360.0);
        let a = doa.to_radians();
        let p = [center[0] + d * a.cos(), center[1] + d * a.sin(), center[2]];
        if room.contains(&p, WALL_CLEARANCE) {
            return Some((p, doa));
        }
    }
    None
}

/// Random scene: room, RT60, array placement, both speakers and SIR, drawn
/// uniformly and rejection-sampled until every clearance constraint holds.
/// Speakers share the array height.
pub fn sample_scene(rng_seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    loop {
        let dims = [
            rng.gen_range(ROOM_MIN[0]..=ROOM_MAX[0]),
            rng.gen_range(ROOM_MIN[1]..=ROOM_MAX[1]),
            rng.gen_range(ROOM_MIN[2]..=ROOM_MAX[2]),
        ];
        let rt60 = rng.gen_range(RT60_RANGE.0..=RT60_RANGE.1);
        let room = RoomSpec::new(dims, rt60);
        let margin = WALL_CLEARANCE + 0.035;
        let center = [
            rng.gen_range(margin..=dims[0] - margin),
            rng.gen_range(margin..=dims[1] - margin),
            rng.gen_range(1.0..=1.6),
        ];
        let array = ArrayGeometry::with_center(center);
        let Some((target_pos, target_doa)) = sample_position(&mut rng, &room, &center) else {
            continue;
        };
        let Some((interferer_pos, interferer_doa)) = sample_position(&mut rng, &room, &center) else {
            continue;
        };
        let sir_db = SIR_CHOICES_DB[rng.gen_range(0..SIR_CHOICES_DB.len())];
        let scene = SceneSpec {
            room,
            array,
            target_pos,
            interferer_pos,
            target_doa,
            interferer_doa,
            sir_db,
            seed: rng_seed,
        };
        if scene.validate().is_ok() {
            return scene;
        }
    }
}

/// Reverberation time from Schroeder backward integration, fitting the
/// energy decay curve between -5 and -25 dB and extrapolating to -60 dB.
pub fn schroeder_t60(rir: &[f64], sample_rate: u32) -> Option<f64> {
    let mut edc = vec![0.0; rir.len()];
    let mut acc = 0.0;
    for i in (0..rir.len()).rev() {
        acc += rir[i] * rir[i];
        edc[i] = acc;
    }
    let total = edc.first().copied()?;
    if total <= 0.0 {
        return None;
    }
    let db: Vec<f64> = edc.iter().map(|e| 10.0 * (e / total).max(1e-300).log10()).collect();
    let pts: Vec<(f64, f64)> = db
        .iter()
        .enumerate()
        .filter(|(_, &v)| (-25.0..=-5.0).contains(&v))
        .map(|(i, &v)| (i as f64 / sample_rate as f64, v))
        .collect();
    if pts.len() < 10 {
        return None;
    }
    fit_decay(&pts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_room(rt60: f64) -> RoomSpec {
        RoomSpec::new([5.0, 4.0, 3.0], rt60)
    }

    #[test]
    fn sabine_hand_value() {
        let a = rt60_to_absorption(&box_room(0.3)).unwrap();
        let expected = 0.161 * 60.0 / (94.0 * 0.3);
        assert!((a.alpha - expected).abs() < 1e-12);
        assert!((a.alpha - 0.3426).abs() < 1e-4);
        assert!(!a.clamped);
    }

    #[test]
    fn absorption_scaling_and_limits() {
        let a1 = rt60_to_absorption(&box_room(0.4)).unwrap().alpha;
        let a2 = rt60_to_absorption(&box_room(0.8)).unwrap().alpha;
        assert!((a1 / a2 - 2.0).abs() < 1e-12);
        let big = rt60_to_absorption(&box_room(1e6)).unwrap().alpha;
        assert!(big > 0.0 && big < 1e-6);
        let clamped = rt60_to_absorption(&box_room(0.01)).unwrap();
        assert!(clamped.clamped && clamped.alpha < 1.0);
        assert!(rt60_to_absorption(&box_room(0.0)).is_err());
    }

    #[test]
    fn anechoic_direct_path() {
        let mut room = box_room(0.3);
        room.absorption = AbsorptionModel::Sabine;
        room.max_image_order = 0;
        let array = ArrayGeometry::with_center([2.5, 2.0, 1.5]);
        let src = [2.5 + 2.0, 2.0, 1.5];
        let rir = simulate_rir(&room, &src, &array, 16000).unwrap();
        for (m, mic) in array.mic_positions().iter().enumerate() {
            let d = distance(mic, &src);
            let h = rir.channel(m);
            let peak = (0..h.len())
                .max_by(|&a, &b| h[a].abs().partial_cmp(&h[b].abs()).unwrap())
                .unwrap();
            let exact = d / SOUND_SPEED * 16000.0;
            assert!((peak as f64 - exact).abs() <= 1.0);
            // Band-limited amplitude at the exact delay.
            let interp: f64 = h
                .iter()
                .enumerate()
                .map(|(n, v)| {
                    let x = n as f64 - exact;
                    v * if x.abs() < 1e-12 { 1.0 } else { (PI * x).sin() / (PI * x) }
                })
                .sum();
            let amp = 1.0 / (4.0 * PI * d);
            assert!((interp - amp).abs() < 0.05 * amp, "{interp} vs {amp}");
        }
    }

    #[test]
    fn integer_delay_is_a_single_tap() {
        let mut room = box_room(0.3);
        room.max_image_order = 0;
        room.absorption = AbsorptionModel::Sabine;
        let mut array = ArrayGeometry::with_center([1.0, 2.0, 1.5]);
        array.num_mics = 1;
        array.radius = 0.0;
        // 343 m/s * 100 samples / 16 kHz = 2.14375 m
        let src = [1.0 + 2.14375, 2.0, 1.5];
        let rir = simulate_rir(&room, &src, &array, 16000).unwrap();
        let h = rir.channel(0);
        let amp = 1.0 / (4.0 * PI * 2.14375);
        // The high-pass passes the leading impulse unchanged and leaves only
        // a small low-frequency tail behind it.
        assert!((h[100] - amp).abs() < 1e-12);
        assert!(h[..100].iter().all(|v| v.abs() < 1e-12));
        assert!(h[101..].iter().all(|v| v.abs() < 0.1 * amp));
    }

    #[test]
    fn two_metre_delay() {
        let room = box_room(0.3);
        let array = ArrayGeometry::with_center([1.5, 2.0, 1.5]);
        let src = [3.5, 2.0, 1.5];
        let rir = simulate_rir(&room, &src, &array, 16000).unwrap();
        // mic 0 is 1.965 m from the source, mic 3 is 2.035 m
        let h = rir.channel(3);
        let peak = (0..h.len())
            .max_by(|&a, &b| h[a].abs().partial_cmp(&h[b].abs()).unwrap())
            .unwrap();
        let expected = 2.035 / SOUND_SPEED * 16000.0;
        assert!((peak as f64 - expected).abs() <= 1.0);
        let first = h.iter().position(|v| v.abs() > 1e-3 * h[peak].abs()).unwrap();
        assert!(first + SINC_TAPS / 2 >= peak);
    }

    #[test]
    fn schroeder_decay_tracks_rt60() {
        for &rt60 in &[0.2, 0.35, 0.5] {
            let room = box_room(rt60);
            let array = ArrayGeometry::with_center([2.0, 1.8, 1.4]);
            let rir = simulate_rir(&room, &[3.8, 3.0, 1.4], &array, 16000).unwrap();
            let t = schroeder_t60(&rir.channel(0), 16000).unwrap();
            assert!((t / rt60 - 1.0).abs() < 0.2, "rt60 {rt60} measured {t}");
        }
    }

    #[test]
    fn decay_matched_absorption_tracks_sabine_order() {
        let room = box_room(0.3);
        let short = decay_matched_absorption(&room, 2.0).unwrap().alpha;
        let long = decay_matched_absorption(&box_room(0.6), 2.0).unwrap().alpha;
        assert!(short > long && short < 1.0 && long > 0.0);
    }

    #[test]
    fn coincident_source_rejected() {
        let room = box_room(0.3);
        let array = ArrayGeometry::with_center([2.0, 2.0, 1.5]);
        let mic0 = array.mic_positions()[0];
        assert!(simulate_rir(&room, &mic0, &array, 16000).is_err());
    }

    fn tone(n: usize, f: f64) -> Vec<f64> {
        (0..n).map(|t| (2.0 * PI * f * t as f64 / 16000.0).sin()).collect()
    }

    #[test]
    fn sir_is_exact() {
        for sir in [-6.0, 0.0, 6.0] {
            let mut scene = sample_scene(11);
            scene.sir_db = sir;
            let audio = synthesize_scene(&scene, &tone(8000, 440.0), &tone(8000, 710.0), 16000).unwrap();
            let et = dsp::energy(&audio.reverb_target.channel_vec(0));
            let ei = dsp::energy(&audio.reverb_interferer.channel_vec(0));
            assert!((10.0 * (et / ei).log10() - sir).abs() < 1e-6);
            if sir == 0.0 {
                assert!((et / ei - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mixture_is_sum_and_linear() {
        let scene = sample_scene(5);
        let t = tone(6000, 300.0);
        let i = tone(6000, 523.0);
        let a = synthesize_scene(&scene, &t, &i, 16000).unwrap();
        let sum = &a.reverb_target.samples + &a.reverb_interferer.samples;
        assert!((&sum - &a.mixture.samples).iter().all(|v| v.abs() < 1e-12));
        // Doubling the target at fixed interferer gain doubles its image.
        let t2: Vec<f64> = t.iter().map(|v| 2.0 * v).collect();
        let b = synthesize_scene(&scene, &t2, &i, 16000).unwrap();
        let diff = &b.reverb_target.samples - &(&a.reverb_target.samples * 2.0);
        assert!(diff.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn zero_energy_source_rejected() {
        let scene = sample_scene(1);
        let err = synthesize_scene(&scene, &[0.0; 1000], &tone(1000, 200.0), 16000).unwrap_err();
        assert!(err.to_string().contains("cannot set SIR"));
    }

    #[test]
    fn scene_sampling_is_deterministic_and_valid() {
        assert_eq!(sample_scene(42), sample_scene(42));
        let mut max_diff: f64 = 0.0;
        for seed in 0..1000 {
            let s = sample_scene(seed);
            s.validate().unwrap();
            assert!(SIR_CHOICES_DB.contains(&s.sir_db));
            assert!((RT60_RANGE.0..=RT60_RANGE.1).contains(&s.room.rt60));
            for i in 0..3 {
                assert!(s.room.dims[i] >= ROOM_MIN[i] && s.room.dims[i] <= ROOM_MAX[i]);
            }
            let ad = s.angle_difference();
            assert!((0.0..=180.0).contains(&ad));
            max_diff = max_diff.max(ad);
            assert!((s.array.doa_of(&s.target_pos) - s.target_doa).abs() < 1e-6
                || (s.array.doa_of(&s.target_pos) - s.target_doa).abs() > 359.999);
        }
        assert!(max_diff > 170.0);
    }
}
