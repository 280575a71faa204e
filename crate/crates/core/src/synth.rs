//! Synthetic ground-truth wind fields, day windowing, and normalization.
//!
//! The generator superposes advected Fourier modes with a power-law spectrum
//! over a day-to-day varying base flow with a diurnal cycle, then attenuates
//! the result near the coast:
//!
//! ```text
//! s(t, i, j) = atten(i, j) · [ b(t) + a · Σ_m A_m cos(2π(k_m·(j − u t)/W + l_m·(i − v t)/H) + φ_m + ω_m t) ]
//! b(t)       = base · (1 + diurnal · sin(2π (hour − 9) / 24) + synoptic · σ(t))
//! atten      = 1 − shelter · exp(−d / L)
//! ```
//!
//! where `d` is the coast distance (zero on land) and `σ(t)` interpolates
//! per-day random levels linearly between day centres.

use ndarray::{s, Array2, Array3, ArrayView3, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldSeries;
use crate::grid::{Grid, LandSeaMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_days: usize,
    /// Mean wind speed over the open sea (m/s).
    pub base_speed: f64,
    /// Exponent of the power spectrum `P(|k|) ∝ |k|^(−slope)`.
    pub spectral_slope: f64,
    /// Advection velocity `(u, v)` in pixels per hour along columns and rows.
    pub advection_px_per_h: (f64, f64),
    /// Standard deviation of the fine-scale component (m/s).
    pub anomaly_amplitude: f64,
    pub shelter_strength: f64,
    pub shelter_length_km: f64,
    /// Relative amplitude of the diurnal modulation of the base flow.
    pub diurnal_amplitude: f64,
    /// Relative amplitude of the day-to-day base-flow variations.
    pub synoptic_amplitude: f64,
    /// Spread of the per-mode phase drift rates (rad/h).
    pub phase_drift: f64,
    pub n_modes: usize,
    /// Largest integer wavenumber magnitude.
    pub max_wavenumber: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 20190101,
            n_days: 96,
            base_speed: 7.0,
            spectral_slope: 3.0,
            advection_px_per_h: (0.6, 0.25),
            anomaly_amplitude: 2.0,
            shelter_strength: 0.5,
            shelter_length_km: 15.0,
            diurnal_amplitude: 0.15,
            synoptic_amplitude: 0.25,
            phase_drift: 0.05,
            n_modes: 96,
            max_wavenumber: 12.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.n_days < 3 {
            return bad("n_days must be at least 3");
        }
        if !(self.base_speed > 0.0) {
            return bad("base_speed must be positive");
        }
        if !(0.0..=1.0).contains(&self.shelter_strength) {
            return bad("shelter_strength must lie in [0, 1]");
        }
        if self.anomaly_amplitude < 0.0 || self.diurnal_amplitude < 0.0 || self.synoptic_amplitude < 0.0 {
            return bad("amplitudes must be nonnegative");
        }
        if self.shelter_length_km <= 0.0 {
            return bad("shelter_length_km must be positive");
        }
        if self.max_wavenumber < 1.0 {
            return bad("max_wavenumber must be at least 1");
        }
        Ok(())
    }
}

struct Mode {
    k: f64,
    l: f64,
    amp: f64,
    phase: f64,
    drift: f64,
}

fn draw_modes(spec: &SynthSpec) -> Vec<Mode> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let kmax = spec.max_wavenumber;
    let mut modes = Vec::with_capacity(spec.n_modes);
    while modes.len() < spec.n_modes {
        let k = rng.random_range(-kmax..=kmax).round();
        let l = rng.random_range(0.0..=kmax).round();
        let r = (k * k + l * l).sqrt();
        if r < 1.0 || r > kmax || (l == 0.0 && k < 0.0) {
            continue;
        }
        // Amplitude per mode so the radial power spectrum follows the slope;
        // the density of lattice modes grows like r, hence the extra factor.
        let amp = r.powf(-(spec.spectral_slope + 1.0) / 2.0);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let drift = spec.phase_drift * rng.random_range(-1.0..1.0);
        modes.push(Mode { k, l, amp, phase, drift });
    }
    let var: f64 = modes.iter().map(|m| 0.5 * m.amp * m.amp).sum();
    let norm = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    for m in &mut modes {
        m.amp *= norm;
    }
    modes
}

/// Random base-flow level of a day, from a seed derived from `(seed, day)`.
fn day_level(seed: u64, day: i64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul((day as u64).wrapping_add(2)));
    rng.random_range(-1.0..1.0)
}

fn synoptic_level(seed: u64, hour: usize) -> f64 {
    let pos = (hour as f64 - 11.5) / 24.0;
    let d0 = pos.floor();
    let w = pos - d0;
    (1.0 - w) * day_level(seed, d0 as i64) + w * day_level(seed, d0 as i64 + 1)
}

pub fn base_flow(spec: &SynthSpec, hour: usize) -> f64 {
    let hod = (hour % 24) as f64;
    let diurnal = spec.diurnal_amplitude * (std::f64::consts::TAU * (hod - 9.0) / 24.0).sin();
    spec.base_speed * (1.0 + diurnal + spec.synoptic_amplitude * synoptic_level(spec.seed, hour))
}

pub fn shelter_attenuation(spec: &SynthSpec, landsea: &LandSeaMask) -> Array2<f64> {
    landsea
        .coast_distance_km()
        .mapv(|d| 1.0 - spec.shelter_strength * (-d / spec.shelter_length_km).exp())
}

/// Continuous hourly ground truth, `n_days · 24` frames, rounded to `f32`.
pub fn generate(spec: &SynthSpec, grid: Grid, landsea: &LandSeaMask) -> Result<Array3<f64>> {
    spec.validate()?;
    if landsea.grid() != grid {
        return Err(Error::Shape("land/sea mask was built for a different grid".into()));
    }
    let modes = draw_modes(spec);
    let atten = shelter_attenuation(spec, landsea);
    let (h, w) = (grid.height, grid.width);
    let n_frames = spec.n_days * 24;
    let mut out = Array3::<f64>::zeros((n_frames, h, w));
    let flat = out.as_slice_mut().expect("standard layout");
    flat.par_chunks_mut(h * w).enumerate().for_each(|(t, chunk)| {
        let mut frame = ArrayViewMut2::from_shape((h, w), chunk).expect("frame shape");
        let tf = t as f64;
        let (u, v) = spec.advection_px_per_h;
        let mut noise = Array2::<f64>::zeros((h, w));
        let mut cj = vec![0.0; w];
        let mut sj = vec![0.0; w];
        for m in &modes {
            // cos(α + β) with α the column part and β the row part, split so
            // each mode costs O(H + W) trig calls.
            let off = m.phase + m.drift * tf - std::f64::consts::TAU * (m.k * u * tf / w as f64 + m.l * v * tf / h as f64);
            for j in 0..w {
                let a = std::f64::consts::TAU * m.k * j as f64 / w as f64 + off;
                cj[j] = m.amp * a.cos();
                sj[j] = m.amp * a.sin();
            }
            for i in 0..h {
                let b = std::f64::consts::TAU * m.l * i as f64 / h as f64;
                let (sb, cb) = b.sin_cos();
                let row = noise.row_mut(i);
                for (n, (c, s)) in row.into_iter().zip(cj.iter().zip(&sj)) {
                    *n += c * cb - s * sb;
                }
            }
        }
        let base = base_flow(spec, t);
        frame.zip_mut_with(&noise, |f, &n| *f = base + spec.anomaly_amplitude * n);
        frame.zip_mut_with(&atten, |f, &a| *f = ((*f * a).max(0.0)) as f32 as f64);
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaySample {
    pub gt36: FieldSeries,
    pub gt24: FieldSeries,
}

/// Contiguous hourly truth of one split with its day windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    frames: Array3<f64>,
}

impl Split {
    /// A split from whole days of hourly frames, e.g. as read back from a `WF01` file.
    pub fn from_frames(frames: Array3<f64>) -> Result<Self> {
        let t = frames.dim().0;
        if t % 24 != 0 || t / 24 < 3 {
            return Err(Error::invalid(format!("{t} frames do not make at least 3 whole days")));
        }
        Ok(Self { frames })
    }

    pub fn n_days(&self) -> usize {
        self.frames.dim().0 / 24
    }

    /// Number of windowed samples: the first and last day lack a full 36-hour window.
    pub fn len(&self) -> usize {
        self.n_days() - 2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frames(&self) -> &Array3<f64> {
        &self.frames
    }

    /// 36 frames from 18:00 of the previous day to 05:00 of the next.
    pub fn window36(&self, k: usize) -> ArrayView3<'_, f64> {
        let day = k + 1;
        self.frames.slice(s![day * 24 - 6..day * 24 + 30, .., ..])
    }

    pub fn sample(&self, k: usize) -> DaySample {
        assert!(k < self.len(), "sample {k} out of range for {} samples", self.len());
        let gt36 = FieldSeries::new(self.window36(k).to_owned()).expect("window has 36 finite frames");
        let gt24 = gt36.crop24().expect("36-frame window");
        DaySample { gt36, gt24 }
    }

    pub fn samples(&self) -> impl Iterator<Item = DaySample> + '_ {
        (0..self.len()).map(|k| self.sample(k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
    pub val: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.test + self.val
    }

    /// Sample counts after windowing, in `(train, test, val)` order.
    pub fn windowed(&self) -> (usize, usize, usize) {
        (self.train - 2, self.test - 2, self.val - 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStd {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

/// Cut the timeline into train, test and validation days, in that order.
pub fn split_and_window(gt: &Array3<f64>, counts: SplitCounts) -> Result<Dataset> {
    if counts.train < 3 || counts.test < 3 || counts.val < 3 {
        return Err(Error::invalid(format!("every split needs at least 3 days, got {counts:?}")));
    }
    let n_days = gt.dim().0 / 24;
    if gt.dim().0 % 24 != 0 || n_days != counts.total() {
        return Err(Error::invalid(format!("{} frames do not make {} whole days", gt.dim().0, counts.total())));
    }
    let cut = |d0: usize, n: usize| Split { frames: gt.slice(s![d0 * 24..(d0 + n) * 24, .., ..]).to_owned() };
    Ok(Dataset {
        train: cut(0, counts.train),
        test: cut(counts.train, counts.test),
        val: cut(counts.train + counts.test, counts.val),
    })
}

fn window_std(split: &Split) -> f64 {
    let (mut n, mut sum, mut sum2) = (0.0, 0.0, 0.0);
    for k in 0..split.len() {
        let day = k + 1;
        for &v in split.frames.slice(s![day * 24..day * 24 + 24, .., ..]).iter() {
            n += 1.0;
            sum += v;
            sum2 += v * v;
        }
    }
    let mean = sum / n;
    (sum2 / n - mean * mean).max(0.0).sqrt()
}

/// Standard deviation over the 24-hour crops of each split, each split on its own.
pub fn fit_norm(ds: &Dataset) -> Result<NormStd> {
    let std = NormStd { train: window_std(&ds.train), val: window_std(&ds.val), test: window_std(&ds.test) };
    for (name, v) in [("train", std.train), ("val", std.val), ("test", std.test)] {
        if !(v > 0.0) {
            return Err(Error::invalid(format!("{name} split has zero variance")));
        }
    }
    Ok(std)
}

pub fn normalize(series: &Array3<f64>, std: f64) -> Array3<f64> {
    assert!(std > 0.0, "normalization std must be positive");
    series.mapv(|v| v / std)
}

pub fn denormalize(series: &Array3<f64>, std: f64) -> Array3<f64> {
    series.mapv(|v| v * std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{synth_landsea, CoastlineSpec};

    fn setup(h: usize) -> (Grid, LandSeaMask) {
        let g = Grid::new(h, h, 3.0).unwrap();
        let m = synth_landsea(g, &CoastlineSpec::straight(4.0)).unwrap();
        (g, m)
    }

    fn small(n_days: usize) -> SynthSpec {
        SynthSpec { n_days, n_modes: 24, max_wavenumber: 6.0, ..SynthSpec::default() }
    }

    #[test]
    fn deterministic_and_nonnegative() {
        let (g, m) = setup(16);
        let a = generate(&small(3), g, &m).unwrap();
        let b = generate(&small(3), g, &m).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| v >= 0.0 && v.is_finite()));
        let c = generate(&SynthSpec { seed: 5, ..small(3) }, g, &m).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_anomaly_is_base_flow() {
        let (g, m) = setup(16);
        let spec = SynthSpec { anomaly_amplitude: 0.0, shelter_strength: 0.0, ..small(3) };
        let a = generate(&spec, g, &m).unwrap();
        for t in 0..a.dim().0 {
            let expect = base_flow(&spec, t) as f32 as f64;
            assert!(a.slice(s![t, .., ..]).iter().all(|&v| v == expect));
        }
    }

    #[test]
    fn pure_advection_shifts_one_column() {
        let (g, m) = setup(16);
        let spec = SynthSpec {
            advection_px_per_h: (1.0, 0.0),
            diurnal_amplitude: 0.0,
            synoptic_amplitude: 0.0,
            phase_drift: 0.0,
            shelter_strength: 0.0,
            base_speed: 5.0,
            anomaly_amplitude: 1.0,
            ..small(3)
        };
        let a = generate(&spec, g, &m).unwrap();
        for t in 0..a.dim().0 - 1 {
            for i in 0..16 {
                for j in 0..16 {
                    let prev = a[[t, i, (j + 15) % 16]];
                    assert!((a[[t + 1, i, j]] - prev).abs() < 1e-6, "t={t} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn smooth_in_time_and_sheltered() {
        let (g, m) = setup(32);
        let spec = small(3);
        let a = generate(&spec, g, &m).unwrap();
        for t in 0..a.dim().0 - 1 {
            let d = &a.slice(s![t + 1, .., ..]) - &a.slice(s![t, .., ..]);
            let rms = (d.mapv(|v| v * v).mean().unwrap()).sqrt();
            assert!(rms < 0.5 * spec.base_speed, "t={t} rms={rms}");
        }
        let coast: f64 = a.slice(s![.., .., 4]).mean().unwrap();
        let open: f64 = a.slice(s![.., .., 28]).mean().unwrap();
        assert!(coast < 0.75 * open, "coast {coast} open {open}");
    }

    #[test]
    fn windowing_counts_and_indices() {
        let frames = Array3::from_shape_fn((9 * 24, 2, 2), |(t, i, j)| (t * 4 + i * 2 + j) as f64);
        let ds = split_and_window(&frames, SplitCounts { train: 3, test: 3, val: 3 }).unwrap();
        assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (1, 1, 1));
        let s0 = ds.test.sample(0);
        assert_eq!(s0.gt36.data()[[0, 0, 0]], frames[[(3 * 24 + 18) as usize, 0, 0]]);
        assert_eq!(s0.gt24.data(), &s0.gt36.data().slice(s![6..30, .., ..]).to_owned());
        assert_eq!(s0.gt24.data()[[0, 0, 0]], frames[[4 * 24, 0, 0]]);
        assert!(split_and_window(&frames, SplitCounts { train: 2, test: 4, val: 3 }).is_err());
        assert!(split_and_window(&frames, SplitCounts { train: 4, test: 3, val: 3 }).is_err());
    }

    #[test]
    fn normalization() {
        let frames = Array3::from_shape_fn((9 * 24, 3, 3), |(t, i, j)| 1.0 + ((t * 7 + i * 3 + j) % 11) as f64);
        let ds = split_and_window(&frames, SplitCounts { train: 3, test: 3, val: 3 }).unwrap();
        let std = fit_norm(&ds).unwrap();
        let normed = normalize(&ds.train.sample(0).gt24.into_data(), std.train);
        let mean = normed.mean().unwrap();
        let sd = (normed.mapv(|v| (v - mean) * (v - mean)).mean().unwrap()).sqrt();
        assert!((sd - 1.0).abs() < 1e-6);
        let back = denormalize(&normed, std.train);
        for (a, b) in back.iter().zip(ds.train.sample(0).gt24.data().iter()) {
            assert!((a - b).abs() <= 1e-7 * b.abs());
        }
        let halved = normalize(&Array3::from_elem((1, 2, 2), 4.0), 2.0);
        assert!(halved.iter().all(|&v| v == 2.0));
        let flat = split_and_window(&Array3::from_elem((9 * 24, 2, 2), 3.0), SplitCounts { train: 3, test: 3, val: 3 }).unwrap();
        assert!(fit_norm(&flat).is_err());
    }
}
