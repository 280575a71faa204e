//! Observation manufacture: low-resolution reanalysis-like fields, sea-only
//! high-resolution snapshots, buoy time series, and LR bias injection.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BuoyNetwork, LandSeaMask};

pub const MAX_DELAY_H: i32 = 4;
pub const REMOD_RANGE: (f64, f64) = (0.5, 1.5);

/// Which modalities are observed, beyond the always-present LR fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DataConfig {
    SR,
    C1,
    C2,
    C3,
}

impl DataConfig {
    pub const ALL: [DataConfig; 4] = [DataConfig::SR, DataConfig::C1, DataConfig::C2, DataConfig::C3];

    pub fn has_hr(self) -> bool {
        matches!(self, DataConfig::C1 | DataConfig::C3)
    }

    pub fn has_situ(self) -> bool {
        matches!(self, DataConfig::C2 | DataConfig::C3)
    }

    pub fn name(self) -> &'static str {
        match self {
            DataConfig::SR => "SR",
            DataConfig::C1 => "C1",
            DataConfig::C2 => "C2",
            DataConfig::C3 => "C3",
        }
    }
}

impl fmt::Display for DataConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DataConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DataConfig::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown data configuration {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingScheme {
    pub config: DataConfig,
    pub lr_period_h: usize,
    pub lr_stride_px: usize,
    /// HR revisit period; only meaningful when HR snapshots are observed.
    pub hr_period_h: Option<usize>,
}

impl SamplingScheme {
    pub fn new(config: DataConfig, lr_period_h: usize, lr_stride_px: usize, hr_period_h: Option<usize>) -> Result<Self> {
        let s = Self { config, lr_period_h, lr_stride_px, hr_period_h };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.lr_period_h, 1 | 6) {
            return Err(Error::Config(format!("LR period must be 1 or 6 hours, got {}", self.lr_period_h)));
        }
        if self.lr_stride_px < 2 {
            return Err(Error::Config(format!("LR stride must be at least 2, got {}", self.lr_stride_px)));
        }
        match (self.config.has_hr(), self.hr_period_h) {
            (true, Some(12 | 24)) | (false, None) => Ok(()),
            (true, Some(p)) => Err(Error::Config(format!("HR period must be 12 or 24 hours, got {p}"))),
            (true, None) => Err(Error::Config(format!("{} needs an HR period", self.config))),
            (false, Some(_)) => Err(Error::Config(format!("{} has no HR snapshots, so no HR period", self.config))),
        }
    }

    pub fn lr_hours(&self) -> Vec<usize> {
        (0..24).step_by(self.lr_period_h).collect()
    }

    pub fn hr_hours(&self) -> Vec<usize> {
        match (self.config.has_hr(), self.hr_period_h) {
            (true, Some(12)) => vec![6, 18],
            (true, Some(24)) => vec![12],
            _ => Vec::new(),
        }
    }

    /// Same sampling with another modality set; the HR period is kept when
    /// both use HR snapshots and dropped otherwise.
    pub fn with_config(&self, config: DataConfig, hr_period_h: Option<usize>) -> Result<Self> {
        Self::new(config, self.lr_period_h, self.lr_stride_px, if config.has_hr() { hr_period_h } else { None })
    }
}

/// One day of observations. Unobserved entries are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBundle {
    pub y_lr: Array3<f64>,
    pub y_hr: Array3<f64>,
    pub y_situ: Array3<f64>,
    pub m_lr: Array3<bool>,
    pub m_hr: Array3<bool>,
    pub m_situ: Array3<bool>,
    pub scheme: SamplingScheme,
}

impl ObservationBundle {
    pub fn dims(&self) -> (usize, usize, usize) {
        self.y_lr.dim()
    }

    /// Scale every observation, e.g. to move between physical and normalized units.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            y_lr: self.y_lr.mapv(|v| v * c),
            y_hr: self.y_hr.mapv(|v| v * c),
            y_situ: self.y_situ.mapv(|v| v * c),
            ..self.clone()
        }
    }

    /// HR-minus-LR anomaly where both are observed, zero elsewhere.
    pub fn hr_anomaly(&self) -> Array3<f64> {
        let mut out = Array3::zeros(self.dims());
        ndarray::Zip::from(&mut out)
            .and(&self.y_hr)
            .and(&self.y_lr)
            .and(&self.m_hr)
            .and(&self.m_lr)
            .for_each(|o, &h, &l, &mh, &ml| {
                if mh && ml {
                    *o = h - l;
                }
            });
        out
    }
}

/// Strided subsample anchored at `(0, 0)` followed by bilinear interpolation
/// back onto the full grid. Pixels past the last anchor row or column are
/// extrapolated linearly from the last anchor interval.
pub fn downsample_reinterp(field: ArrayView2<f64>, stride: usize) -> Result<Array2<f64>> {
    let (h, w) = field.dim();
    if stride < 2 || stride >= h.min(w) {
        return Err(Error::invalid(format!("stride {stride} invalid for a {h}x{w} field")));
    }
    let rows = axis_weights(h, stride);
    let cols = axis_weights(w, stride);
    Ok(Array2::from_shape_fn((h, w), |(i, j)| {
        let (r0, r1, a) = rows[i];
        let (c0, c1, b) = cols[j];
        (1.0 - a) * ((1.0 - b) * field[[r0, c0]] + b * field[[r0, c1]]) + a * ((1.0 - b) * field[[r1, c0]] + b * field[[r1, c1]])
    }))
}

/// For each pixel, the bracketing anchors and the fractional position between them.
fn axis_weights(n: usize, stride: usize) -> Vec<(usize, usize, f64)> {
    let n_anchor = (n - 1) / stride + 1;
    (0..n)
        .map(|p| {
            let seg = (p / stride).min(n_anchor - 2);
            let a0 = seg * stride;
            if p == a0 {
                // Exact weight on the anchor keeps the operator idempotent.
                (a0, a0 + stride, 0.0)
            } else {
                (a0, a0 + stride, (p - a0) as f64 / stride as f64)
            }
        })
        .collect()
}

pub fn downsample_series(field: ArrayView3<f64>, stride: usize) -> Result<Array3<f64>> {
    let mut out = Array3::zeros(field.dim());
    for t in 0..field.dim().0 {
        out.slice_mut(s![t, .., ..]).assign(&downsample_reinterp(field.slice(s![t, .., ..]), stride)?);
    }
    Ok(out)
}

/// Build the observations of one day from its 24-hour truth.
///
/// `lr_source` replaces the truth as the input of the LR operator, which is
/// how biased LR data enter; HR and in-situ data always come from `gt24`.
pub fn assemble(
    gt24: ArrayView3<f64>,
    lr_source: Option<ArrayView3<f64>>,
    scheme: &SamplingScheme,
    landsea: &LandSeaMask,
    buoys: &BuoyNetwork,
) -> Result<ObservationBundle> {
    scheme.validate()?;
    let (t, h, w) = gt24.dim();
    let g = landsea.grid();
    if (h, w) != (g.height, g.width) {
        return Err(Error::Shape(format!("fields are {h}x{w}, grid is {}x{}", g.height, g.width)));
    }
    let lr_src = lr_source.unwrap_or(gt24);
    if lr_src.dim() != gt24.dim() {
        return Err(Error::Shape("LR source and truth differ in shape".into()));
    }
    let mut b = ObservationBundle {
        y_lr: Array3::zeros((t, h, w)),
        y_hr: Array3::zeros((t, h, w)),
        y_situ: Array3::zeros((t, h, w)),
        m_lr: Array3::from_elem((t, h, w), false),
        m_hr: Array3::from_elem((t, h, w), false),
        m_situ: Array3::from_elem((t, h, w), false),
        scheme: *scheme,
    };
    for hour in scheme.lr_hours().into_iter().filter(|&k| k < t) {
        let d = downsample_reinterp(lr_src.slice(s![hour, .., ..]), scheme.lr_stride_px)?;
        b.y_lr.slice_mut(s![hour, .., ..]).assign(&d);
        b.m_lr.slice_mut(s![hour, .., ..]).fill(true);
    }
    for hour in scheme.hr_hours().into_iter().filter(|&k| k < t) {
        for ((i, j), &land) in landsea.land().indexed_iter() {
            if !land {
                b.y_hr[[hour, i, j]] = gt24[[hour, i, j]];
                b.m_hr[[hour, i, j]] = true;
            }
        }
    }
    if scheme.config.has_situ() {
        for buoy in buoys.buoys() {
            for hour in 0..t {
                b.y_situ[[hour, buoy.row, buoy.col]] = gt24[[hour, buoy.row, buoy.col]];
                b.m_situ[[hour, buoy.row, buoy.col]] = true;
            }
        }
    }
    Ok(b)
}

/// Elementwise `y_hr − y_lr`.
pub fn anomaly(y_hr: &Array3<f64>, y_lr: &Array3<f64>) -> Result<Array3<f64>> {
    if y_hr.dim() != y_lr.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", y_hr.dim(), y_lr.dim())));
    }
    Ok(y_hr - y_lr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BiasKind {
    None,
    RandomDelay,
    RandomRemod,
    FixedDelay(i32),
    FixedRemod(f64),
}

impl BiasKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BiasKind::FixedDelay(d) if d.abs() > MAX_DELAY_H => {
                Err(Error::invalid(format!("delay {d} h exceeds ±{MAX_DELAY_H} h")))
            }
            BiasKind::FixedRemod(a) if !(REMOD_RANGE.0..=REMOD_RANGE.1).contains(&a) => {
                Err(Error::invalid(format!("remodulation {a} outside [{}, {}]", REMOD_RANGE.0, REMOD_RANGE.1)))
            }
            _ => Ok(()),
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, BiasKind::RandomDelay | BiasKind::RandomRemod)
    }
}

/// `y(t) = gt36(t + Δt)`. Frames whose source would leave the window are
/// clamped to its edge; they lie outside the 24-hour crop for `|Δt| ≤ 4`.
pub fn inject_delay(gt36: ArrayView3<f64>, dt: i32) -> Result<Array3<f64>> {
    BiasKind::FixedDelay(dt).validate()?;
    let n = gt36.dim().0 as i64;
    let mut out = Array3::zeros(gt36.dim());
    for t in 0..n {
        let src = (t + dt as i64).clamp(0, n - 1) as usize;
        out.slice_mut(s![t as usize, .., ..]).assign(&gt36.slice(s![src, .., ..]));
    }
    Ok(out)
}

pub fn inject_remod(gt36: ArrayView3<f64>, alpha: f64) -> Result<Array3<f64>> {
    BiasKind::FixedRemod(alpha).validate()?;
    Ok(gt36.mapv(|v| alpha * v))
}

/// Offset of 00:00 of the day inside its 36-hour window.
pub const CROP_START: usize = 6;

/// The 24-hour LR source after applying `bias` to a 36-hour window.
///
/// Random kinds draw one value per LR-sampled hour; other hours are left
/// unbiased since the LR operator never reads them.
pub fn biased_lr_source(gt36: ArrayView3<f64>, bias: BiasKind, lr_hours: &[usize], rng: &mut impl Rng) -> Result<Array3<f64>> {
    bias.validate()?;
    if gt36.dim().0 != 36 {
        return Err(Error::Shape(format!("bias needs a 36-frame window, got {}", gt36.dim().0)));
    }
    let crop = |a: &Array3<f64>| a.slice(s![CROP_START..CROP_START + 24, .., ..]).to_owned();
    match bias {
        BiasKind::None => Ok(gt36.slice(s![CROP_START..CROP_START + 24, .., ..]).to_owned()),
        BiasKind::FixedDelay(dt) => Ok(crop(&inject_delay(gt36, dt)?)),
        BiasKind::FixedRemod(a) => Ok(crop(&inject_remod(gt36, a)?)),
        BiasKind::RandomDelay | BiasKind::RandomRemod => {
            let mut out = gt36.slice(s![CROP_START..CROP_START + 24, .., ..]).to_owned();
            for &hour in lr_hours {
                let frame = if bias == BiasKind::RandomDelay {
                    let dt: i32 = rng.random_range(-MAX_DELAY_H..=MAX_DELAY_H);
                    gt36.slice(s![(CROP_START + hour) as isize + dt as isize, .., ..]).to_owned()
                } else {
                    let a: f64 = rng.random_range(REMOD_RANGE.0..=REMOD_RANGE.1);
                    gt36.slice(s![CROP_START + hour, .., ..]).mapv(|v| a * v)
                };
                out.slice_mut(s![hour, .., ..]).assign(&frame);
            }
            Ok(out)
        }
    }
}

/// Observations of a day whose LR part carries `bias`.
pub fn train_time_bias(
    gt36: ArrayView3<f64>,
    bias: BiasKind,
    scheme: &SamplingScheme,
    landsea: &LandSeaMask,
    buoys: &BuoyNetwork,
    rng: &mut impl Rng,
) -> Result<ObservationBundle> {
    let gt24 = gt36.slice(s![CROP_START..CROP_START + 24, .., ..]);
    if bias == BiasKind::None {
        return assemble(gt24, None, scheme, landsea, buoys);
    }
    let src = biased_lr_source(gt36, bias, &scheme.lr_hours(), rng)?;
    assemble(gt24, Some(src.view()), scheme, landsea, buoys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{default_buoys, synth_landsea, CoastlineSpec, Grid};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geo() -> (LandSeaMask, BuoyNetwork) {
        let g = Grid::new(32, 32, 6.0).unwrap();
        let m = synth_landsea(g, &CoastlineSpec { base_col: 8.0, amplitude: 2.0, wavelength_rows: 32.0 }).unwrap();
        let b = default_buoys(&m, 3).unwrap();
        (m, b)
    }

    fn random_field(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn(shape, |_| rng.random_range(0.0..10.0))
    }

    /// Bilinear interpolation written out from the anchor lattice.
    fn bilinear_oracle(f: &Array2<f64>, s: usize, i: usize, j: usize) -> f64 {
        let (h, w) = f.dim();
        let last = |n: usize| ((n - 1) / s) * s;
        let lo = |p: usize, n: usize| if p >= last(n) { last(n) - s } else { (p / s) * s };
        let (i0, j0) = (lo(i, h), lo(j, w));
        let (ty, tx) = ((i - i0) as f64 / s as f64, (j - j0) as f64 / s as f64);
        let q = |a: usize, b: usize| f[[a, b]];
        q(i0, j0) * (1.0 - ty) * (1.0 - tx)
            + q(i0, j0 + s) * (1.0 - ty) * tx
            + q(i0 + s, j0) * ty * (1.0 - tx)
            + q(i0 + s, j0 + s) * ty * tx
    }

    #[test]
    fn reinterp_constant_ramp_and_oracle() {
        let c = Array2::from_elem((12, 12), 3.5);
        assert!(downsample_reinterp(c.view(), 4).unwrap().iter().all(|&v| (v - 3.5).abs() < 1e-12));

        let ramp = Array2::from_shape_fn((13, 10), |(i, j)| 0.7 * i as f64 - 1.3 * j as f64 + 2.0);
        let d = downsample_reinterp(ramp.view(), 3).unwrap();
        for (a, b) in d.iter().zip(ramp.iter()) {
            assert!((a - b).abs() < 1e-12);
        }

        let f = random_field((1, 8, 8), 1).slice(s![0, .., ..]).to_owned();
        let d = downsample_reinterp(f.view(), 2).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert!((d[[i, j]] - bilinear_oracle(&f, 2, i, j)).abs() < 1e-12);
            }
        }
        assert!(downsample_reinterp(f.view(), 1).is_err());
        assert!(downsample_reinterp(f.view(), 8).is_err());
    }

    #[test]
    fn scheme_hours_and_validation() {
        let s = SamplingScheme::new(DataConfig::C3, 6, 4, Some(12)).unwrap();
        assert_eq!(s.lr_hours(), vec![0, 6, 12, 18]);
        assert_eq!(s.hr_hours(), vec![6, 18]);
        assert_eq!(SamplingScheme::new(DataConfig::C1, 1, 4, Some(24)).unwrap().hr_hours(), vec![12]);
        assert_eq!(SamplingScheme::new(DataConfig::SR, 1, 4, None).unwrap().lr_hours().len(), 24);
        assert!(SamplingScheme::new(DataConfig::C2, 6, 4, Some(12)).is_err());
        assert!(SamplingScheme::new(DataConfig::C1, 6, 4, None).is_err());
        assert!(SamplingScheme::new(DataConfig::C1, 3, 4, Some(12)).is_err());
    }

    #[test]
    fn assemble_modalities() {
        let (m, buoys) = geo();
        let gt = random_field((24, 32, 32), 2);
        let sr = assemble(gt.view(), None, &SamplingScheme::new(DataConfig::SR, 6, 4, None).unwrap(), &m, &buoys).unwrap();
        assert!(sr.m_hr.iter().all(|&v| !v) && sr.m_situ.iter().all(|&v| !v));
        for t in 0..24 {
            let on = sr.m_lr.slice(s![t, .., ..]).iter().all(|&v| v);
            let off = sr.m_lr.slice(s![t, .., ..]).iter().all(|&v| !v);
            assert!(if t % 6 == 0 { on } else { off });
        }

        let c3 = assemble(gt.view(), None, &SamplingScheme::new(DataConfig::C3, 6, 4, Some(12)).unwrap(), &m, &buoys).unwrap();
        for t in 0..24 {
            let n_hr = c3.m_hr.slice(s![t, .., ..]).iter().filter(|&&v| v).count();
            assert_eq!(n_hr, if t == 6 || t == 18 { m.n_sea() } else { 0 });
            let n_situ = c3.y_situ.slice(s![t, .., ..]).iter().filter(|&&v| v != 0.0).count();
            assert_eq!(n_situ, 13);
        }
    }

    #[test]
    fn anomaly_oracles() {
        let a = random_field((2, 4, 4), 3);
        let b = random_field((2, 4, 4), 4);
        assert!(anomaly(&a, &a).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(anomaly(&a, &Array3::zeros((2, 4, 4))).unwrap(), a);
        let d = anomaly(&a, &b).unwrap();
        for ((x, y), z) in a.iter().zip(b.iter()).zip(d.iter()) {
            assert_eq!(*z, x - y);
        }
        assert!(anomaly(&a, &Array3::zeros((1, 4, 4))).is_err());
    }

    #[test]
    fn bias_injection() {
        let gt36 = Array3::from_shape_fn((36, 3, 3), |(t, i, j)| (t * 9 + i * 3 + j) as f64);
        assert_eq!(inject_delay(gt36.view(), 0).unwrap(), gt36);
        assert_eq!(inject_remod(gt36.view(), 1.0).unwrap(), gt36);
        let d = inject_delay(gt36.view(), -4).unwrap();
        assert_eq!(d.slice(s![CROP_START, .., ..]), gt36.slice(s![2, .., ..]));
        let r = inject_remod(gt36.view(), 0.5).unwrap();
        assert!(r.iter().zip(gt36.iter()).all(|(a, b)| *a == 0.5 * b));
        assert!(inject_delay(gt36.view(), 5).is_err());
        assert!(inject_remod(gt36.view(), 1.6).is_err());
    }

    #[test]
    fn train_time_bias_draws() {
        let (m, buoys) = geo();
        let scheme = SamplingScheme::new(DataConfig::C3, 6, 4, Some(12)).unwrap();
        let gt36 = random_field((36, 32, 32), 5);
        let gt24 = gt36.slice(s![6..30, .., ..]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plain = assemble(gt24, None, &scheme, &m, &buoys).unwrap();
        assert_eq!(train_time_bias(gt36.view(), BiasKind::None, &scheme, &m, &buoys, &mut rng).unwrap(), plain);
        for kind in [BiasKind::FixedDelay(0), BiasKind::FixedRemod(1.0)] {
            assert_eq!(train_time_bias(gt36.view(), kind, &scheme, &m, &buoys, &mut rng).unwrap(), plain);
        }

        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            train_time_bias(gt36.view(), BiasKind::RandomDelay, &scheme, &m, &buoys, &mut rng).unwrap()
        };
        let (a, b) = (draw(9), draw(9));
        assert_eq!(a, b);
        assert_eq!(a.y_hr, plain.y_hr);
        assert_eq!(a.y_situ, plain.y_situ);
        assert_ne!(a.y_lr, plain.y_lr);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = Array3::from_elem((36, 1, 1), 1.0);
        let hours: Vec<usize> = (0..24).collect();
        let mut sum = 0.0;
        let n = 10_000 / 24 + 1;
        for _ in 0..n {
            let biased = biased_lr_source(src.view(), BiasKind::RandomRemod, &hours, &mut rng).unwrap();
            sum += biased.sum();
        }
        let mean = sum / (n * 24) as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn reinterp_is_idempotent(seed in any::<u64>(), stride in 2usize..6, h in 8usize..20, w in 8usize..20) {
            let f = random_field((1, h, w), seed).slice(s![0, .., ..]).to_owned();
            let once = downsample_reinterp(f.view(), stride).unwrap();
            let twice = downsample_reinterp(once.view(), stride).unwrap();
            for (a, b) in once.iter().zip(twice.iter()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }

        #[test]
        fn bundles_respect_masks(seed in any::<u64>(), cfg in 0usize..4, hr in prop::bool::ANY, lr1 in prop::bool::ANY) {
            let (m, buoys) = geo();
            let config = DataConfig::ALL[cfg];
            let period = if config.has_hr() { Some(if hr { 12 } else { 24 }) } else { None };
            let scheme = SamplingScheme::new(config, if lr1 { 1 } else { 6 }, 4, period).unwrap();
            let gt = random_field((24, 32, 32), seed);
            let b = assemble(gt.view(), None, &scheme, &m, &buoys).unwrap();
            for (y, mask) in [(&b.y_lr, &b.m_lr), (&b.y_hr, &b.m_hr), (&b.y_situ, &b.m_situ)] {
                prop_assert!(y.iter().zip(mask.iter()).all(|(&v, &k)| k || v == 0.0));
            }
            for ((_, i, j), &k) in b.m_hr.indexed_iter() {
                prop_assert!(!(k && m.is_land(i, j)));
            }
        }
    }
}
