//! Metrics, ensemble aggregation and the analysis campaigns.

pub mod gp;
pub mod svg;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array3, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gp::{gp_degradation_map, DegradationMap, GP_LENGTH_KM};

use crate::assim::{Model, ObsTensors};
use crate::error::{Error, Result};
use crate::grid::{BuoyNetwork, LandSeaMask, Zone};
use crate::neural::ParamStore;
use crate::obs::{train_time_bias, BiasKind, DataConfig, SamplingScheme, MAX_DELAY_H};
use crate::synth::{denormalize, DaySample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    Full,
    Sea,
    Land,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Full, Region::Sea, Region::Land];

    pub fn name(self) -> &'static str {
        match self {
            Region::Full => "full",
            Region::Sea => "sea",
            Region::Land => "land",
        }
    }

    fn contains(self, land: bool) -> bool {
        match self {
            Region::Full => true,
            Region::Sea => !land,
            Region::Land => land,
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Region::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown region {s:?}")))
    }
}

/// Sum of squared errors and pixel count of one region over a set of days.
fn sq_error(x_hat: &[Array3<f64>], u: &[Array3<f64>], landsea: &LandSeaMask, region: Region) -> Result<(f64, usize)> {
    if x_hat.len() != u.len() {
        return Err(Error::Shape(format!("{} reconstructions for {} truths", x_hat.len(), u.len())));
    }
    let land = landsea.land();
    let (mut sum, mut n) = (0.0, 0);
    for (x, y) in x_hat.iter().zip(u) {
        let (_, h, w) = x.dim();
        if x.dim() != y.dim() || (h, w) != land.dim() {
            return Err(Error::Shape(format!("{:?} vs {:?} on a {:?} grid", x.dim(), y.dim(), land.dim())));
        }
        for ((_, i, j), (&a, &b)) in x.indexed_iter().zip(y.iter()).map(|((idx, a), b)| (idx, (a, b))) {
            if region.contains(land[[i, j]]) {
                sum += (a - b) * (a - b);
                n += 1;
            }
        }
    }
    Ok((sum, n))
}

/// RMSE over the pixels of `region`, every hour and every day given.
pub fn rmse_masked(x_hat: &[Array3<f64>], u: &[Array3<f64>], landsea: &LandSeaMask, region: Region) -> Result<f64> {
    let (sum, n) = sq_error(x_hat, u, landsea, region)?;
    if n == 0 {
        return Err(Error::invalid(format!("region {region} has no pixels")));
    }
    Ok((sum / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionRmse {
    pub full: f64,
    pub sea: f64,
    pub land: f64,
}

impl RegionRmse {
    pub fn compute(x_hat: &[Array3<f64>], u: &[Array3<f64>], landsea: &LandSeaMask) -> Result<Self> {
        Ok(Self {
            full: rmse_masked(x_hat, u, landsea, Region::Full)?,
            sea: rmse_masked(x_hat, u, landsea, Region::Sea)?,
            land: rmse_masked(x_hat, u, landsea, Region::Land)?,
        })
    }

    pub fn get(&self, r: Region) -> f64 {
        match r {
            Region::Full => self.full,
            Region::Sea => self.sea,
            Region::Land => self.land,
        }
    }
}

/// `η = (1 − p_M / p_B) · 100`.
pub fn relative_gain(p_m: f64, p_b: f64) -> Result<f64> {
    if !(p_b > 0.0) || !p_m.is_finite() {
        return Err(Error::invalid(format!("relative gain needs a positive baseline, got {p_b}")));
    }
    Ok((1.0 - p_m / p_b) * 100.0)
}

/// Elementwise median; the mean of the two central values for even counts.
pub fn median_aggregate(runs: &[Array3<f64>]) -> Result<Array3<f64>> {
    let first = runs.first().ok_or_else(|| Error::invalid("median of zero runs"))?;
    if runs.iter().any(|r| r.dim() != first.dim()) {
        return Err(Error::Shape("runs differ in shape".into()));
    }
    if runs.len() == 1 {
        return Ok(first.clone());
    }
    let n = runs.len();
    let flat: Vec<&[f64]> = runs.iter().map(|r| r.as_slice().expect("standard layout")).collect();
    let mut out = Array3::zeros(first.dim());
    let mut buf = vec![0.0; n];
    for (k, o) in out.as_slice_mut().expect("fresh array").iter_mut().enumerate() {
        for (b, r) in buf.iter_mut().zip(&flat) {
            *b = r[k];
        }
        buf.sort_by(f64::total_cmp);
        *o = if n % 2 == 1 { buf[n / 2] } else { 0.5 * (buf[n / 2 - 1] + buf[n / 2]) };
    }
    Ok(out)
}

/// Trained runs of one model on one observation scheme.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub model: Model,
    pub runs: Vec<ParamStore>,
    pub scheme: SamplingScheme,
}

impl Ensemble {
    pub fn interp(scheme: SamplingScheme) -> Self {
        Self { model: Model::Interp, runs: vec![ParamStore::new()], scheme }
    }
}

/// Test days in normalized units with their physical truth.
pub struct TestSet<'a> {
    pub samples: &'a [DaySample],
    pub std: f64,
    pub landsea: &'a LandSeaMask,
    pub buoys: &'a BuoyNetwork,
}

impl TestSet<'_> {
    pub fn truth(&self) -> Vec<Array3<f64>> {
        self.samples.iter().map(|s| denormalize(s.gt24.data(), self.std)).collect()
    }
}

/// Physical-unit, run-median reconstructions of every test day with LR data
/// carrying `bias` and in-situ data from `buoys`.
pub fn predict(ens: &Ensemble, test: &TestSet, bias: BiasKind, buoys: &BuoyNetwork) -> Result<Vec<Array3<f64>>> {
    if bias.is_random() {
        return Err(Error::invalid("test-time bias must be a fixed value"));
    }
    test.samples
        .par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let bundle = train_time_bias(s.gt36.data().view(), bias, &ens.scheme, test.landsea, buoys, &mut rng)?;
            let obs = ObsTensors::new(&bundle)?;
            let recs: Vec<Array3<f64>> =
                ens.runs.iter().map(|p| ens.model.reconstruct(p, &obs).map(|r| r.x_hat)).collect::<Result<_>>()?;
            Ok(denormalize(&median_aggregate(&recs)?, test.std))
        })
        .collect()
}

pub fn evaluate(ens: &Ensemble, test: &TestSet) -> Result<RegionRmse> {
    RegionRmse::compute(&predict(ens, test, BiasKind::None, test.buoys)?, &test.truth(), test.landsea)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepKind {
    Delay,
    Remod,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Delay => "delay",
            SweepKind::Remod => "remod",
        }
    }

    /// Delays −4..=4 h, or factors 0.5, 0.6, …, 1.5.
    pub fn points(self) -> Vec<BiasKind> {
        match self {
            SweepKind::Delay => (-MAX_DELAY_H..=MAX_DELAY_H).map(BiasKind::FixedDelay).collect(),
            SweepKind::Remod => (5..=15).map(|k| BiasKind::FixedRemod(k as f64 / 10.0)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub kind: SweepKind,
    pub value: f64,
    pub rmse: f64,
}

/// Full-region RMSE with one constant bias applied to every LR element.
pub fn bias_sweep(ens: &Ensemble, test: &TestSet, kind: SweepKind) -> Result<Vec<SweepPoint>> {
    let truth = test.truth();
    kind.points()
        .into_iter()
        .map(|b| {
            let value = match b {
                BiasKind::FixedDelay(d) => d as f64,
                BiasKind::FixedRemod(a) => a,
                _ => unreachable!("sweeps use fixed biases"),
            };
            let preds = predict(ens, test, b, test.buoys)?;
            Ok(SweepPoint { kind, value, rmse: rmse_masked(&preds, &truth, test.landsea, Region::Full)? })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Degradation {
    /// Buoy id, or zone name.
    pub label: String,
    pub pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuoySweep {
    pub rmse_all: f64,
    pub single: Vec<Degradation>,
    pub zones: Vec<Degradation>,
}

/// Degradation from withholding the buoys rejected by `keep` at test time.
pub fn degradation(ens: &Ensemble, test: &TestSet, rmse_all: f64, keep: impl Fn(&crate::grid::Buoy) -> bool) -> Result<f64> {
    let net = test.buoys.filtered(keep);
    let preds = predict(ens, test, BiasKind::None, &net)?;
    relative_gain(rmse_mask_full(&preds, test)?, rmse_all)
}

fn rmse_mask_full(preds: &[Array3<f64>], test: &TestSet) -> Result<f64> {
    rmse_masked(preds, &test.truth(), test.landsea, Region::Full)
}

pub fn buoy_sweep(ens: &Ensemble, test: &TestSet) -> Result<BuoySweep> {
    if !ens.scheme.config.has_situ() {
        return Err(Error::Config(format!("buoy sweep needs in-situ data, config is {}", ens.scheme.config)));
    }
    let rmse_all = rmse_mask_full(&predict(ens, test, BiasKind::None, test.buoys)?, test)?;
    let single = test
        .buoys
        .buoys()
        .iter()
        .map(|b| Ok(Degradation { label: b.id.to_string(), pct: degradation(ens, test, rmse_all, |o| o.id != b.id)? }))
        .collect::<Result<_>>()?;
    let zones = Zone::ALL
        .iter()
        .map(|&z| Ok(Degradation { label: z.name().to_string(), pct: degradation(ens, test, rmse_all, |o| o.zone != z)? }))
        .collect::<Result<_>>()?;
    Ok(BuoySweep { rmse_all, single, zones })
}

/// LR spatial stride and sampling period of one resolution group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LrGroup {
    pub name: char,
    pub stride_px: usize,
    pub period_h: usize,
}

impl LrGroup {
    /// Desk-scale groups A–D: strides 4 and 8 px crossed with periods 6 h and 1 h.
    pub const DESK: [LrGroup; 4] = [
        LrGroup { name: 'A', stride_px: 4, period_h: 6 },
        LrGroup { name: 'B', stride_px: 4, period_h: 1 },
        LrGroup { name: 'C', stride_px: 8, period_h: 6 },
        LrGroup { name: 'D', stride_px: 8, period_h: 1 },
    ];

    pub fn scheme(&self, config: DataConfig, hr_period_h: Option<usize>) -> Result<SamplingScheme> {
        SamplingScheme::new(config, self.period_h, self.stride_px, hr_period_h)
    }
}

/// One cell of the resolution campaign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResolutionCell {
    pub group: char,
    pub config: DataConfig,
    pub hr_period_h: usize,
}

pub const RESOLUTION_CONFIGS: [DataConfig; 2] = [DataConfig::C1, DataConfig::C3];
pub const HR_PERIODS: [usize; 2] = [12, 24];

/// Gains of every cell over its group's baseline, indexed `[group][config][period]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    pub groups: Vec<char>,
    pub gains: Vec<[[f64; 2]; 2]>,
}

impl GainMatrix {
    /// `rmse(cell)` and `baseline(group)` are full-region test RMSEs.
    pub fn build(groups: &[LrGroup], rmse: impl Fn(ResolutionCell) -> Result<f64>, baseline: impl Fn(char) -> Result<f64>) -> Result<Self> {
        let mut gains = Vec::with_capacity(groups.len());
        for g in groups {
            let base = baseline(g.name)?;
            let mut m = [[0.0; 2]; 2];
            for (ci, &config) in RESOLUTION_CONFIGS.iter().enumerate() {
                for (pi, &hr_period_h) in HR_PERIODS.iter().enumerate() {
                    m[ci][pi] = relative_gain(rmse(ResolutionCell { group: g.name, config, hr_period_h })?, base)?;
                }
            }
            gains.push(m);
        }
        Ok(Self { groups: groups.iter().map(|g| g.name).collect(), gains })
    }

    /// Per group and period, gain of C3 minus gain of C1.
    pub fn situ_benefit(&self) -> Vec<[f64; 2]> {
        self.gains.iter().map(|m| [m[1][0] - m[0][0], m[1][1] - m[0][1]]).collect()
    }

    /// Per group and config, gain at 12 h minus gain at 24 h.
    pub fn frequency_benefit(&self) -> Vec<[f64; 2]> {
        self.gains.iter().map(|m| [m[0][0] - m[0][1], m[1][0] - m[1][1]]).collect()
    }
}

/// `ΔE = RMSE(direct inversion) − RMSE(learned variational scheme)`.
pub fn delta_e(rmse_direct: f64, rmse_varnet: f64) -> f64 {
    rmse_direct - rmse_varnet
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub campaign: String,
    pub model: String,
    pub config: String,
    pub hr_period_h: Option<usize>,
    pub lr_group: String,
    pub region: Region,
    pub rmse_mps: f64,
    pub gain_pct: Option<f64>,
    pub baseline: String,
}

impl Default for MetricsRow {
    fn default() -> Self {
        Self {
            campaign: String::new(),
            model: String::new(),
            config: String::new(),
            hr_period_h: None,
            lr_group: String::new(),
            region: Region::Full,
            rmse_mps: 0.0,
            gain_pct: None,
            baseline: String::new(),
        }
    }
}

pub const METRICS_HEADER: [&str; 9] =
    ["campaign", "model", "config", "hr_period_h", "lr_group", "region", "rmse_mps", "gain_pct", "baseline"];

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::format(path, e.to_string())
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(METRICS_HEADER).map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.campaign.clone(),
            r.model.clone(),
            r.config.clone(),
            opt(&r.hr_period_h),
            r.lr_group.clone(),
            r.region.to_string(),
            r.rmse_mps.to_string(),
            opt(&r.gain_pct),
            r.baseline.clone(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let headers = r.headers().map_err(csv_err(path))?.clone();
    if headers.iter().ne(METRICS_HEADER) {
        return Err(Error::format(path, format!("unexpected header {headers:?}")));
    }
    let bad = |m: String| Error::format(path, m);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
        rows.push(MetricsRow {
            campaign: rec[0].to_string(),
            model: rec[1].to_string(),
            config: rec[2].to_string(),
            hr_period_h: if rec[3].is_empty() { None } else { Some(rec[3].parse().map_err(|e| bad(format!("{e}")))?) },
            lr_group: rec[4].to_string(),
            region: rec[5].parse().map_err(|e: Error| bad(e.to_string()))?,
            rmse_mps: num(&rec[6])?,
            gain_pct: if rec[7].is_empty() { None } else { Some(num(&rec[7])?) },
            baseline: rec[8].to_string(),
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["bias_kind", "bias_value", "rmse_mps"]).map_err(csv_err(path))?;
    for p in points {
        w.write_record([p.kind.name().to_string(), p.value.to_string(), p.rmse.to_string()]).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_degradation_csv(path: &Path, rows: &[Degradation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["buoy_id_or_zone", "degradation_pct"]).map_err(csv_err(path))?;
    for d in rows {
        w.write_record([d.label.clone(), d.pct.to_string()]).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean absolute difference between two fields of one frame, for error maps.
pub fn abs_error_map(x_hat: &Array3<f64>, u: &Array3<f64>) -> ndarray::Array2<f64> {
    let mut e = ndarray::Array2::zeros((x_hat.dim().1, x_hat.dim().2));
    let t = x_hat.dim().0 as f64;
    for k in 0..x_hat.dim().0 {
        Zip::from(&mut e)
            .and(x_hat.index_axis(ndarray::Axis(0), k))
            .and(u.index_axis(ndarray::Axis(0), k))
            .for_each(|o, &a, &b| *o += (a - b).abs() / t);
    }
    e
}
