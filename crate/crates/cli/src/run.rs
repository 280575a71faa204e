//! `train`, `evaluate` and `sweep`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;
use windosse::eval::gp::{gp_degradation_map, GP_LENGTH_KM};
use windosse::eval::svg::{heatmap, line_plot, Series};
use windosse::eval::{
    bias_sweep, buoy_sweep, delta_e, predict, relative_gain, write_degradation_csv, write_metrics_csv, write_sweep_csv,
    Degradation, Ensemble, GainMatrix, LrGroup, MetricsRow, Region, RegionRmse, ResolutionCell, SweepKind, TestSet,
    HR_PERIODS, RESOLUTION_CONFIGS,
};
use windosse::neural::{ParamStore, PhiVariant};
use windosse::obs::{BiasKind, DataConfig};
use windosse::train::{train_ensemble, Task};

use crate::artifacts::{io_err, open_output_dir, write_file, Layout, Manifest};
use crate::cells::{Cell, TrainBias, GROUPS};
use crate::config::{Campaign, ExperimentConfig};
use crate::data::{load, Data};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainStatus {
    Trained,
    Cached,
    NotTrainable,
}

fn task<'a>(cfg: &ExperimentConfig, cell: &Cell, model: &'a windosse::assim::ModelConfig, data: &'a Data) -> Result<Task<'a>, CliError> {
    Ok(Task {
        kind: cell.kind,
        model,
        scheme: cell.scheme(&cfg.sampling)?,
        bias: cell.bias.kind(),
        landsea: &data.landsea,
        buoys: &data.buoys,
    })
}

fn cached(dir: &Path, cfg: &ExperimentConfig) -> bool {
    Manifest::verify(dir, &cfg.hash()).is_ok_and(|m| m.info.get("runs") == Some(&serde_json::json!(cfg.train.runs)))
}

/// Train every trainable cell of the campaign that has no valid checkpoints yet.
pub fn train(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<(Cell, TrainStatus)>, CliError> {
    let data = load(cfg, layout)?;
    let tc = cfg.train_config();
    cfg.cells()?
        .into_par_iter()
        .map(|cell| {
            if !cell.kind.is_trainable() {
                return Ok((cell, TrainStatus::NotTrainable));
            }
            let dir = layout.model(&cell);
            if cached(&dir, cfg) {
                return Ok((cell, TrainStatus::Cached));
            }
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            }
            let mc = cfg.model_config(cell.phi);
            let t = task(cfg, &cell, &mc, &data)?;
            let records = train_ensemble(&t, &data.train, &data.val, &tc, Some(&dir))?;
            let mut m = Manifest::new(&cfg.hash(), "cell");
            m.info("label", cell.label());
            m.info("runs", tc.runs);
            m.info("seeds", records.iter().map(|r| r.seed).collect::<Vec<_>>());
            m.info("best_epochs", records.iter().map(|r| r.best_epoch).collect::<Vec<_>>());
            m.info("n_iterations", cfg.model.n_iterations);
            for r in &records {
                m.add(&dir, &format!("run{:02}.ckpt", r.run))?;
                m.add(&dir, &format!("run{:02}.csv", r.run))?;
            }
            m.write(&dir)?;
            Ok((cell, TrainStatus::Trained))
        })
        .collect()
}

pub fn load_ensemble(cfg: &ExperimentConfig, layout: &Layout, data: &Data, cell: &Cell) -> Result<Ensemble, CliError> {
    let mc = cfg.model_config(cell.phi);
    let t = task(cfg, cell, &mc, data)?;
    if !cell.kind.is_trainable() {
        return Ok(Ensemble::interp(t.scheme));
    }
    let dir = layout.model(cell);
    let m = Manifest::verify(&dir, &cfg.hash())?;
    let runs = m.info.get("runs").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
    let model = t.build_model()?;
    let runs = (0..runs)
        .map(|r| {
            let mut p = model.init_params(0);
            p.load_checkpoint(&dir.join(format!("run{r:02}.ckpt")))?;
            Ok(p)
        })
        .collect::<Result<Vec<ParamStore>, CliError>>()?;
    Ok(Ensemble { model, runs, scheme: t.scheme })
}

/// Ensembles of every cell, or the list of cells lacking checkpoints.
fn ensembles(cfg: &ExperimentConfig, layout: &Layout, data: &Data, cells: &[Cell]) -> Result<Vec<Ensemble>, CliError> {
    let missing: Vec<String> = cells
        .iter()
        .filter(|c| c.kind.is_trainable() && !layout.model(c).join(crate::artifacts::MANIFEST).exists())
        .map(|c| c.label())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Missing(format!("no checkpoints for {}; run `train` first", missing.join(", "))));
    }
    cells.iter().map(|c| load_ensemble(cfg, layout, data, c)).collect()
}

pub fn test_set(data: &Data) -> TestSet<'_> {
    TestSet { samples: &data.test, std: data.std.test, landsea: &data.landsea, buoys: &data.buoys }
}

/// The cell whose full-region RMSE the gains of `cell` refer to.
fn baseline_of(campaign: Campaign, cell: &Cell) -> Option<Cell> {
    let b1 = |config, hr, group| Cell { kind: windosse::assim::ModelKind::B1, config, hr_period_h: hr, group, bias: TrainBias::None, ..*cell };
    match campaign {
        Campaign::Benchmark | Campaign::Bias => Some(Cell { phi: cell.default_phi, ..b1(DataConfig::SR, None, 'A') }),
        Campaign::Resolution => Some(b1(DataConfig::SR, None, cell.group)),
        Campaign::Appendix => (cell.kind != windosse::assim::ModelKind::B1).then(|| b1(DataConfig::C3, Some(12), 'A')),
        Campaign::Buoys => None,
    }
}

fn metrics_rows(campaign: Campaign, cells: &[Cell], rmse: &[RegionRmse]) -> Result<Vec<MetricsRow>, CliError> {
    let by_cell: HashMap<Cell, RegionRmse> = cells.iter().copied().zip(rmse.iter().copied()).collect();
    let mut rows = Vec::new();
    for (cell, r) in cells.iter().zip(rmse) {
        let base = baseline_of(campaign, cell).filter(|b| b != cell).and_then(|b| by_cell.get(&b).map(|rb| (b, *rb)));
        for region in Region::ALL {
            let gain = base.map(|(_, rb)| relative_gain(r.get(region), rb.get(region))).transpose()?;
            rows.push(MetricsRow {
                campaign: campaign.name().to_string(),
                model: if campaign == Campaign::Appendix { format!("{}({})", cell.kind, cell.phi.name()) } else { cell.model_name() },
                config: cell.config.to_string(),
                hr_period_h: cell.hr_period_h,
                lr_group: cell.group.to_string(),
                region,
                rmse_mps: r.get(region),
                gain_pct: gain,
                baseline: base.map(|(b, _)| b.label()).unwrap_or_default(),
            });
        }
    }
    Ok(rows)
}

/// Per-pixel mean squared error over all days and hours.
fn mse_map(preds: &[Array3<f64>], truth: &[Array3<f64>]) -> Array2<f64> {
    let (_, h, w) = truth[0].dim();
    let mut acc = Array2::zeros((h, w));
    let mut n = 0.0;
    for (p, u) in preds.iter().zip(truth) {
        for (fp, fu) in p.axis_iter(Axis(0)).zip(u.axis_iter(Axis(0))) {
            acc.zip_mut_with(&(&fp - &fu), |a, d| *a += d * d);
            n += 1.0;
        }
    }
    acc / n
}

fn write_svg(dir: &Path, m: &mut Manifest, name: &str, svg: &str) -> Result<(), CliError> {
    write_file(&dir.join(name), svg.as_bytes())?;
    m.add(dir, name)
}

/// Reconstruction, error and gain maps of the best variational cell against B1-SR.
fn benchmark_plots(dir: &Path, m: &mut Manifest, cells: &[Cell], preds: &[Vec<Array3<f64>>], truth: &[Array3<f64>]) -> Result<(), CliError> {
    let find = |label: &str| cells.iter().position(|c| c.label() == label);
    let hour = 12;
    let frame = |a: &Array3<f64>| a.index_axis(Axis(0), hour).to_owned();
    let day0 = &truth[0];
    let range = day0.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    write_svg(dir, m, "truth.svg", &heatmap(&frame(day0), "ground truth, test day 0, 12:00 (m/s)", Some(range)))?;
    let mut mses = Vec::new();
    for label in ["B1-SR-A", "Mm-C3-12h-A"] {
        if let Some(i) = find(label) {
            let title = format!("{label} reconstruction, test day 0, 12:00 (m/s)");
            write_svg(dir, m, &format!("recon_{label}.svg"), &heatmap(&frame(&preds[i][0]), &title, Some(range)))?;
            let mse = mse_map(&preds[i], truth);
            write_svg(dir, m, &format!("mse_{label}.svg"), &heatmap(&mse, &format!("{label} mean squared error (m²/s²)"), None))?;
            mses.push(mse);
        }
    }
    if let [b, v] = &mses[..] {
        let gain = ndarray::Zip::from(v).and(b).map_collect(|&pv, &pb| if pb > 0.0 { 100.0 * (1.0 - pv / pb) } else { 0.0 });
        write_svg(dir, m, "gain_map.svg", &heatmap(&gain, "Mm-C3-12h vs B1-SR: per-pixel MSE gain (%)", None))?;
    }
    Ok(())
}

/// Metrics of every cell of the campaign on the unbiased test set.
pub fn evaluate(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<MetricsRow>, CliError> {
    let data = load(cfg, layout)?;
    let cells = cfg.cells()?;
    let ens = ensembles(cfg, layout, &data, &cells)?;
    let test = test_set(&data);
    let truth = test.truth();
    let preds: Vec<Vec<Array3<f64>>> =
        ens.iter().map(|e| predict(e, &test, BiasKind::None, &data.buoys)).collect::<windosse::Result<_>>()?;
    let rmse: Vec<RegionRmse> =
        preds.iter().map(|p| RegionRmse::compute(p, &truth, &data.landsea)).collect::<windosse::Result<_>>()?;
    let rows = metrics_rows(cfg.campaign, &cells, &rmse)?;

    let dir = layout.campaign(cfg.campaign);
    let mut m = open_output_dir(&dir, &cfg.hash(), cfg.campaign.name())?;
    write_metrics_csv(&dir.join("metrics.csv"), &rows)?;
    m.add(&dir, "metrics.csv")?;
    match cfg.campaign {
        Campaign::Benchmark => benchmark_plots(&dir, &mut m, &cells, &preds, &truth)?,
        Campaign::Appendix => write_delta_e(&dir, &mut m, &cells, &rmse)?,
        _ => {}
    }
    m.info("cells", cells.iter().map(Cell::label).collect::<Vec<_>>());
    m.info("n_iterations", cfg.model.n_iterations);
    m.info("lr_strides_px", [cfg.sampling.near_stride_px, cfg.sampling.far_stride_px]);
    m.write(&dir)?;
    Ok(rows)
}

fn write_delta_e(dir: &Path, m: &mut Manifest, cells: &[Cell], rmse: &[RegionRmse]) -> Result<(), CliError> {
    let full = |kind, phi| {
        cells.iter().zip(rmse).find(|(c, _)| c.kind == kind && c.phi == phi).map(|(_, r)| r.full)
    };
    let path = dir.join("delta_e.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Other(e.to_string()))?;
    let csv_err = |e: csv::Error| CliError::Other(e.to_string());
    w.write_record(["phi_variant", "rmse_direct_mps", "rmse_varnet_mps", "delta_e_mps"]).map_err(csv_err)?;
    for phi in PhiVariant::ALL {
        use windosse::assim::ModelKind::{B1, Mm};
        if let (Some(d), Some(v)) = (full(B1, phi), full(Mm, phi)) {
            w.write_record([phi.name().to_string(), d.to_string(), v.to_string(), delta_e(d, v).to_string()]).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    m.add(dir, "delta_e.csv")
}

/// Campaign-specific sweeps: bias curves, buoy withholding, resolution gains.
pub fn sweep(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<String>, CliError> {
    if matches!(cfg.campaign, Campaign::Benchmark | Campaign::Appendix) {
        return Err(CliError::Config(format!("the {} campaign has no sweep; use `evaluate`", cfg.campaign)));
    }
    let data = load(cfg, layout)?;
    let cells = cfg.cells()?;
    let ens = ensembles(cfg, layout, &data, &cells)?;
    let test = test_set(&data);
    let dir = layout.campaign(cfg.campaign);
    let mut m = open_output_dir(&dir, &cfg.hash(), cfg.campaign.name())?;
    match cfg.campaign {
        Campaign::Bias => sweep_bias(&dir, &mut m, &cells, &ens, &test)?,
        Campaign::Buoys => sweep_buoys(cfg, &dir, &mut m, &cells, &ens, &test)?,
        Campaign::Resolution => sweep_resolution(cfg, &dir, &mut m, &cells, &ens, &test)?,
        Campaign::Benchmark | Campaign::Appendix => unreachable!(),
    }
    m.write(&dir)?;
    Ok(m.files.keys().cloned().collect())
}

fn sweep_bias(dir: &Path, m: &mut Manifest, cells: &[Cell], ens: &[Ensemble], test: &TestSet) -> Result<(), CliError> {
    for kind in [SweepKind::Delay, SweepKind::Remod] {
        let trained_on = if kind == SweepKind::Delay { TrainBias::RandomDelay } else { TrainBias::RandomRemod };
        let chosen: Vec<(&Cell, &Ensemble)> =
            cells.iter().zip(ens).filter(|(c, _)| c.bias == TrainBias::None || c.bias == trained_on).collect();
        let curves: Vec<Vec<windosse::eval::SweepPoint>> =
            chosen.par_iter().map(|(_, e)| bias_sweep(e, test, kind)).collect::<windosse::Result<_>>()?;
        let mut series = Vec::new();
        for ((cell, _), pts) in chosen.iter().zip(&curves) {
            let name = format!("sweep_{}_{}.csv", cell.label(), kind.name());
            write_sweep_csv(&dir.join(&name), pts)?;
            m.add(dir, &name)?;
            series.push(Series { label: cell.label(), points: pts.iter().map(|p| (p.value, p.rmse)).collect() });
        }
        let xlabel = if kind == SweepKind::Delay { "delay (h)" } else { "remodulation factor" };
        let svg = line_plot(&series, &format!("test RMSE under LR {}", kind.name()), xlabel, "RMSE (m/s)");
        write_svg(dir, m, &format!("{}.svg", kind.name()), &svg)?;
    }
    Ok(())
}

fn sweep_buoys(cfg: &ExperimentConfig, dir: &Path, m: &mut Manifest, cells: &[Cell], ens: &[Ensemble], test: &TestSet) -> Result<(), CliError> {
    let grid = cfg.grid()?;
    let positions: Vec<(usize, usize)> = test.buoys.buoys().iter().map(|b| (b.row, b.col)).collect();
    for (cell, e) in cells.iter().zip(ens) {
        let s = buoy_sweep(e, test)?;
        let rows: Vec<Degradation> = s.single.iter().chain(&s.zones).cloned().collect();
        let name = format!("degradation_{}.csv", cell.label());
        write_degradation_csv(&dir.join(&name), &rows)?;
        m.add(dir, &name)?;
        let values: Vec<f64> = s.single.iter().map(|d| d.pct).collect();
        let map = gp_degradation_map(&positions, &values, grid)?;
        let title = format!("{}: single-buoy degradation (%)", cell.label());
        write_svg(dir, m, &format!("gp_map_{}.svg", cell.label()), &heatmap(&map.values, &title, None))?;
        m.info(&format!("gp_{}", cell.label()), serde_json::json!({
            "length_scale_km": GP_LENGTH_KM,
            "length_scale_px": map.length_scale_px,
            "prior_mean": map.prior_mean,
            "rmse_all_buoys": s.rmse_all,
        }));
    }
    Ok(())
}

fn sweep_resolution(cfg: &ExperimentConfig, dir: &Path, m: &mut Manifest, cells: &[Cell], ens: &[Ensemble], test: &TestSet) -> Result<(), CliError> {
    let truth = test.truth();
    let full: Vec<f64> = ens
        .par_iter()
        .map(|e| windosse::eval::rmse_masked(&predict(e, test, BiasKind::None, test.buoys)?, &truth, test.landsea, Region::Full))
        .collect::<windosse::Result<_>>()?;
    let lookup = |pred: &dyn Fn(&Cell) -> bool, what: String| {
        cells.iter().zip(&full).find(|(c, _)| pred(c)).map(|(_, r)| *r).ok_or(windosse::Error::MissingInput(what))
    };
    let s = &cfg.sampling;
    let groups: Vec<LrGroup> = GROUPS
        .iter()
        .map(|&g| {
            let c = Cell { group: g, ..Cell::new(windosse::assim::ModelKind::B1, DataConfig::SR, None, cfg.model.phi_variant) };
            let sch = c.scheme(s)?;
            Ok(LrGroup { name: g, stride_px: sch.lr_stride_px, period_h: sch.lr_period_h })
        })
        .collect::<Result<_, CliError>>()?;
    let gm = GainMatrix::build(
        &groups,
        |rc: ResolutionCell| {
            lookup(
                &|c| c.kind == windosse::assim::ModelKind::Mm && c.group == rc.group && c.config == rc.config && c.hr_period_h == Some(rc.hr_period_h),
                format!("Mm-{}-{}h-{}", rc.config, rc.hr_period_h, rc.group),
            )
        },
        |g| lookup(&|c| c.kind == windosse::assim::ModelKind::B1 && c.group == g, format!("B1-SR-{g}")),
    )?;

    let path = dir.join("gains.csv");
    let csv_err = |e: csv::Error| CliError::Other(e.to_string());
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["lr_group", "lr_stride_px", "lr_period_h", "config", "hr_period_h", "gain_pct"]).map_err(csv_err)?;
    for (g, mat) in groups.iter().zip(&gm.gains) {
        for (ci, conf) in RESOLUTION_CONFIGS.iter().enumerate() {
            for (pi, hr) in HR_PERIODS.iter().enumerate() {
                w.write_record([g.name.to_string(), g.stride_px.to_string(), g.period_h.to_string(), conf.to_string(), hr.to_string(), mat[ci][pi].to_string()])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    m.add(dir, "gains.csv")?;

    let path = dir.join("benefits.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["lr_group", "curve", "at", "value_pct"]).map_err(csv_err)?;
    let situ = gm.situ_benefit();
    let freq = gm.frequency_benefit();
    for (k, g) in groups.iter().enumerate() {
        for (pi, hr) in HR_PERIODS.iter().enumerate() {
            w.write_record([g.name.to_string(), "C3-C1".into(), format!("{hr}h"), situ[k][pi].to_string()]).map_err(csv_err)?;
        }
        for (ci, conf) in RESOLUTION_CONFIGS.iter().enumerate() {
            w.write_record([g.name.to_string(), "12h-24h".into(), conf.to_string(), freq[k][ci].to_string()]).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    m.add(dir, "benefits.csv")?;

    let x = |k: usize| k as f64;
    let mut series = Vec::new();
    for (ci, conf) in RESOLUTION_CONFIGS.iter().enumerate() {
        for (pi, hr) in HR_PERIODS.iter().enumerate() {
            series.push(Series { label: format!("Mm-{conf} {hr}h"), points: gm.gains.iter().enumerate().map(|(k, g)| (x(k), g[ci][pi])).collect() });
        }
    }
    let svg = line_plot(&series, "gain over each group's B1-SR (groups A=0 .. D=3)", "LR group", "gain (%)");
    write_svg(dir, m, "gains.svg", &svg)?;
    m.info("groups", &groups);
    Ok(())
}
