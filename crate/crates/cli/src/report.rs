//! `report`: one Markdown summary of every campaign directory under the root.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use windosse::eval::{read_metrics_csv, MetricsRow, Region};

use crate::artifacts::{write_file, Layout, Manifest, MANIFEST};
use crate::config::Campaign;
use crate::CliError;

/// Paper-scale reference values quoted next to the desk-scale results.
const ZONE_REFERENCE_12H: [(&str, f64); 3] = [("Coastal", -0.69), ("NearSea", -0.66), ("OpenSea", -0.52)];
const DELTA_E_REFERENCE: [(&str, f64); 3] = [("alpha", 0.0954), ("beta", 0.0613), ("gamma", 0.0345)];
/// Slack of the C3-versus-C1 comparison, relative.
pub const C3_SLACK: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub config_hash: String,
    pub text: String,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

type Table = Vec<BTreeMap<String, String>>;

fn read_table(path: &Path) -> Result<Table, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
    let headers = r.headers().map_err(|e| CliError::Other(e.to_string()))?.clone();
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
            Ok(headers.iter().map(String::from).zip(rec.iter().map(String::from)).collect())
        })
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row.get(key).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN)
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_default()
}

fn full_rmse(rows: &[MetricsRow], model: &str, config: &str, hr: Option<usize>, group: &str) -> Option<f64> {
    rows.iter()
        .find(|r| r.model == model && r.config == config && r.hr_period_h == hr && r.lr_group == group && r.region == Region::Full)
        .map(|r| r.rmse_mps)
}

impl Report {
    fn check(&mut self, name: impl Into<String>, holds: bool, detail: impl Into<String>) {
        let c = Check { name: name.into(), holds, detail: detail.into() };
        let _ = writeln!(self.text, "- [{}] {}: {}", if c.holds { "x" } else { " " }, c.name, c.detail);
        self.checks.push(c);
    }

    fn note(&mut self, line: impl AsRef<str>) {
        let _ = writeln!(self.text, "{}", line.as_ref());
    }

    fn warn(&mut self, w: String) {
        let _ = writeln!(self.text, "> warning: {w}");
        self.warnings.push(w);
    }

    fn metrics_table(&mut self, rows: &[MetricsRow]) {
        self.note("| model | config | HR period | LR group | full RMSE | gain | sea RMSE | gain | land RMSE | gain | baseline |");
        self.note("|---|---|---|---|---|---|---|---|---|---|---|");
        let mut keys: Vec<(String, String, Option<usize>, String)> = Vec::new();
        for r in rows {
            let k = (r.model.clone(), r.config.clone(), r.hr_period_h, r.lr_group.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        for (model, config, hr, group) in keys {
            let get = |reg: Region| {
                rows.iter().find(|r| r.model == model && r.config == config && r.hr_period_h == hr && r.lr_group == group && r.region == reg)
            };
            let mut line = format!("| {model} | {config} | {} | {group} |", hr.map(|h| format!("{h} h")).unwrap_or("–".into()));
            let mut baseline = String::new();
            for reg in Region::ALL {
                let r = get(reg);
                let _ = write!(line, " {} | {} |", fmt_opt(r.map(|r| r.rmse_mps), 4), fmt_opt(r.and_then(|r| r.gain_pct), 2));
                if let Some(r) = r {
                    baseline = r.baseline.clone();
                }
            }
            let _ = write!(line, " {baseline} |");
            self.note(line);
        }
        self.note("");
    }

    fn benchmark(&mut self, dir: &Path) -> Result<(), CliError> {
        let rows = read_metrics_csv(&dir.join("metrics.csv"))?;
        self.metrics_table(&rows);
        let f = |m: &str, c: &str, h| full_rmse(&rows, m, c, h, "A");
        if let (Some(b0), Some(b1)) = (f("B0", "SR", None), f("B1", "SR", None)) {
            self.check("B1-SR beats B0", b1 < b0, format!("{b1:.4} vs {b0:.4} m/s"));
        }
        if let (Some(mm), Some(b1)) = (f("Mm", "C3", Some(12)), f("B1", "SR", None)) {
            self.check("Mm-C3 (12 h) beats B1-SR", mm < b1, format!("{mm:.4} vs {b1:.4} m/s"));
        }
        for hr in [12, 24] {
            if let (Some(c3), Some(c1)) = (f("Mm", "C3", Some(hr)), f("Mm", "C1", Some(hr))) {
                let bound = c1 * (1.0 + C3_SLACK);
                self.check(
                    format!("Mm-C3 within {:.0}% of Mm-C1 or better ({hr} h)", 100.0 * C3_SLACK),
                    c3 <= bound,
                    format!("{c3:.4} vs {c1:.4} m/s"),
                );
            }
        }
        self.note("");
        Ok(())
    }

    fn bias(&mut self, dir: &Path, files: &[String]) -> Result<(), CliError> {
        let mut endpoints: BTreeMap<(String, String), (f64, f64, f64)> = BTreeMap::new();
        self.note("| cell | sweep | points | RMSE at low end | RMSE at identity | RMSE at high end |");
        self.note("|---|---|---|---|---|---|");
        for f in files.iter().filter(|f| f.starts_with("sweep_") && f.ends_with(".csv")) {
            let stem = &f["sweep_".len()..f.len() - 4];
            let Some((cell, kind)) = stem.rsplit_once('_') else { continue };
            let t = read_table(&dir.join(f))?;
            let id_value = if kind == "delay" { 0.0 } else { 1.0 };
            let at = |v: f64| t.iter().find(|r| (num(r, "bias_value") - v).abs() < 1e-9).map(|r| num(r, "rmse_mps"));
            let (lo, hi) = (num(&t[0], "rmse_mps"), num(&t[t.len() - 1], "rmse_mps"));
            let id = at(id_value).unwrap_or(f64::NAN);
            self.note(format!("| {cell} | {kind} | {} | {lo:.4} | {id:.4} | {hi:.4} |", t.len()));
            endpoints.insert((cell.to_string(), kind.to_string()), (lo, id, hi));
        }
        self.note("");
        for ((cell, kind), (lo, id, hi)) in &endpoints {
            let expected = if kind == "delay" { 9 } else { 11 };
            let n = read_table(&dir.join(format!("sweep_{cell}_{kind}.csv")))?.len();
            self.check(format!("{cell} {kind} curve has {expected} points"), n == expected, format!("{n} points"));
            let biased = cell.ends_with("-rd") || cell.ends_with("-ri");
            if kind == "delay" && !biased {
                self.check(
                    format!("{cell}: extreme delays degrade the unbiased-trained model"),
                    *lo >= *id && *hi >= *id,
                    format!("{lo:.4} / {id:.4} / {hi:.4} m/s at −4 / 0 / +4 h"),
                );
            }
        }
        for ((cell, kind), (lo, _, hi)) in &endpoints {
            let base = cell.trim_end_matches("-rd").trim_end_matches("-ri");
            if base != cell {
                if let Some((blo, _, bhi)) = endpoints.get(&(base.to_string(), kind.clone())) {
                    self.note(format!(
                        "- {cell} vs {base}, {kind} endpoints (report only): {lo:.4} vs {blo:.4}, {hi:.4} vs {bhi:.4} m/s"
                    ));
                }
            }
        }
        self.note("");
        Ok(())
    }

    fn buoys(&mut self, dir: &Path, files: &[String]) -> Result<(), CliError> {
        for f in files.iter().filter(|f| f.starts_with("degradation_") && f.ends_with(".csv")) {
            let cell = &f["degradation_".len()..f.len() - 4];
            let t = read_table(&dir.join(f))?;
            self.note(format!("{cell}:\n"));
            self.note("| buoy or zone | degradation (%) |");
            self.note("|---|---|");
            for r in &t {
                self.note(format!("| {} | {:.3} |", r["buoy_id_or_zone"], num(r, "degradation_pct")));
            }
            self.note("");
            self.check(format!("{cell}: 13 buoys and 3 zones"), t.len() == 16, format!("{} rows", t.len()));
            let zones: Vec<String> = ZONE_REFERENCE_12H
                .iter()
                .map(|(z, reference)| {
                    let v = t.iter().find(|r| r["buoy_id_or_zone"] == *z).map(|r| num(r, "degradation_pct"));
                    format!("{z} {} (reference {reference})", fmt_opt(v, 3))
                })
                .collect();
            self.note(format!("- zone degradations (report only): {}", zones.join(", ")));
            self.note("");
        }
        Ok(())
    }

    fn resolution(&mut self, dir: &Path) -> Result<(), CliError> {
        let t = read_table(&dir.join("gains.csv"))?;
        self.note("| LR group | stride (px) | period (h) | C1 12 h | C1 24 h | C3 12 h | C3 24 h |");
        self.note("|---|---|---|---|---|---|---|");
        let mut groups: Vec<String> = t.iter().map(|r| r["lr_group"].clone()).collect();
        groups.dedup();
        for g in &groups {
            let rows: Vec<_> = t.iter().filter(|r| &r["lr_group"] == g).collect();
            let cell = |c: &str, h: &str| {
                rows.iter().find(|r| r["config"] == c && r["hr_period_h"] == h).map(|r| num(r, "gain_pct"))
            };
            self.note(format!(
                "| {g} | {} | {} | {} | {} | {} | {} |",
                rows[0]["lr_stride_px"],
                rows[0]["lr_period_h"],
                fmt_opt(cell("C1", "12"), 2),
                fmt_opt(cell("C1", "24"), 2),
                fmt_opt(cell("C3", "12"), 2),
                fmt_opt(cell("C3", "24"), 2)
            ));
        }
        self.note("");
        self.check("gain matrix has 4 x 2 x 2 cells", t.len() == 16, format!("{} cells", t.len()));
        if let Ok(b) = read_table(&dir.join("benefits.csv")) {
            let positive = b.iter().filter(|r| r["curve"] == "C3-C1" && num(r, "value_pct") > 0.0).count();
            let total = b.iter().filter(|r| r["curve"] == "C3-C1").count();
            self.note(format!("- in-situ benefit (C3 − C1 gain) positive in {positive} of {total} group/period pairs (report only)"));
            self.note("");
        }
        Ok(())
    }

    fn appendix(&mut self, dir: &Path) -> Result<(), CliError> {
        let rows = read_metrics_csv(&dir.join("metrics.csv"))?;
        let t = read_table(&dir.join("delta_e.csv"))?;
        self.note("| flow operator | B1 RMSE | Mm RMSE | ΔE (m/s) | reference ΔE |");
        self.note("|---|---|---|---|---|");
        for r in &t {
            let phi = r["phi_variant"].as_str();
            let reference = DELTA_E_REFERENCE.iter().find(|(p, _)| *p == phi).map(|(_, v)| *v);
            self.note(format!(
                "| {phi} | {:.4} | {:.4} | {:.4} | {} |",
                num(r, "rmse_direct_mps"),
                num(r, "rmse_varnet_mps"),
                num(r, "delta_e_mps"),
                fmt_opt(reference, 4)
            ));
            let full = |model: String| rows.iter().find(|m| m.region == Region::Full && m.model == model).map(|m| m.rmse_mps);
            if let (Some(d), Some(v)) = (full(format!("B1({phi})")), full(format!("Mm({phi})"))) {
                let stored = num(r, "delta_e_mps");
                self.check(
                    format!("ΔE({phi}) recomputed from metrics.csv"),
                    (windosse::eval::delta_e(d, v) - stored).abs() <= 1e-10,
                    format!("{:.6} vs {stored:.6} m/s", windosse::eval::delta_e(d, v)),
                );
            }
        }
        self.note("");
        Ok(())
    }
}

/// Collate every campaign directory under `layout.root` into `report.md`.
pub fn report(layout: &Layout) -> Result<Report, CliError> {
    let present: Vec<(Campaign, Manifest)> = Campaign::ALL
        .into_iter()
        .filter_map(|c| Manifest::read(&layout.campaign(c)).ok().map(|m| (c, m)))
        .collect();
    if present.is_empty() {
        let expected: Vec<String> = Campaign::ALL
            .iter()
            .map(|c| format!("{}/{MANIFEST}", layout.campaign(*c).display()))
            .collect();
        return Err(CliError::Missing(format!("no campaign outputs found; expected one of: {}", expected.join(", "))));
    }
    let mut hashes: Vec<(String, String)> = present.iter().map(|(c, m)| (c.name().to_string(), m.config_hash.clone())).collect();
    if let Ok(d) = Manifest::read(&layout.data()) {
        hashes.push(("data".into(), d.config_hash));
    }
    if hashes.iter().any(|(_, h)| *h != hashes[0].1) {
        let list: Vec<String> = hashes.iter().map(|(n, h)| format!("{n}={h}")).collect();
        return Err(CliError::Config(format!("outputs come from different configs: {}", list.join(", "))));
    }

    let mut rep = Report { config_hash: hashes[0].1.clone(), ..Report::default() };
    rep.note("# windosse report\n");
    rep.note(format!("Config hash `{}`. RMSE in m/s on de-normalized test fields; gains in percent.\n", rep.config_hash));
    if let Ok(d) = Manifest::read(&layout.data()) {
        if let (Some(s), Some(std)) = (d.info.get("samples"), d.info.get("std")) {
            rep.note(format!("Dataset samples {s}, normalization std {std}.\n"));
        }
    }
    for (c, m) in &present {
        let dir = layout.campaign(*c);
        rep.note(format!("## {c}\n"));
        if let Err(e) = Manifest::verify(&dir, &rep.config_hash) {
            rep.warn(e.to_string());
            continue;
        }
        let files: Vec<String> = m.files.keys().cloned().collect();
        let result = match c {
            Campaign::Benchmark => rep.benchmark(&dir),
            Campaign::Bias => rep.bias(&dir, &files),
            Campaign::Buoys => rep.buoys(&dir, &files),
            Campaign::Resolution => rep.resolution(&dir),
            Campaign::Appendix => rep.appendix(&dir),
        };
        if let Err(e) = result {
            rep.warn(format!("{c}: {e}"));
        }
        if let Some(gp) = m.info.iter().filter(|(k, _)| k.starts_with("gp_")).map(|(k, v)| format!("{k}: {v}")).reduce(|a, b| a + "; " + &b) {
            rep.note(format!("GP interpolation settings: {gp}\n"));
        }
    }
    let held = rep.checks.iter().filter(|c| c.holds).count();
    rep.note(format!("{held} of {} checks hold.", rep.checks.len()));
    write_file(&layout.report(), rep.text.as_bytes())?;
    Ok(rep)
}
