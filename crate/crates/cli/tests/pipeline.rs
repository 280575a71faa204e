use std::fs;
use std::path::Path;
use std::process::Command;

use windosse::assim::ModelKind;
use windosse::eval::{read_metrics_csv, Region};
use windosse::neural::{ParamGroup, ParamStore};
use windosse::obs::DataConfig;
use windosse_cli::artifacts::{Layout, Manifest};
use windosse_cli::cells::Cell;
use windosse_cli::config::{ExperimentConfig, DESK_PROFILE};
use windosse_cli::{data, report, run, CliError};

const TINY: &str = r#"
[grid]
height = 16
width = 16
spacing_km = 12.0
[coast]
base_col = 4.0
amplitude = 0.0
wavelength_rows = 1.0
[synth]
n_days = 9
n_modes = 24
[split]
train = 3
test = 3
val = 3
[model]
phi_width = 3
lstm_hidden = 3
feature_channels = 2
[appendix]
alpha_width = 3
beta_width = 4
gamma_width = 2
[train]
epochs = 1
runs = 2
batch_size = 1
"#;

fn tiny(extra: &str) -> ExperimentConfig {
    ExperimentConfig::from_layers(&[
        ("desk".into(), DESK_PROFILE.into()),
        ("tiny".into(), TINY.into()),
        ("extra".into(), extra.into()),
    ])
    .unwrap()
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn generate_writes_splits_and_a_stable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let cfg = tiny("");
    let m = data::generate(&cfg, &layout).unwrap();
    for s in ["train", "val", "test"] {
        assert!(layout.data().join(format!("{s}.wf01")).exists());
    }
    assert_eq!(m.info["samples"], serde_json::json!({"train": 1, "val": 1, "test": 1}));
    let first = read(&layout.data().join("manifest.json"));
    data::generate(&cfg, &layout).unwrap();
    assert_eq!(first, read(&layout.data().join("manifest.json")));
}

#[test]
fn zero_epoch_training_stores_initial_parameters_for_all_groups() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let cfg = tiny("[train]\nepochs = 0\nruns = 1\n[select]\ncells = [\"Mm-C3-12h-A\"]\n");
    data::generate(&cfg, &layout).unwrap();
    run::train(&cfg, &layout).unwrap();
    let cell = Cell::parse("Mm-C3-12h-A", cfg.model.phi_variant).unwrap();
    let ckpt = ParamStore::read_checkpoint(&layout.model(&cell).join("run00.ckpt")).unwrap();
    let d = data::load(&cfg, &layout).unwrap();
    let ens = run::load_ensemble(&cfg, &layout, &d, &cell).unwrap();
    let mut init = ens.model.init_params(cfg.train_config().run_seed(0));
    init.round_f32();
    assert_eq!(ckpt, init);
    assert_eq!(ckpt.groups(), ParamGroup::ALL.to_vec());
    let status = run::train(&cfg, &layout).unwrap();
    assert_eq!(status[0].1, run::TrainStatus::Cached);
}

#[test]
fn benchmark_pipeline_is_complete_idempotent_and_reported() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let cfg = tiny("");
    assert!(matches!(report::report(&layout), Err(CliError::Missing(_))));
    data::generate(&cfg, &layout).unwrap();
    assert!(matches!(run::evaluate(&cfg, &layout), Err(CliError::Missing(_))));
    run::train(&cfg, &layout).unwrap();
    let rows = run::evaluate(&cfg, &layout).unwrap();
    assert_eq!(rows.len(), 17 * 3);
    let metrics = layout.campaign(cfg.campaign).join("metrics.csv");
    let first = read(&metrics);
    run::evaluate(&cfg, &layout).unwrap();
    assert_eq!(first, read(&metrics));

    let stored = read_metrics_csv(&metrics).unwrap();
    let b1 = stored.iter().find(|r| r.model == "B1" && r.config == "SR" && r.region == Region::Full).unwrap();
    assert_eq!((b1.gain_pct, b1.baseline.as_str()), (None, ""));
    let b0 = stored.iter().find(|r| r.model == "B0" && r.region == Region::Full).unwrap();
    let g = windosse::eval::relative_gain(b0.rmse_mps, b1.rmse_mps).unwrap();
    assert_eq!(b0.gain_pct, Some(g));
    assert_eq!(b0.baseline, "B1-SR-A");
    for r in &stored {
        assert_eq!(r.campaign, "benchmark");
    }
    for f in ["truth.svg", "recon_Mm-C3-12h-A.svg", "mse_B1-SR-A.svg", "gain_map.svg"] {
        assert!(layout.campaign(cfg.campaign).join(f).exists(), "{f}");
    }

    let rep = report::report(&layout).unwrap();
    assert_eq!(rep.config_hash, cfg.hash());
    let line = rep.text.lines().find(|l| l.starts_with("| B1 | SR |")).unwrap();
    assert!(line.contains(&format!("{:.4}", b1.rmse_mps)));
    assert!(rep.checks.iter().any(|c| c.name == "B1-SR beats B0"));
    assert!(layout.report().exists());
}

#[test]
fn sweeps_emit_expected_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());

    let bias = tiny("campaign = \"bias\"\n[select]\ncells = [\"B1-SR-A\", \"B1-SR-A-rd\"]\n");
    data::generate(&bias, &layout).unwrap();
    run::train(&bias, &layout).unwrap();
    run::sweep(&bias, &layout).unwrap();
    let bdir = layout.campaign(bias.campaign);
    let lines = |p: &Path| fs::read_to_string(p).unwrap().lines().count() - 1;
    assert_eq!(lines(&bdir.join("sweep_B1-SR-A_delay.csv")), 9);
    assert_eq!(lines(&bdir.join("sweep_B1-SR-A_remod.csv")), 11);
    assert_eq!(lines(&bdir.join("sweep_B1-SR-A-rd_delay.csv")), 9);
    assert!(!bdir.join("sweep_B1-SR-A-rd_remod.csv").exists());

    let buoys = tiny("campaign = \"buoys\"\n[select]\ncells = [\"Mm-C3-12h-A\"]\n");
    run::train(&buoys, &layout).unwrap();
    run::sweep(&buoys, &layout).unwrap();
    let text = fs::read_to_string(layout.campaign(buoys.campaign).join("degradation_Mm-C3-12h-A.csv")).unwrap();
    assert_eq!(text.lines().count() - 1, 16);
    assert!(layout.campaign(buoys.campaign).join("gp_map_Mm-C3-12h-A.svg").exists());
    let rep = report::report(&layout).unwrap();
    let zones = rep.text.lines().find(|l| l.starts_with("- zone degradations")).unwrap();
    for z in ["Coastal", "NearSea", "OpenSea"] {
        let value = zones.split(&format!("{z} ")).nth(1).unwrap();
        assert!(value.starts_with(|c: char| c == '-' || c.is_ascii_digit()), "{zones}");
    }

    let res = tiny("campaign = \"resolution\"\n[train]\nruns = 1\n");
    data::generate(&res, &layout).unwrap();
    run::train(&res, &layout).unwrap();
    run::sweep(&res, &layout).unwrap();
    let gains = fs::read_to_string(layout.campaign(res.campaign).join("gains.csv")).unwrap();
    assert_eq!(gains.lines().count() - 1, 16);
    run::evaluate(&res, &layout).unwrap();

    // The group-A cells of the resolution campaign are the benchmark's cells.
    let bench = tiny("[train]\nruns = 1\n[select]\ncells = [\"B1-SR-A\", \"Mm-C1-12h-A\"]\n");
    let status = run::train(&bench, &layout).unwrap();
    assert!(status.iter().all(|(_, s)| *s == run::TrainStatus::Cached));
    let metrics = |c: &ExperimentConfig| read_metrics_csv(&layout.campaign(c.campaign).join("metrics.csv")).unwrap();
    run::evaluate(&bench, &layout).unwrap();
    let (rb, rr) = (metrics(&bench), metrics(&res));
    for r in &rb {
        let twin = rr
            .iter()
            .find(|x| x.model == r.model && x.config == r.config && x.hr_period_h == r.hr_period_h && x.lr_group == "A" && x.region == r.region)
            .unwrap();
        assert_eq!(twin.rmse_mps.to_bits(), r.rmse_mps.to_bits());
    }

    assert!(matches!(run::sweep(&bench, &layout), Err(CliError::Config(_))));
}

#[test]
fn mixed_hashes_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let cfg = tiny("[select]\ncells = [\"B0-SR-A\"]\n");
    data::generate(&cfg, &layout).unwrap();
    run::evaluate(&cfg, &layout).unwrap();
    let other = cfg.clone().with_seed(77);
    assert!(matches!(run::evaluate(&other, &layout), Err(CliError::Config(_))));
    assert!(matches!(run::train(&other, &layout), Err(CliError::Config(_))));

    // A second campaign written under another hash makes the report refuse.
    let res_dir = layout.campaign(windosse_cli::config::Campaign::Bias);
    fs::create_dir_all(&res_dir).unwrap();
    Manifest::new(&other.hash(), "bias").write(&res_dir).unwrap();
    assert!(matches!(report::report(&layout), Err(CliError::Config(_))));
}

#[test]
fn appendix_delta_e_matches_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let cfg = tiny("campaign = \"appendix\"\n[train]\nruns = 1\n");
    data::generate(&cfg, &layout).unwrap();
    run::train(&cfg, &layout).unwrap();
    let rows = run::evaluate(&cfg, &layout).unwrap();
    assert_eq!(rows.len(), 6 * 3);
    let rep = report::report(&layout).unwrap();
    let checks: Vec<_> = rep.checks.iter().filter(|c| c.name.starts_with("ΔE")).collect();
    assert_eq!(checks.len(), 3);
    assert!(checks.iter().all(|c| c.holds), "{checks:?}");
    let mm = Cell::parse("Mm-C3-12h-A-gamma", cfg.model.phi_variant).unwrap();
    assert_eq!((mm.kind, mm.config), (ModelKind::Mm, DataConfig::C3));
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_windosse"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg_path = root.join("tiny.toml");
    fs::write(&cfg_path, TINY).unwrap();
    let run = |args: &[&str]| {
        let out = bin().args(args).env_remove("WINDOSSE_OUT").output().unwrap();
        (out.status.code(), String::from_utf8_lossy(&out.stdout).into_owned())
    };
    let c = cfg_path.to_str().unwrap();
    let out = root.join("out");
    let o = out.to_str().unwrap();

    let bad = root.join("bad.toml");
    fs::write(&bad, "[train]\nepoch = 3\n").unwrap();
    assert_eq!(run(&["config", "--config", bad.to_str().unwrap()]).0, Some(2));
    assert_eq!(run(&["evaluate", "--config", c, "--out", o]).0, Some(3));
    assert_eq!(run(&["generate", "--config", c, "--out", o, "--jobs", "2"]).0, Some(0));
    assert_eq!(run(&["report", "--config", c, "--out", o]).0, Some(3));

    let diverge = root.join("diverge.toml");
    fs::write(&diverge, format!("{TINY}\n[optim]\nphi_lr = 1e300\n[select]\ncells = [\"B1-SR-A\"]\n")).unwrap();
    let d = diverge.to_str().unwrap();
    let dout = root.join("dout");
    assert_eq!(run(&["generate", "--config", d, "--out", dout.to_str().unwrap()]).0, Some(0));
    assert_eq!(run(&["train", "--config", d, "--out", dout.to_str().unwrap()]).0, Some(4));

    let (code, text) = run(&["config", "--config", c, "--seed", "5", "--runs", "3"]);
    assert_eq!(code, Some(0));
    assert!(text.contains("runs = 3"));
    let env_out = root.join("env");
    let status = bin().args(["generate", "--config", c]).env("WINDOSSE_OUT", &env_out).status().unwrap();
    assert!(status.success());
    assert!(env_out.join("data/manifest.json").exists());
}
