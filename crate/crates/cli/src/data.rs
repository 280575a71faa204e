//! `generate`: synthetic truth, land-sea mask and buoy network on disk.

use serde::Serialize;
use windosse::field::{write_fields, FieldSeries};
use windosse::grid::{default_buoys, synth_landsea, BuoyNetwork, LandSeaMask};
use windosse::synth::{fit_norm, generate as synth_generate, normalize, split_and_window, DaySample, NormStd, Split};

use crate::artifacts::{Layout, Manifest};
use crate::config::ExperimentConfig;
use crate::CliError;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// The datasets in normalized units, and their geography.
pub struct Data {
    pub train: Vec<DaySample>,
    pub val: Vec<DaySample>,
    pub test: Vec<DaySample>,
    pub std: NormStd,
    pub landsea: LandSeaMask,
    pub buoys: BuoyNetwork,
}

pub fn landsea(cfg: &ExperimentConfig) -> Result<LandSeaMask, CliError> {
    Ok(synth_landsea(cfg.grid()?, &cfg.coast)?)
}

/// Write one `WF01` file of hourly frames per split, the buoys and a manifest.
pub fn generate(cfg: &ExperimentConfig, layout: &Layout) -> Result<Manifest, CliError> {
    let dir = layout.data();
    std::fs::create_dir_all(&dir).map_err(|e| crate::artifacts::io_err(&dir, e))?;
    let mask = landsea(cfg)?;
    let buoys = default_buoys(&mask, cfg.buoys.seed)?;
    let gt = synth_generate(&cfg.synth, cfg.grid()?, &mask)?;
    let ds = split_and_window(&gt, cfg.split)?;
    let std = fit_norm(&ds)?;

    let mut m = Manifest::new(&cfg.hash(), "data");
    for (name, split) in SPLITS.iter().zip([&ds.train, &ds.val, &ds.test]) {
        let file = format!("{name}.wf01");
        write_fields(&dir.join(&file), split.frames())?;
        m.add(&dir, &file)?;
    }
    buoys.write_csv(&dir.join("buoys.csv"))?;
    m.add(&dir, "buoys.csv")?;
    m.info("seed", cfg.synth.seed);
    m.info("buoy_seed", cfg.buoys.seed);
    m.info("grid", cfg.grid);
    m.info("days", cfg.split);
    m.info("samples", Counts { train: ds.train.len(), val: ds.val.len(), test: ds.test.len() });
    m.info("std", std);
    m.info("land_fraction", mask.land_fraction());
    m.write(&dir)?;
    Ok(m)
}

fn normalized(split: &Split, std: f64) -> Result<Vec<DaySample>, CliError> {
    split
        .samples()
        .map(|d| {
            Ok(DaySample {
                gt36: FieldSeries::new(normalize(d.gt36.data(), std))?,
                gt24: FieldSeries::new(normalize(d.gt24.data(), std))?,
            })
        })
        .collect()
}

/// Read back what `generate` wrote, refusing data of another config.
pub fn load(cfg: &ExperimentConfig, layout: &Layout) -> Result<Data, CliError> {
    let dir = layout.data();
    if !dir.join(crate::artifacts::MANIFEST).exists() {
        return Err(CliError::Missing(format!("no dataset in {}; run `generate` first", dir.display())));
    }
    Manifest::verify(&dir, &cfg.hash())?;
    let read = |name: &str| -> Result<Split, CliError> {
        Ok(Split::from_frames(windosse::field::read_fields(&dir.join(format!("{name}.wf01")))?)?)
    };
    let ds = windosse::synth::Dataset { train: read("train")?, val: read("val")?, test: read("test")? };
    let std = fit_norm(&ds)?;
    let landsea = landsea(cfg)?;
    let buoys = BuoyNetwork::read_csv(&dir.join("buoys.csv"), &landsea)?;
    Ok(Data {
        train: normalized(&ds.train, std.train)?,
        val: normalized(&ds.val, std.val)?,
        test: normalized(&ds.test, std.test)?,
        std,
        landsea,
        buoys,
    })
}
