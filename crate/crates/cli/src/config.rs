//! Experiment configuration: built-in defaults, desk profile, user file, flags.
//!
//! Resolution order is `full defaults < profile < --config file < flags`.
//! Layers are TOML tables merged key by key before the result is
//! deserialized, so unknown keys are rejected wherever they come from.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use windosse::assim::ModelConfig;
use windosse::grid::{CoastlineSpec, Grid};
use windosse::neural::{FeatureConfig, PhiConfig, PhiVariant};
use windosse::synth::{SplitCounts, SynthSpec};
use windosse::train::{GroupHyper, OptimConfig, TrainConfig};

use crate::cells::Cell;
use crate::CliError;

pub const DESK_PROFILE: &str = include_str!("../profiles/desk.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Campaign {
    Benchmark,
    Bias,
    Buoys,
    Resolution,
    Appendix,
}

impl Campaign {
    pub const ALL: [Campaign; 5] =
        [Campaign::Benchmark, Campaign::Bias, Campaign::Buoys, Campaign::Resolution, Campaign::Appendix];

    pub fn name(self) -> &'static str {
        match self {
            Campaign::Benchmark => "benchmark",
            Campaign::Bias => "bias",
            Campaign::Buoys => "buoys",
            Campaign::Resolution => "resolution",
            Campaign::Appendix => "appendix",
        }
    }
}

impl fmt::Display for Campaign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    Full,
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub height: usize,
    pub width: usize,
    pub spacing_km: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuoySection {
    pub seed: u64,
}

/// LR resolutions. Groups A and B use the near stride, C and D the far one;
/// A and C sample every `coarse_period_h`, B and D every `fine_period_h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub near_stride_px: usize,
    pub far_stride_px: usize,
    pub coarse_period_h: usize,
    pub fine_period_h: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub phi_variant: PhiVariant,
    pub phi_width: usize,
    pub phi_kernel: usize,
    pub leaky_slope: f64,
    pub lstm_hidden: usize,
    pub n_iterations: usize,
    pub zero_init_update: bool,
    pub feature_channels: usize,
    pub feature_kernel: usize,
    pub feature_pool: usize,
}

/// Hidden widths of the flow operators compared in the appendix campaign,
/// for the variants other than `model.phi_variant`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppendixSection {
    pub alpha_width: usize,
    pub beta_width: usize,
    pub gamma_width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub runs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub phi_lr: f64,
    pub phi_weight_decay: f64,
    pub gamma_lr: f64,
    pub gamma_weight_decay: f64,
    pub fg_lr: f64,
    pub fg_weight_decay: f64,
    pub lambda_lr: f64,
    pub lambda_weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectSection {
    /// Cell labels to restrict the campaign to; empty means every cell.
    #[serde(default)]
    pub cells: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub campaign: Campaign,
    pub grid: GridSection,
    pub coast: CoastlineSpec,
    pub buoys: BuoySection,
    pub synth: SynthSpec,
    pub split: SplitCounts,
    pub sampling: SamplingSection,
    pub model: ModelSection,
    pub appendix: AppendixSection,
    pub train: TrainSection,
    pub optim: OptimSection,
    #[serde(default)]
    pub select: SelectSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// The parts of a config that determine artifacts. Campaign choice, cell
/// selection and output location are left out so campaigns share cells.
#[derive(Serialize)]
struct Hashed<'a> {
    grid: &'a GridSection,
    coast: &'a CoastlineSpec,
    buoys: &'a BuoySection,
    synth: &'a SynthSpec,
    split: &'a SplitCounts,
    sampling: &'a SamplingSection,
    model: &'a ModelSection,
    appendix: &'a AppendixSection,
    train: &'a TrainSection,
    optim: &'a OptimSection,
}

impl ExperimentConfig {
    /// Defaults at the scale of the original study.
    pub fn full() -> Self {
        let o = OptimConfig::default();
        Self {
            campaign: Campaign::Benchmark,
            grid: GridSection { height: 215, width: 215, spacing_km: 3.0 },
            coast: CoastlineSpec { base_col: 54.0, amplitude: 10.0, wavelength_rows: 215.0 },
            buoys: BuoySection { seed: 1 },
            synth: SynthSpec { n_days: 732, ..SynthSpec::default() },
            split: SplitCounts { train: 432, test: 200, val: 100 },
            sampling: SamplingSection { near_stride_px: 10, far_stride_px: 33, coarse_period_h: 6, fine_period_h: 1 },
            model: ModelSection {
                phi_variant: PhiVariant::Alpha,
                phi_width: 32,
                phi_kernel: 5,
                leaky_slope: 0.1,
                lstm_hidden: 96,
                n_iterations: 5,
                zero_init_update: true,
                feature_channels: FeatureConfig::default().channels,
                feature_kernel: FeatureConfig::default().kernel,
                feature_pool: FeatureConfig::default().pool,
            },
            appendix: AppendixSection { alpha_width: 32, beta_width: 128, gamma_width: 64 },
            train: TrainSection { epochs: 50, batch_size: 4, runs: 10, seed: 1 },
            optim: OptimSection {
                phi_lr: o.phi.lr,
                phi_weight_decay: o.phi.weight_decay,
                gamma_lr: o.gamma.lr,
                gamma_weight_decay: o.gamma.weight_decay,
                fg_lr: o.fg.lr,
                fg_weight_decay: o.fg.weight_decay,
                lambda_lr: o.lambdas.lr,
                lambda_weight_decay: o.lambdas.weight_decay,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
            },
            select: SelectSection::default(),
            output: OutputSection::default(),
        }
    }

    /// Resolve `profile`, then the optional file, into a validated config.
    pub fn load(profile: Profile, file: Option<&Path>) -> Result<Self, CliError> {
        let mut layers = Vec::new();
        if profile == Profile::Desk {
            layers.push(("desk profile".to_string(), DESK_PROFILE.to_string()));
        }
        if let Some(p) = file {
            let text = std::fs::read_to_string(p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => CliError::Missing(format!("config file {}", p.display())),
                _ => CliError::Other(format!("{}: {e}", p.display())),
            })?;
            layers.push((p.display().to_string(), text));
        }
        Self::from_layers(&layers)
    }

    pub fn from_layers(layers: &[(String, String)]) -> Result<Self, CliError> {
        let mut base = toml::Value::try_from(Self::full()).expect("defaults serialize");
        for (name, text) in layers {
            let v: toml::Value = toml::from_str(text).map_err(|e| CliError::Config(format!("{name}: {e}")))?;
            merge(&mut base, v);
        }
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.buoys.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn with_runs(mut self, runs: usize) -> Self {
        self.train.runs = runs;
        self
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        Ok(Grid::new(self.grid.height, self.grid.width, self.grid.spacing_km)?)
    }

    pub fn model_config(&self, variant: PhiVariant) -> ModelConfig {
        let m = &self.model;
        let width = if variant == m.phi_variant {
            m.phi_width
        } else {
            match variant {
                PhiVariant::Alpha => self.appendix.alpha_width,
                PhiVariant::Beta => self.appendix.beta_width,
                PhiVariant::Gamma => self.appendix.gamma_width,
            }
        };
        ModelConfig {
            phi: PhiConfig { variant, channels: 72, width, kernel: m.phi_kernel, leaky_slope: m.leaky_slope },
            lstm_hidden: m.lstm_hidden,
            features: FeatureConfig { channels: m.feature_channels, kernel: m.feature_kernel, pool: m.feature_pool },
            n_iterations: m.n_iterations,
            zero_init_update: m.zero_init_update,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let o = &self.optim;
        let h = |lr, weight_decay| GroupHyper { lr, weight_decay };
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            runs: self.train.runs,
            seed: self.train.seed,
            optim: OptimConfig {
                phi: h(o.phi_lr, o.phi_weight_decay),
                gamma: h(o.gamma_lr, o.gamma_weight_decay),
                fg: h(o.fg_lr, o.fg_weight_decay),
                lambdas: h(o.lambda_lr, o.lambda_weight_decay),
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
            },
        }
    }

    /// Cells of the campaign after applying `[select]`.
    pub fn cells(&self) -> Result<Vec<Cell>, CliError> {
        let all = Cell::campaign(self.campaign, self.model.phi_variant);
        if self.select.cells.is_empty() {
            return Ok(all);
        }
        let mut out = Vec::new();
        for label in &self.select.cells {
            let c = Cell::parse(label, self.model.phi_variant)?;
            if !all.contains(&c) {
                return Err(CliError::Config(format!("cell {label} is not part of the {} campaign", self.campaign)));
            }
            if !out.contains(&c) {
                out.push(c);
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let grid = self.grid()?;
        windosse::grid::synth_landsea(grid, &self.coast)?;
        self.synth.validate()?;
        if self.split.total() != self.synth.n_days {
            return Err(CliError::Config(format!(
                "split {}+{}+{} days does not add up to synth.n_days = {}",
                self.split.train, self.split.test, self.split.val, self.synth.n_days
            )));
        }
        if self.split.train < 3 || self.split.test < 3 || self.split.val < 3 {
            return Err(CliError::Config("every split needs at least 3 days".into()));
        }
        self.train_config().validate()?;
        let cells = self.cells()?;
        for c in &cells {
            c.scheme(&self.sampling)?;
            let mc = self.model_config(c.phi);
            mc.phi.validate()?;
            if c.phi == PhiVariant::Gamma && (grid.height % 4 != 0 || grid.width % 4 != 0) {
                return Err(CliError::Config(format!(
                    "flow operator gamma pools by 4 and needs a grid divisible by 4, got {}x{}",
                    grid.height, grid.width
                )));
            }
        }
        Ok(())
    }

    /// Short digest of everything that determines the artifacts.
    pub fn hash(&self) -> String {
        let view = Hashed {
            grid: &self.grid,
            coast: &self.coast,
            buoys: &self.buoys,
            synth: &self.synth,
            split: &self.split,
            sampling: &self.sampling,
            model: &self.model,
            appendix: &self.appendix,
            train: &self.train,
            optim: &self.optim,
        };
        let json = serde_json::to_string(&view).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

impl FromStr for Campaign {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Campaign::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown campaign {s:?}")))
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_defaults_are_valid_and_desk_overrides_apply() {
        ExperimentConfig::full().validate().unwrap();
        let desk = ExperimentConfig::load(Profile::Desk, None).unwrap();
        assert_eq!((desk.grid.height, desk.synth.n_days), (64, 96));
        assert_eq!((desk.split.train, desk.split.test, desk.split.val), (64, 16, 16));
        assert_eq!((desk.train.epochs, desk.train.runs, desk.model.n_iterations), (15, 5, 5));
        assert_eq!((desk.sampling.near_stride_px, desk.sampling.far_stride_px), (4, 8));
    }

    #[test]
    fn layering_and_rejections() {
        let layers = |t: &str| vec![("desk".to_string(), DESK_PROFILE.to_string()), ("f".to_string(), t.to_string())];
        let c = ExperimentConfig::from_layers(&layers("campaign = \"bias\"\n[train]\nepochs = 2\n")).unwrap();
        assert_eq!((c.campaign, c.train.epochs, c.train.runs), (Campaign::Bias, 2, 5));
        assert!(matches!(ExperimentConfig::from_layers(&layers("[train]\nepoch = 2\n")), Err(CliError::Config(_))));
        assert!(matches!(ExperimentConfig::from_layers(&layers("[split]\ntrain = 10\n")), Err(CliError::Config(_))));
        assert!(matches!(
            ExperimentConfig::from_layers(&layers("[select]\ncells = [\"Mm-C2-12h-A\"]\n")),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_layers(&layers("campaign = \"buoys\"\n[select]\ncells = [\"Mm-C1-12h-A\"]\n")),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn hash_ignores_campaign_selection_and_output() {
        let a = ExperimentConfig::load(Profile::Desk, None).unwrap();
        let mut b = a.clone();
        b.campaign = Campaign::Resolution;
        b.output.dir = Some("elsewhere".into());
        b.select.cells = vec!["B1-SR-A".into()];
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), a.clone().with_seed(99).hash());
        assert_ne!(a.hash(), a.clone().with_runs(2).hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn toml_round_trip() {
        let a = ExperimentConfig::load(Profile::Desk, None).unwrap();
        let back = ExperimentConfig::from_layers(&[("x".into(), a.to_toml())]).unwrap();
        assert_eq!(a, back);
    }
}
