//! Training cells: one model, observation scheme, LR group, training bias and
//! flow operator. Campaigns are lists of cells; a cell is trained once and
//! shared by every campaign that lists it.

use std::fmt;

use windosse::assim::ModelKind;
use windosse::neural::PhiVariant;
use windosse::obs::{BiasKind, DataConfig, SamplingScheme};

use crate::config::{Campaign, SamplingSection};
use crate::CliError;

pub const GROUPS: [char; 4] = ['A', 'B', 'C', 'D'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrainBias {
    None,
    RandomDelay,
    RandomRemod,
}

impl TrainBias {
    pub fn kind(self) -> BiasKind {
        match self {
            TrainBias::None => BiasKind::None,
            TrainBias::RandomDelay => BiasKind::RandomDelay,
            TrainBias::RandomRemod => BiasKind::RandomRemod,
        }
    }

    pub fn suffix(self) -> Option<&'static str> {
        match self {
            TrainBias::None => None,
            TrainBias::RandomDelay => Some("rd"),
            TrainBias::RandomRemod => Some("ri"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub kind: ModelKind,
    pub config: DataConfig,
    pub hr_period_h: Option<usize>,
    pub group: char,
    pub bias: TrainBias,
    pub phi: PhiVariant,
    /// Variant of the main model, omitted from labels.
    pub default_phi: PhiVariant,
}

impl Cell {
    pub fn new(kind: ModelKind, config: DataConfig, hr_period_h: Option<usize>, default_phi: PhiVariant) -> Self {
        Self { kind, config, hr_period_h, group: 'A', bias: TrainBias::None, phi: default_phi, default_phi }
    }

    fn in_group(self, group: char) -> Self {
        Self { group, ..self }
    }

    fn biased(self, bias: TrainBias) -> Self {
        Self { bias, ..self }
    }

    fn with_phi(self, phi: PhiVariant) -> Self {
        Self { phi, ..self }
    }

    /// Canonical label, e.g. `Mm-C3-12h-A`, `B1-SR-A-rd` or `Mm-C3-12h-A-beta`.
    pub fn label(&self) -> String {
        let mut s = format!("{}-{}", self.kind, self.config);
        if let Some(p) = self.hr_period_h {
            s += &format!("-{p}h");
        }
        s.push('-');
        s.push(self.group);
        if let Some(b) = self.bias.suffix() {
            s += &format!("-{b}");
        }
        if self.phi != self.default_phi {
            s += &format!("-{}", self.phi.name());
        }
        s
    }

    /// Model name as it appears in metrics tables: kind, bias suffix, flow operator.
    pub fn model_name(&self) -> String {
        let mut s = self.kind.to_string();
        if let Some(b) = self.bias.suffix() {
            s += &format!("-{b}");
        }
        if self.phi != self.default_phi {
            s += &format!("({})", self.phi.name());
        }
        s
    }

    /// Inverse of [`Cell::label`]; the group defaults to `A`.
    pub fn parse(label: &str, default_phi: PhiVariant) -> Result<Self, CliError> {
        let bad = || CliError::Config(format!("cannot parse cell label {label:?}"));
        let mut parts = label.split('-');
        let kind: ModelKind = parts.next().ok_or_else(bad)?.parse()?;
        let config: DataConfig = parts.next().ok_or_else(bad)?.parse()?;
        let mut cell = Cell::new(kind, config, None, default_phi);
        for p in parts {
            match p {
                "rd" => cell.bias = TrainBias::RandomDelay,
                "ri" => cell.bias = TrainBias::RandomRemod,
                "alpha" => cell.phi = PhiVariant::Alpha,
                "beta" => cell.phi = PhiVariant::Beta,
                "gamma" => cell.phi = PhiVariant::Gamma,
                g if g.len() == 1 && GROUPS.contains(&g.chars().next().unwrap()) => cell.group = g.chars().next().unwrap(),
                h if h.ends_with('h') => cell.hr_period_h = Some(h[..h.len() - 1].parse().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
        Ok(cell)
    }

    pub fn scheme(&self, s: &SamplingSection) -> Result<SamplingScheme, CliError> {
        let (stride, period) = match self.group {
            'A' => (s.near_stride_px, s.coarse_period_h),
            'B' => (s.near_stride_px, s.fine_period_h),
            'C' => (s.far_stride_px, s.coarse_period_h),
            'D' => (s.far_stride_px, s.fine_period_h),
            g => return Err(CliError::Config(format!("unknown LR group {g}"))),
        };
        Ok(SamplingScheme::new(self.config, period, stride, self.hr_period_h)?)
    }

    /// Every cell of a campaign, in table order.
    pub fn campaign(c: Campaign, phi: PhiVariant) -> Vec<Cell> {
        use DataConfig::*;
        use ModelKind::*;
        let cell = |k, c, h| Cell::new(k, c, h, phi);
        let hr_cells = |k| {
            vec![cell(k, C1, Some(12)), cell(k, C1, Some(24)), cell(k, C2, None), cell(k, C3, Some(12)), cell(k, C3, Some(24))]
        };
        match c {
            Campaign::Benchmark => {
                let mut v = vec![cell(B0, SR, None), cell(B1, SR, None)];
                for k in [B1, Ms, Mm] {
                    v.extend(hr_cells(k));
                }
                v
            }
            Campaign::Bias => {
                let mut v = Vec::new();
                for base in [cell(B1, SR, None), cell(B1, C3, Some(12)), cell(Mm, C3, Some(12))] {
                    for b in [TrainBias::None, TrainBias::RandomDelay, TrainBias::RandomRemod] {
                        v.push(base.biased(b));
                    }
                }
                v
            }
            Campaign::Buoys => vec![cell(Mm, C3, Some(12)), cell(Mm, C3, Some(24))],
            Campaign::Resolution => {
                let mut v = Vec::new();
                for g in GROUPS {
                    v.push(cell(B1, SR, None).in_group(g));
                    for conf in [C1, C3] {
                        for h in [12, 24] {
                            v.push(cell(Mm, conf, Some(h)).in_group(g));
                        }
                    }
                }
                v
            }
            Campaign::Appendix => {
                let mut v = Vec::new();
                for p in PhiVariant::ALL {
                    v.push(cell(B1, C3, Some(12)).with_phi(p));
                    v.push(cell(Mm, C3, Some(12)).with_phi(p));
                }
                v
            }
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}
