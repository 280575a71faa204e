//! Trainable parameterizations: flow operators, the gradient-solver LSTM,
//! multi-modal feature extractors, and their parameter store.

mod checkpoint;
mod extract;
mod lstm;
mod phi;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use extract::{FeatureConfig, HrExtractor, SituExtractor};
pub use lstm::{ConvLstm, LstmState};
pub use phi::{Phi, PhiConfig, PhiVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    Phi,
    Gamma,
    Fg,
    Lambdas,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [ParamGroup::Phi, ParamGroup::Gamma, ParamGroup::Fg, ParamGroup::Lambdas];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Phi => "phi",
            ParamGroup::Gamma => "gamma",
            ParamGroup::Fg => "fg",
            ParamGroup::Lambdas => "lambdas",
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        ParamGroup::ALL.into_iter().find(|g| g.code() == c)
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamGroup::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown parameter group {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub group: ParamGroup,
    pub name: String,
    pub value: Tensor,
}

/// Shape of one convolution layer; weights `[out, in, kh, kw]`, bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub name: String,
    pub c_out: usize,
    pub c_in: usize,
    pub kernel: (usize, usize),
}

impl ConvSpec {
    pub fn new(name: impl Into<String>, c_out: usize, c_in: usize, kernel: (usize, usize)) -> Self {
        Self { name: name.into(), c_out, c_in, kernel }
    }

    pub fn fan_in(&self) -> usize {
        self.c_in * self.kernel.0 * self.kernel.1
    }
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: Arc<HashMap<String, usize>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, group: ParamGroup, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "parameter {name} registered twice");
        Arc::make_mut(&mut self.index).insert(name.clone(), self.params.len());
        self.params.push(Param { group, name, value });
    }

    /// Register a convolution with uniform fan-in initialization
    /// `U(−1/√fan_in, 1/√fan_in)` for both weights and bias.
    pub fn insert_conv(&mut self, group: ParamGroup, spec: &ConvSpec, rng: &mut impl Rng) {
        let bound = 1.0 / (spec.fan_in() as f64).sqrt();
        let w = Tensor::from_fn(&[spec.c_out, spec.c_in, spec.kernel.0, spec.kernel.1], |_| {
            rng.random_range(-bound..bound)
        });
        let b = Tensor::from_fn(&[spec.c_out], |_| rng.random_range(-bound..bound));
        self.insert(group, format!("{}.w", spec.name), w);
        self.insert(group, format!("{}.b", spec.name), b);
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn n_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.params[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(move |i| &mut self.params[i].value)
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.params[i].value
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        let mut g: Vec<ParamGroup> = self.params.iter().map(|p| p.group).collect();
        g.sort();
        g.dedup();
        g
    }

    /// Set every parameter of `group` to zero.
    pub fn zero_group(&mut self, group: ParamGroup) {
        for p in self.params.iter_mut().filter(|p| p.group == group) {
            p.value = Tensor::zeros(p.value.shape());
        }
    }

    pub fn zero_all(&mut self) {
        for p in &mut self.params {
            p.value = Tensor::zeros(p.value.shape());
        }
    }

    /// Round every value to `f32`, the precision checkpoints store.
    pub fn round_f32(&mut self) {
        for p in &mut self.params {
            for v in p.value.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Copy values from `other`, which must hold the same names and shapes.
    pub fn assign_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Shape(format!("store has {} parameters, source has {}", self.len(), other.len())));
        }
        for p in &other.params {
            let i = self
                .position(&p.name)
                .ok_or_else(|| Error::Shape(format!("unexpected parameter {}", p.name)))?;
            let dst = &mut self.params[i];
            if dst.value.shape() != p.value.shape() || dst.group != p.group {
                return Err(Error::Shape(format!(
                    "parameter {} is {:?}/{} here but {:?}/{} in the source",
                    p.name,
                    dst.value.shape(),
                    dst.group,
                    p.value.shape(),
                    p.group
                )));
            }
            dst.value = p.value.clone();
        }
        Ok(())
    }

    /// Leaf variables for every parameter in `g`.
    pub fn bind<'g>(&self, g: &'g Graph) -> Bound<'g> {
        Bound { index: self.index.clone(), vars: self.params.iter().map(|p| g.leaf(p.value.clone())).collect() }
    }

    /// Bind existing variables, one per parameter in store order.
    pub fn bind_vars<'g>(&self, vars: Vec<Var<'g>>) -> Bound<'g> {
        assert_eq!(vars.len(), self.len(), "one variable per parameter");
        Bound { index: self.index.clone(), vars }
    }

    pub fn values(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }
}

/// Parameters bound as leaves of one graph.
pub struct Bound<'g> {
    index: Arc<HashMap<String, usize>>,
    vars: Vec<Var<'g>>,
}

impl<'g> Bound<'g> {
    pub fn var(&self, name: &str) -> Var<'g> {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("parameter {name} not registered"));
        self.vars[i]
    }

    pub fn has(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn vars(&self) -> &[Var<'g>] {
        &self.vars
    }

    /// `conv(x, name.w) + name.b` with the given zero padding.
    pub fn conv(&self, x: Var<'g>, name: &str, pad: (usize, usize)) -> Var<'g> {
        x.conv2d(self.var(&format!("{name}.w")), pad).add_bias(self.var(&format!("{name}.b")))
    }
}

/// Seeded generator for parameter initialization.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Register the trainable weights `λ1`, `λ2` of the variational cost at 1.
pub fn insert_lambdas(store: &mut ParamStore) {
    store.insert(ParamGroup::Lambdas, "lambda1", Tensor::scalar(1.0));
    store.insert(ParamGroup::Lambdas, "lambda2", Tensor::scalar(1.0));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_bookkeeping() {
        let mut s = ParamStore::new();
        let mut rng = init_rng(1);
        s.insert_conv(ParamGroup::Phi, &ConvSpec::new("phi.l1", 4, 3, (3, 3)), &mut rng);
        insert_lambdas(&mut s);
        assert_eq!(s.len(), 4);
        assert_eq!(s.get("phi.l1.w").unwrap().shape(), &[4, 3, 3, 3]);
        assert_eq!(s.get("lambda1").unwrap().item(), 1.0);
        assert_eq!(s.groups(), vec![ParamGroup::Phi, ParamGroup::Lambdas]);
        let bound = 1.0 / 27f64.sqrt();
        assert!(s.get("phi.l1.w").unwrap().max_abs() < bound);

        let mut z = s.clone();
        z.zero_group(ParamGroup::Phi);
        assert_eq!(z.get("phi.l1.w").unwrap().max_abs(), 0.0);
        assert_eq!(z.get("lambda2").unwrap().item(), 1.0);
        z.assign_from(&s).unwrap();
        assert_eq!(z, s);

        let mut other = ParamStore::new();
        other.insert(ParamGroup::Phi, "phi.l1.w", Tensor::zeros(&[4, 3, 1, 1]));
        assert!(s.clone().assign_from(&other).is_err());
    }
}
