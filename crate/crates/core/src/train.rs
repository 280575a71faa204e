//! Composite training loss, Adam with per-group settings, and ensemble runs.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assim::{to_tensor, Model, ModelConfig, ModelKind, ObsTensors};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::grid::{BuoyNetwork, LandSeaMask};
use crate::neural::{ParamGroup, ParamStore};
use crate::obs::{downsample_series, train_time_bias, BiasKind, ObservationBundle, SamplingScheme};
use crate::synth::DaySample;

/// Central differences inside, one-sided at the borders. Returns the
/// derivative along columns (`gx`) and along rows (`gy`).
pub fn spatial_gradient(field: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let (h, w) = field.dim();
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!("spatial gradient needs at least 2x2, got {h}x{w}")));
    }
    let d = |n: usize, k: usize, at: &dyn Fn(usize) -> f64| {
        if k == 0 {
            at(1) - at(0)
        } else if k == n - 1 {
            at(n - 1) - at(n - 2)
        } else {
            0.5 * (at(k + 1) - at(k - 1))
        }
    };
    let gx = Array2::from_shape_fn((h, w), |(i, j)| d(w, j, &|c| field[[i, c]]));
    let gy = Array2::from_shape_fn((h, w), |(i, j)| d(h, i, &|r| field[[r, j]]));
    Ok((gx, gy))
}

/// Loss of one day: summed over frames, each squared norm averaged over
/// pixels, of the LR error, the HR error and both HR error gradients.
pub fn training_loss(u_lr: &Array3<f64>, u_hr: &Array3<f64>, x_lr: &Array3<f64>, x_hr: &Array3<f64>) -> Result<f64> {
    let dim = u_hr.dim();
    if u_lr.dim() != dim || x_lr.dim() != dim || x_hr.dim() != dim {
        return Err(Error::Shape(format!(
            "training loss operands differ: {:?} {:?} {:?} {:?}",
            u_lr.dim(),
            dim,
            x_lr.dim(),
            x_hr.dim()
        )));
    }
    let (t, h, w) = dim;
    let dlr = u_lr - x_lr;
    let dhr = u_hr - x_hr;
    let mut total = dlr.iter().map(|v| v * v).sum::<f64>() + dhr.iter().map(|v| v * v).sum::<f64>();
    for k in 0..t {
        let (gx, gy) = spatial_gradient(dhr.index_axis(ndarray::Axis(0), k))?;
        total += gx.iter().chain(gy.iter()).map(|v| v * v).sum::<f64>();
    }
    Ok(total / (h * w) as f64)
}

/// Graph form of [`training_loss`].
pub fn loss_var<'g>(x_hr: Var<'g>, x_lr: Var<'g>, u_hr: &Tensor, u_lr: &Tensor) -> Var<'g> {
    let g = x_hr.graph();
    let s = u_hr.shape();
    let hw = (s[s.len() - 2] * s[s.len() - 1]) as f64;
    let dhr = g.leaf(u_hr.clone()).sub(x_hr);
    let dlr = g.leaf(u_lr.clone()).sub(x_lr);
    dlr.sq_norm()
        .add(dhr.sq_norm())
        .add(dhr.spatial_diff(1).sq_norm())
        .add(dhr.spatial_diff(0).sq_norm())
        .scale(1.0 / hw)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupHyper {
    pub lr: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub phi: GroupHyper,
    pub gamma: GroupHyper,
    pub fg: GroupHyper,
    pub lambdas: GroupHyper,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        let h = |lr, weight_decay| GroupHyper { lr, weight_decay };
        Self {
            phi: h(5e-5, 1e-7),
            gamma: h(9e-5, 1e-8),
            fg: h(1e-4, 1e-7),
            lambdas: h(1e-4, 1e-5),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn group(&self, g: ParamGroup) -> GroupHyper {
        match g {
            ParamGroup::Phi => self.phi,
            ParamGroup::Gamma => self.gamma,
            ParamGroup::Fg => self.fg,
            ParamGroup::Lambdas => self.lambdas,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for g in ParamGroup::ALL {
            let h = self.group(g);
            if !(h.lr > 0.0 && h.lr.is_finite()) || !(h.weight_decay >= 0.0 && h.weight_decay.is_finite()) {
                return Err(Error::Config(format!("group {g}: learning rate must be positive and decay non-negative")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps be positive".into()));
        }
        Ok(())
    }
}

/// Adam with L2 decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: OptimConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    pub fn new(cfg: OptimConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self { cfg, m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &[Tensor]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        for (i, g) in grads.iter().enumerate() {
            let h = self.cfg.group(params.params()[i].group);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.value_mut(i).data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k] + h.weight_decay * p[k];
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                p[k] -= h.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.cfg.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub runs: usize,
    pub seed: u64,
    pub optim: OptimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 4, runs: 10, seed: 1, optim: OptimConfig::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.runs == 0 {
            return Err(Error::Config("batch size and runs must be at least 1".into()));
        }
        self.optim.validate()
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.seed ^ run as u64
    }
}

/// Everything that fixes the learning problem besides the data.
#[derive(Debug, Clone, Copy)]
pub struct Task<'a> {
    pub kind: ModelKind,
    pub model: &'a ModelConfig,
    pub scheme: SamplingScheme,
    /// Bias applied to the LR data during training and validation.
    pub bias: BiasKind,
    pub landsea: &'a LandSeaMask,
    pub buoys: &'a BuoyNetwork,
}

impl Task<'_> {
    pub fn build_model(&self) -> Result<Model> {
        Model::build(self.kind, self.model, 24, self.scheme.config, self.scheme.hr_hours().len())
    }

    pub fn bundle(&self, sample: &DaySample, bias: BiasKind, rng: &mut ChaCha8Rng) -> Result<ObservationBundle> {
        train_time_bias(sample.gt36.data().view(), bias, &self.scheme, self.landsea, self.buoys, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    /// Row 0 holds the losses of the initial parameters.
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best: ParamStore,
    pub checkpoint: Option<PathBuf>,
}

impl RunRecord {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let io = |e: csv::Error| Error::format(path, e.to_string());
        w.write_record(["epoch", "train_loss", "val_loss"]).map_err(io)?;
        for e in &self.epochs {
            w.write_record([e.epoch.to_string(), e.train_loss.to_string(), e.val_loss.to_string()]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Truth pair of one day: LR operator applied at every hour, and the HR field.
pub struct Targets {
    pub u_lr: Tensor,
    pub u_hr: Tensor,
}

impl Targets {
    pub fn new(gt24: &Array3<f64>, stride: usize) -> Result<Self> {
        Ok(Self { u_lr: to_tensor(&downsample_series(gt24.view(), stride)?), u_hr: to_tensor(gt24) })
    }
}

/// Loss and, when requested, parameter gradients on one day.
pub fn sample_loss(
    model: &Model,
    params: &ParamStore,
    bundle: &ObservationBundle,
    targets: &Targets,
    with_grad: bool,
) -> Result<(f64, Option<Vec<Tensor>>)> {
    let obs = ObsTensors::new(bundle)?;
    let g = Graph::new();
    let p = params.bind(&g);
    let (hr, lr) = model.forward(&p, &obs, &g)?;
    let loss = loss_var(hr, lr, &targets.u_hr, &targets.u_lr);
    let value = loss.value().item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {value}")));
    }
    let grads = with_grad.then(|| g.grad(loss, p.vars()).iter().map(|v| (*v.value()).clone()).collect());
    Ok((value, grads))
}

fn targets_of(samples: &[DaySample], stride: usize) -> Result<Vec<Targets>> {
    samples.iter().map(|s| Targets::new(s.gt24.data(), stride)).collect()
}

fn bundles_of(task: &Task, samples: &[DaySample], order: &[usize], rng: &mut ChaCha8Rng) -> Result<Vec<ObservationBundle>> {
    order.iter().map(|&i| task.bundle(&samples[i], task.bias, rng)).collect()
}

fn mean_loss(model: &Model, params: &ParamStore, bundles: &[ObservationBundle], targets: &[&Targets]) -> Result<f64> {
    let losses: Vec<f64> = bundles
        .par_iter()
        .zip(targets.par_iter())
        .map(|(b, t)| sample_loss(model, params, b, t, false).map(|r| r.0))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const VAL_STREAM: u64 = 0x5641_4C49;

/// Train one model from the seed of run `run`.
///
/// Epoch 0 evaluates the initial parameters. Each later epoch visits the
/// training days in a fresh order, draws fresh biases, and takes one Adam
/// step per batch; the parameters with the lowest validation loss are kept.
pub fn train_one(
    task: &Task,
    train: &[DaySample],
    val: &[DaySample],
    cfg: &TrainConfig,
    run: usize,
    out_dir: Option<&Path>,
) -> Result<RunRecord> {
    cfg.validate()?;
    if !task.kind.is_trainable() {
        return Err(Error::Config(format!("model {} has no trainable parameters", task.kind)));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::MissingInput("training and validation splits must be non-empty".into()));
    }
    let seed = cfg.run_seed(run);
    let model = task.build_model()?;
    let mut params = model.init_params(seed);
    params.round_f32();
    let mut adam = Adam::new(cfg.optim, &params);
    let stride = task.scheme.lr_stride_px;
    let train_t = targets_of(train, stride)?;
    let val_t = targets_of(val, stride)?;
    let val_order: Vec<usize> = (0..val.len()).collect();
    let val_bundles = bundles_of(task, val, &val_order, &mut ChaCha8Rng::seed_from_u64(seed ^ VAL_STREAM))?;
    let val_refs: Vec<&Targets> = val_t.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_STREAM);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let init_bundles = bundles_of(task, train, &order, &mut rng)?;
    let train_refs: Vec<&Targets> = train_t.iter().collect();
    let diag = |e: Error, epoch: usize| match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{} run {run}, epoch {epoch}: {m}", task.kind)),
        other => other,
    };
    let train0 = mean_loss(&model, &params, &init_bundles, &train_refs).map_err(|e| diag(e, 0))?;
    let val0 = mean_loss(&model, &params, &val_bundles, &val_refs).map_err(|e| diag(e, 0))?;
    let mut epochs = vec![EpochRecord { epoch: 0, train_loss: train0, val_loss: val0 }];
    let mut best = (0, val0, params.clone());

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let bundles = bundles_of(task, train, &order, &mut rng)?;
        let mut total = 0.0;
        for (chunk_b, chunk_i) in bundles.chunks(cfg.batch_size).zip(order.chunks(cfg.batch_size)) {
            let results: Vec<(f64, Option<Vec<Tensor>>)> = chunk_b
                .par_iter()
                .zip(chunk_i.par_iter())
                .map(|(b, &i)| sample_loss(&model, &params, b, &train_t[i], true))
                .collect::<Result<_>>()
                .map_err(|e| diag(e, epoch))?;
            let n = results.len() as f64;
            let mut grads: Vec<Tensor> = params.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            for (loss, g) in &results {
                total += loss;
                for (acc, gi) in grads.iter_mut().zip(g.as_ref().expect("requested")) {
                    for (a, v) in acc.data_mut().iter_mut().zip(gi.data()) {
                        *a += v / n;
                    }
                }
            }
            adam.update(&mut params, &grads);
            params.round_f32();
            if params.params().iter().any(|p| !p.value.all_finite()) {
                return Err(Error::NonFinite(format!("{} run {run}, epoch {epoch}: parameters diverged", task.kind)));
            }
        }
        let val_loss = mean_loss(&model, &params, &val_bundles, &val_refs).map_err(|e| diag(e, epoch))?;
        epochs.push(EpochRecord { epoch, train_loss: total / train.len() as f64, val_loss });
        if val_loss < best.1 {
            best = (epoch, val_loss, params.clone());
        }
    }

    let mut record = RunRecord { run, seed, epochs, best_epoch: best.0, best: best.2, checkpoint: None };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ckpt = dir.join(format!("run{run:02}.ckpt"));
        record.best.write_checkpoint(&ckpt)?;
        record.write_csv(&dir.join(format!("run{run:02}.csv")))?;
        record.checkpoint = Some(ckpt);
    }
    Ok(record)
}

/// Independent runs `0..cfg.runs`, executed in parallel.
pub fn train_ensemble(
    task: &Task,
    train: &[DaySample],
    val: &[DaySample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    (0..cfg.runs).into_par_iter().map(|r| train_one(task, train, val, cfg, r, out_dir)).collect()
}
