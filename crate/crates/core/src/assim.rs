//! Variational costs, the unrolled learned solver, and the two baselines.
//!
//! The state stacks three `T`-frame blocks: the LR component, an internal
//! anomaly, and the output anomaly. The HR readout is LR + output anomaly.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use ndarray::{s, Array3};
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::neural::{
    init_rng, insert_lambdas, Bound, ConvLstm, FeatureConfig, HrExtractor, LstmState, ParamStore, Phi, PhiConfig,
    SituExtractor,
};
use crate::obs::{DataConfig, ObservationBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DftMode {
    SingleModal,
    MultiModal,
}

/// Which reconstruction method a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    /// Temporal interpolation of the LR fields.
    B0,
    /// Direct inversion by one pass of the flow-operator architecture.
    B1,
    /// Unrolled solver with the plain observation term.
    Ms,
    /// Unrolled solver with learned observation features.
    Mm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::B0, ModelKind::B1, ModelKind::Ms, ModelKind::Mm];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::B0 => "B0",
            ModelKind::B1 => "B1",
            ModelKind::Ms => "Ms",
            ModelKind::Mm => "Mm",
        }
    }

    pub fn is_trainable(self) -> bool {
        self != ModelKind::B0
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}")))
    }
}

/// Architecture and solver settings shared by every trainable model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub phi: PhiConfig,
    pub lstm_hidden: usize,
    pub features: FeatureConfig,
    pub n_iterations: usize,
    pub zero_init_update: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub x_hat: Array3<f64>,
    pub x_hat_lr: Array3<f64>,
}

pub fn to_tensor(a: &Array3<f64>) -> Tensor {
    let (t, h, w) = a.dim();
    Tensor::new(vec![t, h, w], a.iter().copied().collect())
}

pub fn to_array(t: &Tensor) -> Array3<f64> {
    let (c, h, w) = t.dims3();
    Array3::from_shape_vec((c, h, w), t.data().to_vec()).expect("rank-3 tensor")
}

fn mask_tensor(m: &Array3<bool>) -> Tensor {
    let (t, h, w) = m.dim();
    Tensor::new(vec![t, h, w], m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
}

/// Per-pixel linear interpolation in time between LR-sampled hours, holding
/// the first and last sampled frames outside their range.
pub fn baseline_interp(bundle: &ObservationBundle) -> Result<Array3<f64>> {
    let (t, h, w) = bundle.dims();
    let hours: Vec<usize> = (0..t).filter(|&k| bundle.m_lr.slice(s![k, .., ..]).iter().any(|&m| m)).collect();
    if hours.is_empty() {
        return Err(Error::invalid("no LR frame to interpolate"));
    }
    let mut out = Array3::zeros((t, h, w));
    for k in 0..t {
        let after = hours.iter().position(|&s| s >= k);
        let frame = match after {
            Some(0) => bundle.y_lr.slice(s![hours[0], .., ..]).to_owned(),
            None => bundle.y_lr.slice(s![hours[hours.len() - 1], .., ..]).to_owned(),
            Some(i) if hours[i] == k => bundle.y_lr.slice(s![k, .., ..]).to_owned(),
            Some(i) => {
                let (a, b) = (hours[i - 1], hours[i]);
                let wb = (k - a) as f64 / (b - a) as f64;
                let fa = bundle.y_lr.slice(s![a, .., ..]);
                let fb = bundle.y_lr.slice(s![b, .., ..]);
                &fa * (1.0 - wb) + &fb * wb
            }
        };
        out.slice_mut(s![k, .., ..]).assign(&frame);
    }
    Ok(out)
}

/// Observation constants of one day, in the layout the costs consume.
pub struct ObsTensors {
    pub t: usize,
    pub height: usize,
    pub width: usize,
    pub y_lr: Rc<Tensor>,
    pub m_lr: Rc<Tensor>,
    pub y_hr: Rc<Tensor>,
    pub m_hr: Rc<Tensor>,
    pub y_situ: Rc<Tensor>,
    pub m_situ: Rc<Tensor>,
    pub hr_hours: Vec<usize>,
    /// Observed HR frames `[n_hr, H, W]` and their masks.
    pub hr_sel: Rc<Tensor>,
    pub hr_sel_mask: Rc<Tensor>,
    /// Row-major pixel index of each observed buoy.
    pub buoy_pixels: Vec<usize>,
    /// `[1, B, T]` buoy time series.
    pub buoy_matrix: Rc<Tensor>,
    pub lr_init: Array3<f64>,
    pub config: DataConfig,
}

impl ObsTensors {
    pub fn new(b: &ObservationBundle) -> Result<Self> {
        let (t, h, w) = b.dims();
        let lr_init = baseline_interp(b)?;
        let hr_hours: Vec<usize> = (0..t).filter(|&k| b.m_hr.slice(s![k, .., ..]).iter().any(|&m| m)).collect();
        let plane = h * w;
        let y_hr = to_tensor(&b.y_hr);
        let m_hr = mask_tensor(&b.m_hr);
        let pick = |src: &Tensor| {
            let mut v = Vec::with_capacity(hr_hours.len() * plane);
            for &k in &hr_hours {
                v.extend_from_slice(&src.data()[k * plane..(k + 1) * plane]);
            }
            Tensor::new(vec![hr_hours.len(), h, w], v)
        };
        let hr_sel = pick(&y_hr);
        let hr_sel_mask = pick(&m_hr);
        let buoy_pixels: Vec<usize> = (0..plane).filter(|&px| (0..t).any(|k| b.m_situ[[k, px / w, px % w]])).collect();
        let mut bm = Vec::with_capacity(buoy_pixels.len() * t);
        for &px in &buoy_pixels {
            for k in 0..t {
                bm.push(b.y_situ[[k, px / w, px % w]]);
            }
        }
        Ok(Self {
            t,
            height: h,
            width: w,
            y_lr: Rc::new(to_tensor(&b.y_lr)),
            m_lr: Rc::new(mask_tensor(&b.m_lr)),
            y_hr: Rc::new(y_hr),
            m_hr: Rc::new(m_hr),
            y_situ: Rc::new(to_tensor(&b.y_situ)),
            m_situ: Rc::new(mask_tensor(&b.m_situ)),
            buoy_matrix: Rc::new(Tensor::new(vec![1, buoy_pixels.len(), t], bm)),
            hr_hours,
            hr_sel: Rc::new(hr_sel),
            hr_sel_mask: Rc::new(hr_sel_mask),
            buoy_pixels,
            lr_init,
            config: b.scheme.config,
        })
    }

    pub fn has_hr(&self) -> bool {
        !self.hr_hours.is_empty()
    }

    pub fn has_situ(&self) -> bool {
        !self.buoy_pixels.is_empty()
    }

    /// Initial state: interpolated LR block, zero anomalies.
    pub fn initial_state(&self) -> Tensor {
        let n = self.t * self.height * self.width;
        let mut v = Vec::with_capacity(3 * n);
        v.extend(self.lr_init.iter().copied());
        v.resize(3 * n, 0.0);
        Tensor::new(vec![3 * self.t, self.height, self.width], v)
    }
}

/// `‖v ⊙ m − y‖²` with `y` already zero off the mask.
fn misfit<'g>(v: Var<'g>, mask: &Rc<Tensor>, y: &Rc<Tensor>) -> Var<'g> {
    let g = v.graph();
    v.mul_const(mask.clone()).sub(g.leaf((**y).clone())).sq_norm()
}

fn readout<'g>(x: Var<'g>, t: usize) -> (Var<'g>, Var<'g>) {
    let lr = x.slice(0, t);
    (lr, lr.add(x.slice(2 * t, t)))
}

/// Step rule mapping the cost gradient at the current iterate to an update.
pub trait GradientSolver<'g> {
    fn step(&mut self, grad: Var<'g>) -> Var<'g>;
}

/// Plain gradient descent, `Δx = −η ∇U`.
pub struct DescentSolver {
    pub eta: f64,
}

impl<'g> GradientSolver<'g> for DescentSolver {
    fn step(&mut self, grad: Var<'g>) -> Var<'g> {
        grad.scale(-self.eta)
    }
}

pub struct LstmSolver<'a, 'g> {
    pub lstm: ConvLstm,
    pub params: &'a Bound<'g>,
    pub state: LstmState<'g>,
}

impl<'g> GradientSolver<'g> for LstmSolver<'_, 'g> {
    fn step(&mut self, grad: Var<'g>) -> Var<'g> {
        let (state, dx) = self.lstm.step(self.params, grad, self.state);
        self.state = state;
        dx
    }
}

/// Learned variational scheme: flow operator, LSTM solver and, in the multi-modal
/// setting, the feature extractors matching the active modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct FourDVarNet {
    pub t: usize,
    pub mode: DftMode,
    pub n_iterations: usize,
    pub phi: Phi,
    pub lstm: ConvLstm,
    pub hr: Option<HrExtractor>,
    pub situ: Option<SituExtractor>,
}

/// Learned-feature images of the observations, fixed during a solve.
pub struct ObsFeatures<'g> {
    pub hr: Option<Var<'g>>,
    pub situ: Option<Var<'g>>,
}

impl FourDVarNet {
    pub fn new(t: usize, mode: DftMode, cfg: &ModelConfig, config: DataConfig, n_hr: usize) -> Result<Self> {
        let phi = Phi::new(PhiConfig { channels: 3 * t, ..cfg.phi })?;
        let lstm = ConvLstm { zero_init_output: cfg.zero_init_update, ..ConvLstm::new(3 * t, cfg.lstm_hidden)? };
        let multi = mode == DftMode::MultiModal;
        Ok(Self {
            t,
            mode,
            n_iterations: cfg.n_iterations,
            phi,
            lstm,
            hr: (multi && config.has_hr() && n_hr > 0).then(|| HrExtractor::new(n_hr, cfg.features)),
            situ: (multi && config.has_situ()).then(|| SituExtractor::new(t, cfg.features)),
        })
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut s = ParamStore::new();
        let mut rng = init_rng(seed);
        self.phi.init(&mut s, &mut rng);
        self.lstm.init(&mut s, &mut rng);
        if let Some(hr) = &self.hr {
            hr.init(&mut s, &mut rng);
        }
        if let Some(situ) = &self.situ {
            situ.init(&mut s, &mut rng);
        }
        insert_lambdas(&mut s);
        s
    }

    pub fn check(&self, obs: &ObsTensors) -> Result<()> {
        self.phi.check_input(&[3 * obs.t, obs.height, obs.width])?;
        if obs.t != self.t {
            return Err(Error::Shape(format!("model expects {} frames, observations have {}", self.t, obs.t)));
        }
        if let Some(hr) = &self.hr {
            if obs.has_hr() {
                hr.check_input(&[obs.hr_hours.len(), obs.height, obs.width])?;
            }
        }
        Ok(())
    }

    pub fn obs_features<'g>(&self, p: &Bound<'g>, obs: &ObsTensors) -> ObsFeatures<'g> {
        let g = p.vars().first().map(|v| v.graph());
        let leaf = |t: &Rc<Tensor>| g.expect("bound parameters").leaf((**t).clone());
        ObsFeatures {
            hr: self.hr.as_ref().filter(|_| obs.has_hr()).map(|e| e.g(p, leaf(&obs.hr_sel))),
            situ: self.situ.as_ref().filter(|_| obs.has_situ()).map(|e| e.g(p, leaf(&obs.buoy_matrix))),
        }
    }

    /// Observation term of the single-modal cost, without `λ1`.
    pub fn obs_term<'g>(&self, x: Var<'g>, obs: &ObsTensors) -> Var<'g> {
        let (lr, read) = readout(x, self.t);
        let mut term = misfit(lr, &obs.m_lr, &obs.y_lr);
        if obs.has_hr() {
            term = term.add(misfit(read, &obs.m_hr, &obs.y_hr));
        }
        if obs.has_situ() {
            term = term.add(misfit(read, &obs.m_situ, &obs.y_situ));
        }
        term
    }

    /// `Σ ‖f(x) − g(y)‖²` over the active feature pairs.
    pub fn feature_term<'g>(&self, p: &Bound<'g>, x: Var<'g>, obs: &ObsTensors, feats: &ObsFeatures<'g>) -> Option<Var<'g>> {
        let (_, read) = readout(x, self.t);
        let mut terms = Vec::new();
        if let (Some(e), Some(gy)) = (&self.hr, feats.hr) {
            let parts: Vec<Var> = obs.hr_hours.iter().map(|&k| read.slice(k, 1)).collect();
            let sel = concat(&parts).mul_const(obs.hr_sel_mask.clone());
            terms.push(e.f(p, sel).sub(gy).sq_norm());
        }
        if let (Some(e), Some(gy)) = (&self.situ, feats.situ) {
            let idx = e.gather_index(&obs.buoy_pixels, obs.height * obs.width);
            terms.push(e.f(p, read, idx).sub(gy).sq_norm());
        }
        terms.into_iter().reduce(|a, b| a.add(b))
    }

    /// `λ1 · (observation terms) + λ2 · ‖x − Φ(x)‖²`.
    pub fn varcost<'g>(&self, p: &Bound<'g>, x: Var<'g>, obs: &ObsTensors, feats: &ObsFeatures<'g>) -> Var<'g> {
        let mut data = self.obs_term(x, obs);
        if self.mode == DftMode::MultiModal {
            if let Some(f) = self.feature_term(p, x, obs, feats) {
                data = data.add(f);
            }
        }
        let prior = x.sub(self.phi.forward(p, x)).sq_norm();
        p.var("lambda1").scalar_mul(data).add(p.var("lambda2").scalar_mul(prior))
    }

    /// Unrolled minimization from the initial state; returns the final
    /// iterate and the cost at every visited iterate before the last.
    pub fn solve_with<'g>(
        &self,
        p: &Bound<'g>,
        obs: &ObsTensors,
        solver: &mut dyn GradientSolver<'g>,
        g: &'g Graph,
    ) -> Result<(Var<'g>, Vec<f64>)> {
        self.check(obs)?;
        let feats = self.obs_features(p, obs);
        let mut x = g.leaf(obs.initial_state());
        let mut costs = Vec::with_capacity(self.n_iterations);
        for k in 0..self.n_iterations {
            let u = self.varcost(p, x, obs, &feats);
            let uv = u.value().item();
            if !uv.is_finite() {
                return Err(Error::NonFinite(format!("variational cost is {uv} at iteration {k}")));
            }
            costs.push(uv);
            let grad = g.grad(u, &[x])[0];
            x = x.add(solver.step(grad));
        }
        Ok((x, costs))
    }

    pub fn solve_lstm<'g>(&self, p: &Bound<'g>, obs: &ObsTensors, g: &'g Graph) -> Result<Var<'g>> {
        let mut solver = LstmSolver {
            lstm: self.lstm,
            params: p,
            state: LstmState::zeros(g, self.lstm.hidden, obs.height, obs.width),
        };
        Ok(self.solve_with(p, obs, &mut solver, g)?.0)
    }
}

/// Direct inversion: the flow-operator architecture applied once to a state
/// assembled from the observations.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectInversion {
    pub t: usize,
    pub phi: Phi,
}

impl DirectInversion {
    pub fn new(t: usize, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self { t, phi: Phi::new(PhiConfig { channels: 3 * t, ..cfg.phi })? })
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut s = ParamStore::new();
        self.phi.init(&mut s, &mut init_rng(seed));
        s
    }

    /// Interpolated LR, then twice the observed residual from it: HR pixels
    /// where observed, otherwise buoy pixels, zero elsewhere.
    pub fn input_state(obs: &ObsTensors) -> Tensor {
        let n = obs.t * obs.height * obs.width;
        let lr: Vec<f64> = obs.lr_init.iter().copied().collect();
        let mut an = vec![0.0; n];
        for (i, a) in an.iter_mut().enumerate() {
            if obs.m_hr.data()[i] > 0.0 {
                *a = obs.y_hr.data()[i] - lr[i];
            } else if obs.m_situ.data()[i] > 0.0 {
                *a = obs.y_situ.data()[i] - lr[i];
            }
        }
        let mut v = lr;
        v.extend_from_slice(&an);
        v.extend_from_slice(&an);
        Tensor::new(vec![3 * obs.t, obs.height, obs.width], v)
    }

    /// `(hr, lr)` readouts: the interpolated LR plus the output-anomaly and
    /// LR blocks of the network output.
    pub fn forward<'g>(&self, p: &Bound<'g>, obs: &ObsTensors, g: &'g Graph) -> Result<(Var<'g>, Var<'g>)> {
        self.phi.check_input(&[3 * obs.t, obs.height, obs.width])?;
        let x = g.leaf(Self::input_state(obs));
        let y = self.phi.forward(p, x);
        let lr_in = x.slice(0, self.t);
        Ok((lr_in.add(y.slice(2 * self.t, self.t)), lr_in.add(y.slice(0, self.t))))
    }
}

/// Any reconstruction method, ready to run on observation bundles.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Interp,
    Direct(DirectInversion),
    VarNet(FourDVarNet),
}

impl Model {
    pub fn build(kind: ModelKind, cfg: &ModelConfig, t: usize, config: DataConfig, n_hr: usize) -> Result<Self> {
        Ok(match kind {
            ModelKind::B0 => Model::Interp,
            ModelKind::B1 => Model::Direct(DirectInversion::new(t, cfg)?),
            ModelKind::Ms => Model::VarNet(FourDVarNet::new(t, DftMode::SingleModal, cfg, config, n_hr)?),
            ModelKind::Mm => Model::VarNet(FourDVarNet::new(t, DftMode::MultiModal, cfg, config, n_hr)?),
        })
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        match self {
            Model::Interp => ParamStore::new(),
            Model::Direct(m) => m.init_params(seed),
            Model::VarNet(m) => m.init_params(seed),
        }
    }

    /// `(hr, lr)` readouts as graph variables.
    pub fn forward<'g>(&self, p: &Bound<'g>, obs: &ObsTensors, g: &'g Graph) -> Result<(Var<'g>, Var<'g>)> {
        match self {
            Model::Interp => {
                let lr = g.leaf(to_tensor(&obs.lr_init));
                Ok((lr, lr))
            }
            Model::Direct(m) => m.forward(p, obs, g),
            Model::VarNet(m) => {
                let x = m.solve_lstm(p, obs, g)?;
                let (lr, read) = readout(x, m.t);
                Ok((read, lr))
            }
        }
    }

    pub fn reconstruct(&self, params: &ParamStore, obs: &ObsTensors) -> Result<Reconstruction> {
        let g = Graph::new();
        let p = params.bind(&g);
        let (hr, lr) = self.forward(&p, obs, &g)?;
        let (hr, lr) = (hr.value(), lr.value());
        if !hr.all_finite() || !lr.all_finite() {
            return Err(Error::NonFinite("reconstruction contains non-finite values".into()));
        }
        Ok(Reconstruction { x_hat: to_array(&hr), x_hat_lr: to_array(&lr) })
    }
}
