//! Flow operators mapping a state tensor to a state tensor.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Bound, ConvSpec, ParamGroup, ParamStore};
use crate::autodiff::{concat, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhiVariant {
    Alpha,
    Beta,
    Gamma,
}

impl PhiVariant {
    pub const ALL: [PhiVariant; 3] = [PhiVariant::Alpha, PhiVariant::Beta, PhiVariant::Gamma];

    pub fn name(self) -> &'static str {
        match self {
            PhiVariant::Alpha => "alpha",
            PhiVariant::Beta => "beta",
            PhiVariant::Gamma => "gamma",
        }
    }
}

impl fmt::Display for PhiVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PhiVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PhiVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown flow operator {s:?}")))
    }
}

/// Architecture of a flow operator on `channels` state planes.
///
/// `width` is the hidden width of `Alpha` and `Beta`; for `Gamma` it is the
/// width of the full-resolution branch and the pooled branch uses `2·width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiConfig {
    pub variant: PhiVariant,
    pub channels: usize,
    pub width: usize,
    pub kernel: usize,
    pub leaky_slope: f64,
}

impl PhiConfig {
    /// Widths and kernel of the reference architectures.
    pub fn reference(variant: PhiVariant, channels: usize) -> Self {
        let width = match variant {
            PhiVariant::Alpha => 32,
            PhiVariant::Beta => 128,
            PhiVariant::Gamma => 64,
        };
        Self { variant, channels, width, kernel: 5, leaky_slope: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("flow operator kernel must be odd, got {}", self.kernel)));
        }
        if self.width == 0 || self.channels == 0 {
            return Err(Error::Config("flow operator widths must be positive".into()));
        }
        Ok(())
    }

    fn pad(&self) -> (usize, usize) {
        (self.kernel / 2, self.kernel / 2)
    }

    pub fn layers(&self) -> Vec<ConvSpec> {
        let (c, w, k) = (self.channels, self.width, (self.kernel, self.kernel));
        match self.variant {
            PhiVariant::Alpha => vec![ConvSpec::new("phi.l1", w, c, k), ConvSpec::new("phi.l2", c, w, k)],
            PhiVariant::Beta => vec![
                ConvSpec::new("phi.l1", w, c, k),
                ConvSpec::new("phi.l2", w, w, k),
                ConvSpec::new("phi.l3", c, w, k),
            ],
            PhiVariant::Gamma => vec![
                ConvSpec::new("phi.in", w, c, k),
                ConvSpec::new("phi.down", 2 * w, w, k),
                // Transposed convolution with kernel 4 and stride 4, stored as a
                // 1×1 convolution to 16·w planes followed by depth-to-space.
                ConvSpec::new("phi.up", 16 * w, 2 * w, (1, 1)),
                ConvSpec::new("phi.out", c, 2 * w, k),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phi {
    pub cfg: PhiConfig,
}

pub const GAMMA_POOL: usize = 4;

impl Phi {
    pub fn new(cfg: PhiConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for l in self.cfg.layers() {
            store.insert_conv(ParamGroup::Phi, &l, rng);
        }
    }

    /// Check that a `[C, H, W]` input is admissible.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[0] != self.cfg.channels {
            return Err(Error::Shape(format!("flow operator expects {} channels, got {:?}", self.cfg.channels, shape)));
        }
        if self.cfg.variant == PhiVariant::Gamma && (shape[1] % GAMMA_POOL != 0 || shape[2] % GAMMA_POOL != 0) {
            return Err(Error::Shape(format!("U-Net flow operator needs H and W divisible by 4, got {:?}", shape)));
        }
        Ok(())
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Var<'g> {
        let pad = self.cfg.pad();
        let slope = self.cfg.leaky_slope;
        match self.cfg.variant {
            PhiVariant::Alpha => p.conv(p.conv(x, "phi.l1", pad), "phi.l2", pad),
            PhiVariant::Beta => {
                let h1 = p.conv(x, "phi.l1", pad).leaky_relu(slope);
                let h2 = p.conv(h1, "phi.l2", pad).leaky_relu(slope);
                p.conv(h2, "phi.l3", pad)
            }
            PhiVariant::Gamma => {
                let e = p.conv(x, "phi.in", pad).leaky_relu(slope);
                let d = p.conv(e.max_pool(GAMMA_POOL), "phi.down", pad).leaky_relu(slope);
                let u = p.conv(d, "phi.up", (0, 0)).depth_to_space(GAMMA_POOL);
                p.conv(concat(&[e, u]), "phi.out", pad)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Tensor};
    use crate::neural::init_rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn build(variant: PhiVariant, c: usize, width: usize, k: usize, seed: u64) -> (Phi, ParamStore) {
        let phi = Phi::new(PhiConfig { variant, channels: c, width, kernel: k, leaky_slope: 0.1 }).unwrap();
        let mut s = ParamStore::new();
        phi.init(&mut s, &mut init_rng(seed));
        (phi, s)
    }

    fn eval(phi: &Phi, s: &ParamStore, x: &Tensor) -> Tensor {
        let g = Graph::new();
        let p = s.bind(&g);
        (*phi.forward(&p, g.leaf(x.clone())).value()).clone()
    }

    #[test]
    fn zero_params_give_zero() {
        for v in PhiVariant::ALL {
            let (phi, mut s) = build(v, 6, 4, 3, 1);
            s.zero_all();
            let y = eval(&phi, &s, &random(&[6, 8, 8], 2));
            assert_eq!(y.shape(), &[6, 8, 8]);
            assert_eq!(y.max_abs(), 0.0, "{v}");
        }
    }

    #[test]
    fn alpha_is_affine() {
        let (phi, s) = build(PhiVariant::Alpha, 6, 4, 5, 3);
        let (x, y) = (random(&[6, 8, 8], 4), random(&[6, 8, 8], 5));
        let f0 = eval(&phi, &s, &Tensor::zeros(&[6, 8, 8]));
        let fx = eval(&phi, &s, &x);
        let fy = eval(&phi, &s, &y);
        let fxy = eval(&phi, &s, &x.zip_map(&y, |a, b| a + b));
        let lhs = fxy.zip_map(&f0, |a, b| a - b);
        let rhs = fx.zip_map(&fy, |a, b| a + b).zip_map(&f0, |a, b| a - 2.0 * b);
        let err = lhs.zip_map(&rhs, |a, b| a - b).sq_norm().sqrt() / rhs.sq_norm().sqrt();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn alpha_impulse_matches_direct_sum() {
        let (phi, s) = build(PhiVariant::Alpha, 3, 2, 5, 6);
        let mut x = Tensor::zeros(&[3, 9, 9]);
        x.data_mut()[81 + 4 * 9 + 4] = 1.0;
        let y = eval(&phi, &s, &x);
        let w1 = s.get("phi.l1.w").unwrap();
        let b1 = s.get("phi.l1.b").unwrap();
        let w2 = s.get("phi.l2.w").unwrap();
        let b2 = s.get("phi.l2.b").unwrap();
        // Hidden layer by explicit cross-correlation with zero padding.
        let conv = |inp: &dyn Fn(usize, isize, isize) -> f64, w: &Tensor, b: &Tensor, cin: usize, cout: usize| {
            let mut out = vec![0.0; cout * 81];
            for o in 0..cout {
                for i in 0..9isize {
                    for j in 0..9isize {
                        let mut acc = b.data()[o];
                        for c in 0..cin {
                            for a in 0..5isize {
                                for bb in 0..5isize {
                                    let wv = w.data()[((o * cin + c) * 5 + a as usize) * 5 + bb as usize];
                                    acc += wv * inp(c, i + a - 2, j + bb - 2);
                                }
                            }
                        }
                        out[o * 81 + (i * 9 + j) as usize] = acc;
                    }
                }
            }
            out
        };
        let at = |v: &Vec<f64>| {
            let v = v.clone();
            move |c: usize, i: isize, j: isize| {
                if (0..9).contains(&i) && (0..9).contains(&j) {
                    v[c * 81 + (i * 9 + j) as usize]
                } else {
                    0.0
                }
            }
        };
        let hidden = conv(&at(&x.data().to_vec()), w1, b1, 3, 2);
        let out = conv(&at(&hidden), w2, b2, 2, 3);
        for (a, b) in y.data().iter().zip(&out) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_is_nonlinear() {
        let (phi, s) = build(PhiVariant::Beta, 6, 8, 3, 7);
        let x = random(&[6, 8, 8], 8);
        let f1 = eval(&phi, &s, &x);
        let f2 = eval(&phi, &s, &x.map(|v| 2.0 * v));
        let diff = f2.zip_map(&f1, |a, b| a - 2.0 * b).sq_norm().sqrt() / f2.sq_norm().sqrt();
        assert!(diff > 1e-3, "{diff}");

        let g = Graph::new();
        let v = g.leaf(Tensor::full(&[1, 1, 1], -1.0)).leaky_relu(0.1);
        assert!((v.value().item() + 0.1).abs() < 1e-15);
    }

    #[test]
    fn gamma_shapes() {
        let (phi, s) = build(PhiVariant::Gamma, 72, 4, 3, 9);
        let y = eval(&phi, &s, &random(&[72, 64, 64], 10));
        assert_eq!(y.shape(), &[72, 64, 64]);
        assert!(phi.check_input(&[72, 66, 66]).is_err());
        assert!(phi.check_input(&[72, 64, 64]).is_ok());
        assert!(phi.check_input(&[70, 64, 64]).is_err());
    }
}
