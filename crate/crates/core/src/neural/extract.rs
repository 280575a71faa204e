//! Feature extractors `f` (on the state) and `g` (on observations) of the
//! multi-modal data term. Each pair produces feature maps of equal shape.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Bound, ConvSpec, ParamGroup, ParamStore};
use crate::autodiff::Var;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Feature planes produced by every extractor.
    pub channels: usize,
    pub kernel: usize,
    /// Average-pooling factor of the spatial branch.
    pub pool: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { channels: 8, kernel: 3, pool: 4 }
    }
}

/// Extractors for HR snapshots: conv → average-pool → conv on the observed
/// frames, for both the state readout and the observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrExtractor {
    pub n_frames: usize,
    pub cfg: FeatureConfig,
}

impl HrExtractor {
    pub fn new(n_frames: usize, cfg: FeatureConfig) -> Self {
        Self { n_frames, cfg }
    }

    pub fn layers(&self) -> Vec<ConvSpec> {
        let (c, k) = (self.cfg.channels, (self.cfg.kernel, self.cfg.kernel));
        ["fg.f_hr", "fg.g_hr"]
            .iter()
            .flat_map(|p| [ConvSpec::new(format!("{p}.l1"), c, self.n_frames, k), ConvSpec::new(format!("{p}.l2"), c, c, k)])
            .collect()
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for l in self.layers() {
            store.insert_conv(ParamGroup::Fg, &l, rng);
        }
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let p = self.cfg.pool;
        if shape.len() != 3 || shape[0] != self.n_frames || shape[1] % p != 0 || shape[2] % p != 0 {
            return Err(Error::Shape(format!(
                "HR extractor expects [{}, H, W] with H, W divisible by {p}, got {shape:?}",
                self.n_frames
            )));
        }
        Ok(())
    }

    fn apply<'g>(&self, p: &Bound<'g>, prefix: &str, x: Var<'g>) -> Var<'g> {
        let pad = (self.cfg.kernel / 2, self.cfg.kernel / 2);
        let h = p.conv(x, &format!("{prefix}.l1"), pad).avg_pool(self.cfg.pool);
        p.conv(h, &format!("{prefix}.l2"), pad)
    }

    /// Features of the sea-masked state readout at the observed hours.
    pub fn f<'g>(&self, p: &Bound<'g>, readout_sel: Var<'g>) -> Var<'g> {
        self.apply(p, "fg.f_hr", readout_sel)
    }

    pub fn g<'g>(&self, p: &Bound<'g>, obs_sel: Var<'g>) -> Var<'g> {
        self.apply(p, "fg.g_hr", obs_sel)
    }
}

/// Extractors for buoy time series, laid out as a `[1, B, T]` image so the
/// `(1, k)` kernels act along time and share weights across buoys.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SituExtractor {
    pub n_hours: usize,
    pub cfg: FeatureConfig,
}

impl SituExtractor {
    pub fn new(n_hours: usize, cfg: FeatureConfig) -> Self {
        Self { n_hours, cfg }
    }

    pub fn layers(&self) -> Vec<ConvSpec> {
        let (c, k, t) = (self.cfg.channels, self.cfg.kernel, self.n_hours);
        vec![
            ConvSpec::new("fg.f_situ.s", t, t, (k, k)),
            ConvSpec::new("fg.f_situ.l1", c, 1, (1, k)),
            ConvSpec::new("fg.g_situ.l1", c, 1, (1, k)),
            ConvSpec::new("fg.g_situ.l2", c, c, (1, k)),
        ]
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for l in self.layers() {
            store.insert_conv(ParamGroup::Fg, &l, rng);
        }
    }

    /// Flat indices into a `[T, H, W]` field giving the `[1, B, T]` buoy matrix.
    pub fn gather_index(&self, pixels: &[usize], plane: usize) -> Rc<Vec<usize>> {
        let t = self.n_hours;
        Rc::new(pixels.iter().flat_map(|&px| (0..t).map(move |h| h * plane + px)).collect())
    }

    /// Spatial convolution of the readout, sampled at the buoys, then a
    /// temporal convolution.
    pub fn f<'g>(&self, p: &Bound<'g>, readout: Var<'g>, idx: Rc<Vec<usize>>) -> Var<'g> {
        let k = self.cfg.kernel;
        let n_buoys = idx.len() / self.n_hours;
        let s = p.conv(readout, "fg.f_situ.s", (k / 2, k / 2));
        let m = s.gather(idx, &[1, n_buoys, self.n_hours]);
        p.conv(m, "fg.f_situ.l1", (0, k / 2))
    }

    pub fn g<'g>(&self, p: &Bound<'g>, buoy_matrix: Var<'g>) -> Var<'g> {
        let k = self.cfg.kernel;
        let h = p.conv(buoy_matrix, "fg.g_situ.l1", (0, k / 2));
        p.conv(h, "fg.g_situ.l2", (0, k / 2))
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

    #[test]
    fn paired_feature_lengths_and_zero_params() {
        let cfg = FeatureConfig { channels: 3, kernel: 3, pool: 4 };
        let hr = HrExtractor::new(2, cfg);
        let situ = SituExtractor::new(4, cfg);
        let mut s = ParamStore::new();
        hr.init(&mut s, &mut init_rng(1));
        situ.init(&mut s, &mut init_rng(2));
        let g = Graph::new();
        let p = s.bind(&g);
        let x = g.leaf(random(&[2, 8, 8], 3));
        let y = g.leaf(random(&[2, 8, 8], 4));
        assert_eq!(hr.f(&p, x).shape(), hr.g(&p, y).shape());
        let state = g.leaf(random(&[4, 8, 8], 5));
        let idx = situ.gather_index(&[3, 17, 40], 64);
        let m = g.leaf(random(&[1, 3, 4], 6));
        assert_eq!(situ.f(&p, state, idx.clone()).shape(), situ.g(&p, m).shape());
        assert!(hr.check_input(&[2, 10, 8]).is_err());

        let mut z = s.clone();
        z.zero_all();
        let g2 = Graph::new();
        let p2 = z.bind(&g2);
        assert_eq!(hr.g(&p2, g2.leaf(random(&[2, 8, 8], 7))).value().max_abs(), 0.0);
        assert_eq!(situ.f(&p2, g2.leaf(random(&[4, 8, 8], 8)), idx).value().max_abs(), 0.0);
    }

    #[test]
    fn buoy_permutation_permutes_features() {
        let situ = SituExtractor::new(6, FeatureConfig { channels: 2, kernel: 3, pool: 4 });
        let mut s = ParamStore::new();
        situ.init(&mut s, &mut init_rng(9));
        let m = random(&[1, 3, 6], 10);
        let mut swapped = m.clone();
        for t in 0..6 {
            swapped.data_mut()[t] = m.data()[6 + t];
            swapped.data_mut()[6 + t] = m.data()[t];
        }
        let g = Graph::new();
        let p = s.bind(&g);
        let a = situ.g(&p, g.leaf(m)).value();
        let b = situ.g(&p, g.leaf(swapped)).value();
        for c in 0..2 {
            for t in 0..6 {
                let at = |v: &Tensor, bu: usize| v.data()[(c * 3 + bu) * 6 + t];
                assert_eq!(at(&a, 0), at(&b, 1));
                assert_eq!(at(&a, 1), at(&b, 0));
                assert_eq!(at(&a, 2), at(&b, 2));
            }
        }
    }
}
