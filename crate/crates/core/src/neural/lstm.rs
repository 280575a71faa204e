//! Convolutional LSTM used as the learned gradient solver.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Bound, ConvSpec, ParamGroup, ParamStore};
use crate::autodiff::{concat, Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvLstm {
    pub channels: usize,
    pub hidden: usize,
    pub kernel: usize,
    /// Start the output layer at zero so the untrained solver leaves its
    /// initial state unchanged.
    pub zero_init_output: bool,
}

#[derive(Clone, Copy)]
pub struct LstmState<'g> {
    pub h: Var<'g>,
    pub c: Var<'g>,
}

impl<'g> LstmState<'g> {
    pub fn zeros(g: &'g Graph, hidden: usize, height: usize, width: usize) -> Self {
        Self { h: g.leaf(Tensor::zeros(&[hidden, height, width])), c: g.leaf(Tensor::zeros(&[hidden, height, width])) }
    }
}

impl ConvLstm {
    pub fn new(channels: usize, hidden: usize) -> Result<Self> {
        if channels == 0 || hidden == 0 {
            return Err(Error::Config("LSTM widths must be positive".into()));
        }
        Ok(Self { channels, hidden, kernel: 3, zero_init_output: true })
    }

    pub fn layers(&self) -> Vec<ConvSpec> {
        let (c, h, k) = (self.channels, self.hidden, self.kernel);
        vec![
            ConvSpec::new("gamma.proj", h, c, (1, 1)),
            ConvSpec::new("gamma.gates", 4 * h, 2 * h, (k, k)),
            ConvSpec::new("gamma.out", c, h, (1, 1)),
        ]
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for l in self.layers() {
            store.insert_conv(ParamGroup::Gamma, &l, rng);
        }
        if self.zero_init_output {
            for n in ["gamma.out.w", "gamma.out.b"] {
                let t = store.get_mut(n).expect("just registered");
                *t = Tensor::zeros(t.shape());
            }
        }
    }

    /// One LSTM step on the cost gradient; returns the new state and the
    /// state-space update.
    pub fn step<'g>(&self, p: &Bound<'g>, grad: Var<'g>, s: LstmState<'g>) -> (LstmState<'g>, Var<'g>) {
        let hd = self.hidden;
        let pad = self.kernel / 2;
        let inp = p.conv(grad, "gamma.proj", (0, 0));
        let gates = p.conv(concat(&[inp, s.h]), "gamma.gates", (pad, pad));
        let i = gates.slice(0, hd).sigmoid();
        let f = gates.slice(hd, hd).sigmoid();
        let o = gates.slice(2 * hd, hd).sigmoid();
        let cand = gates.slice(3 * hd, hd).tanh();
        let c = f.mul(s.c).add(i.mul(cand));
        let h = o.mul(c.tanh());
        let dx = p.conv(h, "gamma.out", (0, 0));
        (LstmState { h, c }, dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::init_rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_analytic_gates() {
        let lstm = ConvLstm::new(4, 3).unwrap();
        let mut s = ParamStore::new();
        lstm.init(&mut s, &mut init_rng(1));
        s.zero_all();
        let g = Graph::new();
        let p = s.bind(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c0 = Tensor::from_fn(&[3, 5, 5], |_| rng.random_range(-2.0..2.0));
        let h0 = Tensor::from_fn(&[3, 5, 5], |_| rng.random_range(-2.0..2.0));
        let grad = Tensor::from_fn(&[4, 5, 5], |_| rng.random_range(-2.0..2.0));
        let state = LstmState { h: g.leaf(h0), c: g.leaf(c0.clone()) };
        let (next, dx) = lstm.step(&p, g.leaf(grad), state);
        for (k, &c) in c0.data().iter().enumerate() {
            assert!((next.c.value().data()[k] - 0.5 * c).abs() < 1e-12);
            assert!((next.h.value().data()[k] - 0.5 * (0.5 * c).tanh()).abs() < 1e-12);
        }
        assert_eq!(dx.value().max_abs(), 0.0);
        assert_eq!(s.get("gamma.gates.w").unwrap().shape()[0], 4 * 3);
    }

    #[test]
    fn zero_input_zero_state_zero_update() {
        let lstm = ConvLstm { zero_init_output: false, ..ConvLstm::new(4, 3).unwrap() };
        let mut s = ParamStore::new();
        lstm.init(&mut s, &mut init_rng(3));
        assert!(s.get("gamma.out.w").unwrap().max_abs() > 0.0);
        s.zero_all();
        let g = Graph::new();
        let p = s.bind(&g);
        let (_, dx) = lstm.step(&p, g.leaf(Tensor::zeros(&[4, 6, 6])), LstmState::zeros(&g, 3, 6, 6));
        assert_eq!(dx.value().max_abs(), 0.0);
    }
}
