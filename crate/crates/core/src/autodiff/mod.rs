//! Minimal reverse-mode automatic differentiation on planar tensors.
//!
//! The tape records backward passes as ordinary operations, so any gradient
//! can be differentiated again. The solver relies on this: its iterates are
//! functions of cost gradients, and training differentiates through them.

mod graph;
pub mod kernels;
mod tensor;

pub use graph::{concat, Graph, Var};
pub use tensor::Tensor;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Worst relative error `‖g_ad − g_fd‖ / max(‖g_ad‖, ‖g_fd‖)` over inputs.
    pub max_rel_err: f64,
    /// Per-input relative errors.
    pub rel_errs: Vec<f64>,
    pub checked_coords: usize,
}

/// Compare reverse-mode gradients of a scalar function against central
/// finite differences with step `h`.
///
/// At most `max_coords` coordinates per input are probed. They are spread
/// evenly across the tensor so large weights are still sampled everywhere.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], h: f64, max_coords: usize) -> GradCheck
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>,
{
    let eval = |vals: &[Tensor]| -> f64 {
        let g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
        f(&g, &vars).value().item()
    };

    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let y = f(&g, &vars);
    let grads: Vec<Tensor> = g.grad(y, &vars).iter().map(|v| (*v.value()).clone()).collect();

    let mut rel_errs = Vec::with_capacity(inputs.len());
    let mut checked = 0;
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        let stride = n.div_ceil(max_coords.max(1)).max(1);
        let (mut diff2, mut ad2, mut fd2) = (0.0, 0.0, 0.0);
        let mut probe: Vec<Tensor> = inputs.to_vec();
        for c in (0..n).step_by(stride) {
            let orig = input.data()[c];
            probe[i].data_mut()[c] = orig + h;
            let up = eval(&probe);
            probe[i].data_mut()[c] = orig - h;
            let down = eval(&probe);
            probe[i].data_mut()[c] = orig;
            let fd = (up - down) / (2.0 * h);
            let ad = grads[i].data()[c];
            diff2 += (ad - fd) * (ad - fd);
            ad2 += ad * ad;
            fd2 += fd * fd;
            checked += 1;
        }
        let scale = ad2.sqrt().max(fd2.sqrt());
        rel_errs.push(if scale < 1e-300 { 0.0 } else { diff2.sqrt() / scale });
    }
    GradCheck { max_rel_err: rel_errs.iter().cloned().fold(0.0, f64::max), rel_errs, checked_coords: checked }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::rc::Rc;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn elementwise_chain() {
        let a = random(&[2, 3, 3], 1);
        let b = random(&[2, 3, 3], 2);
        let chk = check_gradients(
            |_, v| v[0].mul(v[1]).sigmoid().add(v[0].tanh().scale(0.3)).sub(v[1].affine(2.0, 1.0)).sq_norm(),
            &[a, b],
            1e-5,
            1000,
        );
        assert!(chk.max_rel_err < 1e-7, "{chk:?}");
    }

    #[test]
    fn conv_pool_reshape_chain() {
        let x = random(&[3, 8, 8], 3);
        let w = random(&[32, 3, 3, 3], 4);
        let b = random(&[32], 5);
        let chk = check_gradients(
            |_, v| {
                let y = v[0].conv2d(v[1], (1, 1)).add_bias(v[2]).max_pool(4).depth_to_space(4);
                y.avg_pool(2).spatial_diff(1).tanh().sq_norm()
            },
            &[x, w, b],
            1e-5,
            200,
        );
        assert!(chk.max_rel_err < 1e-6, "{chk:?}");
    }

    #[test]
    fn second_order_through_conv() {
        // d/dw of ‖∇_x ‖conv(x,w)‖²‖² needs the backward pass on the tape.
        let x = random(&[2, 6, 6], 6);
        let w = random(&[3, 2, 3, 3], 7);
        let chk = check_gradients(
            |g, v| {
                let inner = v[0].conv2d(v[1], (1, 1)).tanh().sq_norm();
                let gx = g.grad(inner, &[v[0]])[0];
                gx.sq_norm()
            },
            &[x, w],
            1e-5,
            200,
        );
        assert!(chk.max_rel_err < 1e-6, "{chk:?}");
    }

    #[test]
    fn gather_scatter_concat_scalar() {
        let x = random(&[4, 5, 5], 8);
        let s = Tensor::scalar(0.7);
        let idx = Rc::new(vec![0usize, 7, 33, 99]);
        let chk = check_gradients(
            |_, v| {
                let picked = v[0].gather(idx.clone(), &[4]);
                let back = picked.scatter(idx.clone(), &[4, 5, 5]);
                let cat = concat(&[v[0], back]).slice(2, 4).embed(1, 9);
                v[1].scalar_mul(cat).sq_norm().add(v[1].mul(v[1]).sum())
            },
            &[x, s],
            1e-5,
            200,
        );
        assert!(chk.max_rel_err < 1e-7, "{chk:?}");
    }

    #[test]
    fn sum_rule_and_constants() {
        let x = random(&[2, 4, 4], 9);
        let g = Graph::new();
        let v = g.leaf(x);
        let l1 = v.tanh().sq_norm();
        let l2 = v.scale(3.0).sum();
        let both = g.grad(l1.add(l2), &[v])[0].value();
        let g1 = g.grad(l1, &[v])[0].value();
        let g2 = g.grad(l2, &[v])[0].value();
        for ((a, b), c) in both.data().iter().zip(g1.data()).zip(g2.data()) {
            assert!((a - b - c).abs() < 1e-10);
        }
        let k = g.leaf(Tensor::full(&[2], 4.0));
        let unrelated = k.sum();
        assert_eq!(g.grad(unrelated, &[v])[0].value().max_abs(), 0.0);
    }
}
