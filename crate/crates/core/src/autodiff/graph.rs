use std::cell::RefCell;
use std::rc::Rc;

use super::kernels as k;
use super::tensor::Tensor;

/// Operation that produced a node. Parents are node ids in the same graph.
#[derive(Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `mul * x + shift`; only the slope matters for the backward pass.
    Affine(usize, f64),
    MulConst(usize, Rc<Tensor>),
    /// Scalar node times tensor node.
    ScalarMul(usize, usize),
    Sum(usize),
    Expand(usize),
    Sigmoid(usize),
    Tanh(usize),
    Conv2d(usize, usize, (usize, usize)),
    FlipTranspose(usize),
    Conv2dWgrad(usize, usize, (usize, usize), (usize, usize)),
    BroadcastSpatial(usize),
    SumSpatial(usize),
    Concat(Vec<usize>),
    Slice(usize, usize),
    Embed(usize, usize),
    Gather(usize, Rc<Vec<usize>>),
    Scatter(usize, Rc<Vec<usize>>),
    Reshape(usize),
    DepthToSpace(usize, usize),
    SpaceToDepth(usize, usize),
    AvgPool(usize, usize),
    AvgPoolAdjoint(usize, usize),
    Diff(usize, usize),
    DiffAdjoint(usize, usize),
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | ScalarMul(a, b) | Conv2d(a, b, _) | Conv2dWgrad(a, b, _, _) => vec![*a, *b],
            Concat(ps) => ps.clone(),
            Affine(a, ..)
            | MulConst(a, _)
            | Sum(a)
            | Expand(a)
            | Sigmoid(a)
            | Tanh(a)
            | FlipTranspose(a)
            | BroadcastSpatial(a, ..)
            | SumSpatial(a)
            | Slice(a, ..)
            | Embed(a, ..)
            | Gather(a, _)
            | Scatter(a, _)
            | Reshape(a)
            | DepthToSpace(a, _)
            | SpaceToDepth(a, _)
            | AvgPool(a, _)
            | AvgPoolAdjoint(a, _)
            | Diff(a, _)
            | DiffAdjoint(a, _) => vec![*a],
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
}

/// An append-only computation tape.
///
/// Backward passes are recorded on the same tape, so the gradients returned
/// by [`Graph::grad`] are themselves differentiable. This is what allows a
/// training loss to be differentiated through an unrolled solver whose steps
/// consume gradients of an inner cost.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op });
        Var { graph: self, id: nodes.len() - 1 }
    }

    /// Record an input. Whether it is treated as a constant or a variable
    /// only depends on what is later passed to [`Graph::grad`].
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.leaf(Tensor::scalar(value))
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    /// Reverse-mode gradients of the scalar `y` with respect to `wrt`.
    ///
    /// Leaves that `y` does not depend on receive zero gradients.
    pub fn grad<'g>(&'g self, y: Var<'g>, wrt: &[Var<'g>]) -> Vec<Var<'g>> {
        assert!(std::ptr::eq(y.graph, self), "variable from a different graph");
        assert_eq!(y.value().len(), 1, "grad() needs a scalar output");
        let n = y.id + 1;
        let ops: Vec<Op> = self.nodes.borrow()[..n].iter().map(|nd| nd.op.clone()).collect();

        let mut relevant = vec![false; n];
        for v in wrt {
            if v.id < n {
                relevant[v.id] = true;
            }
        }
        for i in 0..n {
            if !relevant[i] && ops[i].parents().iter().any(|&p| relevant[p]) {
                relevant[i] = true;
            }
        }

        let mut grads: Vec<Option<Var<'g>>> = vec![None; n];
        if relevant[y.id] {
            let shape = y.value().shape().to_vec();
            grads[y.id] = Some(self.leaf(Tensor::full(&shape, 1.0)));
        }
        for i in (0..n).rev() {
            let Some(gy) = grads[i] else { continue };
            if !relevant[i] {
                continue;
            }
            let node = Var { graph: self, id: i };
            for (p, gp) in self.backward(&ops[i], node, gy, &relevant) {
                grads[p] = Some(match grads[p] {
                    Some(acc) => acc.add(gp),
                    None => gp,
                });
            }
        }

        wrt.iter()
            .map(|v| match grads.get(v.id).copied().flatten() {
                Some(g) => g,
                None => self.leaf(Tensor::zeros(v.value().shape())),
            })
            .collect()
    }

    /// Parent gradient contributions of one node.
    fn backward<'g>(&'g self, op: &Op, out: Var<'g>, gy: Var<'g>, relevant: &[bool]) -> Vec<(usize, Var<'g>)> {
        let v = |id: usize| Var { graph: self, id };
        let mut acc = Vec::with_capacity(2);
        let mut put = |id: usize, f: &dyn Fn() -> Var<'g>| {
            if relevant[id] {
                acc.push((id, f()));
            }
        };
        use Op::*;
        match op {
            Leaf => {}
            Add(a, b) => {
                put(*a, &|| gy);
                put(*b, &|| gy);
            }
            Sub(a, b) => {
                put(*a, &|| gy);
                put(*b, &|| gy.scale(-1.0));
            }
            Mul(a, b) => {
                put(*a, &|| gy.mul(v(*b)));
                put(*b, &|| gy.mul(v(*a)));
            }
            Affine(a, m) => put(*a, &|| gy.scale(*m)),
            MulConst(a, c) => put(*a, &|| gy.mul_const(c.clone())),
            ScalarMul(s, x) => {
                put(*s, &|| gy.mul(v(*x)).sum());
                put(*x, &|| v(*s).scalar_mul(gy));
            }
            Sum(a) => {
                let shape = v(*a).value().shape().to_vec();
                put(*a, &|| gy.expand(&shape));
            }
            Expand(a) => put(*a, &|| gy.sum()),
            Sigmoid(a) => put(*a, &|| gy.mul(out.mul(out.affine(-1.0, 1.0)))),
            Tanh(a) => put(*a, &|| gy.mul(out.mul(out).affine(-1.0, 1.0))),
            Conv2d(x, w, pad) => {
                let ws = v(*w).value().shape().to_vec();
                let (kh, kw) = (ws[2], ws[3]);
                put(*x, &|| gy.conv2d(v(*w).flip_transpose(), (kh - 1 - pad.0, kw - 1 - pad.1)));
                put(*w, &|| v(*x).conv2d_wgrad(gy, (kh, kw), *pad));
            }
            FlipTranspose(a) => put(*a, &|| gy.flip_transpose()),
            Conv2dWgrad(x, g0, kernel, pad) => {
                put(*g0, &|| v(*x).conv2d(gy, *pad));
                put(*x, &|| v(*g0).conv2d(gy.flip_transpose(), (kernel.0 - 1 - pad.0, kernel.1 - 1 - pad.1)));
            }
            BroadcastSpatial(a) => put(*a, &|| gy.sum_spatial()),
            SumSpatial(a) => {
                let s = v(*a).value().shape().to_vec();
                put(*a, &|| gy.broadcast_spatial(s[1], s[2]));
            }
            Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = v(p).value().shape()[0];
                    let start = offset;
                    put(p, &|| gy.slice(start, len));
                    offset += len;
                }
            }
            Slice(a, start) => {
                let total = v(*a).value().shape()[0];
                put(*a, &|| gy.embed(*start, total));
            }
            Embed(a, start) => {
                let len = v(*a).value().shape()[0];
                put(*a, &|| gy.slice(*start, len));
            }
            Gather(a, idx) => {
                let s = v(*a).value().shape().to_vec();
                put(*a, &|| gy.scatter(idx.clone(), &s));
            }
            Scatter(a, idx) => {
                let s = v(*a).value().shape().to_vec();
                put(*a, &|| gy.gather(idx.clone(), &s));
            }
            Reshape(a) => {
                let s = v(*a).value().shape().to_vec();
                put(*a, &|| gy.reshape(&s));
            }
            DepthToSpace(a, f) => put(*a, &|| gy.space_to_depth(*f)),
            SpaceToDepth(a, f) => put(*a, &|| gy.depth_to_space(*f)),
            AvgPool(a, f) => put(*a, &|| gy.avg_pool_adjoint(*f)),
            AvgPoolAdjoint(a, f) => put(*a, &|| gy.avg_pool(*f)),
            Diff(a, axis) => put(*a, &|| gy.spatial_diff_adjoint(*axis)),
            DiffAdjoint(a, axis) => put(*a, &|| gy.spatial_diff(*axis)),
        }
        acc
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn same(&self, other: Var<'g>) {
        assert!(std::ptr::eq(self.graph, other.graph), "variables from different graphs");
    }

    fn unary(self, f: impl FnOnce(&Tensor) -> Tensor, op: Op) -> Var<'g> {
        let value = f(&self.value());
        self.graph.push(value, op)
    }

    pub fn add(self, o: Var<'g>) -> Var<'g> {
        self.same(o);
        let value = self.value().zip_map(&o.value(), |a, b| a + b);
        self.graph.push(value, Op::Add(self.id, o.id))
    }

    pub fn sub(self, o: Var<'g>) -> Var<'g> {
        self.same(o);
        let value = self.value().zip_map(&o.value(), |a, b| a - b);
        self.graph.push(value, Op::Sub(self.id, o.id))
    }

    pub fn mul(self, o: Var<'g>) -> Var<'g> {
        self.same(o);
        let value = self.value().zip_map(&o.value(), |a, b| a * b);
        self.graph.push(value, Op::Mul(self.id, o.id))
    }

    pub fn affine(self, mul: f64, add: f64) -> Var<'g> {
        self.unary(|t| t.map(|x| mul * x + add), Op::Affine(self.id, mul))
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        self.affine(c, 0.0)
    }

    /// Elementwise product with a constant tensor (masks, fixed slopes).
    pub fn mul_const(self, c: Rc<Tensor>) -> Var<'g> {
        let value = self.value().zip_map(&c, |a, b| a * b);
        self.graph.push(value, Op::MulConst(self.id, c))
    }

    /// `self` must hold a single value; scales every element of `x`.
    pub fn scalar_mul(self, x: Var<'g>) -> Var<'g> {
        self.same(x);
        let s = self.value().item();
        let value = x.value().map(|v| s * v);
        self.graph.push(value, Op::ScalarMul(self.id, x.id))
    }

    pub fn sum(self) -> Var<'g> {
        self.unary(|t| Tensor::scalar(t.sum()), Op::Sum(self.id))
    }

    /// Sum of squares.
    pub fn sq_norm(self) -> Var<'g> {
        self.mul(self).sum()
    }

    pub fn expand(self, shape: &[usize]) -> Var<'g> {
        self.unary(|t| Tensor::full(shape, t.item()), Op::Expand(self.id))
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary(|t| t.map(|x| 1.0 / (1.0 + (-x).exp())), Op::Sigmoid(self.id))
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary(|t| t.map(f64::tanh), Op::Tanh(self.id))
    }

    /// Leaky rectifier. The slope pattern is frozen from the forward value,
    /// which makes the operation a constant mask product on the tape.
    pub fn leaky_relu(self, negative_slope: f64) -> Var<'g> {
        let mask = self.value().map(|x| if x >= 0.0 { 1.0 } else { negative_slope });
        self.mul_const(Rc::new(mask))
    }

    pub fn conv2d(self, w: Var<'g>, pad: (usize, usize)) -> Var<'g> {
        self.same(w);
        let value = k::conv2d(&self.value(), &w.value(), pad);
        self.graph.push(value, Op::Conv2d(self.id, w.id, pad))
    }

    pub fn flip_transpose(self) -> Var<'g> {
        self.unary(k::flip_transpose, Op::FlipTranspose(self.id))
    }

    /// Weight gradient of a convolution of `self` given the output gradient `gy`.
    pub fn conv2d_wgrad(self, gy: Var<'g>, kernel: (usize, usize), pad: (usize, usize)) -> Var<'g> {
        self.same(gy);
        let value = k::conv2d_wgrad(&self.value(), &gy.value(), kernel, pad);
        self.graph.push(value, Op::Conv2dWgrad(self.id, gy.id, kernel, pad))
    }

    pub fn broadcast_spatial(self, h: usize, w: usize) -> Var<'g> {
        self.unary(|t| k::broadcast_spatial(t, h, w), Op::BroadcastSpatial(self.id))
    }

    pub fn sum_spatial(self) -> Var<'g> {
        self.unary(k::sum_spatial, Op::SumSpatial(self.id))
    }

    /// Add a per-channel bias (`[C]`) to a `[C, H, W]` tensor.
    pub fn add_bias(self, b: Var<'g>) -> Var<'g> {
        let s = self.shape();
        self.add(b.broadcast_spatial(s[1], s[2]))
    }

    pub fn slice(self, start: usize, len: usize) -> Var<'g> {
        self.unary(|t| t.slice_leading(start, len), Op::Slice(self.id, start))
    }

    pub fn embed(self, start: usize, total: usize) -> Var<'g> {
        self.unary(|t| k::embed_leading(t, start, total), Op::Embed(self.id, start))
    }

    pub fn gather(self, idx: Rc<Vec<usize>>, shape: &[usize]) -> Var<'g> {
        let value = k::gather(&self.value(), &idx, shape);
        self.graph.push(value, Op::Gather(self.id, idx))
    }

    pub fn scatter(self, idx: Rc<Vec<usize>>, shape: &[usize]) -> Var<'g> {
        let value = k::scatter_add(&self.value(), &idx, shape);
        self.graph.push(value, Op::Scatter(self.id, idx))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        self.unary(|t| t.clone().reshaped(shape), Op::Reshape(self.id))
    }

    pub fn depth_to_space(self, f: usize) -> Var<'g> {
        self.unary(|t| k::depth_to_space(t, f), Op::DepthToSpace(self.id, f))
    }

    pub fn space_to_depth(self, f: usize) -> Var<'g> {
        self.unary(|t| k::space_to_depth(t, f), Op::SpaceToDepth(self.id, f))
    }

    pub fn avg_pool(self, f: usize) -> Var<'g> {
        self.unary(|t| k::avg_pool(t, f), Op::AvgPool(self.id, f))
    }

    pub fn avg_pool_adjoint(self, f: usize) -> Var<'g> {
        self.unary(|t| k::avg_pool_adjoint(t, f), Op::AvgPoolAdjoint(self.id, f))
    }

    /// Non-overlapping `f×f` max pooling (selection recorded as a gather).
    pub fn max_pool(self, f: usize) -> Var<'g> {
        let (c, h, w) = self.value().dims3();
        let idx = Rc::new(k::max_pool_indices(&self.value(), f));
        self.gather(idx, &[c, h / f, w / f])
    }

    pub fn spatial_diff(self, axis: usize) -> Var<'g> {
        self.unary(|t| k::spatial_diff(t, axis), Op::Diff(self.id, axis))
    }

    pub fn spatial_diff_adjoint(self, axis: usize) -> Var<'g> {
        self.unary(|t| k::spatial_diff_adjoint(t, axis), Op::DiffAdjoint(self.id, axis))
    }
}

/// Concatenate along the leading (channel) axis.
pub fn concat<'g>(parts: &[Var<'g>]) -> Var<'g> {
    let g = parts[0].graph;
    let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
    let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
    let value = k::concat_leading(&refs);
    g.push(value, Op::Concat(parts.iter().map(|p| p.id).collect()))
}
