//! Raw numerical kernels behind the graph operations.
//!
//! Every kernel is a plain function on [`Tensor`] values. The graph layer
//! pairs each one with its adjoint so that backward passes stay expressible
//! as further graph operations.

use super::tensor::Tensor;

/// Zero-pad `[C, H, W]` into `[C, H+2ph, W+2pw]`, plus `tail` trailing zeros so
/// that shifted views over the last channel stay in bounds.
fn pad_planes(x: &Tensor, ph: usize, pw: usize, tail: usize) -> (Vec<f64>, usize, usize) {
    let (c, h, w) = x.dims3();
    let (hp, wp) = (h + 2 * ph, w + 2 * pw);
    let mut out = vec![0.0; c * hp * wp + tail];
    let xd = x.data();
    for ci in 0..c {
        for i in 0..h {
            let dst = (ci * hp + i + ph) * wp + pw;
            out[dst..dst + w].copy_from_slice(&xd[(ci * h + i) * w..][..w]);
        }
    }
    (out, hp, wp)
}

/// `c[m×n] = a[m×k] · b[k×n] (+ c if accumulate)` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: isize, csa: isize, b: &[f64], rsb: isize, csb: isize, c: &mut [f64], accumulate: bool) {
    if m == 0 || n == 0 || k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let max_a = (m - 1) as isize * rsa + (k - 1) as isize * csa;
    let max_b = (k - 1) as isize * rsb + (n - 1) as isize * csb;
    assert!(max_a < a.len() as isize && max_b < b.len() as isize && m * n <= c.len(), "gemm: strided extent out of bounds");
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserted extents keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Stride-1 2D cross-correlation, no bias.
///
/// `x`: `[C, H, W]`, `w`: `[O, C, kh, kw]` → `[O, H+2ph-kh+1, W+2pw-kw+1]`.
///
/// Each kernel tap is one GEMM against a shifted view of the padded input;
/// outputs are computed on the padded row pitch and cropped afterwards.
pub fn conv2d(x: &Tensor, w: &Tensor, pad: (usize, usize)) -> Tensor {
    let (c, h, wd) = x.dims3();
    let ws = w.shape();
    assert_eq!(ws.len(), 4, "conv weight must be rank 4");
    let (o, wc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    assert_eq!(c, wc, "conv2d: input has {c} channels, weight expects {wc}");
    assert!(h + 2 * pad.0 >= kh && wd + 2 * pad.1 >= kw, "conv2d: kernel larger than padded input");
    let ck = c * kh * kw;
    if kh == 1 && kw == 1 && pad == (0, 0) {
        let n = h * wd;
        let mut out = vec![0.0; o * n];
        gemm(o, c, n, w.data(), ck as isize, 1, x.data(), n as isize, 1, &mut out, false);
        return Tensor::new(vec![o, h, wd], out);
    }
    let (xp, hp, wp) = pad_planes(x, pad.0, pad.1, kw);
    let (ho, wo) = (hp + 1 - kh, wp + 1 - kw);
    let n = ho * wp;
    let mut ext = vec![0.0; o * n];
    for a in 0..kh {
        for b in 0..kw {
            let off = a * wp + b;
            gemm(o, c, n, &w.data()[a * kw + b..], ck as isize, (kh * kw) as isize, &xp[off..], (hp * wp) as isize, 1, &mut ext, a + b > 0);
        }
    }
    let mut out = vec![0.0; o * ho * wo];
    for oi in 0..o {
        for i in 0..ho {
            out[(oi * ho + i) * wo..][..wo].copy_from_slice(&ext[oi * n + i * wp..][..wo]);
        }
    }
    Tensor::new(vec![o, ho, wo], out)
}

/// Weight gradient of [`conv2d`]: `dw[o,c,a,b] = Σ_ij gy[o,i,j] · xpad[c,i+a,j+b]`.
pub fn conv2d_wgrad(x: &Tensor, gy: &Tensor, kernel: (usize, usize), pad: (usize, usize)) -> Tensor {
    let (c, h, wd) = x.dims3();
    let (o, ho, wo) = gy.dims3();
    let (kh, kw) = kernel;
    assert_eq!(ho, h + 2 * pad.0 + 1 - kh, "conv2d_wgrad: row mismatch");
    assert_eq!(wo, wd + 2 * pad.1 + 1 - kw, "conv2d_wgrad: col mismatch");
    let ck = c * kh * kw;
    if kh == 1 && kw == 1 && pad == (0, 0) {
        let n = ho * wo;
        let mut out = vec![0.0; o * ck];
        gemm(o, n, c, gy.data(), n as isize, 1, x.data(), 1, n as isize, &mut out, false);
        return Tensor::new(vec![o, c, kh, kw], out);
    }
    let (xp, hp, wp) = pad_planes(x, pad.0, pad.1, kw);
    // output gradient laid out on the padded pitch, zeros in the extra columns
    let n = ho * wp;
    let mut gext = vec![0.0; o * n];
    for oi in 0..o {
        for i in 0..ho {
            gext[oi * n + i * wp..][..wo].copy_from_slice(&gy.data()[(oi * ho + i) * wo..][..wo]);
        }
    }
    let mut tap = vec![0.0; o * c];
    let mut out = vec![0.0; o * ck];
    for a in 0..kh {
        for b in 0..kw {
            let off = a * wp + b;
            gemm(o, n, c, &gext, n as isize, 1, &xp[off..], 1, (hp * wp) as isize, &mut tap, false);
            for oi in 0..o {
                for ci in 0..c {
                    out[((oi * c + ci) * kh + a) * kw + b] = tap[oi * c + ci];
                }
            }
        }
    }
    Tensor::new(vec![o, c, kh, kw], out)
}

/// Swap the channel axes of a weight and rotate its kernel by 180°.
///
/// `[O, C, kh, kw]` → `[C, O, kh, kw]`; an involution.
pub fn flip_transpose(w: &Tensor) -> Tensor {
    let s = w.shape();
    let (o, c, kh, kw) = (s[0], s[1], s[2], s[3]);
    let wd = w.data();
    let mut out = vec![0.0; wd.len()];
    for oi in 0..o {
        for ci in 0..c {
            for a in 0..kh {
                for b in 0..kw {
                    out[((ci * o + oi) * kh + (kh - 1 - a)) * kw + (kw - 1 - b)] = wd[((oi * c + ci) * kh + a) * kw + b];
                }
            }
        }
    }
    Tensor::new(vec![c, o, kh, kw], out)
}

/// `[C*f*f, H, W]` → `[C, H*f, W*f]` with `out[c, i*f+a, j*f+b] = x[c*f*f + a*f + b, i, j]`.
pub fn depth_to_space(x: &Tensor, f: usize) -> Tensor {
    let (cf, h, w) = x.dims3();
    assert_eq!(cf % (f * f), 0, "depth_to_space: {cf} channels not divisible by {}", f * f);
    let c = cf / (f * f);
    let (ho, wo) = (h * f, w * f);
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for ci in 0..c {
        for a in 0..f {
            for b in 0..f {
                let src = &xd[((ci * f + a) * f + b) * h * w..][..h * w];
                for i in 0..h {
                    for j in 0..w {
                        out[(ci * ho + i * f + a) * wo + j * f + b] = src[i * w + j];
                    }
                }
            }
        }
    }
    Tensor::new(vec![c, ho, wo], out)
}

/// Inverse (and adjoint) of [`depth_to_space`].
pub fn space_to_depth(x: &Tensor, f: usize) -> Tensor {
    let (c, ho, wo) = x.dims3();
    assert!(ho % f == 0 && wo % f == 0, "space_to_depth: {ho}×{wo} not divisible by {f}");
    let (h, w) = (ho / f, wo / f);
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for ci in 0..c {
        for a in 0..f {
            for b in 0..f {
                let dst = &mut out[((ci * f + a) * f + b) * h * w..][..h * w];
                for i in 0..h {
                    for j in 0..w {
                        dst[i * w + j] = xd[(ci * ho + i * f + a) * wo + j * f + b];
                    }
                }
            }
        }
    }
    Tensor::new(vec![c * f * f, h, w], out)
}

/// Non-overlapping `f×f` average pooling.
pub fn avg_pool(x: &Tensor, f: usize) -> Tensor {
    let (c, h, w) = x.dims3();
    assert!(h % f == 0 && w % f == 0, "avg_pool: {h}×{w} not divisible by {f}");
    let (ho, wo) = (h / f, w / f);
    let xd = x.data();
    let norm = 1.0 / (f * f) as f64;
    let mut out = vec![0.0; c * ho * wo];
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                out[(ci * ho + i / f) * wo + j / f] += xd[(ci * h + i) * w + j] * norm;
            }
        }
    }
    Tensor::new(vec![c, ho, wo], out)
}

/// Adjoint of [`avg_pool`]: replicate each value over its `f×f` block, scaled by `1/f²`.
pub fn avg_pool_adjoint(g: &Tensor, f: usize) -> Tensor {
    let (c, ho, wo) = g.dims3();
    let (h, w) = (ho * f, wo * f);
    let gd = g.data();
    let norm = 1.0 / (f * f) as f64;
    let mut out = vec![0.0; c * h * w];
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                out[(ci * h + i) * w + j] = gd[(ci * ho + i / f) * wo + j / f] * norm;
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Flat indices of the maxima of each non-overlapping `f×f` block, in output order.
pub fn max_pool_indices(x: &Tensor, f: usize) -> Vec<usize> {
    let (c, h, w) = x.dims3();
    assert!(h % f == 0 && w % f == 0, "max_pool: {h}×{w} not divisible by {f}");
    let (ho, wo) = (h / f, w / f);
    let xd = x.data();
    let mut idx = Vec::with_capacity(c * ho * wo);
    for ci in 0..c {
        for bi in 0..ho {
            for bj in 0..wo {
                let mut best = (ci * h + bi * f) * w + bj * f;
                for a in 0..f {
                    for b in 0..f {
                        let k = (ci * h + bi * f + a) * w + bj * f + b;
                        if xd[k] > xd[best] {
                            best = k;
                        }
                    }
                }
                idx.push(best);
            }
        }
    }
    idx
}

/// Finite-difference derivative along one of the two trailing axes.
///
/// `axis = 0` differentiates along rows (the second-to-last axis), `axis = 1`
/// along columns. Central differences inside, one-sided at the borders.
pub fn spatial_diff(x: &Tensor, axis: usize) -> Tensor {
    let s = x.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = x.len() / (h * w);
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for p in 0..planes {
        let src = &xd[p * h * w..][..h * w];
        let dst = &mut out[p * h * w..][..h * w];
        let (n, stride, other, ostride) = if axis == 0 { (h, w, w, 1) } else { (w, 1, h, w) };
        for o in 0..other {
            let base = o * ostride;
            let at = |k: usize| src[base + k * stride];
            dst[base] = at(1) - at(0);
            for k in 1..n - 1 {
                dst[base + k * stride] = 0.5 * (at(k + 1) - at(k - 1));
            }
            dst[base + (n - 1) * stride] = at(n - 1) - at(n - 2);
        }
    }
    Tensor::new(s.to_vec(), out)
}

/// Adjoint of [`spatial_diff`].
pub fn spatial_diff_adjoint(g: &Tensor, axis: usize) -> Tensor {
    let s = g.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = g.len() / (h * w);
    let gd = g.data();
    let mut out = vec![0.0; gd.len()];
    for p in 0..planes {
        let src = &gd[p * h * w..][..h * w];
        let dst = &mut out[p * h * w..][..h * w];
        let (n, stride, other, ostride) = if axis == 0 { (h, w, w, 1) } else { (w, 1, h, w) };
        for o in 0..other {
            let base = o * ostride;
            let mut add = |k: usize, v: f64| dst[base + k * stride] += v;
            let gv = |k: usize| src[base + k * stride];
            add(1, gv(0));
            add(0, -gv(0));
            for k in 1..n - 1 {
                add(k + 1, 0.5 * gv(k));
                add(k - 1, -0.5 * gv(k));
            }
            add(n - 1, gv(n - 1));
            add(n - 2, -gv(n - 1));
        }
    }
    Tensor::new(s.to_vec(), out)
}

/// `[C]` → `[C, h, w]`, each plane filled with its channel value.
pub fn broadcast_spatial(b: &Tensor, h: usize, w: usize) -> Tensor {
    let c = b.len();
    let mut out = Vec::with_capacity(c * h * w);
    for &v in b.data() {
        out.extend(std::iter::repeat_n(v, h * w));
    }
    Tensor::new(vec![c, h, w], out)
}

/// `[C, ...]` → `[C]`, summing each leading-axis slab.
pub fn sum_spatial(x: &Tensor) -> Tensor {
    let c = x.shape()[0];
    let plane = x.len() / c.max(1);
    let out = x.data().chunks(plane.max(1)).map(|p| p.iter().sum()).collect::<Vec<f64>>();
    Tensor::new(vec![c], out)
}

pub fn gather(x: &Tensor, idx: &[usize], shape: &[usize]) -> Tensor {
    let xd = x.data();
    Tensor::new(shape.to_vec(), idx.iter().map(|&i| xd[i]).collect())
}

/// Adjoint of [`gather`]: scatter-add `g` into a zero tensor of `shape`.
pub fn scatter_add(g: &Tensor, idx: &[usize], shape: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(shape);
    let od = out.data_mut();
    for (&i, &v) in idx.iter().zip(g.data()) {
        od[i] += v;
    }
    out
}

pub fn concat_leading(parts: &[&Tensor]) -> Tensor {
    let tail = parts[0].shape()[1..].to_vec();
    let mut lead = 0;
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        assert_eq!(&p.shape()[1..], &tail[..], "concat: trailing shape mismatch");
        lead += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    let mut shape = vec![lead];
    shape.extend(tail);
    Tensor::new(shape, data)
}

/// Place `x` at leading offset `start` inside a zero tensor with `total` leading planes.
pub fn embed_leading(x: &Tensor, start: usize, total: usize) -> Tensor {
    let mut shape = x.shape().to_vec();
    let plane: usize = shape[1..].iter().product();
    shape[0] = total;
    let mut out = Tensor::zeros(&shape);
    out.data_mut()[start * plane..start * plane + x.len()].copy_from_slice(x.data());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Naive zero-padded correlation sum.
    fn conv_oracle(x: &Tensor, w: &Tensor, pad: (usize, usize)) -> Tensor {
        let (c, h, wd) = x.dims3();
        let s = w.shape();
        let (o, kh, kw) = (s[0], s[2], s[3]);
        let (ho, wo) = (h + 2 * pad.0 + 1 - kh, wd + 2 * pad.1 + 1 - kw);
        let mut out = Tensor::zeros(&[o, ho, wo]);
        for oi in 0..o {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for a in 0..kh {
                            for b in 0..kw {
                                let (si, sj) = (i as isize + a as isize - pad.0 as isize, j as isize + b as isize - pad.1 as isize);
                                if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < wd {
                                    acc += w.data()[((oi * c + ci) * kh + a) * kw + b] * x.data()[(ci * h + si as usize) * wd + sj as usize];
                                }
                            }
                        }
                    }
                    out.data_mut()[(oi * ho + i) * wo + j] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_sum() {
        for (k, p, seed) in [((5, 5), (2, 2), 1), ((3, 3), (1, 1), 2), ((1, 3), (0, 1), 3), ((1, 1), (0, 0), 4), ((3, 3), (0, 0), 5)] {
            let x = random(&[3, 7, 9], seed);
            let w = random(&[4, 3, k.0, k.1], seed + 10);
            let got = conv2d(&x, &w, p);
            let want = conv_oracle(&x, &w, p);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wgrad_is_adjoint_of_conv_in_weight() {
        let x = random(&[3, 6, 5], 7);
        let w = random(&[2, 3, 3, 3], 8);
        let gy = random(&[2, 6, 5], 9);
        let lhs = conv2d(&x, &w, (1, 1)).dot(&gy);
        let rhs = conv2d_wgrad(&x, &gy, (3, 3), (1, 1)).dot(&w);
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn flipped_conv_is_adjoint_in_input() {
        let x = random(&[3, 6, 5], 11);
        let w = random(&[2, 3, 5, 5], 12);
        let gy = random(&[2, 6, 5], 13);
        let lhs = conv2d(&x, &w, (2, 2)).dot(&gy);
        let rhs = conv2d(&gy, &flip_transpose(&w), (2, 2)).dot(&x);
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pooling_and_diff_adjoints() {
        let x = random(&[2, 8, 8], 21);
        let g = random(&[2, 2, 2], 22);
        assert!((avg_pool(&x, 4).dot(&g) - avg_pool_adjoint(&g, 4).dot(&x)).abs() < 1e-12);
        let y = random(&[2, 8, 8], 23);
        for axis in 0..2 {
            assert!((spatial_diff(&x, axis).dot(&y) - spatial_diff_adjoint(&y, axis).dot(&x)).abs() < 1e-12);
        }
        let d = random(&[32, 2, 2], 24);
        assert_eq!(space_to_depth(&depth_to_space(&d, 4), 4), d);
    }

    #[test]
    fn diff_exact_on_ramp() {
        let x = Tensor::from_fn(&[1, 5, 6], |k| 2.0 * (k / 6) as f64 + 3.0 * (k % 6) as f64);
        assert!(spatial_diff(&x, 0).data().iter().all(|&v| (v - 2.0).abs() < 1e-12));
        assert!(spatial_diff(&x, 1).data().iter().all(|&v| (v - 3.0).abs() < 1e-12));
    }
}
