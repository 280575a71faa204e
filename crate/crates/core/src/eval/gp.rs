//! Noise-free Gaussian-process interpolation of buoy-wise degradations.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Squared-exponential length scale of the degradation map.
pub const GP_LENGTH_KM: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DegradationMap {
    pub values: Array2<f64>,
    pub length_scale_px: f64,
    pub prior_mean: f64,
}

fn kernel(a: (f64, f64), b: (f64, f64), length: f64) -> f64 {
    let d2 = (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
    (-d2 / (2.0 * length * length)).exp()
}

/// GP posterior mean with a squared-exponential kernel and constant prior mean.
pub struct GpInterpolator {
    points: Vec<(f64, f64)>,
    alpha: DVector<f64>,
    length: f64,
    mean: f64,
}

impl GpInterpolator {
    pub fn fit(points: &[(f64, f64)], values: &[f64], length: f64, mean: f64) -> Result<Self> {
        if points.is_empty() || points.len() != values.len() {
            return Err(Error::invalid(format!("{} points for {} values", points.len(), values.len())));
        }
        if !(length > 0.0) {
            return Err(Error::invalid("length scale must be positive"));
        }
        for (i, a) in points.iter().enumerate() {
            if points[..i].contains(a) {
                return Err(Error::invalid(format!("duplicate GP point {a:?}")));
            }
        }
        let n = points.len();
        let k = DMatrix::from_fn(n, n, |i, j| kernel(points[i], points[j], length));
        let rhs = DVector::from_iterator(n, values.iter().map(|v| v - mean));
        let alpha = match k.clone().cholesky() {
            Some(c) => c.solve(&rhs),
            None => k.full_piv_lu().solve(&rhs).ok_or_else(|| Error::NonFinite("singular GP kernel matrix".into()))?,
        };
        Ok(Self { points: points.to_vec(), alpha, length, mean })
    }

    pub fn predict(&self, q: (f64, f64)) -> f64 {
        self.mean + self.points.iter().zip(self.alpha.iter()).map(|(&p, a)| a * kernel(p, q, self.length)).sum::<f64>()
    }
}

/// Map of `values` observed at pixel `positions`, interpolated over `grid`.
pub fn gp_degradation_map(positions: &[(usize, usize)], values: &[f64], grid: Grid) -> Result<DegradationMap> {
    let length = GP_LENGTH_KM / grid.spacing_km;
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    let pts: Vec<(f64, f64)> = positions.iter().map(|&(r, c)| (r as f64, c as f64)).collect();
    let gp = GpInterpolator::fit(&pts, values, length, mean)?;
    let map = Array2::from_shape_fn((grid.height, grid.width), |(i, j)| gp.predict((i as f64, j as f64)));
    Ok(DegradationMap { values: map, length_scale_px: length, prior_mean: mean })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_limits() {
        let g = Grid::new(32, 32, 3.0).unwrap();
        let m = gp_degradation_map(&[(5, 5)], &[-0.7], g).unwrap();
        assert!((m.values[[5, 5]] + 0.7).abs() < 1e-12);
        assert!((m.values[[31, 31]] - m.prior_mean).abs() < 1e-6);
        assert!(gp_degradation_map(&[(1, 1), (1, 1)], &[0.0, 1.0], g).is_err());
    }

    #[test]
    fn exact_at_observations() {
        let pts = [(3.0, 4.0), (10.0, 12.0), (20.0, 5.0), (21.0, 7.0), (40.0, 30.0)];
        let vals = [-0.5, -0.2, -0.9, -0.85, 0.1];
        let gp = GpInterpolator::fit(&pts, &vals, 10.0, -0.3).unwrap();
        for (p, v) in pts.iter().zip(vals) {
            assert!((gp.predict(*p) - v).abs() < 1e-8);
        }
    }

    #[test]
    fn three_point_toy_matches_explicit_solve() {
        let xs = [0.0, 1.0, 2.5];
        let ys = [1.0, -1.0, 0.5];
        let (l, mu) = (1.2, 0.1);
        let pts: Vec<(f64, f64)> = xs.iter().map(|&x| (x, 0.0)).collect();
        let gp = GpInterpolator::fit(&pts, &ys, l, mu).unwrap();
        // Cramer's rule on the 3×3 kernel system.
        let k = |a: f64, b: f64| (-(a - b) * (a - b) / (2.0 * l * l)).exp();
        let m: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| k(xs[i], xs[j])));
        let det = |m: &[[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(&m);
        let alpha: Vec<f64> = (0..3)
            .map(|c| {
                let mut mc = m;
                for r in 0..3 {
                    mc[r][c] = ys[r] - mu;
                }
                det(&mc) / d
            })
            .collect();
        for q in [-1.0, 0.4, 1.7, 3.3] {
            let want = mu + (0..3).map(|i| alpha[i] * k(xs[i], q)).sum::<f64>();
            assert!((gp.predict((q, 0.0)) - want).abs() < 1e-8);
        }
    }
}
