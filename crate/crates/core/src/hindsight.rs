//! Best fixed decision in hindsight for the quadratic-plus-ℓ1 objectives the
//! regret metrics compare against.

use crate::error::{check_len, Error, Result};
use crate::oco::{dot, norm1, soft_threshold, Bounds};

pub const MAX_ITERATIONS: usize = 10_000;

/// Stopping threshold on the relative change of the iterate.
pub const RELATIVE_TOL: f64 = 1e-10;

/// `½ xᵀHx + bᵀx + k + w‖x‖₁` over a box.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeQuadratic {
    dim: usize,
    /// Row-major, symmetric positive semidefinite.
    hessian: Vec<f64>,
    linear: Vec<f64>,
    constant: f64,
    l1_weight: f64,
    bounds: Bounds,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HindsightSolution {
    pub mu: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl CompositeQuadratic {
    pub fn zero(bounds: Bounds) -> Self {
        let dim = bounds.dim();
        Self {
            dim,
            hessian: vec![0.0; dim * dim],
            linear: vec![0.0; dim],
            constant: 0.0,
            l1_weight: 0.0,
            bounds,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn l1_weight(&self) -> f64 {
        self.l1_weight
    }

    /// Adds `weight·(s - aᵀx)²`.
    pub fn add_squared_residual(&mut self, s: f64, a: &[f64], weight: f64) -> Result<()> {
        check_len(self.dim, a.len())?;
        for i in 0..self.dim {
            let row = &mut self.hessian[i * self.dim..(i + 1) * self.dim];
            let wa = 2.0 * weight * a[i];
            for (h, aj) in row.iter_mut().zip(a) {
                *h += wa * aj;
            }
            self.linear[i] -= 2.0 * weight * s * a[i];
        }
        self.constant += weight * s * s;
        Ok(())
    }

    /// Adds `weight·‖x‖²`.
    pub fn add_ridge(&mut self, weight: f64) {
        for i in 0..self.dim {
            self.hessian[i * self.dim + i] += 2.0 * weight;
        }
    }

    /// Adds `weight·Σᵢ (aᵢxᵢ + bᵢx_{N+i})²` for a `2N`-dimensional decision.
    pub fn add_paired_ridge(&mut self, a: &[f64], b: &[f64], weight: f64) -> Result<()> {
        let n = a.len();
        check_len(n, b.len())?;
        check_len(self.dim, 2 * n)?;
        let d = self.dim;
        for i in 0..n {
            let j = n + i;
            self.hessian[i * d + i] += 2.0 * weight * a[i] * a[i];
            self.hessian[j * d + j] += 2.0 * weight * b[i] * b[i];
            self.hessian[i * d + j] += 2.0 * weight * a[i] * b[i];
            self.hessian[j * d + i] += 2.0 * weight * a[i] * b[i];
        }
        Ok(())
    }

    pub fn add_l1(&mut self, weight: f64) {
        self.l1_weight += weight;
    }

    fn hess_mul(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&self.hessian[i * self.dim..(i + 1) * self.dim], x);
        }
    }

    pub fn smooth_value(&self, x: &[f64]) -> f64 {
        let mut hx = vec![0.0; self.dim];
        self.hess_mul(x, &mut hx);
        0.5 * dot(x, &hx) + dot(&self.linear, x) + self.constant
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        check_len(self.dim, x.len())?;
        Ok(self.smooth_value(x) + self.l1_weight * norm1(x))
    }

    /// Upper bound on the largest eigenvalue of `H`: power iteration with a
    /// safety margin, capped by the Gershgorin bound.
    fn curvature(&self) -> f64 {
        let gershgorin = (0..self.dim)
            .map(|i| {
                self.hessian[i * self.dim..(i + 1) * self.dim]
                    .iter()
                    .map(|h| h.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        if gershgorin == 0.0 {
            return 0.0;
        }
        let mut v: Vec<f64> = (0..self.dim).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
        let mut hv = vec![0.0; self.dim];
        let mut estimate = 0.0;
        for _ in 0..200 {
            let norm = dot(&v, &v).sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            self.hess_mul(&v, &mut hv);
            estimate = dot(&v, &hv);
            std::mem::swap(&mut v, &mut hv);
        }
        (1.05 * estimate).min(gershgorin).max(1e-12 * gershgorin)
    }
}

fn prox(y: &[f64], grad: &[f64], step: f64, l1: f64, bounds: &Bounds, out: &mut [f64]) {
    for i in 0..y.len() {
        let z = soft_threshold(y[i] - step * grad[i], step * l1);
        out[i] = z.clamp(bounds.lo()[i], bounds.hi()[i]);
    }
}

/// Minimizes a [`CompositeQuadratic`] over its box with accelerated
/// proximal gradient (adaptive restart). The prox of `w‖·‖₁` plus the box
/// indicator is exact because every box contains the origin.
pub fn hindsight_optimum(problem: &CompositeQuadratic) -> Result<HindsightSolution> {
    let n = problem.dim;
    for (i, (&lo, &hi)) in problem
        .bounds
        .lo()
        .iter()
        .zip(problem.bounds.hi())
        .enumerate()
    {
        if lo > 0.0 || hi < 0.0 {
            return Err(Error::UnsupportedBox { index: i, lo, hi });
        }
    }
    let lipschitz = problem.curvature();
    let mut x = vec![0.0; n];
    if lipschitz == 0.0 {
        // Linear objective: minimize coordinate-wise over the box.
        let w = problem.l1_weight;
        for (i, xi) in x.iter_mut().enumerate() {
            let (lo, hi) = (problem.bounds.lo()[i], problem.bounds.hi()[i]);
            let b = problem.linear[i];
            *xi = if b + w < 0.0 {
                hi
            } else if b - w > 0.0 {
                lo
            } else {
                0.0
            };
        }
        let value = problem.value(&x)?;
        return Ok(HindsightSolution {
            mu: x,
            value,
            iterations: 0,
            converged: true,
        });
    }
    let step = 1.0 / lipschitz;
    let mut y = x.clone();
    let mut next = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut momentum = 1.0_f64;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        problem.hess_mul(&y, &mut grad);
        grad.iter_mut()
            .zip(&problem.linear)
            .for_each(|(g, b)| *g += b);
        prox(
            &y,
            &grad,
            step,
            problem.l1_weight,
            &problem.bounds,
            &mut next,
        );

        let change = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = dot(&x, &x).sqrt().max(1.0);
        // Restart momentum whenever it points uphill.
        let uphill = next
            .iter()
            .zip(&x)
            .zip(y.iter().zip(&next))
            .map(|((xn, xo), (yi, xn2))| (yi - xn2) * (xn - xo))
            .sum::<f64>()
            > 0.0;
        let residual = next
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let next_momentum = if uphill {
            1.0
        } else {
            0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt())
        };
        let beta = if uphill {
            0.0
        } else {
            (momentum - 1.0) / next_momentum
        };
        for i in 0..n {
            y[i] = next[i] + beta * (next[i] - x[i]);
        }
        std::mem::swap(&mut x, &mut next);
        momentum = next_momentum;
        if change <= RELATIVE_TOL * scale && residual <= RELATIVE_TOL * scale {
            converged = true;
            break;
        }
    }
    let value = problem.value(&x)?;
    Ok(HindsightSolution {
        mu: x,
        value,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_optimum() {
        let mut p = CompositeQuadratic::zero(Bounds::symmetric(1));
        p.add_squared_residual(1.0, &[1.0], 1.0).unwrap();
        let sol = hindsight_optimum(&p).unwrap();
        assert!((sol.mu[0] - 1.0).abs() < 1e-9);
        assert!(sol.value.abs() < 1e-12);
        assert!(sol.converged);
    }

    #[test]
    fn zero_setpoint_with_sparsity_stays_at_origin() {
        let mut p = CompositeQuadratic::zero(Bounds::symmetric(3));
        for c in [[1.0, 2.0, 0.5], [0.3, 1.0, 1.5]] {
            p.add_squared_residual(0.0, &c, 1.0).unwrap();
        }
        p.add_l1(0.1);
        let sol = hindsight_optimum(&p).unwrap();
        assert!(sol.mu.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn linear_objective_picks_corners() {
        let mut p = CompositeQuadratic::zero(Bounds::symmetric(2));
        p.linear = vec![-1.0, 0.5];
        p.add_l1(0.75);
        let sol = hindsight_optimum(&p).unwrap();
        assert_eq!(sol.mu, vec![1.0, 0.0]);
    }

    #[test]
    fn paired_ridge_matches_direct_evaluation() {
        let mut p = CompositeQuadratic::zero(Bounds::symmetric(4));
        p.add_paired_ridge(&[2.0, 3.0], &[0.5, -1.0], 1.5).unwrap();
        let x = [0.3, -0.2, 0.7, 0.4];
        let direct =
            1.5 * ((2.0 * 0.3 + 0.5 * 0.7f64).powi(2) + (3.0 * -0.2 - 1.0 * 0.4f64).powi(2));
        assert!((p.value(&x).unwrap() - direct).abs() < 1e-12);
    }
}
