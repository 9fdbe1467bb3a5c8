//! Decoupled quadratic toy problem with a known optimum:
//!   g_0 = ‖y − x‖² + ‖y − ξ‖²,  ξ_k ~ N(0,1),  no constraints.
//! The short-term optimum is y* = (x + ξ)/2, giving E[g_0] = E‖x − ξ‖²/2,
//! minimized at x̄ = E[ξ] = 0 with value dim/2.

use rand_chacha::ChaCha8Rng;

use crate::apps::normal_pair;
use crate::problem::{BoxDomain, GEval, ProblemDefinition, SecondOrder, State};

pub struct ToyProblem {
    pub dim: usize,
}

impl ProblemDefinition for ToyProblem {
    fn dim_x(&self) -> usize {
        self.dim
    }

    fn dim_y(&self) -> usize {
        self.dim
    }

    fn num_long(&self) -> usize {
        0
    }

    fn domain_x(&self) -> BoxDomain {
        BoxDomain::uniform(self.dim, -10.0, 10.0)
    }

    fn domain_y(&self) -> BoxDomain {
        BoxDomain::uniform(self.dim, -20.0, 20.0)
    }

    fn sample_g(&self, _i: usize, x: &[f64], y: &[f64], xi: &State) -> GEval {
        let mut value = 0.0;
        let mut grad_x = vec![0.0; self.dim];
        let mut grad_y = vec![0.0; self.dim];
        for k in 0..self.dim {
            let a = y[k] - x[k];
            let b = y[k] - xi[k];
            value += a * a + b * b;
            grad_x[k] = -2.0 * a;
            grad_y[k] = 2.0 * a + 2.0 * b;
        }
        GEval { value, grad_x, grad_y }
    }

    fn draw_state(&self, rng: &mut ChaCha8Rng) -> State {
        let mut xi = Vec::with_capacity(self.dim);
        while xi.len() < self.dim {
            let (a, b) = normal_pair(rng);
            xi.push(a);
            if xi.len() < self.dim {
                xi.push(b);
            }
        }
        xi
    }
}

impl SecondOrder for ToyProblem {
    fn g_hvp(
        &self,
        _i: usize,
        _x: &[f64],
        _y: &[f64],
        _xi: &State,
        v: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        // H_yy = 4I, ∂_x(vᵀ∇_y g) = −2v
        (v.iter().map(|e| 4.0 * e).collect(), v.iter().map(|e| -2.0 * e).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn short_term_optimum_is_midpoint() {
        let p = ToyProblem { dim: 3 };
        let x = [0.5, -1.0, 2.0];
        let xi = vec![1.5, 1.0, 0.0];
        let y: Vec<f64> = x.iter().zip(&xi).map(|(a, b)| 0.5 * (a + b)).collect();
        let eval = p.sample_g(0, &x, &y, &xi);
        assert!(eval.grad_y.iter().all(|g| g.abs() < 1e-12));
        // value at the midpoint is ‖x − ξ‖²/2
        let want: f64 = x.iter().zip(&xi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 2.0;
        assert!((eval.value - want).abs() < 1e-12);
    }

    #[test]
    fn hvp_matches_finite_difference() {
        let p = ToyProblem { dim: 2 };
        let (x, y, xi) = ([0.3, -0.7], [1.1, 0.4], vec![0.2, -0.5]);
        let v = [0.6, -1.3];
        let (hy, hx) = p.g_hvp(0, &x, &y, &xi, &v);
        let eps = 1e-6;
        for k in 0..2 {
            let mut yp = y;
            yp[k] += eps;
            let mut ym = y;
            ym[k] -= eps;
            let gp = p.sample_g(0, &x, &yp, &xi).grad_y;
            let gm = p.sample_g(0, &x, &ym, &xi).grad_y;
            let fd: f64 = (0..2).map(|j| v[j] * (gp[j] - gm[j]) / (2.0 * eps)).sum();
            assert!((fd - hy[k]).abs() < 1e-6);
            let mut xp = x;
            xp[k] += eps;
            let mut xm = x;
            xm[k] -= eps;
            let gp = p.sample_g(0, &xp, &y, &xi).grad_y;
            let gm = p.sample_g(0, &xm, &y, &xi).grad_y;
            let fd: f64 = (0..2).map(|j| v[j] * (gp[j] - gm[j]) / (2.0 * eps)).sum();
            assert!((fd - hx[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn state_mean_near_zero() {
        let p = ToyProblem { dim: 4 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mean = vec![0.0; 4];
        let n = 20_000;
        for _ in 0..n {
            for (m, v) in mean.iter_mut().zip(p.draw_state(&mut rng)) {
                *m += v / n as f64;
            }
        }
        assert!(mean.iter().all(|m| m.abs() < 0.03));
    }
}
