//! Recursive surrogate trackers and the strongly convex surrogates f̄_i^t.
//!
//! The trackers follow the convex-combination recursion
//!   f_i^t = (1−ρ^t) f_i^{t−1} + ρ^t (1/B) Σ_j g_i(x^t, y_j^t, ξ_j^t)
//! and likewise for the three gradient trackers, initialized to zero. The
//! surrogate anchored at (x^t, λ^t) is
//!   f̄_i^t(x, λ) = const + lin_xᵀ(x−x^t) + lin_λᵀ(λ−λ^t)
//!               + τ(‖x−x^t‖² + ‖λ−λ^t‖²) + (ρ^t/B) Σ_j c_j(x)
//! where the optional c_j are retained sample convex components; both shipped
//! applications use the quadratic special case with no convex terms.

use std::sync::Arc;

use crate::problem::LongTermIterate;
use crate::qcqp::Quadratic;

/// Tracked value and gradients of one f_i^J.
#[derive(Debug, Clone)]
pub struct SurrogateTracker {
    /// Scalar tracker f_i^t.
    pub f: f64,
    /// Tracker of ∂_x g_i (partial, y fixed).
    pub fx: Vec<f64>,
    /// Tracker of (∂_x y^J)ᵀ ∂_y g_i (pushed through the unrolled solve).
    pub fy: Vec<f64>,
    /// Tracker of (∂_λ y^J)ᵀ ∂_y g_i.
    pub flambda: Vec<f64>,
    /// Curvature constant τ_i > 0.
    pub tau: f64,
}

impl SurrogateTracker {
    /// Zero-initialized trackers (f_i^{−1} = 0, 𝐟^{−1} = 0).
    pub fn new(n_x: usize, m: usize, tau: f64) -> Self {
        assert!(tau > 0.0, "curvature constant must be positive");
        SurrogateTracker {
            f: 0.0,
            fx: vec![0.0; n_x],
            fy: vec![0.0; n_x],
            flambda: vec![0.0; m],
            tau,
        }
    }
}

/// Per-sample statistics of one constraint index: the sample value, the
/// partial x-gradient, and the two tape-pushed gradients.
#[derive(Debug, Clone)]
pub struct SampleStat {
    pub value: f64,
    pub grad_x_partial: Vec<f64>,
    pub pushed_x: Vec<f64>,
    pub pushed_lambda: Vec<f64>,
}

/// One recursion step over a mini-batch; rho ∈ (0, 1].
pub fn update_trackers(
    tracker: &SurrogateTracker,
    rho: f64,
    batch: &[SampleStat],
) -> SurrogateTracker {
    assert!(!batch.is_empty(), "tracker update needs a nonempty batch");
    assert!(rho > 0.0 && rho <= 1.0);
    let b = batch.len() as f64;
    let keep = 1.0 - rho;
    let mut out = SurrogateTracker {
        f: keep * tracker.f,
        fx: tracker.fx.iter().map(|v| keep * v).collect(),
        fy: tracker.fy.iter().map(|v| keep * v).collect(),
        flambda: tracker.flambda.iter().map(|v| keep * v).collect(),
        tau: tracker.tau,
    };
    let scale = rho / b;
    for stat in batch {
        out.f += scale * stat.value;
        for (a, v) in out.fx.iter_mut().zip(&stat.grad_x_partial) {
            *a += scale * v;
        }
        for (a, v) in out.fy.iter_mut().zip(&stat.pushed_x) {
            *a += scale * v;
        }
        for (a, v) in out.flambda.iter_mut().zip(&stat.pushed_lambda) {
            *a += scale * v;
        }
    }
    out
}

/// One retained sample convex component c_j(x) with its anchor data.
#[derive(Clone)]
pub struct ConvexTerm {
    pub value_at_anchor: f64,
    pub grad_at_anchor: Vec<f64>,
    /// x ↦ (c_j(x), ∇c_j(x)).
    pub eval: Arc<dyn Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync>,
}

/// The assembled surrogate f̄_i^t, strongly convex with modulus 2τ.
#[derive(Clone)]
pub struct SurrogateModel {
    pub anchor_x: Vec<f64>,
    pub anchor_lambda: Vec<f64>,
    pub constant: f64,
    pub lin_x: Vec<f64>,
    pub lin_lambda: Vec<f64>,
    pub tau: f64,
    /// Weight ρ^t/B of each retained convex term.
    pub convex_weight: f64,
    pub convex_terms: Vec<ConvexTerm>,
}

impl SurrogateModel {
    pub fn value(&self, x: &[f64], lambda: &[f64]) -> f64 {
        let mut v = self.constant;
        for k in 0..x.len() {
            let d = x[k] - self.anchor_x[k];
            v += self.lin_x[k] * d + self.tau * d * d;
        }
        for k in 0..lambda.len() {
            let d = lambda[k] - self.anchor_lambda[k];
            v += self.lin_lambda[k] * d + self.tau * d * d;
        }
        for term in &self.convex_terms {
            v += self.convex_weight * (term.eval)(x).0;
        }
        v
    }

    pub fn grad(&self, x: &[f64], lambda: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut gx: Vec<f64> = (0..x.len())
            .map(|k| self.lin_x[k] + 2.0 * self.tau * (x[k] - self.anchor_x[k]))
            .collect();
        let gl: Vec<f64> = (0..lambda.len())
            .map(|k| self.lin_lambda[k] + 2.0 * self.tau * (lambda[k] - self.anchor_lambda[k]))
            .collect();
        for term in &self.convex_terms {
            let (_, g) = (term.eval)(x);
            for (a, v) in gx.iter_mut().zip(&g) {
                *a += self.convex_weight * v;
            }
        }
        (gx, gl)
    }

    /// The quadratic over the stacked variable v = [x; λ]; None when retained
    /// convex terms make the surrogate non-quadratic.
    pub fn as_quadratic(&self) -> Option<Quadratic> {
        if !self.convex_terms.is_empty() {
            return None;
        }
        let anchor: Vec<f64> =
            self.anchor_x.iter().chain(&self.anchor_lambda).copied().collect();
        let lin: Vec<f64> = self.lin_x.iter().chain(&self.lin_lambda).copied().collect();
        let dim = anchor.len();
        let mut constant = self.constant;
        let mut linear = vec![0.0; dim];
        for k in 0..dim {
            constant += -lin[k] * anchor[k] + self.tau * anchor[k] * anchor[k];
            linear[k] = lin[k] - 2.0 * self.tau * anchor[k];
        }
        Some(Quadratic { constant, linear, diag: vec![self.tau; dim] })
    }
}

/// Assembles f̄_i^t from the post-update trackers. With convex terms the
/// tracked constant and x-gradient are corrected so that the anchor value and
/// gradient still equal (f_i^t, fx+fy, flambda) exactly: the batch convex
/// parts enter through the retained terms instead of their linearization.
pub fn build_surrogate(
    tracker: &SurrogateTracker,
    anchor: &LongTermIterate,
    rho: f64,
    batch_size: usize,
    convex_terms: Option<Vec<ConvexTerm>>,
) -> SurrogateModel {
    let mut constant = tracker.f;
    let mut lin_x: Vec<f64> = tracker.fx.iter().zip(&tracker.fy).map(|(a, b)| a + b).collect();
    let lin_lambda = tracker.flambda.clone();
    let (convex_weight, convex_terms) = match convex_terms {
        None => (0.0, Vec::new()),
        Some(terms) => {
            let w = rho / batch_size as f64;
            for term in &terms {
                constant -= w * term.value_at_anchor;
                for (a, g) in lin_x.iter_mut().zip(&term.grad_at_anchor) {
                    *a -= w * g;
                }
            }
            (w, terms)
        }
    };
    SurrogateModel {
        anchor_x: anchor.x.clone(),
        anchor_lambda: anchor.lambda.clone(),
        constant,
        lin_x,
        lin_lambda,
        tau: tracker.tau,
        convex_weight,
        convex_terms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stat(value: f64, gx: Vec<f64>, px: Vec<f64>, pl: Vec<f64>) -> SampleStat {
        SampleStat { value, grad_x_partial: gx, pushed_x: px, pushed_lambda: pl }
    }

    #[test]
    fn rho_one_erases_history() {
        let mut tr = SurrogateTracker::new(1, 1, 1.0);
        tr.f = 99.0;
        tr.fx = vec![5.0];
        tr.fy = vec![-5.0];
        tr.flambda = vec![3.0];
        let batch = vec![
            stat(1.0, vec![2.0], vec![0.5], vec![-1.0]),
            stat(3.0, vec![4.0], vec![1.5], vec![1.0]),
        ];
        let out = update_trackers(&tr, 1.0, &batch);
        assert_eq!(out.f, 2.0);
        assert_eq!(out.fx, vec![3.0]);
        assert_eq!(out.fy, vec![1.0]);
        assert_eq!(out.flambda, vec![0.0]);
    }

    #[test]
    fn constant_batch_geometric_convergence() {
        let mut tr = SurrogateTracker::new(0, 0, 1.0);
        let v = 7.0;
        let c = 0.3;
        let batch = vec![stat(v, vec![], vec![], vec![])];
        for t in 0..50 {
            tr = update_trackers(&tr, c, &batch);
            let expected_err = (1.0 - c_pow(c, t + 1)) * 0.0 + c_pow(1.0 - c, t + 1) * v;
            assert!((tr.f - (v - expected_err)).abs() < 1e-12, "t = {t}");
        }
        fn c_pow(b: f64, e: usize) -> f64 {
            b.powi(e as i32)
        }
    }

    #[test]
    fn pure_proximal_surrogate() {
        // all trackers zero, τ = 1 → f̄ = ‖x−x^t‖² + ‖λ−λ^t‖², min at anchor
        let tr = SurrogateTracker::new(2, 1, 1.0);
        let anchor = LongTermIterate::new(vec![1.0, -1.0], vec![0.5]);
        let model = build_surrogate(&tr, &anchor, 0.5, 4, None);
        assert_eq!(model.value(&[1.0, -1.0], &[0.5]), 0.0);
        assert!((model.value(&[2.0, -1.0], &[0.5]) - 1.0).abs() < 1e-15);
        assert!((model.value(&[1.0, -1.0], &[1.5]) - 1.0).abs() < 1e-15);
        let (gx, gl) = model.grad(&[1.0, -1.0], &[0.5]);
        assert_eq!(gx, vec![0.0, 0.0]);
        assert_eq!(gl, vec![0.0]);
    }

    #[test]
    fn quadratic_identity_at_anchor() {
        let mut tr = SurrogateTracker::new(1, 0, 2.0);
        tr.f = 3.0;
        tr.fx = vec![1.5];
        tr.fy = vec![0.5];
        let anchor = LongTermIterate::new(vec![0.7], vec![]);
        let model = build_surrogate(&tr, &anchor, 0.2, 4, None);
        // f̄(x, λ^t) = v + gᵀ(x−x^t) + τ‖x−x^t‖²  with g = fx + fy
        assert!((model.value(&[0.7], &[]) - 3.0).abs() < 1e-15);
        let dx = 0.3;
        let want = 3.0 + 2.0 * dx + 2.0 * dx * dx;
        assert!((model.value(&[1.0], &[]) - want).abs() < 1e-12);
        let (gx, _) = model.grad(&[0.7], &[]);
        assert_eq!(gx, vec![2.0]);
    }

    #[test]
    fn as_quadratic_matches_direct_evaluation() {
        let mut tr = SurrogateTracker::new(2, 1, 1.3);
        tr.f = -1.0;
        tr.fx = vec![0.4, -0.2];
        tr.fy = vec![0.1, 0.3];
        tr.flambda = vec![2.0];
        let anchor = LongTermIterate::new(vec![0.5, -0.5], vec![1.0]);
        let model = build_surrogate(&tr, &anchor, 0.7, 20, None);
        let q = model.as_quadratic().unwrap();
        for probe in [[0.0, 0.0, 0.0], [1.0, -2.0, 3.0], [0.5, -0.5, 1.0]] {
            let direct = model.value(&probe[..2], &probe[2..]);
            assert!((q.value(&probe) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn structured_path_keeps_anchor_consistency() {
        // retained convex terms c_j(x) = (x−s_j)² must not move the anchor
        // value/gradient away from the tracked quantities
        let mut tr = SurrogateTracker::new(1, 0, 1.0);
        tr.f = 4.0;
        tr.fx = vec![2.0];
        tr.fy = vec![1.0];
        let anchor = LongTermIterate::new(vec![0.5], vec![]);
        let shifts = [0.0, 2.0];
        let terms: Vec<ConvexTerm> = shifts
            .iter()
            .map(|&s| {
                let at = (0.5 - s) * (0.5 - s);
                ConvexTerm {
                    value_at_anchor: at,
                    grad_at_anchor: vec![2.0 * (0.5 - s)],
                    eval: Arc::new(move |x: &[f64]| {
                        ((x[0] - s) * (x[0] - s), vec![2.0 * (x[0] - s)])
                    }),
                }
            })
            .collect();
        let model = build_surrogate(&tr, &anchor, 0.4, 2, Some(terms));
        assert!((model.value(&[0.5], &[]) - 4.0).abs() < 1e-12);
        let (gx, _) = model.grad(&[0.5], &[]);
        assert!((gx[0] - 3.0).abs() < 1e-12);
        assert!(model.as_quadratic().is_none());
    }

    #[test]
    fn strong_convexity_lower_bound() {
        let mut tr = SurrogateTracker::new(2, 1, 1.7);
        tr.fx = vec![0.3, -0.8];
        tr.fy = vec![0.0, 0.1];
        tr.flambda = vec![-0.4];
        tr.f = 1.0;
        let anchor = LongTermIterate::new(vec![0.0, 0.0], vec![1.0]);
        let model = build_surrogate(&tr, &anchor, 0.5, 2, None);
        let pts = [
            ([0.3, -0.5], [0.2]),
            ([-1.0, 2.0], [3.0]),
            ([0.0, 0.0], [0.0]),
            ([2.0, 2.0], [2.0]),
        ];
        for (x1, l1) in &pts {
            for (x2, l2) in &pts {
                let (g1x, g1l) = model.grad(x1, l1);
                let mut inner = 0.0;
                let mut dist2 = 0.0;
                for k in 0..2 {
                    inner += g1x[k] * (x2[k] - x1[k]);
                    dist2 += (x2[k] - x1[k]) * (x2[k] - x1[k]);
                }
                inner += g1l[0] * (l2[0] - l1[0]);
                dist2 += (l2[0] - l1[0]) * (l2[0] - l1[0]);
                // modulus-2τ bound: f(v2) ≥ f(v1) + ∇f(v1)ᵀ(v2−v1) + τ‖v2−v1‖²
                let lhs = model.value(x2, l2);
                let rhs = model.value(x1, l1) + inner + model.tau * dist2;
                assert!(lhs >= rhs - 1e-10);
            }
        }
    }
}
