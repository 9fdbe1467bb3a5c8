//! Cognitive multi-access channel power control. N secondary users share an
//! uplink; the ergodic sum rate E[log(1 + Σ a_i p_i)] is maximized subject to
//! long-term per-user average power caps E[p_i] ≤ P_i and an average
//! interference cap E[Σ b_i p_i] ≤ Γ at the primary receiver. Channel power
//! gains (a, b) are Exp(1) (Rayleigh fading).
//!
//! Framework mapping: no long-term primal variable (dim_x = 0); the long-term
//! vector is the multiplier tuple (λ_1…λ_N, Υ) and the short-term solve is
//! the closed-form water-filling allocation.
//!
//! Two baselines for the same instance: an ellipsoid method on the exact SAA
//! dual (the performance oracle), and a per-realization scheme that imposes
//! p_i ≤ P_i and Σ b_i p_i ≤ Γ on every fading state.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::apps::exponential;
use crate::error::Error;
use crate::problem::{BoxDomain, GEval, ProblemDefinition, State};
use crate::qcqp::{self, IpmOptions, ObjectiveOutcome, Quadratic, SmoothConvex};
use crate::shortterm::cmac_short_term;

#[derive(Debug, Clone)]
pub struct CmacInstance {
    pub users: usize,
    /// Per-user average power caps P_i.
    pub power_caps: Vec<f64>,
    /// Average interference cap Γ.
    pub interference_cap: f64,
    /// Box cap on instantaneous power (large; inactive at optimality).
    pub p_domain_cap: f64,
}

impl Default for CmacInstance {
    fn default() -> Self {
        // N = 2, P_i = 10^0.5, Γ = 0.5
        CmacInstance {
            users: 2,
            power_caps: vec![10.0_f64.powf(0.5); 2],
            interference_cap: 0.5,
            p_domain_cap: 1e6,
        }
    }
}

pub struct CmacProblem {
    instance: CmacInstance,
}

pub fn cmac_problem(instance: CmacInstance) -> CmacProblem {
    assert_eq!(instance.users, instance.power_caps.len());
    CmacProblem { instance }
}

impl CmacProblem {
    pub fn instance(&self) -> &CmacInstance {
        &self.instance
    }

    fn split<'a>(&self, xi: &'a State) -> (&'a [f64], &'a [f64]) {
        let n = self.instance.users;
        (&xi[..n], &xi[n..2 * n])
    }
}

impl ProblemDefinition for CmacProblem {
    fn dim_x(&self) -> usize {
        0
    }

    fn dim_y(&self) -> usize {
        self.instance.users
    }

    fn num_long(&self) -> usize {
        self.instance.users + 1
    }

    fn domain_x(&self) -> BoxDomain {
        BoxDomain::empty()
    }

    fn domain_y(&self) -> BoxDomain {
        BoxDomain::uniform(self.instance.users, 0.0, self.instance.p_domain_cap)
    }

    fn sample_g(&self, i: usize, _x: &[f64], y: &[f64], xi: &State) -> GEval {
        let n = self.instance.users;
        let (a, b) = self.split(xi);
        if i == 0 {
            let s = 1.0 + a.iter().zip(y).map(|(ai, pi)| ai * pi).sum::<f64>();
            GEval {
                value: -s.ln(),
                grad_x: vec![],
                grad_y: a.iter().map(|ai| -ai / s).collect(),
            }
        } else if i <= n {
            let mut grad_y = vec![0.0; n];
            grad_y[i - 1] = 1.0;
            GEval { value: y[i - 1] - self.instance.power_caps[i - 1], grad_x: vec![], grad_y }
        } else {
            let value = b.iter().zip(y).map(|(bi, pi)| bi * pi).sum::<f64>()
                - self.instance.interference_cap;
            GEval { value, grad_x: vec![], grad_y: b.to_vec() }
        }
    }

    fn draw_state(&self, rng: &mut ChaCha8Rng) -> State {
        (0..2 * self.instance.users).map(|_| exponential(rng)).collect()
    }
}

/// Result of the ellipsoid method on the SAA dual.
#[derive(Debug, Clone)]
pub struct EllipsoidOutcome {
    /// (λ*, Υ*) with the best dual estimate seen.
    pub multipliers: Vec<f64>,
    /// Achieved primal SAA objective: average −log(1 + aᵀp) of the
    /// closed-form policy at the returned multipliers.
    pub objective: f64,
    /// Best dual estimate d(λ*, Υ*).
    pub dual_value: f64,
    /// SAA long-term constraint values at the returned policy.
    pub constraint_values: Vec<f64>,
    pub iterations: usize,
}

/// SAA dual estimate d(μ) on a fixed sample set and its subgradient. The
/// inner minimization uses the closed-form policy, which is the exact
/// minimizer of the separable bound −(1/N)Σ log(1+N a_i p_i) + Σ den_i p_i,
/// so d is the concave dual of that bound:
/// d = (1/n)Σ_ξ min_p L̃(p; μ, ξ) − Σ μ_i P_i − μ_{N+1} Γ.
fn saa_dual(instance: &CmacInstance, states: &[State], mu: &[f64]) -> (f64, Vec<f64>) {
    let n = instance.users;
    let nf = n as f64;
    let (lam, ups) = (&mu[..n], mu[n]);
    let mut value = 0.0;
    let mut subgrad = vec![0.0; n + 1];
    let count = states.len() as f64;
    for xi in states {
        let (a, b) = (&xi[..n], &xi[n..2 * n]);
        let alloc = cmac_short_term(lam, ups, a, b, 1e9);
        let mut inner = 0.0;
        for i in 0..n {
            inner -= (1.0 + nf * a[i] * alloc.p[i]).ln() / nf;
            inner += (lam[i] + ups * b[i]) * alloc.p[i];
            subgrad[i] += alloc.p[i] / count;
            subgrad[n] += b[i] * alloc.p[i] / count;
        }
        value += inner / count;
    }
    for i in 0..n {
        value -= lam[i] * instance.power_caps[i];
        subgrad[i] -= instance.power_caps[i];
    }
    value -= ups * instance.interference_cap;
    subgrad[n] -= instance.interference_cap;
    (value, subgrad)
}

/// SAA averages of the framework g_i at the closed-form policy for fixed μ:
/// (mean −log(1+aᵀp), [mean p_i − P_i, mean Σb_i p_i − Γ]).
fn saa_policy_values(instance: &CmacInstance, states: &[State], mu: &[f64]) -> (f64, Vec<f64>) {
    let n = instance.users;
    let count = states.len() as f64;
    let mut obj = 0.0;
    let mut cons = vec![0.0; n + 1];
    for xi in states {
        let (a, b) = (&xi[..n], &xi[n..2 * n]);
        let alloc = cmac_short_term(&mu[..n], mu[n], a, b, 1e9);
        let s = 1.0 + a.iter().zip(&alloc.p).map(|(ai, pi)| ai * pi).sum::<f64>();
        obj -= s.ln() / count;
        for i in 0..n {
            cons[i] += alloc.p[i] / count;
            cons[n] += b[i] * alloc.p[i] / count;
        }
    }
    for i in 0..n {
        cons[i] -= instance.power_caps[i];
    }
    cons[n] -= instance.interference_cap;
    (obj, cons)
}

fn ellipsoid_pass(
    instance: &CmacInstance,
    states: &[State],
    radius: f64,
    volume_tol: f64,
    max_iters: usize,
) -> Option<(DVector<f64>, f64, usize)> {
    let dim = instance.users + 1;
    let nf = dim as f64;
    let mut center = DVector::from_element(dim, 1.0);
    let mut shape = DMatrix::<f64>::identity(dim, dim) * (radius * radius);
    // volume ∝ sqrt(det(shape)); the unit-ball constant is irrelevant to a
    // fixed tolerance, so compare sqrt(det) directly
    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut iterations = 0;

    for _ in 0..max_iters {
        iterations += 1;
        let det = shape.determinant();
        if det <= 0.0 {
            return None; // degenerate shape matrix
        }
        if det.sqrt() < volume_tol {
            break;
        }
        // cut direction in the minimization form of the update
        let mut g = DVector::zeros(dim);
        let mut feasible = true;
        for i in 0..dim {
            if center[i] < 0.0 {
                g[i] = -1.0;
                feasible = false;
                break;
            }
        }
        if feasible {
            let mu: Vec<f64> = center.iter().copied().collect();
            let (value, subgrad) = saa_dual(instance, states, &mu);
            if best.as_ref().map_or(true, |(_, b)| value > *b) {
                best = Some((center.clone(), value));
            }
            for i in 0..dim {
                g[i] = -subgrad[i];
            }
        }
        let ag = &shape * &g;
        let denom = (g.dot(&ag)).max(0.0).sqrt();
        if denom < 1e-300 {
            break;
        }
        let gn = &ag / denom;
        center -= &gn / (nf + 1.0);
        let scale = nf * nf / (nf * nf - 1.0);
        shape = (shape - (&gn * gn.transpose()) * (2.0 / (nf + 1.0))) * scale;
        // keep the shape matrix symmetric against round-off drift
        shape = (&shape + shape.transpose()) * 0.5;
    }
    best.map(|(mu, value)| (mu, value, iterations))
}

/// Maximizes the SAA dual over μ ≥ 0 by the ellipsoid method with
/// feasibility cuts on negative coordinates, stopping when the ellipsoid
/// volume contracts below 1e−10; restarts with a larger radius on numerical
/// degeneracy. Returns the best dual point together with the achieved primal
/// SAA objective of its closed-form policy.
pub fn dual_ellipsoid_baseline(
    instance: &CmacInstance,
    states: &[State],
) -> Result<EllipsoidOutcome, Error> {
    if states.is_empty() {
        return Err(Error::InvalidInput("ellipsoid baseline needs samples".into()));
    }
    let mut radius = 50.0;
    for _ in 0..4 {
        if let Some((mu, dual_value, iterations)) =
            ellipsoid_pass(instance, states, radius, 1e-10, 20_000)
        {
            let mu_vec: Vec<f64> = mu.iter().copied().collect();
            let (objective, constraint_values) = saa_policy_values(instance, states, &mu_vec);
            return Ok(EllipsoidOutcome {
                multipliers: mu_vec,
                objective,
                dual_value,
                constraint_values,
                iterations,
            });
        }
        radius *= 10.0;
    }
    Err(Error::NonConvergence("ellipsoid method degenerated at every radius".into()))
}

/// −log(1 + aᵀp): smooth and convex on p ≥ 0.
struct NegLogCapacity {
    a: Vec<f64>,
}

impl SmoothConvex for NegLogCapacity {
    fn eval(&self, z: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let s = 1.0 + self.a.iter().zip(z).map(|(ai, pi)| ai * pi).sum::<f64>();
        let grad = DVector::from_iterator(z.len(), self.a.iter().map(|ai| -ai / s));
        let av = DVector::from_column_slice(&self.a);
        let hess = (&av * av.transpose()) / (s * s);
        (-s.ln(), grad, hess)
    }
}

/// Baseline that enforces p_i ≤ P_i and Σ b_i p_i ≤ Γ on every realization.
/// Returns the SAA average of −log(1 + aᵀp) over the given states.
pub fn short_term_constraint_baseline(
    instance: &CmacInstance,
    states: &[State],
    opts: &IpmOptions,
) -> Result<f64, Error> {
    let n = instance.users;
    let per_state: Result<Vec<f64>, Error> = states
        .par_iter()
        .map(|xi| {
            let (a, b) = (&xi[..n], &xi[n..2 * n]);
            let obj = NegLogCapacity { a: a.to_vec() };
            let interference = Quadratic {
                constant: -instance.interference_cap,
                linear: b.to_vec(),
                diag: vec![0.0; n],
            };
            let domain = BoxDomain::new(vec![0.0; n], instance.power_caps.clone())?;
            match qcqp::minimize(&obj, &[interference], &domain, opts)? {
                ObjectiveOutcome::Optimal(sol) => Ok(obj.eval(&sol.z).0),
                // p = 0 is always strictly feasible (Γ > 0)
                ObjectiveOutcome::Infeasible { alpha } => Err(Error::NonConvergence(format!(
                    "per-state subproblem reported infeasible (alpha = {alpha:.3e})"
                ))),
            }
        })
        .collect();
    let values = per_state?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn instance() -> CmacInstance {
        CmacInstance::default()
    }

    #[test]
    fn sample_g_values_and_gradients() {
        let p = cmac_problem(instance());
        let xi = vec![2.0, 1.0, 1.0, 1.0]; // a = (2,1), b = (1,1)
        let y = [0.25, 0.0];
        let g0 = p.sample_g(0, &[], &y, &xi);
        assert!((g0.value + 1.5_f64.ln()).abs() < 1e-12);
        assert!((g0.grad_y[0] + 2.0 / 1.5).abs() < 1e-12);
        assert!((g0.grad_y[1] + 1.0 / 1.5).abs() < 1e-12);
        let g1 = p.sample_g(1, &[], &y, &xi);
        assert!((g1.value - (0.25 - 10.0_f64.powf(0.5))).abs() < 1e-12);
        assert_eq!(g1.grad_y, vec![1.0, 0.0]);
        let g3 = p.sample_g(3, &[], &y, &xi);
        assert!((g3.value - (0.25 - 0.5)).abs() < 1e-12);
        assert_eq!(g3.grad_y, vec![1.0, 1.0]);
    }

    #[test]
    fn ellipsoid_reaches_near_slack_solution() {
        // at the dual optimum, complementary slackness of the surrogate
        // problem: μ_i · (SAA constraint value) ≈ 0 for every constraint
        let inst = instance();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = cmac_problem(inst.clone());
        let states: Vec<State> = (0..300).map(|_| p.draw_state(&mut rng)).collect();
        let oracle = dual_ellipsoid_baseline(&inst, &states).unwrap();
        assert!(oracle.multipliers.iter().all(|&m| m >= 0.0));
        assert!(oracle.objective < 0.0, "positive capacity expected");
        for (mu, cons) in oracle.multipliers.iter().zip(&oracle.constraint_values) {
            assert!((mu * cons).abs() < 1e-2, "slackness {mu} * {cons}");
        }
        // identity: d = surrogate objective + μᵀ(constraint values), and the
        // separable surrogate upper-bounds the true objective
        let comp: f64 = oracle
            .multipliers
            .iter()
            .zip(&oracle.constraint_values)
            .map(|(m, c)| m * c)
            .sum();
        assert!(oracle.dual_value >= oracle.objective + comp - 1e-9);
    }

    #[test]
    fn ellipsoid_dual_beats_nearby_points() {
        // the returned multipliers should (nearly) maximize the SAA dual
        let inst = instance();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = cmac_problem(inst.clone());
        let states: Vec<State> = (0..200).map(|_| p.draw_state(&mut rng)).collect();
        let oracle = dual_ellipsoid_baseline(&inst, &states).unwrap();
        let (dstar, _) = saa_dual(&inst, &states, &oracle.multipliers);
        assert!((dstar - oracle.dual_value).abs() < 1e-12);
        for delta in [[0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, 0.0, 0.1]] {
            for sign in [1.0, -1.0] {
                let probe: Vec<f64> = oracle
                    .multipliers
                    .iter()
                    .zip(&delta)
                    .map(|(m, d)| (m + sign * d).max(0.0))
                    .collect();
                let (dp, _) = saa_dual(&inst, &states, &probe);
                assert!(dp <= dstar + 1e-6, "probe {probe:?} improved the dual");
            }
        }
    }

    #[test]
    fn dual_concavity_spot_check() {
        let inst = instance();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = cmac_problem(inst.clone());
        let states: Vec<State> = (0..50).map(|_| p.draw_state(&mut rng)).collect();
        let mu0 = [0.2, 0.4, 0.3];
        let mu1 = [0.6, 0.1, 0.8];
        let mid: Vec<f64> = mu0.iter().zip(&mu1).map(|(a, b)| 0.5 * (a + b)).collect();
        let (d0, _) = saa_dual(&inst, &states, &mu0);
        let (d1, _) = saa_dual(&inst, &states, &mu1);
        let (dm, _) = saa_dual(&inst, &states, &mid);
        assert!(dm >= 0.5 * (d0 + d1) - 1e-12);
    }

    #[test]
    fn subgradient_upper_bounds_dual() {
        // concavity: d(ν) ≤ d(μ) + s(μ)ᵀ(ν − μ)
        let inst = instance();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = cmac_problem(inst.clone());
        let states: Vec<State> = (0..30).map(|_| p.draw_state(&mut rng)).collect();
        let mu = [0.5, 0.3, 0.7];
        let (dmu, s) = saa_dual(&inst, &states, &mu);
        for nu in [[0.1, 0.9, 0.2], [1.5, 0.05, 1.0], [0.5, 0.3, 0.1]] {
            let (dnu, _) = saa_dual(&inst, &states, &nu);
            let lin: f64 = s.iter().zip(nu.iter().zip(&mu)).map(|(si, (n, m))| si * (n - m)).sum();
            assert!(dnu <= dmu + lin + 1e-10);
        }
    }

    #[test]
    fn baseline_respects_caps() {
        let inst = instance();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = cmac_problem(inst.clone());
        let states: Vec<State> = (0..5).map(|_| p.draw_state(&mut rng)).collect();
        let value =
            short_term_constraint_baseline(&inst, &states, &IpmOptions::default()).unwrap();
        assert!(value.is_finite());
        assert!(value <= 0.0); // p = 0 gives 0; the optimum can only improve
    }
}
