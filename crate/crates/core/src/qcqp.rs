//! Small dense convex solver: log-barrier interior point over a box plus
//! convex quadratic constraints with diagonal curvature. Newton inner steps
//! with backtracking; phase I is the epigraph feasibility problem itself.

use crate::error::Error;
use crate::problem::BoxDomain;
use nalgebra::{DMatrix, DVector};

/// q(z) = constant + linearᵀz + Σ_k diag_k z_k²  (diag entrywise ≥ 0).
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub constant: f64,
    pub linear: Vec<f64>,
    pub diag: Vec<f64>,
}

impl Quadratic {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        let mut v = self.constant;
        for k in 0..z.len() {
            v += self.linear[k] * z[k] + self.diag[k] * z[k] * z[k];
        }
        v
    }

    pub fn grad(&self, z: &[f64]) -> Vec<f64> {
        (0..z.len()).map(|k| self.linear[k] + 2.0 * self.diag[k] * z[k]).collect()
    }
}

/// Smooth convex objective with dense Hessian, for the interior-point solver.
pub trait SmoothConvex: Sync {
    fn eval(&self, z: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>);
}

impl SmoothConvex for Quadratic {
    fn eval(&self, z: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n = z.len();
        let mut hess = DMatrix::zeros(n, n);
        for k in 0..n {
            hess[(k, k)] = 2.0 * self.diag[k];
        }
        (self.value(z), DVector::from_vec(self.grad(z)), hess)
    }
}

#[derive(Debug, Clone)]
pub struct IpmOptions {
    /// Duality-gap target (m_ineq / t below this ends the barrier loop).
    pub gap_tol: f64,
    /// Phase-I margin: achieved max-constraint above this is Infeasible.
    pub phase1_margin: f64,
    pub max_newton: usize,
    pub barrier_mu: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions { gap_tol: 1e-8, phase1_margin: 1e-9, max_newton: 400, barrier_mu: 10.0 }
    }
}

#[derive(Debug, Clone)]
pub struct IpmSolution {
    pub z: Vec<f64>,
    /// One multiplier per quadratic constraint (box multipliers folded away).
    pub multipliers: Vec<f64>,
    /// Projected-gradient residual of the KKT system at z.
    pub kkt_residual: f64,
}

#[derive(Debug, Clone)]
pub enum ObjectiveOutcome {
    Optimal(IpmSolution),
    /// Phase I certified max_i min q_i > 0; alpha is the achieved minimum.
    Infeasible { alpha: f64 },
}

const FEAS_STEP_FRACTION: f64 = 0.99;
const ARMIJO_C: f64 = 0.01;
const BACKTRACK: f64 = 0.5;
const NEWTON_DECREMENT_TOL: f64 = 1e-12;
// below this decrement Newton is in its quadratic-convergence region; the
// barrier value is too cancellation-noisy there for an Armijo test
const PURE_NEWTON_THRESHOLD: f64 = 1e-6;
const PURE_NEWTON_STEPS: usize = 8;

fn solve_spd(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = h.clone().cholesky() {
        return Some(chol.solve(g));
    }
    let n = h.nrows();
    let mut hr = h.clone();
    for k in 0..n {
        hr[(k, k)] += 1e-10 * (1.0 + hr[(k, k)].abs());
    }
    hr.lu().solve(g)
}

/// Barrier value/grad/hess of −Σ log(−q_i(z)) − Σ log(z−l) − Σ log(u−z),
/// plus t·f0. Returns None when z is not strictly feasible.
struct BarrierEval {
    phi: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

fn eval_barrier(
    t: f64,
    obj: &dyn SmoothConvex,
    constraints: &[Quadratic],
    relax: f64,
    domain: &BoxDomain,
    z: &[f64],
) -> Option<BarrierEval> {
    let n = z.len();
    let (f0, g0, h0) = obj.eval(z);
    let mut phi = t * f0;
    let mut grad = g0 * t;
    let mut hess = h0 * t;
    for q in constraints {
        let s = relax - q.value(z); // slack, must stay > 0
        if s <= 0.0 {
            return None;
        }
        phi -= s.ln();
        let gq = DVector::from_vec(q.grad(z));
        grad += &gq / s;
        // ∇q∇qᵀ/s² + ∇²q/s
        hess += &gq * gq.transpose() / (s * s);
        for k in 0..n {
            hess[(k, k)] += 2.0 * q.diag[k] / s;
        }
    }
    for k in 0..n {
        let sl = z[k] - domain.lower()[k];
        let su = domain.upper()[k] - z[k];
        if sl <= 0.0 || su <= 0.0 {
            return None;
        }
        phi -= sl.ln() + su.ln();
        grad[k] += 1.0 / su - 1.0 / sl;
        hess[(k, k)] += 1.0 / (sl * sl) + 1.0 / (su * su);
    }
    Some(BarrierEval { phi, grad, hess })
}

fn newton_center(
    t: f64,
    obj: &dyn SmoothConvex,
    constraints: &[Quadratic],
    relax: f64,
    domain: &BoxDomain,
    z: &mut Vec<f64>,
    opts: &IpmOptions,
) -> Result<(), Error> {
    let mut pure_steps = 0;
    for _ in 0..opts.max_newton {
        let be = eval_barrier(t, obj, constraints, relax, domain, z)
            .ok_or_else(|| Error::NonConvergence("barrier iterate left the domain".into()))?;
        let dir = solve_spd(&be.hess, &(-&be.grad))
            .ok_or_else(|| Error::NonConvergence("singular Newton system".into()))?;
        let decrement = -be.grad.dot(&dir);
        // relative to |φ|: below this, Armijo progress is under the
        // floating-point resolution of the barrier value
        if decrement * 0.5 < NEWTON_DECREMENT_TOL * (1.0 + be.phi.abs()) {
            return Ok(());
        }
        // largest step keeping the iterate strictly inside the domain
        let mut step = 1.0_f64;
        loop {
            let cand: Vec<f64> = z.iter().zip(dir.iter()).map(|(&a, &d)| a + step * d).collect();
            if eval_barrier(t, obj, constraints, relax, domain, &cand).is_some() {
                break;
            }
            step *= BACKTRACK;
            if step < 1e-16 {
                return Ok(()); // pinned against the boundary; accept current point
            }
        }
        step *= FEAS_STEP_FRACTION;
        // both thresholds scale with |φ|: with huge barrier values the Armijo
        // test is noise-dominated long before the decrement is absolutely small
        if decrement < PURE_NEWTON_THRESHOLD {
            pure_steps += 1;
            if pure_steps > PURE_NEWTON_STEPS {
                return Ok(());
            }
            *z = z.iter().zip(dir.iter()).map(|(&a, &d)| a + step * d).collect();
            continue;
        }
        // Armijo backtracking on the barrier objective
        let mut accepted = false;
        while step >= 1e-16 {
            let cand: Vec<f64> = z.iter().zip(dir.iter()).map(|(&a, &d)| a + step * d).collect();
            if let Some(cb) = eval_barrier(t, obj, constraints, relax, domain, &cand) {
                if cb.phi <= be.phi - ARMIJO_C * step * decrement {
                    *z = cand;
                    accepted = true;
                    break;
                }
            }
            step *= BACKTRACK;
        }
        if !accepted {
            return Ok(()); // no further progress possible at this centering
        }
    }
    // iteration cap: accept the approximate center. This happens on extreme
    // coefficient scales where every Newton step is feasibility-capped and the
    // minimizer is a long crawl away; the caller's KKT residual still reports
    // the achieved accuracy.
    Ok(())
}

fn projected_kkt_residual(
    obj: &dyn SmoothConvex,
    constraints: &[Quadratic],
    multipliers: &[f64],
    domain: &BoxDomain,
    z: &[f64],
) -> f64 {
    let (_, g0, _) = obj.eval(z);
    let mut g: Vec<f64> = g0.iter().copied().collect();
    for (q, &nu) in constraints.iter().zip(multipliers) {
        for (gk, dk) in g.iter_mut().zip(q.grad(z)) {
            *gk += nu * dk;
        }
    }
    let stepped: Vec<f64> = z.iter().zip(&g).map(|(&a, &d)| a - d).collect();
    let proj = domain.project(&stepped);
    z.iter().zip(&proj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// min f0(z) s.t. q_i(z) ≤ 0, z ∈ box. Runs phase I first when constraints
/// are present; Infeasible when phase I certifies a positive minimum.
pub fn minimize(
    obj: &dyn SmoothConvex,
    constraints: &[Quadratic],
    domain: &BoxDomain,
    opts: &IpmOptions,
) -> Result<ObjectiveOutcome, Error> {
    minimize_from(obj, constraints, domain, opts, None)
}

/// Pull a candidate start strictly inside the box (per-coordinate margin).
fn interior_point(domain: &BoxDomain, warm: &[f64]) -> Vec<f64> {
    warm.iter()
        .enumerate()
        .map(|(k, &v)| {
            let (l, u) = (domain.lower()[k], domain.upper()[k]);
            let margin = 1e-6 * (u - l);
            v.clamp(l + margin, u - margin)
        })
        .collect()
}

/// `minimize` with a warm start; the point is clamped strictly inside the box
/// before use. A start near the solution keeps the epigraph lift of phase I
/// small, which matters when the box is many orders of magnitude wider than
/// the active region.
pub fn minimize_from(
    obj: &dyn SmoothConvex,
    constraints: &[Quadratic],
    domain: &BoxDomain,
    opts: &IpmOptions,
    warm: Option<&[f64]>,
) -> Result<ObjectiveOutcome, Error> {
    let n = domain.dim();
    let (mut z, relax) = if constraints.is_empty() {
        (warm.map_or_else(|| domain.center(), |w| interior_point(domain, w)), 0.0)
    } else {
        let (z0, alpha, _) = minimize_max_from(constraints, domain, opts, warm)?;
        if alpha > opts.phase1_margin {
            return Ok(ObjectiveOutcome::Infeasible { alpha });
        }
        // strict interior margin for the barrier; negligible vs. gap_tol
        let relax = if alpha < -1e-10 { 0.0 } else { alpha + 1e-10 };
        (z0, relax)
    };
    let n_ineq = (constraints.len() + 2 * n) as f64;
    let mut t = 1.0;
    let mut multipliers = vec![0.0; constraints.len()];
    loop {
        newton_center(t, obj, constraints, relax, domain, &mut z, opts)?;
        for (nu, q) in multipliers.iter_mut().zip(constraints) {
            *nu = 1.0 / (t * (relax - q.value(&z)).max(1e-300));
        }
        if n_ineq / t < opts.gap_tol {
            break;
        }
        t *= opts.barrier_mu;
    }
    let kkt_residual = projected_kkt_residual(obj, constraints, &multipliers, domain, &z);
    Ok(ObjectiveOutcome::Optimal(IpmSolution { z, multipliers, kkt_residual }))
}

/// Epigraph objective t·α over variables (z, α); barrier handles α − q_i > 0
/// and the z box. Used for both phase I and the feasibility update.
struct EpigraphObjective;

impl SmoothConvex for EpigraphObjective {
    fn eval(&self, z: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n = z.len();
        let mut grad = DVector::zeros(n);
        grad[n - 1] = 1.0;
        (z[n - 1], grad, DMatrix::zeros(n, n))
    }
}

/// min_z max_i q_i(z) over the box, via min α s.t. q_i(z) ≤ α.
/// Returns (argmin z, achieved α, multipliers summing to ≈ 1).
pub fn minimize_max(
    constraints: &[Quadratic],
    domain: &BoxDomain,
    opts: &IpmOptions,
) -> Result<(Vec<f64>, f64, Vec<f64>), Error> {
    minimize_max_from(constraints, domain, opts, None)
}

/// `minimize_max` with a warm start (clamped strictly inside the box).
pub fn minimize_max_from(
    constraints: &[Quadratic],
    domain: &BoxDomain,
    opts: &IpmOptions,
    warm: Option<&[f64]>,
) -> Result<(Vec<f64>, f64, Vec<f64>), Error> {
    if constraints.is_empty() {
        return Err(Error::InvalidInput("minimize_max needs at least one constraint".into()));
    }
    let n = domain.dim();
    let z0 = warm.map_or_else(|| domain.center(), |w| interior_point(domain, w));
    let alpha0 =
        constraints.iter().map(|q| q.value(&z0)).fold(f64::NEG_INFINITY, f64::max) + 1.0;
    // lift to (z, α): constraints q_i(z) − α ≤ 0, α in a generous box
    let lifted: Vec<Quadratic> = constraints
        .iter()
        .map(|q| {
            let mut linear = q.linear.clone();
            linear.push(-1.0);
            let mut diag = q.diag.clone();
            diag.push(0.0);
            Quadratic { constant: q.constant, linear, diag }
        })
        .collect();
    let alpha_lo = constraints
        .iter()
        .map(|q| lower_bound(q, domain))
        .fold(f64::INFINITY, f64::min)
        .min(alpha0)
        - 1.0;
    let alpha_box = BoxDomain::new(vec![alpha_lo], vec![alpha0 + 1.0]).expect("alpha box");
    let lifted_domain = domain.concat(&alpha_box);
    let mut z: Vec<f64> = z0;
    z.push(alpha0);

    let n_ineq = (lifted.len() + 2 * (n + 1)) as f64;
    let mut t = 1.0;
    let mut multipliers = vec![0.0; lifted.len()];
    loop {
        newton_center(t, &EpigraphObjective, &lifted, 0.0, &lifted_domain, &mut z, opts)?;
        for (nu, q) in multipliers.iter_mut().zip(&lifted) {
            *nu = 1.0 / (t * (-q.value(&z)).max(1e-300));
        }
        if n_ineq / t < opts.gap_tol {
            break;
        }
        t *= opts.barrier_mu;
    }
    let alpha = z.pop().expect("epigraph variable");
    // report the true achieved max, not the relaxed epigraph value
    let achieved = constraints.iter().map(|q| q.value(&z)).fold(f64::NEG_INFINITY, f64::max);
    Ok((z, achieved.min(alpha), multipliers))
}

/// Crude lower bound of q over the box (separable minimization).
fn lower_bound(q: &Quadratic, domain: &BoxDomain) -> f64 {
    let mut v = q.constant;
    for k in 0..q.dim() {
        let (l, u) = (domain.lower()[k], domain.upper()[k]);
        let f = |z: f64| q.linear[k] * z + q.diag[k] * z * z;
        let mut best = f(l).min(f(u));
        if q.diag[k] > 0.0 {
            let zs = -q.linear[k] / (2.0 * q.diag[k]);
            if zs > l && zs < u {
                best = best.min(f(zs));
            }
        }
        v += best;
    }
    v
}
