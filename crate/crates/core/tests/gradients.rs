//! Reverse-mode gradients through every unrolled solver against the central
//! finite-difference oracle.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pdd_ssca::apps::{thp_problem, ThpInstance};
use pdd_ssca::problem::{BoxDomain, GEval, HEval, ProblemDefinition, SecondOrder, State};
use pdd_ssca::shortterm::{CmacClosedForm, GpSolver, GpStepRule, MmSolver, WmmseSolver};
use pdd_ssca::{fd_oracle, grad_through, max_relative_error, run_short_term, IpmOptions};
use pdd_ssca::apps::cmac_problem;
use pdd_ssca::apps::CmacInstance;

/// Dense quadratic test problem with one affine short-term constraint:
///   g_i = ½ yᵀD_i y + yᵀ(A_i x + c_i(ξ)) + b_iᵀx,
///   h_1 = 1ᵀy − r.
struct QuadProblem {
    /// Sum-constraint offset; large ⇒ inactive, negative ⇒ strongly active.
    r: f64,
}

const DY: usize = 3;
const DX: usize = 2;
const M: usize = 2;

fn dmat(i: usize) -> [[f64; DY]; DY] {
    match i {
        0 => [[2.0, 0.5, 0.0], [0.5, 3.0, 0.2], [0.0, 0.2, 1.0]],
        1 => [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]],
        _ => [[0.5, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 0.5]],
    }
}

fn amat(i: usize) -> [[f64; DX]; DY] {
    match i {
        0 => [[1.0, 0.0], [0.0, 1.0], [1.0, -1.0]],
        1 => [[0.0, 1.0], [1.0, 0.0], [-1.0, 1.0]],
        _ => [[1.0, 1.0], [0.0, -1.0], [1.0, 0.0]],
    }
}

fn cvec(i: usize, xi: &State) -> [f64; DY] {
    match i {
        0 => [0.3 + xi[0], -0.2, 0.1 - xi[0]],
        1 => [-0.1, 0.4 + xi[1], 0.2],
        _ => [0.05, -0.15, 0.3 + xi[0]],
    }
}

fn bvec(i: usize) -> [f64; DX] {
    match i {
        0 => [0.5, -0.3],
        1 => [0.2, 0.1],
        _ => [-0.4, 0.25],
    }
}

impl ProblemDefinition for QuadProblem {
    fn dim_x(&self) -> usize {
        DX
    }
    fn dim_y(&self) -> usize {
        DY
    }
    fn num_long(&self) -> usize {
        M
    }
    fn num_short(&self) -> usize {
        1
    }
    fn domain_x(&self) -> BoxDomain {
        BoxDomain::uniform(DX, -2.0, 2.0)
    }
    fn domain_y(&self) -> BoxDomain {
        BoxDomain::uniform(DY, -5.0, 5.0)
    }
    fn sample_g(&self, i: usize, x: &[f64], y: &[f64], xi: &State) -> GEval {
        let (d, a, c, b) = (dmat(i), amat(i), cvec(i, xi), bvec(i));
        let mut value = 0.0;
        let mut grad_y = vec![0.0; DY];
        for r in 0..DY {
            let mut lin = c[r];
            for cc in 0..DX {
                lin += a[r][cc] * x[cc];
            }
            let mut dy = 0.0;
            for cc in 0..DY {
                dy += d[r][cc] * y[cc];
            }
            value += 0.5 * y[r] * dy + y[r] * lin;
            grad_y[r] = dy + lin;
        }
        let mut grad_x = vec![0.0; DX];
        for cc in 0..DX {
            value += b[cc] * x[cc];
            grad_x[cc] = b[cc] + (0..DY).map(|r| a[r][cc] * y[r]).sum::<f64>();
        }
        GEval { value, grad_x, grad_y }
    }
    fn sample_h(&self, _j: usize, y: &[f64], _xi: &State) -> HEval {
        HEval { value: y.iter().sum::<f64>() - self.r, grad_y: vec![1.0; DY] }
    }
    fn draw_state(&self, _rng: &mut ChaCha8Rng) -> State {
        vec![0.4, -0.7]
    }
}

impl SecondOrder for QuadProblem {
    fn g_hvp(&self, i: usize, _x: &[f64], _y: &[f64], _xi: &State, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (d, a) = (dmat(i), amat(i));
        let hy = (0..DY).map(|r| (0..DY).map(|c| d[r][c] * v[c]).sum()).collect();
        let hx = (0..DX).map(|c| (0..DY).map(|r| a[r][c] * v[r]).sum()).collect();
        (hy, hx)
    }
}

fn check_all_constraints(
    problem: &dyn ProblemDefinition,
    solver: &dyn pdd_ssca::ShortTermSolver,
    x: &[f64],
    lambda: &[f64],
    xi: &State,
    tol: f64,
    label: &str,
) {
    let (result, tape) = run_short_term(solver, problem, x, lambda, xi).unwrap();
    for i in 0..=problem.num_long() {
        let (gx, gl, _) = grad_through(problem, i, x, lambda, xi, &result, &tape).unwrap();
        let (fx, fl) = fd_oracle(problem, i, x, lambda, xi, solver).unwrap();
        let ex = max_relative_error(&gx, &fx, 1e-8);
        let el = max_relative_error(&gl, &fl, 1e-8);
        assert!(ex <= tol, "{label} g_{i} d/dx err {ex:.3e}\n got {gx:?}\n want {fx:?}");
        assert!(el <= tol, "{label} g_{i} d/dλ err {el:.3e}\n got {gl:?}\n want {fl:?}");
    }
}

#[test]
fn gp_matches_fd_inactive_constraint() {
    let p = Arc::new(QuadProblem { r: 50.0 });
    let solver = GpSolver::new(Arc::clone(&p), 4, GpStepRule::Diminishing { alpha0: Some(0.2) });
    let x = [0.3, -0.8];
    let lambda = [0.6, 1.2];
    let xi = vec![0.4, -0.7];
    check_all_constraints(p.as_ref(), &solver, &x, &lambda, &xi, 1e-5, "gp-inactive");
}

#[test]
fn gp_matches_fd_active_constraint() {
    let p = Arc::new(QuadProblem { r: -2.5 });
    let solver = GpSolver::new(Arc::clone(&p), 4, GpStepRule::Diminishing { alpha0: Some(0.2) });
    let x = [0.3, -0.8];
    let lambda = [0.6, 1.2];
    let xi = vec![0.4, -0.7];
    check_all_constraints(p.as_ref(), &solver, &x, &lambda, &xi, 1e-5, "gp-active");
}

/// Same quadratic data but with the step tail appended to x.
struct TrainableQuad {
    inner: QuadProblem,
    layers: usize,
}

impl ProblemDefinition for TrainableQuad {
    fn dim_x(&self) -> usize {
        DX + self.layers * DY
    }
    fn dim_y(&self) -> usize {
        DY
    }
    fn num_long(&self) -> usize {
        M
    }
    fn num_short(&self) -> usize {
        1
    }
    fn domain_x(&self) -> BoxDomain {
        BoxDomain::uniform(DX, -2.0, 2.0).concat(&BoxDomain::uniform(self.layers * DY, 1e-3, 1.0))
    }
    fn domain_y(&self) -> BoxDomain {
        self.inner.domain_y()
    }
    fn sample_g(&self, i: usize, x: &[f64], y: &[f64], xi: &State) -> GEval {
        let mut eval = self.inner.sample_g(i, &x[..DX], y, xi);
        eval.grad_x.resize(self.dim_x(), 0.0);
        eval
    }
    fn sample_h(&self, j: usize, y: &[f64], xi: &State) -> HEval {
        self.inner.sample_h(j, y, xi)
    }
    fn draw_state(&self, rng: &mut ChaCha8Rng) -> State {
        self.inner.draw_state(rng)
    }
}

impl SecondOrder for TrainableQuad {
    fn g_hvp(&self, i: usize, x: &[f64], y: &[f64], xi: &State, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (hy, mut hx) = self.inner.g_hvp(i, &x[..DX], y, xi, v);
        hx.resize(self.dim_x(), 0.0);
        (hy, hx)
    }
}

#[test]
fn gp_trainable_steps_match_fd() {
    let layers = 3;
    let p = Arc::new(TrainableQuad { inner: QuadProblem { r: 50.0 }, layers });
    let solver = GpSolver::new(Arc::clone(&p), layers, GpStepRule::Trainable { base_dim_x: DX });
    let mut x = vec![0.3, -0.8];
    for j in 0..layers * DY {
        x.push(0.08 + 0.015 * j as f64);
    }
    let lambda = [0.6, 1.2];
    let xi = vec![0.4, -0.7];
    check_all_constraints(p.as_ref(), &solver, &x, &lambda, &xi, 1e-5, "gp-trainable");
}

#[test]
fn mm_matches_fd() {
    let tight = IpmOptions { gap_tol: 1e-11, ..IpmOptions::default() };
    for (r, label) in [(50.0, "mm-inactive"), (-2.5, "mm-active")] {
        let p = Arc::new(QuadProblem { r });
        let solver =
            MmSolver::new(Arc::clone(&p), 3, 1.0, vec![0.0]).with_ipm(tight.clone());
        let x = [0.3, -0.8];
        let lambda = [0.6, 1.2];
        let xi = vec![0.4, -0.7];
        check_all_constraints(p.as_ref(), &solver, &x, &lambda, &xi, 2e-3, label);
    }
}

#[test]
fn cmac_matches_fd() {
    let p = cmac_problem(CmacInstance::default());
    let solver = CmacClosedForm { users: 2, p_cap: 1e6 };
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10 {
        let xi = p.draw_state(&mut rng);
        let lambda = [0.5, 0.3, 0.4];
        check_all_constraints(&p, &solver, &[], &lambda, &xi, 1e-6, "cmac");
    }
}

#[test]
fn wmmse_matches_fd() {
    let inst = ThpInstance {
        antennas: 4,
        rf_chains: 2,
        users: 2,
        paths: 3,
        rate_targets: vec![1.0, 0.8],
    };
    let p = thp_problem(inst.clone());
    let solver = WmmseSolver {
        antennas: inst.antennas,
        rf_chains: inst.rf_chains,
        users: inst.users,
        layers: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // generic phases: an arithmetic progression across rows would make the
    // analog columns parallel and F rank one
    let x: Vec<f64> = (0..p.dim_x())
        .map(|_| rand::Rng::gen::<f64>(&mut rng) * 6.28 - 3.14)
        .collect();
    let lambda = [0.7, 1.3];
    for _ in 0..3 {
        let xi = p.draw_state(&mut rng);
        check_all_constraints(&p, &solver, &x, &lambda, &xi, 1e-5, "wmmse");
    }
}

#[test]
fn tape_replay_is_bitwise_stable() {
    let p = Arc::new(QuadProblem { r: -2.5 });
    let solver = GpSolver::new(Arc::clone(&p), 5, GpStepRule::Diminishing { alpha0: Some(0.2) });
    let x = [0.3, -0.8];
    let lambda = [0.6, 1.2];
    let xi = vec![0.4, -0.7];
    let (r1, t1) = run_short_term(&solver, p.as_ref(), &x, &lambda, &xi).unwrap();
    let (r2, t2) = run_short_term(&solver, p.as_ref(), &x, &lambda, &xi).unwrap();
    assert_eq!(r1.y, r2.y);
    let (gx1, gl1, v1) = grad_through(p.as_ref(), 0, &x, &lambda, &xi, &r1, &t1).unwrap();
    let (gx2, gl2, v2) = grad_through(p.as_ref(), 0, &x, &lambda, &xi, &r2, &t2).unwrap();
    assert_eq!(gx1, gx2);
    assert_eq!(gl1, gl2);
    assert_eq!(v1, v2);
}
