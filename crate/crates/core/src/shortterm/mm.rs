//! Majorize-minimize layer: at y′, minimize the proximal-linearized surrogate
//!   u_s(y) = g_s(y′) + ∇g_s(y′)ᵀ(y−y′) + τ_s‖y−y′‖²
//! subject to the linearized constraints
//!   u_i(y) = h_i(y′) + ∇h_i(y′)ᵀ(y−y′) + τ_si‖y−y′‖² ≤ 0
//! and the box. The subproblem is strongly convex, solved by the interior
//! point; when its constraint set is empty the layer falls back to a pure
//! feasibility step min max_i u_i.
//!
//! The reverse pass differentiates the subproblem's frozen active-set KKT
//! system implicitly; fallback (feasibility) layers propagate zero adjoints
//! and are flagged.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::problem::{short_term_objective, SecondOrder, State};
use crate::qcqp::{self, IpmOptions, ObjectiveOutcome, Quadratic};
use crate::shortterm::ShortTermSolver;
use crate::unroll::{AdjointSeeds, ConstantAdjoint, LayerAdjoint};

pub struct MmSolver<P: SecondOrder> {
    problem: Arc<P>,
    layers: usize,
    tau_s: f64,
    tau_si: Vec<f64>,
    ipm: IpmOptions,
}

impl<P: SecondOrder> MmSolver<P> {
    pub fn new(problem: Arc<P>, layers: usize, tau_s: f64, tau_si: Vec<f64>) -> Self {
        assert_eq!(tau_si.len(), problem.num_short(), "one tau per short-term constraint");
        assert!(tau_s > 0.0);
        MmSolver { problem, layers, tau_s, tau_si, ipm: IpmOptions::default() }
    }

    /// Replaces the subproblem solver options (e.g. a tighter gap).
    pub fn with_ipm(mut self, ipm: IpmOptions) -> Self {
        self.ipm = ipm;
        self
    }

    /// Subproblem pieces at the expansion point, in the shifted variable
    /// z = y − y′: objective and constraint quadratics plus the shifted box.
    fn subproblem(
        &self,
        y_prev: &[f64],
        x: &[f64],
        lambda: &[f64],
        xi: &State,
    ) -> (Quadratic, Vec<Quadratic>, crate::problem::BoxDomain) {
        let p = self.problem.as_ref();
        let n_y = p.dim_y();
        let (_, gs_grad) = short_term_objective(p, x, lambda, y_prev, xi);
        let obj = Quadratic { constant: 0.0, linear: gs_grad, diag: vec![self.tau_s; n_y] };
        let cons: Vec<Quadratic> = (1..=p.num_short())
            .map(|j| {
                let h = p.sample_h(j, y_prev, xi);
                Quadratic {
                    constant: h.value,
                    linear: h.grad_y,
                    diag: vec![self.tau_si[j - 1]; n_y],
                }
            })
            .collect();
        let domain = p.domain_y();
        let lower: Vec<f64> =
            domain.lower().iter().zip(y_prev).map(|(l, y)| l - y).collect();
        let upper: Vec<f64> =
            domain.upper().iter().zip(y_prev).map(|(u, y)| u - y).collect();
        let shifted =
            crate::problem::BoxDomain::new(lower, upper).expect("shifted box of interior point");
        (obj, cons, shifted)
    }
}

const NU_ACTIVE_TOL: f64 = 1e-7;
const FACE_TOL: f64 = 1e-9;

struct MmAdjoint<P: SecondOrder> {
    problem: Arc<P>,
    x: Vec<f64>,
    lambda: Vec<f64>,
    xi: State,
    y_prev: Vec<f64>,
    /// Subproblem solution in the shifted variable.
    z: Vec<f64>,
    /// Post-threshold multipliers of the constraint quadratics.
    nu: Vec<f64>,
    tau_s: f64,
    tau_si: Vec<f64>,
    /// Coordinates of z pinned at the shifted box faces.
    box_active: Vec<bool>,
    /// Feasibility-fallback layers carry no adjoint.
    fallback: bool,
}

impl<P: SecondOrder> LayerAdjoint for MmAdjoint<P> {
    fn pull_back(&self, cotangent: &[f64]) -> AdjointSeeds {
        let p = self.problem.as_ref();
        let (n_y, n_x, m) = (p.dim_y(), p.dim_x(), p.num_long());
        if self.fallback {
            return AdjointSeeds::zeros(n_y, n_x, m);
        }
        let free: Vec<usize> =
            (0..n_y).filter(|&k| !self.box_active[k]).collect();
        let active: Vec<usize> =
            (0..self.nu.len()).filter(|&i| self.nu[i] > NU_ACTIVE_TOL).collect();
        let nf = free.len();
        let na = active.len();

        // direct term of y = y′ + z: pinned coordinates cancel exactly
        let mut bar_y_prev: Vec<f64> = cotangent
            .iter()
            .zip(&self.box_active)
            .map(|(&c, &pinned)| if pinned { 0.0 } else { c })
            .collect();
        let mut bar_x = vec![0.0; n_x];
        let mut bar_lambda = vec![0.0; m];
        if nf == 0 {
            return AdjointSeeds { y_prev: bar_y_prev, x: bar_x, lambda: bar_lambda };
        }

        // constraint data at the expansion point
        let h: Vec<crate::problem::HEval> =
            (1..=p.num_short()).map(|j| p.sample_h(j, &self.y_prev, &self.xi)).collect();
        // c_i = ∇h_i(y′) + 2τ_si z — the subproblem constraint gradients
        let cgrad = |i: usize| -> Vec<f64> {
            h[i].grad_y
                .iter()
                .zip(&self.z)
                .map(|(g, z)| g + 2.0 * self.tau_si[i] * z)
                .collect::<Vec<f64>>()
        };

        // KKT system of the frozen active set, unknowns (z_free, ν_active):
        //   [ diag(2τ_s + Σ 2τ_si ν_i)   C_free ] s = [cotangent_free; 0]
        //   [ C_freeᵀ                    0      ]
        let dim = nf + na;
        let mut kkt = DMatrix::zeros(dim, dim);
        let curv = 2.0 * self.tau_s
            + active.iter().map(|&i| 2.0 * self.tau_si[i] * self.nu[i]).sum::<f64>();
        for (r, _) in free.iter().enumerate() {
            kkt[(r, r)] = curv;
        }
        for (col, &i) in active.iter().enumerate() {
            let ci = cgrad(i);
            for (r, &k) in free.iter().enumerate() {
                kkt[(r, nf + col)] = ci[k];
                kkt[(nf + col, r)] = ci[k];
            }
        }
        let mut rhs = DVector::zeros(dim);
        for (r, &k) in free.iter().enumerate() {
            rhs[r] = cotangent[k];
        }
        let s = match kkt.lu().solve(&rhs) {
            Some(s) => s,
            None => return AdjointSeeds { y_prev: bar_y_prev, x: bar_x, lambda: bar_lambda },
        };
        // embed the z_free block back into full coordinates
        let mut s1 = vec![0.0; n_y];
        for (r, &k) in free.iter().enumerate() {
            s1[k] = s[r];
        }

        // G1 chain: ∂G1/∂y′ = H_yy g_s + Σ ν_i H_yy h_i (applied via HVPs)
        let (hy0, hx0) = p.g_hvp(0, &self.x, &self.y_prev, &self.xi, &s1);
        let mut hy = hy0;
        let mut hx = hx0;
        for i in 1..=m {
            let (hyi, hxi) = p.g_hvp(i, &self.x, &self.y_prev, &self.xi, &s1);
            let li = self.lambda[i - 1];
            for (a, b) in hy.iter_mut().zip(&hyi) {
                *a += li * b;
            }
            for (a, b) in hx.iter_mut().zip(&hxi) {
                *a += li * b;
            }
            // ∂G1/∂λ_i = ∇_y g_i(y′) on free coordinates
            let gi = p.sample_g(i, &self.x, &self.y_prev, &self.xi);
            bar_lambda[i - 1] =
                -s1.iter().zip(&gi.grad_y).map(|(a, b)| a * b).sum::<f64>();
        }
        for &i in &active {
            let hh = p.h_hvp(i + 1, &self.y_prev, &self.xi, &s1);
            for (a, b) in hy.iter_mut().zip(&hh) {
                *a += self.nu[i] * b;
            }
        }
        for k in 0..n_y {
            bar_y_prev[k] -= hy[k];
        }
        for k in 0..n_x {
            bar_x[k] -= hx[k];
        }

        // G2 chain, weight s2_i per active constraint:
        //   ∂G2_i/∂y′ = ∇h_i + (∂∇h_i/∂y′)ᵀz − c_i on pinned coordinates
        for (col, &i) in active.iter().enumerate() {
            let s2 = s[nf + col];
            if s2 == 0.0 {
                continue;
            }
            let hvz = p.h_hvp(i + 1, &self.y_prev, &self.xi, &self.z);
            let ci = cgrad(i);
            for k in 0..n_y {
                bar_y_prev[k] -= s2 * (h[i].grad_y[k] + hvz[k]);
                if self.box_active[k] {
                    bar_y_prev[k] += s2 * ci[k];
                }
            }
        }
        AdjointSeeds { y_prev: bar_y_prev, x: bar_x, lambda: bar_lambda }
    }
}

impl<P: SecondOrder + 'static> ShortTermSolver for MmSolver<P> {
    fn kind(&self) -> &'static str {
        "majorize-minimize"
    }

    fn num_layers(&self) -> usize {
        self.layers
    }

    fn dim_x(&self) -> usize {
        self.problem.dim_x()
    }

    fn dim_lambda(&self) -> usize {
        self.problem.num_long()
    }

    fn init(
        &self,
        _x: &[f64],
        _lambda: &[f64],
        _xi: &State,
    ) -> Result<(Vec<f64>, Box<dyn LayerAdjoint>), Error> {
        let y0 = self.problem.domain_y().center();
        let adj = ConstantAdjoint {
            dim_y_prev: y0.len(),
            dim_x: self.problem.dim_x(),
            dim_lambda: self.problem.num_long(),
        };
        Ok((y0, Box::new(adj)))
    }

    fn layer(
        &self,
        _j: usize,
        y_prev: &[f64],
        x: &[f64],
        lambda: &[f64],
        xi: &State,
    ) -> Result<(Vec<f64>, Box<dyn LayerAdjoint>), Error> {
        let (obj, cons, shifted) = self.subproblem(y_prev, x, lambda, xi);
        let (z, nu, fallback) = match qcqp::minimize(&obj, &cons, &shifted, &self.ipm)? {
            ObjectiveOutcome::Optimal(sol) => {
                let nu: Vec<f64> =
                    sol.multipliers.iter().map(|&v| if v > NU_ACTIVE_TOL { v } else { 0.0 }).collect();
                (sol.z, nu, false)
            }
            ObjectiveOutcome::Infeasible { .. } => {
                let (z, _, _) = qcqp::minimize_max(&cons, &shifted, &self.ipm)?;
                (z, vec![0.0; cons.len()], true)
            }
        };
        let y: Vec<f64> = y_prev.iter().zip(&z).map(|(a, b)| a + b).collect();
        let box_active: Vec<bool> = z
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                (v - shifted.lower()[k]).abs() <= FACE_TOL
                    || (shifted.upper()[k] - v).abs() <= FACE_TOL
            })
            .collect();
        let adj = MmAdjoint {
            problem: Arc::clone(&self.problem),
            x: x.to_vec(),
            lambda: lambda.to_vec(),
            xi: xi.clone(),
            y_prev: y_prev.to_vec(),
            z,
            nu,
            tau_s: self.tau_s,
            tau_si: self.tau_si.clone(),
            box_active,
            fallback,
        };
        Ok((y, Box::new(adj)))
    }

    fn provides_multipliers(&self) -> bool {
        self.problem.num_short() > 0
    }

    /// Multipliers of the final layer's subproblem, re-solved at y.
    fn multipliers(
        &self,
        y: &[f64],
        x: &[f64],
        lambda: &[f64],
        xi: &State,
    ) -> Result<Option<Vec<f64>>, Error> {
        if self.problem.num_short() == 0 {
            return Ok(None);
        }
        let (obj, cons, shifted) = self.subproblem(y, x, lambda, xi);
        match qcqp::minimize(&obj, &cons, &shifted, &self.ipm)? {
            ObjectiveOutcome::Optimal(sol) => Ok(Some(
                sol.multipliers.iter().map(|&v| if v > NU_ACTIVE_TOL { v } else { 0.0 }).collect(),
            )),
            ObjectiveOutcome::Infeasible { .. } => Ok(Some(vec![0.0; cons.len()])),
        }
    }
}
