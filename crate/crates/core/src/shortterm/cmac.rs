//! Closed-form short-term power allocation for the cognitive multi-access
//! channel: p_i* = (1/(N a_i))·(a_i/(b_i Υ + λ_i) − 1)^+, the exact optimizer
//! of min_p −log(1 + Σ a_i p_i) + Σ λ_i p_i + Υ Σ b_i p_i over p ≥ 0.
//!
//! Exposed as a single analytic "layer"; the reverse pass uses the kink
//! convention of subgradient 0 at (·)^+ = 0 and derivative 0 on coordinates
//! hit by the zero-denominator guard.

use crate::error::Error;
use crate::problem::State;
use crate::shortterm::ShortTermSolver;
use crate::unroll::{AdjointSeeds, ConstantAdjoint, LayerAdjoint};

/// Per-coordinate outcome of the closed form.
#[derive(Debug, Clone)]
pub struct CmacAllocation {
    pub p: Vec<f64>,
    /// True where the (·)^+ branch is strictly positive (differentiable).
    pub positive: Vec<bool>,
    /// True where b_i Υ + λ_i = 0 forced the domain-cap guard.
    pub guarded: Vec<bool>,
}

/// Evaluates the closed form; coordinates with b_i Υ + λ_i = 0 are capped at
/// p_cap and flagged.
pub fn cmac_short_term(
    lambda_n: &[f64],
    upsilon: f64,
    a: &[f64],
    b: &[f64],
    p_cap: f64,
) -> CmacAllocation {
    let n = a.len();
    let nf = n as f64;
    let mut p = vec![0.0; n];
    let mut positive = vec![false; n];
    let mut guarded = vec![false; n];
    for i in 0..n {
        let den = b[i] * upsilon + lambda_n[i];
        if den <= 0.0 {
            p[i] = p_cap;
            guarded[i] = true;
            continue;
        }
        let arg = a[i] / den - 1.0;
        if arg > 0.0 {
            p[i] = arg / (nf * a[i]);
            positive[i] = true;
        }
    }
    CmacAllocation { p, positive, guarded }
}

/// The CMAC closed form as a one-layer solver. The framework mapping has no
/// primal long-term variable: x is empty and the long-term vector is
/// (λ_1…λ_N, Υ) of length N + 1. States are [a; b].
pub struct CmacClosedForm {
    pub users: usize,
    pub p_cap: f64,
}

struct CmacAdjoint {
    lambda_n: Vec<f64>,
    upsilon: f64,
    a: Vec<f64>,
    b: Vec<f64>,
    positive: Vec<bool>,
}

impl LayerAdjoint for CmacAdjoint {
    fn pull_back(&self, cotangent: &[f64]) -> AdjointSeeds {
        let n = self.a.len();
        let nf = n as f64;
        let mut bar_lambda = vec![0.0; n + 1];
        for i in 0..n {
            if !self.positive[i] {
                continue;
            }
            let den = self.b[i] * self.upsilon + self.lambda_n[i];
            // p_i = 1/(N·den) − 1/(N a_i) on the positive branch
            let dp_dden = -1.0 / (nf * den * den);
            bar_lambda[i] += cotangent[i] * dp_dden;
            bar_lambda[n] += cotangent[i] * dp_dden * self.b[i];
        }
        AdjointSeeds { y_prev: vec![0.0; n], x: vec![], lambda: bar_lambda }
    }
}

impl CmacClosedForm {
    fn split_state<'a>(&self, xi: &'a State) -> (&'a [f64], &'a [f64]) {
        let n = self.users;
        (&xi[..n], &xi[n..2 * n])
    }
}

impl ShortTermSolver for CmacClosedForm {
    fn kind(&self) -> &'static str {
        "cmac-closed-form"
    }

    fn num_layers(&self) -> usize {
        1
    }

    fn dim_x(&self) -> usize {
        0
    }

    fn dim_lambda(&self) -> usize {
        self.users + 1
    }

    fn init(
        &self,
        _x: &[f64],
        _lambda: &[f64],
        _xi: &State,
    ) -> Result<(Vec<f64>, Box<dyn LayerAdjoint>), Error> {
        let adj = ConstantAdjoint { dim_y_prev: self.users, dim_x: 0, dim_lambda: self.users + 1 };
        Ok((vec![0.0; self.users], Box::new(adj)))
    }

    fn layer(
        &self,
        _j: usize,
        _y_prev: &[f64],
        _x: &[f64],
        lambda: &[f64],
        xi: &State,
    ) -> Result<(Vec<f64>, Box<dyn LayerAdjoint>), Error> {
        let (a, b) = self.split_state(xi);
        let (lambda_n, upsilon) = (&lambda[..self.users], lambda[self.users]);
        let alloc = cmac_short_term(lambda_n, upsilon, a, b, self.p_cap);
        let adj = CmacAdjoint {
            lambda_n: lambda_n.to_vec(),
            upsilon,
            a: a.to_vec(),
            b: b.to_vec(),
            positive: alloc.positive,
        };
        Ok((alloc.p, Box::new(adj)))
    }
}
