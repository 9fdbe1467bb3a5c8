//! Tape-based reverse-mode engine for the unrolled short-term iterations.
//!
//! A forward short-term solve records y^0 … y^J plus one adjoint closure per
//! layer. The backward sweep turns an output cotangent into adjoints with
//! respect to (x, λ): each layer pulls the running y-cotangent back to
//! (y_prev, x, λ), the y_prev part chains to the previous layer, and the
//! initializer's adjoint closes the recursion. Adjoints are hand-derived per
//! layer kind; projection kinks use the forward pass's active mask
//! (derivative 0 on clipped coordinates).

use crate::error::Error;
use crate::problem::{evaluate_sample, ProblemDefinition, State};
use crate::shortterm::{run_short_term, ShortTermResult, ShortTermSolver};

/// Adjoints of one layer's output with respect to its three inputs.
#[derive(Debug, Clone)]
pub struct AdjointSeeds {
    pub y_prev: Vec<f64>,
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl AdjointSeeds {
    pub fn zeros(dim_y: usize, dim_x: usize, dim_lambda: usize) -> Self {
        AdjointSeeds {
            y_prev: vec![0.0; dim_y],
            x: vec![0.0; dim_x],
            lambda: vec![0.0; dim_lambda],
        }
    }
}

/// Reverse map of one layer: output cotangent ↦ input adjoints.
pub trait LayerAdjoint: Send + Sync {
    fn pull_back(&self, cotangent: &[f64]) -> AdjointSeeds;
}

/// Adjoint of a constant map (e.g., a deterministic initializer that reads
/// neither x nor λ).
pub struct ConstantAdjoint {
    pub dim_y_prev: usize,
    pub dim_x: usize,
    pub dim_lambda: usize,
}

impl LayerAdjoint for ConstantAdjoint {
    fn pull_back(&self, _cotangent: &[f64]) -> AdjointSeeds {
        AdjointSeeds::zeros(self.dim_y_prev, self.dim_x, self.dim_lambda)
    }
}

/// Recorded forward pass of one short-term solve.
pub struct UnrollTape {
    /// y^0 … y^J in order.
    pub layer_states: Vec<Vec<f64>>,
    /// Identifier of the layer map (one solver kind per tape).
    pub layer_kind: &'static str,
    dim_x: usize,
    dim_lambda: usize,
    init_adjoint: Box<dyn LayerAdjoint>,
    layer_adjoints: Vec<Box<dyn LayerAdjoint>>,
}

impl UnrollTape {
    pub fn new(
        layer_kind: &'static str,
        dim_x: usize,
        dim_lambda: usize,
        y0: Vec<f64>,
        init_adjoint: Box<dyn LayerAdjoint>,
    ) -> Self {
        UnrollTape {
            layer_states: vec![y0],
            layer_kind,
            dim_x,
            dim_lambda,
            init_adjoint,
            layer_adjoints: Vec::new(),
        }
    }

    pub fn push_layer(&mut self, y: Vec<f64>, adjoint: Box<dyn LayerAdjoint>) {
        self.layer_states.push(y);
        self.layer_adjoints.push(adjoint);
    }

    /// Number of recorded layers J (layer_states holds J + 1 entries).
    pub fn num_layers(&self) -> usize {
        self.layer_adjoints.len()
    }

    pub fn final_state(&self) -> &[f64] {
        self.layer_states.last().expect("tape holds y^0")
    }

    /// Backward sweep: cotangent on y^J ↦ ((∂_x y^J)ᵀv, (∂_λ y^J)ᵀv).
    pub fn vjp(&self, cotangent: &[f64]) -> Result<(Vec<f64>, Vec<f64>), Error> {
        let dim_y = self.final_state().len();
        if cotangent.len() != dim_y {
            return Err(Error::DimensionMismatch {
                what: "cotangent",
                expected: dim_y,
                got: cotangent.len(),
            });
        }
        if cotangent.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("cotangent must be finite".into()));
        }
        let mut bar_x = vec![0.0; self.dim_x];
        let mut bar_lambda = vec![0.0; self.dim_lambda];
        let mut bar_y = cotangent.to_vec();
        for adj in self.layer_adjoints.iter().rev() {
            let seeds = adj.pull_back(&bar_y);
            accumulate(&mut bar_x, &seeds.x);
            accumulate(&mut bar_lambda, &seeds.lambda);
            bar_y = seeds.y_prev;
        }
        let seeds = self.init_adjoint.pull_back(&bar_y);
        accumulate(&mut bar_x, &seeds.x);
        accumulate(&mut bar_lambda, &seeds.lambda);
        Ok((bar_x, bar_lambda))
    }
}

fn accumulate(acc: &mut [f64], inc: &[f64]) {
    debug_assert_eq!(acc.len(), inc.len());
    for (a, b) in acc.iter_mut().zip(inc) {
        *a += b;
    }
}

/// Total gradients of g_i(x, y^J(x, λ, ξ), ξ) through the recorded solve:
///   total_grad_x = (∂_x y^J)ᵀ ∂_y g_i + ∂_x g_i
///   total_grad_lambda = (∂_λ y^J)ᵀ ∂_y g_i
/// One reverse sweep per constraint index; different i reuse the same tape.
pub fn grad_through(
    problem: &dyn ProblemDefinition,
    i: usize,
    x: &[f64],
    lambda: &[f64],
    xi: &State,
    result: &ShortTermResult,
    tape: &UnrollTape,
) -> Result<(Vec<f64>, Vec<f64>, f64), Error> {
    let _ = lambda;
    let eval = evaluate_sample(problem, i, x, &result.y, xi)?;
    let (pushed_x, pushed_lambda) = tape.vjp(&eval.grad_y)?;
    let total_x: Vec<f64> =
        pushed_x.iter().zip(&eval.grad_x).map(|(p, d)| p + d).collect();
    Ok((total_x, pushed_lambda, eval.value))
}

/// Central finite differences of g_i(x, y^J(x, λ, ξ), ξ) in every coordinate
/// of (x, λ); step 1e−6·(1 + |coordinate|). Validation oracle only.
pub fn fd_oracle(
    problem: &dyn ProblemDefinition,
    i: usize,
    x: &[f64],
    lambda: &[f64],
    xi: &State,
    solver: &dyn ShortTermSolver,
) -> Result<(Vec<f64>, Vec<f64>), Error> {
    let eval_at = |x: &[f64], lambda: &[f64]| -> Result<f64, Error> {
        let (result, _) = run_short_term(solver, problem, x, lambda, xi)?;
        Ok(evaluate_sample(problem, i, x, &result.y, xi)?.value)
    };
    let mut grad_x = vec![0.0; x.len()];
    for k in 0..x.len() {
        let h = 1e-6 * (1.0 + x[k].abs());
        let mut xp = x.to_vec();
        xp[k] += h;
        let mut xm = x.to_vec();
        xm[k] -= h;
        grad_x[k] = (eval_at(&xp, lambda)? - eval_at(&xm, lambda)?) / (2.0 * h);
    }
    let mut grad_lambda = vec![0.0; lambda.len()];
    for k in 0..lambda.len() {
        let h = 1e-6 * (1.0 + lambda[k].abs());
        let mut lp = lambda.to_vec();
        lp[k] += h;
        let mut lm = lambda.to_vec();
        lm[k] -= h;
        grad_lambda[k] = (eval_at(x, &lp)? - eval_at(x, &lm)?) / (2.0 * h);
    }
    Ok((grad_x, grad_lambda))
}

/// Elementwise comparison used by the gradient-check suites: relative error
/// except for coordinates below the absolute floor.
pub fn max_relative_error(got: &[f64], want: &[f64], abs_floor: f64) -> f64 {
    got.iter()
        .zip(want)
        .map(|(&g, &w)| {
            if w.abs() < abs_floor && g.abs() < abs_floor {
                (g - w).abs()
            } else {
                (g - w).abs() / w.abs().max(g.abs())
            }
        })
        .fold(0.0, f64::max)
}
