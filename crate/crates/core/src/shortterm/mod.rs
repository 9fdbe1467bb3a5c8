//! Short-term sub-algorithm abstraction (initializer + per-layer map) and
//! the four concrete solvers: gradient projection, MM, the CMAC closed form,
//! and WMMSE. Solvers are stateless: y^J is a pure function of (x, λ, ξ).

mod cmac;
mod gp;
mod mm;
pub(crate) mod wmmse;

pub use cmac::{cmac_short_term, CmacClosedForm};
pub use gp::{GpSolver, GpStepRule};
pub use mm::MmSolver;
pub use wmmse::{wmmse_objective, wmmse_sweep_objectives, WmmseSolver};

use crate::error::Error;
use crate::problem::{short_term_objective, ProblemDefinition, State};
use crate::unroll::{LayerAdjoint, UnrollTape};

/// Outcome of one short-term solve at a fixed state.
#[derive(Debug, Clone)]
pub struct ShortTermResult {
    /// y^J.
    pub y: Vec<f64>,
    /// Short-term multipliers ν_j ≥ 0 when the solver recovers them.
    pub nu: Option<Vec<f64>>,
    /// (e_1, e_2, max_j |e_{3,j}|): stationarity, feasibility, slackness.
    pub kkt_errors: (f64, f64, f64),
}

/// One unrollable short-term solver: an initializer plus J layer maps, each
/// differentiable in (y_prev, x, λ) via its recorded adjoint.
pub trait ShortTermSolver: Send + Sync {
    fn kind(&self) -> &'static str;
    /// Number of unrolled iterations J.
    fn num_layers(&self) -> usize;
    fn dim_x(&self) -> usize;
    fn dim_lambda(&self) -> usize;
    /// y^0(x, λ, ξ) and its adjoint.
    fn init(
        &self,
        x: &[f64],
        lambda: &[f64],
        xi: &State,
    ) -> Result<(Vec<f64>, Box<dyn LayerAdjoint>), Error>;
    /// y^j = 𝒜^j(y^{j−1}, x, λ, ξ) and its adjoint, j = 1…J.
    fn layer(
        &self,
        j: usize,
        y_prev: &[f64],
        x: &[f64],
        lambda: &[f64],
        xi: &State,
    ) -> Result<(Vec<f64>, Box<dyn LayerAdjoint>), Error>;
    /// Whether the solver contract promises multipliers for the problem's
    /// short-term constraints.
    fn provides_multipliers(&self) -> bool {
        false
    }
    /// Multipliers at the final iterate, when recoverable.
    fn multipliers(
        &self,
        _y: &[f64],
        _x: &[f64],
        _lambda: &[f64],
        _xi: &State,
    ) -> Result<Option<Vec<f64>>, Error> {
        Ok(None)
    }
}

/// Applies the initializer then J layer maps, recording every intermediate
/// state on the tape, and fills the short-term KKT error triple at y^J.
pub fn run_short_term(
    solver: &dyn ShortTermSolver,
    problem: &dyn ProblemDefinition,
    x: &[f64],
    lambda: &[f64],
    xi: &State,
) -> Result<(ShortTermResult, UnrollTape), Error> {
    if x.len() != solver.dim_x() {
        return Err(Error::DimensionMismatch { what: "x", expected: solver.dim_x(), got: x.len() });
    }
    if lambda.len() != solver.dim_lambda() {
        return Err(Error::DimensionMismatch {
            what: "lambda",
            expected: solver.dim_lambda(),
            got: lambda.len(),
        });
    }
    let (y0, init_adjoint) = solver.init(x, lambda, xi)?;
    let mut tape =
        UnrollTape::new(solver.kind(), solver.dim_x(), solver.dim_lambda(), y0, init_adjoint);
    for j in 1..=solver.num_layers() {
        let y_prev = tape.final_state().to_vec();
        let (y, adjoint) = solver.layer(j, &y_prev, x, lambda, xi)?;
        tape.push_layer(y, adjoint);
    }
    let y = tape.final_state().to_vec();
    let nu = solver.multipliers(&y, x, lambda, xi)?;
    if solver.provides_multipliers() && nu.is_none() && problem.num_short() > 0 {
        return Err(Error::MissingMultipliers);
    }
    let kkt_errors = short_term_kkt_errors(problem, x, lambda, &y, nu.as_deref(), xi);
    Ok((ShortTermResult { y, nu, kkt_errors }, tape))
}

/// Error magnitudes of the short-term KKT conditions at a candidate y:
/// e_1 is the projected-gradient residual of ∂_y g_s + Σ ν_j ∂_y h_j over 𝒴
/// (plain gradient norm when 𝒴's faces are inactive), e_2 the largest
/// constraint violation, e_3 the largest complementary-slackness defect.
pub fn short_term_kkt_errors(
    problem: &dyn ProblemDefinition,
    x: &[f64],
    lambda: &[f64],
    y: &[f64],
    nu: Option<&[f64]>,
    xi: &State,
) -> (f64, f64, f64) {
    let (_, mut grad) = short_term_objective(problem, x, lambda, y, xi);
    let mut e2 = 0.0_f64;
    let mut e3 = 0.0_f64;
    for j in 1..=problem.num_short() {
        let h = problem.sample_h(j, y, xi);
        e2 = e2.max(h.value.max(0.0));
        if let Some(nu) = nu {
            e3 = e3.max((nu[j - 1] * h.value).abs());
            for (g, d) in grad.iter_mut().zip(&h.grad_y) {
                *g += nu[j - 1] * d;
            }
        }
    }
    let stepped: Vec<f64> = y.iter().zip(&grad).map(|(a, d)| a - d).collect();
    let proj = problem.domain_y().project(&stepped);
    let e1 = y.iter().zip(&proj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    (e1, e2, e3)
}
