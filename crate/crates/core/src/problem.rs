use crate::error::Error;
use rand_chacha::ChaCha8Rng;

/// One realization of the random state ξ, flattened to reals.
/// Complex quantities are stored stacked as [Re; Im].
pub type State = Vec<f64>;

/// Compact box set given by per-coordinate finite bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, Error> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                what: "box bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::InvalidInput("box bounds must be finite".into()));
            }
            if l > u {
                return Err(Error::InvalidInput(format!("box lower {l} exceeds upper {u}")));
            }
        }
        Ok(BoxDomain { lower, upper })
    }

    /// [lo, hi]^dim.
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        BoxDomain::new(vec![lo; dim], vec![hi; dim]).expect("uniform box bounds")
    }

    pub fn empty() -> Self {
        BoxDomain { lower: Vec::new(), upper: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&x, (&l, &u))| x.clamp(l, u))
            .collect()
    }

    pub fn contains(&self, v: &[f64], tol: f64) -> bool {
        v.len() == self.dim()
            && v.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&x, (&l, &u))| x >= l - tol && x <= u + tol)
    }

    /// Cartesian product of two boxes, self first.
    pub fn concat(&self, other: &BoxDomain) -> BoxDomain {
        let mut lower = self.lower.clone();
        lower.extend_from_slice(&other.lower);
        let mut upper = self.upper.clone();
        upper.extend_from_slice(&other.upper);
        BoxDomain { lower, upper }
    }
}

/// Value and partial derivatives of one sample function g_i(x, y, ξ).
/// Partials treat y as a fixed value (no chaining through the short-term solve).
#[derive(Debug, Clone)]
pub struct GEval {
    pub value: f64,
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
}

/// Value and gradient of one short-term constraint h_j(y, ξ).
#[derive(Debug, Clone)]
pub struct HEval {
    pub value: f64,
    pub grad_y: Vec<f64>,
}

/// The two-stage stochastic problem:
///
///   min_x  E[g_0(x, y(ξ), ξ)]
///   s.t.   E[g_i(x, y(ξ), ξ)] ≤ 0,  i = 1…m
///          h_j(y(ξ), ξ) ≤ 0,        j = 1…n
///          x ∈ 𝒳, y(ξ) ∈ 𝒴
///
/// Evaluators must be deterministic and safe to call concurrently.
pub trait ProblemDefinition: Send + Sync {
    fn dim_x(&self) -> usize;
    fn dim_y(&self) -> usize;
    /// Number of long-term expectation constraints m (g_1…g_m).
    fn num_long(&self) -> usize;
    /// Number of per-state short-term constraints n (h_1…h_n).
    fn num_short(&self) -> usize {
        0
    }
    fn domain_x(&self) -> BoxDomain;
    fn domain_y(&self) -> BoxDomain;
    /// Upper bound of the multiplier box [0, lambda_cap]^m.
    fn lambda_cap(&self) -> f64 {
        1e4
    }
    /// Sample function g_i, i = 0…m, with partials ∂_x g_i and ∂_y g_i.
    fn sample_g(&self, i: usize, x: &[f64], y: &[f64], xi: &State) -> GEval;
    /// Short-term constraint h_j, j = 1…n.
    fn sample_h(&self, _j: usize, _y: &[f64], _xi: &State) -> HEval {
        panic!("problem declares no short-term constraints")
    }
    /// Draw one i.i.d. state from the given stream.
    fn draw_state(&self, rng: &mut ChaCha8Rng) -> State;
}

/// Second-order information needed by solvers that differentiate through
/// gradient steps (GP) or subproblem stationarity systems (MM).
pub trait SecondOrder: ProblemDefinition {
    /// Returns (∂_y(vᵀ∂_y g_i), ∂_x(vᵀ∂_y g_i)) at (x, y, ξ).
    fn g_hvp(&self, i: usize, x: &[f64], y: &[f64], xi: &State, v: &[f64])
        -> (Vec<f64>, Vec<f64>);
    /// Returns ∂_y(vᵀ∂_y h_j) at (y, ξ). Default: affine constraints.
    fn h_hvp(&self, _j: usize, _y: &[f64], _xi: &State, v: &[f64]) -> Vec<f64> {
        vec![0.0; v.len()]
    }
}

/// Checked wrapper around [`ProblemDefinition::sample_g`].
pub fn evaluate_sample(
    problem: &dyn ProblemDefinition,
    i: usize,
    x: &[f64],
    y: &[f64],
    xi: &State,
) -> Result<GEval, Error> {
    if i > problem.num_long() {
        return Err(Error::IndexOutOfRange {
            what: "constraint",
            index: i,
            len: problem.num_long() + 1,
        });
    }
    if x.len() != problem.dim_x() {
        return Err(Error::DimensionMismatch { what: "x", expected: problem.dim_x(), got: x.len() });
    }
    if y.len() != problem.dim_y() {
        return Err(Error::DimensionMismatch { what: "y", expected: problem.dim_y(), got: y.len() });
    }
    let eval = problem.sample_g(i, x, y, xi);
    debug_assert_eq!(eval.grad_x.len(), problem.dim_x());
    debug_assert_eq!(eval.grad_y.len(), problem.dim_y());
    Ok(eval)
}

/// Value and y-gradient of the short-term objective
/// g_s(x, λ, y, ξ) = g_0 + Σ_i λ_i g_i.
pub fn short_term_objective(
    problem: &dyn ProblemDefinition,
    x: &[f64],
    lambda: &[f64],
    y: &[f64],
    xi: &State,
) -> (f64, Vec<f64>) {
    let g0 = problem.sample_g(0, x, y, xi);
    let mut value = g0.value;
    let mut grad = g0.grad_y;
    for i in 1..=problem.num_long() {
        let gi = problem.sample_g(i, x, y, xi);
        value += lambda[i - 1] * gi.value;
        for (g, d) in grad.iter_mut().zip(&gi.grad_y) {
            *g += lambda[i - 1] * d;
        }
    }
    (value, grad)
}

/// Current (x^t, λ^t) pair of the long-term loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTermIterate {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub t: usize,
}

impl LongTermIterate {
    pub fn new(x: Vec<f64>, lambda: Vec<f64>) -> Self {
        LongTermIterate { x, lambda, t: 0 }
    }

    /// Box [0, lambda_cap]^m of the multiplier part.
    pub fn lambda_box(problem: &dyn ProblemDefinition) -> BoxDomain {
        BoxDomain::uniform(problem.num_long(), 0.0, problem.lambda_cap())
    }

    pub fn validate(&self, problem: &dyn ProblemDefinition) -> Result<(), Error> {
        if self.x.len() != problem.dim_x() {
            return Err(Error::DimensionMismatch {
                what: "iterate x",
                expected: problem.dim_x(),
                got: self.x.len(),
            });
        }
        if self.lambda.len() != problem.num_long() {
            return Err(Error::DimensionMismatch {
                what: "iterate lambda",
                expected: problem.num_long(),
                got: self.lambda.len(),
            });
        }
        if !problem.domain_x().contains(&self.x, 1e-12) {
            return Err(Error::InvalidInput("iterate x outside its domain".into()));
        }
        let cap = problem.lambda_cap();
        if self.lambda.iter().any(|&l| !(0.0..=cap).contains(&l)) {
            return Err(Error::InvalidInput("iterate lambda outside [0, lambda_cap]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_projection_clamps() {
        let b = BoxDomain::uniform(2, 0.0, 1.0);
        assert_eq!(b.project(&[1.5, -0.2]), vec![1.0, 0.0]);
        assert_eq!(b.project(&[0.3, 0.7]), vec![0.3, 0.7]);
    }

    #[test]
    fn box_rejects_bad_bounds() {
        assert!(BoxDomain::new(vec![0.0], vec![f64::INFINITY]).is_err());
        assert!(BoxDomain::new(vec![1.0], vec![0.0]).is_err());
        assert!(BoxDomain::new(vec![0.0, 0.0], vec![1.0]).is_err());
    }

    #[test]
    fn box_concat_orders_coordinates() {
        let a = BoxDomain::uniform(1, -1.0, 1.0);
        let b = BoxDomain::uniform(2, 0.0, 5.0);
        let c = a.concat(&b);
        assert_eq!(c.lower(), &[-1.0, 0.0, 0.0]);
        assert_eq!(c.upper(), &[1.0, 5.0, 5.0]);
    }
}
