//! KKT residual diagnostics: the stationarity, feasibility, and complementary
//! slackness conditions of the two-stage problem evaluated at a candidate
//! (x, λ, {y(ξ)}) as computable error magnitudes.

use crate::error::Error;
use crate::problem::{short_term_objective, LongTermIterate, ProblemDefinition, State};
use crate::shortterm::ShortTermResult;

/// Residual magnitudes of the KKT conditions. Feasibility entries may be
/// negative (strictly feasible); all other fields are ≥ 0.
#[derive(Debug, Clone)]
pub struct KktReport {
    /// Batch-averaged projected-gradient residual of the short-term
    /// stationarity condition.
    pub stationarity_short: f64,
    /// max over j and samples of h_j(y, ξ).
    pub feasibility_short: f64,
    /// max over j and samples of |ν_j h_j|.
    pub slackness_short: f64,
    /// Projected-gradient residual of ∇_x f_0 + Σ λ_i ∇_x f_i over 𝒳.
    pub stationarity_long: f64,
    /// SAA estimates of the long-term constraint values f_i.
    pub feasibility_long: Vec<f64>,
    /// max_i |λ_i f̂_i|.
    pub slackness_long: f64,
}

/// Computes the residuals at a candidate point.
///
/// `batch` pairs each evaluation state with its short-term result; `saa_f`
/// holds SAA estimates of f_1…f_m and `saa_grad_x` SAA estimates of the
/// total x-gradients of f_0…f_m (may be empty when dim_x = 0, in which case
/// the long-term stationarity residual is zero by convention). When
/// `require_multipliers` is set, every result must carry ν.
pub fn kkt_report(
    problem: &dyn ProblemDefinition,
    iterate: &LongTermIterate,
    batch: &[(State, ShortTermResult)],
    saa_f: &[f64],
    saa_grad_x: &[Vec<f64>],
    require_multipliers: bool,
) -> Result<KktReport, Error> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("kkt_report needs a nonempty batch".into()));
    }
    let m = problem.num_long();
    if saa_f.len() != m {
        return Err(Error::DimensionMismatch { what: "saa_f", expected: m, got: saa_f.len() });
    }
    if !saa_grad_x.is_empty() && saa_grad_x.len() != m + 1 {
        return Err(Error::DimensionMismatch {
            what: "saa_grad_x",
            expected: m + 1,
            got: saa_grad_x.len(),
        });
    }
    let n = problem.num_short();
    let domain_y = problem.domain_y();

    let mut stat_short = 0.0;
    let mut feas_short = if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    let mut slack_short = 0.0_f64;
    for (xi, result) in batch {
        if require_multipliers && n > 0 && result.nu.is_none() {
            return Err(Error::MissingMultipliers);
        }
        let (_, mut grad) =
            short_term_objective(problem, &iterate.x, &iterate.lambda, &result.y, xi);
        for j in 1..=n {
            let h = problem.sample_h(j, &result.y, xi);
            feas_short = feas_short.max(h.value);
            if let Some(nu) = &result.nu {
                slack_short = slack_short.max((nu[j - 1] * h.value).abs());
                for (g, d) in grad.iter_mut().zip(&h.grad_y) {
                    *g += nu[j - 1] * d;
                }
            }
        }
        let stepped: Vec<f64> =
            result.y.iter().zip(&grad).map(|(a, d)| a - d).collect();
        let proj = domain_y.project(&stepped);
        stat_short +=
            result.y.iter().zip(&proj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    }
    stat_short /= batch.len() as f64;

    let stationarity_long = if saa_grad_x.is_empty() || problem.dim_x() == 0 {
        0.0
    } else {
        let mut g = saa_grad_x[0].clone();
        for i in 1..=m {
            for (a, v) in g.iter_mut().zip(&saa_grad_x[i]) {
                *a += iterate.lambda[i - 1] * v;
            }
        }
        let stepped: Vec<f64> = iterate.x.iter().zip(&g).map(|(a, d)| a - d).collect();
        let proj = problem.domain_x().project(&stepped);
        iterate.x.iter().zip(&proj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };

    let slackness_long = saa_f
        .iter()
        .zip(&iterate.lambda)
        .map(|(f, l)| (f * l).abs())
        .fold(0.0, f64::max);

    Ok(KktReport {
        stationarity_short: stat_short,
        feasibility_short: feas_short,
        slackness_short: slack_short,
        stationarity_long,
        feasibility_long: saa_f.to_vec(),
        slackness_long,
    })
}
