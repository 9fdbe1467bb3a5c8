//! The outer PDD-SSCA loop: batch sampling, short-term solves and reverse
//! sweeps, surrogate tracker updates, convex objective/feasibility updates,
//! and iterate averaging x^{t+1} = (1−γ^t)x^t + γ^t x̄^t.
//!
//! One writer owns trackers and iterate; the B per-sample solves run
//! concurrently and reduce in sample-index order, so results are independent
//! of worker count.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Error;
use crate::kkt::{kkt_report, KktReport};
use crate::problem::{evaluate_sample, BoxDomain, LongTermIterate, ProblemDefinition, State};
use crate::qcqp::{self, IpmOptions, ObjectiveOutcome, Quadratic};
use crate::schedule::StepSchedule;
use crate::shortterm::{run_short_term, ShortTermResult, ShortTermSolver};
use crate::surrogate::{build_surrogate, update_trackers, SampleStat, SurrogateModel, SurrogateTracker};

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Mini-batch size B.
    pub batch_size: usize,
    /// Outer iteration cap T_max.
    pub max_iters: usize,
    pub schedule: StepSchedule,
    /// Constraint-violation tolerance accepted from the objective update.
    pub feas_tolerance: f64,
    /// Movement threshold of the 10-iteration stopping window.
    pub stop_tolerance: f64,
    pub seed: u64,
    /// Surrogate curvature constant τ (shared by all constraints).
    pub tau: f64,
    /// Fresh-batch size of the final KKT evaluation.
    pub eval_batch: usize,
    pub ipm: IpmOptions,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            batch_size: 20,
            max_iters: 1000,
            schedule: StepSchedule::default(),
            feas_tolerance: 1e-6,
            stop_tolerance: 1e-5,
            seed: 0,
            tau: 1.0,
            eval_batch: 1000,
            ipm: IpmOptions::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.batch_size == 0 || self.max_iters == 0 || self.eval_batch == 0 {
            return Err(Error::InvalidInput("batch sizes and iteration cap must be ≥ 1".into()));
        }
        if self.feas_tolerance <= 0.0 || self.stop_tolerance <= 0.0 || self.tau <= 0.0 {
            return Err(Error::InvalidInput("tolerances and tau must be positive".into()));
        }
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    Objective,
    Feasibility,
}

impl UpdateMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            UpdateMode::Objective => "objective",
            UpdateMode::Feasibility => "feasibility",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub iter: usize,
    pub rho: f64,
    pub gamma: f64,
    /// Objective tracker f_0^t.
    pub objective: f64,
    /// max_i f_i^t over the constraint trackers (0 when m = 0).
    pub max_constraint: f64,
    pub mode: UpdateMode,
    /// Wall-clock milliseconds of the outer iteration.
    pub millis: u64,
}

/// The two convex subproblems of one outer iteration.
pub struct ConvexSubproblem {
    pub objective: SurrogateModel,
    pub constraints: Vec<SurrogateModel>,
    /// domain_x × [0, lambda_cap]^m.
    pub domain: BoxDomain,
    pub mode: UpdateMode,
}

fn quadratics(models: &[SurrogateModel]) -> Result<Vec<Quadratic>, Error> {
    models
        .iter()
        .map(|s| {
            s.as_quadratic().ok_or_else(|| {
                Error::InvalidInput(
                    "the convex subproblem solver handles quadratic surrogates only".into(),
                )
            })
        })
        .collect()
}

/// Outcome of the objective update.
pub enum LongTermUpdate {
    Point { x: Vec<f64>, lambda: Vec<f64> },
    Infeasible { alpha: f64 },
}

/// (x̄^t, λ̄^t) = argmin f̄_0(x,λ) s.t. f̄_i(x,λ) ≤ 0 over the box, or the
/// Infeasible verdict from phase I.
pub fn solve_objective_update(
    sub: &ConvexSubproblem,
    opts: &IpmOptions,
) -> Result<LongTermUpdate, Error> {
    debug_assert_eq!(sub.mode, UpdateMode::Objective);
    let n_x = sub.objective.anchor_x.len();
    let obj = quadratics(std::slice::from_ref(&sub.objective))?.remove(0);
    let cons = quadratics(&sub.constraints)?;
    // warm start at the anchor: every surrogate equals its tracker value there,
    // so phase I starts deep inside the feasible region even when the box is
    // orders of magnitude wider than the active neighborhood
    let mut warm = sub.objective.anchor_x.clone();
    warm.extend_from_slice(&sub.objective.anchor_lambda);
    match qcqp::minimize_from(&obj, &cons, &sub.domain, opts, Some(&warm))? {
        ObjectiveOutcome::Optimal(sol) => {
            let (x, lambda) = sol.z.split_at(n_x);
            Ok(LongTermUpdate::Point { x: x.to_vec(), lambda: lambda.to_vec() })
        }
        ObjectiveOutcome::Infeasible { alpha } => Ok(LongTermUpdate::Infeasible { alpha }),
    }
}

/// argmin_x max_i f̄_i(x, λ) over the box (epigraph form); returns the point
/// and the achieved max-surrogate value α.
pub fn solve_feasibility_update(
    sub: &ConvexSubproblem,
    opts: &IpmOptions,
) -> Result<(Vec<f64>, Vec<f64>, f64), Error> {
    let n_x = sub.objective.anchor_x.len();
    let cons = quadratics(&sub.constraints)?;
    let mut warm = sub.objective.anchor_x.clone();
    warm.extend_from_slice(&sub.objective.anchor_lambda);
    let (z, alpha, _) = qcqp::minimize_max_from(&cons, &sub.domain, opts, Some(&warm))?;
    let (x, lambda) = z.split_at(n_x);
    Ok((x.to_vec(), lambda.to_vec(), alpha))
}

/// Mutable state of the outer loop.
pub struct AlgorithmState {
    pub iterate: LongTermIterate,
    pub trackers: Vec<SurrogateTracker>,
    pub trace: Vec<TraceRecord>,
    pub objective_updates: usize,
    pub feasibility_updates: usize,
    pub lambda_clamp_active: bool,
    /// ‖Δx‖ + ‖Δλ‖ of recent iterations, newest last.
    movement: Vec<f64>,
    rng: ChaCha8Rng,
}

impl AlgorithmState {
    pub fn new(
        problem: &dyn ProblemDefinition,
        init: LongTermIterate,
        config: &SolverConfig,
    ) -> Result<Self, Error> {
        config.validate()?;
        init.validate(problem)?;
        let trackers = (0..=problem.num_long())
            .map(|_| SurrogateTracker::new(problem.dim_x(), problem.num_long(), config.tau))
            .collect();
        Ok(AlgorithmState {
            iterate: init,
            trackers,
            trace: Vec::new(),
            objective_updates: 0,
            feasibility_updates: 0,
            lambda_clamp_active: false,
            movement: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }
}

/// Per-sample statistics for every constraint index, in sample order.
fn batch_statistics(
    problem: &dyn ProblemDefinition,
    solver: &dyn ShortTermSolver,
    x: &[f64],
    lambda: &[f64],
    states: &[State],
) -> Result<Vec<Vec<SampleStat>>, Error> {
    let m = problem.num_long();
    let per_sample: Result<Vec<Vec<SampleStat>>, Error> = states
        .par_iter()
        .map(|xi| {
            let (result, tape) = run_short_term(solver, problem, x, lambda, xi)?;
            (0..=m)
                .map(|i| {
                    let eval = evaluate_sample(problem, i, x, &result.y, xi)?;
                    let (pushed_x, pushed_lambda) = tape.vjp(&eval.grad_y)?;
                    Ok(SampleStat {
                        value: eval.value,
                        grad_x_partial: eval.grad_x,
                        pushed_x,
                        pushed_lambda,
                    })
                })
                .collect()
        })
        .collect();
    per_sample
}

/// One iteration of Algorithm: sample, solve, track, update, average.
pub fn outer_step(
    state: &mut AlgorithmState,
    problem: &dyn ProblemDefinition,
    solver: &dyn ShortTermSolver,
    config: &SolverConfig,
) -> Result<(), Error> {
    let started = Instant::now();
    let t = state.iterate.t;
    let (rho, gamma) = config.schedule.step_values(t);
    let m = problem.num_long();

    // Step 1: mini-batch of states, short-term solves, reverse sweeps.
    // States are drawn sequentially from the master stream; the per-sample
    // work is parallel with an order-preserving reduction.
    let states: Vec<State> =
        (0..config.batch_size).map(|_| problem.draw_state(&mut state.rng)).collect();
    let per_sample =
        batch_statistics(problem, solver, &state.iterate.x, &state.iterate.lambda, &states)?;

    for i in 0..=m {
        let batch: Vec<SampleStat> = per_sample.iter().map(|row| row[i].clone()).collect();
        state.trackers[i] = update_trackers(&state.trackers[i], rho, &batch);
    }

    // Step 2: convex subproblem over (x, λ).
    let domain = problem.domain_x().concat(&LongTermIterate::lambda_box(problem));
    let surrogates: Vec<SurrogateModel> = state
        .trackers
        .iter()
        .map(|tr| build_surrogate(tr, &state.iterate, rho, config.batch_size, None))
        .collect();
    let sub = ConvexSubproblem {
        objective: surrogates[0].clone(),
        constraints: surrogates[1..].to_vec(),
        domain,
        mode: UpdateMode::Objective,
    };
    let (x_bar, lambda_bar, mode) = match solve_objective_update(&sub, &config.ipm)? {
        LongTermUpdate::Point { x, lambda } => {
            // post-hoc check: every surrogate constraint within tolerance,
            // scaled by the constraint's own magnitude at the anchor so that
            // transient huge-coefficient surrogates don't abort the run
            for c in &sub.constraints {
                let v = c.value(&x, &lambda);
                let scale = 1.0 + c.value(&c.anchor_x, &c.anchor_lambda).abs();
                if v > config.feas_tolerance * scale {
                    return Err(Error::NonConvergence(format!(
                        "objective update violates a surrogate constraint by {v:.3e}"
                    )));
                }
            }
            state.objective_updates += 1;
            (x, lambda, UpdateMode::Objective)
        }
        LongTermUpdate::Infeasible { .. } => {
            let (x, lambda, _alpha) = solve_feasibility_update(&sub, &config.ipm)?;
            state.feasibility_updates += 1;
            (x, lambda, UpdateMode::Feasibility)
        }
    };

    // Step 3: iterate averaging, then clamp λ into its box.
    let mut movement = 0.0;
    for (xk, xb) in state.iterate.x.iter_mut().zip(&x_bar) {
        let next = (1.0 - gamma) * *xk + gamma * xb;
        movement += (next - *xk) * (next - *xk);
        *xk = next;
    }
    let mut lmove = 0.0;
    let cap = problem.lambda_cap();
    for (lk, lb) in state.iterate.lambda.iter_mut().zip(&lambda_bar) {
        let next = ((1.0 - gamma) * *lk + gamma * lb).clamp(0.0, cap);
        lmove += (next - *lk) * (next - *lk);
        *lk = next;
    }
    state.lambda_clamp_active =
        state.iterate.lambda.iter().any(|&l| l >= cap - 1e-9);
    state.movement.push(movement.sqrt() + lmove.sqrt());
    state.iterate.t += 1;

    let max_constraint = state.trackers[1..].iter().map(|tr| tr.f).fold(0.0, f64::max);
    state.trace.push(TraceRecord {
        iter: t,
        rho,
        gamma,
        objective: state.trackers[0].f,
        max_constraint,
        mode,
        millis: started.elapsed().as_millis() as u64,
    });
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub iterate: LongTermIterate,
    pub trace: Vec<TraceRecord>,
    pub kkt: KktReport,
    /// SAA objective on the fresh evaluation batch.
    pub saa_objective: f64,
    /// SAA constraint values on the fresh evaluation batch.
    pub saa_constraints: Vec<f64>,
    /// min_i(−f̂_i) strict-feasibility slack (None when m = 0).
    pub slater_margin: Option<f64>,
    /// The run ended having performed feasibility updates only.
    pub infeasible_trajectory: bool,
    /// λ sits at lambda_cap, invalidating the compactness rationale.
    pub lambda_clamp_active: bool,
}

/// SAA values/gradients plus the short-term results on a fresh batch.
pub struct SaaEvaluation {
    pub batch: Vec<(State, ShortTermResult)>,
    /// Mean g_i value, i = 0…m.
    pub values: Vec<f64>,
    /// Mean total x-gradient per constraint index.
    pub grads_x: Vec<Vec<f64>>,
}

pub fn saa_evaluate(
    problem: &dyn ProblemDefinition,
    solver: &dyn ShortTermSolver,
    iterate: &LongTermIterate,
    states: Vec<State>,
) -> Result<SaaEvaluation, Error> {
    let m = problem.num_long();
    let rows: Result<Vec<(State, ShortTermResult, Vec<(f64, Vec<f64>)>)>, Error> = states
        .into_par_iter()
        .map(|xi| {
            let (result, tape) = run_short_term(solver, problem, &iterate.x, &iterate.lambda, &xi)?;
            let stats: Result<Vec<(f64, Vec<f64>)>, Error> = (0..=m)
                .map(|i| {
                    let eval = evaluate_sample(problem, i, &iterate.x, &result.y, &xi)?;
                    let (pushed_x, _) = tape.vjp(&eval.grad_y)?;
                    let total: Vec<f64> =
                        pushed_x.iter().zip(&eval.grad_x).map(|(a, b)| a + b).collect();
                    Ok((eval.value, total))
                })
                .collect();
            Ok((xi, result, stats?))
        })
        .collect();
    let rows = rows?;
    let b = rows.len() as f64;
    let mut values = vec![0.0; m + 1];
    let mut grads_x = vec![vec![0.0; problem.dim_x()]; m + 1];
    for (_, _, stats) in &rows {
        for i in 0..=m {
            values[i] += stats[i].0 / b;
            for (a, v) in grads_x[i].iter_mut().zip(&stats[i].1) {
                *a += v / b;
            }
        }
    }
    let batch = rows.into_iter().map(|(xi, result, _)| (xi, result)).collect();
    Ok(SaaEvaluation { batch, values, grads_x })
}

/// Runs outer steps until the iteration cap or until the movement stays below
/// stop_tolerance over a 10-iteration window, then evaluates a final
/// KktReport on a fresh batch.
pub fn run(
    problem: &dyn ProblemDefinition,
    solver: &dyn ShortTermSolver,
    config: &SolverConfig,
    init: LongTermIterate,
) -> Result<RunOutcome, Error> {
    let mut state = AlgorithmState::new(problem, init, config)?;
    for _ in 0..config.max_iters {
        outer_step(&mut state, problem, solver, config)?;
        let w = state.movement.len();
        if w >= 10 && state.movement[w - 10..].iter().all(|&mv| mv <= config.stop_tolerance) {
            break;
        }
    }
    let eval_states: Vec<State> =
        (0..config.eval_batch).map(|_| problem.draw_state(&mut state.rng)).collect();
    let eval = saa_evaluate(problem, solver, &state.iterate, eval_states)?;
    let m = problem.num_long();
    let saa_f = eval.values[1..].to_vec();
    let kkt = kkt_report(
        problem,
        &state.iterate,
        &eval.batch,
        &saa_f,
        &eval.grads_x,
        solver.provides_multipliers(),
    )?;
    let slater_margin = if m == 0 {
        None
    } else {
        Some(saa_f.iter().map(|f| -f).fold(f64::INFINITY, f64::min))
    };
    Ok(RunOutcome {
        iterate: state.iterate,
        trace: state.trace,
        kkt,
        saa_objective: eval.values[0],
        saa_constraints: saa_f,
        slater_margin,
        infeasible_trajectory: state.objective_updates == 0 && state.feasibility_updates > 0,
        lambda_clamp_active: state.lambda_clamp_active,
    })
}
