//! Hot-path benchmarks: short-term solves, reverse sweeps, and one outer
//! iteration of each application.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pdd_ssca::apps::{cmac_problem, thp_problem, CmacInstance, ThpInstance};
use pdd_ssca::problem::{LongTermIterate, ProblemDefinition};
use pdd_ssca::shortterm::{CmacClosedForm, WmmseSolver};
use pdd_ssca::{grad_through, outer_step, run_short_term, AlgorithmState, SolverConfig};

fn bench_cmac_short_term(c: &mut Criterion) {
    let inst = CmacInstance::default();
    let p = cmac_problem(inst.clone());
    let solver = CmacClosedForm { users: 2, p_cap: inst.p_domain_cap };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xi = p.draw_state(&mut rng);
    let lambda = [0.4, 0.4, 0.6];
    c.bench_function("cmac_closed_form_solve", |b| {
        b.iter(|| run_short_term(&solver, &p, &[], &lambda, &xi).unwrap())
    });
}

fn bench_wmmse_unrolled(c: &mut Criterion) {
    let inst = ThpInstance::reduced();
    let p = thp_problem(inst.clone());
    let solver = WmmseSolver {
        antennas: inst.antennas,
        rf_chains: inst.rf_chains,
        users: inst.users,
        layers: 5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let theta: Vec<f64> = (0..p.dim_x()).map(|_| rng.gen::<f64>() * 6.28 - 3.14).collect();
    let lambda = [1.0, 1.0];
    let xi = p.draw_state(&mut rng);
    c.bench_function("wmmse_unrolled_solve_j5", |b| {
        b.iter(|| run_short_term(&solver, &p, &theta, &lambda, &xi).unwrap())
    });
    let (result, tape) = run_short_term(&solver, &p, &theta, &lambda, &xi).unwrap();
    c.bench_function("wmmse_reverse_sweep", |b| {
        b.iter(|| grad_through(&p, 1, &theta, &lambda, &xi, &result, &tape).unwrap())
    });
}

fn bench_outer_iterations(c: &mut Criterion) {
    let inst = CmacInstance::default();
    let p = cmac_problem(inst.clone());
    let solver = CmacClosedForm { users: 2, p_cap: inst.p_domain_cap };
    let config = SolverConfig { max_iters: 1, seed: 3, ..SolverConfig::default() };
    c.bench_function("cmac_outer_step", |b| {
        b.iter_batched(
            || {
                let init = LongTermIterate::new(vec![], vec![1.0, 1.0, 1.0]);
                AlgorithmState::new(&p, init, &config).unwrap()
            },
            |mut state| outer_step(&mut state, &p, &solver, &config).unwrap(),
            criterion::BatchSize::SmallInput,
        )
    });

    let tinst = ThpInstance::reduced();
    let tp = thp_problem(tinst.clone());
    let tsolver = WmmseSolver {
        antennas: tinst.antennas,
        rf_chains: tinst.rf_chains,
        users: tinst.users,
        layers: 5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let theta: Vec<f64> = (0..tp.dim_x()).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
    c.bench_function("thp_outer_step", |b| {
        b.iter_batched(
            || {
                let init = LongTermIterate::new(theta.clone(), vec![1.0, 1.0]);
                AlgorithmState::new(&tp, init, &config).unwrap()
            },
            |mut state| outer_step(&mut state, &tp, &tsolver, &config).unwrap(),
            criterion::BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_cmac_short_term, bench_wmmse_unrolled, bench_outer_iterations);
criterion_main!(benches);
