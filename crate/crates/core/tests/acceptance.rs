//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use turnpike_core::hydro::euler::{
    cost_g, feedback_controls, primitives, simulate_euler, EulerConfig, EulerFeedback, EulerState,
};
use turnpike_core::hydro::pressureless::{simulate_pless, PlessConfig, PlessInitial};
use turnpike_core::hydro::SolverParams;
use turnpike_core::kernel::KernelSpec;
use turnpike_core::meanfield::{convergence_study, wasserstein1_1d, StudyConfig};
use turnpike_core::particle::{sample_initial, simulate, ControlLaw};
use turnpike_core::turnpike::{
    abstract_constants, c_lambda, cheap_control_check, check_bound, fit_exponential, hypotheses_hold,
    monotone_bound_check, CostSeries,
};

const SEED: u64 = 20240607;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// The particle setup shared by A1 and A3.
fn particle_run(beta: f64, lambda: f64, t_end: f64) -> turnpike_core::particle::ParticleTrajectory<f64> {
    let init = sample_initial(30, 1, &[0.0], &[0.0], 1.0, SEED).unwrap();
    let law = ControlLaw::feedback(beta, vec![0.5]).unwrap();
    simulate(&init, &KernelSpec::reference(), &law, 1e-3, t_end, lambda, &[0.5]).unwrap()
}

fn a1() -> Outcome {
    let beta = 2.0;
    let traj = particle_run(beta, 0.25, 4.0);
    let series = CostSeries::new(traj.times.clone(), traj.state_cost.clone()).unwrap();
    let envelope = check_bound(&series, 1.0, 2.0 * beta, 1e-6);
    let total = CostSeries::new(traj.times.clone(), traj.total_integrand()).unwrap();
    let fit = fit_exponential(&total, (1.0, 3.0), 0.0).unwrap();
    let slope_ok = (fit.slope() + 2.0 * beta).abs() <= 0.1 * 2.0 * beta;
    outcome(
        envelope.satisfied && slope_ok,
        format!(
            "envelope max excess {:.3e}; slope {:.4} (target -4 +/- 0.4)",
            envelope.max_violation,
            fit.slope()
        ),
    )
}

fn a2() -> Outcome {
    let init = sample_initial(30, 1, &[0.0], &[0.0], 1.0, SEED).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for lambda in [0.25f64, 1.0, 4.0] {
        let law = ControlLaw::cheap_control(lambda, vec![0.5]).unwrap();
        let t_end = 10.0 * lambda.sqrt();
        let traj = simulate(&init, &KernelSpec::reference(), &law, 1e-3, t_end, lambda, &[0.5]).unwrap();
        let total = traj.total_cost();
        let ok = cheap_control_check(total, traj.state_cost[0], lambda, 1e-3);
        pass &= ok;
        parts.push(format!(
            "lambda={lambda}: J/(sqrt(lambda) E0) = {:.6}",
            total / (lambda.sqrt() * traj.state_cost[0])
        ));
    }
    outcome(pass, parts.join("; "))
}

fn a3() -> Outcome {
    let lambda = 0.25;
    let traj = particle_run(2.0, lambda, 4.0);
    let series = CostSeries::new(traj.times.clone(), traj.state_cost.clone()).unwrap();
    let c = c_lambda(lambda).unwrap();
    let ok = monotone_bound_check(&series, c, 1e-6);
    outcome(ok, format!("C_lambda = {c}, {} samples", series.len()))
}

fn a4() -> Outcome {
    let cfg = StudyConfig {
        d: 1,
        dt: 0.05,
        t_end: 2.0,
        lambda: 1.0,
        sigma: 1.0,
        mean_x: vec![0.0],
        mean_v: vec![0.5],
        v_bar: vec![0.5],
        tol: 1e-3,
    };
    let table = convergence_study(&[100, 1000, 10_000], &cfg, &KernelSpec::reference(), SEED, 1).unwrap();
    let d = 1.0;
    let sigma2 = 1.0;
    let moments_ok = table.rows.iter().all(|r| {
        let se = (2.0 * d * sigma2 * sigma2 / r.n as f64).sqrt();
        (r.moment2_t0 - d * sigma2).abs() <= 3.0 * se
    });
    let cheap_ok = table.rows.iter().all(|r| r.cheap_control_ok);
    let w1_ok = table
        .rows
        .windows(2)
        .all(|w| w[1].w1_x < w[0].w1_x && w[1].w1_v < w[0].w1_v);
    let detail = table
        .rows
        .iter()
        .map(|r| {
            format!(
                "N={} m2(0)={:.4} J/E0={:.4} W1x={:.3e} W1v={:.3e}",
                r.n,
                r.moment2_t0,
                r.cost_total / r.moment2_t0,
                r.w1_x,
                r.w1_v
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    outcome(moments_ok && cheap_ok && w1_ok, detail)
}

fn a5() -> Outcome {
    let cfg = PlessConfig::<f64>::reference();
    let run = simulate_pless(&cfg, &KernelSpec::reference()).unwrap();
    let monotone = run.energy.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-6));
    let series = CostSeries::new(run.times.clone(), run.energy.clone()).unwrap();
    let envelope = check_bound(&series, 1.0, 2.0 * cfg.beta, 1e-3);
    let drift = run.mass_drift();
    let fit = fit_exponential(&series, (0.5, 2.0), 0.0).unwrap();
    let slope_ok = (fit.slope() + 4.0).abs() <= 0.4;
    let pass = monotone && envelope.satisfied && drift <= 1e-12 && run.stats.floor_events == 0 && slope_ok;
    outcome(
        pass,
        format!(
            "monotone={monotone}; envelope excess {:.3e}; mass drift {:.2e}; floor events {}; slope {:.4}",
            envelope.max_violation,
            drift,
            run.stats.floor_events,
            fit.slope()
        ),
    )
}

fn a6() -> Outcome {
    let (rho0, u0, beta, v_bar, t_end) = (0.1, 0.3, 2.0, -0.1, 2.0);
    let error = |m_cells: usize, refine: f64| {
        let mut cfg = PlessConfig::<f64>::reference();
        cfg.m_cells = m_cells;
        cfg.beta = beta;
        cfg.v_bar = v_bar;
        cfg.t_end = t_end;
        cfg.initial = PlessInitial::Uniform { rho0, u0 };
        let base = SolverParams::<f64>::default();
        cfg.params.cfl = base.cfl / refine;
        cfg.params.source_cfl = base.source_cfl / refine;
        let run = simulate_pless(&cfg, &KernelSpec::reference()).unwrap();
        let state = run.final_state();
        let exact = v_bar + (u0 - v_bar) * (-beta * state.t).exp();
        state.velocity().iter().fold(0.0f64, |e, &u| e.max((u - exact).abs()))
    };
    let e1 = error(200, 1.0);
    let e2 = error(400, 2.0);
    let e3 = error(800, 4.0);
    let order = (e1 / e2).log2();
    let order_fine = (e2 / e3).log2();
    outcome(
        e1 <= 1e-4 && order >= 1.9 && order_fine >= 1.9,
        format!("error {e1:.3e} at M=200; observed orders {order:.3}, {order_fine:.3}"),
    )
}

fn a7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let rho: f64 = rng.gen_range(1e-2..5.0);
        let u: f64 = rng.gen_range(-2.0..2.0);
        let e: f64 = rng.gen_range(1e-2..2.0);
        let beta: f64 = rng.gen_range(0.1..5.0);
        let v_bar: f64 = rng.gen_range(-2.0..2.0);
        let s = EulerState::new(0.0, vec![rho; 2], vec![rho * u; 2], vec![rho * (e + 0.5 * u * u); 2]).unwrap();
        let fb = EulerFeedback::new(beta, v_bar).unwrap();
        let (f1, f2) = feedback_controls(&s, &fb);
        let g = cost_g(&s, &f1, &f2).unwrap();
        let p = primitives(&s).unwrap();
        let w = p.u[0] - v_bar;
        let expected = beta * beta * rho * w * w + 2.0 * beta * beta * rho * p.e[0];
        worst = worst.max((g[0] - expected).abs() / expected);
    }
    outcome(
        worst <= 1e-12,
        format!("max relative error {worst:.3e} over 1000 cells"),
    )
}

fn a8() -> Outcome {
    let cfg = EulerConfig::<f64>::reference();
    let kernel = KernelSpec::reference();
    let run = simulate_euler(&cfg, &kernel).unwrap();
    let series = CostSeries::new(run.times.clone(), run.h.clone()).unwrap();
    let envelope = check_bound(&series, 1.0, 2.0 * cfg.beta, 1e-3);
    let q1_exact = run.stats.max_abs_q1_integral == 0.0;
    let q2_sign = run.stats.max_q2_integral <= 0.0;

    let mut cheap = cfg.clone();
    cheap.beta = 1.0 / cheap.lambda.sqrt();
    let run_c = simulate_euler(&cheap, &kernel).unwrap();
    let total = run_c.total_cost();
    let cheap_ok = cheap_control_check(total, run_c.state_cost[0], cheap.lambda, 1e-2);
    let floors = run.stats.floor_events + run_c.stats.floor_events;
    outcome(
        envelope.satisfied && q1_exact && q2_sign && cheap_ok && floors == 0,
        format!(
            "q2 form {:?}; envelope excess {:.3e}; max|sum Q1 dx| = {:e}; max sum Q2 dx = {:.3e}; J/(sqrt(lambda) S0) = {:.5}; floor events {floors}",
            cfg.params.q2_form,
            envelope.max_violation,
            run.stats.max_abs_q1_integral,
            run.stats.max_q2_integral,
            total / (cheap.lambda.sqrt() * run_c.state_cost[0])
        ),
    )
}

fn a9() -> Outcome {
    let series = CostSeries::sample(0.0, 10.0, 1000, |t: f64| 2.0 * (-3.0 * t).exp()).unwrap();
    let (c0, c1) = (1.0 / 3.0 * (1.0 + 1e-2), 1.0 + 1e-6);
    let hyp = hypotheses_hold(&series, c0, c1, 0.0);
    let k = abstract_constants(c0, c1).unwrap();
    let bound = check_bound(&series, k.c, k.alpha, 1e-6);
    let fit = fit_exponential(&series, (0.0, 10.0), 0.0).unwrap();
    let alpha_ok = (fit.alpha_hat - 3.0).abs() <= 1e-10;
    outcome(
        hyp && bound.satisfied && alpha_ok,
        format!(
            "hypotheses={hyp}; envelope C={:.6}, alpha={:.6}, excess {:.3e}; alpha_hat - 3 = {:.2e}",
            k.c,
            k.alpha,
            bound.max_violation,
            fit.alpha_hat - 3.0
        ),
    )
}

fn brute_force_w1(a: &[f64], b: &[f64]) -> f64 {
    fn permute(k: usize, perm: &mut Vec<usize>, a: &[f64], b: &[f64], best: &mut f64) {
        if k == perm.len() {
            let cost = perm.iter().enumerate().fold(0.0, |s, (i, &j)| s + (a[i] - b[j]).abs());
            *best = best.min(cost);
            return;
        }
        for s in k..perm.len() {
            perm.swap(k, s);
            permute(k + 1, perm, a, b, best);
            perm.swap(k, s);
        }
    }
    let mut perm: Vec<usize> = (0..a.len()).collect();
    let mut best = f64::INFINITY;
    permute(0, &mut perm, a, b, &mut best);
    best / a.len() as f64
}

fn a10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    // Dyadic samples keep every partial sum exact, so "equal" means bit-equal.
    let dyadic = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-4096i32..=4096) as f64 / 64.0).collect()
    };
    let mut exact_ok = true;
    for _ in 0..200 {
        let n = rng.gen_range(1..=6);
        let a = dyadic(&mut rng, n);
        let b = dyadic(&mut rng, n);
        exact_ok &= wasserstein1_1d(&a, &b).unwrap() == brute_force_w1(&a, &b);
    }
    let mut axioms_ok = true;
    let mut worst_triangle = f64::NEG_INFINITY;
    for _ in 0..200 {
        let n = rng.gen_range(1..=50);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect() };
        let (a, b, c) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let ab = wasserstein1_1d(&a, &b).unwrap();
        let ba = wasserstein1_1d(&b, &a).unwrap();
        let bc = wasserstein1_1d(&b, &c).unwrap();
        let ac = wasserstein1_1d(&a, &c).unwrap();
        let aa = wasserstein1_1d(&a, &a).unwrap();
        worst_triangle = worst_triangle.max(ac - ab - bc);
        axioms_ok &= ab >= 0.0 && (ab - ba).abs() <= 1e-12 && aa.abs() <= 1e-12 && ac <= ab + bc + 1e-12;
    }
    outcome(
        exact_ok && axioms_ok,
        format!("brute force exact={exact_ok}; axioms={axioms_ok} (worst triangle slack {worst_triangle:.3e})"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("A1", a1),
        ("A2", a2),
        ("A3", a3),
        ("A4", a4),
        ("A5", a5),
        ("A6", a6),
        ("A7", a7),
        ("A8", a8),
        ("A9", a9),
        ("A10", a10),
    ];
    let start = Instant::now();
    let mut failed = 0;
    for (id, run) in criteria {
        let t = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{id:<4} {tag}  {}  [{:.2}s]", o.detail, t.elapsed().as_secs_f64());
        if !o.pass {
            failed += 1;
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        criteria.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
