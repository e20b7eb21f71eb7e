//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use daveqn::bfgs::{bfgs_rank_two, CurvaturePair, InitMode};
use daveqn::harness::{analyze_rows, cmd_baseline_gd, cmd_run, parse_config, reference_optimum, LAST_K};
use daveqn::linalg::{self, is_positive_definite, SymMatrix, Vector};
use daveqn::objective::{synth_logistic, synth_quadratic, LocalObjective, Problem};
use daveqn::oracle::{check_epoch_laws, check_inverse, finite_diff_grad, finite_diff_hessian, recompute_master, replay_reference};
use daveqn::runtime::{
    run_master_tcp, run_simulated, run_worker_tcp, DelayModel, MasterConfig, SimConfig, Simulator, Termination,
    Trace, WorkerConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::net::{Ipv4Addr, TcpListener};
use std::path::Path;
use std::time::Instant;

const IDENTITY_TOL: f64 = 1e-8;
const DRIFT_TOL: f64 = 1e-6;
const FRESH_INVERSE_TOL: f64 = 1e-12;
const SECANT_TOL: f64 = 1e-10;
const ONE_STEP_TOL: f64 = 1e-10;
const RATIO_TOL: f64 = 0.1;
const MAX_EPOCHS: usize = 60;
const SPEEDUP: f64 = 10.0;
const REPLAY_TOL: f64 = 1e-9;
const GRAD_TOL: f64 = 1e-6;
const HESS_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-5;

type Outcome = Result<String, String>;

fn rel(a: &[f64], b: &[f64]) -> f64 {
    linalg::norm(&linalg::sub(a, b)) / (1.0 + linalg::norm(b))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn identity_problem() -> Problem {
    synth_logistic(7, 4, 8, 50, 100.0, 0.1).problem().unwrap()
}

fn identity_config() -> SimConfig {
    SimConfig::new(DelayModel::UniformBounded(5.0), Termination::updates(500)).seed(7)
}

/// Steps the simulator and compares every iterate with the master rebuilt
/// from scratch out of the worker states.
fn iterate_identity() -> Outcome {
    let start = Instant::now();
    let problem = identity_problem();
    let mut sim = Simulator::new(&problem, None, &identity_config()).unwrap();
    let mut worst = 0.0f64;
    let mut steps = 0;
    loop {
        let stop = sim.step().unwrap();
        steps += 1;
        let oracle = recompute_master(sim.workers(), &problem).unwrap();
        worst = worst.max(rel(sim.master().x(), &oracle.x));
        if stop.is_some() {
            break;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        steps == 500 && worst <= IDENTITY_TOL && secs < 5.0,
        format!("{steps} updates, max rel err {worst:.2e} (tol {IDENTITY_TOL:e}), {secs:.2}s (limit 5s)"),
    )
}

fn inverse_drift() -> Outcome {
    let problem = identity_problem();
    let mut sim = Simulator::new(&problem, None, &identity_config()).unwrap();
    let fresh = check_inverse(sim.master().b_inv(), sim.workers()).unwrap();
    while sim.step().unwrap().is_none() {}
    let drift = check_inverse(sim.master().b_inv(), sim.workers()).unwrap();
    let mut master = sim.master().clone();
    let mut sum = SymMatrix::zeros(problem.dim());
    for w in sim.workers() {
        sum.add_assign(w.hessian_approx()).unwrap();
    }
    master.refactorize_from(sum).unwrap();
    let refactored = check_inverse(master.b_inv(), sim.workers()).unwrap();
    check(
        sim.master().t() == 500 && fresh <= FRESH_INVERSE_TOL && drift <= DRIFT_TOL && refactored <= FRESH_INVERSE_TOL,
        format!(
            "init {fresh:.2e}, after {} updates {drift:.2e} (tol {DRIFT_TOL:e}), after refactorization {refactored:.2e} (tol {FRESH_INVERSE_TOL:e})",
            sim.master().t()
        ),
    )
}

fn random_spd(rng: &mut ChaCha8Rng, p: usize) -> SymMatrix {
    let g: Vec<f64> = (0..p * p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut m = SymMatrix::zeros(p);
    for i in 0..p {
        for j in i..p {
            let v: f64 = (0..p).map(|k| g[i * p + k] * g[j * p + k]).sum();
            m.set(i, j, v);
        }
    }
    m.add_diagonal(rng.random_range(0.05..2.0));
    m.symmetrize();
    m
}

fn secant_and_pd() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut not_pd = 0;
    for _ in 0..200 {
        let p = rng.random_range(1..=8);
        let b = random_spd(&mut rng, p);
        let a = random_spd(&mut rng, p);
        let s: Vector = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = a.mat_vec(&s).unwrap();
        let pair = CurvaturePair::new(&b, s.clone(), y.clone()).unwrap();
        let b_new = bfgs_rank_two(&b, &pair).unwrap();
        let res = linalg::norm(&linalg::sub(&b_new.mat_vec(&s).unwrap(), &y)) / (1.0 + linalg::norm(&y));
        worst = worst.max(res);
        if !is_positive_definite(&b_new) {
            not_pd += 1;
        }
    }
    check(
        worst <= SECANT_TOL && not_pd == 0,
        format!("200 updates, max ‖B′s−y‖/(1+‖y‖) = {worst:.2e} (tol {SECANT_TOL:e}), {not_pd} not PD"),
    )
}

/// `−(Σ A_i)⁻¹ Σ b_i` by a direct solve.
fn quadratic_minimizer(problem: &Problem) -> Vector {
    let p = problem.dim();
    let mut a = SymMatrix::zeros(p);
    let mut b = vec![0.0; p];
    for f in problem.locals() {
        let LocalObjective::Quadratic { a: ai, b: bi } = f else {
            panic!("quadratic expected")
        };
        a.add_assign(ai).unwrap();
        linalg::axpy(1.0, bi, &mut b);
    }
    linalg::scale(-1.0, &linalg::spd_factor_solve(&a, &b).unwrap())
}

fn quadratic_one_step() -> Outcome {
    let models = [
        DelayModel::FixedRoundRobin,
        DelayModel::UniformBounded(10.0),
        DelayModel::HeavyTailBoundedMean(2.0),
    ];
    let mut worst = 0.0f64;
    let mut runs = 0;
    for seed in 0..5u64 {
        let problem = synth_quadratic(seed, 2 + seed as usize, 3 + seed as usize, 1e3);
        let x_star = quadratic_minimizer(&problem);
        for model in &models {
            let cfg = SimConfig::new(model.clone(), Termination::updates(1))
                .seed(seed)
                .init(InitMode::ExactLocalHessian);
            let trace = run_simulated(&problem, None, &cfg).unwrap();
            worst = worst.max(linalg::norm(&linalg::sub(&trace.iterates[1], &x_star)));
            runs += 1;
        }
    }
    check(
        worst <= ONE_STEP_TOL,
        format!("{runs} runs over 3 schedules, max ‖x¹−x*‖ = {worst:.2e} (tol {ONE_STEP_TOL:e})"),
    )
}

/// Traces from every delay model at several sizes and seeds.
fn law_traces() -> Vec<(String, Trace)> {
    let mut out = Vec::new();
    for n in 1..=5usize {
        let problem = synth_quadratic(n as u64, n, 3, 10.0);
        let mut models = vec![
            ("round_robin".to_string(), DelayModel::FixedRoundRobin),
            ("uniform(0)".into(), DelayModel::UniformBounded(0.0)),
            ("uniform(3)".into(), DelayModel::UniformBounded(3.0)),
            ("uniform(10)".into(), DelayModel::UniformBounded(10.0)),
            ("heavy_tail(1)".into(), DelayModel::HeavyTailBoundedMean(1.0)),
            ("heavy_tail(5)".into(), DelayModel::HeavyTailBoundedMean(5.0)),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let order: Vec<usize> = (0..200).map(|_| rng.random_range(0..n)).collect();
        models.push(("random schedule".into(), DelayModel::Schedule(order)));
        for (name, model) in models {
            for seed in 0..3 {
                let cfg = SimConfig::new(model.clone(), Termination::updates(200)).seed(seed);
                out.push((format!("n={n} {name} seed={seed}"), run_simulated(&problem, None, &cfg).unwrap()));
            }
        }
    }
    let problem = identity_problem();
    out.push(("identity run".into(), run_simulated(&problem, None, &identity_config()).unwrap()));
    out
}

/// The recorded `D` and epoch columns must agree with the oracle's
/// brute-force recomputation, and the laws must hold.
fn epoch_laws(extra: &[(String, Trace)]) -> Outcome {
    let traces = law_traces();
    let mut violations = 0;
    let mut mismatched = Vec::new();
    let mut checked = 0;
    for (name, trace) in traces.iter().chain(extra) {
        let schedule = trace.schedule();
        let report = check_epoch_laws(trace.n_workers, &schedule);
        violations += report.violations();
        let d: Vec<u64> = trace.rows.iter().map(|r| r.double_delay).collect();
        let e: Vec<usize> = trace.rows.iter().map(|r| r.epoch).collect();
        if d != report.double_delays || e != report.epochs || trace.epoch_starts != report.epoch_starts {
            mismatched.push(name.clone());
        }
        checked += 1;
    }
    check(
        violations == 0 && mismatched.is_empty(),
        format!("{checked} traces, {violations} violations, column mismatches {mismatched:?}"),
    )
}

fn temp_config(dir: &Path, name: &str, body: &str) -> daveqn::harness::Experiment {
    parse_config(&format!("{body}output_dir = \"{}\"\nname = \"{name}\"\n", dir.display())).unwrap()
}

const SUPERLINEAR: &str = "problem = \"logistic\"\nn = 8\np = 20\nm_per = 100\nlambda = 0.1\n\
    delay_model = \"uniform\"\ndelay_param = 5.0\nseed = 3\n\
    init = \"scaled_identity\"\ninit_scale = 1.0\nmax_updates = 1000000\n";

fn superlinear(dir: &Path, traces: &mut Vec<(String, Trace)>) -> Outcome {
    let start = Instant::now();
    let exp = temp_config(
        dir,
        "superlinear",
        &format!("{SUPERLINEAR}condition_target = 100.0\ntarget_subopt = 1e-10\n"),
    );
    let report = cmd_run(&exp).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let trace = &report.traces[0];
    let reached = trace.summary.target_reached_at;
    let epoch = reached.and_then(|t| trace.rows.iter().find(|r| r.t == t)).map(|r| r.epoch);
    let analysis = analyze_rows(&trace.rows, LAST_K);
    let outcome = match analysis {
        Ok(a) => {
            let last = a.last_ratios();
            let small = last.len() == LAST_K && last.iter().all(|&r| r <= RATIO_TOL);
            let shown: Vec<String> = last.iter().map(|r| format!("{r:.3}")).collect();
            check(
                epoch.is_some_and(|m| m <= MAX_EPOCHS) && small && a.monotone_last_k && secs < 10.0,
                format!(
                    "target 1e-10 reached in epoch {epoch:?} (limit {MAX_EPOCHS}), last {LAST_K} ratios [{}] (each ≤ {RATIO_TOL}, decreasing: {}), {secs:.2}s (limit 10s)",
                    shown.join(", "),
                    a.monotone_last_k
                ),
            )
        }
        Err(e) => Err(format!("analysis refused: {e}")),
    };
    traces.push(("superlinear run".into(), trace.clone()));
    outcome
}

fn gd_comparison(dir: &Path, traces: &mut Vec<(String, Trace)>) -> Outcome {
    let body = format!("{SUPERLINEAR}condition_target = 1000.0\ntarget_subopt = 1e-6\n");
    let qn = cmd_run(&temp_config(dir, "qn", &body)).unwrap();
    let gd = cmd_baseline_gd(&temp_config(dir, "gd", &body)).unwrap();
    let qn_updates = qn.traces[0].summary.target_reached_at;
    let gd_updates = gd.traces[0].summary.target_reached_at;
    traces.push(("comparison run".into(), qn.traces[0].clone()));
    match (qn_updates, gd_updates) {
        (Some(q), Some(g)) => check(
            g as f64 >= SPEEDUP * q as f64,
            format!("updates to 1e-6: quasi-Newton {q}, gradient descent {g} ({:.1}x, need {SPEEDUP}x)", g as f64 / q as f64),
        ),
        other => Err(format!("target not reached: {other:?}")),
    }
}

fn tcp_replay(traces: &mut Vec<(String, Trace)>) -> Outcome {
    let problem = synth_quadratic(11, 2, 5, 100.0);
    let init = InitMode::LocalSmoothness;
    let listener = TcpListener::bind((Ipv4Addr::LOCALHOST, 0)).unwrap();
    let addr = listener.local_addr().unwrap();
    let mut config = MasterConfig::new(Termination::updates(60));
    config.init = init;
    let trace = std::thread::scope(|scope| {
        let workers: Vec<_> = problem
            .locals()
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let mut wc = WorkerConfig::new(i as u32);
                wc.init = init;
                scope.spawn(move || run_worker_tcp(addr, f, &wc))
            })
            .collect();
        let trace = run_master_tcp(listener, &problem, None, &config).unwrap();
        for w in workers {
            w.join().unwrap().unwrap();
        }
        trace
    });
    let schedule = trace.schedule();
    let sim_cfg = SimConfig::new(DelayModel::Schedule(schedule.clone()), Termination::updates(60)).init(init);
    let replayed = run_simulated(&problem, None, &sim_cfg).unwrap();
    let literal = replay_reference(&schedule, &problem, init, &vec![0.0; problem.dim()]).unwrap();
    let same_len = replayed.iterates.len() == trace.iterates.len() && literal.len() == trace.iterates.len();
    let worst_sim = trace
        .iterates
        .iter()
        .zip(&replayed.iterates)
        .map(|(a, b)| rel(a, b))
        .fold(0.0, f64::max);
    let worst_literal = trace.iterates.iter().zip(&literal).map(|(a, b)| rel(a, b)).fold(0.0, f64::max);
    traces.push(("tcp run".into(), trace.clone()));
    check(
        same_len && worst_sim <= REPLAY_TOL && worst_literal <= REPLAY_TOL,
        format!(
            "{} tcp updates, max rel err vs simulator {worst_sim:.2e}, vs literal replay {worst_literal:.2e} (tol {REPLAY_TOL:e})",
            schedule.len()
        ),
    )
}

fn determinism() -> Outcome {
    let problem = synth_logistic(5, 4, 6, 40, 100.0, 0.05).problem().unwrap();
    let reference = reference_optimum(&problem).unwrap();
    let mut identical = 0;
    let models = [
        DelayModel::UniformBounded(5.0),
        DelayModel::HeavyTailBoundedMean(3.0),
        DelayModel::FixedRoundRobin,
    ];
    for model in &models {
        let cfg = SimConfig::new(model.clone(), Termination::updates(300)).seed(99);
        let a = run_simulated(&problem, Some(&reference), &cfg).unwrap().to_csv();
        let b = run_simulated(&problem, Some(&reference), &cfg).unwrap().to_csv();
        if a.as_bytes() == b.as_bytes() {
            identical += 1;
        }
    }
    check(
        identical == models.len(),
        format!("{identical}/{} delay models give byte-identical CSVs", models.len()),
    )
}

fn derivative_oracles() -> Outcome {
    let objectives = [
        ("logistic", synth_logistic(13, 1, 6, 40, 100.0, 0.1).problem().unwrap()),
        ("quadratic", synth_quadratic(13, 1, 6, 100.0)),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_g = 0.0f64;
    let mut worst_h = 0.0f64;
    for (_, problem) in &objectives {
        let f = problem.local(0);
        for _ in 0..10 {
            let x: Vector = (0..f.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = f.grad(&x).unwrap();
            let fd = finite_diff_grad(f, &x, FD_STEP).unwrap();
            worst_g = worst_g.max(linalg::norm(&linalg::sub(&fd, &g)) / linalg::norm(&g));
            let h = f.hessian(&x).unwrap();
            let fdh = finite_diff_hessian(f, &x, FD_STEP).unwrap();
            worst_h = worst_h.max(fdh.sub(&h).unwrap().frobenius_norm() / h.frobenius_norm());
        }
    }
    check(
        worst_g <= GRAD_TOL && worst_h <= HESS_TOL,
        format!("10 points per objective, grad rel err {worst_g:.2e} (tol {GRAD_TOL:e}), hessian rel err {worst_h:.2e} (tol {HESS_TOL:e})"),
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut traces = Vec::new();
    let mut results: Vec<(&str, Outcome)> = vec![
        ("iterate identity", iterate_identity()),
        ("inverse maintenance", inverse_drift()),
        ("secant and positive definiteness", secant_and_pd()),
        ("quadratic one-step exactness", quadratic_one_step()),
    ];
    let superlinear = superlinear(dir.path(), &mut traces);
    let comparison = gd_comparison(dir.path(), &mut traces);
    let replay = tcp_replay(&mut traces);
    results.push(("epoch and delay laws", epoch_laws(&traces)));
    results.push(("superlinear trend", superlinear));
    results.push(("first-order comparison", comparison));
    results.push(("runtime equivalence", replay));
    results.push(("determinism", determinism()));
    results.push(("derivative oracles", derivative_oracles()));

    let mut failed = 0;
    for (k, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
