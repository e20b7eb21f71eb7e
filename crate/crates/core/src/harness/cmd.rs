use super::config::{Experiment, RuntimeChoice};
use super::{analyze_rows, gradient_descent, reference_optimum, Analysis, HarnessError, Result};
use crate::bfgs::InitMode;
use crate::objective::Problem;
use crate::runtime::{
    parse_trace_csv, run_master_tcp, run_simulated, run_worker_tcp, MasterConfig, Reference, SimConfig, Trace,
    WorkerConfig,
};
use std::fmt::Write as _;
use std::net::{Ipv4Addr, TcpListener};
use std::path::{Path, PathBuf};

/// Ratios are summarized over this many trailing epochs.
pub const LAST_K: usize = 3;

/// What a run command produced on disk, plus the traces themselves.
#[derive(Debug)]
pub struct RunReport {
    pub traces: Vec<Trace>,
    pub trace_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let io = |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, contents).map_err(io)
}

fn sim_config(exp: &Experiment, seed: u64) -> SimConfig {
    let mut c = SimConfig::new(exp.delay_model.clone(), exp.termination)
        .seed(seed)
        .init(exp.init);
    c.max_step = exp.max_step;
    c
}

fn master_config(exp: &Experiment) -> MasterConfig {
    let mut c = MasterConfig::new(exp.termination);
    c.init = exp.init;
    c.max_step = exp.max_step;
    c
}

fn worker_config(id: u32, init: InitMode) -> WorkerConfig {
    let mut c = WorkerConfig::new(id);
    c.init = init;
    c
}

/// Master and `n` workers on loopback, each worker in its own thread.
fn run_tcp_loopback(exp: &Experiment, problem: &Problem, reference: &Reference) -> Result<Trace> {
    let listener = TcpListener::bind((Ipv4Addr::LOCALHOST, 0)).map_err(|source| HarnessError::Io {
        path: "127.0.0.1:0".into(),
        source,
    })?;
    let addr = listener.local_addr().map_err(|source| HarnessError::Io {
        path: "127.0.0.1:0".into(),
        source,
    })?;
    let config = master_config(exp);
    std::thread::scope(|scope| {
        let workers: Vec<_> = problem
            .locals()
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let wc = worker_config(i as u32, exp.init);
                scope.spawn(move || run_worker_tcp(addr, f, &wc))
            })
            .collect();
        let trace = run_master_tcp(listener, problem, Some(reference), &config);
        for w in workers {
            // A worker error is only interesting when the master succeeded.
            let outcome = w.join().expect("worker thread panicked");
            if trace.is_ok() {
                outcome?;
            }
        }
        Ok(trace?)
    })
}

fn ratio_line(trace: &Trace) -> String {
    match analyze_rows(&trace.rows, LAST_K) {
        Ok(a) => {
            let r: Vec<String> = a.ratios().iter().map(|r| format!("{r:e}")).collect();
            format!("rho = [{}]\nmonotone_last_{LAST_K} = {}\n", r.join(", "), a.monotone_last_k)
        }
        Err(e) => format!("rho = unavailable ({e})\n"),
    }
}

fn epochs_to_target(trace: &Trace) -> Option<usize> {
    let t = trace.summary.target_reached_at?;
    trace.rows.iter().rev().find(|r| r.t == t).map(|r| r.epoch)
}

/// Per-repetition summaries followed by averages. Suboptimality is averaged
/// at equal update counts, over the repetitions still running at that count.
fn summary_text(traces: &[Trace], seeds: &[u64]) -> String {
    let mut out = String::new();
    for (k, (trace, seed)) in traces.iter().zip(seeds).enumerate() {
        let _ = writeln!(out, "[repetition {k}]\nseed = {seed}");
        out.push_str(&trace.summary_text());
        out.push_str(&ratio_line(trace));
        out.push('\n');
    }
    if traces.len() > 1 {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let reached: Vec<&Trace> = traces.iter().filter(|t| t.summary.target_reached_at.is_some()).collect();
        let _ = writeln!(out, "[average]\nrepetitions = {}", traces.len());
        let _ = writeln!(out, "reached_target = {}", reached.len());
        if !reached.is_empty() {
            let ups: Vec<f64> = reached.iter().map(|t| t.summary.target_reached_at.unwrap() as f64).collect();
            let eps: Vec<f64> = reached.iter().filter_map(|t| epochs_to_target(t)).map(|e| e as f64).collect();
            let _ = writeln!(out, "mean_updates_to_target = {}", mean(&ups));
            let _ = writeln!(out, "mean_epochs_to_target = {}", mean(&eps));
        }
        let walls: Vec<f64> = traces.iter().map(|t| t.summary.wall_s).collect();
        let _ = writeln!(out, "mean_wall_s = {}", mean(&walls));
        out.push_str("# t,mean_subopt,runs\n");
        let longest = traces.iter().map(|t| t.rows.len()).max().unwrap_or(0);
        for i in 0..longest {
            let v: Vec<f64> = traces.iter().filter_map(|t| t.rows.get(i)).map(|r| r.subopt).collect();
            let _ = writeln!(out, "{},{:e},{}", i + 1, mean(&v), v.len());
        }
    }
    out
}

/// Executes the configured run(s). Repetition `k` uses delay seed
/// `seed + k` on the same data.
pub fn cmd_run(exp: &Experiment) -> Result<RunReport> {
    let problem = exp.build_problem()?;
    let reference = reference_optimum(&problem)?;
    let mut traces = Vec::new();
    let mut trace_paths = Vec::new();
    let mut seeds = Vec::new();
    for k in 0..exp.repetitions {
        let seed = exp.seed + k as u64;
        let trace = match exp.runtime {
            RuntimeChoice::Simulated => run_simulated(&problem, Some(&reference), &sim_config(exp, seed))?,
            RuntimeChoice::Tcp => run_tcp_loopback(exp, &problem, &reference)?,
        };
        let path = if exp.repetitions == 1 {
            exp.output_path(".trace.csv")
        } else {
            exp.output_path(&format!(".rep{k}.trace.csv"))
        };
        write_file(&path, &trace.to_csv())?;
        trace_paths.push(path);
        traces.push(trace);
        seeds.push(seed);
    }
    let summary_path = exp.output_path(".summary.txt");
    write_file(&summary_path, &summary_text(&traces, &seeds))?;
    Ok(RunReport {
        traces,
        trace_paths,
        summary_path,
    })
}

/// Solves the pooled problem and writes `f*` and `x*`.
pub fn cmd_reference(exp: &Experiment) -> Result<(Reference, PathBuf)> {
    let problem = exp.build_problem()?;
    let r = reference_optimum(&problem)?;
    let mut out = format!("# f_star = {:e}\nk,x_star\n", r.f_star);
    for (k, v) in r.x_star.iter().enumerate() {
        let _ = writeln!(out, "{k},{v:e}");
    }
    let path = exp.output_path(".reference.csv");
    write_file(&path, &out)?;
    Ok((r, path))
}

/// Analyzes each trace file and writes `<stem>.analysis.csv` into `out_dir`,
/// or next to the trace when `out_dir` is `None`.
pub fn cmd_analyze(paths: &[PathBuf], out_dir: Option<&Path>) -> Result<Vec<(PathBuf, Analysis)>> {
    let mut results = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let rows = parse_trace_csv(&text).map_err(|e| HarnessError::Analysis(format!("{}: {e}", path.display())))?;
        let analysis = analyze_rows(&rows, LAST_K)?;
        let file = path.file_name().and_then(|f| f.to_str()).unwrap_or("trace.csv");
        let stem = file
            .strip_suffix(".trace.csv")
            .or_else(|| file.strip_suffix(".csv"))
            .unwrap_or(file);
        let dir = out_dir
            .map(Path::to_path_buf)
            .or_else(|| path.parent().map(Path::to_path_buf))
            .unwrap_or_default();
        let out = dir.join(format!("{stem}.analysis.csv"));
        write_file(&out, &analysis.to_csv())?;
        results.push((out, analysis));
    }
    Ok(results)
}

/// Gradient descent on the configured problem, stopped by the same
/// termination rule (an iteration counts as `n` updates).
pub fn cmd_baseline_gd(exp: &Experiment) -> Result<RunReport> {
    let problem = exp.build_problem()?;
    let reference = reference_optimum(&problem)?;
    let iterations = exp.termination.max_updates.div_ceil(exp.n as u64);
    let trace = gradient_descent(&problem, Some(&reference), iterations, exp.termination.target_subopt)?;
    let path = exp.output_path(".gd.trace.csv");
    write_file(&path, &trace.to_csv())?;
    let summary_path = exp.output_path(".gd.summary.txt");
    write_file(&summary_path, &summary_text(std::slice::from_ref(&trace), &[exp.seed]))?;
    Ok(RunReport {
        traces: vec![trace],
        trace_paths: vec![path],
        summary_path,
    })
}

/// TCP master for workers in other processes. Writes the same files as a
/// single `cmd_run`.
pub fn cmd_master(exp: &Experiment, listen: &str, port: u16, workers: usize) -> Result<RunReport> {
    if workers != exp.n {
        return Err(HarnessError::Config {
            field: "n".into(),
            msg: format!("--workers {workers} but the config has n = {}", exp.n),
        });
    }
    let problem = exp.build_problem()?;
    let reference = reference_optimum(&problem)?;
    let listener = TcpListener::bind((listen, port)).map_err(|source| HarnessError::Io {
        path: format!("{listen}:{port}"),
        source,
    })?;
    let trace = run_master_tcp(listener, &problem, Some(&reference), &master_config(exp))?;
    let path = exp.output_path(".trace.csv");
    write_file(&path, &trace.to_csv())?;
    let summary_path = exp.output_path(".summary.txt");
    write_file(&summary_path, &summary_text(std::slice::from_ref(&trace), &[exp.seed]))?;
    Ok(RunReport {
        traces: vec![trace],
        trace_paths: vec![path],
        summary_path,
    })
}

/// TCP worker `id`, serving its shard of the configured problem until STOP.
pub fn cmd_worker(exp: &Experiment, connect: &str, port: u16, id: u32) -> Result<u64> {
    if id as usize >= exp.n {
        return Err(HarnessError::Config {
            field: "n".into(),
            msg: format!("--id {id} but the config has n = {}", exp.n),
        });
    }
    let problem = exp.build_problem()?;
    let f = problem.local(id as usize);
    Ok(run_worker_tcp((connect, port), f, &worker_config(id, exp.init))?)
}
