use clap::{Parser, Subcommand};
use daveqn::harness::{
    cmd_analyze, cmd_baseline_gd, cmd_master, cmd_reference, cmd_run, cmd_worker, load_config, HarnessError,
    RunReport,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "daveqn", version, about = "Asynchronous distributed quasi-Newton experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment (simulated or loopback TCP).
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Per-epoch residual ratios of one or more trace files.
    Analyze {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Where to write the analysis files; next to each trace by default.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Solve the pooled problem to high accuracy.
    Reference {
        #[arg(long)]
        config: PathBuf,
    },
    /// Centralized gradient descent with backtracking.
    BaselineGd {
        #[arg(long)]
        config: PathBuf,
    },
    /// TCP master; waits for `--workers` workers.
    Master {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        listen: String,
        #[arg(long)]
        port: u16,
        #[arg(long)]
        workers: usize,
    },
    /// TCP worker serving shard `--id`.
    Worker {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        connect: String,
        #[arg(long)]
        port: u16,
        #[arg(long)]
        id: u32,
    },
}

fn print_report(report: &RunReport) {
    for (trace, path) in report.traces.iter().zip(&report.trace_paths) {
        let s = &trace.summary;
        println!(
            "{}: {} updates, final subopt {:e}, stop {:?}",
            path.display(),
            s.updates,
            s.final_subopt,
            s.stop
        );
    }
    println!("summary: {}", report.summary_path.display());
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config } => print_report(&cmd_run(&load_config(config)?)?),
        Command::Analyze { traces, out_dir } => {
            for (path, a) in cmd_analyze(&traces, out_dir.as_deref())? {
                let last: Vec<String> = a.last_ratios().iter().map(|r| format!("{r:.3e}")).collect();
                println!(
                    "{}: {} epochs, last ratios [{}], monotone {}",
                    path.display(),
                    a.epochs.len(),
                    last.join(", "),
                    a.monotone_last_k
                );
            }
        }
        Command::Reference { config } => {
            let (r, path) = cmd_reference(&load_config(config)?)?;
            println!("f* = {:e}\nwritten to {}", r.f_star, path.display());
        }
        Command::BaselineGd { config } => print_report(&cmd_baseline_gd(&load_config(config)?)?),
        Command::Master {
            config,
            listen,
            port,
            workers,
        } => print_report(&cmd_master(&load_config(config)?, &listen, port, workers)?),
        Command::Worker {
            config,
            connect,
            port,
            id,
        } => {
            let sent = cmd_worker(&load_config(config)?, &connect, port, id)?;
            println!("worker {id}: {sent} updates sent");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
