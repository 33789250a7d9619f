//! Command-line harness for the statroute pipelines.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 bad input.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use statroute::report::{self, RunConfig, RunMode};

#[derive(Parser)]
#[command(name = "statroute", version, about = "Statistical routing for multihop cognitive-radio networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a pipeline mode on a scenario and write artifacts.
    Run(RunArgs),
    /// Diff two result directories of the same structural scenario.
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline: sca-central | admm | full | deliver | mc
    #[arg(long)]
    mode: String,
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (defaults to $STATROUTE_OUT or ./results).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed; mandatory for stochastic modes (mc, trials > 1).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of shadowing realizations to average.
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Cap on surrogate iterations.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Surrogate-loop objective tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// ADMM dual step size.
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    /// ADMM quadratic penalty.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Initial master (budget) step.
    #[arg(long, default_value_t = 1.0)]
    xi0: f64,
    /// Fix budgets a priori (distance-proportional split, no master).
    #[arg(long, default_value_t = false)]
    fixed_budgets: bool,
    /// Solve the inner problems of `full` mode distributedly.
    #[arg(long, default_value_t = false)]
    distributed_inner: bool,
    /// Cap on ADMM rounds per solve (online operation truncates).
    #[arg(long, default_value_t = 400)]
    admm_max_rounds: usize,
    /// Results directory with the stored solution (deliver/mc modes).
    #[arg(long)]
    solution_from: Option<PathBuf>,
    /// Constant link-availability override.
    #[arg(long)]
    chi: Option<f64>,
    /// Tagged packets per origin (mc mode).
    #[arg(long, default_value_t = 10_000)]
    mc_packets: usize,
    /// Slot horizon for simulations.
    #[arg(long, default_value_t = 100_000)]
    mc_slots: usize,
    /// Dump the ADMM control-message ledger.
    #[arg(long, default_value_t = false)]
    dump_messages: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Baseline results directory.
    a: PathBuf,
    /// Comparison results directory.
    b: PathBuf,
    /// Optional JSON output path for the diff report.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<RunMode, String> {
    match s {
        "sca-central" => Ok(RunMode::ScaCentral),
        "admm" => Ok(RunMode::Admm),
        "full" => Ok(RunMode::Full),
        "deliver" => Ok(RunMode::Deliver),
        "mc" => Ok(RunMode::Mc),
        other => Err(format!("unknown mode '{other}' (expected sca-central|admm|full|deliver|mc)")),
    }
}

fn default_out() -> PathBuf {
    std::env::var_os("STATROUTE_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("results"))
}

fn run_command(args: RunArgs) -> Result<(), (u8, String)> {
    let mode = parse_mode(&args.mode).map_err(|e| (2, e))?;
    let stochastic = mode == RunMode::Mc || args.trials > 1;
    let seed = match (args.seed, stochastic) {
        (Some(s), _) => s,
        (None, false) => 1,
        (None, true) => return Err((2, "--seed is mandatory for stochastic runs (mc mode or trials > 1)".into())),
    };
    let config = RunConfig {
        mode,
        scenario: args.scenario,
        out_dir: args.out.unwrap_or_else(default_out),
        seed,
        trials: args.trials,
        max_iters: args.max_iters,
        tol: args.tol,
        beta: args.beta,
        c: args.c,
        xi0: args.xi0,
        fixed_budgets: args.fixed_budgets,
        distributed_inner: args.distributed_inner,
        admm_max_rounds: args.admm_max_rounds,
        solution_from: args.solution_from,
        chi: args.chi,
        mc_packets: args.mc_packets,
        mc_slots: args.mc_slots,
        dump_messages: args.dump_messages,
    };
    match report::run(&config) {
        Ok(artifacts) => {
            println!("{}", serde_json::to_string_pretty(&artifacts.summary).expect("summary serializes"));
            Ok(())
        }
        Err(e) => {
            let code = if e.is_input_error() { 2 } else { 1 };
            let record = serde_json::json!({"error": e.to_string(), "kind": if code == 2 {"bad-input"} else {"numerical"}});
            Err((code, record.to_string()))
        }
    }
}

fn compare_command(args: CompareArgs) -> Result<(), (u8, String)> {
    match report::compare_runs(&args.a, &args.b) {
        Ok(rep) => {
            let json = serde_json::to_string_pretty(&rep).expect("report serializes");
            if let Some(path) = args.out {
                std::fs::write(&path, &json).map_err(|e| (2u8, e.to_string()))?;
            }
            println!("{json}");
            for flag in &rep.flags {
                eprintln!("note: {flag}");
            }
            Ok(())
        }
        Err(e) => {
            let code = if e.is_input_error() { 2 } else { 1 };
            let record = serde_json::json!({"error": e.to_string()});
            Err((code, record.to_string()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run_command(args),
        Command::Compare(args) => compare_command(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("{message}");
            ExitCode::from(code)
        }
    }
}
