//! `pooch` — plan out-of-core training iterations.
//!
//! Subcommands: `gen` emits a synthetic profile, `optimize` searches for a
//! keep/swap/recompute plan, `simulate` replays a plan and exports traces,
//! `compare` tabulates the strategies, `oracle` brute-forces small graphs.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 infeasible input
//! (the workload cannot be planned or the given plan runs out of memory).

mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pooch_core::model::Scale;
use pooch_core::optimizer::{evaluate_strategy, optimize, OptimizeError, SearchConfig, Strategy};
use pooch_core::oracle::{exhaustive_search, OracleError, EXHAUSTIVE_LIMIT};
use pooch_core::simulator::{simulate, SchedPolicy};
use pooch_core::synth::{generate, EnvPreset, GenSpec, Shape};

#[derive(Parser)]
#[command(
    name = "pooch",
    version,
    about = "Simulation-driven keep/swap/recompute planning for out-of-core training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic profile file.
    Gen(GenArgs),
    /// Search for the fastest feasible placement and write plan + report.
    Optimize(OptimizeArgs),
    /// Simulate a profile under a given plan; print makespan and peak.
    Simulate(SimulateArgs),
    /// Evaluate strategies side by side and print a table.
    Compare(CompareArgs),
    /// Exhaustively enumerate placements of a small profile.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Chain,
    #[value(name = "resnet_like")]
    ResnetLike,
    #[value(name = "alexnet_like")]
    AlexnetLike,
    #[value(name = "resnext3d_like")]
    Resnext3dLike,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvArg {
    #[value(name = "pcie_x86")]
    PcieX86,
    #[value(name = "nvlink_power9")]
    NvlinkPower9,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchedArg {
    Naive,
    Eager,
}

impl From<SchedArg> for SchedPolicy {
    fn from(s: SchedArg) -> SchedPolicy {
        match s {
            SchedArg::Naive => SchedPolicy::Naive,
            SchedArg::Eager => SchedPolicy::Eager,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    shape: ShapeArg,
    /// Layer count (chain, alexnet_like).
    #[arg(long)]
    n: Option<usize>,
    /// Block count (resnet_like, resnext3d_like).
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long, default_value_t = 1)]
    batch: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "pcie_x86")]
    env: EnvArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    profile: PathBuf,
    /// Plan output path.
    #[arg(long)]
    out: PathBuf,
    /// Report output path (default: plan path with a .report.json suffix).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Decision-log output path (default: plan path with a .log suffix).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 18)]
    li_cap: usize,
    /// Maximum concurrent simulations.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Rational batch multiplier (e.g. "2" or "3/2") applied before planning.
    #[arg(long)]
    batch: Option<Scale>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long, value_enum, default_value = "eager")]
    sched: SchedArg,
    /// Chrome trace output path.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Memory-ledger CSV output path.
    #[arg(long)]
    memtrace: Option<PathBuf>,
    #[arg(long)]
    batch: Option<Scale>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    profile: PathBuf,
    /// Comma-separated strategies
    /// (in-core, swap-all-naive, swap-all, swap-opt, superneurons, pooch).
    #[arg(long, value_delimiter = ',')]
    strategies: Vec<String>,
    #[arg(long, default_value_t = 18)]
    li_cap: usize,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    batch: Option<Scale>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long, value_enum, default_value = "eager")]
    sched: SchedArg,
    #[arg(long)]
    batch: Option<Scale>,
}

/// Failures that mean "the input cannot be executed", not "the input is
/// malformed": they exit with status 2.
fn is_infeasibility(err: &anyhow::Error) -> bool {
    err.downcast_ref::<OptimizeError>()
        .map(|e| matches!(e, OptimizeError::InfeasibleAllSwap { .. }))
        .unwrap_or(false)
        || err
            .downcast_ref::<OracleError>()
            .map(|e| matches!(e, OracleError::NoFeasiblePlacement))
            .unwrap_or(false)
        || err.downcast_ref::<Infeasible>().is_some()
}

#[derive(Debug)]
struct Infeasible(String);

impl std::fmt::Display for Infeasible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Infeasible {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_infeasibility(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Optimize(args) => cmd_optimize(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Oracle(args) => cmd_oracle(args),
    }
}

fn load_scaled(path: &Path, batch: Option<Scale>) -> Result<pooch_core::model::Profile> {
    let profile = io::read_profile(path)?;
    Ok(match batch {
        Some(scale) => profile.scale(scale),
        None => profile,
    })
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let (shape, size) = match args.shape {
        ShapeArg::Chain => (Shape::Chain, args.n.unwrap_or(8)),
        ShapeArg::ResnetLike => (Shape::ResnetLike, args.blocks.unwrap_or(20)),
        ShapeArg::AlexnetLike => (Shape::AlexnetLike, args.n.unwrap_or(13)),
        ShapeArg::Resnext3dLike => (Shape::Resnext3dLike, args.blocks.unwrap_or(59)),
    };
    let spec = GenSpec {
        shape,
        size,
        batch: args.batch,
        seed: args.seed,
        env: match args.env {
            EnvArg::PcieX86 => EnvPreset::PcieX86,
            EnvArg::NvlinkPower9 => EnvPreset::NvlinkPower9,
        },
    };
    let profile = generate(&spec).map_err(|e| anyhow!("generating profile: {e}"))?;
    io::write_profile(&args.out, &profile)?;
    println!(
        "wrote {}: {} layers, {} feature-map bytes, capacity {} bytes",
        args.out.display(),
        profile.n(),
        profile.total_output_bytes(),
        profile.env.capacity_bytes
    );
    Ok(())
}

fn cmd_optimize(args: OptimizeArgs) -> Result<()> {
    let profile = load_scaled(&args.profile, args.batch)?;
    let cfg = SearchConfig {
        li_cap: args.li_cap,
        time_budget: None,
        parallel_width: args.parallel,
    };
    let outcome = optimize(&profile, &cfg)?;
    let report_path = args
        .report
        .unwrap_or_else(|| args.out.with_extension("report.json"));
    let log_path = args.log.unwrap_or_else(|| args.out.with_extension("log"));
    io::write_plan(&args.out, &outcome.report.placement)?;
    io::write_report(&report_path, &outcome.report)?;
    io::write_text(&log_path, &outcome.decision_log())?;
    let c = outcome.report.counts;
    println!(
        "plan: makespan_us={} peak_bytes={} keep={} swap={} recompute={} simulations={} ({} us)",
        outcome.report.makespan_us,
        outcome.report.peak_memory_bytes,
        c.keep,
        c.swap,
        c.recompute,
        outcome.report.search_stats.simulations,
        outcome.report.search_stats.wall_clock_us,
    );
    println!(
        "wrote {} | {} | {}",
        args.out.display(),
        report_path.display(),
        log_path.display()
    );
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let profile = load_scaled(&args.profile, args.batch)?;
    let placement = io::read_plan(&args.plan, &profile)?;
    let (timeline, memtrace) = simulate(&profile, &placement, args.sched.into());
    if let Some(trace) = &args.trace {
        io::write_chrome_trace(trace, &timeline)?;
    }
    if let Some(mem) = &args.memtrace {
        io::write_memtrace_csv(mem, &memtrace)?;
    }
    if let Some(oom) = timeline.oom {
        return Err(anyhow!(Infeasible(format!(
            "plan runs out of memory at t={} us: layer {} requested {} bytes",
            oom.time_us, oom.layer, oom.requested_bytes
        ))));
    }
    println!(
        "makespan_us={} peak_bytes={}",
        timeline.makespan_us, memtrace.peak_bytes
    );
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let profile = load_scaled(&args.profile, args.batch)?;
    let strategies: Vec<Strategy> = if args.strategies.is_empty() {
        Strategy::ALL.to_vec()
    } else {
        args.strategies
            .iter()
            .map(|s| Strategy::parse(s).ok_or_else(|| anyhow!("unknown strategy `{s}`")))
            .collect::<Result<_>>()?
    };
    let cfg = SearchConfig {
        li_cap: args.li_cap,
        time_budget: None,
        parallel_width: args.parallel,
    };
    println!(
        "{:<16} {:>14} {:>16} {:>6} {:>6} {:>10}",
        "strategy", "makespan_us", "peak_bytes", "keep", "swap", "recompute"
    );
    for strategy in strategies {
        let eval = evaluate_strategy(&profile, strategy, &cfg)?;
        let counts = eval.placement.counts();
        if eval.feasible {
            println!(
                "{:<16} {:>14} {:>16} {:>6} {:>6} {:>10}",
                strategy.name(),
                eval.makespan_us,
                eval.peak_bytes,
                counts.keep,
                counts.swap,
                counts.recompute
            );
        } else {
            println!(
                "{:<16} {:>14} {:>16} {:>6} {:>6} {:>10}",
                strategy.name(),
                "oom",
                "-",
                counts.keep,
                counts.swap,
                counts.recompute
            );
        }
    }
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let profile = load_scaled(&args.profile, args.batch)?;
    if profile.n() > EXHAUSTIVE_LIMIT {
        return Err(anyhow!(
            "oracle size guard: {} layers exceeds the limit of {EXHAUSTIVE_LIMIT}",
            profile.n()
        ));
    }
    let result = exhaustive_search(&profile, args.sched.into())?;
    let classes: Vec<String> = result
        .best_placement
        .classes
        .iter()
        .map(|c| c.to_string())
        .collect();
    println!(
        "optimum makespan_us={} classes=[{}] evaluated={} infeasible={}",
        result.best_makespan_us,
        classes.join(","),
        result.evaluated,
        result.infeasible
    );
    Ok(())
}
