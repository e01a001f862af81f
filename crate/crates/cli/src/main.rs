use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use strat_anytime::audit::AuditSetup;
use strat_anytime::harness::io::{self, draws_of, read_draws_file, read_trajectory, trajectory_csv, write_rows};
use strat_anytime::harness::reproduce::{self, ReproduceOptions, SCALING_K, SCALING_NK, TABLE1_G};
use strat_anytime::harness::{run_experiment, trace_one, write_outputs, ExperimentConfig};
use strat_anytime::oracle;
use strat_anytime::population::make_population;

#[derive(Parser)]
#[command(name = "strat-anytime", version, about = "Sequential stratified tests of a bounded population mean")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment configuration (JSON) and write raw, aggregate and metadata files.
    Simulate(SimulateArgs),
    /// Regenerate the data behind a reference table or figure.
    Reproduce(ReproduceArgs),
    /// Closed-form answers for two equal point-mass strata.
    Oracle(OracleArgs),
    /// Replay a recorded sequence of draws through a method.
    Audit(AuditArgs),
    /// Serve the live-audit session API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct RunFlags {
    /// Master seed; generated and printed when absent.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to STRAT_ANYTIME_THREADS, then the CPU count.
    #[arg(long)]
    threads: Option<usize>,
    /// Replace the replicate count.
    #[arg(long)]
    replicates: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    run: RunFlags,
    /// Also write the full trajectory and replay setup of the first N
    /// replicates of every stratified cell.
    #[arg(long, default_value_t = 0)]
    trajectories: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Table1,
    Fig1,
    Fig3,
    Fig4,
    Fig5,
    Scaling,
}

#[derive(Args)]
struct ReproduceArgs {
    #[arg(value_enum)]
    target: Target,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    mu1: f64,
    #[arg(long)]
    mu2: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args)]
struct AuditArgs {
    /// Audit setup: sizes, eta0, optional weights and the method.
    #[arg(long)]
    config: PathBuf,
    /// Draws as CSV `t,stratum,value`, or a trajectory CSV with `--replay`.
    #[arg(long)]
    data: PathBuf,
    /// Read the draws from a trajectory written by `simulate`.
    #[arg(long)]
    replay: bool,
    /// Directory for `trajectory.csv` and `report.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Directory holding one event log per session.
    #[arg(long, default_value = "sessions")]
    data_dir: PathBuf,
}

fn threads(flag: Option<usize>) -> Result<usize> {
    if let Some(t) = flag {
        return Ok(t.max(1));
    }
    if let Ok(v) = std::env::var("STRAT_ANYTIME_THREADS") {
        return v.trim().parse::<usize>().map(|t| t.max(1)).with_context(|| format!("STRAT_ANYTIME_THREADS={v}"));
    }
    Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn seed_or_fresh(flag: Option<u64>, from_config: Option<u64>) -> u64 {
    flag.or(from_config).unwrap_or_else(|| {
        let seed = rand::random::<u64>();
        eprintln!("seed: {seed}");
        seed
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(T, serde_json::Value)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let parsed = serde_json::from_value(value.clone()).with_context(|| format!("parsing {}", path.display()))?;
    Ok((parsed, value))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let (mut cfg, raw): (ExperimentConfig, _) = read_json(&args.config)?;
    cfg.seed = seed_or_fresh(args.run.seed, raw.get("seed").and_then(|s| s.as_u64()));
    if let Some(r) = args.run.replicates {
        cfg.replicates = r;
    }
    let result = run_experiment(&cfg, threads(args.run.threads)?)?;
    write_outputs(&cfg, &result, &args.out)?;
    if args.trajectories > 0 {
        write_trajectories(&cfg, args.trajectories, &args.out.join("trajectories"))?;
    }
    let errors = result.raw.iter().filter(|r| !r.error.is_empty()).count();
    println!("{} rows written to {} (seed {})", result.raw.len(), args.out.display(), cfg.seed);
    if errors > 0 {
        bail!("{errors} runs failed; see the error column of raw.csv");
    }
    Ok(())
}

fn write_trajectories(cfg: &ExperimentConfig, per_cell: usize, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (p, cell) in cfg.cells()?.iter().enumerate() {
        let seed = strat_anytime::harness::cell_seed(cfg.seed, p);
        let reps = if cell.generator.is_deterministic() { 1 } else { per_cell.min(cfg.replicates) };
        for r in 0..reps {
            let pop = make_population(&cell.generator, &cell.sizes, seed, r as u64)?;
            for (m, entry) in cfg.methods.iter().enumerate() {
                if entry.pooled {
                    continue;
                }
                let (setup, res) = match trace_one(entry, &pop, cfg.eta0, cfg.cap, seed, r as u64) {
                    Ok(t) => t,
                    Err(e) => bail!("population {p}, method {m}, replicate {r}: {e}"),
                };
                // η-aware selections have no single interleaving to replay
                if res.trajectory.iter().any(|s| s.stratum.is_none()) {
                    continue;
                }
                let stem = format!("p{p}_m{m}_r{r}");
                fs::write(dir.join(format!("{stem}.csv")), trajectory_csv(&res.trajectory)?)?;
                write_json(&dir.join(format!("{stem}.json")), &setup)?;
            }
        }
    }
    Ok(())
}

fn reproduce_target(args: ReproduceArgs) -> Result<()> {
    let opts = ReproduceOptions {
        seed: seed_or_fresh(args.run.seed, None),
        threads: threads(args.run.threads)?,
        replicates: args.run.replicates,
    };
    fs::create_dir_all(&args.out)?;
    let out = &args.out;
    match args.target {
        Target::Table1 => write_rows(&out.join("table1.csv"), &reproduce::table1(&TABLE1_G, &opts)?)?,
        Target::Fig1 => write_rows(&out.join("fig1.csv"), &reproduce::fig1(&opts)?)?,
        Target::Fig3 => write_outputs(&reproduce::fig3_config(&opts), &reproduce::fig3(&opts)?, &out.join("fig3"))?,
        Target::Fig4 => write_outputs(&reproduce::fig4_config(&opts), &reproduce::fig4(&opts)?, &out.join("fig4"))?,
        Target::Fig5 => write_outputs(&reproduce::fig5_config(&opts), &reproduce::fig5(&opts)?, &out.join("fig5"))?,
        Target::Scaling => write_rows(&out.join("scaling.csv"), &reproduce::scaling(&SCALING_K, &SCALING_NK)?)?,
    }
    println!("wrote {} (seed {})", out.display(), opts.seed);
    Ok(())
}

#[derive(Serialize)]
struct OracleReport {
    mu1: f64,
    mu2: f64,
    alpha: f64,
    eta_star: f64,
    optimal: Option<oracle::OptimalStopping>,
    gain: Option<oracle::StratificationGain>,
    notes: Vec<String>,
}

fn oracle_query(args: OracleArgs) -> Result<()> {
    let mut notes = Vec::new();
    let optimal = oracle::pointmass_optimal_stopping(args.mu1, args.mu2, args.alpha)
        .map_err(|e| notes.push(e.to_string()))
        .ok();
    let gain = oracle::stratification_gain(args.mu1, args.mu2, args.alpha)
        .map_err(|e| notes.push(e.to_string()))
        .ok();
    let report = OracleReport {
        mu1: args.mu1,
        mu2: args.mu2,
        alpha: args.alpha,
        eta_star: oracle::pointmass_eta_star(args.mu1, args.mu2),
        optimal,
        gain,
        notes,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

#[derive(Serialize)]
struct AuditSummary {
    draws: usize,
    tau: Option<usize>,
    rejected: bool,
    p_value: f64,
    lcb: Option<f64>,
}

fn audit(args: AuditArgs) -> Result<()> {
    let (setup, _): (AuditSetup, _) = read_json(&args.config)?;
    let draws = if args.replay {
        let f = fs::File::open(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
        let rows = draws_of(&read_trajectory(f)?)?;
        rows.iter()
            .map(|r| strat_anytime::audit::Draw { stratum: r.stratum, value: r.value })
            .collect()
    } else {
        read_draws_file(&args.data)?
    };
    let report = setup.replay(&draws).map_err(|e| anyhow!("{}: {e}", args.data.display()))?;
    let summary = AuditSummary {
        draws: report.draws,
        tau: report.tau,
        rejected: report.tau.is_some(),
        p_value: report.p_value,
        lcb: report.lcb,
    };
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("trajectory.csv"), io::trajectory_csv(&report.trajectory)?)?;
        write_json(&dir.join("report.json"), &summary)?;
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let state = strat_anytime_service::AppState::open(&args.data_dir)?;
        eprintln!("listening on http://{}", args.addr);
        strat_anytime_service::serve(state, args.addr).await?;
        Ok(())
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Reproduce(a) => reproduce_target(a),
        Command::Oracle(a) => oracle_query(a),
        Command::Audit(a) => audit(a),
        Command::Serve(a) => serve(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
