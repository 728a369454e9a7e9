//! `iovmesh`: run, sweep, calibrate and validate vehicular mesh simulations.

mod charts;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use iovmesh::engine::{run_with, sweep, GridPoint, ParamGrid, RunOptions};
use iovmesh::report::{flow_log_ndjson, manifest, tasks_csv, write_atomic};
use iovmesh::{calibrate_qos, load_scenario, ConfigError, SimConfig, SimError};

const EXIT_CONFIG: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(name = "iovmesh", version, about = "Slotted flow-level simulator for vehicular mesh networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation.
    Run(RunArgs),
    /// Run a parameter grid over several seeds and average per grid point.
    Sweep(SweepArgs),
    /// Find the largest QoS (whole Mbit/s) that keeps the loss rate below a target.
    Calibrate(CalibrateArgs),
    /// Check a scenario file and print the resolved config.
    Validate(ScenarioArg),
}

#[derive(Args)]
struct ScenarioArg {
    /// Scenario TOML file, or `default` for the built-in scenario.
    #[arg(long, default_value = "default")]
    scenario: String,
}

#[derive(Args)]
struct Overrides {
    /// Offered rate per task initiator in Mbit/s.
    #[arg(long)]
    qos: Option<f64>,
    /// Factor applied to every node's cache.
    #[arg(long)]
    cache_scale: Option<f64>,
    /// Number of vehicles.
    #[arg(long)]
    vehicles: Option<usize>,
}

#[derive(Args)]
struct OutputArgs {
    /// Output directory.
    #[arg(long, env = "IOVMESH_OUT", default_value = "iovmesh-out")]
    out: PathBuf,
    /// Also write SVG charts of the five metrics.
    #[arg(long)]
    charts: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    /// Run seed; defaults to the manifest's first seed or `scenario.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(flatten)]
    output: OutputArgs,
    /// Write every per-node, per-task forwarding step as NDJSON.
    #[arg(long)]
    flow_log: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    /// Seeds as `A..B` (inclusive) or a comma list.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<SeedList>,
    /// Comma-separated QoS values in Mbit/s.
    #[arg(long, value_delimiter = ',')]
    qos: Vec<f64>,
    /// Comma-separated cache scale factors.
    #[arg(long, value_delimiter = ',')]
    cache_scale: Vec<f64>,
    /// Comma-separated vehicle counts.
    #[arg(long, value_delimiter = ',')]
    vehicles: Vec<usize>,
    #[command(flatten)]
    output: OutputArgs,
    /// Worker threads; all cores by default.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<SeedList>,
    /// Loss rate to stay below, as a fraction.
    #[arg(long, default_value_t = 0.05)]
    target: f64,
    /// Search range in Mbit/s.
    #[arg(long, default_value_t = 1)]
    lo: u32,
    #[arg(long, default_value_t = 500)]
    hi: u32,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Clone)]
struct SeedList(Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("bad seed `{a}`: {e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("bad seed `{b}`: {e}"))?;
        if b < a {
            return Err(format!("empty seed range {a}..{b}"));
        }
        return Ok(SeedList((a..=b).collect()));
    }
    s.split(',')
        .map(|x| x.trim().parse().map_err(|e| format!("bad seed `{x}`: {e}")))
        .collect::<Result<_, _>>()
        .map(SeedList)
}

fn load(scenario: &ScenarioArg) -> Result<SimConfig> {
    Ok(load_scenario(&scenario.scenario)?)
}

/// Seeds named in a manifest's `[run]` table, if the scenario came from one.
fn manifest_seeds(config: &SimConfig) -> Option<Vec<u64>> {
    let seeds = config.run.as_ref()?.get("seeds")?.as_array()?;
    seeds.iter().map(|v| v.as_integer().map(|i| i as u64)).collect()
}

fn apply(config: &mut SimConfig, o: &Overrides) -> Result<()> {
    if let Some(q) = o.qos {
        config.traffic.qos_mbps = q;
    }
    if let Some(c) = o.cache_scale {
        config.nodes.cache_scale = c;
    }
    if let Some(v) = o.vehicles {
        config.scenario.n_vehicles = v;
    }
    config.validate()?;
    Ok(())
}

fn set_jobs(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        if n == 0 {
            bail!(ConfigError::Invalid { field: "--jobs", reason: "must be > 0".into() });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

fn write(path: &Path, contents: &str) -> Result<()> {
    write_atomic(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut config = load(&args.scenario)?;
    apply(&mut config, &args.overrides)?;
    let seed = args
        .seed
        .or_else(|| manifest_seeds(&config).and_then(|s| s.first().copied()))
        .unwrap_or(config.scenario.seed);
    let out = run_with(&config, seed, &RunOptions { flow_log: args.flow_log, node_order: None })?;
    let dir = &args.output.out;
    write(&dir.join("metrics.csv"), &out.metrics.to_csv())?;
    write(&dir.join("tasks.csv"), &tasks_csv(&out.tasks))?;
    write(&dir.join("manifest.toml"), &manifest(&config, &[seed], Some(&GridPoint::of(&config))))?;
    if args.flow_log {
        write(&dir.join("flow_log.ndjson"), &flow_log_ndjson(&out.flow_log))?;
    }
    if args.output.charts {
        let label = format!("seed {seed}, {}", GridPoint::of(&config));
        charts::write_charts(&dir.join("charts"), &[(label, &out.metrics)])?;
    }
    if let Some(last) = out.metrics.last() {
        println!(
            "seed {seed}: {} slots, {} tasks, final loss rate {}, arrival rate {}",
            out.metrics.len(),
            out.tasks.len(),
            fmt_opt(last.loss_rate),
            fmt_opt(last.arrive_rate)
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.4}"))
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    set_jobs(args.jobs)?;
    let base = load(&args.scenario)?;
    let seeds = args
        .seeds
        .map(|s| s.0)
        .or_else(|| manifest_seeds(&base))
        .unwrap_or_else(|| vec![base.scenario.seed]);
    let grid = ParamGrid { qos_mbps: args.qos, cache_scale: args.cache_scale, n_vehicles: args.vehicles };
    let points = grid.points(&base);
    let results = sweep(&base, &points, &seeds)?;
    let dir = &args.output.out;
    for r in &results {
        let pdir = dir.join(r.point.label());
        write(&pdir.join("metrics.csv"), &r.mean.to_csv())?;
        for (seed, s) in r.seeds.iter().zip(&r.per_seed) {
            write(&pdir.join("seeds").join(format!("seed_{seed}.csv")), &s.to_csv())?;
        }
        write(&pdir.join("manifest.toml"), &manifest(&r.point.apply(&base), &seeds, Some(&r.point)))?;
        if let Some(last) = r.mean.last() {
            println!(
                "{}: final loss rate {}, arrival rate {}",
                r.point,
                fmt_opt(last.loss_rate),
                fmt_opt(last.arrive_rate)
            );
        }
    }
    if args.output.charts {
        let series: Vec<(String, &_)> = results.iter().map(|r| (r.point.label(), &r.mean)).collect();
        charts::write_charts(&dir.join("charts"), &series)?;
    }
    println!("wrote {} grid points x {} seeds to {}", results.len(), seeds.len(), dir.display());
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    set_jobs(args.jobs)?;
    if !(args.target > 0.0 && args.target <= 1.0) {
        bail!(ConfigError::Invalid { field: "--target", reason: format!("must be in (0, 1], got {}", args.target) });
    }
    if args.lo == 0 || args.hi < args.lo {
        bail!(ConfigError::Invalid { field: "--lo/--hi", reason: format!("need 1 <= lo <= hi, got {}..{}", args.lo, args.hi) });
    }
    let config = load(&args.scenario)?;
    let seeds = args
        .seeds
        .map(|s| s.0)
        .or_else(|| manifest_seeds(&config))
        .unwrap_or_else(|| vec![config.scenario.seed]);
    let qos = calibrate_qos(&config, args.target, &seeds, args.lo, args.hi)?;
    println!("{qos}");
    Ok(())
}

fn cmd_validate(args: ScenarioArg) -> Result<()> {
    let config = load(&args)?;
    print!("{}", config.to_toml_string());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(SimError::Config(_)) = cause.downcast_ref::<SimError>() {
            return EXIT_CONFIG;
        }
    }
    EXIT_RUNTIME
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
