use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridrecon::grid_model::Quantity;
use gridrecon::pipeline::{self, Pipeline, RunConfig};
use gridrecon::{synth, Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "gridrecon", version, about = "Reconstruct component-level power-system time series")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for every core.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Thermal limit derate in (0, 1].
    #[arg(long, global = true)]
    derate: Option<f64>,
    /// Target minutes, or SOURCE:TARGET minutes.
    #[arg(long, global = true)]
    granularity: Option<String>,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// All stages in order, with a run manifest.
    Run,
    /// Place substations on registry locations.
    Geo,
    /// Map market offers onto generators.
    Bids,
    /// Draw the volatility multipliers.
    Sample {
        /// Also write every multiplier to sample/panel_<quantity>.csv.
        #[arg(long)]
        dump_panel: bool,
    },
    /// Split regional series into components and interpolate.
    Disagg,
    /// Restore DC feasibility of the disaggregated load.
    Restore {
        /// Component CSV to restore instead of disagg/load.csv.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Compare synthetic and historical series.
    Validate {
        /// Historical regional series; needs --synthetic too.
        #[arg(long, requires = "synthetic")]
        historical: Option<PathBuf>,
        #[arg(long, requires = "historical")]
        synthetic: Option<PathBuf>,
        #[arg(long, default_value = "load")]
        quantity: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Write the synthetic desk fixture and its config.
    Fixture {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn parse_granularity(s: &str) -> Result<(Option<u32>, u32)> {
    let bad = || Error::Invalid(format!("granularity '{s}' is not MINUTES or SOURCE:TARGET"));
    match s.split_once(':') {
        Some((a, b)) => Ok((Some(a.trim().parse().map_err(|_| bad())?), b.trim().parse().map_err(|_| bad())?)),
        None => Ok((None, s.trim().parse().map_err(|_| bad())?)),
    }
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| Error::Invalid("this command needs --config".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out_dir = o.clone();
    }
    if let Some(p) = g.parallelism {
        cfg.parallelism = p;
    }
    if let Some(d) = g.derate {
        cfg.derate = d;
    }
    if let Some(s) = &g.granularity {
        let (source, target) = parse_granularity(s)?;
        if let Some(source) = source {
            cfg.granularity.source_minutes = source;
        }
        cfg.granularity.target_minutes = target;
    }
    Ok(cfg)
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn stage(g: &Global, name: &str, tweak: impl FnOnce(&mut RunConfig)) -> Result<()> {
    let mut cfg = load_config(g)?;
    tweak(&mut cfg);
    let p = Pipeline::open(cfg)?;
    let out = pipeline::with_pool(p.config.parallelism, || p.run_stage(name))?.map_err(|e| Error::Stage {
        stage: name.into(),
        source: Box::new(e),
    })?;
    print_json(&out.summary);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Run => {
            let manifest = pipeline::run_pipeline(load_config(g)?)?;
            for s in &manifest.stages {
                println!("{:<9} {:?} {:.3}s", s.name, s.status, s.seconds);
            }
            println!("status: {}", manifest.status);
        }
        Command::Geo => stage(g, "geo", |_| {})?,
        Command::Bids => stage(g, "bids", |_| {})?,
        Command::Sample { dump_panel } => stage(g, "sample", |c| c.sampling.dump_panel |= dump_panel)?,
        Command::Disagg => stage(g, "disagg", |_| {})?,
        Command::Restore { input } => {
            let p = Pipeline::open(load_config(g)?)?;
            let out = pipeline::with_pool(p.config.parallelism, || p.restore(input.as_deref()))?.map_err(|e| {
                Error::Stage {
                    stage: "restore".into(),
                    source: Box::new(e),
                }
            })?;
            print_json(&out.summary);
        }
        Command::Validate {
            historical: Some(h),
            synthetic: Some(s),
            quantity,
            k,
        } => {
            let out = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let q: Quantity = quantity.parse()?;
            let report = pipeline::validate_files(&h, &s, q, k, &out)?;
            print_json(&report["projection"]["overlap"]);
        }
        Command::Validate { .. } => stage(g, "validate", |_| {})?,
        Command::Fixture { dir } => {
            let seed = g.seed.unwrap_or(7);
            let cfg = pipeline::write_desk_bundle(&synth::desk_fixture(seed), seed, Path::new(&dir))?;
            println!("{}", cfg.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(match e.kind() {
                ErrorKind::Validation => 2,
                ErrorKind::Infeasible => 3,
                ErrorKind::Other => 1,
            })
        }
    }
}
