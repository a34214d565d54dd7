use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sketchfuse_core::sim::{run_batch, run_scenario, write_step_csv, BatchSummary, RunMetrics, ScenarioConfig};
use sketchfuse_core::verify;

use crate::server::{serve, ServeOptions};
use crate::session::{Session, SessionMode, SessionOptions};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "sketchfuse", version, about = "Grid tracker fusing range sensors with operator sketches")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write its traces and metrics.
    Run(RunArgs),
    /// Run many seeds and summarize RMSE per mode.
    Batch(BatchArgs),
    /// Host a live session over a websocket.
    Serve(ServeArgs),
    /// Run the reference-computation sweeps.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// TOML scenario file, or a preset name (`reference`).
    #[arg(long, default_value = "reference")]
    pub config: String,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct LiveArgs {
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Simulated seconds per wall-clock second.
    #[arg(long, default_value_t = 1.0)]
    pub realtime_factor: f64,
    /// Also feed the config's simulated operators.
    #[arg(long)]
    pub synthetic_sketches: bool,
    /// Pool the heatmap over blocks of this many cells per side.
    #[arg(long, default_value_t = 1)]
    pub heat_factor: usize,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value_t = SessionMode::Headless)]
    pub mode: SessionMode,
    #[command(flatten)]
    pub live: LiveArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BatchArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Seeds `seed .. seed + runs`.
    #[arg(long, default_value_t = 50)]
    pub runs: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub live: LiveArgs,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
}

/// A config file path, or a preset when no such file exists.
pub fn load_config(spec: &str) -> Result<ScenarioConfig> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|source| Error::Io { context: format!("reading {spec}"), source })?;
        return ScenarioConfig::from_toml_str(&text).map_err(|e| match e {
            sketchfuse_core::Error::Config(msg) => Error::Config(format!("{spec}: {msg}")),
            other => Error::Config(format!("{spec}: {other}")),
        });
    }
    ScenarioConfig::preset(spec).ok_or_else(|| Error::Config(format!("{spec}: no such file or preset")))
}

fn scenario(args: &ScenarioArgs) -> Result<ScenarioConfig> {
    let mut config = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|source| Error::Io { context: format!("creating {}", path.display()), source })
}

fn prepare_out(out: &Path, config: &ScenarioConfig) -> Result<()> {
    fs::create_dir_all(out).map_err(|source| Error::Io { context: format!("creating {}", out.display()), source })?;
    create(&out.join("config.toml"))?.write_all(config.to_toml_string()?.as_bytes())?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = create(path)?;
    serde_json::to_writer_pretty(file, value).map_err(|e| Error::Output(format!("{}: {e}", path.display())))
}

/// Headless run: `trace_<mode>.csv` per mode, `metrics.json`, and the
/// resolved config as `config.toml`.
pub fn run_headless(config: &ScenarioConfig, out: &Path) -> Result<Vec<RunMetrics>> {
    let output = run_scenario(config)?;
    prepare_out(out, config)?;
    for run in &output.runs {
        write_step_csv(create(&out.join(format!("trace_{}.csv", run.mode.as_str())))?, &run.steps)?;
    }
    let metrics: Vec<RunMetrics> = output.runs.iter().map(|r| r.metrics.clone()).collect();
    write_json(&out.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

pub fn batch(config: &ScenarioConfig, runs: u64, out: &Path) -> Result<BatchSummary> {
    let seeds: Vec<u64> = (config.seed..config.seed + runs).collect();
    let summary = run_batch(config, &seeds)?;
    prepare_out(out, config)?;
    write_json(&out.join("batch.json"), &summary)?;
    Ok(summary)
}

pub fn format_batch(summary: &BatchSummary) -> String {
    let mut s = format!("{:<12} {:>5} {:>10} {:>10} {:>10} {:>10}\n", "mode", "runs", "mean_rmse", "std_rmse", "min_rmse", "max_rmse");
    for m in &summary.modes {
        s.push_str(&format!(
            "{:<12} {:>5} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n",
            m.mode.as_str(),
            m.runs,
            m.mean_rmse,
            m.std_rmse,
            m.min_rmse,
            m.max_rmse
        ));
    }
    if let Some(f) = summary.fused_better_fraction {
        s.push_str(&format!("fused below autonomous in {:.1}% of seeds\n", f * 100.0));
    }
    s
}

fn live(config: ScenarioConfig, args: &LiveArgs) -> Result<ExitCode> {
    if !(args.realtime_factor > 0.0 && args.realtime_factor.is_finite()) {
        return Err(Error::Config(format!("--realtime-factor must be positive, got {}", args.realtime_factor)));
    }
    let options = SessionOptions {
        mode: SessionMode::Live,
        heat_factor: args.heat_factor,
        synthetic_sketches: args.synthetic_sketches,
        show_truth: true,
    };
    let session = Session::new(1, config, options)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let server = serve(session, args.port, ServeOptions { realtime_factor: args.realtime_factor }).await?;
        println!("listening on ws://{}/ws", server.addr);
        let session = server.ticker.await.map_err(|e| Error::Output(format!("session task failed: {e}")))??;
        println!("session finished at t={}", session.t());
        Ok(ExitCode::SUCCESS)
    })
}

pub fn execute(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Run(args) => {
            let config = scenario(&args.scenario)?;
            if args.mode == SessionMode::Live {
                return live(config, &args.live);
            }
            for m in run_headless(&config, &args.scenario.out)? {
                println!("{:<12} seed {:<6} rmse {:.4} m  final error {:.4} m", m.mode.as_str(), m.seed, m.rmse, m.final_error);
            }
            println!("wrote {}", args.scenario.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Batch(args) => {
            let config = scenario(&args.scenario)?;
            print!("{}", format_batch(&batch(&config, args.runs, &args.scenario.out)?));
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve(args) => live(scenario(&args.scenario)?, &args.live),
        Command::Verify(args) => {
            let reports = verify::run_all(args.seed);
            for r in &reports {
                println!("{r}");
            }
            let failed = reports.iter().filter(|r| !r.passed()).count();
            println!("verify: {}/{} passed", reports.len() - failed, reports.len());
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}
