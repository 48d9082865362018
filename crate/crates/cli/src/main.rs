//! `specmap`: configuration-driven runner for the demand mapping pipeline.

mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use specmap_core::{pipeline, Error, RunConfig};

/// Exit codes.
const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "specmap", version, about = "Spectrum demand mapping on multi-resolution tiles")]
struct Cli {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set model.epochs=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    input_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Model seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Gaussian edge bandwidth in meters.
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Cross-validation mode: cbcv or loco.
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true)]
    test_city: Option<String>,
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
enum Command {
    /// Build busy-hour targets and the deployed-bandwidth proxy, and validate it.
    Proxy,
    /// Harmonize raw inputs into per-zoom feature tables.
    Ingest,
    /// Build the hierarchical tile graph.
    Graph,
    /// Train HR-GAT on all labeled tiles.
    Train,
    /// Cross-validate the configured models.
    Eval,
    /// Shapley attribution of the trained model.
    Explain,
    /// Write the synthetic benchmark into the input directory.
    Synth,
    /// proxy, ingest, graph, train, eval and explain in order.
    All,
    /// Print the effective configuration.
    Config,
}

impl Command {
    fn stages(self) -> &'static [&'static str] {
        match self {
            Command::Proxy => &["proxy"],
            Command::Ingest => &["ingest"],
            Command::Graph => &["graph"],
            Command::Train => &["train"],
            Command::Eval => &["eval"],
            Command::Explain => &["explain"],
            Command::Synth => &["synth"],
            Command::All => &["proxy", "ingest", "graph", "train", "eval", "explain"],
            Command::Config => &[],
        }
    }
}

impl Cli {
    fn overrides(&self) -> anyhow::Result<Vec<(String, toml::Value)>> {
        use toml::Value;
        let path = |p: &Path| Value::String(p.to_string_lossy().into_owned());
        let mut o: Vec<(String, Value)> = Vec::new();
        let mut push = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        push("input_dir", self.input_dir.as_deref().map(path));
        push("output_dir", self.output_dir.as_deref().map(path));
        push("model.seed", self.seed.map(|s| Value::Integer(s as i64)));
        push("model.epochs", self.epochs.map(|e| Value::Integer(e as i64)));
        push("model.lr", self.lr.map(Value::Float));
        push("model.lambda", self.lambda.map(Value::Float));
        push("sigma_m", self.sigma.map(Value::Float));
        push("eval.mode", self.mode.clone().map(Value::String));
        push("eval.test_city", self.test_city.clone().map(Value::String));
        for s in &self.set {
            o.push(config::parse_override(s)?);
        }
        Ok(o)
    }
}

fn run_stage(stage: &str, cfg: &RunConfig) -> specmap_core::Result<Vec<PathBuf>> {
    match stage {
        "proxy" => pipeline::stage_proxy(cfg),
        "ingest" => pipeline::stage_ingest(cfg),
        "graph" => pipeline::stage_graph(cfg),
        "train" => pipeline::stage_train(cfg),
        "eval" => pipeline::stage_eval(cfg),
        "explain" => pipeline::stage_explain(cfg),
        "synth" => pipeline::stage_synth(cfg),
        _ => unreachable!("unknown stage {stage}"),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Invariant(_) | Error::Diverged { .. } | Error::NonFinite(_) => EXIT_INVARIANT,
        Error::InvalidArgument(_) | Error::Unknown { .. } => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).parse_default_env().init();

    let cfg = match cli.overrides().and_then(|o| config::load(cli.config.as_deref(), &o)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if cli.command == Command::Config {
        match toml::to_string_pretty(&cfg) {
            Ok(s) => {
                print!("{s}");
                return ExitCode::SUCCESS;
            }
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_USAGE);
            }
        }
    }
    for stage in cli.command.stages() {
        let start = Instant::now();
        log::info!("stage {stage}");
        let outputs = match run_stage(stage, &cfg) {
            Ok(o) => o,
            Err(e) => {
                eprintln!("error: {stage}: {e}");
                return ExitCode::from(exit_code(&e));
            }
        };
        let secs = start.elapsed().as_secs_f64();
        let recorded = manifest::write_manifest(stage, &cfg, &outputs)
            .and_then(|_| manifest::record_timing(&cfg.output_dir, stage, secs))
            .with_context(|| format!("{stage}: writing run manifest"));
        if let Err(e) = recorded {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_DATA);
        }
        log::info!("stage {stage} done in {secs:.1}s");
    }
    ExitCode::SUCCESS
}
