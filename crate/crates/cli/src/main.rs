use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;
use ssm_cli::config::ModelKind;
use ssm_cli::{execute, CommandKind, RunConfig, RunOptions};
use ssm_core::apf::ProposalScheme;

/// Particle MCMC for state-space models.
#[derive(Debug, Parser)]
#[command(name = "ssm", version)]
struct Cli {
    command: CommandKind,
    /// JSON run config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_parser = parse_json_enum::<ModelKind>)]
    model: Option<ModelKind>,
    #[arg(long, value_parser = parse_json_enum::<ProposalScheme>)]
    scheme: Option<ProposalScheme>,
    /// Particle count (the reference count under a compute-matched budget).
    #[arg(long)]
    m: Option<usize>,
    /// Likelihood replicates per point.
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    data: Option<PathBuf>,
}

fn parse_json_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = cli.$f.clone() { cfg.$f = v; })* };
    }
    set!(seed, out, model, scheme, m, l, t, n_steps, chains);
    if let Some(d) = cli.data.clone() {
        cfg.data = Some(d);
    }
    let opts = RunOptions {
        force: cli.force,
        workers: cli.workers,
    };
    let report = execute(cli.command, cfg, &opts)?;
    log::info!(
        "wrote {} files to {}",
        report.outputs.len() + 1,
        report.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
