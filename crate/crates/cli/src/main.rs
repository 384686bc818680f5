mod args;
mod commands;
mod config;
mod manifest;
mod report;

use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::Parser;

use args::{Cli, Command};
use config::PipelineConfig;

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("cli: --threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("cli: cannot size the thread pool")?;
    }
    let cfg = PipelineConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth(a) => commands::synth(cfg, a),
        Command::Extract(a) => commands::extract(cfg, a),
        Command::Cluster(a) => commands::cluster(cfg, a),
        Command::Fit(a) => commands::fit(cfg, a),
        Command::Predict(a) => commands::predict(cfg, a),
        Command::Evaluate(a) => commands::evaluate(cfg, a),
        Command::Report(a) => report::run(a),
        Command::Baseline(a) => commands::baseline(cfg, a),
    }
}

/// The error chain joined by ": ", skipping causes a parent already printed.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}
