use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use xurllc_cli::{run, spec_from_manifest, summary, ExperimentSpec, ScenarioSource, RECIPES};

#[derive(Parser)]
#[command(name = "pareto-xurllc", version, about = "Localisation and cost/latency trade-off experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one recipe.
    Run {
        #[arg(long, value_parser = RECIPES)]
        recipe: String,
        /// Scenario file of `key = value` lines, or `default`.
        #[arg(long, default_value = "default")]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Scenario or budget override, `key=value`; repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Use the full-size run budgets instead of desk budgets.
        #[arg(long)]
        paper_scale: bool,
    },
    /// Repeat a previous run from its manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let spec = match cli.cmd {
        Cmd::Run { recipe, scenario, seed, out, overrides, paper_scale } => {
            Ok(ExperimentSpec { recipe, scenario: ScenarioSource::from_arg(&scenario), overrides, out, seed, paper_scale })
        }
        Cmd::Rerun { manifest, out } => spec_from_manifest(&manifest, out),
    };
    match spec.and_then(|s| run(&s)).and_then(|paths| summary(&paths)) {
        Ok(s) => {
            print!("{s}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
