//! `ltlab`: run registry experiments from flat config files.
//!
//! Exit status: 0 when every check passes, 1 when a check fails or the run
//! aborts, 2 on configuration errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use localtime_lab::experiment::{list_experiments, run_experiment, ExperimentConfig, RunError, RunOutput};

#[derive(Parser)]
#[command(name = "ltlab", version, about = "Local-time numerical laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List registry experiments whose name contains FILTER.
    List { filter: Option<String> },
}

const DEFAULT_OUT: &str = "results";

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List { filter } => {
            for (name, description) in list_experiments(filter.as_deref().unwrap_or("")) {
                println!("{name:<24} {description}");
            }
            ExitCode::SUCCESS
        }
        Command::Run { config, out, seed } => run(&config, out, seed),
    }
}

fn run(config_path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> ExitCode {
    let mut config = match load(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let out_dir = out
        .or_else(|| config.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    config.out = Some(out_dir.display().to_string());

    let output = match run_experiment(&config) {
        Ok(o) => o,
        Err(RunError::Config(e)) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
        Err(RunError::Compute(e)) => {
            eprintln!("run failed: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = write_outputs(&out_dir, &config, &output) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    for c in &output.report.checks {
        println!(
            "{} {} statistic={:.6e} threshold={:.6e} n={}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.statistic,
            c.threshold,
            c.n
        );
    }
    let passed = output.report.passed();
    println!("{}: {}", config.experiment, if passed { "pass" } else { "fail" });
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ExperimentConfig::parse(&text)?)
}

/// Writes every artifact, or none: files created before a failure are
/// removed, and so is the directory if this run created it.
fn write_outputs(dir: &Path, config: &ExperimentConfig, output: &RunOutput) -> Result<()> {
    let created_dir = !dir.exists();
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files: Vec<(String, Vec<u8>)> = vec![
        ("config.resolved".into(), config.resolved().into_bytes()),
        ("summary".into(), output.report.summary().into_bytes()),
    ];
    let mut report_csv = Vec::new();
    output.report.write_csv(&mut report_csv)?;
    files.push(("report.csv".into(), report_csv));
    files.extend(output.artifacts.iter().map(|a| (a.file_name.clone(), a.contents.clone())));

    let mut written = Vec::new();
    for (name, contents) in &files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, contents) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            if created_dir {
                let _ = fs::remove_dir(dir);
            }
            return Err(e).with_context(|| format!("writing {}", path.display()));
        }
        written.push(path);
    }
    Ok(())
}
