use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use ncbem_bench::config::{parse_formulations, Study, StudyConfig};
use ncbem_bench::run_study;

#[derive(Parser, Debug)]
#[command(name = "bench", about = "Nonconforming BEM studies at desk scale")]
struct Cli {
    /// projection-error, convergence, efficiency, screen or foam
    study: String,
    /// standard, high-frequency, high-contrast, convergence, unit-square, foam or screen
    #[arg(long)]
    preset: Option<String>,
    /// `key = value` file applied on top of the preset
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated formulation names
    #[arg(long)]
    formulations: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some solves did not converge; reports were written");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let study: Study = cli.study.parse()?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring threads")?;
    }
    let preset = cli.preset.as_deref().unwrap_or(match study {
        Study::ProjectionError => "unit-square",
        Study::Screen => "screen",
        Study::Foam => "foam",
        Study::Convergence => "convergence",
        Study::Efficiency => "standard",
    });
    let mut cfg = StudyConfig::preset(preset)?;
    if let Some(path) = &cli.config {
        cfg = cfg.from_file(path).with_context(|| format!("reading {}", path.display()))?;
    }
    if let Some(list) = &cli.formulations {
        cfg.formulations = parse_formulations(list)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    if let Some(found) = cfg.study.filter(|s| *s != study && cli.config.is_some()) {
        anyhow::bail!(ncbem_bench::ConfigError::StudyMismatch { expected: study, found });
    }
    cfg.study = Some(study);
    let outcome = run_study(study, &cfg, &cli.out)?;
    println!("{study}: {} -> {}", outcome.summary, cli.out.display());
    Ok(outcome.converged)
}
