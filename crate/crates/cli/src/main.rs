use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use knockout::eval::SweepReport;
use knockout::experiment::{self, ExperimentConfig, DEFAULT_ABLATION_VALUES};
use knockout::verify;

const OUT_ROOT_ENV: &str = "KNOCKOUT_OUT_ROOT";

#[derive(Parser)]
#[command(
    name = "knockout",
    version,
    about = "Knockout missing-input experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate data, train every method and sweep all missingness patterns.
    Run(RunArgs),
    /// Re-evaluate models saved by an earlier `run`.
    Sweep(RunArgs),
    /// Train one Knockout model per z-score placeholder value.
    AblatePlaceholder {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated placeholder values.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ABLATION_VALUES)]
        values: Vec<f64>,
    },
    /// Run the exact-oracle check suite.
    Verify,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds; overrides the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    /// Default root for relative output directories.
    #[arg(long, env = OUT_ROOT_ENV, hide_env_values = true)]
    out_root: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        if let Some(j) = self.jobs {
            if j == 0 {
                bail!("--jobs must be at least 1");
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build_global()
                .context("configuring worker threads")?;
        }
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(s) = &self.seeds {
            config.seeds = s.clone();
        }
        if let Some(k) = self.k_max {
            config.k_max = k;
        }
        config.validate()?;
        let out = resolve_out(&config, self.out.as_deref(), self.out_root.as_deref());
        Ok((config, out))
    }
}

fn resolve_out(config: &ExperimentConfig, out: Option<&Path>, root: Option<&Path>) -> PathBuf {
    let root = root.unwrap_or(Path::new("out"));
    match (out, &config.out) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) if p.is_absolute() => p.clone(),
        (None, Some(p)) => root.join(p),
        (None, None) => root.join(&config.name),
    }
}

fn print_summary(report: &SweepReport) {
    println!("regime\tmethod\tmetric\tmissing\tmean\tstd\tpatterns");
    for a in report.aggregates() {
        println!(
            "{}\t{}\t{}\t{}\t{:.5}\t{:.5}\t{}",
            a.regime, a.method, a.metric, a.popcount, a.mean, a.std, a.n_patterns
        );
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            let (config, out) = args.load()?;
            let result = experiment::cmd_run(&config, &out)?;
            print_summary(&result.report);
            println!(
                "wrote {} files to {}",
                result.manifest.files.len() + 1,
                out.display()
            );
        }
        Command::Sweep(args) => {
            let (config, out) = args.load()?;
            let result = experiment::cmd_sweep(&config, &out)?;
            print_summary(&result.report);
        }
        Command::AblatePlaceholder { run, values } => {
            let (config, out) = run.load()?;
            let (_, rows) = experiment::cmd_ablate_placeholder(&config, &values, &out)?;
            println!("regime\tplaceholder\tmetric\tmean\tstd");
            for r in rows {
                println!(
                    "{}\t{}\t{}\t{:.5}\t{:.5}",
                    r.regime, r.placeholder, r.metric, r.mean, r.std
                );
            }
            println!("wrote {}", out.join(experiment::ABLATION_CSV).display());
        }
        Command::Verify => {
            let checks = verify::run_all();
            let mut failed = Vec::new();
            for c in &checks {
                println!(
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
                if !c.passed {
                    failed.push(c.name);
                }
            }
            if !failed.is_empty() {
                eprintln!("failing checks: {}", failed.join(", "));
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
