use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sphere_sns::cli_io::{error_exit_code, parse_config, run, RunConfig, RunStatus};
use sphere_sns::stochastic_forcing::NoiseSpec;
use sphere_sns::SnsError;

const DEFAULT_OUT: &str = "sphere-sns-out";

#[derive(Parser)]
#[command(name = "sphere-sns", version, about = "Stochastic Navier-Stokes on the rotating sphere")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `noise.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for ensemble experiments.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory. Falls back to `output_dir` in the config, then SPHERE_SNS_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    Simulate,
    Ou,
    Depend,
    Pullback,
    Absorb,
    /// Print eigenvalues, noise amplitudes and Rossby frequencies per degree.
    Spectrum,
    /// Run the built-in property checks.
    Selftest,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Ou => "ou",
            Command::Depend => "depend",
            Command::Pullback => "pullback",
            Command::Absorb => "absorb",
            Command::Spectrum => "spectrum",
            Command::Selftest => "selftest",
        }
    }
}

fn selftest_config() -> RunConfig {
    let text = serde_json::json!({
        "params": { "nu": 1.0, "l_max": 4 },
        "solver": { "dt": 0.01, "t_end": 0.0 },
        "experiment": { "kind": "selftest" },
    });
    parse_config(&text.to_string()).expect("built-in config is valid")
}

fn load(cli: &Cli) -> Result<RunConfig, SnsError> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| SnsError::Io {
                path: path.clone(),
                source: e,
            })?;
            parse_config(&text)?
        }
        None if cli.command == Command::Selftest => selftest_config(),
        None => {
            return Err(SnsError::Config {
                pointer: "/".into(),
                message: "--config is required".into(),
            })
        }
    };
    if config.experiment.name() != cli.command.name() {
        return Err(SnsError::Config {
            pointer: "/experiment/kind".into(),
            message: format!(
                "config describes '{}' but the subcommand is '{}'",
                config.experiment.name(),
                cli.command.name()
            ),
        });
    }
    if let Some(seed) = cli.seed {
        config.noise = NoiseSpec {
            seed,
            ..config.noise
        };
    }
    config.validate()?;
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(3);
        }
    }
    let config = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(error_exit_code(&e) as u8);
        }
    };
    let out = cli
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .or_else(|| std::env::var_os("SPHERE_SNS_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    match run(&config, &out) {
        Ok(RunStatus::Success) => ExitCode::SUCCESS,
        Ok(status @ RunStatus::BlowUp { t, norm, last_good_step }) => {
            eprintln!("blow-up at t = {t} (norm {norm:e}); last good step {last_good_step}");
            ExitCode::from(status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_exit_code(&e) as u8)
        }
    }
}
