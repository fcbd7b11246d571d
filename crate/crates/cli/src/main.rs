use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pltanh_cli::commands::{self, GradcheckOptions, Overrides};
use pltanh_cli::{CliError, ExperimentConfig};
use pltanh_core::ActivationKind;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "pltanh", version, about = "k-fold activation experiments and gradient checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-validate every configured activation and append one row each.
    Run(RunArgs),
    /// Cross-validate one activation over a grid of slopes.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma separated slopes; defaults to `alphas` from the config.
        #[arg(long, value_name = "LIST", allow_hyphen_values = true)]
        alphas: Option<String>,
    },
    /// Finite-difference checks of activation derivatives and toy networks.
    Gradcheck {
        #[arg(long, default_value_t = 1000)]
        points: usize,
        #[arg(long, value_name = "LIST", default_value = "1e-9,0.01,0.4")]
        alphas: String,
        /// Slope of the parametric activations inside the networks.
        #[arg(long, default_value_t = 0.01)]
        network_alpha: f64,
        /// Check at most this many coordinates per parameter tensor.
        #[arg(long)]
        coords: Option<usize>,
        /// Only the activation suite.
        #[arg(long)]
        no_networks: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write `x,f,df` samples of an activation.
    PlotActivation {
        #[arg(long, default_value = "pltanh")]
        kind: String,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        #[arg(long, value_name = "LO,HI", default_value = "-5,5", allow_hyphen_values = true)]
        range: String,
        #[arg(long, default_value_t = 201)]
        samples: usize,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use only the first N samples.
    #[arg(long, value_name = "N")]
    subset: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        Overrides {
            out: self.out.clone(),
            subset: self.subset,
            seed: self.seed,
        }
        .apply(ExperimentConfig::load(&self.config)?)
    }
}

fn parse_range(s: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::Usage(format!("range {s:?} is not LO,HI"));
    let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.load()?;
            let rows = commands::run(&cfg)?;
            println!("{} row(s) appended to {}", rows.len(), cfg.out.display());
        }
        Command::Sweep { run, alphas } => {
            let cfg = run.load()?;
            let alphas = match alphas {
                Some(list) => commands::parse_alphas(&list)?,
                None => cfg.alphas.clone(),
            };
            let out = run.out.clone().unwrap_or_else(|| commands::default_sweep_path(&cfg.out));
            let (rows, best) = commands::sweep(&cfg, &alphas, &out)?;
            println!(
                "{} row(s) appended to {}; best alpha {}",
                rows.len(),
                out.display(),
                rows[best].alpha.unwrap_or_default()
            );
        }
        Command::Gradcheck {
            points,
            alphas,
            network_alpha,
            coords,
            no_networks,
            seed,
        } => {
            let opts = GradcheckOptions {
                points,
                alphas: commands::parse_alphas(&alphas)?,
                network_alpha,
                coords,
                networks: !no_networks,
                seed,
            };
            let reports = commands::gradcheck(&opts, &mut std::io::stdout().lock())?;
            println!("all {} checks passed", reports.len());
        }
        Command::PlotActivation {
            kind,
            alpha,
            range,
            samples,
            out,
        } => {
            let kind: ActivationKind = kind.parse().map_err(|e| CliError::Usage(format!("{e}")))?;
            let (lo, hi) = parse_range(&range)?;
            let rows = commands::activation_table(kind.with_alpha(alpha), lo, hi, samples)?;
            match &out {
                Some(path) => {
                    let file = std::fs::File::create(path).map_err(|e| CliError::Output {
                        path: path.clone(),
                        message: e.to_string(),
                    })?;
                    commands::write_activation_table(&rows, file).map_err(|e| CliError::Output {
                        path: path.clone(),
                        message: e.to_string(),
                    })?;
                }
                None => {
                    let mut stdout = std::io::stdout().lock();
                    commands::write_activation_table(&rows, &mut stdout)
                        .and_then(|()| Ok(stdout.flush()?))
                        .map_err(|e| CliError::Output {
                            path: "stdout".into(),
                            message: e.to_string(),
                        })?;
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
