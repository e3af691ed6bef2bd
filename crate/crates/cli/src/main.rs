use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mqc_cli::{FitRequest, SimulateOverrides, SweepRequest};
use mqc_core::analysis::{CutMode, FitModel};
use mqc_core::Error;

#[derive(Parser)]
#[command(name = "mqc", version, about = "Multiple-quantum coherence simulator for small dipolar spin clusters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Auto,
    Exponential,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum CutArg {
    Nearest,
    Average3,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment in a configuration file and write its signals.
    Simulate {
        config: PathBuf,
        /// Output directory; defaults to output.dir from the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Transform a run's signals into coherence-order spectra.
    Spectra {
        dir: PathBuf,
        /// Compare against the eigenbasis assembly (closed engine only).
        #[arg(long)]
        route_check: bool,
    },
    /// Fit decay curves cut from a run's spectra.
    Fit {
        dir: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        order: i32,
        /// Cut frequencies in Hz.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        freq: Vec<f64>,
        #[arg(long, value_enum, default_value = "auto")]
        model: ModelArg,
        #[arg(long, value_enum, default_value = "nearest")]
        cut: CutArg,
    },
    /// Check how closely the configured block returns the system to its start.
    VerifyReversion {
        config: PathBuf,
        /// Block duration in microseconds; the longest scheduled tau by default.
        #[arg(long)]
        tau_us: Option<f64>,
        /// Fail (exit 3) when the residual exceeds this value.
        #[arg(long, default_value_t = 1e-6)]
        max_residual: f64,
    },
    /// Simulate and transform every (t_p, tau1) combination.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        t_p_us: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        tau1_us: Vec<f64>,
        /// Rebuild each tau schedule as whole MREV-8 cycles up to this value.
        #[arg(long)]
        tau_max_us: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn run(cli: Cli) -> mqc_core::Result<()> {
    match cli.command {
        Command::Simulate { config, out, workers } => {
            let dir = mqc_cli::simulate(&config, &SimulateOverrides { out, workers })?;
            println!("signals written to {}", dir.display());
        }
        Command::Spectra { dir, route_check } => {
            let outcome = mqc_cli::spectra(&dir, route_check)?;
            if let Some(d) = outcome.route_difference {
                println!("route check: max relative difference {d:e}");
            }
            println!("spectra written to {}", dir.display());
        }
        Command::Fit { dir, order, freq, model, cut } => {
            let req = FitRequest {
                order,
                freqs_hz: freq,
                model: match model {
                    ModelArg::Auto => None,
                    ModelArg::Exponential => Some(FitModel::Exponential),
                    ModelArg::Linear => Some(FitModel::Linear),
                },
                cut: match cut {
                    CutArg::Nearest => CutMode::Nearest,
                    CutArg::Average3 => CutMode::Average3,
                },
            };
            print!("{}", mqc_cli::fit(&dir, &req)?.to_text());
        }
        Command::VerifyReversion { config, tau_us, max_residual } => {
            let r = mqc_cli::check_reversion(&config, tau_us.map(|t| t * 1e-6))?;
            println!("duration {:e} s", r.duration);
            println!("residual {:e}", r.residual);
            println!("effective Hamiltonian norm {:e} rad/s", r.generator_norm);
            if !(r.residual <= max_residual) {
                return Err(Error::Numerical(format!("reversion residual {:e} exceeds {max_residual:e}", r.residual)));
            }
        }
        Command::Sweep {
            config,
            t_p_us,
            tau1_us,
            tau_max_us,
            out,
            workers,
        } => {
            let req = SweepRequest {
                t_p_us,
                tau1_us,
                tau_max_us,
                out,
                workers,
            };
            for d in mqc_cli::sweep(&config, &req)? {
                println!("{}", d.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(mqc_cli::exit_code(&e) as u8)
        }
    }
}
