use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flowvat::evaluate::{GRID_RANGE, GRID_SPACING};
use flowvat::trainer::{Method, Preset};
use flowvat_cli::{cmd_elbo, cmd_evidence, cmd_gen_target, cmd_grid, cmd_modes, cmd_train, parse_target, CliError, ExperimentConfig};

/// Temperature-conditional flow variational inference.
///
/// Default run directories go under $FLOWVAT_OUT_DIR (or ./runs).
#[derive(Parser)]
#[command(name = "flowvat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a randomized Gaussian-mixture target.
    GenTarget {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        modes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a flow from a config file or from flags.
    Train {
        /// Experiment config (JSON).
        #[arg(long, conflicts_with_all = ["method", "target", "preset", "seed", "set"])]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_method, required_unless_present = "config")]
        method: Option<Method>,
        /// ring2d, eight_schools, a JSON spec or a mixture file.
        #[arg(long, required_unless_present = "config")]
        target: Option<String>,
        #[arg(long, value_parser = parse_preset)]
        preset: Option<Preset>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override one config key, e.g. `--set pretrain_epochs=500`.
        #[arg(long, value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Importance-sampling evidence over a temperature grid.
    Evidence {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.95,1,1.25,1.5")]
        temps: Vec<f64>,
        #[arg(long, default_value_t = 50_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Mode capture at T = 1 against a mixture target.
    Modes {
        #[arg(long)]
        run: PathBuf,
        /// Defaults to the run's own target.
        #[arg(long)]
        target: Option<String>,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Map a regular latent grid through a 2-d flow.
    Grid {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.95,1,2,5,10")]
        temps: Vec<f64>,
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = GRID_RANGE)]
        range: Vec<f64>,
        #[arg(long, default_value_t = GRID_SPACING)]
        spacing: f64,
    },
    /// Monte-Carlo ELBO of a trained flow.
    Elbo {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: flowvat::Error| e.to_string())
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown preset {s:?} (desk or paper)"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenTarget { dim, modes, seed, out } => {
            let spec = cmd_gen_target(dim, modes, seed, &out)?;
            println!(
                "wrote {} ({} centers in {} dims, d_min {:.4}, d_max {:.4})",
                out.display(),
                spec.k(),
                spec.dim(),
                spec.d_min.unwrap_or(f64::NAN),
                spec.d_max.unwrap_or(f64::NAN)
            );
        }
        Command::Train { config, method, target, preset, seed, set, out } => {
            let experiment = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None => {
                    let mut c = ExperimentConfig::new(
                        preset.unwrap_or(Preset::Desk),
                        method.expect("required by clap"),
                        seed.unwrap_or(0),
                        parse_target(&target.expect("required by clap"))?,
                    );
                    for kv in set {
                        let (k, v) = kv
                            .split_once('=')
                            .ok_or_else(|| CliError::Usage(format!("--set {kv:?}: expected KEY=VALUE")))?;
                        let value = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.into()));
                        c.overrides.insert(k.into(), value);
                    }
                    c
                }
            };
            let (dir, outcome) = cmd_train(&experiment, out.as_deref())?;
            let e = &outcome.elbo;
            println!("run directory: {}", dir.display());
            println!("epochs: {}", outcome.history.len());
            println!("ELBO at T=1: {:.4} +/- {:.4} (n = {}, excluded {})", e.mean, e.std_err, e.n, e.excluded);
        }
        Command::Evidence { run, temps, n, seed } => {
            let sweep = cmd_evidence(&run, &temps, n, seed)?;
            println!("{:>8} {:>12} {:>10} {:>10} {:>8}", "T", "log_Z_hat", "std_err", "ess", "max_w");
            for e in &sweep {
                println!(
                    "{:>8} {:>12.5} {:>10.5} {:>10.1} {:>8.4}{}",
                    e.t,
                    e.log_z_hat,
                    e.std_err_log,
                    e.ess,
                    e.max_weight_fraction,
                    if e.unreliable { "  unreliable" } else { "" }
                );
            }
            println!("wrote {}", run.join("evidence.json").display());
        }
        Command::Modes { run, target, n, seed } => {
            let spec = target.as_deref().map(parse_target).transpose()?;
            let r = cmd_modes(&run, spec.as_ref(), n, seed)?;
            println!("modes captured: {}/{} (radius {:.4}, n = {})", r.modes_captured, r.captured.len(), r.radius, r.n_samples);
            for (k, (f, c)) in r.fractions.iter().zip(&r.captured).enumerate() {
                println!("  mode {k}: {:.3}{}", f, if *c { "  captured" } else { "" });
            }
            println!("wrote {}", run.join("modes.json").display());
        }
        Command::Grid { run, temps, range, spacing } => {
            let (_, drift) = cmd_grid(&run, &temps, [range[0], range[1]], spacing)?;
            match drift {
                Some(d) => println!("transform drift: {d:.6}"),
                None => println!("transform drift: needs two or more temperatures"),
            }
            println!("wrote {}", run.join("grid.csv").display());
        }
        Command::Elbo { run, n, t, seed } => {
            let e = cmd_elbo(&run, n, t, seed)?;
            println!("ELBO at T={}: {:.4} +/- {:.4} (n = {}, excluded {})", e.t, e.mean, e.std_err, e.n, e.excluded);
        }
    }
    Ok(())
}
