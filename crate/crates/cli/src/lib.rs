//! Commands behind the `flowvat` binary.
//!
//! Each `cmd_*` function does the work of one subcommand and writes its
//! artifacts; printing is left to the binary. Run directories default to
//! `runs/<name>`, or `$FLOWVAT_OUT_DIR/<name>` when that variable is set.

mod config;

use std::path::{Path, PathBuf};

use flowvat::evaluate::{export_samples, grid_transform, model_mode_capture, transform_drift, write_mode_report, GridTransform, ModeReport};
use flowvat::evidence::{temperature_sweep, write_evidence_json, EvidenceEstimate};
use flowvat::flow::FlowModel;
use flowvat::mathcore::RngStream;
use flowvat::targets::{make_gm, GmSpec, TargetKind, TargetModel, TargetSpec};
use flowvat::trainer::{estimate_elbo, load_checkpoint, train_in_dir, ElboEstimate, TrainOutcome};

pub use config::ExperimentConfig;

/// Environment variable naming the directory that holds default-named runs.
pub const OUT_DIR_ENV: &str = "FLOWVAT_OUT_DIR";

/// Samples written to `samples.csv` after training.
pub const EXPORT_SAMPLES: usize = 2000;

// Stream ids for the commands' random draws, one per purpose.
const STREAM_EVIDENCE: u64 = 10;
const STREAM_MODES: u64 = 11;
const STREAM_ELBO: u64 = 12;
const STREAM_SAMPLES: u64 = 13;

/// A failed command: `Usage` exits with 1, `Runtime` with 2.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<flowvat::Error> for CliError {
    fn from(e: flowvat::Error) -> Self {
        use flowvat::Error as E;
        match e {
            E::InvalidConfig(_) | E::InvalidProbability(_) | E::InvalidDof(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

/// Parses a target given on the command line: `ring2d`, `eight_schools`,
/// inline JSON such as `{"kind": "gm_random", ...}`, or a path to a
/// mixture file.
pub fn parse_target(s: &str) -> Result<TargetSpec, CliError> {
    match s {
        "ring2d" => Ok(TargetSpec::Ring2d {}),
        "eight_schools" => Ok(TargetSpec::EightSchools {}),
        _ if s.trim_start().starts_with('{') => {
            serde_json::from_str(s).map_err(|e| CliError::Usage(format!("bad target spec: {e}")))
        }
        _ if Path::new(s).exists() => Ok(TargetSpec::GmFile { path: s.into() }),
        _ => Err(CliError::Usage(format!(
            "unknown target {s:?}: expected ring2d, eight_schools, a JSON spec or a mixture file"
        ))),
    }
}

/// Directory for a run: `explicit`, else the config's `out_dir`, else a
/// name derived from the config under `$FLOWVAT_OUT_DIR` (or `runs`).
pub fn run_dir(config: &ExperimentConfig, explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit.or(config.out_dir.as_deref()) {
        return p.to_path_buf();
    }
    let base = std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    base.join(config.default_run_name())
}

/// Generates a mixture and writes it to `out`.
pub fn cmd_gen_target(dim: usize, modes: usize, seed: u64, out: &Path) -> Result<GmSpec, CliError> {
    let (spec, _) = make_gm(dim, modes, seed)?;
    spec.save(out)?;
    Ok(spec)
}

/// Trains and writes the run directory, plus `samples.csv` at `T = 1`.
pub fn cmd_train(config: &ExperimentConfig, out: Option<&Path>) -> Result<(PathBuf, TrainOutcome), CliError> {
    let resolved = config.resolve()?;
    let target = config.target.build().map_err(|e| CliError::Usage(format!("target: {e}")))?;
    let dir = run_dir(config, out);
    let outcome = train_in_dir(&resolved, &target, &dir, &config.snapshot(&resolved))?;
    export_samples(
        &outcome.model,
        &target,
        EXPORT_SAMPLES,
        1.0,
        &mut RngStream::new(config.seed, STREAM_SAMPLES),
        &dir.join("samples.csv"),
    )?;
    Ok((dir, outcome))
}

/// Loads a run's final checkpoint and its experiment config.
pub fn load_run(dir: &Path) -> Result<(FlowModel, ExperimentConfig), CliError> {
    let ckpt = dir.join("checkpoint.bin");
    if !ckpt.exists() {
        return Err(CliError::Usage(format!("{}: no checkpoint.bin", dir.display())));
    }
    let (model, _) = load_checkpoint(&ckpt)?;
    let config = ExperimentConfig::load(&dir.join("config.json"))?;
    Ok((model, config))
}

fn run_target(dir: &Path, config: &ExperimentConfig, model: &FlowModel, spec: Option<&TargetSpec>) -> Result<TargetModel, CliError> {
    let target = spec
        .unwrap_or(&config.target)
        .build()
        .map_err(|e| CliError::Usage(format!("target: {e}")))?;
    if target.dim() != model.dim() {
        return Err(CliError::Usage(format!(
            "{}: flow has dim {}, target {} has dim {}",
            dir.display(),
            model.dim(),
            target.name,
            target.dim()
        )));
    }
    Ok(target)
}

/// Evidence sweep over `temps`, written to `evidence.json` in the run.
pub fn cmd_evidence(dir: &Path, temps: &[f64], n: usize, seed: u64) -> Result<Vec<EvidenceEstimate>, CliError> {
    if temps.is_empty() {
        return Err(CliError::Usage("--temps needs at least one temperature".into()));
    }
    if let Some(t) = temps.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(CliError::Usage(format!("temperature {t} must be positive")));
    }
    let (model, config) = load_run(dir)?;
    let target = run_target(dir, &config, &model, None)?;
    let sweep = temperature_sweep(&model, &target, temps, n, &RngStream::new(seed, STREAM_EVIDENCE))?;
    write_evidence_json(&dir.join("evidence.json"), &sweep)?;
    Ok(sweep)
}

/// Mode capture of `n` samples at `T = 1`, written to `modes.json`.
pub fn cmd_modes(dir: &Path, target: Option<&TargetSpec>, n: usize, seed: u64) -> Result<ModeReport, CliError> {
    let (model, config) = load_run(dir)?;
    let target = run_target(dir, &config, &model, target)?;
    let TargetKind::Gm(spec) = &target.kind else {
        return Err(CliError::Usage(format!("target {} has no mode centers", target.name)));
    };
    let report = model_mode_capture(&model, spec, n, &mut RngStream::new(seed, STREAM_MODES))?;
    write_mode_report(&dir.join("modes.json"), &report)?;
    Ok(report)
}

/// Grid transform at `temps`, written to `grid.csv`, and its drift (when
/// at least two temperatures are given).
pub fn cmd_grid(dir: &Path, temps: &[f64], range: [f64; 2], spacing: f64) -> Result<(GridTransform, Option<f64>), CliError> {
    let (model, _) = load_run(dir)?;
    if model.dim() != 2 {
        return Err(CliError::Usage(format!("grid needs a 2-d flow, this one has dim {}", model.dim())));
    }
    let gt = grid_transform(&model, range, spacing, temps).map_err(|e| CliError::Usage(e.to_string()))?;
    gt.write_csv(&dir.join("grid.csv"))?;
    let drift = if temps.len() >= 2 { Some(transform_drift(&gt)?) } else { None };
    Ok((gt, drift))
}

/// Fresh ELBO estimate at temperature `t`, written to `elbo_eval.json`.
pub fn cmd_elbo(dir: &Path, n: usize, t: f64, seed: u64) -> Result<ElboEstimate, CliError> {
    let (model, config) = load_run(dir)?;
    let target = run_target(dir, &config, &model, None)?;
    let e = estimate_elbo(&model, &target, t, n, &mut RngStream::new(seed, STREAM_ELBO))?;
    std::fs::write(dir.join("elbo_eval.json"), serde_json::to_string_pretty(&e).expect("serializes") + "\n")
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(e)
}
