//! Two-phase training loop, ELBO estimation and run artifacts.
//!
//! An epoch is one AdamW step on a fresh Monte-Carlo batch. Pretraining
//! draws temperatures from the method's schedule; fine-tuning uses a narrow
//! range near `T = 1` for conditional methods and exactly `T = 1` for the
//! others.

mod adamw;
mod checkpoint;
mod config;
mod run;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use adamw::AdamW;
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, CheckpointHeader, CHECKPOINT_VERSION};
pub use config::{Method, Preset, TrainConfig};
pub use run::{read_history_csv, write_history_csv, HistoryRow, RunMeta};

use crate::flow::FlowModel;
use crate::mathcore::{mean_std, RngStream};
use crate::targets::TargetModel;
use crate::tempering::{objective_with_gradient, sample_objective_base, ScheduleState};
use crate::{Error, Result};

/// Monte-Carlo ELBO `E_q[ln p' - ln q]` at one temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: f64,
    /// Draws dropped because a summand was not finite.
    pub excluded: usize,
}

/// Draws `n` samples at temperature `t` and averages
/// `ln p'(theta) - ln q(theta; t)`. Non-finite summands are dropped and
/// counted; more than 1% dropped is an error.
pub fn estimate_elbo(model: &FlowModel, target: &TargetModel, t: f64, n: usize, rng: &mut RngStream) -> Result<ElboEstimate> {
    if n < 2 {
        return Err(Error::Invalid(format!("ELBO needs at least 2 samples, got {n}")));
    }
    let (theta, log_q) = model.sample(rng, n, t)?;
    let mut vals = Vec::with_capacity(n);
    for (row, lq) in theta.rows().into_iter().zip(log_q) {
        let v = target.log_density(&row.to_vec()).map(|lp| lp - lq).unwrap_or(f64::NAN);
        if v.is_finite() {
            vals.push(v);
        }
    }
    let excluded = n - vals.len();
    if excluded * 100 > n || vals.len() < 2 {
        return Err(Error::TooManyExcluded { excluded, n });
    }
    let (mean, sd) = mean_std(&vals);
    Ok(ElboEstimate {
        mean,
        std_err: sd / (vals.len() as f64).sqrt(),
        n: vals.len(),
        t,
        excluded,
    })
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: FlowModel,
    pub history: Vec<HistoryRow>,
    pub elbo: ElboEstimate,
    /// Temperature in force when pretraining ended (annealed methods).
    pub pretrain_final_t: f64,
    pub adaann_updates: usize,
    pub adaann_floored_updates: usize,
}

/// Trains a flow for `target` in memory.
pub fn train(config: &TrainConfig, target: &TargetModel) -> Result<TrainOutcome> {
    run_training(config, target, None)
}

/// Trains and writes the run directory: `config.json` (the given
/// snapshot), `history.csv`, `checkpoint_pretrain.bin`, `checkpoint.bin`,
/// `elbo.json` and `meta.json`.
pub fn train_in_dir(config: &TrainConfig, target: &TargetModel, dir: &Path, snapshot: &serde_json::Value) -> Result<TrainOutcome> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(snapshot)? + "\n")?;
    let started = Instant::now();
    let outcome = run_training(config, target, Some((dir, snapshot)))?;
    run::write_run(dir, &outcome, config, started.elapsed().as_secs_f64())?;
    Ok(outcome)
}

fn run_training(config: &TrainConfig, target: &TargetModel, out: Option<(&Path, &serde_json::Value)>) -> Result<TrainOutcome> {
    config.validate()?;
    let dim = target.dim();
    let root = RngStream::new(config.seed, 0);
    let mut model = FlowModel::new(config.architecture(dim), &mut root.substream(1))?;
    let mut t_rng = root.substream(2);
    let mut z_rng = root.substream(3);
    let mut opt = AdamW::new(model.params().len(), config.weight_decay);
    let mode = config.method.objective_mode();
    let mut history = Vec::with_capacity(config.pretrain_epochs + config.finetune_epochs);
    let mut pretrain_final_t = 1.0;
    let (mut ada_updates, mut ada_floored) = (0, 0);

    let phases = [
        (config.pretrain_schedule(), config.pretrain_epochs, config.pretrain_lr),
        (config.finetune_schedule(), config.finetune_epochs, config.finetune_lr),
    ];
    for (phase, (schedule, epochs, lr)) in phases.into_iter().enumerate() {
        let mut sched = ScheduleState::new(schedule)?;
        for e in 0..epochs {
            let epoch = history.len();
            let temps = sched.sample_training_temperatures(&mut t_rng, config.batch_size, e);
            let z = sample_objective_base(&mut z_rng, mode, dim, &temps);
            let step = objective_with_gradient(&model, target, &temps, &z, mode).and_then(|eval| {
                if eval.loss.is_finite() {
                    Ok(eval)
                } else {
                    Err(Error::NonFiniteLoss { epoch })
                }
            });
            let eval = match step {
                Ok(eval) => eval,
                Err(err) => return Err(abort(out, &model, &history, err)),
            };
            let t_mean = temps.iter().map(|&t| mode.effective_temperature(t)).sum::<f64>() / temps.len() as f64;
            history.push(HistoryRow {
                epoch,
                t_mean,
                loss: eval.loss,
            });
            if let Err(err) = opt.step(model.params_mut(), &eval.gradient, lr) {
                return Err(abort(out, &model, &history, err));
            }
            sched.observe(e, &eval.log_target)?;
        }
        if phase == 0 {
            pretrain_final_t = sched.current();
            ada_updates = sched.updates();
            ada_floored = sched.floored_updates();
            if let Some((dir, snapshot)) = out {
                save_checkpoint(&model, Some(snapshot.clone()), &dir.join("checkpoint_pretrain.bin"))?;
            }
        }
    }

    let elbo = estimate_elbo(&model, target, 1.0, config.elbo_samples, &mut root.substream(4))?;
    Ok(TrainOutcome {
        model,
        history,
        elbo,
        pretrain_final_t,
        adaann_updates: ada_updates,
        adaann_floored_updates: ada_floored,
    })
}

/// Keeps the last good parameters and the history so far, then hands the
/// error back.
fn abort(out: Option<(&Path, &serde_json::Value)>, model: &FlowModel, history: &[HistoryRow], err: Error) -> Error {
    if let Some((dir, snapshot)) = out {
        let saved = save_checkpoint(model, Some(snapshot.clone()), &dir.join("checkpoint.bin"))
            .and_then(|_| write_history_csv(&dir.join("history.csv"), history));
        if let Err(e) = saved {
            return Error::Invalid(format!("{err}; saving the last good state also failed: {e}"));
        }
    }
    err
}
