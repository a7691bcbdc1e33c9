use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{save_checkpoint, TrainConfig, TrainOutcome};
use crate::{Error, Result};

/// One line of `history.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub t_mean: f64,
    pub loss: f64,
}

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub version: String,
    pub method: String,
    pub wall_clock_seconds: f64,
    pub epochs: usize,
    pub pretrain_final_t: f64,
    pub adaann_updates: usize,
    pub adaann_floored_updates: usize,
}

/// Writes `epoch,T_mean,loss` rows with shortest round-trip float text.
pub fn write_history_csv(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let mut out = String::from("epoch,T_mean,loss\n");
    for r in rows {
        writeln!(out, "{},{},{}", r.epoch, r.t_mean, r.loss).expect("write to string");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_history_csv(path: &Path) -> Result<Vec<HistoryRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("epoch,T_mean,loss") {
        return Err(Error::Invalid(format!("{}: unexpected history header", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Invalid(format!("{}: bad history line {}", path.display(), i + 2));
            let mut f = line.split(',');
            let epoch = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let t_mean = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let loss = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            Ok(HistoryRow { epoch, t_mean, loss })
        })
        .collect()
}

pub(super) fn write_run(dir: &Path, outcome: &TrainOutcome, config: &TrainConfig, seconds: f64) -> Result<()> {
    let snapshot: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("config.json"))?)?;
    write_history_csv(&dir.join("history.csv"), &outcome.history)?;
    save_checkpoint(&outcome.model, Some(snapshot), &dir.join("checkpoint.bin"))?;
    std::fs::write(dir.join("elbo.json"), serde_json::to_string_pretty(&outcome.elbo)? + "\n")?;
    let meta = RunMeta {
        seed: config.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        method: config.method.name().to_string(),
        wall_clock_seconds: seconds,
        epochs: outcome.history.len(),
        pretrain_final_t: outcome.pretrain_final_t,
        adaann_updates: outcome.adaann_updates,
        adaann_floored_updates: outcome.adaann_floored_updates,
    };
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}
