//! Importance-sampling evidence with the tempered flow as proposal.
//!
//! With draws `theta_i ~ q(.; T)` and log-weights
//! `l_i = ln p'(theta_i) - ln q(theta_i; T)`, the estimate is
//! `ln Z = logsumexp(l) - ln n`. Weights are only ever exponentiated after
//! subtracting `max l`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::flow::FlowModel;
use crate::mathcore::RngStream;
use crate::targets::TargetModel;
use crate::{Error, Result};

/// Below this effective sample size an estimate is flagged.
pub const MIN_RELIABLE_ESS: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEstimate {
    /// Proposal temperature.
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "log_Z_hat")]
    pub log_z_hat: f64,
    /// Delta-method standard error of `log_Z_hat`.
    pub std_err_log: f64,
    pub n: usize,
    pub ess: f64,
    pub max_weight_fraction: f64,
    /// `ess < 10`.
    pub unreliable: bool,
}

/// Evidence estimate from precomputed log-weights. `-inf` entries are zero
/// weights; NaN or `+inf` is an error.
pub fn evidence_from_log_weights(log_w: &[f64], t: f64) -> Result<EvidenceEstimate> {
    if log_w.len() < 2 {
        return Err(Error::Invalid(format!("evidence needs at least 2 samples, got {}", log_w.len())));
    }
    if log_w.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(Error::DegenerateWeights);
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights);
    }
    let n = log_w.len();
    let nf = n as f64;
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    let sum_sq: f64 = w.iter().map(|x| x * x).sum();
    let mean = sum / nf;
    let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
    let ess = (sum * sum / sum_sq).min(nf);
    Ok(EvidenceEstimate {
        t,
        log_z_hat: max + mean.ln(),
        std_err_log: var.sqrt() / (nf.sqrt() * mean),
        n,
        ess,
        max_weight_fraction: w.iter().copied().fold(0.0, f64::max) / sum,
        unreliable: ess < MIN_RELIABLE_ESS,
    })
}

/// Log-weights `ln p'(theta) - ln q(theta; t)` for `n` fresh draws.
pub fn log_weights(model: &FlowModel, target: &TargetModel, t: f64, n: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Invalid(format!("proposal temperature {t} must be positive")));
    }
    let (theta, log_q) = model.sample(rng, n, t)?;
    theta
        .rows()
        .into_iter()
        .zip(log_q)
        .map(|(row, lq)| Ok(target.log_density(&row.to_vec())? - lq))
        .collect()
}

pub fn estimate_evidence(model: &FlowModel, target: &TargetModel, t: f64, n: usize, rng: &mut RngStream) -> Result<EvidenceEstimate> {
    if n < 2 {
        return Err(Error::Invalid(format!("evidence needs at least 2 samples, got {n}")));
    }
    evidence_from_log_weights(&log_weights(model, target, t, n, rng)?, t)
}

/// One estimate per temperature; entry `i` draws from `rng.substream(i)`.
pub fn temperature_sweep(model: &FlowModel, target: &TargetModel, temps: &[f64], n: usize, rng: &RngStream) -> Result<Vec<EvidenceEstimate>> {
    if temps.is_empty() {
        return Err(Error::EmptyInput("temperature grid"));
    }
    temps
        .iter()
        .enumerate()
        .map(|(i, &t)| estimate_evidence(model, target, t, n, &mut rng.substream(i as u64)))
        .collect()
}

pub fn write_evidence_json(path: &Path, estimates: &[EvidenceEstimate]) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(estimates)? + "\n")?;
    Ok(())
}

pub fn read_evidence_json(path: &Path) -> Result<Vec<EvidenceEstimate>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
