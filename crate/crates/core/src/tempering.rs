//! Tempered base distribution, training objectives and temperature
//! schedules.
//!
//! Tempering a density by `T` raises it to the power `1/T`. For the standard
//! normal base this gives `N(0, T I)` after normalization, so the tempered
//! base is sampled as `sqrt(T) z`.
//!
//! The default objective ([`ObjectiveMode::FlowVat`]) tempers base and
//! target together and scales every term of the ELBO integrand by `1/T`:
//!
//! ```text
//! loss = -mean[ (ln p'(f(z, T)) - ln N(z; 0, I) + ln|det df/dz|) / T ],  z ~ N(0, T I)
//! ```

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffgraph::{Graph, Var};
use crate::flow::FlowModel;
use crate::mathcore::{mean_std, sample_standard_normal, RngStream};
use crate::targets::TargetModel;
use crate::{Error, Result};

/// Lowest temperature the engine accepts.
pub const TEMPERATURE_FLOOR: f64 = 0.5;

/// A temperature `T >= 0.5`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(t: f64) -> Result<Self> {
        if t.is_finite() && t >= TEMPERATURE_FLOOR {
            Ok(Self(t))
        } else {
            Err(Error::Invalid(format!("temperature {t} is below the floor {TEMPERATURE_FLOOR} or not finite")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;

    fn try_from(t: f64) -> Result<Self> {
        Self::new(t)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

/// `n x dim` draws from `N(0, t I)`.
pub fn tempered_base_sample(rng: &mut RngStream, dim: usize, t: f64, n: usize) -> Result<Array2<f64>> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Invalid(format!("temperature {t} must be positive and finite")));
    }
    let sd = t.sqrt();
    let draws = sample_standard_normal(rng, n * dim);
    Ok(Array2::from_shape_vec((n, dim), draws.into_iter().map(|v| v * sd).collect()).expect("shape"))
}

/// `ln N(z; 0, t I)`.
pub fn tempered_base_logpdf(z: &[f64], t: f64) -> f64 {
    let sq: f64 = z.iter().map(|v| v * v).sum();
    -0.5 * sq / t - 0.5 * z.len() as f64 * (2.0 * PI * t).ln()
}

/// Per-row `ln N(z_i; 0, t_i I)` on the tape.
pub fn tempered_base_logpdf_graph(g: &mut Graph, z: Var, temps: &[f64]) -> Var {
    let d = g.shape(z).1 as f64;
    let inv_t: Vec<f64> = temps.iter().map(|t| -0.5 / t).collect();
    let norm: Vec<f64> = temps.iter().map(|t| -0.5 * d * (2.0 * PI * t).ln()).collect();
    let sq = g.square(z);
    let sq = g.sum_cols(sq);
    let inv_t = g.column(&inv_t);
    let norm = g.column(&norm);
    let q = g.mul(sq, inv_t);
    g.add(q, norm)
}

/// Which tempered objective a run optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Base and target tempered, every integrand term scaled by `1/T`,
    /// `z ~ N(0, T I)`.
    #[serde(rename = "flowvat")]
    FlowVat,
    /// Normalized ELBO of `p'^{1/T}` against the pushforward of `N(0, T I)`.
    #[serde(rename = "flowvat_exact")]
    FlowVatExact,
    /// Only the target tempered, `z ~ N(0, I)`.
    TargetOnly,
    /// Untempered ELBO at `T = 1`.
    Plain,
}

impl ObjectiveMode {
    /// Variance of the base the mode samples `z` from.
    pub fn base_temperature(self, t: f64) -> f64 {
        match self {
            Self::FlowVat | Self::FlowVatExact => t,
            Self::TargetOnly | Self::Plain => 1.0,
        }
    }

    /// Temperature actually used for the target and flow context.
    pub fn effective_temperature(self, t: f64) -> f64 {
        match self {
            Self::Plain => 1.0,
            _ => t,
        }
    }
}

/// One ELBO-style integrand value.
///
/// `log_p` is `ln p'(f(z, T))`, `logdet` is `ln |det df/dz|`.
pub fn pointwise_integrand(mode: ObjectiveMode, t: f64, z: &[f64], log_p: f64, logdet: f64) -> f64 {
    let log_q_std = tempered_base_logpdf(z, 1.0);
    match mode {
        ObjectiveMode::FlowVat => (log_p - log_q_std + logdet) / t,
        ObjectiveMode::FlowVatExact => log_p / t - tempered_base_logpdf(z, t) + logdet,
        ObjectiveMode::TargetOnly => log_p / t - log_q_std + logdet,
        ObjectiveMode::Plain => log_p - log_q_std + logdet,
    }
}

/// Draws the `z` batch a mode prescribes, one row per temperature.
pub fn sample_objective_base(rng: &mut RngStream, mode: ObjectiveMode, dim: usize, temps: &[f64]) -> Array2<f64> {
    let draws = sample_standard_normal(rng, temps.len() * dim);
    Array2::from_shape_fn((temps.len(), dim), |(i, j)| {
        draws[i * dim + j] * mode.base_temperature(temps[i]).sqrt()
    })
}

/// Objective value, parameter gradient and the batch's target
/// log-densities.
#[derive(Clone, Debug)]
pub struct ObjectiveEval {
    pub loss: f64,
    pub gradient: Vec<f64>,
    pub log_target: Vec<f64>,
}

/// Records the negated Monte-Carlo objective for `z` (one row per entry of
/// `temps`) and returns the loss node and the target log-density column.
pub fn objective_graph(
    g: &mut Graph,
    model: &FlowModel,
    target: &TargetModel,
    temps: &[f64],
    z: &Array2<f64>,
    mode: ObjectiveMode,
) -> (Var, Var) {
    let n = z.nrows();
    let eff: Vec<f64> = temps.iter().map(|&t| mode.effective_temperature(t)).collect();
    let zv = g.input(z.clone());
    let ctx = model.context_column(g, &eff);
    let (theta, logdet) = model.forward_graph(g, zv, ctx);
    let log_p = target.log_density_graph(g, theta);
    let inv_t: Vec<f64> = eff.iter().map(|t| 1.0 / t).collect();
    let inv_t = g.column(&inv_t);
    let log_q_std = {
        let sq = g.square(zv);
        let sq = g.sum_cols(sq);
        let sq = g.scale(sq, -0.5);
        g.add_scalar(sq, -0.5 * z.ncols() as f64 * (2.0 * PI).ln())
    };
    let integrand = match mode {
        ObjectiveMode::FlowVat => {
            let a = g.sub(log_p, log_q_std);
            let a = g.add(a, logdet);
            g.mul(a, inv_t)
        }
        ObjectiveMode::FlowVatExact => {
            let base = tempered_base_logpdf_graph(g, zv, &eff);
            let a = g.mul(log_p, inv_t);
            let a = g.sub(a, base);
            g.add(a, logdet)
        }
        ObjectiveMode::TargetOnly => {
            let a = g.mul(log_p, inv_t);
            let a = g.sub(a, log_q_std);
            g.add(a, logdet)
        }
        ObjectiveMode::Plain => {
            let a = g.sub(log_p, log_q_std);
            g.add(a, logdet)
        }
    };
    let total = g.sum(integrand);
    (g.scale(total, -1.0 / n as f64), log_p)
}

fn check_target(g: &Graph, model: &FlowModel, log_p: Var, z: &Array2<f64>, temps: &[f64], mode: ObjectiveMode) -> Result<()> {
    if let Some(i) = g.value(log_p).iter().position(|v| !v.is_finite()) {
        let eff = mode.effective_temperature(temps[i]);
        let row = z.row(i).to_vec();
        let theta = model.flow_forward(&row, eff).map(|(t, _)| t).unwrap_or(row);
        return Err(Error::NonFiniteTarget { theta });
    }
    Ok(())
}

/// Negated objective on a fixed `z` batch, without gradients.
pub fn negative_tempered_objective(
    model: &FlowModel,
    target: &TargetModel,
    temps: &[f64],
    z: &Array2<f64>,
    mode: ObjectiveMode,
) -> Result<f64> {
    check_batch(model, temps, z)?;
    let mut g = Graph::inference(model.params());
    let (loss, log_p) = objective_graph(&mut g, model, target, temps, z, mode);
    check_target(&g, model, log_p, z, temps, mode)?;
    g.check_finite()?;
    Ok(g.scalar_value(loss))
}

/// Negated objective and its gradient on a fixed `z` batch.
pub fn objective_with_gradient(
    model: &FlowModel,
    target: &TargetModel,
    temps: &[f64],
    z: &Array2<f64>,
    mode: ObjectiveMode,
) -> Result<ObjectiveEval> {
    check_batch(model, temps, z)?;
    let mut g = Graph::new(model.params());
    let (loss, log_p) = objective_graph(&mut g, model, target, temps, z, mode);
    check_target(&g, model, log_p, z, temps, mode)?;
    let gradient = g.backward(loss)?;
    Ok(ObjectiveEval {
        loss: g.scalar_value(loss),
        gradient,
        log_target: g.value(log_p).iter().copied().collect(),
    })
}

fn check_batch(model: &FlowModel, temps: &[f64], z: &Array2<f64>) -> Result<()> {
    if z.ncols() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: z.ncols(),
        });
    }
    if z.nrows() == 0 {
        return Err(Error::EmptyInput("objective batch"));
    }
    if temps.len() != z.nrows() {
        return Err(Error::DimensionMismatch {
            expected: z.nrows(),
            got: temps.len(),
        });
    }
    for &t in temps {
        Temperature::new(t)?;
    }
    Ok(())
}

/// How training temperatures are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TemperatureSchedule {
    Constant { t: f64 },
    /// One independent uniform draw per batch element.
    UniformRange { lo: f64, hi: f64 },
    /// Linear in the update index from `t0` down to 1 over `steps` updates.
    LinearAnneal { t0: f64, steps: usize, update_every: usize },
    /// Adaptive inverse-temperature steps `tol / std(ln p')`. With a
    /// `horizon` (the epoch by which `T` must be 1), each step is at least
    /// the remaining distance to `beta = 1` divided by the updates left.
    #[serde(rename = "adaann")]
    AdaAnn {
        t0: f64,
        tol: f64,
        update_every: usize,
        #[serde(default)]
        horizon: Option<usize>,
    },
}

impl TemperatureSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(vec![msg]));
        let floor = |t: f64| t.is_finite() && t >= TEMPERATURE_FLOOR;
        match *self {
            Self::Constant { t } if !floor(t) => bad(format!("constant temperature {t} below floor")),
            Self::UniformRange { lo, hi } if !(floor(lo) && floor(hi) && lo <= hi) => {
                bad(format!("temperature range [{lo}, {hi}] invalid"))
            }
            Self::LinearAnneal { t0, steps, update_every } if !(t0 >= 1.0 && t0.is_finite() && steps > 0 && update_every > 0) => {
                bad("linear anneal needs t0 >= 1, steps > 0, update_every > 0".into())
            }
            Self::AdaAnn { t0, tol, update_every, .. } if !(t0 >= 1.0 && t0.is_finite() && tol >= 0.0 && update_every > 0) => {
                bad("adaann needs t0 >= 1, tol >= 0, update_every > 0".into())
            }
            _ => Ok(()),
        }
    }
}

/// Temperature of a linear schedule at `epoch`: piecewise constant between
/// updates, exactly 1 from update `steps` on.
pub fn linear_anneal_step(t0: f64, steps: usize, update_every: usize, epoch: usize) -> f64 {
    let k = (epoch / update_every).min(steps);
    if k == steps {
        1.0
    } else {
        t0 - (t0 - 1.0) * k as f64 / steps as f64
    }
}

/// One adaptive step: `1/T` grows by `tol / std(loglik)` (by `tol` when the
/// batch has zero spread), capped at `T = 1`.
pub fn adaann_step(t: f64, tol: f64, loglik: &[f64]) -> Result<f64> {
    Ok(adaann_step_with_floor(t, tol, loglik, None)?.0)
}

/// [`adaann_step`] with an optional progress floor: with `remaining`
/// updates left (this one included), the step is at least
/// `(1 - beta) / remaining`. Also reports whether the floor set the step.
pub fn adaann_step_with_floor(t: f64, tol: f64, loglik: &[f64], remaining: Option<usize>) -> Result<(f64, bool)> {
    if loglik.is_empty() {
        return Err(Error::EmptyInput("adaann log-likelihood batch"));
    }
    if loglik.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("adaann log-likelihood batch is not finite".into()));
    }
    let beta = 1.0 / t;
    let (_, sd) = if loglik.len() > 1 { mean_std(loglik) } else { (0.0, 0.0) };
    let step = if sd > 0.0 { tol / sd } else { tol };
    let (step, floored) = match remaining {
        Some(r) if r > 0 => {
            let need = (1.0 - beta).max(0.0) / r as f64;
            if need > step {
                (need, true)
            } else {
                (step, false)
            }
        }
        _ => (step, false),
    };
    let beta = (beta + step).min(1.0);
    // exact 1 once the cap is hit
    Ok((if beta >= 1.0 { 1.0 } else { 1.0 / beta }, floored))
}

/// A schedule plus its running temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleState {
    schedule: TemperatureSchedule,
    current: f64,
    updates: usize,
    floored_updates: usize,
}

impl ScheduleState {
    pub fn new(schedule: TemperatureSchedule) -> Result<Self> {
        schedule.validate()?;
        let current = match schedule {
            TemperatureSchedule::Constant { t } => t,
            TemperatureSchedule::UniformRange { lo, hi } => 0.5 * (lo + hi),
            TemperatureSchedule::LinearAnneal { t0, .. } | TemperatureSchedule::AdaAnn { t0, .. } => t0,
        };
        Ok(Self {
            schedule,
            current,
            updates: 0,
            floored_updates: 0,
        })
    }

    pub fn schedule(&self) -> &TemperatureSchedule {
        &self.schedule
    }

    /// Current temperature of an annealed or constant schedule.
    pub fn current(&self) -> f64 {
        self.current
    }

    /// AdaAnn updates applied so far.
    pub fn updates(&self) -> usize {
        self.updates
    }

    /// AdaAnn updates whose size came from the progress floor.
    pub fn floored_updates(&self) -> usize {
        self.floored_updates
    }

    /// Temperatures for the batch of `epoch`, one per element.
    pub fn sample_training_temperatures(&mut self, rng: &mut RngStream, batch: usize, epoch: usize) -> Vec<f64> {
        match self.schedule {
            TemperatureSchedule::UniformRange { lo, hi } => {
                if lo == hi {
                    vec![lo; batch]
                } else {
                    (0..batch).map(|_| rng.random_range(lo..=hi)).collect()
                }
            }
            TemperatureSchedule::LinearAnneal { t0, steps, update_every } => {
                self.current = linear_anneal_step(t0, steps, update_every, epoch);
                vec![self.current; batch]
            }
            _ => vec![self.current; batch],
        }
    }

    /// Feeds the batch's target log-densities back after `epoch`. AdaAnn
    /// moves on epochs that are positive multiples of `update_every`, up to
    /// its horizon.
    pub fn observe(&mut self, epoch: usize, loglik: &[f64]) -> Result<()> {
        if let TemperatureSchedule::AdaAnn { tol, update_every, horizon, .. } = self.schedule {
            if epoch == 0 || epoch % update_every != 0 || self.current == 1.0 {
                return Ok(());
            }
            if horizon.is_some_and(|h| epoch >= h) {
                return Ok(());
            }
            let remaining = horizon.map(|h| {
                let last = (h - 1) / update_every * update_every;
                (last - epoch) / update_every + 1
            });
            let (t, floored) = adaann_step_with_floor(self.current, tol, loglik, remaining)?;
            self.current = t;
            self.updates += 1;
            self.floored_updates += floored as usize;
        }
        Ok(())
    }
}
