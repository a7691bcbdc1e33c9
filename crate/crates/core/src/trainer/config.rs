use serde::{Deserialize, Serialize};

use crate::flow::FlowArchitecture;
use crate::tempering::{ObjectiveMode, TemperatureSchedule, TEMPERATURE_FLOOR};
use crate::{Error, Result};

/// Training method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Conditional flow, base and target tempered together.
    #[serde(rename = "flowvat")]
    FlowVat,
    /// As `flowvat` with the normalized tempered ELBO.
    #[serde(rename = "flowvat_exact")]
    FlowVatExact,
    /// Conditional flow, only the target tempered.
    #[serde(rename = "target_only")]
    TargetOnly,
    /// Plain flow VI at `T = 1`.
    #[serde(rename = "nf_vi")]
    NfVi,
    /// Non-conditional flow, target annealed linearly from `anneal_t0`.
    #[serde(rename = "linear_anneal")]
    LinearAnneal,
    /// Non-conditional flow, target annealed adaptively.
    #[serde(rename = "adaann")]
    AdaAnn,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::FlowVat,
        Method::FlowVatExact,
        Method::TargetOnly,
        Method::NfVi,
        Method::LinearAnneal,
        Method::AdaAnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FlowVat => "flowvat",
            Method::FlowVatExact => "flowvat_exact",
            Method::TargetOnly => "target_only",
            Method::NfVi => "nf_vi",
            Method::LinearAnneal => "linear_anneal",
            Method::AdaAnn => "adaann",
        }
    }

    /// Whether the flow reads the temperature.
    pub fn conditional(self) -> bool {
        matches!(self, Method::FlowVat | Method::FlowVatExact | Method::TargetOnly)
    }

    pub fn objective_mode(self) -> ObjectiveMode {
        match self {
            Method::FlowVat => ObjectiveMode::FlowVat,
            Method::FlowVatExact => ObjectiveMode::FlowVatExact,
            Method::TargetOnly | Method::LinearAnneal | Method::AdaAnn => ObjectiveMode::TargetOnly,
            Method::NfVi => ObjectiveMode::Plain,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(vec![format!("unknown method {s:?}")]))
    }
}

/// Named hyperparameter preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Paper,
}

/// Everything a training run needs besides the target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub seed: u64,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub pretrain_lr: f64,
    pub finetune_lr: f64,
    pub batch_size: usize,
    pub pretrain_t_range: [f64; 2],
    /// Used by conditional methods; the others fine-tune at `T = 1`.
    pub finetune_t_range: [f64; 2],
    pub anneal_t0: f64,
    /// Linear schedule updates; `None` means `pretrain_epochs / update_every - 1`.
    pub anneal_steps: Option<usize>,
    pub adaann_tol: f64,
    pub update_every: usize,
    pub weight_decay: f64,
    pub layers: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub bins: usize,
    pub half_width: f64,
    pub elbo_samples: usize,
}

impl TrainConfig {
    pub fn preset(preset: Preset, method: Method) -> Self {
        match preset {
            Preset::Desk => Self::desk(method),
            Preset::Paper => Self::paper(method),
        }
    }

    /// CPU-sized run: 6 layers of width 128, 3000 + 1500 epochs.
    pub fn desk(method: Method) -> Self {
        Self {
            method,
            seed: 0,
            pretrain_epochs: 3000,
            finetune_epochs: 1500,
            pretrain_lr: 1e-3,
            finetune_lr: 2e-4,
            batch_size: 256,
            pretrain_t_range: [0.95, 10.0],
            finetune_t_range: [0.95, 1.5],
            anneal_t0: 100.0,
            anneal_steps: None,
            adaann_tol: 0.02,
            update_every: 100,
            weight_decay: 0.01,
            layers: 6,
            hidden_layers: 2,
            width: 128,
            bins: 16,
            half_width: 8.0,
            elbo_samples: 5000,
        }
    }

    /// Full-scale run: 10 layers, 5 hidden layers of width 1024,
    /// 10^4 + 5x10^3 epochs at learning rates 5e-6 and 1e-6.
    pub fn paper(method: Method) -> Self {
        Self {
            pretrain_epochs: 10_000,
            finetune_epochs: 5000,
            pretrain_lr: 5e-6,
            finetune_lr: 1e-6,
            batch_size: 512,
            layers: 10,
            hidden_layers: 5,
            width: 1024,
            ..Self::desk(method)
        }
    }

    pub fn architecture(&self, dim: usize) -> FlowArchitecture {
        FlowArchitecture {
            dim,
            layers: self.layers,
            hidden_layers: self.hidden_layers,
            width: self.width,
            bins: self.bins,
            half_width: self.half_width,
            conditional: self.method.conditional(),
            permutation_seed: self.seed,
        }
    }

    pub fn linear_steps(&self) -> usize {
        self.anneal_steps
            .unwrap_or_else(|| (self.pretrain_epochs / self.update_every.max(1)).saturating_sub(1).max(1))
    }

    pub fn pretrain_schedule(&self) -> TemperatureSchedule {
        match self.method {
            Method::FlowVat | Method::FlowVatExact | Method::TargetOnly => TemperatureSchedule::UniformRange {
                lo: self.pretrain_t_range[0],
                hi: self.pretrain_t_range[1],
            },
            Method::NfVi => TemperatureSchedule::Constant { t: 1.0 },
            Method::LinearAnneal => TemperatureSchedule::LinearAnneal {
                t0: self.anneal_t0,
                steps: self.linear_steps(),
                update_every: self.update_every,
            },
            Method::AdaAnn => TemperatureSchedule::AdaAnn {
                t0: self.anneal_t0,
                tol: self.adaann_tol,
                update_every: self.update_every,
                horizon: Some(self.pretrain_epochs),
            },
        }
    }

    pub fn finetune_schedule(&self) -> TemperatureSchedule {
        if self.method.conditional() {
            TemperatureSchedule::UniformRange {
                lo: self.finetune_t_range[0],
                hi: self.finetune_t_range[1],
            }
        } else {
            TemperatureSchedule::Constant { t: 1.0 }
        }
    }

    /// Lists every problem at once.
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.pretrain_epochs + self.finetune_epochs == 0 {
            p.push("pretrain_epochs + finetune_epochs must be positive".to_string());
        }
        for (name, lr) in [("pretrain_lr", self.pretrain_lr), ("finetune_lr", self.finetune_lr)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                p.push(format!("{name} {lr} must be finite and non-negative"));
            }
        }
        if self.batch_size == 0 {
            p.push("batch_size must be positive".into());
        }
        for (name, [lo, hi]) in [("pretrain_t_range", self.pretrain_t_range), ("finetune_t_range", self.finetune_t_range)] {
            if !(lo >= TEMPERATURE_FLOOR && lo <= hi && hi.is_finite()) {
                p.push(format!("{name} [{lo}, {hi}] must satisfy {TEMPERATURE_FLOOR} <= lo <= hi"));
            }
        }
        if self.update_every == 0 {
            p.push("update_every must be positive".into());
        }
        if !(self.anneal_t0 >= 1.0 && self.anneal_t0.is_finite()) {
            p.push(format!("anneal_t0 {} must be at least 1", self.anneal_t0));
        }
        if !(self.adaann_tol >= 0.0 && self.adaann_tol.is_finite()) {
            p.push(format!("adaann_tol {} must be non-negative", self.adaann_tol));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            p.push(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if self.elbo_samples < 2 {
            p.push("elbo_samples must be at least 2".into());
        }
        if self.update_every > 0 {
            match self.method {
                Method::LinearAnneal => {
                    let steps = self.linear_steps();
                    if steps == 0 || steps * self.update_every > self.pretrain_epochs {
                        p.push(format!(
                            "linear schedule reaches T=1 at epoch {} but pretraining ends at {}",
                            steps * self.update_every,
                            self.pretrain_epochs
                        ));
                    }
                }
                Method::AdaAnn if self.update_every >= self.pretrain_epochs => {
                    p.push(format!(
                        "adaann updates every {} epochs, so it cannot reach T=1 within {} pretraining epochs",
                        self.update_every, self.pretrain_epochs
                    ));
                }
                _ => {}
            }
        }
        if let Err(Error::InvalidConfig(more)) = self.architecture(2).validate() {
            p.extend(more);
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(p))
        }
    }
}
