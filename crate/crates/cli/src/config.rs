use std::path::{Path, PathBuf};

use flowvat::targets::TargetSpec;
use flowvat::trainer::{Method, Preset, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// One training run as written by hand: a preset, a method, a seed, a
/// target and optional per-key overrides of the preset's [`TrainConfig`].
///
/// `resolved` is filled in when the run directory is written, so a run's
/// `config.json` can be fed back to `flowvat train --config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub method: Method,
    pub seed: u64,
    pub target: TargetSpec,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub overrides: Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved: Option<TrainConfig>,
}

impl ExperimentConfig {
    pub fn new(preset: Preset, method: Method, seed: u64, target: TargetSpec) -> Self {
        Self {
            preset,
            method,
            seed,
            target,
            overrides: Map::new(),
            out_dir: None,
            resolved: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("bad experiment config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Preset values with the overrides applied, checked as a whole. Every
    /// offending key is reported.
    pub fn resolve(&self) -> Result<TrainConfig, CliError> {
        let mut base = TrainConfig::preset(self.preset, self.method);
        base.seed = self.seed;
        let Value::Object(mut merged) = serde_json::to_value(&base).expect("config serializes") else {
            unreachable!("TrainConfig is a struct")
        };
        let mut problems = Vec::new();
        for (key, value) in &self.overrides {
            if key == "method" || key == "seed" {
                problems.push(format!("overrides.{key}: set `{key}` at the top level"));
            } else if !merged.contains_key(key) {
                problems.push(format!("overrides.{key}: unknown key"));
            } else {
                merged.insert(key.clone(), value.clone());
            }
        }
        if !problems.is_empty() {
            return Err(CliError::Usage(problems.join("; ")));
        }
        let config: TrainConfig =
            serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("overrides: {e}")))?;
        config.validate().map_err(CliError::from)?;
        if let Some(stored) = &self.resolved {
            if stored != &config {
                return Err(CliError::Usage(
                    "`resolved` does not match preset plus overrides; delete it or fix the overrides".into(),
                ));
            }
        }
        Ok(config)
    }

    /// The config as stored in a run directory.
    pub fn snapshot(&self, resolved: &TrainConfig) -> Value {
        let mut copy = self.clone();
        copy.resolved = Some(resolved.clone());
        serde_json::to_value(copy).expect("config serializes")
    }

    /// Directory name used when neither `--out` nor `out_dir` is given.
    pub fn default_run_name(&self) -> String {
        let target = match &self.target {
            TargetSpec::Ring2d {} => "ring2d".to_string(),
            TargetSpec::EightSchools {} => "eight_schools".to_string(),
            TargetSpec::Gaussian { mean, .. } => format!("gaussian{}d", mean.len()),
            TargetSpec::GmRandom { dim, modes, seed } => format!("gm{dim}d_k{modes}_seed{seed}"),
            TargetSpec::GmFile { path } => path
                .file_stem()
                .map_or("gm".to_string(), |s| s.to_string_lossy().into_owned()),
        };
        format!("{target}_{}_seed{}", self.method.name(), self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring() -> ExperimentConfig {
        ExperimentConfig::new(Preset::Desk, Method::FlowVat, 3, TargetSpec::Ring2d {})
    }

    #[test]
    fn overrides_apply_and_seed_is_top_level() {
        let mut c = ring();
        c.overrides.insert("pretrain_epochs".into(), 10.into());
        let r = c.resolve().unwrap();
        assert_eq!(r.pretrain_epochs, 10);
        assert_eq!(r.seed, 3);
        assert_eq!(r.method, Method::FlowVat);
    }

    #[test]
    fn every_bad_key_is_listed() {
        let mut c = ring();
        c.overrides.insert("bogus".into(), 1.into());
        c.overrides.insert("seed".into(), 1.into());
        let msg = c.resolve().unwrap_err().to_string();
        assert!(msg.contains("overrides.bogus") && msg.contains("overrides.seed"), "{msg}");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut c = ExperimentConfig::new(Preset::Desk, Method::AdaAnn, 0, TargetSpec::Ring2d {});
        c.overrides.insert("update_every".into(), 5000.into());
        let err = c.resolve().unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("adaann"), "{err}");
    }

    #[test]
    fn snapshot_reruns_to_the_same_config() {
        let mut c = ring();
        c.overrides.insert("width".into(), 32.into());
        let resolved = c.resolve().unwrap();
        let snap = c.snapshot(&resolved);
        let back = ExperimentConfig::from_json(&snap.to_string()).unwrap();
        assert_eq!(back.resolve().unwrap(), resolved);
        let mut tampered = back.clone();
        tampered.overrides.insert("width".into(), 64.into());
        assert!(tampered.resolve().is_err());
    }

    #[test]
    fn unknown_top_level_keys_rejected() {
        let text = r#"{"preset": "desk", "method": "nf_vi", "seed": 0, "target": {"kind": "ring2d"}, "extra": 1}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
        let text = r#"{"preset": "desk", "method": "nf_vi", "seed": 0, "target": {"kind": "ring2d"}}"#;
        assert_eq!(ExperimentConfig::from_json(text).unwrap().default_run_name(), "ring2d_nf_vi_seed0");
    }
}
