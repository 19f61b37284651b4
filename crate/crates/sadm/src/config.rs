//! Experiment configuration: JSON file over defaults, `--set` dot-path
//! overrides, strict unknown-key rejection, and master-seed propagation.

use crate::datasets::DatasetSpec;
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::sampler::SamplerConfig;
use crate::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Samples generated from the model for distribution metrics.
    pub n_samples: usize,
    pub n_projections: usize,
    /// Coverage radius in units of the dataset component sigma.
    pub coverage_radius_sigmas: f64,
    pub heatmap_t: f64,
    pub heatmap_batch: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_samples: 4000,
            n_projections: 256,
            coverage_radius_sigmas: 3.0,
            heatmap_t: 0.5,
            heatmap_batch: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub target: DatasetSpec,
    /// Structure-guided steps before the adversarial stage (6:1 ratio to
    /// the adversarial denoiser steps by default).
    pub structure_steps: u64,
    pub adversarial_steps_theta: u64,
    pub adversarial_steps_phi: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            target: DatasetSpec::rotated_eight_gaussians(22.5),
            structure_steps: 1200,
            adversarial_steps_theta: 200,
            adversarial_steps_phi: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub trainer: TrainConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
    pub finetune: FinetuneConfig,
}

impl Config {
    /// TrainConfig for the fine-tuning stage, preserving the 6:1 protocol.
    pub fn finetune_train_config(&self) -> TrainConfig {
        TrainConfig {
            phase1_steps: self.finetune.structure_steps,
            phase1_tolerance: None,
            adversarial_rounds: if self.finetune.adversarial_steps_theta > 0 {
                1
            } else {
                0
            },
            steps_per_round_theta: self.finetune.adversarial_steps_theta,
            steps_per_round_phi: self.finetune.adversarial_steps_phi,
            ..self.trainer.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.trainer.validate()?;
        if self.eval.n_samples < 2 {
            return Err(Error::Config("eval.n_samples must be >= 2".into()));
        }
        if self.eval.n_projections < 16 {
            return Err(Error::Config("eval.n_projections must be >= 16".into()));
        }
        Ok(())
    }
}

/// Strict deep-merge: every key in `src` must already exist in `dst`.
fn merge_strict(dst: &mut Value, src: &Value, prefix: &str) -> Result<()> {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                match d.get_mut(k) {
                    Some(slot) => merge_strict(slot, v, &path)?,
                    None => return Err(Error::UnknownConfigKey(path)),
                }
            }
            Ok(())
        }
        (d, s) => {
            *d = s.clone();
            Ok(())
        }
    }
}

fn parse_set_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn apply_set(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::Config(format!("--set expects key=value, got `{assignment}`"))
    })?;
    let mut cursor = &mut *root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| Error::UnknownConfigKey(key.to_string()))?;
        match obj.get_mut(*part) {
            Some(next) => {
                if i + 1 == parts.len() {
                    *next = parse_set_value(raw);
                    return Ok(());
                }
                cursor = next;
            }
            None => return Err(Error::UnknownConfigKey(key.to_string())),
        }
    }
    Err(Error::UnknownConfigKey(key.to_string()))
}

fn path_present(v: &Value, path: &[&str]) -> bool {
    let mut cur = v;
    for p in path {
        match cur.get(p) {
            Some(next) => cur = next,
            None => return false,
        }
    }
    true
}

/// Resolve the effective configuration from (defaults, optional JSON file,
/// `--set` overrides, optional master seed flag). The master seed fills
/// `trainer.seed`, `dataset.seed`, and `sampler.seed` unless those were set
/// explicitly.
pub fn resolve(
    file: Option<&Path>,
    sets: &[String],
    seed_flag: Option<u64>,
) -> Result<Config> {
    let mut root = serde_json::to_value(Config::default())?;

    let mut explicit = Value::Object(Default::default());
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let parsed: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad json in {}: {e}", path.display())))?;
        merge_strict(&mut root, &parsed, "")?;
        explicit = parsed;
    }
    for assignment in sets {
        apply_set(&mut root, assignment)?;
        // record which paths were touched for seed propagation
        if let Some((key, _)) = assignment.split_once('=') {
            let mut cur = explicit.as_object_mut().unwrap();
            let parts: Vec<&str> = key.split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                if i + 1 == parts.len() {
                    cur.insert(part.to_string(), Value::Bool(true));
                } else {
                    cur = cur
                        .entry(part.to_string())
                        .or_insert_with(|| Value::Object(Default::default()))
                        .as_object_mut()
                        .ok_or_else(|| Error::UnknownConfigKey(key.to_string()))?;
                }
            }
        }
    }

    if let Some(seed) = seed_flag {
        root["seed"] = Value::from(seed);
    }
    let master = root["seed"].as_u64().unwrap_or(0);
    for sub in [["trainer", "seed"], ["dataset", "seed"], ["sampler", "seed"]] {
        if !path_present(&explicit, &sub) {
            root[sub[0]][sub[1]] = Value::from(master);
        }
    }

    let config: Config = serde_json::from_value(root)
        .map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
    config.validate()?;
    Ok(config)
}
