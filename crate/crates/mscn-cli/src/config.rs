//! Run configuration: defaults, optional JSON config file, and `--set`
//! overrides, resolved in that order (later sources win). Unknown keys are
//! rejected at every layer.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use mscn_core::expansion::ExpansionConfig;
use mscn_core::geometry::GeneratorParams;
use mscn_core::harness::TrainConfig;
use mscn_core::layers::NetworkConfig;
use mscn_core::{Error, Result};

/// Environment variable consulted for the seed when neither the config file
/// nor an override provides one.
pub const SEED_ENV: &str = "MSCN_SEED";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Architecture preset: "default", "scl_only" or "tiny".
    pub network: String,
    /// Head dropout; negative keeps the preset's value.
    pub dropout: f64,
    /// Neighbors per receptive field; 0 keeps the preset's value.
    pub kernel_m: usize,
    /// Branches per kernel; 0 keeps the preset's value.
    pub kernel_s: usize,
    pub num_classes: usize,
    /// Classifier under training/evaluation: "mscn" or "baseline".
    pub model: String,
    pub normalize_baseline: bool,

    // Dataset synthesis.
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub points_per_cloud: usize,
    pub occlusion_frac: f64,
    pub jitter_lo: f64,
    pub jitter_hi: f64,
    pub channel_count: usize,

    // Supervised training.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,

    // Progressive expansion.
    pub cycles: usize,
    pub epochs_per_cycle: usize,
    pub generator_epochs: usize,
    pub batch_pairs: usize,
    pub d_n: usize,
    pub temperature: f64,
    pub div_margin: f64,

    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let tc = TrainConfig::default();
        let ec = ExpansionConfig::default();
        let gp = GeneratorParams::default();
        RunConfig {
            network: "default".into(),
            dropout: -1.0,
            kernel_m: 0,
            kernel_s: 0,
            num_classes: 3,
            model: "mscn".into(),
            normalize_baseline: true,
            per_class_train: 20,
            per_class_test: 10,
            points_per_cloud: gp.points_per_cloud,
            occlusion_frac: gp.occlusion_frac,
            jitter_lo: gp.jitter_range.0,
            jitter_hi: gp.jitter_range.1,
            channel_count: gp.channel_count,
            epochs: tc.epochs,
            batch_size: tc.batch_size,
            lr: tc.lr,
            cycles: ec.cycles,
            epochs_per_cycle: ec.epochs_per_cycle,
            generator_epochs: ec.generator_epochs,
            batch_pairs: ec.batch_pairs,
            d_n: ec.d_n,
            temperature: ec.temperature,
            div_margin: ec.div_margin,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn network_config(&self) -> Result<NetworkConfig> {
        let mut config = match self.network.as_str() {
            "default" => NetworkConfig::default_mscn(self.num_classes),
            "scl_only" => NetworkConfig::scl_only(self.num_classes),
            "tiny" => NetworkConfig::tiny(self.num_classes),
            other => {
                return Err(Error::Validation(format!(
                    "unknown network preset {other:?} (expected default, scl_only or tiny)"
                )))
            }
        };
        if self.dropout >= 0.0 {
            config.dropout = self.dropout;
        }
        if self.kernel_m > 0 {
            config.m = self.kernel_m;
        }
        if self.kernel_s > 0 {
            config.s = self.kernel_s;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn generator_params(&self) -> GeneratorParams {
        GeneratorParams {
            points_per_cloud: self.points_per_cloud,
            occlusion_frac: self.occlusion_frac,
            jitter_range: (self.jitter_lo, self.jitter_hi),
            channel_count: self.channel_count,
            ..Default::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
        }
    }

    pub fn expansion_config(&self) -> ExpansionConfig {
        ExpansionConfig {
            cycles: self.cycles,
            epochs_per_cycle: self.epochs_per_cycle,
            generator_epochs: self.generator_epochs,
            batch_pairs: self.batch_pairs,
            lr: self.lr,
            temperature: self.temperature,
            div_margin: self.div_margin,
            d_n: self.d_n,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model != "mscn" && self.model != "baseline" {
            return Err(Error::Validation(format!(
                "unknown model {:?} (expected mscn or baseline)",
                self.model
            )));
        }
        self.network_config()?;
        for (name, v) in [
            ("num_classes", self.num_classes),
            ("per_class_train", self.per_class_train),
            ("per_class_test", self.per_class_test),
            ("points_per_cloud", self.points_per_cloud),
            ("channel_count", self.channel_count),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("cycles", self.cycles),
            ("epochs_per_cycle", self.epochs_per_cycle),
            ("batch_pairs", self.batch_pairs),
            ("d_n", self.d_n),
        ] {
            if v == 0 {
                return Err(Error::Validation(format!("{name} must be >= 1")));
            }
        }
        if !(0.0..1.0).contains(&self.occlusion_frac) {
            return Err(Error::Validation(format!(
                "occlusion_frac {} out of [0, 1)",
                self.occlusion_frac
            )));
        }
        if !(self.jitter_lo > 0.0) || self.jitter_hi < self.jitter_lo {
            return Err(Error::Validation(format!(
                "bad jitter range ({}, {})",
                self.jitter_lo, self.jitter_hi
            )));
        }
        if !(self.lr > 0.0) || !(self.temperature > 0.0) {
            return Err(Error::Validation(
                "lr and temperature must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Parses one `key=value` override. The value is read as JSON when possible
/// (numbers, booleans), otherwise as a bare string.
fn parse_override(spec: &str) -> Result<(String, Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Validation(format!("override {spec:?} is not key=value")))?;
    if key.is_empty() {
        return Err(Error::Validation(format!("override {spec:?} has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// Resolves the effective configuration: defaults, then the config file,
/// then `--set` overrides. When no source supplies `seed`, the `MSCN_SEED`
/// environment variable is consulted before falling back to the default.
pub fn resolve(config_file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut merged = serde_json::to_value(RunConfig::default())?;
    let map = merged.as_object_mut().unwrap();
    let mut seed_given = false;

    if let Some(path) = config_file {
        let text = fs::read_to_string(path)
            .map_err(|e| mscn_core::Error::io(path.display().to_string(), e))?;
        let file: Value = serde_json::from_str(&text)?;
        let obj = file.as_object().ok_or_else(|| {
            Error::Validation(format!("{}: config must be a JSON object", path.display()))
        })?;
        for (k, v) in obj {
            if !map.contains_key(k) {
                return Err(Error::Validation(format!(
                    "{}: unknown config key {k:?}",
                    path.display()
                )));
            }
            seed_given |= k == "seed";
            map.insert(k.clone(), v.clone());
        }
    }

    for spec in overrides {
        let (k, v) = parse_override(spec)?;
        if !map.contains_key(&k) {
            return Err(Error::Validation(format!("unknown config key {k:?}")));
        }
        seed_given |= k == "seed";
        map.insert(k, v);
    }

    if !seed_given {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            let seed: u64 = raw.parse().map_err(|_| {
                Error::Validation(format!("{SEED_ENV}={raw:?} is not a valid seed"))
            })?;
            map.insert("seed".into(), Value::from(seed));
        }
    }

    let config: RunConfig = serde_json::from_value(merged)
        .map_err(|e| Error::Validation(format!("invalid configuration: {e}")))?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn overrides_beat_file_beats_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"epochs": 3, "lr": 0.01}"#).unwrap();
        let cfg = resolve(Some(&path), &["epochs=7".into()]).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.batch_size, RunConfig::default().batch_size);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(resolve(None, &["epohcs=3".into()]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"not_a_key": 1}"#).unwrap();
        assert!(resolve(Some(&path), &[]).is_err());
    }

    #[test]
    fn string_overrides_parse_without_quotes() {
        let cfg = resolve(None, &["network=tiny".into(), "seed=9".into()]).unwrap();
        assert_eq!(cfg.network, "tiny");
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn bad_values_fail_validation() {
        assert!(resolve(None, &["epochs=0".into()]).is_err());
        assert!(resolve(None, &["network=huge".into()]).is_err());
        assert!(resolve(None, &["occlusion_frac=1.5".into()]).is_err());
    }
}
