//! The declarative run configuration file (TOML).
//!
//! Sections map to the engine's config structs; unknown keys anywhere are
//! rejected before any work starts. `default_config_toml` renders the full
//! default tree, which doubles as the `--help` reference.

use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use cat_core::augment::AugmentConfig;
use cat_core::contrastive::ContrastiveConfig;
use cat_core::model::ModelConfig;
use cat_core::refine::RefineConfig;
use cat_core::synth::SynthConfig;
use cat_core::trainer::{Method, TrainConfig};

/// The `[train]` section: everything in [`TrainConfig`] except the nested
/// per-module sections, which live at the top level of the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub method: Method,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub labeled_batch_per_domain: usize,
    pub unlabeled_ratio: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lambda_u: f64,
    pub lambda_scl: f64,
    pub ema_lambda: f64,
    pub refine_interval: usize,
    pub fixed_tau: f64,
    pub per_domain_thresholds: bool,
    pub per_domain_unsup_loss: bool,
    pub labels_per_class: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_sources: Option<usize>,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            method: d.method,
            epochs: d.epochs,
            steps_per_epoch: d.steps_per_epoch,
            labeled_batch_per_domain: d.labeled_batch_per_domain,
            unlabeled_ratio: d.unlabeled_ratio,
            lr: d.lr,
            momentum: d.momentum,
            lambda_u: d.lambda_u,
            lambda_scl: d.lambda_scl,
            ema_lambda: d.ema_lambda,
            refine_interval: d.refine_interval,
            fixed_tau: d.fixed_tau,
            per_domain_thresholds: d.per_domain_thresholds,
            per_domain_unsup_loss: d.per_domain_unsup_loss,
            labels_per_class: d.labels_per_class,
            num_sources: d.num_sources,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Synthetic dataset block; optional when `--data` supplies a CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub refine: RefineConfig,
    #[serde(default)]
    pub contrastive: ContrastiveConfig,
}

/// The default configuration with the synthetic block spelled out; rendered
/// into `--help` and usable verbatim as a starting config file.
pub fn reference_config() -> RunConfig {
    RunConfig {
        synth: Some(SynthConfig::default()),
        ..RunConfig::default()
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    /// Loads `path` when given, otherwise the reference defaults (which
    /// include a `[synth]` block).
    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(reference_config()),
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if let Some(synth) = &self.synth {
            synth.validate()?;
        }
        self.to_train_config().validate()?;
        Ok(())
    }

    /// Assembles the engine-facing training config from the file sections.
    pub fn to_train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            method: t.method,
            epochs: t.epochs,
            steps_per_epoch: t.steps_per_epoch,
            labeled_batch_per_domain: t.labeled_batch_per_domain,
            unlabeled_ratio: t.unlabeled_ratio,
            lr: t.lr,
            momentum: t.momentum,
            lambda_u: t.lambda_u,
            lambda_scl: t.lambda_scl,
            ema_lambda: t.ema_lambda,
            refine_interval: t.refine_interval,
            fixed_tau: t.fixed_tau,
            per_domain_thresholds: t.per_domain_thresholds,
            per_domain_unsup_loss: t.per_domain_unsup_loss,
            labels_per_class: t.labels_per_class,
            num_sources: t.num_sources,
            seed: t.seed,
            model: self.model.clone(),
            augment: self.augment.clone(),
            refine: self.refine.clone(),
            contrastive: self.contrastive.clone(),
        }
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string_pretty(self).context("serializing effective config")
    }

    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.train.seed = s;
        }
    }

    pub fn apply_method(&mut self, method: Option<Method>) {
        if let Some(m) = method {
            self.train.method = m;
        }
    }
}

/// The complete default configuration rendered as TOML.
pub fn default_config_toml() -> String {
    reference_config()
        .to_toml()
        .expect("default config serializes")
}

pub fn parse_method(s: &str) -> anyhow::Result<Method> {
    match s.parse::<Method>() {
        Ok(m) => Ok(m),
        Err(e) => bail!("{e}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_round_trips_through_toml() {
        let config = reference_config();
        let text = config.to_toml().unwrap();
        let parsed: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(config, parsed);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err =
            toml::from_str::<RunConfig>("[train]\nepochs = 3\nturbo_mode = true\n").unwrap_err();
        assert!(err.to_string().contains("turbo_mode"), "{err}");
    }

    #[test]
    fn unknown_sections_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[warp]\nspeed = 9\n").is_err());
    }

    #[test]
    fn partial_files_use_defaults() {
        let config: RunConfig = toml::from_str("[train]\nseed = 9\n").unwrap();
        assert_eq!(config.train.seed, 9);
        assert_eq!(config.train.epochs, TrainSection::default().epochs);
        assert!(config.synth.is_none());
    }

    #[test]
    fn train_section_mirrors_train_config_defaults() {
        let assembled = RunConfig::default().to_train_config();
        assert_eq!(assembled, TrainConfig::default());
    }
}
