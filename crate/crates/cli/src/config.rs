//! Experiment configuration: TOML (or the JSON equivalent) describing the
//! mixture, the flow family, networks, training, and the sampling schedule.

use hamflow_core::gmm::{GaussianMixture, MixtureSpec};
use hamflow_core::hgf::{HgfKind, TimeDist, TrainConfig};
use hamflow_core::hsm::HsmConfig;
use hamflow_core::net::MlpConfig;
use hamflow_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub mixture: MixtureSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub net: NetSpec,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub hsm: HsmSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
}

/// Flow family plus its parameters. `alpha = "auto"` resolves to
/// `sqrt(d / E||x||^2)` from the mixture moments.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: KindName,
    #[serde(default)]
    pub alpha: Option<AlphaSpec>,
    #[serde(default)]
    pub box_lo: Option<Vec<f64>>,
    #[serde(default)]
    pub box_hi: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindName {
    Diffusion,
    FlowMatching,
    Oscillation,
    Reflection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Fixed(f64),
    Named(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_time_features")]
    pub time_features: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

fn default_time_features() -> usize {
    6
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec { hidden: default_hidden(), time_features: default_time_features() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// "uniform" or a fixed time value.
    #[serde(default)]
    pub lambda: Option<LambdaSpec>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default)]
    pub tail_average: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Fixed(f64),
    Named(String),
}

fn default_batch() -> usize {
    128
}
fn default_iterations() -> usize {
    2000
}
fn default_lr() -> f64 {
    1e-3
}
fn default_n_steps() -> usize {
    5
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            batch: default_batch(),
            iterations: default_iterations(),
            lr: default_lr(),
            lambda: None,
            horizon: None,
            n_steps: default_n_steps(),
            antithetic: false,
            tail_average: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HsmSpec {
    pub k_inner: usize,
    pub lr_v: f64,
    pub lr_f: f64,
    pub batch: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub horizon: f64,
    pub n_steps: usize,
    pub force_hidden: Vec<usize>,
    pub diag_interval: usize,
}

impl Default for HsmSpec {
    fn default() -> Self {
        HsmSpec {
            k_inner: 5,
            lr_v: 2e-3,
            lr_f: 1e-3,
            batch: 128,
            iterations: 2000,
            warmup: 300,
            horizon: 1.0,
            n_steps: 5,
            force_hidden: vec![64, 64],
            diag_interval: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSpec {
    pub steps: usize,
    /// Backward integration floor for learned predictors; analytic
    /// predictors always integrate to zero.
    pub t_min: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec { steps: 64, t_min: 1e-3 }
    }
}

/// A parsed config together with resolved domain objects.
pub struct Resolved {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub mixture: GaussianMixture,
    pub kind: HgfKind,
}

impl ExperimentConfig {
    /// Parse TOML or JSON depending on extension (falling back to trying
    /// both) and resolve the domain objects, validating as we go.
    pub fn load(path: &Path) -> Result<Resolved> {
        let bytes = std::fs::read(path)?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| Error::invalid("config file is not valid UTF-8"))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        let config: ExperimentConfig = if is_json {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::invalid(format!("TOML parse: {e}")))?
        };
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let config_hash = hamflow_core::checkpoint::hex_string(&hasher.finalize());
        config.resolve(config_hash)
    }

    pub fn resolve(self, config_hash: String) -> Result<Resolved> {
        let mixture: GaussianMixture = self.mixture.clone().try_into()?;
        let kind = match self.model.kind {
            KindName::Diffusion => HgfKind::Diffusion,
            KindName::FlowMatching => HgfKind::FlowMatching,
            KindName::Oscillation => {
                let alpha = match &self.model.alpha {
                    None => mixture.natural_alpha(),
                    Some(AlphaSpec::Fixed(a)) => *a,
                    Some(AlphaSpec::Named(name)) if name == "auto" => mixture.natural_alpha(),
                    Some(AlphaSpec::Named(other)) => {
                        return Err(Error::invalid(format!(
                            "alpha must be a number or \"auto\", got {other:?}"
                        )))
                    }
                };
                if alpha <= 0.0 {
                    return Err(Error::invalid("resolved alpha must be positive"));
                }
                HgfKind::Oscillation { alpha }
            }
            KindName::Reflection => {
                let lo = self
                    .model
                    .box_lo
                    .clone()
                    .ok_or_else(|| Error::invalid("reflection model needs box_lo"))?;
                let hi = self
                    .model
                    .box_hi
                    .clone()
                    .ok_or_else(|| Error::invalid("reflection model needs box_hi"))?;
                if lo.len() != mixture.dim()
                    || hi.len() != mixture.dim()
                    || lo.iter().zip(&hi).any(|(l, h)| h <= l)
                {
                    return Err(Error::invalid("reflection box must match the mixture dimension with lo < hi"));
                }
                HgfKind::Reflection { lo, hi }
            }
        };
        Ok(Resolved { config: self, config_hash, mixture, kind })
    }
}

impl Resolved {
    pub fn velocity_net_config(&self) -> MlpConfig {
        MlpConfig {
            input_dim: self.mixture.dim(),
            hidden: self.config.net.hidden.clone(),
            output_dim: self.mixture.dim(),
            time_features: Some(self.config.net.time_features),
            activation: hamflow_core::net::Activation::Tanh,
        }
    }

    pub fn train_config(&self, seed_override: Option<u64>) -> Result<TrainConfig> {
        let t = &self.config.train;
        let lambda = match &t.lambda {
            None => TimeDist::Uniform,
            Some(LambdaSpec::Fixed(v)) => TimeDist::Fixed(*v),
            Some(LambdaSpec::Named(name)) if name == "uniform" => TimeDist::Uniform,
            Some(LambdaSpec::Named(other)) => {
                return Err(Error::invalid(format!(
                    "lambda must be \"uniform\" or a fixed time, got {other:?}"
                )))
            }
        };
        Ok(TrainConfig {
            batch: t.batch,
            iterations: t.iterations,
            lr: t.lr,
            lambda,
            horizon: t.horizon,
            seed: seed_override.unwrap_or(self.config.seed),
            n_steps: t.n_steps,
            antithetic: t.antithetic,
            tail_average: t.tail_average,
        })
    }

    pub fn hsm_config(&self, seed_override: Option<u64>) -> HsmConfig {
        let h = &self.config.hsm;
        HsmConfig {
            horizon: h.horizon,
            lambda: TimeDist::Uniform,
            n_steps: h.n_steps,
            k_inner: h.k_inner,
            lr_v: h.lr_v,
            lr_f: h.lr_f,
            batch: h.batch,
            iterations: h.iterations,
            warmup_inner: h.warmup,
            seed: seed_override.unwrap_or(self.config.seed),
            diag_interval: h.diag_interval,
            patience: 8,
        }
    }
}
