//! Experiment configuration files: flat TOML, every key validated, unknown
//! keys rejected.

use std::path::{Path, PathBuf};

use foma::augment::{ApplySite, AugmentPolicy, KStrategy, LambdaDist, Method, MuProfile};
use foma::batching::BatchStrategy;
use foma::data::{load_csv, make_splits, normalize_minmax, Dataset};
use foma::linalg::SvMode;
use foma::train::{OptimizerKind, TrainConfig};
use foma::{Error, Result};
use serde::{Deserialize, Serialize};

fn default_true() -> bool {
    true
}
fn default_hidden() -> Vec<usize> {
    vec![128, 128]
}
fn default_rho() -> f64 {
    0.95
}
fn default_alpha() -> f64 {
    1.0
}
fn default_k_strategy() -> KStrategy {
    KStrategy::Rho
}
fn default_sv_mode() -> SvMode {
    SvMode::Small
}
fn default_apply_site() -> ApplySite {
    ApplySite::Input
}
fn default_mu_profile() -> MuProfile {
    MuProfile::One
}
fn default_lambda_dist() -> LambdaDist {
    LambdaDist::Beta
}
fn default_latent_layer() -> usize {
    2
}
fn default_batch_strategy() -> BatchStrategy {
    BatchStrategy::Random
}
fn default_optimizer() -> String {
    "adam".to_string()
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// One experiment, fully specified: dataset source and splits, model and
/// optimization settings, and the augmentation policy. Keys map one-to-one
/// onto the library's `TrainConfig` and `AugmentPolicy`; unknown keys are
/// rejected so typos fail fast instead of silently using a default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Short name used in comparison tables (e.g. "no2").
    pub dataset: String,
    /// CSV with feature columns followed by label columns.
    pub data_path: PathBuf,
    pub n_features: usize,
    pub m_labels: usize,
    #[serde(default = "default_true")]
    pub header: bool,
    /// Min-max normalize features with training-split statistics.
    #[serde(default = "default_true")]
    pub normalize: bool,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    /// Seed for the train/val/test partition; independent of the training
    /// seed so `--seed` varies the run, not the split.
    #[serde(default)]
    pub split_seed: u64,

    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_batch_strategy")]
    pub batch_strategy: BatchStrategy,
    /// "adam" or "sgd".
    #[serde(default = "default_optimizer")]
    pub optimizer: String,
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub grad_clip_norm: Option<f64>,

    /// "erm", "foma", "foma_rho", "mixup", or "noise".
    pub method: Method,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_k_strategy")]
    pub k_strategy: KStrategy,
    #[serde(default = "default_sv_mode")]
    pub sv_mode: SvMode,
    #[serde(default = "default_apply_site")]
    pub apply_site: ApplySite,
    #[serde(default = "default_mu_profile")]
    pub mu_profile: MuProfile,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "default_lambda_dist")]
    pub lambda_dist: LambdaDist,
    #[serde(default = "default_latent_layer")]
    pub latent_layer: usize,
    #[serde(default)]
    pub detached_latent: bool,

    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        cfg.train_config(None)?; // full validation up front
        Ok(cfg)
    }

    pub fn policy(&self) -> AugmentPolicy {
        AugmentPolicy {
            method: self.method,
            alpha: self.alpha,
            rho: self.rho,
            k_strategy: self.k_strategy,
            sv_mode: self.sv_mode,
            apply_site: self.apply_site,
            mu_profile: self.mu_profile,
            noise_sigma: self.noise_sigma,
            lambda_dist: self.lambda_dist,
            latent_layer: self.latent_layer,
            detached_latent: self.detached_latent,
        }
    }

    /// Build the library-level training config; `seed_override` comes from
    /// the `--seed` flag.
    pub fn train_config(&self, seed_override: Option<u64>) -> Result<TrainConfig> {
        let optimizer = match self.optimizer.as_str() {
            "adam" => OptimizerKind::default(),
            "sgd" => OptimizerKind::Sgd,
            other => {
                return Err(Error::Config(format!(
                    "config: optimizer must be \"adam\" or \"sgd\", got {other:?}"
                )))
            }
        };
        let cfg = TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: seed_override.unwrap_or(self.seed),
            policy: self.policy(),
            batch_strategy: self.batch_strategy,
            optimizer,
            hidden_dims: self.hidden_dims.clone(),
            grad_clip_norm: self.grad_clip_norm,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load the dataset, make the seeded splits, and (optionally) fit
    /// normalization. Paths are resolved relative to the config file's
    /// directory when not absolute.
    pub fn load_dataset(&self, config_dir: &Path) -> Result<Dataset> {
        let path = if self.data_path.is_absolute() {
            self.data_path.clone()
        } else {
            config_dir.join(&self.data_path)
        };
        let table = load_csv(&path, self.n_features, self.m_labels, self.header)?;
        let splits = make_splits(
            table.x.nrows(),
            (self.train_size, self.val_size, self.test_size),
            self.split_seed,
        )?;
        let dataset = Dataset::new(table, splits)?;
        if self.normalize {
            normalize_minmax(&dataset)
        } else {
            Ok(dataset)
        }
    }
}
