//! Experiment configuration: a single JSON document, schema-validated with
//! unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use longcl_core::{
    AlphaMode, Arm, EncoderChoice, Error, Family, MemManConfig, PartitionChoice, Result,
    RunConfig, SyntheticSpec, TrainConfig,
};

/// Where the task stream comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StreamSpec {
    Synthetic {
        family: Family,
        tasks: usize,
        train_per_task: usize,
        test_per_task: usize,
        #[serde(default = "default_features")]
        features: usize,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_radius")]
        mean_radius: f64,
        #[serde(default)]
        seed: u64,
    },
    Manifest {
        path: PathBuf,
    },
}

fn default_features() -> usize {
    8
}
fn default_classes() -> usize {
    2
}
fn default_noise() -> f64 {
    0.8
}
fn default_radius() -> f64 {
    2.0
}

impl StreamSpec {
    pub fn to_synthetic(&self) -> Option<SyntheticSpec> {
        match self {
            StreamSpec::Synthetic {
                family,
                tasks,
                train_per_task,
                test_per_task,
                features,
                classes,
                noise,
                mean_radius,
                seed,
            } => Some(SyntheticSpec {
                family: *family,
                tasks: *tasks,
                train_per_task: *train_per_task,
                test_per_task: *test_per_task,
                features: *features,
                classes: *classes,
                noise: *noise,
                mean_radius: *mean_radius,
                seed: *seed,
            }),
            StreamSpec::Manifest { .. } => None,
        }
    }

    /// Stable identity used by `compare` to refuse mixing different streams.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("spec serializes");
        let mut hash: u64 = 0xcbf29ce484222325;
        for b in canonical.bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        format!("{hash:016x}")
    }
}

/// One entry of the order study list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OrderSpec {
    Identity,
    Seed { seed: u64 },
    Explicit { permutation: Vec<usize> },
}

impl OrderSpec {
    pub fn label(&self) -> String {
        match self {
            OrderSpec::Identity => "identity".to_string(),
            OrderSpec::Seed { seed } => format!("shuffle{seed}"),
            OrderSpec::Explicit { permutation } => {
                let joined: Vec<String> = permutation.iter().map(usize::to_string).collect();
                format!("perm{}", joined.join("-"))
            }
        }
    }
}

fn default_arms() -> Vec<String> {
    vec!["long-cl".to_string()]
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_orders() -> Vec<OrderSpec> {
    vec![OrderSpec::Identity]
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_rank() -> usize {
    4
}
fn default_epochs() -> usize {
    1
}
fn default_batch_size() -> usize {
    16
}
fn default_learning_rate() -> f64 {
    0.2
}
fn default_k_fraction() -> f64 {
    0.10
}
fn default_lambda_floor() -> f64 {
    0.30
}
fn default_alpha_mode() -> AlphaMode {
    AlphaMode::Adaptive
}
fn default_ratio() -> f64 {
    0.10
}
fn default_true() -> bool {
    true
}
fn default_embed_dim() -> usize {
    32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    Identity,
    RandomProjection,
}

/// The experiment document. Every field beyond `stream` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub stream: StreamSpec,
    #[serde(default = "default_arms")]
    pub arms: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_orders")]
    pub orders: Vec<OrderSpec>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_k_fraction")]
    pub k_fraction: f64,
    #[serde(default = "default_lambda_floor")]
    pub lambda_floor: f64,
    #[serde(default = "default_alpha_mode")]
    pub alpha_mode: AlphaMode,
    #[serde(default = "default_ratio")]
    pub r_h: f64,
    #[serde(default = "default_ratio")]
    pub r_g: f64,
    #[serde(default = "default_true")]
    pub delta_rule: bool,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_encoder")]
    pub encoder: EncoderKind,
    #[serde(default = "default_granularity")]
    pub granularity: PartitionChoice,
    #[serde(default = "default_true")]
    pub eval_zero_shot: bool,
}

fn default_encoder() -> EncoderKind {
    EncoderKind::RandomProjection
}
fn default_granularity() -> PartitionChoice {
    PartitionChoice::FactorRows
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Field-level validation beyond what the schema enforces.
    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(Error::config("arms must list at least one method arm"));
        }
        for arm in &self.arms {
            Arm::parse(arm)?;
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must list at least one seed"));
        }
        if self.orders.is_empty() {
            return Err(Error::config("orders must list at least one order"));
        }
        if let StreamSpec::Synthetic { tasks, .. } = &self.stream {
            for order in &self.orders {
                if let OrderSpec::Explicit { permutation } = order {
                    if permutation.len() != *tasks {
                        return Err(Error::config(format!(
                            "orders: explicit permutation has length {}, stream has {tasks} tasks",
                            permutation.len()
                        )));
                    }
                }
            }
        }
        self.run_config(0).validate()
    }

    /// Per-cell run configuration for a given training seed.
    pub fn run_config(&self, seed: u64) -> RunConfig {
        RunConfig {
            rank: self.rank,
            train: TrainConfig {
                epochs: self.epochs,
                batch_size: self.batch_size,
                learning_rate: self.learning_rate,
                momentum: self.momentum,
                seed,
            },
            memman: MemManConfig {
                k_fraction: self.k_fraction,
                lambda_floor: self.lambda_floor,
                alpha_mode: self.alpha_mode,
            },
            r_h: self.r_h,
            r_g: self.r_g,
            delta_rule: self.delta_rule,
            encoder: match self.encoder {
                EncoderKind::Identity => EncoderChoice::Identity,
                EncoderKind::RandomProjection => EncoderChoice::RandomProjection {
                    dim: self.embed_dim,
                },
            },
            granularity: self.granularity,
            eval_zero_shot: self.eval_zero_shot,
            record_trace: false,
        }
    }

    /// Directory label for an arm; fixed-alpha variants get their own label
    /// so sweeps land in distinct directories.
    pub fn arm_label(&self, arm: Arm) -> String {
        match self.alpha_mode {
            AlphaMode::Adaptive => arm.as_str().to_string(),
            AlphaMode::Fixed(a) => format!("{}-fixed{a}", arm.as_str()),
        }
    }
}

/// Sidecar metadata written next to each run's summary, consumed by
/// `compare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub arm: String,
    pub arm_label: String,
    pub seed: u64,
    pub order_label: String,
    pub permutation: Vec<usize>,
    pub stream_fingerprint: String,
    pub m: usize,
}

impl RunMeta {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
