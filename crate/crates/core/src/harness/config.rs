use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversarial::PgdConfig;
use crate::datapool::{BudgetPlan, SyntheticKind};
use crate::ensemble::EnsembleSpec;
use crate::error::{Error, Result};
use crate::numkit::{MlpSpec, SgdConfig};
use crate::selection::SelectionStrategy;
use crate::ssl::SslConfig;

/// Where the victim's training data, the attacker's pool and the labeled
/// test set come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// One generated dataset split by position into victim-train, pool and
    /// test parts, so all three share a distribution.
    Synthetic {
        generator: SyntheticKind,
        victim_train: usize,
        pool: usize,
        test: usize,
        seed: u64,
    },
    /// Dataset files in the binary dataset format. The pool's labels, if
    /// any, are dropped.
    Files {
        #[serde(default)]
        victim_train: Option<PathBuf>,
        pool: PathBuf,
        test: PathBuf,
    },
}

/// How the victim is obtained and reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VictimConfig {
    pub spec: MlpSpec,
    pub sgd: SgdConfig,
    #[serde(default)]
    pub seed: u64,
    /// Load this checkpoint instead of training.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Send attack queries to a running victim service at this address.
    /// Post-hoc evaluation still uses the local victim model.
    #[serde(default)]
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnsembleConfig {
    /// The five-member width/depth ladder with the victim architecture in
    /// the middle. Non-victim member seeds derive from the root seed.
    Desk { epochs: usize, lr_decay_every: usize },
    Custom { spec: EnsembleSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialConfig {
    pub pgd: PgdConfig,
    /// Number of leading test samples attacked.
    pub samples: usize,
    /// Attack only those samples the victim classifies correctly.
    #[serde(default)]
    pub victim_correct_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub victim: VictimConfig,
    pub ensemble: EnsembleConfig,
    pub strategy: SelectionStrategy,
    pub budget: usize,
    #[serde(default = "default_cycles")]
    pub cycles: usize,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub ssl: Option<SslConfig>,
    #[serde(default)]
    pub adversarial: Option<AdversarialConfig>,
    #[serde(default)]
    pub root_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Also write every candidate's score per cycle.
    #[serde(default)]
    pub dump_scores: bool,
}

fn default_cycles() -> usize {
    10
}

fn default_validation_fraction() -> f64 {
    0.1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn plan(&self) -> BudgetPlan {
        BudgetPlan {
            total: self.budget,
            cycles: self.cycles,
            validation_fraction: self.validation_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().validate()?;
        self.victim.spec.validate()?;
        self.victim.sgd.validate()?;
        self.strategy.validate()?;
        match &self.data {
            DataConfig::Synthetic {
                generator,
                victim_train,
                pool,
                test,
                ..
            } => {
                generator.validate()?;
                if *pool < self.budget {
                    return Err(Error::config("pool is smaller than the query budget"));
                }
                if *test == 0 {
                    return Err(Error::config("test set must be nonempty"));
                }
                if *victim_train == 0 && self.victim.checkpoint.is_none() {
                    return Err(Error::config("victim_train must be positive unless a checkpoint is given"));
                }
                if generator.num_classes() != self.victim.spec.num_classes {
                    return Err(Error::config("generator and victim disagree on the class count"));
                }
            }
            DataConfig::Files { victim_train, .. } => {
                if victim_train.is_none() && self.victim.checkpoint.is_none() {
                    return Err(Error::config("files source needs victim_train or a victim checkpoint"));
                }
            }
        }
        match &self.ensemble {
            EnsembleConfig::Desk {
                epochs,
                lr_decay_every,
            } => {
                if *epochs == 0 || *lr_decay_every == 0 {
                    return Err(Error::config("ensemble epochs and lr_decay_every must be positive"));
                }
            }
            EnsembleConfig::Custom { spec } => {
                spec.validate()?;
                let m = &spec.members[0].model;
                if m.input_dim != self.victim.spec.input_dim || m.num_classes != self.victim.spec.num_classes {
                    return Err(Error::config("ensemble and victim disagree on input or class count"));
                }
            }
        }
        if let Some(ssl) = &self.ssl {
            ssl.validate()?;
        }
        if let Some(adv) = &self.adversarial {
            adv.pgd.validate()?;
            if adv.samples == 0 {
                return Err(Error::config("adversarial.samples must be positive"));
            }
        }
        Ok(())
    }
}
