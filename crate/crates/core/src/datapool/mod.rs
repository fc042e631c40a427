//! Datasets, pool bookkeeping, synthetic generators and augmentation.

pub mod augment;
mod dataset;
mod pool;
mod synth;

pub use augment::{strong_augment, weak_augment, AugmentConfig, StrongAugment, WeakAugment};
pub use dataset::{Dataset, Layout};
pub use pool::{initial_split, BudgetPlan, PoolState, SampleStatus};
pub use synth::{make_synthetic, SyntheticKind};
