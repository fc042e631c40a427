//! End-to-end orchestration: configuration, the attack pipeline, metrics and
//! report files.

mod config;
mod eval;
mod report;
mod run;

pub use config::{AdversarialConfig, DataConfig, EnsembleConfig, ExperimentConfig, VictimConfig};
pub use eval::{evaluate, evaluate_labels, write_label_table, Evaluation, Metric, LABELS_HEADER_PREFIX};
pub use report::{curves_header, emit_reports, write_curves};
pub use run::{
    ensemble_spec, run_attack, run_attack_partial, run_attack_prepared, synthetic_splits, transfer_study, validation_agreement,
    victim_labels,
    AttackOutcome, AttackReport, CycleRow, MemberTransfer, Prepared, SslSummary, Stage,
};
