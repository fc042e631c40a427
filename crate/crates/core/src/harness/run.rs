use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{AdversarialConfig, DataConfig, EnsembleConfig, ExperimentConfig};
use super::eval::{evaluate_labels, Evaluation};
use crate::adversarial::{self, PgdConfig, TransferReport};
use crate::datapool::{initial_split, make_synthetic, Dataset, PoolState};
use crate::ensemble::{self, EnsembleSpec, EnsembleState};
use crate::error::{Error, Result};
use crate::netvictim::RemoteVictim;
use crate::numkit::{self, MlpModel};
use crate::selection::{self, SCORES_HEADER};
use crate::ssl::{self, Audit};
use crate::victim::{self, HardLabel, VictimOracle};

/// Pipeline stages. Each stage draws from `root_seed ^ stage index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Data = 1,
    Victim = 2,
    Split = 3,
    Ensemble = 4,
    Train = 5,
    Select = 6,
    Query = 7,
    SslFilter = 8,
    SslTrain = 9,
    Adversarial = 10,
    Report = 11,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Victim => "victim",
            Stage::Split => "split",
            Stage::Ensemble => "ensemble",
            Stage::Train => "train",
            Stage::Select => "select",
            Stage::Query => "query",
            Stage::SslFilter => "ssl-filter",
            Stage::SslTrain => "ssl-train",
            Stage::Adversarial => "adversarial",
            Stage::Report => "report",
        }
    }

    pub fn seed(self, root: u64) -> u64 {
        root ^ self as u64
    }
}

trait InStage<T> {
    fn stage(self, s: Stage) -> Result<T>;
}

impl<T> InStage<T> for Result<T> {
    fn stage(self, s: Stage) -> Result<T> {
        self.map_err(|e| e.in_stage(s.name()))
    }
}

/// Everything that exists before the attacker starts: the pool, the labeled
/// test set and the victim model used for post-hoc evaluation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub pool: Dataset,
    pub test: Dataset,
    pub victim: MlpModel,
    pub victim_test_accuracy: f64,
}

/// Splits one generated dataset into victim-train, pool and test parts.
pub fn synthetic_splits(data: &DataConfig) -> Result<Option<(Dataset, Dataset, Dataset)>> {
    let DataConfig::Synthetic {
        generator,
        victim_train,
        pool,
        test,
        seed,
    } = data
    else {
        return Ok(None);
    };
    let all = make_synthetic(*generator, victim_train + pool + test, *seed)?;
    let idx: Vec<usize> = (0..all.len()).collect();
    let (a, rest) = idx.split_at(*victim_train);
    let (b, c) = rest.split_at(*pool);
    Ok(Some((all.subset(a)?, all.subset(b)?.without_labels(), all.subset(c)?)))
}

impl Prepared {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let (train, pool, test) = match &cfg.data {
            DataConfig::Synthetic { .. } => {
                let (t, p, s) = synthetic_splits(&cfg.data).stage(Stage::Data)?.expect("synthetic");
                (Some(t), p, s)
            }
            DataConfig::Files {
                victim_train,
                pool,
                test,
            } => {
                let load = || -> Result<_> {
                    let train = victim_train.as_ref().map(Dataset::load).transpose()?;
                    Ok((train, Dataset::load(pool)?.without_labels(), Dataset::load(test)?))
                };
                load().stage(Stage::Data)?
            }
        };
        let victim = match &cfg.victim.checkpoint {
            Some(path) => numkit::load_model(path).stage(Stage::Victim)?,
            None => {
                let train = train
                    .filter(|t| !t.is_empty())
                    .ok_or_else(|| Error::config("no victim training data"))
                    .stage(Stage::Victim)?;
                victim::train_victim(&train, cfg.victim.spec.clone(), &cfg.victim.sgd, cfg.victim.seed)
                    .stage(Stage::Victim)?
                    .model
            }
        };
        let victim_test_accuracy = victim::labeled_accuracy(&victim, &test).stage(Stage::Victim)?;
        log::info!("victim test accuracy {victim_test_accuracy:.4}");
        Ok(Self {
            pool,
            test,
            victim,
            victim_test_accuracy,
        })
    }

    /// Oracle for attack queries: the victim service named in the config,
    /// or the prepared victim in-process.
    pub fn oracle(&self, cfg: &ExperimentConfig) -> Result<VictimOracle> {
        match &cfg.victim.endpoint {
            Some(ep) => Ok(VictimOracle::remote(RemoteVictim::connect(ep.clone())?, cfg.budget)),
            None => Ok(VictimOracle::in_process(self.victim.clone(), cfg.budget)),
        }
    }
}

/// Resolves the ensemble spec a config describes.
pub fn ensemble_spec(cfg: &ExperimentConfig) -> EnsembleSpec {
    match &cfg.ensemble {
        EnsembleConfig::Desk {
            epochs,
            lr_decay_every,
        } => EnsembleSpec::desk_default(
            &cfg.victim.spec,
            *epochs,
            *lr_decay_every,
            Stage::Ensemble.seed(cfg.root_seed),
        ),
        EnsembleConfig::Custom { spec } => spec.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRow {
    pub cycle: usize,
    pub queries_spent: usize,
    pub member_val_acc: Vec<f64>,
    pub member_test_acc: Vec<f64>,
    pub member_test_agr: Vec<f64>,
    pub ensemble_acc: f64,
    pub ensemble_agr: f64,
    pub ensemble_val_agr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslSummary {
    pub passed_filter: usize,
    pub pseudo_labeled: usize,
    pub histogram: Vec<usize>,
    pub pseudo_accuracy: Option<f64>,
    pub val_agreement_before: f64,
    pub val_agreement_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberTransfer {
    pub member: usize,
    pub hidden_layers: Vec<usize>,
    pub shares_victim_arch: bool,
    pub pgd: Option<f64>,
    pub random: Option<f64>,
    pub source_fooled: usize,
    pub shared_failures: usize,
    pub clean_acc_src: f64,
    pub clean_acc_victim: f64,
    pub adv_acc_src: f64,
    pub adv_acc_victim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub strategy: String,
    pub root_seed: u64,
    pub budget_total: usize,
    pub budget_spent: usize,
    pub validation_size: usize,
    pub query_sizes: Vec<usize>,
    pub victim_test_accuracy: f64,
    pub rows: Vec<CycleRow>,
    pub ssl: Option<SslSummary>,
    pub transfer: Vec<MemberTransfer>,
    pub final_eval: Option<Evaluation>,
    pub partial: bool,
    pub failed_stage: Option<String>,
}

/// Report plus the artifacts that back it.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub report: AttackReport,
    pub ensemble: Option<EnsembleState>,
    pub pool: Option<PoolState>,
    /// Every query set in order, starting with `Q_0`.
    pub query_sets: Vec<Vec<usize>>,
    pub validation: Vec<usize>,
    pub pseudo_audit: BTreeMap<usize, Audit>,
    pub transfer_reports: Vec<TransferReport>,
    pub scores_csv: Option<String>,
    /// Per-sample test labels: truth, victim, members, ensemble.
    pub test_labels: Vec<Vec<usize>>,
}

impl AttackOutcome {
    fn empty(cfg: &ExperimentConfig, prep: &Prepared) -> Self {
        Self {
            report: AttackReport {
                strategy: cfg.strategy.name(),
                root_seed: cfg.root_seed,
                budget_total: cfg.budget,
                budget_spent: 0,
                validation_size: 0,
                query_sizes: Vec::new(),
                victim_test_accuracy: prep.victim_test_accuracy,
                rows: Vec::new(),
                ssl: None,
                transfer: Vec::new(),
                final_eval: None,
                partial: true,
                failed_stage: None,
            },
            ensemble: None,
            pool: None,
            query_sets: Vec::new(),
            validation: Vec::new(),
            pseudo_audit: BTreeMap::new(),
            transfer_reports: Vec::new(),
            scores_csv: cfg.dump_scores.then(|| format!("{SCORES_HEADER}\n")),
            test_labels: Vec::new(),
        }
    }
}

/// The victim's label for every row.
pub fn victim_labels(victim: &dyn HardLabel, data: &Dataset) -> Result<Vec<usize>> {
    data.rows().map(|x| victim.hard_label(x)).collect()
}

/// Majority-vote agreement with the victim's labels on the validation set.
pub fn validation_agreement(state: &EnsembleState, pool: &PoolState) -> Result<f64> {
    let val = pool.validation_labels();
    if val.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (&i, &y) in val {
        hits += usize::from(ensemble::ensemble_predict(state, pool.dataset().row(i))? == y);
    }
    Ok(hits as f64 / val.len() as f64)
}

/// Runs the pipeline, returning whatever was produced even when a stage
/// fails.
pub fn run_attack_partial(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    oracle: &mut VictimOracle,
) -> (AttackOutcome, Result<()>) {
    let mut out = AttackOutcome::empty(cfg, prep);
    let res = drive(cfg, prep, oracle, &mut out);
    match &res {
        Ok(()) => out.report.partial = false,
        Err(Error::Stage { stage, .. }) => out.report.failed_stage = Some(stage.to_string()),
        Err(_) => {}
    }
    (out, res)
}

/// Runs the pipeline against `oracle`.
pub fn run_attack_prepared(cfg: &ExperimentConfig, prep: &Prepared, oracle: &mut VictimOracle) -> Result<AttackOutcome> {
    let (out, res) = run_attack_partial(cfg, prep, oracle);
    res.map(|()| out)
}

fn drive(cfg: &ExperimentConfig, prep: &Prepared, oracle: &mut VictimOracle, out: &mut AttackOutcome) -> Result<()> {
    cfg.validate().stage(Stage::Data)?;
    let root = cfg.root_seed;
    let plan = cfg.plan();
    let test_truth = prep
        .test
        .labels()
        .ok_or_else(|| Error::input("test set must be labeled"))
        .stage(Stage::Data)?
        .to_vec();
    let test_victim = victim_labels(&prep.victim, &prep.test).stage(Stage::Data)?;

    let mut pool = PoolState::new(prep.pool.clone());
    let (val, q0) = initial_split(&pool, &plan, Stage::Split.seed(root)).stage(Stage::Split)?;
    oracle.query_validation(&val, &mut pool).stage(Stage::Query)?;
    oracle.query_labels(&q0, &mut pool).stage(Stage::Query)?;
    out.report.validation_size = val.len();
    out.validation = val;
    out.report.query_sizes.push(q0.len());
    out.query_sets.push(q0);
    out.report.budget_spent = oracle.budget().spent();

    let mut state = EnsembleState::new(ensemble_spec(cfg)).stage(Stage::Ensemble)?;
    let train_seed = Stage::Train.seed(root);
    let select_seed = Stage::Select.seed(root);

    for cycle in 1..=cfg.cycles {
        ensemble::train_cycle(&mut state, &pool, train_seed).stage(Stage::Train)?;
        let row = cycle_row(&state, &pool, prep, &test_truth, &test_victim, cycle, oracle.budget().spent())
            .stage(Stage::Train)?;
        log::info!(
            "cycle {cycle}: spent {} ensemble acc {:.4} agr {:.4}",
            row.queries_spent,
            row.ensemble_acc,
            row.ensemble_agr
        );
        out.report.rows.push(row);
        out.ensemble = Some(state.clone());

        if cycle < cfg.cycles {
            let k = plan.query_size(cycle);
            let sel = selection::select(&cfg.strategy, &state, &pool, k, crate::rng::derive(select_seed, cycle as u64))
                .stage(Stage::Select)?;
            if let Some(buf) = out.scores_csv.as_mut() {
                let mut bytes = Vec::new();
                selection::write_scores(&mut bytes, cycle, &sel).stage(Stage::Select)?;
                buf.push_str(&String::from_utf8(bytes).expect("csv is utf-8"));
            }
            oracle.query_labels(&sel.chosen, &mut pool).stage(Stage::Query)?;
            out.report.query_sizes.push(sel.chosen.len());
            out.query_sets.push(sel.chosen);
            out.report.budget_spent = oracle.budget().spent();
        }
    }

    if let Some(ssl_cfg) = &cfg.ssl {
        let before = validation_agreement(&state, &pool).stage(Stage::SslFilter)?;
        let filtered =
            ssl::assign_pseudo_labels(&state, &mut pool, ssl_cfg, Stage::SslFilter.seed(root)).stage(Stage::SslFilter)?;
        let passed = filtered.audit.values().filter(|a| a.selected).count();
        ssl::ssl_train(&mut state, &pool, ssl_cfg, Stage::SslTrain.seed(root)).stage(Stage::SslTrain)?;
        let after = validation_agreement(&state, &pool).stage(Stage::SslTrain)?;
        let row = cycle_row(
            &state,
            &pool,
            prep,
            &test_truth,
            &test_victim,
            cfg.cycles + 1,
            oracle.budget().spent(),
        )
        .stage(Stage::SslTrain)?;
        out.report.rows.push(row);
        out.report.ssl = Some(SslSummary {
            passed_filter: passed,
            pseudo_labeled: pool.pseudo_labels().len(),
            histogram: ssl::class_histogram(pool.pseudo_labels(), state.num_classes()),
            pseudo_accuracy: pseudo_accuracy(&prep.victim, &pool).stage(Stage::SslTrain)?,
            val_agreement_before: before,
            val_agreement_after: after,
        });
        out.pseudo_audit = filtered.audit;
        out.ensemble = Some(state.clone());
    }

    let models = state.best_models();
    let (eval, table) = evaluate_labels(&models, &test_victim, &prep.test).stage(Stage::Report)?;
    out.report.final_eval = Some(eval);
    out.test_labels = table;

    if let Some(adv) = &cfg.adversarial {
        let shared = state.spec().shared_victim_arch_index;
        let (rows, reports) = transfer_study(&models, shared, prep, &test_victim, adv, root)?;
        out.report.transfer = rows;
        out.transfer_reports = reports;
    }

    out.report.budget_spent = oracle.budget().spent();
    out.ensemble = Some(state);
    out.pool = Some(pool);
    Ok(())
}

/// Crafts adversarial examples on every member and measures how often they
/// also fool the victim, next to the random-perturbation baseline. The
/// attacked samples are the leading `adv.samples` test rows, optionally
/// restricted to those the victim gets right. Errors carry the adversarial
/// stage and the failing member.
pub fn transfer_study(
    models: &[&MlpModel],
    shared_victim_arch: usize,
    prep: &Prepared,
    test_victim: &[usize],
    adv: &AdversarialConfig,
    root: u64,
) -> Result<(Vec<MemberTransfer>, Vec<TransferReport>)> {
    let truth = prep
        .test
        .labels()
        .ok_or_else(|| Error::input("test set must be labeled"))
        .stage(Stage::Adversarial)?;
    let subset: Vec<usize> = (0..adv.samples.min(prep.test.len()))
        .filter(|&i| !adv.victim_correct_only || test_victim[i] == truth[i])
        .collect();
    let data = prep.test.subset(&subset).stage(Stage::Adversarial)?;
    let pgd = PgdConfig {
        seed: adv.pgd.seed ^ Stage::Adversarial.seed(root),
        ..adv.pgd
    };
    let mut rows = Vec::with_capacity(models.len());
    let mut reports = Vec::with_capacity(models.len());
    for (m, src) in models.iter().enumerate() {
        let t = adversarial::transferability(src, &prep.victim, &data, &pgd)
            .map_err(|e| e.in_member(m))
            .stage(Stage::Adversarial)?;
        let r = adversarial::random_transferability(src, &prep.victim, &data, &pgd)
            .map_err(|e| e.in_member(m))
            .stage(Stage::Adversarial)?;
        rows.push(MemberTransfer {
            member: m,
            hidden_layers: src.spec().hidden_layers.clone(),
            shares_victim_arch: m == shared_victim_arch,
            pgd: t.transferability,
            random: r.transferability,
            source_fooled: t.source_fooled,
            shared_failures: t.shared_failures,
            clean_acc_src: t.clean_acc_src,
            clean_acc_victim: t.clean_acc_victim,
            adv_acc_src: t.adv_acc_src,
            adv_acc_victim: t.adv_acc_victim,
        });
        reports.push(t);
    }
    Ok((rows, reports))
}

/// Share of pseudo-labels that match what the victim would have said.
/// Computed post hoc from the local victim; never fed back into the attack.
fn pseudo_accuracy(victim: &MlpModel, pool: &PoolState) -> Result<Option<f64>> {
    let p = pool.pseudo_labels();
    if p.is_empty() {
        return Ok(None);
    }
    let mut hits = 0usize;
    for (&i, &y) in p {
        hits += usize::from(victim.predict_label(pool.dataset().row(i))? == y);
    }
    Ok(Some(hits as f64 / p.len() as f64))
}

fn cycle_row(
    state: &EnsembleState,
    pool: &PoolState,
    prep: &Prepared,
    truth: &[usize],
    victim: &[usize],
    cycle: usize,
    spent: usize,
) -> Result<CycleRow> {
    let models = state.best_models();
    let (eval, _) = evaluate_labels(&models, victim, &prep.test)?;
    debug_assert_eq!(truth.len(), victim.len());
    Ok(CycleRow {
        cycle,
        queries_spent: spent,
        member_val_acc: state.best.iter().map(|c| c.validation_accuracy).collect(),
        member_test_acc: eval.members.iter().map(|m| m.accuracy).collect(),
        member_test_agr: eval.members.iter().map(|m| m.agreement).collect(),
        ensemble_acc: eval.ensemble.accuracy,
        ensemble_agr: eval.ensemble.agreement,
        ensemble_val_agr: validation_agreement(state, pool)?,
    })
}

/// Convenience for a single run from a config: prepares data and victim,
/// runs the attack, and writes reports when `output_dir` is set (also for a
/// failed run, flagged partial).
pub fn run_attack(cfg: &ExperimentConfig) -> Result<AttackOutcome> {
    let prep = Prepared::from_config(cfg)?;
    let mut oracle = prep.oracle(cfg).stage(Stage::Query)?;
    let (out, res) = run_attack_partial(cfg, &prep, &mut oracle);
    if let Some(dir) = &cfg.output_dir {
        let written = super::report::emit_reports(&out, cfg, dir).stage(Stage::Report);
        res?;
        written?;
    } else {
        res?;
    }
    Ok(out)
}
