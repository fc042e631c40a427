use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;

use clap::{Args, Parser, Subcommand};

use stealkit::adversarial::write_transfer_csv;
use stealkit::datapool::Dataset;
use stealkit::ensemble::load_checkpoints;
use stealkit::error::{Error, Result};
use stealkit::harness::{
    emit_reports, ensemble_spec, evaluate_labels, run_attack_partial, synthetic_splits, transfer_study, victim_labels,
    write_label_table, DataConfig, ExperimentConfig, Prepared, Stage,
};
use stealkit::netvictim::serve;
use stealkit::numkit::{load_model, save_model, MlpModel};
use stealkit::victim::{labeled_accuracy, train_victim};

#[derive(Parser)]
#[command(name = "stealkit", version, about = "Simulate and evaluate ensemble model-extraction attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed of the stage this subcommand runs.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic victim-train, pool and test splits as dataset files.
    GenData(Common),
    /// Train the victim and write its checkpoint.
    TrainVictim(Common),
    /// Serve a victim checkpoint as a budgeted hard-label API until interrupted.
    ServeVictim {
        #[arg(long)]
        bind: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        budget: usize,
        #[arg(long)]
        log_path: Option<PathBuf>,
    },
    /// Run the full extraction pipeline and write its reports.
    RunAttack(Common),
    /// Score saved member checkpoints against the test set.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory holding member checkpoints and index.txt.
        #[arg(long)]
        checkpoints: PathBuf,
    },
    /// Measure adversarial transferability from saved members to the victim.
    AdvTransfer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoints: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (name, res) = match cli.command {
        Command::GenData(c) => ("gen-data", gen_data(&c)),
        Command::TrainVictim(c) => ("train-victim", train_victim_cmd(&c)),
        Command::ServeVictim {
            bind,
            checkpoint,
            budget,
            log_path,
        } => ("serve-victim", serve_victim(&bind, &checkpoint, budget, log_path)),
        Command::RunAttack(c) => ("run-attack", run_attack_cmd(&c)),
        Command::Evaluate { common, checkpoints } => ("evaluate", evaluate_cmd(&common, &checkpoints)),
        Command::AdvTransfer { common, checkpoints } => ("adv-transfer", adv_transfer_cmd(&common, &checkpoints)),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let e = e.in_stage(name);
            let stage = match &e {
                Error::Stage { stage, .. } => *stage,
                _ => name,
            };
            eprintln!("stealkit {name}: stage {stage} failed: {}", e.root());
            ExitCode::FAILURE
        }
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    ExperimentConfig::load(&c.config).map_err(|e| e.in_stage("config"))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn gen_data(c: &Common) -> Result<()> {
    let mut cfg = load_config(c)?;
    if let (Some(s), DataConfig::Synthetic { seed, .. }) = (c.seed, &mut cfg.data) {
        *seed = s;
    }
    let (train, pool, test) = synthetic_splits(&cfg.data)
        .map_err(|e| e.in_stage(Stage::Data.name()))?
        .ok_or_else(|| Error::RejectedConfig("gen-data needs a synthetic data source".into()))?;
    std::fs::create_dir_all(&c.out)?;
    train.save(c.out.join("victim_train.aotd"))?;
    pool.save(c.out.join("pool.aotd"))?;
    test.save(c.out.join("test.aotd"))?;
    Ok(())
}

#[derive(serde::Serialize)]
struct VictimSummary {
    test_accuracy: f64,
    train_accuracy: Option<f64>,
    final_loss: Option<f64>,
    parameters: usize,
}

fn train_victim_cmd(c: &Common) -> Result<()> {
    let mut cfg = load_config(c)?;
    if let Some(s) = c.seed {
        cfg.victim.seed = s;
    }
    let stage = Stage::Victim.name();
    let (train, _, test) = match &cfg.data {
        DataConfig::Synthetic { .. } => synthetic_splits(&cfg.data).map_err(|e| e.in_stage(stage))?.expect("synthetic"),
        DataConfig::Files {
            victim_train, pool, test, ..
        } => {
            let train = victim_train
                .as_ref()
                .ok_or_else(|| Error::RejectedConfig("train-victim needs victim_train data".into()))?;
            (
                Dataset::load(train)?,
                Dataset::load(pool)?,
                Dataset::load(test)?,
            )
        }
    };
    let outcome = train_victim(&train, cfg.victim.spec.clone(), &cfg.victim.sgd, cfg.victim.seed)
        .map_err(|e| e.in_stage(stage))?;
    let model: &MlpModel = &outcome.model;
    std::fs::create_dir_all(&c.out)?;
    save_model(model, c.out.join("victim.aotm"))?;
    write_json(
        &c.out.join("victim.json"),
        &VictimSummary {
            test_accuracy: labeled_accuracy(model, &test)?,
            train_accuracy: Some(labeled_accuracy(model, &train)?),
            final_loss: outcome.loss_trace.last().copied(),
            parameters: model.spec().parameter_count(),
        },
    )
}

fn serve_victim(bind: &str, checkpoint: &Path, budget: usize, log_path: Option<PathBuf>) -> Result<()> {
    let model = load_model(checkpoint).map_err(|e| e.in_stage("load"))?;
    let handle = serve(model, budget, bind, log_path).map_err(|e| e.in_stage("bind"))?;
    println!("listening on {}", handle.local_addr());
    std::io::stdout().flush()?;
    let (tx, rx) = mpsc::channel();
    ctrlc::set_handler(move || {
        let _ = tx.send(());
    })
    .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let _ = rx.recv();
    log::info!("shutting down after {} predicts", handle.spent());
    handle.shutdown().map_err(|e| e.in_stage("shutdown"))
}

fn run_attack_cmd(c: &Common) -> Result<()> {
    let mut cfg = load_config(c)?;
    if let Some(s) = c.seed {
        cfg.root_seed = s;
    }
    let prep = Prepared::from_config(&cfg)?;
    let mut oracle = prep.oracle(&cfg).map_err(|e| e.in_stage(Stage::Query.name()))?;
    let (out, res) = run_attack_partial(&cfg, &prep, &mut oracle);
    let written = emit_reports(&out, &cfg, &c.out).map_err(|e| e.in_stage(Stage::Report.name()));
    res?;
    written
}

fn load_members(dir: &Path) -> Result<Vec<MlpModel>> {
    let ckpts = load_checkpoints(dir).map_err(|e| e.in_stage("load"))?;
    Ok(ckpts.into_iter().map(|(_, c)| c.model).collect())
}

fn evaluate_cmd(c: &Common, checkpoints: &Path) -> Result<()> {
    let cfg = load_config(c)?;
    let members = load_members(checkpoints)?;
    let prep = Prepared::from_config(&cfg)?;
    let stage = Stage::Report.name();
    let victim = victim_labels(&prep.victim, &prep.test).map_err(|e| e.in_stage(stage))?;
    let refs: Vec<&MlpModel> = members.iter().collect();
    let (eval, table) = evaluate_labels(&refs, &victim, &prep.test).map_err(|e| e.in_stage(stage))?;
    std::fs::create_dir_all(&c.out)?;
    write_json(&c.out.join("evaluation.json"), &eval)?;
    let mut w = BufWriter::new(File::create(c.out.join("test_labels.csv"))?);
    write_label_table(&mut w, members.len(), &table)?;
    w.flush()?;
    Ok(())
}

fn adv_transfer_cmd(c: &Common, checkpoints: &Path) -> Result<()> {
    let mut cfg = load_config(c)?;
    if let Some(s) = c.seed {
        cfg.root_seed = s;
    }
    let adv = cfg
        .adversarial
        .clone()
        .ok_or_else(|| Error::RejectedConfig("adv-transfer needs an adversarial section".into()))?;
    let members = load_members(checkpoints)?;
    let prep = Prepared::from_config(&cfg)?;
    let victim = victim_labels(&prep.victim, &prep.test).map_err(|e| e.in_stage(Stage::Adversarial.name()))?;
    let refs: Vec<&MlpModel> = members.iter().collect();
    let shared = ensemble_spec(&cfg).shared_victim_arch_index;
    let (rows, reports) = transfer_study(&refs, shared, &prep, &victim, &adv, cfg.root_seed)?;
    std::fs::create_dir_all(&c.out)?;
    write_json(&c.out.join("transfer.json"), &rows)?;
    for (m, t) in reports.iter().enumerate() {
        let mut w = BufWriter::new(File::create(c.out.join(format!("member_{m}.csv")))?);
        write_transfer_csv(&mut w, t)?;
        w.flush()?;
    }
    Ok(())
}
