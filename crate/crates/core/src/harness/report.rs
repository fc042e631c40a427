use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::config::ExperimentConfig;
use super::eval::write_label_table;
use super::run::{AttackOutcome, AttackReport};
use crate::adversarial::write_transfer_csv;
use crate::error::Result;
use crate::ssl::write_pseudo;

/// `cycle,queries_spent,member0_acc,…,ensemble_acc,ensemble_agr`
pub fn curves_header(members: usize) -> String {
    let mut h = String::from("cycle,queries_spent");
    for m in 0..members {
        h.push_str(&format!(",member{m}_acc"));
    }
    h.push_str(",ensemble_acc,ensemble_agr");
    h
}

pub fn write_curves<W: Write>(mut w: W, report: &AttackReport, members: usize) -> Result<()> {
    writeln!(w, "{}", curves_header(members))?;
    for r in &report.rows {
        write!(w, "{},{}", r.cycle, r.queries_spent)?;
        for a in &r.member_test_acc {
            write!(w, ",{a}")?;
        }
        writeln!(w, ",{},{}", r.ensemble_acc, r.ensemble_agr)?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes every artifact of a run into `dir`:
///
/// | file | content |
/// |---|---|
/// | `curves.csv` | one row per cycle (plus one after pseudo-labeling) |
/// | `summary.json` | the full [`AttackReport`] |
/// | `config.json` | the configuration, re-loadable as is |
/// | `test_labels.csv` | per-sample truth, victim, member and ensemble labels |
/// | `pseudo_hist.csv`, `pseudo.csv` | pseudo-label counts per class and the audited set |
/// | `scores.csv` | candidate scores per cycle, when requested |
/// | `adversarial/member_<i>.csv` | per-sample transfer outcomes |
/// | `checkpoints/` | best member checkpoints with `index.txt` |
pub fn emit_reports(out: &AttackOutcome, cfg: &ExperimentConfig, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let members = out
        .ensemble
        .as_ref()
        .map(|e| e.len())
        .or_else(|| out.report.rows.first().map(|r| r.member_test_acc.len()))
        .unwrap_or(0);

    let mut w = create(&dir.join("curves.csv"))?;
    write_curves(&mut w, &out.report, members)?;
    w.flush()?;

    let mut summary = serde_json::to_string_pretty(&out.report)?;
    summary.push('\n');
    std::fs::write(dir.join("summary.json"), summary)?;

    let mut config = cfg.to_json();
    config.push('\n');
    std::fs::write(dir.join("config.json"), config)?;

    if !out.test_labels.is_empty() {
        let mut w = create(&dir.join("test_labels.csv"))?;
        write_label_table(&mut w, members, &out.test_labels)?;
        w.flush()?;
    }

    if let (Some(ssl), Some(pool)) = (&out.report.ssl, &out.pool) {
        let mut w = create(&dir.join("pseudo_hist.csv"))?;
        writeln!(w, "class,count")?;
        for (c, n) in ssl.histogram.iter().enumerate() {
            writeln!(w, "{c},{n}")?;
        }
        w.flush()?;
        let mut w = create(&dir.join("pseudo.csv"))?;
        write_pseudo(&mut w, pool.pseudo_labels(), &out.pseudo_audit)?;
        w.flush()?;
    }

    if let Some(scores) = &out.scores_csv {
        std::fs::write(dir.join("scores.csv"), scores)?;
    }

    if !out.transfer_reports.is_empty() {
        let adv = dir.join("adversarial");
        std::fs::create_dir_all(&adv)?;
        for (m, t) in out.transfer_reports.iter().enumerate() {
            let mut w = create(&adv.join(format!("member_{m}.csv")))?;
            write_transfer_csv(&mut w, t)?;
            w.flush()?;
        }
    }

    if let Some(state) = &out.ensemble {
        state.save_checkpoints(dir.join("checkpoints"))?;
    }
    Ok(())
}
