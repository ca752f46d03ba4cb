//! Over-baseline evaluation and the operator ablation driver.

use std::collections::HashSet;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::{open_backend, write_text, RunConfig};
use crate::backend::{Backend, Evaluator};
use crate::error::{Error, Result};
use crate::evolve::{fitness_serde, tune, GaConfig, Operators};
use crate::knowledge::PassKnowledgeBase;
use crate::model::ProgramUnit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub program_id: String,
    pub baseline_count: u64,
    pub tuned_count: Option<u64>,
    /// Percent reduction of the tuned sequence over the baseline.
    #[serde(with = "fitness_serde")]
    pub overoz: f64,
    pub prototype: Option<usize>,
    pub time_s: f64,
    pub evals: u64,
    /// Excluded from the mean (degenerate baseline or failed tuning).
    pub flagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub method: String,
    pub mean_overoz: f64,
    pub programs: usize,
    pub excluded: usize,
    pub overlapping_programs: usize,
    pub rows: Vec<EvalRow>,
    pub run_config: RunConfig,
}

impl EvalSummary {
    /// Arithmetic mean over unflagged rows (0 when none remain).
    pub fn mean_of(rows: &[EvalRow]) -> f64 {
        let kept: Vec<f64> = rows.iter().filter(|r| !r.flagged).map(|r| r.overoz).collect();
        if kept.is_empty() {
            0.0
        } else {
            kept.iter().sum::<f64>() / kept.len() as f64
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method",
            "program_id",
            "baseline_count",
            "tuned_count",
            "overoz",
            "prototype",
            "time_s",
            "evals",
            "flagged",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                self.method.clone(),
                r.program_id.clone(),
                r.baseline_count.to_string(),
                r.tuned_count.map(|c| c.to_string()).unwrap_or_default(),
                if r.overoz.is_finite() { r.overoz.to_string() } else { String::new() },
                r.prototype.map(|c| c.to_string()).unwrap_or_default(),
                r.time_s.to_string(),
                r.evals.to_string(),
                r.flagged.to_string(),
            ])
            .map_err(csv_err)?;
        }
        finish_csv(w)
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::data(format!("csv: {e}"))
}

pub(crate) fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::data(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("utf-8 csv"))
}

fn tune_rows(
    kb: &PassKnowledgeBase,
    backend: &std::sync::Arc<dyn Backend>,
    programs: &[ProgramUnit],
    ga: &GaConfig,
    jobs: usize,
    reproducible: bool,
) -> Result<Vec<EvalRow>> {
    // Fresh cache per call keeps budgets comparable between methods.
    let evaluator = Evaluator::new(backend.clone(), jobs)?;
    let mut rows = Vec::with_capacity(programs.len());
    for program in programs {
        let started = Instant::now();
        let baseline = evaluator.baseline(program)?;
        if baseline == 0 {
            warn!("`{}` has a zero baseline; excluded from the mean", program.id);
            rows.push(EvalRow {
                program_id: program.id.clone(),
                baseline_count: 0,
                tuned_count: None,
                overoz: f64::NEG_INFINITY,
                prototype: None,
                time_s: 0.0,
                evals: 0,
                flagged: true,
                note: Some("degenerate baseline".into()),
            });
            continue;
        }
        let report = tune(program, kb, &evaluator, ga)?;
        rows.push(EvalRow {
            program_id: program.id.clone(),
            baseline_count: baseline,
            tuned_count: report.best_count,
            overoz: report.best_fitness,
            prototype: Some(report.prototype),
            time_s: if reproducible { 0.0 } else { started.elapsed().as_secs_f64() },
            evals: report.backend_calls,
            flagged: !report.best_fitness.is_finite(),
            note: None,
        });
    }
    Ok(rows)
}

fn overlap(kb: &PassKnowledgeBase, programs: &[ProgramUnit]) -> usize {
    let known: HashSet<&str> = kb.provenance.program_digests.iter().map(String::as_str).collect();
    programs.iter().filter(|p| known.contains(p.digest())).count()
}

/// Tunes every program and reports per-program and mean over-baseline reduction.
pub fn cmd_evaluate(
    config: &RunConfig,
    kb: &PassKnowledgeBase,
    programs: &[ProgramUnit],
    method: &str,
) -> Result<EvalSummary> {
    if programs.is_empty() {
        return Err(Error::usage("no programs to evaluate"));
    }
    let backend = open_backend(&config.backend, config.programs.as_deref())?;
    kb.check_universe(backend.universe())?;
    let overlapping = overlap(kb, programs);
    if overlapping > 0 {
        warn!("{overlapping} evaluation programs also appear in the knowledge-base corpus");
    }
    let rows = tune_rows(kb, &backend, programs, &config.ga, config.backend.jobs, config.reproducible)?;
    let excluded = rows.iter().filter(|r| r.flagged).count();
    let summary = EvalSummary {
        method: method.to_string(),
        mean_overoz: EvalSummary::mean_of(&rows),
        programs: rows.len(),
        excluded,
        overlapping_programs: overlapping,
        rows,
        run_config: config.clone(),
    };
    info!("{method}: mean over-baseline reduction {:.4}%", summary.mean_overoz);
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Full,
    RandomInit,
    NoKc,
    NoKm,
    NoKnowledge,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::RandomInit,
        Variant::NoKc,
        Variant::NoKm,
        Variant::NoKnowledge,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "Full",
            Variant::RandomInit => "Random-Init",
            Variant::NoKc => "No-KC",
            Variant::NoKm => "No-KM",
            Variant::NoKnowledge => "No-Knowledge",
        }
    }

    pub fn operators(self) -> Operators {
        let all = Operators::default();
        match self {
            Variant::Full => all,
            Variant::RandomInit => Operators { smart_init: false, ..all },
            Variant::NoKc => Operators {
                knowledge_crossover: false,
                ..all
            },
            Variant::NoKm => Operators {
                knowledge_mutation: false,
                ..all
            },
            Variant::NoKnowledge => Operators::none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub label: String,
    pub mean_overoz: f64,
    pub delta_vs_full: f64,
    pub total_evals: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub summaries: Vec<EvalSummary>,
}

impl AblationTable {
    pub fn mean(&self, v: Variant) -> f64 {
        self.rows.iter().find(|r| r.variant == v).map_or(f64::NAN, |r| r.mean_overoz)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["variant", "mean_overoz", "delta_vs_full", "total_evals"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.label.clone(),
                format!("{:.4}", r.mean_overoz),
                format!("{:.4}", r.delta_vs_full),
                r.total_evals.to_string(),
            ])
            .map_err(csv_err)?;
        }
        finish_csv(w)
    }
}

/// Runs the evaluation under all five operator configurations with identical seeds and budget.
pub fn cmd_ablate(config: &RunConfig, kb: &PassKnowledgeBase, programs: &[ProgramUnit]) -> Result<AblationTable> {
    let mut summaries = Vec::with_capacity(Variant::ALL.len());
    for v in Variant::ALL {
        let mut cfg = config.clone();
        cfg.ga.operators = v.operators();
        summaries.push(cmd_evaluate(&cfg, kb, programs, v.label())?);
    }
    let full = summaries[0].mean_overoz;
    let rows = Variant::ALL
        .iter()
        .zip(&summaries)
        .map(|(v, s)| AblationRow {
            variant: *v,
            label: v.label().to_string(),
            mean_overoz: s.mean_overoz,
            delta_vs_full: s.mean_overoz - full,
            total_evals: s.rows.iter().map(|r| r.evals).sum(),
        })
        .collect();
    Ok(AblationTable { rows, summaries })
}

pub fn write_summary(summary: &EvalSummary, csv_path: Option<&Path>, json_path: Option<&Path>) -> Result<()> {
    if let Some(p) = csv_path {
        write_text(p, &summary.to_csv()?)?;
    }
    if let Some(p) = json_path {
        write_text(p, &super::to_pretty_json(summary))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(overoz: f64, flagged: bool) -> EvalRow {
        EvalRow {
            program_id: "p".into(),
            baseline_count: 100,
            tuned_count: Some(89),
            overoz,
            prototype: Some(0),
            time_s: 0.0,
            evals: 1,
            flagged,
            note: None,
        }
    }

    #[test]
    fn mean_examples() {
        assert_eq!(EvalSummary::mean_of(&[row(11.0, false)]), 11.0);
        assert_eq!(EvalSummary::mean_of(&[row(0.0, false), row(0.0, false)]), 0.0);
        assert_eq!(EvalSummary::mean_of(&[row(10.0, false), row(-50.0, true)]), 10.0);
        assert_eq!(EvalSummary::mean_of(&[]), 0.0);
    }

    #[test]
    fn variant_flags() {
        assert_eq!(Variant::Full.operators(), Operators::default());
        assert!(!Variant::RandomInit.operators().smart_init);
        assert!(Variant::RandomInit.operators().knowledge_crossover);
        assert!(!Variant::NoKc.operators().knowledge_crossover);
        assert!(!Variant::NoKm.operators().knowledge_mutation);
        assert_eq!(Variant::NoKnowledge.operators(), Operators::none());
    }
}
