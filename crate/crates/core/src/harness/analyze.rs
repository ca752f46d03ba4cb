//! Plot-ready CSV views of a knowledge base and of single-program features.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::evaluate::{csv_err, finish_csv};
use super::write_text;
use crate::error::{Error, Result};
use crate::features::{extract_features, FEATURE_NAMES};
use crate::knowledge::PassKnowledgeBase;
use crate::model::ProgramUnit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub behavioral_csv: String,
    /// Passes by descending variance across prototypes.
    pub risky_csv: String,
    pub synergy_csv: String,
    pub groups_csv: String,
}

impl AnalysisReport {
    /// Writes `behavioral.csv`, `risky_passes.csv`, `synergy_edges.csv` and `pass_groups.csv`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        write_text(&dir.join("behavioral.csv"), &self.behavioral_csv)?;
        write_text(&dir.join("risky_passes.csv"), &self.risky_csv)?;
        write_text(&dir.join("synergy_edges.csv"), &self.synergy_csv)?;
        write_text(&dir.join("pass_groups.csv"), &self.groups_csv)
    }
}

/// Passes ranked by behavioral variance; ties keep universe order.
pub fn risky_ranking(kb: &PassKnowledgeBase) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64)> = kb
        .behavioral
        .iter()
        .map(|b| (b.pass.to_string(), b.variance()))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked
}

pub fn cmd_analyze_kb(kb: &PassKnowledgeBase) -> Result<AnalysisReport> {
    let n = kb.num_prototypes();

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["pass".to_string()];
    header.extend((0..n).map(|i| format!("proto{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for b in &kb.behavioral {
        let mut rec = vec![b.pass.to_string()];
        rec.extend(b.values.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let behavioral_csv = finish_csv(w)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rank", "pass", "variance"]).map_err(csv_err)?;
    for (i, (pass, var)) in risky_ranking(kb).into_iter().enumerate() {
        w.write_record([(i + 1).to_string(), pass, var.to_string()]).map_err(csv_err)?;
    }
    let risky_csv = finish_csv(w)?;

    let mut edges: Vec<_> = kb.synergy.edges.iter().collect();
    edges.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["from", "to", "count", "weight"]).map_err(csv_err)?;
    for e in edges {
        w.write_record([e.from.to_string(), e.to.to_string(), e.count.to_string(), e.weight.to_string()])
            .map_err(csv_err)?;
    }
    let synergy_csv = finish_csv(w)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["pass", "group"]).map_err(csv_err)?;
    for p in kb.universe.passes() {
        let g = kb
            .groups
            .group_of
            .get(p)
            .ok_or_else(|| Error::data(format!("pass `{p}` has no group")))?;
        w.write_record([p.to_string(), g.to_string()]).map_err(csv_err)?;
    }
    let groups_csv = finish_csv(w)?;

    Ok(AnalysisReport {
        behavioral_csv,
        risky_csv,
        synergy_csv,
        groups_csv,
    })
}

/// The named feature vector of one IR program as `name,value` CSV.
pub fn analyze_features(program: &ProgramUnit) -> Result<String> {
    let v = extract_features(program)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["feature", "value"]).map_err(csv_err)?;
    for (name, value) in FEATURE_NAMES.iter().zip(&v.values) {
        w.write_record([name.to_string(), value.to_string()]).map_err(csv_err)?;
    }
    finish_csv(w)
}
