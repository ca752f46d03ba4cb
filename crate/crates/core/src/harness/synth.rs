//! Generator for planted synthetic suites.
//!
//! Passes are assigned to categories round-robin, so each category forms a
//! pass family. Every prototype has one dominant category whose pool is
//! large; the other pools stay small. Planted pairs `(A, B)` use a flag that
//! `A` sets and `B` requires.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::synthetic::{Category, SuiteProgram, SyntheticPassSpec, Split, SUITE_SCHEMA_VERSION};
use crate::backend::SyntheticSuite;
use crate::error::{Error, Result};
use crate::model::PassId;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub passes: usize,
    /// Training programs.
    pub programs: usize,
    pub test_programs: usize,
    /// Planted prototypes, at most one per category.
    pub prototypes: usize,
    pub synergy_pairs: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            passes: 8,
            programs: 30,
            test_programs: 0,
            prototypes: 3,
            synergy_pairs: 2,
            seed: 42,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.passes == 0 {
            return Err(Error::usage("need at least one pass"));
        }
        if self.programs == 0 {
            return Err(Error::usage("need at least one training program"));
        }
        if self.prototypes == 0 || self.prototypes > Category::ALL.len() {
            return Err(Error::usage(format!(
                "prototypes must be in 1..={} (one dominant category each)",
                Category::ALL.len()
            )));
        }
        if self.prototypes > self.programs {
            return Err(Error::usage(format!(
                "{} prototypes cannot be planted in {} training programs",
                self.prototypes, self.programs
            )));
        }
        if 2 * self.synergy_pairs > self.passes {
            return Err(Error::usage(format!(
                "{} disjoint synergy pairs need at least {} passes",
                self.synergy_pairs,
                2 * self.synergy_pairs
            )));
        }
        Ok(())
    }
}

/// Planted structure of a generated suite, for oracle tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub params: SynthParams,
    /// Ordered `(A, B)` pairs where `A` enables `B`.
    pub planted_pairs: Vec<(PassId, PassId)>,
    pub families: BTreeMap<Category, Vec<PassId>>,
    pub dominant: Vec<Category>,
    pub program_prototypes: BTreeMap<String, usize>,
}

impl GroundTruth {
    pub fn to_json(&self) -> String {
        super::to_pretty_json(self)
    }
}

fn pass_name(i: usize, n: usize) -> String {
    if n <= 26 {
        ((b'A' + i as u8) as char).to_string()
    } else {
        let width = (n - 1).to_string().len();
        format!("p{i:0width$}")
    }
}

fn range(rng: &mut SplitMix64, lo: u64, hi: u64) -> u64 {
    lo + rng.below((hi - lo + 1) as usize) as u64
}

fn gen_program(rng: &mut SplitMix64, id: String, dominant: Category, split: Split) -> SuiteProgram {
    let pools = Category::ALL
        .into_iter()
        .map(|c| {
            let size = if c == dominant { range(rng, 120, 200) } else { range(rng, 10, 30) };
            (c, size)
        })
        .collect();
    SuiteProgram {
        id,
        base: range(rng, 20, 40),
        pools,
        split,
    }
}

/// Generates a suite and its ground truth. Same params, same bytes.
pub fn cmd_synth_gen(params: &SynthParams) -> Result<(SyntheticSuite, GroundTruth)> {
    params.validate()?;
    let mut rng = SplitMix64::new(params.seed);

    let mut passes: Vec<SyntheticPassSpec> = (0..params.passes)
        .map(|i| {
            let rate = range(&mut rng, 10, 50) as f64 / 100.0;
            Ok(SyntheticPassSpec {
                id: PassId::new(&pass_name(i, params.passes))?,
                target: Category::ALL[i % Category::ALL.len()],
                rate,
                requires_flag: None,
                sets_flag: None,
            })
        })
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..params.passes).collect();
    for i in (1..order.len()).rev() {
        let j = rng.below(i + 1);
        order.swap(i, j);
    }
    let mut planted_pairs = Vec::with_capacity(params.synergy_pairs);
    for k in 0..params.synergy_pairs {
        let (a, b) = (order[2 * k], order[2 * k + 1]);
        let flag = format!("f{k}");
        passes[a].sets_flag = Some(flag.clone());
        passes[b].requires_flag = Some(flag);
        planted_pairs.push((passes[a].id.clone(), passes[b].id.clone()));
    }

    let mut families: BTreeMap<Category, Vec<PassId>> = BTreeMap::new();
    for p in &passes {
        families.entry(p.target).or_default().push(p.id.clone());
    }
    let baseline: Vec<PassId> = Category::ALL
        .iter()
        .filter_map(|c| families.get(c).map(|f| f[0].clone()))
        .collect();

    let dominant: Vec<Category> = Category::ALL[..params.prototypes].to_vec();
    let mut programs = Vec::with_capacity(params.programs + params.test_programs);
    let mut program_prototypes = BTreeMap::new();
    for (prefix, count, split) in [
        ("train", params.programs, Split::Train),
        ("test", params.test_programs, Split::Test),
    ] {
        for j in 0..count {
            let proto = j % params.prototypes;
            let id = format!("{prefix}{j:03}");
            program_prototypes.insert(id.clone(), proto);
            programs.push(gen_program(&mut rng, id, dominant[proto], split.clone()));
        }
    }

    let suite = SyntheticSuite {
        schema_version: SUITE_SCHEMA_VERSION,
        passes,
        programs,
        baseline,
    };
    suite.validate()?;
    let truth = GroundTruth {
        params: params.clone(),
        planted_pairs,
        families,
        dominant,
        program_prototypes,
    };
    Ok((suite, truth))
}
