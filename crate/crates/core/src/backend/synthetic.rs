//! Deterministic desk-scale backend.
//!
//! A program is a base instruction count plus removable pools, one per
//! category. Each pass shrinks one pool by `floor(rate * pool)`; a pass whose
//! `requires_flag` was set by an earlier pass runs at `min(1, 2 * rate)`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{BackendError, Error, Result};
use crate::model::{digest_bytes, FeatureVector, PassId, PassUniverse, ProgramUnit};

use super::Backend;

pub const SUITE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Arith,
    Mem,
    Branch,
    Dead,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Arith, Category::Mem, Category::Branch, Category::Dead];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Arith => "arith",
            Category::Mem => "mem",
            Category::Branch => "branch",
            Category::Dead => "dead",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::data(format!("unknown category `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPassSpec {
    pub id: PassId,
    pub target: Category,
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requires_flag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sets_flag: Option<String>,
}

impl SyntheticPassSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(Error::data(format!(
                "pass `{}` has rate {} outside (0, 1]",
                self.id, self.rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SyntheticProgram {
    pub base: u64,
    #[serde(default)]
    pub pools: BTreeMap<Category, u64>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub flags: BTreeSet<String>,
}

impl SyntheticProgram {
    pub fn instruction_count(&self) -> u64 {
        self.base + self.pools.values().sum::<u64>()
    }
}

/// Applies one pass to a program state.
pub fn apply_synthetic_pass(state: &SyntheticProgram, spec: &SyntheticPassSpec) -> SyntheticProgram {
    let mut next = state.clone();
    let boosted = spec
        .requires_flag
        .as_ref()
        .is_some_and(|f| state.flags.contains(f));
    let rate = if boosted { (2.0 * spec.rate).min(1.0) } else { spec.rate };
    if let Some(pool) = next.pools.get_mut(&spec.target) {
        let removed = (rate * *pool as f64).floor() as u64;
        *pool -= removed.min(*pool);
    }
    if let Some(flag) = &spec.sets_flag {
        next.flags.insert(flag.clone());
    }
    next
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteProgram {
    pub id: String,
    pub base: u64,
    #[serde(default)]
    pub pools: BTreeMap<Category, u64>,
    #[serde(default)]
    pub split: Split,
}

impl SuiteProgram {
    pub fn state(&self) -> SyntheticProgram {
        SyntheticProgram {
            base: self.base,
            pools: self.pools.clone(),
            flags: BTreeSet::new(),
        }
    }

    /// Program unit whose payload is the canonical JSON of its initial state.
    pub fn unit(&self) -> ProgramUnit {
        let payload = serde_json::to_vec(&self.state()).expect("serializable state");
        ProgramUnit::new(self.id.clone(), payload)
    }
}

/// A synthetic suite file: pass specs, programs and the baseline sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSuite {
    pub schema_version: u32,
    pub passes: Vec<SyntheticPassSpec>,
    pub programs: Vec<SuiteProgram>,
    pub baseline: Vec<PassId>,
}

impl SyntheticSuite {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SUITE_SCHEMA_VERSION {
            return Err(Error::data(format!(
                "suite schema version {} unsupported (expected {SUITE_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        for p in &self.passes {
            p.validate()?;
        }
        let universe = self.universe()?;
        if let Some(p) = self.baseline.iter().find(|p| !universe.contains(p)) {
            return Err(Error::data(format!("baseline pass `{p}` is not declared")));
        }
        let mut ids = BTreeSet::new();
        for p in &self.programs {
            if !ids.insert(p.id.as_str()) {
                return Err(Error::data(format!("duplicate program id `{}`", p.id)));
            }
        }
        Ok(())
    }

    pub fn universe(&self) -> Result<PassUniverse> {
        PassUniverse::new(self.passes.iter().map(|p| p.id.clone()).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let suite: SyntheticSuite = serde_json::from_slice(&bytes)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        suite.validate()?;
        Ok(suite)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable suite");
        s.push('\n');
        s
    }

    pub fn program(&self, id: &str) -> Option<&SuiteProgram> {
        self.programs.iter().find(|p| p.id == id)
    }

    pub fn units(&self, split: Option<Split>) -> Vec<ProgramUnit> {
        self.programs
            .iter()
            .filter(|p| split.as_ref().is_none_or(|s| &p.split == s))
            .map(SuiteProgram::unit)
            .collect()
    }
}

pub struct SyntheticBackend {
    id: String,
    universe: PassUniverse,
    specs: HashMap<PassId, SyntheticPassSpec>,
    baseline: Vec<PassId>,
}

impl SyntheticBackend {
    pub fn new(suite: &SyntheticSuite) -> Result<Self> {
        suite.validate()?;
        let universe = suite.universe()?;
        let specs = suite
            .passes
            .iter()
            .map(|p| (p.id.clone(), p.clone()))
            .collect();
        let digest = digest_bytes(serde_json::to_string(&suite.passes)?.as_bytes());
        Ok(SyntheticBackend {
            id: format!("synthetic:{}", &digest[..16]),
            universe,
            specs,
            baseline: suite.baseline.clone(),
        })
    }

    pub fn spec(&self, pass: &PassId) -> Option<&SyntheticPassSpec> {
        self.specs.get(pass)
    }

    fn decode(program: &ProgramUnit) -> Result<SyntheticProgram, BackendError> {
        serde_json::from_slice(program.source())
            .map_err(|e| BackendError::BadProgram(format!("{}: {e}", program.id)))
    }

    pub fn run(&self, state: &SyntheticProgram, seq: &[PassId]) -> Result<SyntheticProgram, BackendError> {
        let mut state = state.clone();
        for pass in seq {
            let spec = self
                .specs
                .get(pass)
                .ok_or_else(|| BackendError::UnknownPass(pass.to_string()))?;
            state = apply_synthetic_pass(&state, spec);
        }
        Ok(state)
    }
}

impl Backend for SyntheticBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn universe(&self) -> &PassUniverse {
        &self.universe
    }

    fn evaluate(&self, program: &ProgramUnit, seq: &[PassId]) -> Result<u64, BackendError> {
        let state = SyntheticBackend::decode(program)?;
        Ok(self.run(&state, seq)?.instruction_count())
    }

    fn baseline_count(&self, program: &ProgramUnit) -> Result<u64, BackendError> {
        self.evaluate(program, &self.baseline)
    }

    /// `[base, arith, mem, branch, dead]`.
    fn features(&self, program: &ProgramUnit) -> Result<FeatureVector> {
        let state = SyntheticBackend::decode(program)?;
        let mut values = vec![state.base as f64];
        for c in Category::ALL {
            values.push(state.pools.get(&c).copied().unwrap_or(0) as f64);
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(Error::data(format!("empty program `{}`", program.id)));
        }
        FeatureVector::new(values)
    }

    fn feature_names(&self) -> Vec<String> {
        let mut names = vec!["base".to_string()];
        names.extend(Category::ALL.iter().map(|c| c.as_str().to_string()));
        names
    }
}
