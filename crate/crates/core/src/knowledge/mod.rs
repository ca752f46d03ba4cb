//! The pass knowledge base: behavioral vectors, pass groups, the synergy
//! graph and per-prototype seed sequences, plus the program-clustering model.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterAssignment, KMeansModel};
use crate::error::{Error, Result};
use crate::evolve::GaConfig;
use crate::features::FeatureSchema;
use crate::model::{PassId, PassUniverse};

mod build;

pub use build::{
    build_kb, compute_behavioral_vectors, compute_pass_groups, evolve_prototype_sequences,
    mine_synergy_graph, BuildConfig, PairBudget,
};

pub const KB_SCHEMA_VERSION: u32 = 1;

/// Mean percent reduction of one pass on each program prototype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehavioralVector {
    pub pass: PassId,
    pub values: Vec<f64>,
    pub support: Vec<u64>,
}

impl BehavioralVector {
    pub fn variance(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        self.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassGroups {
    pub group_of: BTreeMap<PassId, usize>,
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
}

impl PassGroups {
    pub fn members(&self, universe: &PassUniverse) -> Vec<Vec<PassId>> {
        let mut out = vec![Vec::new(); self.k];
        for p in universe.passes() {
            if let Some(&g) = self.group_of.get(p) {
                out[g].push(p.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynergyEdge {
    pub from: PassId,
    pub to: PassId,
    pub count: u64,
    pub weight: f64,
}

/// Directed enabling relations aggregated over the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynergyGraph {
    pub edges: Vec<SynergyEdge>,
    pub corpus_size: u64,
}

impl SynergyGraph {
    pub fn weight(&self, from: &PassId, to: &PassId) -> Option<f64> {
        self.edges
            .iter()
            .find(|e| &e.from == from && &e.to == to)
            .map(|e| e.weight)
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeEntry {
    pub prototype: usize,
    pub sequence: Vec<PassId>,
    /// Mean percent reduction over the prototype's training programs.
    #[serde(with = "crate::evolve::fitness_serde")]
    pub score: f64,
    pub members: usize,
    /// True when the prototype had no programs and borrowed the global best.
    #[serde(default)]
    pub borrowed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeLibrary {
    pub entries: Vec<PrototypeEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub corpus_digest: String,
    pub corpus_size: usize,
    /// Sorted content digests of the corpus programs.
    pub program_digests: Vec<String>,
    pub backend_id: String,
    pub config: BuildConfig,
    pub prototype_elbow: Vec<(usize, f64)>,
    pub empty_prototypes: Vec<usize>,
    pub backend_calls: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassKnowledgeBase {
    pub schema_version: u32,
    pub universe: PassUniverse,
    pub feature_schema: FeatureSchema,
    pub seq_len: usize,
    pub prog_model: KMeansModel,
    pub assignment: ClusterAssignment,
    pub behavioral: Vec<BehavioralVector>,
    pub groups: PassGroups,
    pub synergy: SynergyGraph,
    pub prototypes: PrototypeLibrary,
    pub provenance: Provenance,
}

impl PassKnowledgeBase {
    pub fn num_prototypes(&self) -> usize {
        self.prog_model.k
    }

    pub fn knowledge(&self) -> Knowledge {
        Knowledge::new(&self.universe, &self.behavioral, &self.groups, &self.synergy)
            .expect("validated knowledge base")
    }

    pub fn ga_config(&self) -> &GaConfig {
        &self.provenance.config.ga
    }

    /// Errors unless `backend` exposes exactly this KB's passes.
    pub fn check_universe(&self, backend: &PassUniverse) -> Result<()> {
        if backend.passes() != self.universe.passes() {
            return Err(Error::data(format!(
                "knowledge base covers {} passes that do not match the backend's {} passes",
                self.universe.len(),
                backend.len()
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != KB_SCHEMA_VERSION {
            return Err(Error::data(format!(
                "knowledge base schema version {} unsupported (expected {KB_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.prog_model.validate()?;
        let n = self.prog_model.k;
        if self.prog_model.dim() != self.feature_schema.names.len() {
            return Err(Error::data("program model dimension does not match the feature schema"));
        }
        let passes = self.universe.passes();
        if self.behavioral.len() != passes.len()
            || self.behavioral.iter().zip(passes).any(|(b, p)| &b.pass != p)
        {
            return Err(Error::data("behavioral vectors do not cover the pass universe in order"));
        }
        for b in &self.behavioral {
            if b.values.len() != n || b.support.len() != n || b.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(format!("behavioral vector of `{}` is malformed", b.pass)));
            }
        }
        if self.groups.group_of.len() != passes.len()
            || passes.iter().any(|p| !self.groups.group_of.contains_key(p))
            || self.groups.group_of.values().any(|&g| g >= self.groups.k)
            || self.groups.centroids.len() != self.groups.k
        {
            return Err(Error::data("pass groups do not partition the pass universe"));
        }
        for e in &self.synergy.edges {
            if !self.universe.contains(&e.from) || !self.universe.contains(&e.to) {
                return Err(Error::data(format!("synergy edge {}->{} leaves the universe", e.from, e.to)));
            }
            if e.count == 0 || !(e.weight > 0.0 && e.weight <= 1.0) {
                return Err(Error::data(format!("synergy edge {}->{} has bad weight", e.from, e.to)));
            }
        }
        if self.prototypes.entries.len() != n {
            return Err(Error::data(format!(
                "{} prototype sequences for {n} prototypes",
                self.prototypes.entries.len()
            )));
        }
        for (i, e) in self.prototypes.entries.iter().enumerate() {
            if e.prototype != i
                || e.sequence.len() != self.seq_len
                || e.sequence.iter().any(|p| !self.universe.contains(p))
            {
                return Err(Error::data(format!("prototype sequence {i} is malformed")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable knowledge base");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let kb: PassKnowledgeBase =
            serde_json::from_str(text).map_err(|e| Error::data(format!("corrupt knowledge base: {e}")))?;
        kb.validate()?;
        Ok(kb)
    }
}

pub fn save_kb(kb: &PassKnowledgeBase, path: &Path) -> Result<()> {
    std::fs::write(path, kb.to_json()).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_kb(path: &Path) -> Result<PassKnowledgeBase> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    PassKnowledgeBase::from_json(&text)
}

/// Indexed, read-only view over the knowledge the GA operators query.
#[derive(Debug, Clone)]
pub struct Knowledge {
    universe: PassUniverse,
    behavior: Vec<Vec<f64>>,
    group_of: Vec<usize>,
    members: Vec<Vec<PassId>>,
    centroids: Vec<Vec<f64>>,
    successors: HashMap<usize, Vec<(PassId, f64)>>,
    out_weight: Vec<f64>,
}

impl Knowledge {
    pub fn new(
        universe: &PassUniverse,
        behavioral: &[BehavioralVector],
        groups: &PassGroups,
        synergy: &SynergyGraph,
    ) -> Result<Self> {
        let mut behavior = vec![Vec::new(); universe.len()];
        for b in behavioral {
            let i = universe
                .index_of(&b.pass)
                .ok_or_else(|| Error::data(format!("behavioral vector for unknown pass `{}`", b.pass)))?;
            behavior[i] = b.values.clone();
        }
        let group_of = universe
            .passes()
            .iter()
            .map(|p| {
                groups
                    .group_of
                    .get(p)
                    .copied()
                    .ok_or_else(|| Error::data(format!("pass `{p}` has no group")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut successors: HashMap<usize, Vec<(usize, PassId, f64)>> = HashMap::new();
        let mut out_weight = vec![0.0; universe.len()];
        for e in &synergy.edges {
            let (Some(a), Some(b)) = (universe.index_of(&e.from), universe.index_of(&e.to)) else {
                return Err(Error::data("synergy edge outside the universe"));
            };
            successors.entry(a).or_default().push((b, e.to.clone(), e.weight));
            out_weight[a] += e.weight;
        }
        let successors = successors
            .into_iter()
            .map(|(a, mut v)| {
                v.sort_by_key(|(b, _, _)| *b);
                (a, v.into_iter().map(|(_, p, w)| (p, w)).collect())
            })
            .collect();
        Ok(Knowledge {
            universe: universe.clone(),
            behavior,
            group_of,
            members: groups.members(universe),
            centroids: groups.centroids.clone(),
            successors,
            out_weight,
        })
    }

    pub fn universe(&self) -> &PassUniverse {
        &self.universe
    }

    /// Behavioral component of `pass` at `prototype`, 0 when unknown.
    pub fn behavior(&self, pass: &PassId, prototype: usize) -> f64 {
        self.universe
            .index_of(pass)
            .and_then(|i| self.behavior[i].get(prototype).copied())
            .unwrap_or(0.0)
    }

    pub fn group_of(&self, pass: &PassId) -> Option<usize> {
        self.universe.index_of(pass).map(|i| self.group_of[i])
    }

    pub fn group_members(&self, group: usize) -> &[PassId] {
        &self.members[group]
    }

    /// Group whose centroid is highest at `prototype`; ties go to the smaller index.
    pub fn best_group_at(&self, prototype: usize) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (g, c) in self.centroids.iter().enumerate() {
            let v = c.get(prototype).copied().unwrap_or(0.0);
            if v > best.1 && !self.members[g].is_empty() {
                best = (g, v);
            }
        }
        best.0
    }

    /// Synergy successors of `pass` with edge weights, in universe order.
    pub fn successors(&self, pass: &PassId) -> Vec<(PassId, f64)> {
        self.universe
            .index_of(pass)
            .and_then(|i| self.successors.get(&i).cloned())
            .unwrap_or_default()
    }

    /// The `n` passes with the largest total outgoing synergy weight.
    pub fn top_sources(&self, n: usize) -> Vec<(PassId, f64)> {
        let mut idx: Vec<usize> = (0..self.universe.len()).filter(|&i| self.out_weight[i] > 0.0).collect();
        idx.sort_by(|&a, &b| self.out_weight[b].total_cmp(&self.out_weight[a]).then(a.cmp(&b)));
        idx.truncate(n);
        idx.sort_unstable();
        idx.into_iter()
            .map(|i| (self.universe.passes()[i].clone(), self.out_weight[i]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(n: &str) -> PassId {
        PassId::new(n).unwrap()
    }

    fn parts() -> (PassUniverse, Vec<BehavioralVector>, PassGroups, SynergyGraph) {
        let universe = PassUniverse::new(vec![id("a"), id("b"), id("c")]).unwrap();
        let bv = |n: &str, v: Vec<f64>| BehavioralVector {
            pass: id(n),
            support: vec![1; v.len()],
            values: v,
        };
        let behavioral = vec![bv("a", vec![4.0, 0.0]), bv("b", vec![1.0, 3.0]), bv("c", vec![2.0, 2.0])];
        let groups = PassGroups {
            group_of: [(id("a"), 0), (id("b"), 1), (id("c"), 1)].into_iter().collect(),
            k: 2,
            centroids: vec![vec![4.0, 0.0], vec![1.5, 2.5]],
        };
        let edge = |f: &str, t: &str, count: u64| SynergyEdge {
            from: id(f),
            to: id(t),
            count,
            weight: count as f64 / 4.0,
        };
        let synergy = SynergyGraph {
            edges: vec![edge("a", "c", 2), edge("a", "b", 1), edge("c", "a", 4)],
            corpus_size: 4,
        };
        (universe, behavioral, groups, synergy)
    }

    #[test]
    fn variance_is_population_variance() {
        let v = BehavioralVector {
            pass: id("a"),
            values: vec![1.0, 3.0],
            support: vec![1, 1],
        };
        assert_eq!(v.variance(), 1.0);
        assert_eq!(BehavioralVector { values: vec![], ..v }.variance(), 0.0);
    }

    #[test]
    fn lookups() {
        let (u, b, g, s) = parts();
        let k = Knowledge::new(&u, &b, &g, &s).unwrap();
        assert_eq!(k.behavior(&id("b"), 1), 3.0);
        assert_eq!(k.behavior(&id("b"), 7), 0.0);
        assert_eq!(k.behavior(&id("zz"), 0), 0.0);
        assert_eq!(k.group_of(&id("c")), Some(1));
        assert_eq!(k.group_members(1), &[id("b"), id("c")]);
        assert_eq!(k.best_group_at(0), 0);
        assert_eq!(k.best_group_at(1), 1);
        assert_eq!(k.successors(&id("a")), vec![(id("b"), 0.25), (id("c"), 0.5)]);
        assert!(k.successors(&id("b")).is_empty());
        assert_eq!(k.top_sources(1), vec![(id("c"), 1.0)]);
        assert_eq!(k.top_sources(5), vec![(id("a"), 0.75), (id("c"), 1.0)]);
        assert_eq!(s.weight(&id("c"), &id("a")), Some(1.0));
        assert_eq!(s.weight(&id("b"), &id("a")), None);
    }

    #[test]
    fn ungrouped_pass_is_rejected() {
        let (u, b, mut g, s) = parts();
        g.group_of.remove(&id("c"));
        assert_eq!(Knowledge::new(&u, &b, &g, &s).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn edge_outside_universe_is_rejected() {
        let (u, b, g, mut s) = parts();
        s.edges[0].to = id("zz");
        assert!(Knowledge::new(&u, &b, &g, &s).is_err());
    }
}
