//! Domain types shared across the crate.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{BackendError, Error, Result};

/// Separator used by [`canonical_key`]. Pass names may not contain it.
pub const KEY_SEPARATOR: char = '|';

/// Name of a single optimization pass, e.g. `-simplifycfg` or `A`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PassId(Arc<str>);

impl PassId {
    pub fn new(name: &str) -> Result<Self> {
        if name.is_empty() {
            return Err(Error::data("pass name is empty"));
        }
        if name.chars().any(|c| c.is_whitespace() || c == KEY_SEPARATOR) {
            return Err(Error::data(format!(
                "pass name `{name}` contains whitespace or `{KEY_SEPARATOR}`"
            )));
        }
        Ok(PassId(Arc::from(name)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for PassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for PassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for PassId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for PassId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PassId::new(&s).map_err(serde::de::Error::custom)
    }
}

/// The ordered set of passes a backend understands.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PassUniverse {
    passes: Vec<PassId>,
    #[serde(skip)]
    index: HashMap<PassId, usize>,
}

impl PassUniverse {
    pub fn new(passes: Vec<PassId>) -> Result<Self> {
        if passes.is_empty() {
            return Err(Error::data("pass universe is empty"));
        }
        let mut index = HashMap::with_capacity(passes.len());
        for (i, p) in passes.iter().enumerate() {
            if index.insert(p.clone(), i).is_some() {
                return Err(Error::data(format!("duplicate pass `{p}` in universe")));
            }
        }
        Ok(PassUniverse { passes, index })
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let passes = names
            .iter()
            .map(|n| PassId::new(n.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        PassUniverse::new(passes)
    }

    pub fn passes(&self) -> &[PassId] {
        &self.passes
    }

    pub fn len(&self) -> usize {
        self.passes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passes.is_empty()
    }

    pub fn contains(&self, pass: &PassId) -> bool {
        self.index.contains_key(pass)
    }

    pub fn index_of(&self, pass: &PassId) -> Option<usize> {
        self.index.get(pass).copied()
    }

    pub fn get(&self, name: &str) -> Option<&PassId> {
        self.passes.iter().find(|p| p.as_str() == name)
    }
}

impl<'de> Deserialize<'de> for PassUniverse {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            passes: Vec<PassId>,
        }
        let raw = Raw::deserialize(d)?;
        PassUniverse::new(raw.passes).map_err(serde::de::Error::custom)
    }
}

/// How a sequence came into being.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Prototype,
    Crossover,
    Mutation,
    Random,
    Seed,
}

/// An ordered list of passes; duplicates are allowed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PassSequence {
    pub passes: Vec<PassId>,
    pub origin: Origin,
}

impl PassSequence {
    pub fn new(passes: Vec<PassId>, origin: Origin) -> Self {
        PassSequence { passes, origin }
    }

    pub fn empty() -> Self {
        PassSequence::new(Vec::new(), Origin::Seed)
    }

    pub fn len(&self) -> usize {
        self.passes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passes.is_empty()
    }

    /// Checks membership in `universe` and, when given, the fixed length.
    pub fn validate(&self, universe: &PassUniverse, length: Option<usize>) -> Result<()> {
        if let Some(l) = length {
            if self.passes.len() != l {
                return Err(Error::data(format!(
                    "sequence length {} != configured length {l}",
                    self.passes.len()
                )));
            }
        }
        match self.passes.iter().find(|p| !universe.contains(p)) {
            Some(p) => Err(Error::data(format!("pass `{p}` not in universe"))),
            None => Ok(()),
        }
    }

    pub fn key(&self) -> String {
        canonical_key(&self.passes)
    }
}

/// Order-sensitive, injective encoding of a pass list.
pub fn canonical_key(passes: &[PassId]) -> String {
    let mut out = String::with_capacity(passes.len() * 8);
    for (i, p) in passes.iter().enumerate() {
        if i > 0 {
            out.push(KEY_SEPARATOR);
        }
        out.push_str(p.as_str());
    }
    out
}

/// Hex SHA-256 of a byte payload.
pub fn digest_bytes(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

/// A program under optimization. The payload is opaque to everything but the backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramUnit {
    pub id: String,
    source: Arc<[u8]>,
    digest: String,
}

impl ProgramUnit {
    pub fn new(id: impl Into<String>, source: impl Into<Vec<u8>>) -> Self {
        let source: Vec<u8> = source.into();
        let digest = digest_bytes(&source);
        ProgramUnit {
            id: id.into(),
            source: Arc::from(source),
            digest,
        }
    }

    pub fn source(&self) -> &[u8] {
        &self.source
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }
}

/// Fixed-length vector of static program features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::data(format!("non-finite feature component {v}")));
        }
        Ok(FeatureVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// One backend measurement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub program_digest: String,
    pub sequence: Vec<PassId>,
    pub instruction_count: u64,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    digest: String,
    sequence: String,
    backend: String,
}

/// Thread-safe memo of backend results keyed on program content and sequence.
#[derive(Debug, Default)]
pub struct EvalCache {
    entries: Mutex<HashMap<CacheKey, u64>>,
}

impl EvalCache {
    pub fn new() -> Self {
        EvalCache::default()
    }

    fn key(program: &ProgramUnit, sequence_key: &str, backend_id: &str) -> CacheKey {
        CacheKey {
            digest: program.digest().to_string(),
            sequence: sequence_key.to_string(),
            backend: backend_id.to_string(),
        }
    }

    pub fn get(&self, program: &ProgramUnit, sequence_key: &str, backend_id: &str) -> Option<u64> {
        let key = EvalCache::key(program, sequence_key, backend_id);
        self.entries.lock().expect("cache lock").get(&key).copied()
    }

    /// Stores a result. Re-inserting the same key with a different value is fatal.
    pub fn insert(
        &self,
        program: &ProgramUnit,
        sequence_key: &str,
        backend_id: &str,
        count: u64,
    ) -> Result<u64, BackendError> {
        let key = EvalCache::key(program, sequence_key, backend_id);
        let mut map = self.entries.lock().expect("cache lock");
        match map.get(&key) {
            Some(&stored) if stored != count => Err(BackendError::CachePoisoned {
                key: format!("{}:{}:{}", key.backend, &key.digest[..12], key.sequence),
                stored,
                fresh: count,
            }),
            Some(&stored) => Ok(stored),
            None => {
                map.insert(key, count);
                Ok(count)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of distinct programs with at least one cached entry.
    pub fn programs(&self) -> usize {
        let map = self.entries.lock().expect("cache lock");
        map.keys().map(|k| &k.digest).collect::<HashSet<_>>().len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(names: &[&str]) -> Vec<PassId> {
        names.iter().map(|n| PassId::new(n).unwrap()).collect()
    }

    #[test]
    fn key_is_order_sensitive() {
        assert_eq!(canonical_key(&seq(&["A", "B"])), "A|B");
        assert_eq!(canonical_key(&seq(&["B", "A"])), "B|A");
        assert_eq!(canonical_key(&[]), "");
        assert_eq!(canonical_key(&seq(&["A", "A"])), "A|A");
        assert_ne!(canonical_key(&seq(&["A", "A"])), canonical_key(&seq(&["A"])));
    }

    #[test]
    fn pass_id_rejects_bad_names() {
        assert!(PassId::new("").is_err());
        assert!(PassId::new("a b").is_err());
        assert!(PassId::new("a|b").is_err());
        assert!(PassId::new("-simplifycfg").is_ok());
    }

    #[test]
    fn universe_rejects_duplicates_and_empty() {
        assert!(PassUniverse::from_names(&["A", "A"]).is_err());
        assert!(PassUniverse::from_names::<&str>(&[]).is_err());
        let u = PassUniverse::from_names(&["A", "B"]).unwrap();
        assert_eq!(u.index_of(&PassId::new("B").unwrap()), Some(1));
    }

    #[test]
    fn sequence_validation() {
        let u = PassUniverse::from_names(&["A", "B"]).unwrap();
        let s = PassSequence::new(seq(&["A", "A", "B"]), Origin::Random);
        assert!(s.validate(&u, Some(3)).is_ok());
        assert!(s.validate(&u, Some(2)).is_err());
        let bad = PassSequence::new(seq(&["C"]), Origin::Random);
        assert!(bad.validate(&u, None).is_err());
    }

    #[test]
    fn digest_depends_only_on_bytes() {
        let a = ProgramUnit::new("a", b"xyz".to_vec());
        let b = ProgramUnit::new("b", b"xyz".to_vec());
        let c = ProgramUnit::new("a", b"xyw".to_vec());
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn cache_detects_poisoning() {
        let cache = EvalCache::new();
        let p = ProgramUnit::new("p", b"1".to_vec());
        assert_eq!(cache.insert(&p, "A", "b", 5).unwrap(), 5);
        assert_eq!(cache.insert(&p, "A", "b", 5).unwrap(), 5);
        assert!(matches!(
            cache.insert(&p, "A", "b", 6),
            Err(BackendError::CachePoisoned { .. })
        ));
        assert_eq!(cache.get(&p, "A", "b"), Some(5));
        assert_eq!(cache.get(&p, "A", "other"), None);
    }

    #[test]
    fn feature_vector_rejects_nan() {
        assert!(FeatureVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(FeatureVector::new(vec![1.0, f64::INFINITY]).is_err());
    }

    proptest! {
        #[test]
        fn canonical_key_is_collision_free(
            seqs in proptest::collection::vec(
                proptest::collection::vec(0usize..5, 0..6), 1..40)
        ) {
            let names = ["A", "B", "C", "DD", "-x"];
            let mut seen: HashMap<String, Vec<usize>> = HashMap::new();
            for s in &seqs {
                let ids: Vec<PassId> = s.iter().map(|&i| PassId::new(names[i]).unwrap()).collect();
                let k = canonical_key(&ids);
                if let Some(prev) = seen.get(&k) {
                    prop_assert_eq!(prev, s);
                }
                seen.insert(k, s.clone());
            }
        }
    }
}
