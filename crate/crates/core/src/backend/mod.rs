//! Compilation oracles and the cached, bounded-parallel evaluator.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{BackendError, Error, Result};
use crate::features;
use crate::model::{canonical_key, EvalCache, FeatureVector, PassId, PassUniverse, ProgramUnit};

pub mod llvm;
pub mod synthetic;

pub use llvm::{CountMethod, LlvmBackend, LlvmConfig, PassSyntax};
pub use synthetic::{SyntheticBackend, SyntheticSuite};

/// Maps `(program, pass sequence)` to an instruction count.
///
/// Implementations must be deterministic: the evaluation cache treats a
/// second, different answer for the same key as a fatal error.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    fn universe(&self) -> &PassUniverse;

    /// Instruction count after applying `seq` to the unoptimized program.
    fn evaluate(&self, program: &ProgramUnit, seq: &[PassId]) -> Result<u64, BackendError>;

    /// Instruction count of the reference (size-optimized) build.
    fn baseline_count(&self, program: &ProgramUnit) -> Result<u64, BackendError>;

    fn features(&self, program: &ProgramUnit) -> Result<FeatureVector> {
        features::extract_features(program)
    }

    fn feature_names(&self) -> Vec<String> {
        features::FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
    }
}

/// Returns the cached count for `(program, seq)` or evaluates and stores it.
///
/// The flag is `true` when the backend was invoked.
pub fn cache_get_or_eval(
    cache: &EvalCache,
    backend: &dyn Backend,
    program: &ProgramUnit,
    seq: &[PassId],
) -> Result<(u64, bool), BackendError> {
    let key = canonical_key(seq);
    if let Some(v) = cache.get(program, &key, backend.id()) {
        return Ok((v, false));
    }
    let fresh = backend.evaluate(program, seq)?;
    Ok((cache.insert(program, &key, backend.id(), fresh)?, true))
}

/// Backend plus cache plus a worker pool of `jobs` threads.
pub struct Evaluator {
    backend: Arc<dyn Backend>,
    cache: EvalCache,
    baselines: Mutex<HashMap<String, u64>>,
    pool: rayon::ThreadPool,
    jobs: usize,
    calls: AtomicU64,
    baseline_calls: AtomicU64,
}

impl Evaluator {
    pub fn new(backend: Arc<dyn Backend>, jobs: usize) -> Result<Self> {
        if jobs == 0 {
            return Err(Error::usage("jobs must be at least 1"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .thread_name(|i| format!("kgtune-eval-{i}"))
            .build()
            .map_err(|e| Error::usage(format!("cannot start worker pool: {e}")))?;
        Ok(Evaluator {
            backend,
            cache: EvalCache::new(),
            baselines: Mutex::new(HashMap::new()),
            pool,
            jobs,
            calls: AtomicU64::new(0),
            baseline_calls: AtomicU64::new(0),
        })
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }

    pub fn backend_arc(&self) -> Arc<dyn Backend> {
        Arc::clone(&self.backend)
    }

    pub fn universe(&self) -> &PassUniverse {
        self.backend.universe()
    }

    pub fn jobs(&self) -> usize {
        self.jobs
    }

    pub fn cache(&self) -> &EvalCache {
        &self.cache
    }

    /// Backend invocations for pass sequences so far (cache hits excluded).
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn baseline_calls(&self) -> u64 {
        self.baseline_calls.load(Ordering::SeqCst)
    }

    pub fn is_cached(&self, program: &ProgramUnit, seq: &[PassId]) -> bool {
        self.cache
            .get(program, &canonical_key(seq), self.backend.id())
            .is_some()
    }

    pub fn evaluate(&self, program: &ProgramUnit, seq: &[PassId]) -> Result<u64, BackendError> {
        let (v, invoked) = cache_get_or_eval(&self.cache, self.backend.as_ref(), program, seq)?;
        if invoked {
            self.calls.fetch_add(1, Ordering::SeqCst);
        }
        Ok(v)
    }

    pub fn baseline(&self, program: &ProgramUnit) -> Result<u64, BackendError> {
        if let Some(v) = self.baselines.lock().expect("baseline lock").get(program.digest()) {
            return Ok(*v);
        }
        let v = self.backend.baseline_count(program)?;
        self.baseline_calls.fetch_add(1, Ordering::SeqCst);
        self.baselines
            .lock()
            .expect("baseline lock")
            .insert(program.digest().to_string(), v);
        Ok(v)
    }

    /// Evaluates many `(program, sequence)` pairs.
    ///
    /// Results come back in input order and equal a sequential run. Duplicate
    /// items cost one backend invocation; at most `jobs` run concurrently.
    /// Failures are reported per index.
    pub fn evaluate_batch(&self, items: &[(&ProgramUnit, &[PassId])]) -> Vec<Result<u64, BackendError>> {
        let mut slot_of: HashMap<(&str, String), usize> = HashMap::new();
        let mut unique: Vec<usize> = Vec::new();
        let mut slots = Vec::with_capacity(items.len());
        for (i, (p, seq)) in items.iter().enumerate() {
            let key = (p.digest(), canonical_key(seq));
            let next = unique.len();
            let slot = *slot_of.entry(key).or_insert_with(|| {
                unique.push(i);
                next
            });
            slots.push(slot);
        }

        let results: Vec<Result<u64, BackendError>> = if self.jobs == 1 || unique.len() <= 1 {
            unique
                .iter()
                .map(|&i| self.evaluate(items[i].0, items[i].1))
                .collect()
        } else {
            use rayon::prelude::*;
            self.pool.install(|| {
                unique
                    .par_iter()
                    .map(|&i| self.evaluate(items[i].0, items[i].1))
                    .collect()
            })
        };
        slots.into_iter().map(|s| results[s].clone()).collect()
    }
}
