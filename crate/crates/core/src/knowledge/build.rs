//! Offline construction of the knowledge base.

use std::collections::BTreeMap;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::{
    BehavioralVector, PassGroups, PassKnowledgeBase, PrototypeEntry, PrototypeLibrary, Provenance, SynergyEdge,
    SynergyGraph, KB_SCHEMA_VERSION,
};
use crate::backend::Evaluator;
use crate::cluster::{elbow_curve, elbow_from_curve, kmeans_fit, ClusterAssignment};
use crate::error::{Error, Result};
use crate::evolve::{random_sequence, run_ga, GaConfig, Operators, Search};
use crate::features::{l1_normalize, FeatureSchema, SCHEMA_VERSION};
use crate::knowledge::Knowledge;
use crate::model::{digest_bytes, FeatureVector, PassId, ProgramUnit};
use crate::rng::SplitMix64;

/// Cap on `(program, pair)` evaluations during synergy mining; `None` enumerates everything.
pub type PairBudget = Option<u64>;

/// Upper end of the elbow search for pass groups.
pub const MAX_PASS_GROUPS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    /// Fixed prototype count; `None` selects it by the elbow method.
    pub prototypes: Option<usize>,
    pub max_prototypes: usize,
    pub seq_len: usize,
    pub seed: u64,
    pub pair_budget: PairBudget,
    pub proto_plain_ga: bool,
    pub ga: GaConfig,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            prototypes: None,
            max_prototypes: 16,
            seq_len: 32,
            seed: 42,
            pair_budget: None,
            proto_plain_ga: false,
            ga: GaConfig::default(),
        }
    }
}

/// Percent reduction of every single pass, averaged per prototype.
///
/// Programs whose unoptimized count is 0 are skipped. A failed `(program,
/// pass)` evaluation contributes 0 to the mean.
pub fn compute_behavioral_vectors(
    corpus: &[ProgramUnit],
    labels: &[usize],
    prototypes: usize,
    evaluator: &Evaluator,
) -> Result<Vec<BehavioralVector>> {
    let passes: Vec<PassId> = evaluator.universe().passes().to_vec();
    let singles: Vec<Vec<PassId>> = passes.iter().map(|p| vec![p.clone()]).collect();
    let mut items: Vec<(&ProgramUnit, &[PassId])> = Vec::new();
    for p in corpus {
        items.push((p, &[]));
        for s in &singles {
            items.push((p, s));
        }
    }
    let results = evaluator.evaluate_batch(&items);
    let stride = passes.len() + 1;

    let mut sums = vec![vec![0.0; prototypes]; passes.len()];
    let mut support = vec![vec![0u64; prototypes]; passes.len()];
    for (pi, (program, &label)) in corpus.iter().zip(labels).enumerate() {
        let row = &results[pi * stride..(pi + 1) * stride];
        let before = match &row[0] {
            Ok(0) => {
                warn!("skipping `{}`: unoptimized instruction count is 0", program.id);
                continue;
            }
            Ok(v) => *v as f64,
            Err(e) => {
                warn!("skipping `{}`: cannot evaluate unoptimized program: {e}", program.id);
                continue;
            }
        };
        for (j, r) in row[1..].iter().enumerate() {
            let reduction = match r {
                Ok(after) => 100.0 * (before - *after as f64) / before,
                Err(e) => {
                    warn!("pass `{}` failed on `{}`: {e}", passes[j], program.id);
                    0.0
                }
            };
            sums[j][label] += reduction;
            support[j][label] += 1;
        }
    }
    Ok(passes
        .into_iter()
        .enumerate()
        .map(|(j, pass)| BehavioralVector {
            pass,
            values: sums[j]
                .iter()
                .zip(&support[j])
                .map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
                .collect(),
            support: support[j].clone(),
        })
        .collect())
}

/// Clusters passes by their raw (unnormalized) behavioral vectors.
pub fn compute_pass_groups(behavioral: &[BehavioralVector], seed: u64) -> Result<PassGroups> {
    if behavioral.is_empty() {
        return Err(Error::data("no behavioral vectors to group"));
    }
    let points = behavioral
        .iter()
        .map(|b| FeatureVector::new(b.values.clone()))
        .collect::<Result<Vec<_>>>()?;
    let k = if points.len() < 3 {
        1
    } else {
        let k_max = MAX_PASS_GROUPS.min(points.len() - 1);
        if k_max <= 2 {
            2
        } else {
            elbow_from_curve(&elbow_curve(&points, 2, k_max, seed)?)
        }
    };
    let (model, labels) = kmeans_fit(&points, k, seed)?;
    Ok(PassGroups {
        group_of: behavioral.iter().map(|b| b.pass.clone()).zip(labels).collect(),
        k,
        centroids: model.centroids,
    })
}

/// Collects ordered pairs `(A, B)` with `IR(p,<A,B>) < IR(p,<B>) < IR(p,<>)` over the corpus.
///
/// With a budget smaller than full enumeration, each pair is checked on a
/// uniformly sampled subset of programs. Edge weight is count / corpus size.
pub fn mine_synergy_graph(
    corpus: &[ProgramUnit],
    evaluator: &Evaluator,
    pair_budget: PairBudget,
    seed: u64,
) -> Result<SynergyGraph> {
    let passes: Vec<PassId> = evaluator.universe().passes().to_vec();
    let n_pass = passes.len();
    let singles: Vec<Vec<PassId>> = passes.iter().map(|p| vec![p.clone()]).collect();
    let mut items: Vec<(&ProgramUnit, &[PassId])> = Vec::new();
    for p in corpus {
        items.push((p, &[]));
        for s in &singles {
            items.push((p, s));
        }
    }
    let base = evaluator.evaluate_batch(&items);
    let stride = n_pass + 1;

    let pairs = (n_pass * n_pass) as u64;
    let full = pairs * corpus.len() as u64;
    let per_pair = match pair_budget {
        Some(b) if b < full => ((b / pairs).max(1) as usize).min(corpus.len()),
        _ => corpus.len(),
    };
    let mut rng = SplitMix64::new(seed ^ 0x5EED_5EED_0000_0003);
    let mut indices: Vec<usize> = (0..corpus.len()).collect();

    // (program index, a, b) triples whose second inequality already holds.
    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for a in 0..n_pass {
        for b in 0..n_pass {
            let sample: Vec<usize> = if per_pair >= corpus.len() {
                (0..corpus.len()).collect()
            } else {
                // Partial Fisher-Yates: first `per_pair` entries are a uniform sample.
                for i in 0..per_pair {
                    let j = i + rng.below(corpus.len() - i);
                    indices.swap(i, j);
                }
                let mut s = indices[..per_pair].to_vec();
                s.sort_unstable();
                s
            };
            for pi in sample {
                let row = &base[pi * stride..(pi + 1) * stride];
                if let (Ok(empty), Ok(only_b)) = (&row[0], &row[1 + b]) {
                    if only_b < empty {
                        candidates.push((pi, a, b));
                    }
                }
            }
        }
    }
    let pair_seqs: Vec<Vec<PassId>> = candidates
        .iter()
        .map(|&(_, a, b)| vec![passes[a].clone(), passes[b].clone()])
        .collect();
    let pair_items: Vec<(&ProgramUnit, &[PassId])> = candidates
        .iter()
        .zip(&pair_seqs)
        .map(|(&(pi, _, _), s)| (&corpus[pi], s.as_slice()))
        .collect();
    let pair_results = evaluator.evaluate_batch(&pair_items);

    let mut counts: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for (&(pi, a, b), r) in candidates.iter().zip(pair_results) {
        let only_b = *base[pi * stride + 1 + b].as_ref().expect("filtered on success");
        match r {
            Ok(ab) if ab < only_b => *counts.entry((a, b)).or_default() += 1,
            Ok(_) => {}
            Err(e) => warn!("pair {}->{} failed on `{}`: {e}", passes[a], passes[b], corpus[pi].id),
        }
    }
    let corpus_size = corpus.len() as u64;
    Ok(SynergyGraph {
        edges: counts
            .into_iter()
            .map(|((a, b), count)| SynergyEdge {
                from: passes[a].clone(),
                to: passes[b].clone(),
                count,
                weight: count as f64 / corpus_size as f64,
            })
            .collect(),
        corpus_size,
    })
}

/// Evolves one fixed-length sequence per prototype maximizing mean reduction over its members.
///
/// Prototypes without members borrow the best sequence found for any other
/// prototype and are flagged `borrowed`.
pub fn evolve_prototype_sequences(
    corpus: &[ProgramUnit],
    assignment: &ClusterAssignment,
    prototypes: usize,
    evaluator: &Evaluator,
    knowledge: Option<&Knowledge>,
    ga: &GaConfig,
    seq_len: usize,
) -> Result<PrototypeLibrary> {
    let mut master = SplitMix64::new(ga.seed);
    let mut entries: Vec<Option<PrototypeEntry>> = Vec::with_capacity(prototypes);
    for i in 0..prototypes {
        let mut rng = master.fork(i as u64);
        let members: Vec<ProgramUnit> = corpus
            .iter()
            .filter(|p| assignment.labels.get(&p.id) == Some(&i))
            .cloned()
            .collect();
        if members.is_empty() {
            entries.push(None);
            continue;
        }
        let n_members = members.len();
        let mut search = Search::new(evaluator, members, ga.eval_budget)?;
        let initial: Vec<_> = (0..ga.pop_size)
            .map(|_| random_sequence(evaluator.universe(), seq_len, &mut rng))
            .collect();
        let outcome = run_ga(&mut search, knowledge, i, ga, initial, seq_len, &mut rng)?;
        info!(
            "prototype {i}: {} programs, score {:.4}, {} evaluations",
            n_members,
            outcome.best.fitness.unwrap_or(f64::NEG_INFINITY),
            outcome.evaluations
        );
        entries.push(Some(PrototypeEntry {
            prototype: i,
            sequence: outcome.best.seq.passes,
            score: outcome.best.fitness.unwrap_or(f64::NEG_INFINITY),
            members: n_members,
            borrowed: false,
        }));
    }
    let global = entries
        .iter()
        .flatten()
        .filter(|e| e.score.is_finite())
        .max_by(|a, b| a.score.total_cmp(&b.score).then(b.prototype.cmp(&a.prototype)))
        .cloned()
        .ok_or_else(|| Error::data("every prototype sequence failed to evaluate"))?;
    Ok(PrototypeLibrary {
        entries: entries
            .into_iter()
            .enumerate()
            .map(|(i, e)| {
                e.unwrap_or_else(|| PrototypeEntry {
                    prototype: i,
                    sequence: global.sequence.clone(),
                    score: global.score,
                    members: 0,
                    borrowed: true,
                })
            })
            .collect(),
    })
}

/// Digest over program ids and content digests in corpus order.
pub fn corpus_digest(corpus: &[ProgramUnit]) -> String {
    let mut buf = String::new();
    for p in corpus {
        buf.push_str(&p.id);
        buf.push('\0');
        buf.push_str(p.digest());
        buf.push('\n');
    }
    digest_bytes(buf.as_bytes())
}

/// Runs the full offline pipeline over `corpus`.
pub fn build_kb(corpus: &[ProgramUnit], evaluator: &Evaluator, config: &BuildConfig) -> Result<PassKnowledgeBase> {
    if corpus.is_empty() {
        return Err(Error::usage("empty corpus"));
    }
    if config.seq_len == 0 {
        return Err(Error::usage("sequence length must be positive"));
    }
    config.ga.validate()?;
    let start_calls = evaluator.calls();
    let backend = evaluator.backend();

    let points = corpus
        .iter()
        .map(|p| backend.features(p).and_then(|v| l1_normalize(&v)))
        .collect::<Result<Vec<_>>>()?;
    let n = corpus.len();
    let (prototypes, prototype_elbow) = match config.prototypes {
        Some(k) if k == 0 || k > n => {
            return Err(Error::usage(format!("--prototypes {k} must lie in [1, {n}]")));
        }
        Some(k) => (k, Vec::new()),
        None => {
            let k_max = config.max_prototypes.min(n);
            if k_max <= 2 {
                (k_max.max(1), Vec::new())
            } else {
                let curve = elbow_curve(&points, 2, k_max, config.seed)?;
                (elbow_from_curve(&curve), curve)
            }
        }
    };
    let (prog_model, labels) = kmeans_fit(&points, prototypes, config.seed)?;
    let ids: Vec<String> = corpus.iter().map(|p| p.id.clone()).collect();
    let assignment = ClusterAssignment::from_labels(&ids, &labels);
    info!("{prototypes} program prototypes");

    let behavioral = compute_behavioral_vectors(corpus, &labels, prototypes, evaluator)?;
    let groups = compute_pass_groups(&behavioral, config.seed)?;
    info!("{} pass groups", groups.k);
    let synergy = mine_synergy_graph(corpus, evaluator, config.pair_budget, config.seed)?;
    info!("{} synergy edges", synergy.len());

    let universe = evaluator.universe().clone();
    let knowledge = Knowledge::new(&universe, &behavioral, &groups, &synergy)?;
    let mut ga = config.ga.clone();
    ga.operators = Operators {
        smart_init: false,
        knowledge_crossover: !config.proto_plain_ga && ga.operators.knowledge_crossover,
        knowledge_mutation: !config.proto_plain_ga && ga.operators.knowledge_mutation,
    };
    let library = evolve_prototype_sequences(
        corpus,
        &assignment,
        prototypes,
        evaluator,
        Some(&knowledge),
        &ga,
        config.seq_len,
    )?;
    let empty_prototypes = library
        .entries
        .iter()
        .filter(|e| e.borrowed)
        .map(|e| e.prototype)
        .collect();

    let feature_schema = FeatureSchema {
        names: backend.feature_names(),
        version: SCHEMA_VERSION,
    };
    let kb = PassKnowledgeBase {
        schema_version: KB_SCHEMA_VERSION,
        universe,
        feature_schema,
        seq_len: config.seq_len,
        prog_model,
        assignment,
        behavioral,
        groups,
        synergy,
        prototypes: library,
        provenance: Provenance {
            corpus_digest: corpus_digest(corpus),
            corpus_size: n,
            program_digests: {
                let mut d: Vec<String> = corpus.iter().map(|p| p.digest().to_string()).collect();
                d.sort();
                d
            },
            backend_id: backend.id().to_string(),
            config: config.clone(),
            prototype_elbow,
            empty_prototypes,
            backend_calls: evaluator.calls() - start_calls,
            created_unix: None,
        },
    };
    kb.validate()?;
    Ok(kb)
}
