//! Knowledge-guided genetic search over pass sequences.
//!
//! The same engine drives online tuning of a single program and the offline
//! evolution of per-prototype seed sequences; only the objective (one program
//! or the mean over a prototype's members) and the initial population differ.

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::backend::Evaluator;
use crate::error::{Error, Result};
use crate::features::l1_normalize;
use crate::knowledge::{Knowledge, PassKnowledgeBase};
use crate::model::{Origin, PassId, PassSequence, PassUniverse, ProgramUnit};
use crate::rng::SplitMix64;

/// Positivity shift added to block scores before computing selection odds.
pub const SCORE_EPSILON: f64 = 1e-6;

/// Consecutive all-failed batches after which the backend is declared dead.
pub const DEAD_BACKEND_BATCHES: usize = 3;

/// Switches for the three knowledge-infused mechanisms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operators {
    pub smart_init: bool,
    pub knowledge_crossover: bool,
    pub knowledge_mutation: bool,
}

impl Default for Operators {
    fn default() -> Self {
        Operators {
            smart_init: true,
            knowledge_crossover: true,
            knowledge_mutation: true,
        }
    }
}

impl Operators {
    pub fn none() -> Self {
        Operators {
            smart_init: false,
            knowledge_crossover: false,
            knowledge_mutation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub pop_size: usize,
    pub generations: usize,
    pub top_k_init: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub candidate_blocks_q: usize,
    pub elitism: usize,
    pub tournament_size: usize,
    pub eval_budget: Option<u64>,
    pub seed: u64,
    pub operators: Operators,
    pub mutation_accept_always: bool,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            pop_size: 16,
            generations: 20,
            top_k_init: 8,
            crossover_rate: 0.9,
            mutation_rate: 0.3,
            candidate_blocks_q: 4,
            elitism: 2,
            tournament_size: 2,
            eval_budget: None,
            seed: 42,
            operators: Operators::default(),
            mutation_accept_always: false,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pop_size == 0 {
            return Err(Error::usage("pop_size must be positive"));
        }
        if self.top_k_init > self.pop_size {
            return Err(Error::usage("top_k_init must not exceed pop_size"));
        }
        if self.elitism >= self.pop_size {
            return Err(Error::usage("elitism must be smaller than pop_size"));
        }
        if self.tournament_size == 0 || self.candidate_blocks_q == 0 {
            return Err(Error::usage("tournament_size and candidate_blocks_q must be positive"));
        }
        for (name, r) in [("crossover_rate", self.crossover_rate), ("mutation_rate", self.mutation_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::usage(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Serializes non-finite fitness values as `null`.
pub mod fitness_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }

    pub mod vec {
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                if x.is_finite() {
                    seq.serialize_element(x)?;
                } else {
                    seq.serialize_element(&Option::<f64>::None)?;
                }
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Ok(Vec::<Option<f64>>::deserialize(d)?
                .into_iter()
                .map(|x| x.unwrap_or(f64::NEG_INFINITY))
                .collect())
        }
    }
}

/// Percent reduction relative to the baseline count; may be negative.
pub fn fitness(baseline: u64, count: u64) -> Result<f64> {
    if baseline == 0 {
        return Err(Error::data("degenerate baseline"));
    }
    Ok(100.0 * (baseline as f64 - count as f64) / baseline as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub seq: PassSequence,
    /// `Some` iff evaluated; `-inf` marks a failed compile.
    pub fitness: Option<f64>,
}

impl Individual {
    pub fn unevaluated(seq: PassSequence) -> Self {
        Individual { seq, fitness: None }
    }

    fn score(&self) -> f64 {
        self.fitness.unwrap_or(f64::NEG_INFINITY)
    }
}

/// Contiguous run `[start, end)` of passes from one pass group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionalBlock {
    pub start: usize,
    pub end: usize,
    pub group: usize,
    pub score: Option<f64>,
}

impl FunctionalBlock {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Splits a sequence into maximal runs of same-group passes.
pub fn segment_blocks(seq: &[PassId], knowledge: &Knowledge) -> Result<Vec<FunctionalBlock>> {
    let mut blocks: Vec<FunctionalBlock> = Vec::new();
    for (i, pass) in seq.iter().enumerate() {
        let group = knowledge
            .group_of(pass)
            .ok_or_else(|| Error::data(format!("pass `{pass}` has no pass group")))?;
        match blocks.last_mut() {
            Some(b) if b.group == group => b.end = i + 1,
            _ => blocks.push(FunctionalBlock {
                start: i,
                end: i + 1,
                group,
                score: None,
            }),
        }
    }
    Ok(blocks)
}

/// Sum of the behavioral components at `prototype` of the block's passes.
pub fn block_score(block: &FunctionalBlock, seq: &[PassId], knowledge: &Knowledge, prototype: usize) -> f64 {
    seq[block.start..block.end]
        .iter()
        .map(|p| knowledge.behavior(p, prototype))
        .sum()
}

fn scored_blocks(seq: &[PassId], knowledge: &Knowledge, prototype: usize) -> Result<Vec<FunctionalBlock>> {
    let mut blocks = segment_blocks(seq, knowledge)?;
    for b in &mut blocks {
        b.score = Some(block_score(b, seq, knowledge, prototype));
    }
    Ok(blocks)
}

/// Probability of taking parent A's block given both block scores.
///
/// Scores are shifted by `-min(a, b, 0) + ε` so both are strictly positive.
pub fn crossover_probability(score_a: f64, score_b: f64) -> f64 {
    let shift = score_a.min(score_b).min(0.0);
    let a = score_a - shift + SCORE_EPSILON;
    let b = score_b - shift + SCORE_EPSILON;
    a / (a + b)
}

fn random_pass(universe: &PassUniverse, rng: &mut SplitMix64) -> PassId {
    universe.passes()[rng.below(universe.len())].clone()
}

pub fn random_sequence(universe: &PassUniverse, length: usize, rng: &mut SplitMix64) -> PassSequence {
    let passes = (0..length).map(|_| random_pass(universe, rng)).collect();
    PassSequence::new(passes, Origin::Random)
}

/// Block-wise recombination weighted by estimated block effectiveness.
pub fn knowledge_crossover(
    a: &[PassId],
    b: &[PassId],
    knowledge: &Knowledge,
    prototype: usize,
    length: usize,
    rng: &mut SplitMix64,
) -> Result<Vec<PassId>> {
    let blocks_a = scored_blocks(a, knowledge, prototype)?;
    let blocks_b = scored_blocks(b, knowledge, prototype)?;
    let mut child: Vec<PassId> = Vec::with_capacity(length);
    let paired = blocks_a.len().min(blocks_b.len());
    for j in 0..paired {
        let (ba, bb) = (&blocks_a[j], &blocks_b[j]);
        let p = crossover_probability(ba.score.unwrap_or(0.0), bb.score.unwrap_or(0.0));
        if rng.next_f64() < p {
            child.extend_from_slice(&a[ba.start..ba.end]);
        } else {
            child.extend_from_slice(&b[bb.start..bb.end]);
        }
    }
    let (rest, src) = if blocks_a.len() > paired {
        (&blocks_a[paired..], a)
    } else {
        (&blocks_b[paired..], b)
    };
    for blk in rest {
        child.extend_from_slice(&src[blk.start..blk.end]);
    }
    child.truncate(length);
    if child.len() < length {
        let group = knowledge.best_group_at(prototype);
        let members = knowledge.group_members(group);
        while child.len() < length {
            child.push(members[rng.below(members.len())].clone());
        }
    }
    Ok(child)
}

/// Classic one-point crossover at a uniform cut in `[1, len)`.
pub fn single_point_crossover(a: &[PassId], b: &[PassId], rng: &mut SplitMix64) -> Vec<PassId> {
    if a.len() < 2 {
        return a.to_vec();
    }
    let cut = 1 + rng.below(a.len() - 1);
    a[..cut].iter().chain(&b[cut..]).cloned().collect()
}

/// Leftmost block with the minimum score.
pub fn weakest_block(blocks: &[FunctionalBlock]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, b) in blocks.iter().enumerate() {
        let s = b.score.unwrap_or(0.0);
        if best.is_none_or(|(_, m)| s < m) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// How many top synergy sources seed the pool when the weakest block leads the sequence.
pub const LEADING_BLOCK_SOURCES: usize = 5;

/// Weighted replacement candidates for the block at `target`.
///
/// Synergy candidates are successors of the pass just before the block,
/// weighted by edge weight. Similarity candidates are the members of the
/// block's pass group, each weighted with the mean synergy weight (or 1
/// when there are no synergy candidates). A pass found by both keeps the
/// larger weight. The result is in universe order.
pub fn candidate_pool(
    seq: &[PassId],
    blocks: &[FunctionalBlock],
    target: usize,
    knowledge: &Knowledge,
) -> Vec<(PassId, f64)> {
    let block = &blocks[target];
    let synergy: Vec<(PassId, f64)> = if block.start > 0 {
        knowledge.successors(&seq[block.start - 1])
    } else {
        knowledge.top_sources(LEADING_BLOCK_SOURCES)
    };
    let sim_weight = if synergy.is_empty() {
        1.0
    } else {
        synergy.iter().map(|(_, w)| w).sum::<f64>() / synergy.len() as f64
    };
    let mut pool: BTreeMap<usize, (PassId, f64)> = BTreeMap::new();
    let universe = knowledge.universe();
    for (p, w) in synergy {
        let idx = universe.index_of(&p).expect("synergy pass in universe");
        pool.insert(idx, (p, w));
    }
    for p in knowledge.group_members(block.group) {
        let idx = universe.index_of(p).expect("group member in universe");
        let entry = pool.entry(idx).or_insert_with(|| (p.clone(), sim_weight));
        entry.1 = entry.1.max(sim_weight);
    }
    pool.into_values().collect()
}

/// Draws `q` replacement sequences for the weakest block of `seq`.
pub fn plan_restorative_mutation(
    seq: &[PassId],
    knowledge: &Knowledge,
    prototype: usize,
    q: usize,
    rng: &mut SplitMix64,
) -> Result<Vec<Vec<PassId>>> {
    let blocks = scored_blocks(seq, knowledge, prototype)?;
    let Some(target) = weakest_block(&blocks) else {
        return Ok(Vec::new());
    };
    let block = blocks[target];
    let mut pool = candidate_pool(seq, &blocks, target, knowledge);
    if pool.iter().all(|(_, w)| *w <= 0.0) {
        warn!("empty mutation candidate pool; sampling uniformly over all passes");
        pool = knowledge.universe().passes().iter().map(|p| (p.clone(), 1.0)).collect();
    }
    let weights: Vec<f64> = pool.iter().map(|(_, w)| *w).collect();
    let mut out = Vec::with_capacity(q);
    for _ in 0..q {
        let mut cand = seq.to_vec();
        for slot in &mut cand[block.start..block.end] {
            let pick = rng.weighted(&weights).expect("positive pool weights");
            *slot = pool[pick].0.clone();
        }
        out.push(cand);
    }
    Ok(out)
}

/// One random position replaced by one random pass.
pub fn plan_point_mutation(seq: &[PassId], universe: &PassUniverse, rng: &mut SplitMix64) -> Vec<PassId> {
    let mut cand = seq.to_vec();
    if !cand.is_empty() {
        let pos = rng.below(cand.len());
        cand[pos] = random_pass(universe, rng);
    }
    cand
}

/// Picks the best candidate and keeps it only if it strictly beats the original.
pub fn accept_mutation(
    original: &Individual,
    candidates: &[(Vec<PassId>, Option<f64>)],
    accept_always: bool,
) -> Individual {
    let mut best: Option<(&Vec<PassId>, f64)> = None;
    for (seq, fit) in candidates {
        if let Some(f) = fit {
            if best.is_none_or(|(_, b)| *f > b) {
                best = Some((seq, *f));
            }
        }
    }
    match best {
        Some((seq, f)) if accept_always || f > original.score() => Individual {
            seq: PassSequence::new(seq.clone(), Origin::Mutation),
            fitness: Some(f),
        },
        _ => original.clone(),
    }
}

/// Evaluation front end for one search: objective programs plus budget tracking.
pub struct Search<'a> {
    evaluator: &'a Evaluator,
    programs: Vec<(ProgramUnit, u64)>,
    budget: Option<u64>,
    start_calls: u64,
    failed_batches: usize,
}

impl<'a> Search<'a> {
    /// Objective is the mean fitness over `programs`, each against its own baseline.
    pub fn new(evaluator: &'a Evaluator, programs: Vec<ProgramUnit>, budget: Option<u64>) -> Result<Self> {
        if programs.is_empty() {
            return Err(Error::usage("search needs at least one program"));
        }
        let mut with_base = Vec::with_capacity(programs.len());
        for p in programs {
            let base = evaluator.baseline(&p)?;
            if base == 0 {
                return Err(Error::data(format!("degenerate baseline for `{}`", p.id)));
            }
            with_base.push((p, base));
        }
        Ok(Search {
            evaluator,
            programs: with_base,
            budget,
            start_calls: evaluator.calls(),
            failed_batches: 0,
        })
    }

    pub fn used(&self) -> u64 {
        self.evaluator.calls() - self.start_calls
    }

    pub fn exhausted(&self) -> bool {
        self.budget.is_some_and(|b| self.used() >= b)
    }

    pub fn programs(&self) -> &[(ProgramUnit, u64)] {
        &self.programs
    }

    pub fn universe(&self) -> &PassUniverse {
        self.evaluator.universe()
    }

    /// Mean fitness per sequence; `None` where the remaining budget did not allow evaluation.
    pub fn fitness_batch(&mut self, seqs: &[&[PassId]]) -> Result<Vec<Option<f64>>> {
        let mut remaining = self.budget.map(|b| b.saturating_sub(self.used()));
        let mut admitted = vec![false; seqs.len()];
        let mut pending: HashSet<(usize, String)> = HashSet::new();
        let mut items: Vec<(&ProgramUnit, &[PassId])> = Vec::new();
        for (i, seq) in seqs.iter().enumerate() {
            let key = crate::model::canonical_key(seq);
            let misses: Vec<usize> = (0..self.programs.len())
                .filter(|&j| {
                    !pending.contains(&(j, key.clone())) && !self.evaluator.is_cached(&self.programs[j].0, seq)
                })
                .collect();
            if let Some(r) = remaining.as_mut() {
                if (misses.len() as u64) > *r {
                    continue;
                }
                *r -= misses.len() as u64;
            }
            for j in misses {
                pending.insert((j, key.clone()));
            }
            admitted[i] = true;
            for (p, _) in &self.programs {
                items.push((p, seq));
            }
        }
        let results = self.evaluator.evaluate_batch(&items);
        if !results.is_empty() && results.iter().all(|r| r.is_err()) {
            self.failed_batches += 1;
            if self.failed_batches >= DEAD_BACKEND_BATCHES {
                let err = results.into_iter().find_map(|r| r.err()).expect("error present");
                return Err(err.into());
            }
        } else if !results.is_empty() {
            self.failed_batches = 0;
        }

        let n = self.programs.len();
        let mut out = Vec::with_capacity(seqs.len());
        let mut it = results.chunks(n);
        for ok in admitted {
            if !ok {
                out.push(None);
                continue;
            }
            let chunk = it.next().expect("one chunk per admitted sequence");
            let mut total = 0.0;
            let mut failed = false;
            for ((_, base), r) in self.programs.iter().zip(chunk) {
                match r {
                    Ok(count) => total += fitness(*base, *count)?,
                    Err(e) => {
                        debug!("evaluation failed: {e}");
                        failed = true;
                    }
                }
            }
            out.push(Some(if failed { f64::NEG_INFINITY } else { total / n as f64 }));
        }
        Ok(out)
    }
}

/// Outcome of one GA run.
#[derive(Debug, Clone)]
pub struct GaOutcome {
    pub best: Individual,
    pub trajectory: Vec<f64>,
    pub generations_run: usize,
    pub evaluations: u64,
}

fn tournament<'p>(pop: &'p [Individual], size: usize, rng: &mut SplitMix64) -> &'p Individual {
    let mut best = &pop[rng.below(pop.len())];
    for _ in 1..size {
        let c = &pop[rng.below(pop.len())];
        if c.score() > best.score() {
            best = c;
        }
    }
    best
}

fn ranked(pop: &[Individual]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pop.len()).collect();
    idx.sort_by(|&a, &b| pop[b].score().total_cmp(&pop[a].score()).then(a.cmp(&b)));
    idx
}

/// Runs the generational loop from `initial`.
///
/// `knowledge` is required whenever a knowledge-guided operator is enabled.
pub fn run_ga(
    search: &mut Search<'_>,
    knowledge: Option<&Knowledge>,
    prototype: usize,
    config: &GaConfig,
    initial: Vec<PassSequence>,
    length: usize,
    rng: &mut SplitMix64,
) -> Result<GaOutcome> {
    config.validate()?;
    let ops = config.operators;
    if (ops.knowledge_crossover || ops.knowledge_mutation) && knowledge.is_none() {
        return Err(Error::usage("knowledge-guided operators need a knowledge base"));
    }
    let universe = search.universe().clone();

    let refs: Vec<&[PassId]> = initial.iter().map(|s| s.passes.as_slice()).collect();
    let fits = search.fitness_batch(&refs)?;
    let mut population: Vec<Individual> = initial
        .into_iter()
        .zip(fits)
        .filter_map(|(seq, f)| f.map(|f| Individual { seq, fitness: Some(f) }))
        .collect();
    if population.is_empty() {
        return Err(Error::usage("evaluation budget too small to evaluate any individual"));
    }
    let mut best = population[ranked(&population)[0]].clone();
    if !best.score().is_finite() && population.iter().all(|i| !i.score().is_finite()) {
        warn!("every initial individual failed to evaluate");
    }
    let mut trajectory = vec![best.score()];
    let mut generations_run = 0;

    for _ in 0..config.generations {
        if search.exhausted() {
            break;
        }
        generations_run += 1;
        let order = ranked(&population);
        let elites: Vec<Individual> = order
            .iter()
            .take(config.elitism.min(population.len()))
            .map(|&i| population[i].clone())
            .collect();

        let mut offspring: Vec<PassSequence> = Vec::new();
        while elites.len() + offspring.len() < config.pop_size {
            let a = tournament(&population, config.tournament_size, rng).seq.clone();
            let b = tournament(&population, config.tournament_size, rng).seq.clone();
            let child = if rng.chance(config.crossover_rate) {
                let passes = match (ops.knowledge_crossover, knowledge) {
                    (true, Some(k)) => knowledge_crossover(&a.passes, &b.passes, k, prototype, length, rng)?,
                    _ => single_point_crossover(&a.passes, &b.passes, rng),
                };
                PassSequence::new(passes, Origin::Crossover)
            } else {
                a
            };
            offspring.push(child);
        }
        let refs: Vec<&[PassId]> = offspring.iter().map(|s| s.passes.as_slice()).collect();
        let fits = search.fitness_batch(&refs)?;
        let mut children: Vec<Individual> = offspring
            .into_iter()
            .zip(fits)
            .filter_map(|(seq, f)| f.map(|f| Individual { seq, fitness: Some(f) }))
            .collect();

        // Mutation candidates for every selected child go out as one batch.
        let mut plans: Vec<(usize, Vec<Vec<PassId>>)> = Vec::new();
        for (ci, child) in children.iter().enumerate() {
            if !rng.chance(config.mutation_rate) {
                continue;
            }
            let cands = match (ops.knowledge_mutation, knowledge) {
                (true, Some(k)) => {
                    plan_restorative_mutation(&child.seq.passes, k, prototype, config.candidate_blocks_q, rng)?
                }
                _ => vec![plan_point_mutation(&child.seq.passes, &universe, rng)],
            };
            plans.push((ci, cands));
        }
        if !plans.is_empty() {
            let refs: Vec<&[PassId]> = plans
                .iter()
                .flat_map(|(_, c)| c.iter().map(Vec::as_slice))
                .collect();
            let fits = search.fitness_batch(&refs)?;
            let mut fit_iter = fits.into_iter();
            for (ci, cands) in plans {
                let scored: Vec<(Vec<PassId>, Option<f64>)> =
                    cands.into_iter().map(|c| (c, fit_iter.next().flatten())).collect();
                children[ci] = accept_mutation(&children[ci], &scored, config.mutation_accept_always);
            }
        }

        population = elites;
        population.extend(children);
        let gen_best = &population[ranked(&population)[0]];
        if gen_best.score() > best.score() {
            best = gen_best.clone();
        }
        trajectory.push(best.score());
    }

    Ok(GaOutcome {
        best,
        trajectory,
        generations_run,
        evaluations: search.used(),
    })
}

/// Seeds the population with the top-k prototype sequences by measured fitness.
///
/// Remaining slots, or the whole population when smart init is off or the
/// library is empty, are uniformly random.
pub fn smart_init(
    search: &mut Search<'_>,
    kb: &PassKnowledgeBase,
    config: &GaConfig,
    rng: &mut SplitMix64,
) -> Result<Vec<PassSequence>> {
    let length = kb.seq_len;
    let mut population = Vec::with_capacity(config.pop_size);
    if config.operators.smart_init {
        let library = &kb.prototypes.entries;
        if library.is_empty() {
            warn!("prototype library is empty; using random initialization");
        } else {
            let refs: Vec<&[PassId]> = library.iter().map(|e| e.sequence.as_slice()).collect();
            let fits = search.fitness_batch(&refs)?;
            let mut order: Vec<(usize, f64)> = fits
                .iter()
                .enumerate()
                .filter_map(|(i, f)| f.map(|f| (i, f)))
                .collect();
            order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for (i, _) in order.into_iter().take(config.top_k_init) {
                population.push(PassSequence::new(library[i].sequence.clone(), Origin::Prototype));
            }
        }
    }
    while population.len() < config.pop_size {
        population.push(random_sequence(search.universe(), length, rng));
    }
    Ok(population)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub program_id: String,
    pub program_digest: String,
    pub prototype: usize,
    pub baseline_count: u64,
    pub best_sequence: Vec<PassId>,
    #[serde(with = "fitness_serde")]
    pub best_fitness: f64,
    pub best_count: Option<u64>,
    #[serde(with = "fitness_serde::vec")]
    pub trajectory: Vec<f64>,
    pub generations_run: usize,
    pub backend_calls: u64,
    pub baseline_calls: u64,
    pub wall_time_s: f64,
    pub config: GaConfig,
}

/// Classifies `program`, seeds the population and evolves a personalized sequence.
pub fn tune(program: &ProgramUnit, kb: &PassKnowledgeBase, evaluator: &Evaluator, config: &GaConfig) -> Result<TuneReport> {
    let started = Instant::now();
    config.validate()?;
    kb.check_universe(evaluator.universe())?;
    let baseline_before = evaluator.baseline_calls();

    let features = l1_normalize(&evaluator.backend().features(program)?)?;
    let prototype = crate::cluster::classify(&kb.prog_model, &features)?;
    let mut search = Search::new(evaluator, vec![program.clone()], config.eval_budget)?;
    let baseline = search.programs()[0].1;
    let knowledge = kb.knowledge();

    let mut rng = SplitMix64::new(config.seed);
    let initial = smart_init(&mut search, kb, config, &mut rng)?;
    let outcome = run_ga(&mut search, Some(&knowledge), prototype, config, initial, kb.seq_len, &mut rng)?;
    let best_count = evaluator.evaluate(program, &outcome.best.seq.passes).ok();

    Ok(TuneReport {
        program_id: program.id.clone(),
        program_digest: program.digest().to_string(),
        prototype,
        baseline_count: baseline,
        best_sequence: outcome.best.seq.passes.clone(),
        best_fitness: outcome.best.score(),
        best_count,
        trajectory: outcome.trajectory,
        generations_run: outcome.generations_run,
        backend_calls: outcome.evaluations,
        baseline_calls: evaluator.baseline_calls() - baseline_before,
        wall_time_s: started.elapsed().as_secs_f64(),
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fitness_examples() {
        assert_eq!(fitness(200, 178).unwrap(), 11.0);
        assert_eq!(fitness(200, 200).unwrap(), 0.0);
        assert_eq!(fitness(200, 250).unwrap(), -25.0);
        assert!(fitness(0, 10).is_err());
    }

    #[test]
    fn crossover_probability_examples() {
        assert!((crossover_probability(7.0, 3.0) - 0.7).abs() < 1e-7);
        let p = crossover_probability(-2.0, 3.0);
        assert!((p - SCORE_EPSILON / (5.0 + 2.0 * SCORE_EPSILON)).abs() < 1e-15);
        assert!((p - 2e-7).abs() < 1e-9);
        assert_eq!(crossover_probability(4.0, 4.0), 0.5);
        assert_eq!(crossover_probability(0.0, 0.0), 0.5);
    }

    #[test]
    fn weakest_block_is_leftmost_minimum() {
        let mk = |s: f64, i: usize| FunctionalBlock {
            start: i,
            end: i + 1,
            group: 0,
            score: Some(s),
        };
        assert_eq!(weakest_block(&[mk(7.0, 0), mk(-2.0, 1), mk(4.0, 2)]), Some(1));
        assert_eq!(weakest_block(&[mk(1.0, 0), mk(1.0, 1)]), Some(0));
        assert_eq!(weakest_block(&[]), None);
    }

    #[test]
    fn acceptance_rule_is_strict() {
        let pid = |s: &str| PassId::new(s).unwrap();
        let orig = Individual {
            seq: PassSequence::new(vec![pid("A")], Origin::Random),
            fitness: Some(5.0),
        };
        let same = vec![(vec![pid("B")], Some(5.0))];
        assert_eq!(accept_mutation(&orig, &same, false), orig);
        let better = vec![(vec![pid("B")], Some(4.0)), (vec![pid("C")], Some(6.0))];
        let out = accept_mutation(&orig, &better, false);
        assert_eq!(out.seq.passes, vec![pid("C")]);
        assert_eq!(out.fitness, Some(6.0));
        let worse = vec![(vec![pid("B")], Some(1.0))];
        assert_eq!(accept_mutation(&orig, &worse, true).fitness, Some(1.0));
        assert_eq!(accept_mutation(&orig, &[(vec![pid("B")], None)], false), orig);
    }

    #[test]
    fn single_point_keeps_length() {
        let pid = |s: &str| PassId::new(s).unwrap();
        let a: Vec<PassId> = ["A", "A", "A", "A"].iter().map(|s| pid(s)).collect();
        let b: Vec<PassId> = ["B", "B", "B", "B"].iter().map(|s| pid(s)).collect();
        let mut rng = SplitMix64::new(1);
        for _ in 0..50 {
            let c = single_point_crossover(&a, &b, &mut rng);
            assert_eq!(c.len(), 4);
            assert_eq!(c[0], pid("A"));
            assert_eq!(c[3], pid("B"));
        }
    }

    #[test]
    fn config_validation() {
        assert!(GaConfig::default().validate().is_ok());
        let bad = GaConfig {
            top_k_init: 20,
            ..GaConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = GaConfig {
            elitism: 16,
            ..GaConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn report_serializes_neg_infinity_as_null() {
        let r = TuneReport {
            program_id: "p".into(),
            program_digest: "d".into(),
            prototype: 0,
            baseline_count: 1,
            best_sequence: vec![],
            best_fitness: f64::NEG_INFINITY,
            best_count: None,
            trajectory: vec![f64::NEG_INFINITY, 1.5],
            generations_run: 1,
            backend_calls: 0,
            baseline_calls: 0,
            wall_time_s: 0.0,
            config: GaConfig::default(),
        };
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"best_fitness\":null"));
        assert!(s.contains("\"trajectory\":[null,1.5]"));
        let back: TuneReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back.best_fitness, f64::NEG_INFINITY);
        assert_eq!(back.trajectory[1], 1.5);
    }
}
