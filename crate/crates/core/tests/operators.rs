mod common;

use std::collections::BTreeMap;

use common::*;
use kgtune::backend::synthetic::Split;
use kgtune::evolve::{
    accept_mutation, block_score, candidate_pool, crossover_probability, knowledge_crossover,
    plan_restorative_mutation, segment_blocks, tune, FunctionalBlock, GaConfig, Individual, Operators, Search,
};
use kgtune::knowledge::{build_kb, BehavioralVector, BuildConfig, Knowledge, PassGroups, SynergyEdge, SynergyGraph};
use kgtune::model::{Origin, PassId, PassSequence, PassUniverse};
use kgtune::rng::SplitMix64;

struct Hand {
    universe: PassUniverse,
    behavioral: Vec<BehavioralVector>,
    groups: PassGroups,
    synergy: SynergyGraph,
}

impl Hand {
    /// Passes with one behavioral component each, a group per pass and the given edges.
    fn new(passes: &[(&str, usize, f64)], edges: &[(&str, &str, f64)]) -> Self {
        let universe = PassUniverse::from_names(&passes.iter().map(|p| p.0).collect::<Vec<_>>()).unwrap();
        let k = passes.iter().map(|p| p.1).max().unwrap() + 1;
        let behavioral = passes
            .iter()
            .map(|(n, _, v)| BehavioralVector {
                pass: PassId::new(n).unwrap(),
                values: vec![*v],
                support: vec![1],
            })
            .collect();
        let group_of: BTreeMap<PassId, usize> = passes.iter().map(|(n, g, _)| (PassId::new(n).unwrap(), *g)).collect();
        let mut centroids = vec![vec![0.0]; k];
        for (g, c) in centroids.iter_mut().enumerate() {
            let vals: Vec<f64> = passes.iter().filter(|p| p.1 == g).map(|p| p.2).collect();
            c[0] = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
        }
        let synergy = SynergyGraph {
            edges: edges
                .iter()
                .map(|(a, b, w)| SynergyEdge {
                    from: PassId::new(a).unwrap(),
                    to: PassId::new(b).unwrap(),
                    count: 1,
                    weight: *w,
                })
                .collect(),
            corpus_size: 10,
        };
        Hand {
            universe,
            behavioral,
            groups: PassGroups { group_of, k, centroids },
            synergy,
        }
    }

    fn knowledge(&self) -> Knowledge {
        Knowledge::new(&self.universe, &self.behavioral, &self.groups, &self.synergy).unwrap()
    }
}

fn spans(blocks: &[FunctionalBlock]) -> Vec<(usize, usize, usize)> {
    blocks.iter().map(|b| (b.start, b.end, b.group)).collect()
}

#[test]
fn segmentation_examples() {
    let h = Hand::new(&[("A", 0, 1.0), ("B", 1, 1.0)], &[]);
    let k = h.knowledge();
    let blocks = segment_blocks(&ids(&["A", "A", "B", "A"]), &k).unwrap();
    assert_eq!(spans(&blocks), vec![(0, 2, 0), (2, 3, 1), (3, 4, 0)]);
    assert_eq!(segment_blocks(&ids(&["A", "A", "A"]), &k).unwrap().len(), 1);
    assert_eq!(segment_blocks(&ids(&["A", "B", "A", "B"]), &k).unwrap().len(), 4);
    assert!(segment_blocks(&ids(&["A", "Z"]), &k).is_err());
}

#[test]
fn blocks_partition_the_sequence() {
    let h = Hand::new(&[("A", 0, 1.0), ("B", 1, 1.0), ("C", 0, 2.0), ("D", 2, 0.5)], &[]);
    let k = h.knowledge();
    let mut rng = SplitMix64::new(4);
    for _ in 0..200 {
        let len = 1 + rng.below(12);
        let seq: Vec<PassId> = (0..len).map(|_| h.universe.passes()[rng.below(4)].clone()).collect();
        let blocks = segment_blocks(&seq, &k).unwrap();
        assert_eq!(blocks[0].start, 0);
        assert_eq!(blocks.last().unwrap().end, len);
        for w in blocks.windows(2) {
            assert_eq!(w[0].end, w[1].start);
            assert_ne!(w[0].group, w[1].group);
        }
        for b in &blocks {
            assert!(seq[b.start..b.end].iter().all(|p| k.group_of(p) == Some(b.group)));
        }
    }
}

#[test]
fn block_score_sums_components() {
    let h = Hand::new(&[("A", 0, 3.2), ("B", 0, -1.0), ("C", 0, 4.8)], &[]);
    let k = h.knowledge();
    let seq = ids(&["A", "B", "C"]);
    let blocks = segment_blocks(&seq, &k).unwrap();
    assert!((block_score(&blocks[0], &seq, &k, 0) - 7.0).abs() < 1e-12);
    let single = ids(&["C"]);
    let b = segment_blocks(&single, &k).unwrap();
    assert_eq!(block_score(&b[0], &single, &k, 0), 4.8);
}

#[test]
fn block_score_on_the_synthetic_example() {
    let suite = tiny6();
    let ev = evaluator(&suite, 1);
    let p0 = suite.program("p0").unwrap().unit();
    let behavioral = kgtune::knowledge::compute_behavioral_vectors(&[p0], &[0], 1, &ev).unwrap();
    let groups = kgtune::knowledge::compute_pass_groups(&behavioral, 1).unwrap();
    let synergy = SynergyGraph {
        edges: Vec::new(),
        corpus_size: 1,
    };
    let universe = suite.universe().unwrap();
    let k = Knowledge::new(&universe, &behavioral, &groups, &synergy).unwrap();
    let seq = ids(&["B"]);
    let blocks = segment_blocks(&seq, &k).unwrap();
    assert!((block_score(&blocks[0], &seq, &k, 0) - 11.7647).abs() < 1e-4);
}

#[test]
fn crossover_selection_frequency_within_three_sigma() {
    let h = Hand::new(&[("A", 0, 7.0), ("B", 0, 3.0)], &[]);
    let k = h.knowledge();
    let a = ids(&["A"]);
    let b = ids(&["B"]);
    let p = crossover_probability(7.0, 3.0);
    assert_eq!(p, (7.0 + 1e-6) / (10.0 + 2e-6));
    assert!((p - 0.7).abs() < 1e-7);
    let mut rng = SplitMix64::new(2024);
    let trials = 10_000;
    let hits = (0..trials)
        .filter(|_| knowledge_crossover(&a, &b, &k, 0, 1, &mut rng).unwrap() == a)
        .count();
    let freq = hits as f64 / trials as f64;
    let sigma = (p * (1.0 - p) / trials as f64).sqrt();
    assert!((freq - p).abs() <= 3.0 * sigma, "{freq} vs {p} (sigma {sigma})");
}

#[test]
fn crossover_probability_is_scale_invariant_for_positive_scores() {
    for (a, b) in [(7.0, 3.0), (0.5, 9.0), (2.0, 2.0)] {
        let p = crossover_probability(a, b);
        for c in [0.1, 3.0, 1000.0] {
            assert!((crossover_probability(a * c, b * c) - p).abs() < 1e-6);
        }
    }
    assert!((crossover_probability(-2.0, 3.0) - 1e-6 / (5.0 + 2e-6)).abs() < 1e-15);
}

#[test]
fn crossover_offspring_have_length_l() {
    let h = Hand::new(&[("A", 0, 1.0), ("B", 1, 2.0), ("C", 2, 5.0), ("D", 1, -1.0)], &[]);
    let k = h.knowledge();
    let mut rng = SplitMix64::new(9);
    for _ in 0..500 {
        let mk = |rng: &mut SplitMix64| -> Vec<PassId> { (0..6).map(|_| h.universe.passes()[rng.below(4)].clone()).collect() };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        let child = knowledge_crossover(&a, &b, &k, 0, 6, &mut rng).unwrap();
        assert_eq!(child.len(), 6);
        assert!(child.iter().all(|p| h.universe.contains(p)));
    }
    // Short child padded from the group best at the prototype (C's group).
    let child = knowledge_crossover(&ids(&["A"]), &ids(&["A"]), &k, 0, 3, &mut rng).unwrap();
    assert_eq!(child, ids(&["A", "C", "C"]));
}

#[test]
fn pool_takes_edge_weights_from_the_preceding_pass() {
    // Only A->D is an edge; B and C form the weakest block, preceded by A.
    let h = Hand::new(&[("A", 0, 5.0), ("B", 1, 0.5), ("C", 1, 0.2), ("D", 2, 3.0)], &[("A", "D", 0.4)]);
    let k = h.knowledge();
    let seq = ids(&["A", "B", "C"]);
    let mut blocks = segment_blocks(&seq, &k).unwrap();
    for b in &mut blocks {
        b.score = Some(block_score(b, &seq, &k, 0));
    }
    let pool = candidate_pool(&seq, &blocks, 1, &k);
    let w: BTreeMap<String, f64> = pool.iter().map(|(p, w)| (p.to_string(), *w)).collect();
    assert_eq!(w.len(), 3);
    assert_eq!(w["D"], 0.4);
    assert_eq!(w["B"], 0.4);
    assert_eq!(w["C"], 0.4);

    // Predecessor C has no successors: similarity only, weight 1.
    let seq = ids(&["A", "C", "D", "B"]);
    let blocks = segment_blocks(&seq, &k).unwrap();
    let pool = candidate_pool(&seq, &blocks, 3, &k);
    assert_eq!(pool, vec![(PassId::new("B").unwrap(), 1.0), (PassId::new("C").unwrap(), 1.0)]);

    // Leading block: top synergy sources join the similarity candidates.
    let seq = ids(&["C", "B", "A"]);
    let blocks = segment_blocks(&seq, &k).unwrap();
    let pool = candidate_pool(&seq, &blocks, 0, &k);
    let w: BTreeMap<String, f64> = pool.iter().map(|(p, w)| (p.to_string(), *w)).collect();
    assert_eq!(w["A"], 0.4);
    assert!(w.contains_key("B") && w.contains_key("C"));
}

#[test]
fn restorative_mutation_targets_the_leftmost_weakest_block() {
    let h = Hand::new(&[("A", 0, 7.0), ("B", 1, -2.0), ("C", 2, 4.0)], &[]);
    let k = h.knowledge();
    let seq = ids(&["A", "B", "C"]);
    let mut rng = SplitMix64::new(1);
    let cands = plan_restorative_mutation(&seq, &k, 0, 4, &mut rng).unwrap();
    assert_eq!(cands.len(), 4);
    for c in cands {
        assert_eq!(c[0], seq[0]);
        assert_eq!(c[2], seq[2]);
    }
}

#[test]
fn rejected_mutation_costs_exactly_q_evaluations() {
    let suite = tiny6();
    let ev = evaluator(&suite, 1);
    let kb = build_kb(
        &train_units(&suite),
        &ev,
        &BuildConfig {
            prototypes: Some(1),
            seq_len: 3,
            ..BuildConfig::default()
        },
    )
    .unwrap();
    let k = kb.knowledge();
    let p0 = suite.program("p0").unwrap().unit();
    let fresh = evaluator(&suite, 1);
    let mut search = Search::new(&fresh, vec![p0], None).unwrap();

    // The exhaustive best on p0 cannot be strictly improved.
    let names = pass_names(&suite);
    let best: Vec<String> = all_sequences(&names, 3)
        .into_iter()
        .min_by_key(|s| simulate(&suite, "p0", &s.iter().map(String::as_str).collect::<Vec<_>>()))
        .unwrap();
    let best_ids: Vec<PassId> = best.iter().map(|n| PassId::new(n).unwrap()).collect();
    let fit = search.fitness_batch(&[&best_ids]).unwrap()[0].unwrap();
    let original = Individual {
        seq: PassSequence::new(best_ids.clone(), Origin::Seed),
        fitness: Some(fit),
    };

    let q = 4;
    let cands = (0..1000u64)
        .map(|seed| plan_restorative_mutation(&best_ids, &k, 0, q, &mut SplitMix64::new(seed)).unwrap())
        .find(|c| {
            let mut d = c.clone();
            d.sort();
            d.dedup();
            d.len() == q && !c.contains(&best_ids)
        })
        .expect("a plan with distinct candidates");
    let before = search.used();
    let refs: Vec<&[PassId]> = cands.iter().map(Vec::as_slice).collect();
    let fits = search.fitness_batch(&refs).unwrap();
    assert_eq!(search.used() - before, q as u64);
    let scored: Vec<(Vec<PassId>, Option<f64>)> = cands.into_iter().zip(fits).collect();
    assert!(scored.iter().all(|(_, f)| f.unwrap() <= fit));
    let out = accept_mutation(&original, &scored, false);
    assert_eq!(out, original);
}

fn tiny_kb(seq_len: usize) -> (kgtune::backend::SyntheticSuite, kgtune::knowledge::PassKnowledgeBase) {
    let suite = tiny6();
    let ev = evaluator(&suite, 1);
    let kb = build_kb(
        &train_units(&suite),
        &ev,
        &BuildConfig {
            prototypes: Some(2),
            seq_len,
            ..BuildConfig::default()
        },
    )
    .unwrap();
    (suite, kb)
}

#[test]
fn tune_reaches_the_exhaustive_optimum_on_tiny6() {
    let (suite, kb) = tiny_kb(3);
    let names = pass_names(&suite);
    for prog in &suite.programs {
        let ev = evaluator(&suite, 1);
        let config = GaConfig {
            eval_budget: Some(216),
            generations: 200,
            ..GaConfig::default()
        };
        let report = tune(&prog.unit(), &kb, &ev, &config).unwrap();
        let optimum = all_sequences(&names, 3)
            .iter()
            .map(|s| simulate(&suite, &prog.id, &s.iter().map(String::as_str).collect::<Vec<_>>()))
            .min()
            .unwrap();
        assert_eq!(report.best_count, Some(optimum), "{}", prog.id);
        assert!(report.backend_calls <= 216);
    }
}

#[test]
fn generations_zero_reports_the_initial_best() {
    let (suite, kb) = tiny_kb(3);
    let ev = evaluator(&suite, 1);
    let p = suite.program("p2").unwrap().unit();
    let config = GaConfig {
        generations: 0,
        ..GaConfig::default()
    };
    let report = tune(&p, &kb, &ev, &config).unwrap();
    assert_eq!(report.generations_run, 0);
    assert_eq!(report.trajectory.len(), 1);
    let best_proto = kb
        .prototypes
        .entries
        .iter()
        .map(|e| kgtune::evolve::fitness(report.baseline_count, ev.evaluate(&p, &e.sequence).unwrap()).unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(report.best_fitness >= best_proto);
}

#[test]
fn tune_is_deterministic_and_budgeted() {
    let (suite, kb) = tiny_kb(5);
    let p = suite.program("p4").unwrap().unit();
    let config = GaConfig {
        eval_budget: Some(40),
        seed: 9,
        ..GaConfig::default()
    };
    let a = tune(&p, &kb, &evaluator(&suite, 1), &config).unwrap();
    let b = tune(&p, &kb, &evaluator(&suite, 4), &config).unwrap();
    assert_eq!(
        serde_json::to_value(&a).unwrap()["best_sequence"],
        serde_json::to_value(&b).unwrap()["best_sequence"]
    );
    assert_eq!(a.trajectory, b.trajectory);
    assert!(a.backend_calls <= 40);
    assert!(a.trajectory.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn every_operator_mix_keeps_the_trajectory_monotone() {
    let (suite, kb) = tiny_kb(6);
    let ops = [
        Operators::default(),
        Operators::none(),
        Operators {
            smart_init: false,
            ..Operators::default()
        },
    ];
    for (i, op) in ops.into_iter().enumerate() {
        for prog in suite.units(Some(Split::Train)) {
            let config = GaConfig {
                operators: op,
                seed: i as u64,
                eval_budget: Some(120),
                ..GaConfig::default()
            };
            let r = tune(&prog, &kb, &evaluator(&suite, 1), &config).unwrap();
            assert!(r.trajectory.windows(2).all(|w| w[1] >= w[0]));
            assert_eq!(r.best_sequence.len(), 6);
        }
    }
}

#[test]
fn universe_mismatch_is_rejected() {
    let (_, kb) = tiny_kb(3);
    let (other, _) = kgtune::harness::cmd_synth_gen(&kgtune::harness::SynthParams::default()).unwrap();
    let ev = evaluator(&other, 1);
    let p = other.programs[0].unit();
    let err = tune(&p, &kb, &ev, &GaConfig::default()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}
