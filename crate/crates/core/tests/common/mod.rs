#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use kgtune::backend::synthetic::{Category, Split};
use kgtune::backend::{Evaluator, SyntheticBackend, SyntheticSuite};
use kgtune::model::{FeatureVector, PassId, ProgramUnit};
use kgtune::rng::SplitMix64;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn tiny6() -> SyntheticSuite {
    SyntheticSuite::load(&fixture("tiny6.json")).unwrap()
}

pub fn evaluator(suite: &SyntheticSuite, jobs: usize) -> Evaluator {
    Evaluator::new(Arc::new(SyntheticBackend::new(suite).unwrap()), jobs).unwrap()
}

pub fn train_units(suite: &SyntheticSuite) -> Vec<ProgramUnit> {
    suite.units(Some(Split::Train))
}

pub fn ids(names: &[&str]) -> Vec<PassId> {
    names.iter().map(|n| PassId::new(n).unwrap()).collect()
}

/// Straight re-statement of the pool semantics, kept apart from the library code.
pub fn simulate(suite: &SyntheticSuite, program: &str, seq: &[&str]) -> u64 {
    let prog = suite.programs.iter().find(|p| p.id == program).unwrap();
    let mut pools: BTreeMap<Category, u64> = prog.pools.clone();
    let mut flags: BTreeSet<String> = BTreeSet::new();
    for name in seq {
        let spec = suite.passes.iter().find(|p| p.id.as_str() == *name).unwrap();
        let mut rate = spec.rate;
        if let Some(req) = &spec.requires_flag {
            if flags.contains(req) {
                rate = (2.0 * rate).min(1.0);
            }
        }
        let pool = pools.entry(spec.target).or_insert(0);
        *pool -= (rate * *pool as f64).floor() as u64;
        if let Some(f) = &spec.sets_flag {
            flags.insert(f.clone());
        }
    }
    prog.base + pools.values().sum::<u64>()
}

pub fn pass_names(suite: &SyntheticSuite) -> Vec<String> {
    suite.passes.iter().map(|p| p.id.to_string()).collect()
}

/// Mean single-pass percent reduction per (pass, prototype), by brute force.
pub fn brute_behavior(suite: &SyntheticSuite, labels: &BTreeMap<String, usize>, k: usize) -> Vec<Vec<f64>> {
    let names = pass_names(suite);
    let mut out = vec![vec![0.0; k]; names.len()];
    for (j, name) in names.iter().enumerate() {
        for (proto, slot) in out[j].iter_mut().enumerate() {
            let members: Vec<&String> = labels.iter().filter(|(_, &l)| l == proto).map(|(id, _)| id).collect();
            let mut sum = 0.0;
            let mut n = 0;
            for id in members {
                let before = simulate(suite, id, &[]) as f64;
                if before == 0.0 {
                    continue;
                }
                let after = simulate(suite, id, &[name]) as f64;
                sum += 100.0 * (before - after) / before;
                n += 1;
            }
            *slot = if n == 0 { 0.0 } else { sum / n as f64 };
        }
    }
    out
}

/// All ordered pairs (A, B) with their enabling counts, by brute force.
pub fn brute_synergy(suite: &SyntheticSuite, programs: &[String]) -> BTreeMap<(String, String), u64> {
    let names = pass_names(suite);
    let mut out = BTreeMap::new();
    for a in &names {
        for b in &names {
            let count = programs
                .iter()
                .filter(|p| {
                    let ab = simulate(suite, p, &[a, b]);
                    let only_b = simulate(suite, p, &[b]);
                    let none = simulate(suite, p, &[]);
                    ab < only_b && only_b < none
                })
                .count() as u64;
            if count > 0 {
                out.insert((a.clone(), b.clone()), count);
            }
        }
    }
    out
}

/// Adjusted Rand index of two labelings.
pub fn ari(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut ra: BTreeMap<usize, u64> = BTreeMap::new();
    let mut rb: BTreeMap<usize, u64> = BTreeMap::new();
    for i in 0..n {
        *table.entry((a[i], b[i])).or_default() += 1;
        *ra.entry(a[i]).or_default() += 1;
        *rb.entry(b[i]).or_default() += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&v| c2(v)).sum();
    let sa: f64 = ra.values().map(|&v| c2(v)).sum();
    let sb: f64 = rb.values().map(|&v| c2(v)).sum();
    let expected = sa * sb / c2(n as u64);
    let max = (sa + sb) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Box-Muller normal draw.
pub fn normal(rng: &mut SplitMix64) -> f64 {
    let u1 = rng.next_f64().max(1e-300);
    let u2 = rng.next_f64();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// `per` points around each center with isotropic noise `sigma`.
pub fn planted_points(centers: &[Vec<f64>], per: usize, sigma: f64, seed: u64) -> (Vec<FeatureVector>, Vec<usize>) {
    let mut rng = SplitMix64::new(seed);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per {
            let v = center.iter().map(|x| x + sigma * normal(&mut rng)).collect();
            points.push(FeatureVector::new(v).unwrap());
            labels.push(c);
        }
    }
    (points, labels)
}

/// Every sequence of length `len` over `names`, in lexicographic index order.
pub fn all_sequences(names: &[String], len: usize) -> Vec<Vec<String>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                names.iter().map(move |n| {
                    let mut s = prefix.clone();
                    s.push(n.clone());
                    s
                })
            })
            .collect();
    }
    out
}
