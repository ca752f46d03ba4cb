//! K-Means with k-means++ seeding, elbow selection of k, and nearest-centroid classification.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FeatureVector;
use crate::rng::SplitMix64;

pub const MAX_ITERATIONS: usize = 300;
pub const SHIFT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub centroids: Vec<Vec<f64>>,
    pub k: usize,
    pub seed: u64,
    pub inertia: f64,
    pub schema_version: u32,
}

impl KMeansModel {
    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k != self.centroids.len() {
            return Err(Error::data(format!(
                "k-means model has k={} but {} centroids",
                self.k,
                self.centroids.len()
            )));
        }
        let dim = self.dim();
        if self.centroids.iter().any(|c| c.len() != dim || c.iter().any(|x| !x.is_finite())) {
            return Err(Error::data("k-means centroids are ragged or non-finite"));
        }
        if self.inertia.is_nan() || self.inertia < 0.0 {
            return Err(Error::data("k-means inertia is negative"));
        }
        Ok(())
    }
}

/// Program id to cluster index.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: BTreeMap<String, usize>,
}

impl ClusterAssignment {
    pub fn from_labels(ids: &[String], labels: &[usize]) -> Self {
        ClusterAssignment {
            labels: ids.iter().cloned().zip(labels.iter().copied()).collect(),
        }
    }

    /// Program ids grouped by cluster, ascending id order within each cluster.
    pub fn members(&self, k: usize) -> Vec<Vec<String>> {
        let mut out = vec![Vec::new(); k];
        for (id, &c) in &self.labels {
            if c < k {
                out[c].push(id.clone());
            }
        }
        out
    }
}

/// Result of a fit plus the inertia recorded after every assignment step.
#[derive(Debug, Clone)]
pub struct FitTrace {
    pub model: KMeansModel,
    pub labels: Vec<usize>,
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid by squared Euclidean distance; ties go to the smaller index.
fn nearest(centroids: &[Vec<f64>], v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, v);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn check_points(points: &[FeatureVector], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::usage("k must be at least 1"));
    }
    if k > points.len() {
        return Err(Error::usage(format!(
            "k={k} exceeds the number of points ({})",
            points.len()
        )));
    }
    let dim = points[0].dim();
    for p in points {
        if p.dim() != dim {
            return Err(Error::data(format!("dimension mismatch: {} vs {dim}", p.dim())));
        }
        if p.values.iter().any(|x| x.is_nan()) {
            return Err(Error::data("NaN feature component"));
        }
    }
    Ok(dim)
}

fn seed_plus_plus(points: &[&[f64]], k: usize, rng: &mut SplitMix64) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.below(n)].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let pick = rng.weighted(&d2).unwrap_or_else(|| rng.below(n));
        let c = points[pick].to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Runs k-means and keeps the per-iteration inertia trace.
pub fn kmeans_fit_traced(points: &[FeatureVector], k: usize, seed: u64) -> Result<FitTrace> {
    let dim = check_points(points, k)?;
    let data: Vec<&[f64]> = points.iter().map(|p| p.values.as_slice()).collect();
    let mut rng = SplitMix64::new(seed);
    let mut centroids = seed_plus_plus(&data, k, &mut rng);
    let mut history: Vec<f64> = Vec::new();
    let mut labels = vec![0usize; data.len()];
    let mut iterations = 0;

    for _ in 0..MAX_ITERATIONS {
        iterations += 1;
        let mut dists = vec![0.0; data.len()];
        for (i, p) in data.iter().enumerate() {
            let (c, d) = nearest(&centroids, p);
            labels[i] = c;
            dists[i] = d;
        }
        let inertia: f64 = dists.iter().sum();
        if let Some(&prev) = history.last() {
            assert!(
                inertia <= prev + 1e-9 * prev.max(1.0),
                "k-means inertia increased: {prev} -> {inertia}"
            );
        }
        history.push(inertia);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in data.iter().zip(&labels) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        let mut next = Vec::with_capacity(k);
        for (c, (sum, count)) in sums.into_iter().zip(&counts).enumerate() {
            if *count > 0 {
                next.push(sum.into_iter().map(|s| s / *count as f64).collect::<Vec<_>>());
            } else {
                next.push(centroids[c].clone());
            }
        }
        // Empty clusters take the point farthest from its own centroid.
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = dists
                .iter()
                .enumerate()
                .fold((0usize, -1.0f64), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc })
                .0;
            next[c] = data[far].to_vec();
            dists[far] = 0.0;
        }

        let moved: f64 = centroids.iter().zip(&next).map(|(a, b)| sq_dist(a, b)).sum();
        let scale: f64 = centroids.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>()).sum();
        centroids = next;
        if moved.sqrt() <= SHIFT_TOLERANCE * scale.sqrt().max(1e-12) {
            break;
        }
    }

    let mut inertia = 0.0;
    for (i, p) in data.iter().enumerate() {
        let (c, d) = nearest(&centroids, p);
        labels[i] = c;
        inertia += d;
    }
    if let Some(&prev) = history.last() {
        assert!(
            inertia <= prev + 1e-9 * prev.max(1.0),
            "k-means inertia increased: {prev} -> {inertia}"
        );
    }
    history.push(inertia);

    Ok(FitTrace {
        model: KMeansModel {
            centroids,
            k,
            seed,
            inertia,
            schema_version: crate::features::SCHEMA_VERSION,
        },
        labels,
        inertia_history: history,
        iterations,
    })
}

/// Fits `k` clusters. Identical inputs and seed give bit-identical centroids.
pub fn kmeans_fit(points: &[FeatureVector], k: usize, seed: u64) -> Result<(KMeansModel, Vec<usize>)> {
    let trace = kmeans_fit_traced(points, k, seed)?;
    Ok((trace.model, trace.labels))
}

/// `(k, inertia)` for every k in `[k_min, k_max]`.
pub fn elbow_curve(points: &[FeatureVector], k_min: usize, k_max: usize, seed: u64) -> Result<Vec<(usize, f64)>> {
    if k_min == 0 || k_min >= k_max || k_max > points.len() {
        return Err(Error::usage(format!(
            "elbow range [{k_min}, {k_max}] invalid for {} points",
            points.len()
        )));
    }
    (k_min..=k_max)
        .map(|k| kmeans_fit(points, k, seed).map(|(m, _)| (k, m.inertia)))
        .collect()
}

/// Picks the k whose point lies farthest from the chord joining the curve's endpoints.
///
/// Both axes are rescaled to `[0, 1]` first. Ties go to the smallest k.
pub fn elbow_from_curve(curve: &[(usize, f64)]) -> usize {
    let (k0, i0) = curve[0];
    let (k1, i1) = curve[curve.len() - 1];
    let hi = curve.iter().map(|c| c.1).fold(f64::MIN, f64::max);
    let lo = curve.iter().map(|c| c.1).fold(f64::MAX, f64::min);
    let y_span = hi - lo;
    if y_span.is_nan() || y_span <= 0.0 || k1 == k0 {
        return k0;
    }
    let x_span = (k1 - k0) as f64;
    let norm = |k: usize, i: f64| ((k - k0) as f64 / x_span, (i - lo) / y_span);
    let (ax, ay) = norm(k0, i0);
    let (bx, by) = norm(k1, i1);
    let (dx, dy) = (bx - ax, by - ay);
    let len = (dx * dx + dy * dy).sqrt();
    let mut best = (k0, -1.0);
    for &(k, i) in curve {
        let (x, y) = norm(k, i);
        let d = ((x - ax) * dy - (y - ay) * dx).abs() / len;
        if d > best.1 + 1e-12 {
            best = (k, d);
        }
    }
    best.0
}

pub fn elbow_select_k(points: &[FeatureVector], k_min: usize, k_max: usize, seed: u64) -> Result<usize> {
    Ok(elbow_from_curve(&elbow_curve(points, k_min, k_max, seed)?))
}

/// Index of the nearest centroid; ties go to the smaller index.
pub fn classify(model: &KMeansModel, v: &FeatureVector) -> Result<usize> {
    if v.dim() != model.dim() {
        return Err(Error::data(format!(
            "feature dimension {} does not match model dimension {}",
            v.dim(),
            model.dim()
        )));
    }
    Ok(nearest(&model.centroids, &v.values).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn k1_is_the_mean() {
        let pts = vec![fv(&[0.0, 1.0]), fv(&[2.0, 3.0]), fv(&[4.0, 8.0])];
        let (m, labels) = kmeans_fit(&pts, 1, 42).unwrap();
        assert_eq!(labels, vec![0, 0, 0]);
        assert!((m.centroids[0][0] - 2.0).abs() < 1e-12);
        assert!((m.centroids[0][1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let pts = vec![fv(&[0.0]), fv(&[1.0]), fv(&[5.0]), fv(&[9.0])];
        let (m, _) = kmeans_fit(&pts, 4, 1).unwrap();
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn errors() {
        let pts = vec![fv(&[0.0]), fv(&[1.0])];
        assert!(kmeans_fit(&pts, 3, 0).is_err());
        assert!(kmeans_fit(&pts, 0, 0).is_err());
        let ragged = vec![fv(&[0.0]), fv(&[1.0, 2.0])];
        assert!(kmeans_fit(&ragged, 1, 0).is_err());
        let nan = vec![FeatureVector { values: vec![f64::NAN] }];
        assert!(kmeans_fit(&nan, 1, 0).is_err());
    }

    #[test]
    fn identical_points_elbow_is_k_min() {
        let pts = vec![fv(&[1.0, 1.0]); 10];
        assert_eq!(elbow_select_k(&pts, 1, 6, 42).unwrap(), 1);
        assert_eq!(elbow_select_k(&pts, 2, 6, 42).unwrap(), 2);
    }

    #[test]
    fn classify_rules() {
        let model = KMeansModel {
            centroids: vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![5.0, 5.0]],
            k: 3,
            seed: 0,
            inertia: 0.0,
            schema_version: 1,
        };
        assert_eq!(classify(&model, &fv(&[5.0, 5.0])).unwrap(), 2);
        assert_eq!(classify(&model, &fv(&[1.0, 0.0])).unwrap(), 0);
        assert!(classify(&model, &fv(&[1.0])).is_err());
    }

    #[test]
    fn fit_is_deterministic() {
        let pts: Vec<FeatureVector> = (0..40)
            .map(|i| fv(&[(i * 37 % 11) as f64, (i * 13 % 7) as f64]))
            .collect();
        let a = kmeans_fit(&pts, 4, 9).unwrap();
        let b = kmeans_fit(&pts, 4, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn elbow_range_checked() {
        let pts = vec![fv(&[0.0]), fv(&[1.0])];
        assert!(elbow_select_k(&pts, 2, 2, 0).is_err());
        assert!(elbow_select_k(&pts, 1, 3, 0).is_err());
    }
}
