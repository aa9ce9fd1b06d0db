//! Lloyd's k-means with k-means++ seeding over sparse rows.

use super::ClusterError;
use crate::par::{self, Execution};
use crate::vectorizer::{SparseVector, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub exec: Execution,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            exec: Execution::default(),
        }
    }

    pub fn with_exec(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub k: usize,
    pub ids: Vec<String>,
    /// Cluster of `ids[i]`.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
    /// Inertia after every assignment step, ending with the final one.
    pub inertia_trace: Vec<f64>,
    /// Indices of the points chosen by k-means++.
    pub initial_points: Vec<usize>,
}

impl KMeansResult {
    pub fn assignment_map(&self) -> BTreeMap<&str, usize> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.assignments.iter().copied())
            .collect()
    }

    pub fn members(&self, cluster: usize) -> Vec<&str> {
        self.ids
            .iter()
            .zip(&self.assignments)
            .filter(|(_, &c)| c == cluster)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in &self.assignments {
            sizes[c] += 1;
        }
        sizes
    }
}

struct Centroids {
    dense: Vec<Vec<f64>>,
    norms2: Vec<f64>,
}

impl Centroids {
    fn new(dense: Vec<Vec<f64>>) -> Self {
        let norms2 = dense.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
        Self { dense, norms2 }
    }

    fn sq_dist(&self, cluster: usize, x: &SparseVector, x_norm2: f64) -> f64 {
        let c = &self.dense[cluster];
        let cross: f64 = x.entries().iter().map(|&(j, w)| w * c[j as usize]).sum();
        (x_norm2 - 2.0 * cross + self.norms2[cluster]).max(0.0)
    }

    /// Nearest centroid; ties go to the lowest cluster id.
    fn nearest(&self, x: &SparseVector, x_norm2: f64) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for c in 0..self.dense.len() {
            let d = self.sq_dist(c, x, x_norm2);
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    }
}

fn densify(x: &SparseVector, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for &(j, w) in x.entries() {
        v[j as usize] = w;
    }
    v
}

/// Draws an index with probability proportional to `weights`, skipping zeros.
fn sample_weighted(weights: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut pick = None;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        pick = Some(i);
        if acc > target {
            break;
        }
    }
    pick.expect("positive total implies a positive weight")
}

/// Greedy k-means++: each step draws `2 + ln k` candidates by squared
/// distance and keeps the one that lowers the total potential most.
fn kmeans_plus_plus(
    rows: &[SparseVector],
    norms2: &[f64],
    dim: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = rows.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let dists_to = |p: usize| -> Vec<f64> {
        let c = Centroids::new(vec![densify(&rows[p], dim)]);
        (0..n).map(|i| c.sq_dist(0, &rows[i], norms2[i])).collect()
    };
    let mut chosen = vec![rng.random_range(0..n)];
    let mut min_d2 = dists_to(chosen[0]);
    while chosen.len() < k {
        let total: f64 = min_d2.iter().sum();
        if total <= 0.0 {
            // Fewer distinct points than k: fall back to unused indices.
            let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            let next = unused[rng.random_range(0..unused.len())];
            chosen.push(next);
            continue;
        }
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for _ in 0..trials {
            let cand = sample_weighted(&min_d2, total, rng);
            let merged: Vec<f64> = dists_to(cand)
                .into_iter()
                .zip(&min_d2)
                .map(|(d, &m)| d.min(m))
                .collect();
            let potential: f64 = merged.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.1) {
                best = Some((cand, potential, merged));
            }
        }
        let (next, _, merged) = best.expect("at least one trial");
        chosen.push(next);
        min_d2 = merged;
    }
    chosen
}

/// Clusters `rows` (labelled by `ids`) into `params.k` groups.
///
/// `dim` is the column count of the rows (vocabulary size).
pub fn kmeans(
    rows: &[SparseVector],
    ids: &[String],
    dim: usize,
    params: &KMeansParams,
) -> Result<KMeansResult, ClusterError> {
    let n = rows.len();
    let k = params.k;
    if ids.len() != n {
        return Err(ClusterError::InvalidParameter("rows and ids differ in length".into()));
    }
    if k < 1 || k > n {
        return Err(ClusterError::BadK { k, n });
    }
    if params.tol.is_nan() || params.tol <= 0.0 {
        return Err(ClusterError::InvalidParameter("tol must be positive".into()));
    }
    if rows.iter().any(|r| r.entries().iter().any(|&(j, _)| j as usize >= dim)) {
        return Err(ClusterError::InvalidParameter("row column exceeds dimension".into()));
    }

    let norms2: Vec<f64> = rows.iter().map(|r| r.entries().iter().map(|e| e.1 * e.1).sum()).collect();
    let points: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let initial_points = kmeans_plus_plus(rows, &norms2, dim, k, &mut rng);
    let mut centroids = Centroids::new(initial_points.iter().map(|&i| densify(&rows[i], dim)).collect());

    let assign = |c: &Centroids| -> (Vec<usize>, Vec<f64>) {
        par::map(params.exec, &points, |&i| c.nearest(&rows[i], norms2[i]))
            .into_iter()
            .unzip()
    };

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=params.max_iter {
        let (labels, dists) = assign(&centroids);
        trace.push(dists.iter().sum::<f64>());

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for &(j, w) in rows[i].entries() {
                sums[c][j as usize] += w;
            }
        }
        let mut reseeded = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                let count = counts[c] as f64;
                sums[c].iter_mut().for_each(|v| *v /= count);
            } else {
                // Empty cluster: move it onto the point farthest from its own centroid.
                let far = (0..n)
                    .filter(|i| !reseeded.contains(i))
                    .fold(None::<usize>, |best, i| match best {
                        Some(b) if dists[b] >= dists[i] => Some(b),
                        _ => Some(i),
                    })
                    .expect("k <= n leaves a point to reseed with");
                reseeded.push(far);
                sums[c] = densify(&rows[far], dim);
            }
        }
        let shift = centroids
            .dense
            .iter()
            .zip(&sums)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        centroids = Centroids::new(sums);
        iterations = it;
        if shift < params.tol {
            converged = true;
            break;
        }
    }

    let (assignments, dists) = assign(&centroids);
    let inertia: f64 = dists.iter().sum();
    trace.push(inertia);

    Ok(KMeansResult {
        k,
        ids: ids.to_vec(),
        assignments,
        centroids: centroids.dense,
        inertia,
        iterations,
        converged,
        seed: params.seed,
        inertia_trace: trace,
        initial_points,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSuggestion {
    pub terms: Vec<String>,
    /// Set when none of the suggested terms has positive centroid weight.
    pub low_confidence: bool,
}

/// Top-`m` centroid terms, by descending weight with lexicographic tie-break.
pub fn suggest_labels(
    result: &KMeansResult,
    cluster: usize,
    vocab: &Vocabulary,
    m: usize,
) -> Result<LabelSuggestion, ClusterError> {
    let centroid = result.centroids.get(cluster).ok_or(ClusterError::UnknownCluster(cluster))?;
    if !result.assignments.contains(&cluster) {
        return Err(ClusterError::EmptyCluster(cluster));
    }
    Ok(top_terms(centroid, vocab, m))
}

pub(crate) fn top_terms(weights: &[f64], vocab: &Vocabulary, m: usize) -> LabelSuggestion {
    let mut cols: Vec<usize> = (0..weights.len().min(vocab.len())).collect();
    // vocabulary columns are in lexicographic term order
    cols.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    cols.truncate(m);
    let low_confidence = cols.iter().all(|&c| weights[c] <= 0.0);
    LabelSuggestion {
        terms: cols.iter().map(|&c| vocab.term(c as u32).to_string()).collect(),
        low_confidence,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(xy: &[(f64, f64)]) -> (Vec<SparseVector>, Vec<String>) {
        let rows = xy
            .iter()
            .map(|&(x, y)| SparseVector::from_entries(vec![(0, x), (1, y)]))
            .collect();
        let ids = (0..xy.len()).map(|i| format!("p{i}")).collect();
        (rows, ids)
    }

    #[test]
    fn four_point_example() {
        let (rows, ids) = pts(&[(0.0, 0.0), (0.0, 1.0), (10.0, 0.0), (10.0, 1.0)]);
        for seed in 0..20 {
            let r = kmeans(&rows, &ids, 2, &KMeansParams::new(2, seed)).unwrap();
            assert_eq!(r.assignments[0], r.assignments[1]);
            assert_eq!(r.assignments[2], r.assignments[3]);
            assert_ne!(r.assignments[0], r.assignments[2]);
            assert!((r.inertia - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_k() {
        let (rows, ids) = pts(&[(0.0, 0.0), (1.0, 5.0), (3.0, 2.0), (7.0, 7.0)]);
        let r = kmeans(&rows, &ids, 2, &KMeansParams::new(4, 1)).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut a = r.assignments.clone();
        a.sort();
        assert_eq!(a, vec![0, 1, 2, 3]);

        let r = kmeans(&rows, &ids, 2, &KMeansParams::new(1, 1)).unwrap();
        assert!((r.centroids[0][0] - 2.75).abs() < 1e-12);
        assert!((r.centroids[0][1] - 3.5).abs() < 1e-12);
        // n * total variance = sum of squared deviations from the mean
        let expected: f64 = [(0.0, 0.0), (1.0, 5.0), (3.0, 2.0), (7.0, 7.0)]
            .iter()
            .map(|(x, y)| (x - 2.75f64).powi(2) + (y - 3.5f64).powi(2))
            .sum();
        assert!((r.inertia - expected).abs() < 1e-9);
    }

    #[test]
    fn bad_k_and_params() {
        let (rows, ids) = pts(&[(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(
            kmeans(&rows, &ids, 2, &KMeansParams::new(0, 1)).unwrap_err(),
            ClusterError::BadK { k: 0, n: 2 }
        );
        assert_eq!(
            kmeans(&rows, &ids, 2, &KMeansParams::new(3, 1)).unwrap_err(),
            ClusterError::BadK { k: 3, n: 2 }
        );
        let mut p = KMeansParams::new(1, 1);
        p.tol = 0.0;
        assert!(kmeans(&rows, &ids, 2, &p).is_err());
    }

    #[test]
    fn duplicates_fewer_distinct_than_k() {
        let (rows, ids) = pts(&[(1.0, 1.0), (1.0, 1.0), (1.0, 1.0)]);
        let r = kmeans(&rows, &ids, 2, &KMeansParams::new(3, 9)).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut init = r.initial_points.clone();
        init.sort();
        assert_eq!(init, vec![0, 1, 2]);
    }

    #[test]
    fn initial_centroids_are_distinct_points() {
        let xy: Vec<(f64, f64)> = (0..30).map(|i| ((i % 7) as f64, (i % 5) as f64)).collect();
        let (rows, ids) = pts(&xy);
        for seed in 0..10 {
            let r = kmeans(&rows, &ids, 2, &KMeansParams::new(8, seed)).unwrap();
            let chosen: Vec<_> = r.initial_points.iter().map(|&i| xy[i]).collect();
            for a in 0..chosen.len() {
                for b in a + 1..chosen.len() {
                    assert_ne!(chosen[a], chosen[b]);
                }
            }
        }
    }

    #[test]
    fn sequential_and_parallel_are_bit_identical() {
        let xy: Vec<(f64, f64)> = (0..200).map(|i| ((i * 37 % 101) as f64, (i * 13 % 29) as f64)).collect();
        let (rows, ids) = pts(&xy);
        let p = KMeansParams::new(5, 42);
        let a = kmeans(&rows, &ids, 2, &p.with_exec(Execution::Sequential)).unwrap();
        let b = kmeans(&rows, &ids, 2, &p.with_exec(Execution::Parallel)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.inertia.to_bits(), b.inertia.to_bits());
    }

    #[test]
    fn labels_sorted_with_tie_break() {
        let vocab = Vocabulary::from_parts(
            vec!["carbon".into(), "cat".into(), "climate".into()],
            vec![1, 1, 1],
            3,
        )
        .unwrap();
        let s = top_terms(&[0.5, 0.1, 0.9], &vocab, 2);
        assert_eq!(s.terms, vec!["climate", "carbon"]);
        assert!(!s.low_confidence);
        let s = top_terms(&[0.0, 0.0, 0.0], &vocab, 2);
        assert_eq!(s.terms, vec!["carbon", "cat"]);
        assert!(s.low_confidence);
        let s = top_terms(&[0.2, 0.2, 0.1], &vocab, 10);
        assert_eq!(s.terms, vec!["carbon", "cat", "climate"]);
    }
}
