//! Size-constrained K-means over usage descriptors (here the scalar `g`).
//!
//! Lloyd iterations whose assignment step is solved exactly as a min-cost
//! flow with per-cluster size bounds. Each restart is seeded with k-means++;
//! for one-dimensional data one extra restart starts from the optimal
//! contiguous partition found by dynamic programming.

mod flow;

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use flow::min_cost_assignment;

use crate::rng::rng_from;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ClusterError {
    #[error(
        "infeasible size bounds: need {k} clusters × min_size {min_size} = {} ≤ {n} cells ≤ {k} × max_size {max_size} = {}",
        k * min_size,
        k * max_size
    )]
    Infeasible { n: usize, k: usize, min_size: usize, max_size: usize },
    #[error("cluster count must be at least 1")]
    ZeroClusters,
    #[error("min_size {min_size} exceeds max_size {max_size}")]
    InvertedBounds { min_size: usize, max_size: usize },
    #[error("points must share one non-zero dimension and be finite")]
    BadPoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { k: 8, min_size: 10, max_size: 100, restarts: 10, max_iter: 100 }
    }
}

impl ClusterConfig {
    pub fn check_feasible(&self, n: usize) -> Result<(), ClusterError> {
        if self.k == 0 {
            return Err(ClusterError::ZeroClusters);
        }
        if self.min_size > self.max_size {
            return Err(ClusterError::InvertedBounds { min_size: self.min_size, max_size: self.max_size });
        }
        if self.min_size * self.k > n || self.max_size.saturating_mul(self.k) < n {
            return Err(ClusterError::Infeasible { n, k: self.k, min_size: self.min_size, max_size: self.max_size });
        }
        Ok(())
    }
}

/// Fitted grouping of cells by their scalar usage feature.
///
/// Groups are numbered in ascending centroid order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub k: usize,
    pub centroids: Vec<f64>,
    pub membership: BTreeMap<String, usize>,
    pub sizes: Vec<usize>,
    pub min_size: usize,
    pub max_size: usize,
    /// Within-cluster sum of squared deviations.
    pub objective: f64,
}

impl GroupAssignment {
    pub fn group_of(&self, cell_id: &str) -> Option<usize> {
        self.membership.get(cell_id).copied()
    }

    pub fn members(&self, group: usize) -> impl Iterator<Item = &str> {
        self.membership.iter().filter(move |(_, &g)| g == group).map(|(id, _)| id.as_str())
    }
}

/// Nearest centroid by `|g − centroid|`, lowest index on ties.
pub fn assign_group(g_value: f64, assignment: &GroupAssignment) -> usize {
    nearest(g_value, &assignment.centroids)
}

fn nearest(g: f64, centroids: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = (g - c).abs();
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

pub fn objective(points: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points.iter().zip(labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum()
}

/// One Lloyd run: labels, centroids and the objective after every iteration.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub trace: Vec<f64>,
}

impl LloydRun {
    pub fn objective(&self) -> f64 {
        *self.trace.last().expect("at least one iteration")
    }
}

fn update_centroids(points: &[Vec<f64>], labels: &[usize], previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = points[0].len();
    let k = previous.len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p) {
            *s += x;
        }
    }
    sums.into_iter()
        .zip(counts)
        .zip(previous)
        .map(|((s, c), prev)| if c == 0 { prev.clone() } else { s.into_iter().map(|v| v / c as f64).collect() })
        .collect()
}

/// Lloyd iterations from `init`. With `bounds = Some((min, max))` the
/// assignment step is the exact size-constrained transport problem; with
/// `None` it is plain nearest-centroid assignment.
pub fn lloyd(points: &[Vec<f64>], init: Vec<Vec<f64>>, bounds: Option<(usize, usize)>, max_iter: usize) -> LloydRun {
    let k = init.len();
    let mut centroids = init;
    let mut labels: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    for _ in 0..max_iter.max(1) {
        let new_labels = match bounds {
            Some((lo, hi)) => {
                let costs: Vec<Vec<f64>> =
                    points.iter().map(|p| centroids.iter().map(|c| sq_dist(p, c)).collect()).collect();
                min_cost_assignment(&costs, &vec![lo; k], &vec![hi; k]).expect("feasibility checked by caller")
            }
            None => points
                .iter()
                .map(|p| {
                    let mut best = 0;
                    for j in 1..k {
                        if sq_dist(p, &centroids[j]) < sq_dist(p, &centroids[best]) {
                            best = j;
                        }
                    }
                    best
                })
                .collect(),
        };
        if new_labels == labels {
            break;
        }
        labels = new_labels;
        centroids = update_centroids(points, &labels, &centroids);
        trace.push(objective(points, &labels, &centroids));
    }
    LloydRun { labels, centroids, trace }
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance to the nearest chosen centre.
pub fn kmeans_pp_init<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centres = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centres.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centres[centres.len() - 1]));
        }
    }
    centres
}

/// Optimal partition of sorted 1-D values into `k` contiguous runs with
/// sizes in `[max(lo, 1), hi]`; returns the run means. Optimal constrained
/// 1-D clusterings are always contiguous in sorted order.
fn contiguous_partition_centroids(values: &[f64], k: usize, lo: usize, hi: usize) -> Option<Vec<f64>> {
    let n = values.len();
    let lo = lo.max(1);
    if k * lo > n || k.saturating_mul(hi) < n {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let centre = sorted[n / 2];
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for (i, v) in sorted.iter().enumerate() {
        let x = v - centre;
        s1[i + 1] = s1[i] + x;
        s2[i + 1] = s2[i] + x * x;
    }
    let sse = |a: usize, b: usize| {
        let m = (b - a) as f64;
        let s = s1[b] - s1[a];
        (s2[b] - s2[a] - s * s / m).max(0.0)
    };
    // cost[c][i]: best cost of the first i points in c runs
    let mut cost = vec![vec![f64::INFINITY; n + 1]; k + 1];
    let mut cut = vec![vec![0usize; n + 1]; k + 1];
    cost[0][0] = 0.0;
    for c in 1..=k {
        for i in (c * lo)..=n.min(c * hi) {
            for len in lo..=hi.min(i) {
                let prev = cost[c - 1][i - len];
                if prev.is_finite() {
                    let v = prev + sse(i - len, i);
                    if v < cost[c][i] {
                        cost[c][i] = v;
                        cut[c][i] = i - len;
                    }
                }
            }
        }
    }
    if !cost[k][n].is_finite() {
        return None;
    }
    let mut means = Vec::with_capacity(k);
    let mut end = n;
    for c in (1..=k).rev() {
        let start = cut[c][end];
        means.push(sorted[start..end].iter().sum::<f64>() / (end - start) as f64);
        end = start;
    }
    means.reverse();
    Some(means)
}

/// Result of clustering arbitrary points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointClustering {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub objective: f64,
}

/// Constrained K-means over equal-length points. Best objective over all
/// restarts, ties resolved by restart index; clusters are renumbered in
/// lexicographic centroid order.
pub fn constrained_kmeans_points(points: &[Vec<f64>], config: &ClusterConfig, seed: u64) -> Result<PointClustering, ClusterError> {
    config.check_feasible(points.len())?;
    let d = points.first().map_or(0, Vec::len);
    if d == 0 || points.iter().any(|p| p.len() != d || p.iter().any(|x| !x.is_finite())) {
        return Err(ClusterError::BadPoints);
    }
    let bounds = Some((config.min_size, config.max_size));

    let mut inits: Vec<Vec<Vec<f64>>> = (0..config.restarts.max(1))
        .map(|r| kmeans_pp_init(points, config.k, &mut rng_from(seed, &[0x4b4d, r as u64])))
        .collect();
    if d == 1 {
        let values: Vec<f64> = points.iter().map(|p| p[0]).collect();
        if let Some(means) = contiguous_partition_centroids(&values, config.k, config.min_size, config.max_size) {
            inits.push(means.into_iter().map(|m| vec![m]).collect());
        }
    }
    let runs: Vec<LloydRun> = inits.into_par_iter().map(|init| lloyd(points, init, bounds, config.max_iter)).collect();
    let best = runs
        .into_iter()
        .reduce(|best, run| if run.objective() < best.objective() { run } else { best })
        .expect("at least one restart");

    let mut order: Vec<usize> = (0..config.k).collect();
    order.sort_by(|&a, &b| {
        best.centroids[a]
            .iter()
            .zip(&best.centroids[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut rank = vec![0; config.k];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    let labels: Vec<usize> = best.labels.iter().map(|&l| rank[l]).collect();
    let centroids: Vec<Vec<f64>> = order.iter().map(|&old| best.centroids[old].clone()).collect();
    let objective = objective(points, &labels, &centroids);
    Ok(PointClustering { labels, centroids, objective })
}

/// Clusters cells by their scalar usage feature.
pub fn constrained_kmeans(values: &BTreeMap<String, f64>, config: &ClusterConfig, seed: u64) -> Result<GroupAssignment, ClusterError> {
    let points: Vec<Vec<f64>> = values.values().map(|&g| vec![g]).collect();
    let fit = constrained_kmeans_points(&points, config, seed)?;
    let mut sizes = vec![0; config.k];
    for &l in &fit.labels {
        sizes[l] += 1;
    }
    Ok(GroupAssignment {
        k: config.k,
        centroids: fit.centroids.iter().map(|c| c[0]).collect(),
        membership: values.keys().cloned().zip(fit.labels).collect(),
        sizes,
        min_size: config.min_size,
        max_size: config.max_size,
        objective: fit.objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn values(xs: &[f64]) -> BTreeMap<String, f64> {
        xs.iter().enumerate().map(|(i, &x)| (format!("c{i:03}"), x)).collect()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let v = values(&[1.0, 2.0, 6.0]);
        let cfg = ClusterConfig { k: 1, min_size: 0, max_size: 10, ..ClusterConfig::default() };
        let a = constrained_kmeans(&v, &cfg, 1).unwrap();
        assert_eq!(a.sizes, vec![3]);
        assert!((a.centroids[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn well_separated_pairs() {
        let v = values(&[1.0, 9.0, 1.0, 9.0, 1.0, 9.0]);
        let cfg = ClusterConfig { k: 2, min_size: 3, max_size: 3, ..ClusterConfig::default() };
        let a = constrained_kmeans(&v, &cfg, 4).unwrap();
        assert_eq!(a.centroids, vec![1.0, 9.0]);
        for (id, g) in &v {
            assert_eq!(a.membership[id], usize::from(*g > 5.0));
        }
    }

    #[test]
    fn infeasible_bounds_explain_arithmetic() {
        let v = values(&[1.0, 2.0, 3.0]);
        let cfg = ClusterConfig { k: 2, min_size: 2, max_size: 3, ..ClusterConfig::default() };
        let err = constrained_kmeans(&v, &cfg, 1).unwrap_err();
        assert_eq!(err, ClusterError::Infeasible { n: 3, k: 2, min_size: 2, max_size: 3 });
        assert!(err.to_string().contains("2 clusters × min_size 2 = 4 ≤ 3 cells"), "{err}");
    }

    #[test]
    fn min_size_prevents_tiny_clusters() {
        // one outlier would form its own cluster without the lower bound
        let v = values(&[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 10.0]);
        let cfg = ClusterConfig { k: 2, min_size: 3, max_size: 7, ..ClusterConfig::default() };
        let a = constrained_kmeans(&v, &cfg, 2).unwrap();
        assert!(a.sizes.iter().all(|&s| s >= 3), "{:?}", a.sizes);
    }

    #[test]
    fn assign_group_rules() {
        let a = GroupAssignment {
            k: 4,
            centroids: vec![1.0, 2.0, 3.0, 4.0],
            membership: BTreeMap::new(),
            sizes: vec![0; 4],
            min_size: 0,
            max_size: 0,
            objective: 0.0,
        };
        assert_eq!(assign_group(4.0, &a), 3);
        let tie = GroupAssignment { centroids: vec![2.0, 4.0], k: 2, ..a };
        assert_eq!(assign_group(3.0, &tie), 0);
    }

    #[test]
    fn dp_seed_finds_contiguous_optimum() {
        let means = contiguous_partition_centroids(&[5.0, 1.0, 1.2, 5.2, 9.0, 9.4], 3, 2, 2).unwrap();
        assert_eq!(means, vec![1.1, 5.1, 9.2]);
        assert!(contiguous_partition_centroids(&[1.0, 2.0], 3, 1, 1).is_none());
    }
}
