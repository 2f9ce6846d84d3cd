//! Balanced k-means over codebook embeddings, cluster tightness statistics
//! and the exact shortest-path ordering used as a small-N reference.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::codebook::{sq_dist, Codebook};
use crate::error::{Error, Result};
use crate::rearrange::PermutationMap;
use crate::rng::SplitMix64;

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_ORACLE_LIMIT: usize = 12;
/// Held-Karp keeps a `2^N x N` table; beyond this it is not worth running.
pub const ORACLE_HARD_LIMIT: usize = 18;

/// Result of [`balanced_kmeans`]. Serializes to the assignment JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub iterations_run: usize,
    pub converged: bool,
    /// `assignment[i]` is the cluster of embedding `i`.
    pub assignment: Vec<u32>,
    pub centroids: Vec<Vec<f64>>,
}

impl ClusterAssignment {
    /// Checks the structural invariants: `n * m == N`, every id below `n`,
    /// exactly `m` members per cluster, `n` finite centroid rows of one width.
    pub fn validate(&self) -> Result<()> {
        let size = self.assignment.len();
        if self.n == 0 || self.m == 0 || self.n.checked_mul(self.m) != Some(size) {
            return Err(Error::Unbalanced(format!(
                "n={} m={} does not cover {size} embeddings",
                self.n, self.m
            )));
        }
        let sizes = self.cluster_sizes()?;
        if let Some((j, &s)) = sizes.iter().enumerate().find(|(_, &s)| s != self.m) {
            return Err(Error::Unbalanced(format!(
                "cluster {j} has {s} members, expected {}",
                self.m
            )));
        }
        if self.centroids.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "{} centroids for {} clusters",
                self.centroids.len(),
                self.n
            )));
        }
        let dim = self.centroids[0].len();
        for (j, c) in self.centroids.iter().enumerate() {
            if c.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "centroid {j} has {} values, expected {dim}",
                    c.len()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("centroid {j}")));
            }
        }
        Ok(())
    }

    /// Member count per cluster; fails on ids `>= n`.
    pub fn cluster_sizes(&self) -> Result<Vec<usize>> {
        let mut sizes = vec![0usize; self.n];
        for &c in &self.assignment {
            let c = c as usize;
            if c >= self.n {
                return Err(Error::IndexOutOfRange {
                    index: c,
                    size: self.n,
                });
            }
            sizes[c] += 1;
        }
        Ok(sizes)
    }

    /// Parses and validates an assignment JSON document.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let asg: Self = serde_json::from_str(text)
            .map_err(|e| Error::parse(json_location(&e), e.to_string()))?;
        asg.validate()?;
        Ok(asg)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("assignment serializes")
    }

    /// Squared-distance k-means objective of this assignment and its centroids.
    pub fn objective(&self, cb: &Codebook) -> f64 {
        objective(cb, &self.assignment, &self.centroids)
    }
}

pub(crate) fn json_location(e: &serde_json::Error) -> String {
    format!("line {} column {}", e.line(), e.column())
}

/// Objective values around one centroid update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationTrace {
    /// New assignment measured against the centroids it was made with.
    pub before_update: f64,
    /// Same assignment against the recomputed centroids.
    pub after_update: f64,
}

/// Capacity-constrained k-means: every cluster ends with exactly `N / n`
/// members.
///
/// Each iteration sorts the embeddings by distance to their nearest
/// centroid, then walks that order assigning each embedding to the nearest
/// centroid that still has room (lower id wins ties), and finally moves
/// every centroid to the mean of its members. It stops once an assignment
/// repeats, the centroids stop moving, or `max_iters` is reached.
/// Initial centroids are `n` distinct rows drawn with [`SplitMix64`].
pub fn balanced_kmeans(
    cb: &Codebook,
    n: usize,
    max_iters: usize,
    seed: u64,
) -> Result<ClusterAssignment> {
    balanced_kmeans_traced(cb, n, max_iters, seed).map(|(a, _)| a)
}

/// [`balanced_kmeans`] that also returns one [`IterationTrace`] per iteration.
pub fn balanced_kmeans_traced(
    cb: &Codebook,
    n: usize,
    max_iters: usize,
    seed: u64,
) -> Result<(ClusterAssignment, Vec<IterationTrace>)> {
    let size = cb.len();
    if n == 0 || n > size {
        return Err(Error::InvalidArgument(format!(
            "cluster count {n} must be in 1..={size}"
        )));
    }
    if !size.is_multiple_of(n) {
        return Err(Error::InvalidArgument(format!(
            "cluster count {n} does not divide codebook size {size}"
        )));
    }
    if max_iters == 0 {
        return Err(Error::InvalidArgument(
            "max_iters must be at least 1".into(),
        ));
    }
    let m = size / n;
    let dim = cb.dim();

    let mut rng = SplitMix64::new(seed);
    let mut centroids: Vec<f64> = index::sample(&mut rng, size, n)
        .into_iter()
        .flat_map(|i| cb.row(i).iter().map(|&v| v as f64))
        .collect();

    let mut dists = vec![0.0f64; size * n];
    let mut previous: Option<Vec<u32>> = None;
    let mut assignment = vec![0u32; size];
    let mut trace = Vec::new();
    let mut iterations_run = 0;
    let mut converged = false;

    for iter in 1..=max_iters {
        for (i, row) in cb.rows().enumerate() {
            for (j, c) in centroids.chunks_exact(dim).enumerate() {
                dists[i * n + j] = sq_dist_mixed(row, c);
            }
        }
        let nearest: Vec<f64> = dists
            .chunks_exact(n)
            .map(|d| d.iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        let mut order: Vec<usize> = (0..size).collect();
        order.sort_by(|&a, &b| nearest[a].total_cmp(&nearest[b]).then(a.cmp(&b)));

        let mut counts = vec![0usize; n];
        for &i in &order {
            let row = &dists[i * n..(i + 1) * n];
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for (j, &d) in row.iter().enumerate() {
                if counts[j] < m && (best == usize::MAX || d < best_d) {
                    best = j;
                    best_d = d;
                }
            }
            counts[best] += 1;
            assignment[i] = best as u32;
        }

        let before_update = objective_flat(cb, &assignment, &centroids);
        let updated = cluster_means(cb, &assignment, n);
        let after_update = objective_flat(cb, &assignment, &updated);
        trace.push(IterationTrace {
            before_update,
            after_update,
        });

        let repeated = previous.as_deref() == Some(&assignment[..]);
        let settled = updated == centroids;
        centroids = updated;
        iterations_run = iter;
        if repeated || settled {
            converged = true;
            break;
        }
        previous = Some(assignment.clone());
    }

    Ok((
        ClusterAssignment {
            n,
            m,
            seed,
            iterations_run,
            converged,
            assignment,
            centroids: centroids.chunks_exact(dim).map(<[f64]>::to_vec).collect(),
        },
        trace,
    ))
}

fn sq_dist_mixed(row: &[f32], c: &[f64]) -> f64 {
    row.iter()
        .zip(c)
        .map(|(&a, &b)| {
            let t = a as f64 - b;
            t * t
        })
        .sum()
}

fn cluster_means(cb: &Codebook, assignment: &[u32], n: usize) -> Vec<f64> {
    let dim = cb.dim();
    let mut sums = vec![0.0f64; n * dim];
    let mut counts = vec![0usize; n];
    for (row, &c) in cb.rows().zip(assignment) {
        let c = c as usize;
        counts[c] += 1;
        for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row) {
            *s += v as f64;
        }
    }
    for (chunk, &count) in sums.chunks_exact_mut(dim).zip(&counts) {
        for s in chunk {
            *s /= count as f64;
        }
    }
    sums
}

fn objective_flat(cb: &Codebook, assignment: &[u32], centroids: &[f64]) -> f64 {
    let dim = cb.dim();
    cb.rows()
        .zip(assignment)
        .map(|(row, &c)| sq_dist_mixed(row, &centroids[c as usize * dim..(c as usize + 1) * dim]))
        .sum()
}

fn objective(cb: &Codebook, assignment: &[u32], centroids: &[Vec<f64>]) -> f64 {
    cb.rows()
        .zip(assignment)
        .map(|(row, &c)| sq_dist_mixed(row, &centroids[c as usize]))
        .sum()
}

/// Pairwise and member-to-centroid distances within one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterStat {
    pub size: usize,
    pub mean_dist: f64,
    pub closest_dist: f64,
    pub largest_dist: f64,
    pub inner_mse: f64,
}

/// Per-cluster statistics and their averages over all clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub mean_dist: f64,
    pub closest_dist: f64,
    pub largest_dist: f64,
    /// Mean Euclidean distance from members to their cluster mean.
    pub inner_mse: f64,
    pub per_cluster: Vec<ClusterStat>,
}

/// Intra-cluster L2 statistics. Centroids are recomputed as member means,
/// so any assignment covering the codebook is accepted. Clusters with fewer
/// than two members report 0 for the pairwise statistics.
pub fn intra_cluster_stats(cb: &Codebook, asg: &ClusterAssignment) -> Result<ClusterStats> {
    if asg.assignment.len() != cb.len() {
        return Err(Error::DimensionMismatch(format!(
            "assignment covers {} embeddings, codebook has {}",
            asg.assignment.len(),
            cb.len()
        )));
    }
    let sizes = asg.cluster_sizes()?;
    let mut members: Vec<Vec<usize>> = sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
    for (i, &c) in asg.assignment.iter().enumerate() {
        members[c as usize].push(i);
    }
    let means = cluster_means(cb, &asg.assignment, asg.n);
    let dim = cb.dim();

    let per_cluster: Vec<ClusterStat> = members
        .iter()
        .enumerate()
        .map(|(j, idx)| {
            let centroid = &means[j * dim..(j + 1) * dim];
            let inner_mse = if idx.is_empty() {
                0.0
            } else {
                idx.iter()
                    .map(|&i| sq_dist_mixed(cb.row(i), centroid).sqrt())
                    .sum::<f64>()
                    / idx.len() as f64
            };
            let mut sum = 0.0;
            let mut pairs = 0usize;
            let mut closest = f64::INFINITY;
            let mut largest = 0.0f64;
            for (a, &p) in idx.iter().enumerate() {
                for &q in &idx[a + 1..] {
                    let d = sq_dist(cb.row(p), cb.row(q)).sqrt();
                    sum += d;
                    pairs += 1;
                    closest = closest.min(d);
                    largest = largest.max(d);
                }
            }
            let (mean_dist, closest_dist) = if pairs == 0 {
                (0.0, 0.0)
            } else {
                (sum / pairs as f64, closest)
            };
            ClusterStat {
                size: idx.len(),
                mean_dist,
                closest_dist,
                largest_dist: largest,
                inner_mse,
            }
        })
        .collect();

    let avg = |f: fn(&ClusterStat) -> f64| per_cluster.iter().map(f).sum::<f64>() / asg.n as f64;
    Ok(ClusterStats {
        mean_dist: avg(|s| s.mean_dist),
        closest_dist: avg(|s| s.closest_dist),
        largest_dist: avg(|s| s.largest_dist),
        inner_mse: avg(|s| s.inner_mse),
        per_cluster,
    })
}

/// Sum of distances between embeddings at consecutive positions after
/// rearranging the codebook by `perm`.
pub fn adjacency_cost(cb: &Codebook, perm: &PermutationMap) -> Result<f64> {
    if perm.len() != cb.len() {
        return Err(Error::InvalidPermutation(format!(
            "permutation of size {} for codebook of size {}",
            perm.len(),
            cb.len()
        )));
    }
    Ok(path_cost(cb, perm.inverse()))
}

fn path_cost(cb: &Codebook, order: &[u32]) -> f64 {
    order
        .windows(2)
        .map(|w| cb.distance(w[0] as usize, w[1] as usize))
        .sum()
}

/// Exact minimum-[`adjacency_cost`] ordering by Held-Karp dynamic
/// programming over vertex subsets, `O(2^N N^2)`.
///
/// Among orderings whose cost is within rounding of the optimum the
/// lexicographically smallest (as a sequence of old indices by position)
/// is returned.
pub fn hamiltonian_oracle(cb: &Codebook, limit: usize) -> Result<PermutationMap> {
    let size = cb.len();
    let limit = limit.min(ORACLE_HARD_LIMIT);
    if size > limit {
        return Err(Error::LimitExceeded { size, limit });
    }
    let mut w = vec![0.0f64; size * size];
    for i in 0..size {
        for j in 0..size {
            w[i * size + j] = cb.distance(i, j);
        }
    }

    // rest[mask * size + j]: cheapest way to visit every vertex outside
    // `mask`, starting from `j`, where `mask` already contains `j`.
    let full = (1usize << size) - 1;
    let mut rest = vec![f64::INFINITY; (full + 1) * size];
    for j in 0..size {
        rest[full * size + j] = 0.0;
    }
    for mask in (1..full).rev() {
        for j in (0..size).filter(|&j| mask & (1 << j) != 0) {
            let mut best = f64::INFINITY;
            for k in (0..size).filter(|&k| mask & (1 << k) == 0) {
                best = best.min(w[j * size + k] + rest[(mask | 1 << k) * size + k]);
            }
            rest[mask * size + j] = best;
        }
    }

    let optimum = (0..size)
        .map(|j| rest[(1 << j) * size + j])
        .fold(f64::INFINITY, f64::min);
    let tol = |v: f64| v + 1e-9 * v.abs().max(1.0);

    let start = (0..size)
        .find(|&j| rest[(1 << j) * size + j] <= tol(optimum))
        .expect("some start attains the optimum");
    let mut order = vec![start as u32];
    let mut mask = 1usize << start;
    let mut current = start;
    let mut remaining = optimum;
    while mask != full {
        let next = (0..size)
            .filter(|&k| mask & (1 << k) == 0)
            .find(|&k| w[current * size + k] + rest[(mask | 1 << k) * size + k] <= tol(remaining))
            .expect("some continuation attains the optimum");
        remaining -= w[current * size + next];
        mask |= 1 << next;
        current = next;
        order.push(next as u32);
    }
    PermutationMap::from_order(order)
}
