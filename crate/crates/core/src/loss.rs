//! Token- and cluster-oriented cross-entropy with hand-derived gradients.
//!
//! The cluster distribution aggregates exponentials of token
//! *probabilities*, not logits:
//!
//! ```text
//! P_C[j] = sum_{i in cluster j} exp(p_i) / sum_i exp(p_i)
//! ```
//!
//! Since every `p_i` lies in `[0, 1]` the terms lie in `[1, e]`, so
//! `P_C` is much flatter than the summed token mass would be. Clusters are
//! contiguous index ranges `[j*m, (j+1)*m)` of a rearranged codebook.
//!
//! All math is `f64`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rearrange::cluster_label;
use crate::rng::SplitMix64;

/// Floor applied before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-300;
/// Finite-difference step used by [`gradcheck`].
pub const FD_STEP: f64 = 1e-5;
/// Maximum relative gradient error accepted by [`gradcheck`].
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// A normalized distribution over tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Accepts nonnegative values summing to 1 within `1e-9`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty probability vector".into()));
        }
        if values.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(
                "probabilities must lie in [0, 1]".into(),
            ));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self(values))
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    /// Normalizes nonnegative weights; fails if they are all zero.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidArgument(
                "weights must be nonnegative with a positive finite sum".into(),
            ));
        }
        Ok(Self(weights.into_iter().map(|w| w / total).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A normalized distribution over clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterProbVector(Vec<f64>);

impl ClusterProbVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// The pieces of `total = tce + lambda * cce`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub tce: f64,
    pub cce: f64,
    pub total: f64,
    pub lambda: f64,
    /// A probability fell below [`LOG_FLOOR`] and was clamped.
    pub degenerate: bool,
}

fn check_finite(logits: &[f64]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::InvalidArgument("empty logit vector".into()));
    }
    match logits.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("logit {i}"))),
        None => Ok(()),
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<ProbVector> {
    check_finite(logits)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(ProbVector(exps.into_iter().map(|e| e / total).collect()))
}

fn neg_log(p: f64) -> (f64, bool) {
    if p < LOG_FLOOR {
        (-LOG_FLOOR.ln(), true)
    } else {
        (-p.ln(), false)
    }
}

/// `-log probs[target]`, clamped at [`LOG_FLOOR`].
pub fn token_ce(probs: &ProbVector, target: usize) -> Result<f64> {
    let p = *probs.0.get(target).ok_or(Error::IndexOutOfRange {
        index: target,
        size: probs.len(),
    })?;
    Ok(neg_log(p).0)
}

fn check_layout(len: usize, n: usize, m: usize) -> Result<()> {
    if n == 0 || m == 0 || n.checked_mul(m) != Some(len) {
        return Err(Error::DimensionMismatch(format!(
            "n={n} clusters of size m={m} do not cover {len} tokens"
        )));
    }
    Ok(())
}

/// Per-cluster sums of `exp(p_i)` and their total.
fn cluster_exp_sums(probs: &[f64], m: usize) -> (Vec<f64>, f64) {
    let sums: Vec<f64> = probs
        .chunks_exact(m)
        .map(|c| c.iter().map(|p| p.exp()).sum())
        .collect();
    let total = sums.iter().sum();
    (sums, total)
}

/// Cluster distribution from token probabilities (see module docs).
pub fn cluster_probs(probs: &ProbVector, n: usize, m: usize) -> Result<ClusterProbVector> {
    check_layout(probs.len(), n, m)?;
    let (sums, total) = cluster_exp_sums(&probs.0, m);
    Ok(ClusterProbVector(
        sums.into_iter().map(|s| s / total).collect(),
    ))
}

/// `-log P_C[target_cluster]`.
pub fn cluster_ce(probs: &ProbVector, target_cluster: usize, n: usize, m: usize) -> Result<f64> {
    let pc = cluster_probs(probs, n, m)?;
    let p = *pc.0.get(target_cluster).ok_or(Error::IndexOutOfRange {
        index: target_cluster,
        size: n,
    })?;
    Ok(neg_log(p).0)
}

fn check_loss_args(logits: &[f64], target: usize, lambda: f64, n: usize, m: usize) -> Result<()> {
    check_finite(logits)?;
    check_layout(logits.len(), n, m)?;
    if target >= logits.len() {
        return Err(Error::IndexOutOfRange {
            index: target,
            size: logits.len(),
        });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and nonnegative, got {lambda}"
        )));
    }
    Ok(())
}

/// `tce + lambda * cce` for one target token, starting from logits.
pub fn combined_loss(
    logits: &[f64],
    target: usize,
    lambda: f64,
    n: usize,
    m: usize,
) -> Result<LossBreakdown> {
    check_loss_args(logits, target, lambda, n, m)?;
    let probs = softmax(logits)?;
    let (tce, tce_clamped) = neg_log(probs.0[target]);
    let target_cluster = cluster_label(target, m)?;
    let (sums, total) = cluster_exp_sums(&probs.0, m);
    let (cce, cce_clamped) = neg_log(sums[target_cluster] / total);
    Ok(LossBreakdown {
        tce,
        cce,
        total: tce + lambda * cce,
        lambda,
        degenerate: tce_clamped || cce_clamped,
    })
}

/// Analytic gradient of [`combined_loss`]'s total with respect to logits.
pub fn combined_loss_grad(
    logits: &[f64],
    target: usize,
    lambda: f64,
    n: usize,
    m: usize,
) -> Result<Vec<f64>> {
    check_loss_args(logits, target, lambda, n, m)?;
    let probs = softmax(logits)?.0;
    Ok(grad_from_probs(&probs, target, lambda, m))
}

/// Loss and gradient in one pass, for training loops.
pub(crate) fn loss_and_grad(
    logits: &[f64],
    target: usize,
    lambda: f64,
    m: usize,
) -> (LossBreakdown, Vec<f64>) {
    let probs = softmax(logits).expect("finite logits").0;
    let (tce, tce_clamped) = neg_log(probs[target]);
    let (sums, total) = cluster_exp_sums(&probs, m);
    let (cce, cce_clamped) = neg_log(sums[target / m] / total);
    let grad = grad_from_probs(&probs, target, lambda, m);
    (
        LossBreakdown {
            tce,
            cce,
            total: tce + lambda * cce,
            lambda,
            degenerate: tce_clamped || cce_clamped,
        },
        grad,
    )
}

fn grad_from_probs(probs: &[f64], target: usize, lambda: f64, m: usize) -> Vec<f64> {
    let mut grad: Vec<f64> = probs.to_vec();
    grad[target] -= 1.0;
    if lambda == 0.0 {
        return grad;
    }
    // d cce / d p_i = exp(p_i) / S - [i in target cluster] exp(p_i) / S_c,
    // then through the softmax Jacobian: d/dl_k = p_k (g_k - sum_i p_i g_i).
    let target_cluster = target / m;
    let (sums, total) = cluster_exp_sums(probs, m);
    let in_cluster = sums[target_cluster];
    let dp: Vec<f64> = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let e = p.exp();
            if i / m == target_cluster {
                e / total - e / in_cluster
            } else {
                e / total
            }
        })
        .collect();
    let mean: f64 = probs.iter().zip(&dp).map(|(p, g)| p * g).sum();
    for ((g, &p), &d) in grad.iter_mut().zip(probs).zip(&dp) {
        *g += lambda * p * (d - mean);
    }
    grad
}

/// Maximum relative error between the analytic gradient and central
/// differences with step `h`:
/// `max_k |a_k - fd_k| / (|a_k| + 1e-12)`.
pub fn finite_diff_check(
    logits: &[f64],
    target: usize,
    lambda: f64,
    n: usize,
    m: usize,
    h: f64,
) -> Result<f64> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {h}"
        )));
    }
    let analytic = combined_loss_grad(logits, target, lambda, n, m)?;
    let mut probe = logits.to_vec();
    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let orig = probe[k];
        probe[k] = orig + h;
        let up = combined_loss(&probe, target, lambda, n, m)?.total;
        probe[k] = orig - h;
        let down = combined_loss(&probe, target, lambda, n, m)?.total;
        probe[k] = orig;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((a - fd).abs() / (a.abs() + 1e-12));
    }
    Ok(worst)
}

/// One randomly drawn loss instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GradInstance {
    pub logits: Vec<f64>,
    pub target: usize,
    pub lambda: f64,
    pub n: usize,
    pub m: usize,
}

impl GradInstance {
    /// `N = n * m` in `2..=64`, logits ~ N(0, 1.5^2),
    /// `lambda` in {0, 0.5, 1, 1.5}.
    pub fn random(rng: &mut SplitMix64) -> Self {
        const SIZES: [usize; 4] = [1, 2, 4, 8];
        const LAMBDAS: [f64; 4] = [0.0, 0.5, 1.0, 1.5];
        let (n, m) = loop {
            let n = SIZES[rng.random_range(0..SIZES.len())];
            let m = SIZES[rng.random_range(0..SIZES.len())];
            if n * m >= 2 {
                break (n, m);
            }
        };
        let logits = (0..n * m)
            .map(|_| 1.5 * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        Self {
            logits,
            target: rng.random_range(0..n * m),
            lambda: LAMBDAS[rng.random_range(0..LAMBDAS.len())],
            n,
            m,
        }
    }

    pub fn rel_err(&self, h: f64) -> Result<f64> {
        finite_diff_check(&self.logits, self.target, self.lambda, self.n, self.m, h)
    }
}

/// Summary printed by the `gradcheck` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub instances: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

/// Runs [`finite_diff_check`] on `instances` random [`GradInstance`]s.
pub fn gradcheck(seed: u64, instances: usize) -> Result<GradcheckReport> {
    let mut rng = SplitMix64::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        worst = worst.max(GradInstance::random(&mut rng).rel_err(FD_STEP)?);
    }
    Ok(GradcheckReport {
        instances,
        max_rel_err: worst,
        pass: worst < GRAD_TOLERANCE,
    })
}
