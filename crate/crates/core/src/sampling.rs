//! Inference-time transforms: classifier-free guidance, temperature,
//! top-k and top-p filtering, and seeded categorical draws.
//!
//! [`sample_next`] applies them in a fixed order:
//! guidance -> temperature -> top-k -> top-p -> draw.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{softmax, ProbVector};
use crate::rng::SplitMix64;

/// Where guidance mixes the conditional and unconditional outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceSpace {
    /// Pre-softmax scores.
    #[default]
    Logit,
    /// Softmaxed distributions; negative mixtures are clipped to zero.
    Prob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub cfg_scale: f64,
    pub temperature: f64,
    /// 0 disables top-k.
    pub top_k: usize,
    pub top_p: f64,
    pub seed: u64,
    #[serde(default)]
    pub cfg_space: GuidanceSpace,
}

impl Default for SamplerConfig {
    /// Neutral settings: temperature 1, top-k off, top-p 1. The guidance
    /// scale is model-specific and defaults to 0 here.
    fn default() -> Self {
        Self {
            cfg_scale: 0.0,
            temperature: 1.0,
            top_k: 0,
            top_p: 1.0,
            seed: 0,
            cfg_space: GuidanceSpace::Logit,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfg_scale >= 0.0 && self.cfg_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "guidance scale must be finite and >= 0, got {}",
                self.cfg_scale
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "top-p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        Ok(())
    }
}

/// `(1 + w) * cond - w * uncond`, evaluated as `cond + w * (cond - uncond)`
/// so that `w = 0` and `cond == uncond` both return `cond` exactly.
pub fn cfg_combine(cond: &[f64], uncond: &[f64], w: f64) -> Result<Vec<f64>> {
    if cond.len() != uncond.len() {
        return Err(Error::DimensionMismatch(format!(
            "conditional length {} vs unconditional length {}",
            cond.len(),
            uncond.len()
        )));
    }
    Ok(cond
        .iter()
        .zip(uncond)
        .map(|(&c, &u)| c + w * (c - u))
        .collect())
}

/// Softmax of `logits / temperature`.
pub fn apply_temperature(logits: &[f64], temperature: f64) -> Result<ProbVector> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    let scaled: Vec<f64> = logits.iter().map(|&l| l / temperature).collect();
    softmax(&scaled)
}

/// Indices sorted by probability, highest first, lower index first on ties.
fn descending_order(p: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    order
}

fn keep_only(p: &[f64], keep: &[usize]) -> ProbVector {
    let mut out = vec![0.0; p.len()];
    let mass: f64 = keep.iter().map(|&i| p[i]).sum();
    for &i in keep {
        out[i] = p[i] / mass;
    }
    ProbVector::from_raw(out)
}

/// Keeps the `k` most probable tokens and renormalizes. `k = 0` and
/// `k >= N` leave the input untouched.
pub fn top_k_filter(p: &ProbVector, k: usize) -> ProbVector {
    if k == 0 || k >= p.len() {
        return p.clone();
    }
    let order = descending_order(p.as_slice());
    keep_only(p.as_slice(), &order[..k])
}

/// Keeps the shortest most-probable prefix whose mass reaches `top_p`
/// (the crossing token included) and renormalizes.
pub fn top_p_filter(p: &ProbVector, top_p: f64) -> Result<ProbVector> {
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "top-p must lie in (0, 1], got {top_p}"
        )));
    }
    if top_p == 1.0 {
        return Ok(p.clone());
    }
    let probs = p.as_slice();
    let order = descending_order(probs);
    let mut mass = 0.0;
    let mut keep = order.len();
    for (rank, &i) in order.iter().enumerate() {
        mass += probs[i];
        if mass >= top_p {
            keep = rank + 1;
            break;
        }
    }
    Ok(keep_only(probs, &order[..keep]))
}

/// Inverse-CDF draw over the vector order.
pub fn sample_categorical(p: &ProbVector, rng: &mut SplitMix64) -> usize {
    let probs = p.as_slice();
    let u = rng.next_f64();
    let mut cdf = 0.0;
    for (i, &pi) in probs.iter().enumerate() {
        cdf += pi;
        if u < cdf {
            return i;
        }
    }
    // Rounding left the CDF just below 1: take the last supported token.
    probs.iter().rposition(|&pi| pi > 0.0).unwrap_or(0)
}

/// The filtered distribution [`sample_next`] draws from.
pub fn next_token_distribution(
    cond: &[f64],
    uncond: &[f64],
    cfg: &SamplerConfig,
) -> Result<ProbVector> {
    cfg.validate()?;
    let probs = match cfg.cfg_space {
        GuidanceSpace::Logit => {
            apply_temperature(&cfg_combine(cond, uncond, cfg.cfg_scale)?, cfg.temperature)?
        }
        GuidanceSpace::Prob => {
            let pc = softmax(cond)?;
            let pu = softmax(uncond)?;
            let mixed: Vec<f64> = cfg_combine(pc.as_slice(), pu.as_slice(), cfg.cfg_scale)?
                .into_iter()
                .map(|v| v.max(0.0))
                .collect();
            if cfg.temperature == 1.0 {
                ProbVector::from_weights(mixed)?
            } else {
                let inv = 1.0 / cfg.temperature;
                let max = mixed.iter().copied().fold(0.0, f64::max);
                ProbVector::from_weights(mixed.iter().map(|&v| (v / max).powf(inv)).collect())?
            }
        }
    };
    top_p_filter(&top_k_filter(&probs, cfg.top_k), cfg.top_p)
}

/// Full pipeline for one token.
pub fn sample_next(
    cond: &[f64],
    uncond: &[f64],
    cfg: &SamplerConfig,
    rng: &mut SplitMix64,
) -> Result<usize> {
    Ok(sample_categorical(
        &next_token_distribution(cond, uncond, cfg)?,
        rng,
    ))
}
