//! Desk-scale experiment: does adding the cluster loss raise cluster-level
//! next-token accuracy?
//!
//! Data are class-conditional token sequences obtained by quantizing noisy
//! smooth trajectories against a random codebook. The codebook is clustered
//! and rearranged, tokens are re-indexed, and a tiny next-token model is
//! trained once per loss weight from the same initialization.
//!
//! The model predicts token `t` of a sequence from the mean embedding of
//! tokens `0..t` concatenated with a class embedding, followed by a linear
//! projection to `N` logits. Gradients are written out by hand.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clustering::{balanced_kmeans, DEFAULT_MAX_ITERS};
use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::loss::{self, LossBreakdown};
use crate::rearrange::{apply_permutation, build_permutation, remap_stream};
use crate::rng::SplitMix64;
use crate::tokens::TokenSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticDatasetConfig {
    pub codebook_seed: u64,
    pub data_seed: u64,
    pub num_classes: usize,
    pub sequences_per_class: usize,
    pub sequence_length: usize,
    pub codebook_size: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    pub n_clusters: usize,
}

impl Default for SyntheticDatasetConfig {
    fn default() -> Self {
        Self {
            codebook_seed: 0,
            data_seed: 0,
            num_classes: 8,
            sequences_per_class: 64,
            sequence_length: 32,
            codebook_size: 256,
            dim: 8,
            noise_sigma: 0.6,
            n_clusters: 16,
        }
    }
}

impl SyntheticDatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_classes", self.num_classes),
            ("sequences_per_class", self.sequences_per_class),
            ("codebook_size", self.codebook_size),
            ("dim", self.dim),
            ("n_clusters", self.n_clusters),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
        }
        if self.sequence_length < 2 {
            return Err(Error::InvalidArgument(
                "sequence_length must be at least 2".into(),
            ));
        }
        if !self.codebook_size.is_multiple_of(self.n_clusters) {
            return Err(Error::InvalidArgument(format!(
                "n_clusters {} does not divide codebook_size {}",
                self.n_clusters, self.codebook_size
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }

    pub fn cluster_size(&self) -> usize {
        self.codebook_size / self.n_clusters
    }
}

/// Number of low-frequency harmonics in each class trajectory.
const HARMONICS: usize = 2;
const TRAJECTORY_SCALE: f64 = 0.8;

/// Codebook rows are standard normal draws from `codebook_seed`. Each class
/// gets a smooth closed path `x(t) = a + sum_f (b_f cos(2 pi f t/L) +
/// c_f sin(2 pi f t/L))` drawn from `data_seed`; every sequence adds
/// independent N(0, noise_sigma^2) noise per step and quantizes each point
/// to its nearest codebook row. Sequences are grouped by class, in order.
pub fn gen_synthetic_dataset(
    cfg: &SyntheticDatasetConfig,
) -> Result<(Codebook, Vec<TokenSequence>)> {
    cfg.validate()?;
    let mut cb_rng = SplitMix64::new(cfg.codebook_seed);
    let entries: Vec<f32> = (0..cfg.codebook_size * cfg.dim)
        .map(|_| cb_rng.sample::<f64, _>(StandardNormal) as f32)
        .collect();
    let codebook = Codebook::new(entries, cfg.codebook_size, cfg.dim)?;

    let mut rng = SplitMix64::new(cfg.data_seed);
    let len = cfg.sequence_length;
    let mut sequences = Vec::with_capacity(cfg.num_classes * cfg.sequences_per_class);
    let mut point = vec![0.0f64; cfg.dim];
    for class_id in 0..cfg.num_classes {
        let mut coeffs = vec![0.0f64; cfg.dim * (1 + 2 * HARMONICS)];
        for (k, c) in coeffs.iter_mut().enumerate() {
            let harmonic = k / cfg.dim;
            let decay = if harmonic == 0 {
                1.0
            } else {
                (harmonic + 1) as f64 / 2.0
            };
            *c = TRAJECTORY_SCALE * rng.sample::<f64, _>(StandardNormal) / decay;
        }
        let path: Vec<Vec<f64>> = (0..len)
            .map(|t| {
                let phase = std::f64::consts::TAU * t as f64 / len as f64;
                (0..cfg.dim)
                    .map(|c| {
                        let mut v = coeffs[c];
                        for f in 1..=HARMONICS {
                            let cos = coeffs[(2 * f - 1) * cfg.dim + c];
                            let sin = coeffs[2 * f * cfg.dim + c];
                            v += cos * (f as f64 * phase).cos() + sin * (f as f64 * phase).sin();
                        }
                        v
                    })
                    .collect()
            })
            .collect();
        for _ in 0..cfg.sequences_per_class {
            let tokens = path
                .iter()
                .map(|p| {
                    for (x, &base) in point.iter_mut().zip(p) {
                        *x = base + cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal);
                    }
                    codebook.nearest(&point) as u32
                })
                .collect();
            sequences.push(TokenSequence {
                class_id: class_id as u32,
                tokens,
            });
        }
    }
    Ok((codebook, sequences))
}

/// Mean-pooled-context next-token predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyARModel {
    vocab: usize,
    num_classes: usize,
    dim: usize,
    /// `vocab x dim`
    pub token_emb: Vec<f64>,
    /// `(num_classes + 1) x dim`; the last row is the null class.
    pub class_emb: Vec<f64>,
    /// `vocab x 2*dim`; logit `k` is row `k` dotted with the context.
    pub proj: Vec<f64>,
}

impl TinyARModel {
    /// All parameters N(0, init_scale^2) from `seed`.
    pub fn new(vocab: usize, num_classes: usize, dim: usize, init_scale: f64, seed: u64) -> Self {
        let mut model = Self::zeros(vocab, num_classes, dim);
        let mut rng = SplitMix64::new(seed);
        for p in model
            .token_emb
            .iter_mut()
            .chain(model.class_emb.iter_mut())
            .chain(model.proj.iter_mut())
        {
            *p = init_scale * rng.sample::<f64, _>(StandardNormal);
        }
        model
    }

    pub fn zeros(vocab: usize, num_classes: usize, dim: usize) -> Self {
        Self {
            vocab,
            num_classes,
            dim,
            token_emb: vec![0.0; vocab * dim],
            class_emb: vec![0.0; (num_classes + 1) * dim],
            proj: vec![0.0; vocab * 2 * dim],
        }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Class id of the unconditional branch.
    pub fn null_class(&self) -> usize {
        self.num_classes
    }

    fn check_inputs(&self, class_id: usize, tokens: &[u32]) -> Result<()> {
        if class_id > self.num_classes {
            return Err(Error::IndexOutOfRange {
                index: class_id,
                size: self.num_classes + 1,
            });
        }
        crate::tokens::check_range(tokens, self.vocab)
    }

    fn project(&self, context: &[f64], logits: &mut [f64]) {
        let width = 2 * self.dim;
        for (l, row) in logits.iter_mut().zip(self.proj.chunks_exact(width)) {
            *l = row.iter().zip(context).map(|(a, b)| a * b).sum();
        }
    }

    fn class_row(&self, class_id: usize) -> &[f64] {
        &self.class_emb[class_id * self.dim..(class_id + 1) * self.dim]
    }

    fn token_row(&self, t: u32) -> &[f64] {
        let t = t as usize;
        &self.token_emb[t * self.dim..(t + 1) * self.dim]
    }

    /// Logits for the token following `prefix`. An empty prefix contributes
    /// a zero token context.
    pub fn forward(&self, class_id: usize, prefix: &[u32]) -> Result<Vec<f64>> {
        self.check_inputs(class_id, prefix)?;
        let mut context = vec![0.0; 2 * self.dim];
        for &t in prefix {
            for (c, &e) in context.iter_mut().zip(self.token_row(t)) {
                *c += e;
            }
        }
        if !prefix.is_empty() {
            let inv = 1.0 / prefix.len() as f64;
            context[..self.dim].iter_mut().for_each(|c| *c *= inv);
        }
        context[self.dim..].copy_from_slice(self.class_row(class_id));
        let mut logits = vec![0.0; self.vocab];
        self.project(&context, &mut logits);
        Ok(logits)
    }

    /// Teacher-forced logits for positions `1..len`, one vector per target.
    pub fn sequence_logits(&self, seq: &TokenSequence) -> Result<Vec<Vec<f64>>> {
        self.check_inputs(seq.class_id as usize, &seq.tokens)?;
        let mut out = Vec::with_capacity(seq.tokens.len().saturating_sub(1));
        let mut context = vec![0.0; 2 * self.dim];
        context[self.dim..].copy_from_slice(self.class_row(seq.class_id as usize));
        let mut sum = vec![0.0; self.dim];
        for (t, &tok) in seq
            .tokens
            .iter()
            .enumerate()
            .take(seq.tokens.len().saturating_sub(1))
        {
            for (s, &e) in sum.iter_mut().zip(self.token_row(tok)) {
                *s += e;
            }
            let inv = 1.0 / (t + 1) as f64;
            for (c, &s) in context.iter_mut().zip(&sum) {
                *c = s * inv;
            }
            let mut logits = vec![0.0; self.vocab];
            self.project(&context, &mut logits);
            out.push(logits);
        }
        Ok(out)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.token_emb
            .iter_mut()
            .chain(self.class_emb.iter_mut())
            .chain(self.proj.iter_mut())
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.token_emb
            .iter()
            .chain(self.class_emb.iter())
            .chain(self.proj.iter())
    }

    pub fn parameter_count(&self) -> usize {
        self.token_emb.len() + self.class_emb.len() + self.proj.len()
    }

    fn sgd_step(&mut self, grads: &TinyARModel, lr: f64) {
        for (p, g) in self.params_mut().zip(grads.params()) {
            *p -= lr * g;
        }
    }
}

/// Mean combined loss over the `len - 1` teacher-forced positions of `seq`
/// and its gradient with respect to every model parameter (returned in a
/// model-shaped container).
pub fn sequence_loss_and_grad(
    model: &TinyARModel,
    seq: &TokenSequence,
    lambda: f64,
    m: usize,
) -> Result<(LossBreakdown, TinyARModel)> {
    let tokens = &seq.tokens;
    if tokens.len() < 2 {
        return Err(Error::InvalidArgument(
            "sequence needs at least 2 tokens".into(),
        ));
    }
    model.check_inputs(seq.class_id as usize, tokens)?;
    let dim = model.dim;
    let width = 2 * dim;
    let steps = tokens.len() - 1;
    let scale = 1.0 / steps as f64;

    let mut grads = TinyARModel::zeros(model.vocab, model.num_classes, dim);
    let class = seq.class_id as usize;
    let mut context = vec![0.0; width];
    context[dim..].copy_from_slice(model.class_row(class));
    let mut sum = vec![0.0; dim];
    // d loss / d (mean token context) at each position, pre-divided by the
    // prefix length so it can be spread over the prefix.
    let mut spread = vec![0.0; steps * dim];
    let mut logits = vec![0.0; model.vocab];
    let mut dctx = vec![0.0; width];
    let mut total = LossBreakdown {
        tce: 0.0,
        cce: 0.0,
        total: 0.0,
        lambda,
        degenerate: false,
    };

    for t in 0..steps {
        for (s, &e) in sum.iter_mut().zip(model.token_row(tokens[t])) {
            *s += e;
        }
        let inv = 1.0 / (t + 1) as f64;
        for (c, &s) in context.iter_mut().zip(&sum) {
            *c = s * inv;
        }
        model.project(&context, &mut logits);
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Diverged(format!(
                "non-finite logits at position {}",
                t + 1
            )));
        }
        let (b, g) = loss::loss_and_grad(&logits, tokens[t + 1] as usize, lambda, m);
        total.tce += b.tce * scale;
        total.cce += b.cce * scale;
        total.total += b.total * scale;
        total.degenerate |= b.degenerate;

        dctx.iter_mut().for_each(|d| *d = 0.0);
        for ((gk, wrow), grow) in g
            .iter()
            .zip(model.proj.chunks_exact(width))
            .zip(grads.proj.chunks_exact_mut(width))
        {
            let gk = gk * scale;
            for ((d, &w), (gw, &c)) in dctx.iter_mut().zip(wrow).zip(grow.iter_mut().zip(&context))
            {
                *d += gk * w;
                *gw += gk * c;
            }
        }
        for (gc, &d) in grads.class_emb[class * dim..(class + 1) * dim]
            .iter_mut()
            .zip(&dctx[dim..])
        {
            *gc += d;
        }
        for (s, &d) in spread[t * dim..(t + 1) * dim].iter_mut().zip(&dctx[..dim]) {
            *s = d * inv;
        }
    }

    // Token j feeds every position t >= j: accumulate suffix sums.
    let mut acc = vec![0.0; dim];
    for j in (0..steps).rev() {
        for (a, &s) in acc.iter_mut().zip(&spread[j * dim..(j + 1) * dim]) {
            *a += s;
        }
        let tok = tokens[j] as usize;
        for (g, &a) in grads.token_emb[tok * dim..(tok + 1) * dim]
            .iter_mut()
            .zip(&acc)
        {
            *g += a;
        }
    }
    Ok((total, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub epochs: usize,
    pub lr: f64,
    pub embed_dim: usize,
    pub init_scale: f64,
    /// Seeds model initialization and the per-epoch shuffles.
    pub seed: u64,
    pub kmeans_max_iters: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            epochs: 60,
            lr: 1.0,
            embed_dim: 16,
            init_scale: 0.1,
            seed: 0,
            kmeans_max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: TinyARModel,
    /// Mean per-sequence total loss in each epoch, measured before each step.
    pub loss_curve: Vec<f64>,
}

/// Per-sequence SGD on `tce + lambda * cce`. The step size decays linearly
/// from `lr` in the first epoch toward zero in the last, and the visiting
/// order is reshuffled every epoch from `seed`.
#[allow(clippy::too_many_arguments)]
pub fn train(
    mut model: TinyARModel,
    dataset: &[TokenSequence],
    lambda: f64,
    n: usize,
    m: usize,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<TrainOutcome> {
    if n.checked_mul(m) != Some(model.vocab) {
        return Err(Error::DimensionMismatch(format!(
            "n={n} clusters of size m={m} do not cover vocabulary {}",
            model.vocab
        )));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be >= 0, got {lr}"
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut loss_curve = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        // summed in dataset order so the curve does not depend on the shuffle
        let mut losses = vec![0.0; dataset.len()];
        // linear decay to zero over the run
        let step = lr * (1.0 - epoch as f64 / epochs as f64);
        for &i in &order {
            let (b, g) = sequence_loss_and_grad(&model, &dataset[i], lambda, m)?;
            if !b.total.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss at epoch {epoch}, sequence {i}"
                )));
            }
            losses[i] = b.total;
            model.sgd_step(&g, step);
        }
        let mean = losses.iter().sum::<f64>() / dataset.len() as f64;
        if model.params().any(|p| !p.is_finite()) {
            return Err(Error::Diverged(format!(
                "non-finite parameters after epoch {epoch}"
            )));
        }
        loss_curve.push(mean);
    }
    Ok(TrainOutcome { model, loss_curve })
}

/// Mean loss breakdown of `model` over `dataset`, no updates.
pub fn dataset_loss(
    model: &TinyARModel,
    dataset: &[TokenSequence],
    lambda: f64,
    m: usize,
) -> Result<LossBreakdown> {
    let mut out = LossBreakdown {
        tce: 0.0,
        cce: 0.0,
        total: 0.0,
        lambda,
        degenerate: false,
    };
    let scale = 1.0 / dataset.len() as f64;
    for seq in dataset {
        let (b, _) = sequence_loss_and_grad(model, seq, lambda, m)?;
        out.tce += b.tce * scale;
        out.cce += b.cce * scale;
        out.total += b.total * scale;
        out.degenerate |= b.degenerate;
    }
    Ok(out)
}

/// Expected top-k hit rate of entry `target` when ties are broken
/// uniformly at random: with `s` entries strictly above it and `t` entries
/// (itself included) equal to it, the credit is `clamp((k - s) / t, 0, 1)`.
pub fn topk_credit(scores: &[f64], target: usize, k: usize) -> f64 {
    let v = scores[target];
    let above = scores.iter().filter(|&&s| s > v).count();
    let tied = scores.iter().filter(|&&s| s == v).count();
    ((k as f64 - above as f64) / tied as f64).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub token_top1: f64,
    pub token_top5: f64,
    pub cluster_top1: f64,
    pub cluster_top5: f64,
}

/// Teacher-forced accuracy: every position `1..len` of every sequence is
/// predicted from its ground-truth prefix. Cluster scores are the cluster
/// distribution of the softmaxed logits. Averages are taken over positions,
/// then over sequences.
pub fn evaluate_accuracy(
    model: &TinyARModel,
    dataset: &[TokenSequence],
    n: usize,
    m: usize,
) -> Result<AccuracyReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    evaluate_with(dataset, n, m, |seq| model.sequence_logits(seq))
}

pub(crate) fn evaluate_with<F>(
    dataset: &[TokenSequence],
    n: usize,
    m: usize,
    mut logits_for: F,
) -> Result<AccuracyReport>
where
    F: FnMut(&TokenSequence) -> Result<Vec<Vec<f64>>>,
{
    let mut acc = [0.0f64; 4];
    for seq in dataset {
        let all = logits_for(seq)?;
        let mut seq_acc = [0.0f64; 4];
        for (logits, &target) in all.iter().zip(&seq.tokens[1..]) {
            let target = target as usize;
            let probs = loss::softmax(logits)?;
            let clusters = loss::cluster_probs(&probs, n, m)?;
            let tc = target / m;
            seq_acc[0] += topk_credit(logits, target, 1);
            seq_acc[1] += topk_credit(logits, target, 5);
            seq_acc[2] += topk_credit(clusters.as_slice(), tc, 1);
            seq_acc[3] += topk_credit(clusters.as_slice(), tc, 5);
        }
        let inv = 1.0 / all.len() as f64;
        for (a, s) in acc.iter_mut().zip(seq_acc) {
            *a += s * inv;
        }
    }
    let inv = 1.0 / dataset.len() as f64;
    Ok(AccuracyReport {
        token_top1: acc[0] * inv,
        token_top5: acc[1] * inv,
        cluster_top1: acc[2] * inv,
        cluster_top5: acc[3] * inv,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: SyntheticDatasetConfig,
    pub lambdas: Vec<f64>,
    pub training: TrainParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: SyntheticDatasetConfig::default(),
            lambdas: vec![0.0, 1.0],
            training: TrainParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::parse(crate::clustering::json_location(&e), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        if self.lambdas.is_empty() {
            return Err(Error::InvalidArgument("lambdas must not be empty".into()));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument(format!("lambda {l} must be >= 0")));
        }
        let t = &self.training;
        if t.embed_dim == 0 || t.kmeans_max_iters == 0 {
            return Err(Error::InvalidArgument(
                "embed_dim and kmeans_max_iters must be at least 1".into(),
            ));
        }
        if !(t.lr >= 0.0 && t.lr.is_finite()) || !(t.init_scale >= 0.0 && t.init_scale.is_finite())
        {
            return Err(Error::InvalidArgument(
                "lr and init_scale must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub lambda: f64,
    pub final_train_loss: LossBreakdown,
    pub loss_curve: Vec<f64>,
    pub heldout: AccuracyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyExperimentReport {
    pub config: ExperimentConfig,
    pub n: usize,
    pub m: usize,
    pub train_sequences: usize,
    pub heldout_sequences: usize,
    pub runs: Vec<RunReport>,
    /// `cluster_top1(lambda=1) >= cluster_top1(lambda=0)`; `None` unless
    /// both weights were run.
    pub verdict: Option<bool>,
}

impl ToyExperimentReport {
    pub fn run_for(&self, lambda: f64) -> Option<&RunReport> {
        self.runs.iter().find(|r| r.lambda == lambda)
    }

    /// Loss curves as CSV: `epoch,lambda,loss`.
    pub fn loss_curve_csv(&self) -> String {
        let mut out = String::from("epoch,lambda,loss\n");
        for run in &self.runs {
            for (epoch, loss) in run.loss_curve.iter().enumerate() {
                out.push_str(&format!("{epoch},{},{loss}\n", run.lambda));
            }
        }
        out
    }
}

/// Splits into (train, held-out): the last quarter of each class is held out.
pub fn split_heldout(sequences: &[TokenSequence]) -> (Vec<TokenSequence>, Vec<TokenSequence>) {
    let mut classes: Vec<u32> = sequences.iter().map(|s| s.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for c in classes {
        let members: Vec<&TokenSequence> = sequences.iter().filter(|s| s.class_id == c).collect();
        let cut = members.len() - members.len() / 4;
        train.extend(members[..cut].iter().map(|s| (*s).clone()));
        heldout.extend(members[cut..].iter().map(|s| (*s).clone()));
    }
    (train, heldout)
}

/// Generate data, cluster and rearrange the codebook, then train and
/// evaluate one model per loss weight from an identical initialization.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ToyExperimentReport> {
    cfg.validate()?;
    let (codebook, sequences) = gen_synthetic_dataset(&cfg.dataset)?;
    let n = cfg.dataset.n_clusters;
    let asg = balanced_kmeans(
        &codebook,
        n,
        cfg.training.kmeans_max_iters,
        cfg.dataset.codebook_seed,
    )?;
    let perm = build_permutation(&asg)?;
    // The rearranged codebook is what a downstream decoder would use.
    let _rearranged = apply_permutation(&codebook, &perm)?;
    let remapped: Vec<TokenSequence> = sequences
        .iter()
        .map(|s| {
            Ok(TokenSequence {
                class_id: s.class_id,
                tokens: remap_stream(&s.tokens, &perm)?,
            })
        })
        .collect::<Result<_>>()?;
    let (train_set, heldout) = split_heldout(&remapped);
    if heldout.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least 4 sequences per class for a held-out split".into(),
        ));
    }

    let t = &cfg.training;
    let init = TinyARModel::new(
        cfg.dataset.codebook_size,
        cfg.dataset.num_classes,
        t.embed_dim,
        t.init_scale,
        t.seed,
    );
    let m = asg.m;
    let runs = cfg
        .lambdas
        .iter()
        .map(|&lambda| {
            let out = train(
                init.clone(),
                &train_set,
                lambda,
                n,
                m,
                t.epochs,
                t.lr,
                t.seed,
            )?;
            Ok(RunReport {
                lambda,
                final_train_loss: dataset_loss(&out.model, &train_set, lambda, m)?,
                loss_curve: out.loss_curve,
                heldout: evaluate_accuracy(&out.model, &heldout, n, m)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = ToyExperimentReport {
        config: cfg.clone(),
        n,
        m,
        train_sequences: train_set.len(),
        heldout_sequences: heldout.len(),
        runs,
        verdict: None,
    };
    if let (Some(with), Some(without)) = (report.run_for(1.0), report.run_for(0.0)) {
        report.verdict = Some(with.heldout.cluster_top1 >= without.heldout.cluster_top1);
    }
    Ok(report)
}
