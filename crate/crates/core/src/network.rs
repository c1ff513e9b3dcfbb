//! Minimal differentiable 1-D CNN: stacked conv/ReLU/max-pool blocks with
//! global average pooling, a single-layer softmax classifier, soft-label
//! cross-entropy, exact reverse-mode gradients, Adam, and weight freezing.
//!
//! Everything runs in f64 on the CPU. A model instance is single-writer
//! during training; read-only forward passes on a frozen or finished model
//! may run concurrently. Gradients are accumulated in a fixed order, so
//! results are bit-reproducible.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::LabeledBatch;
use crate::error::{Error, Result};

/// Architecture description: one entry in `channel_widths` per conv block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub channel_widths: Vec<usize>,
    #[serde(default = "default_kernel_size")]
    pub kernel_size: usize,
    pub num_classes: usize,
}

fn default_kernel_size() -> usize {
    3
}

impl ModelConfig {
    /// The five-block full-scale architecture (feature width 512).
    pub fn full_scale(num_classes: usize) -> Self {
        Self {
            channel_widths: vec![64, 128, 256, 512, 512],
            kernel_size: 3,
            num_classes,
        }
    }

    /// Two small blocks; enough for synthetic desk-scale corpora.
    pub fn desk_scale(num_classes: usize) -> Self {
        Self {
            channel_widths: vec![8, 16],
            kernel_size: 3,
            num_classes,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.channel_widths.len()
    }

    /// Feature width after global average pooling: the last conv width.
    pub fn feature_dim(&self) -> usize {
        *self.channel_widths.last().unwrap_or(&0)
    }

    /// Smallest window length the pooling stack accepts.
    pub fn min_t(&self) -> usize {
        1 << self.num_blocks()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_widths.is_empty() || self.channel_widths.contains(&0) {
            return Err(Error::InvalidConfig(
                "channel widths must be nonempty and positive".into(),
            ));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidConfig("need at least one class".into()));
        }
        Ok(())
    }
}

fn he_uniform<R: Rng>(fan_in: usize, rng: &mut R) -> impl FnMut() -> f64 + '_ {
    let limit = (6.0 / fan_in as f64).sqrt();
    move || rng.random_range(-limit..limit)
}

/// One conv block: 1-D convolution (same padding, stride 1) + ReLU +
/// max-pool of width 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    /// `(out_channels, in_channels, kernel_size)`
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
}

impl ConvBlock {
    fn init<R: Rng>(out_c: usize, in_c: usize, kernel: usize, rng: &mut R) -> Self {
        let mut draw = he_uniform(in_c * kernel, rng);
        let weight = Array3::from_shape_fn((out_c, in_c, kernel), |_| draw());
        Self {
            weight,
            bias: Array1::zeros(out_c),
        }
    }
}

/// Conv blocks followed by global average pooling over time.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    config: ModelConfig,
    input_channels: usize,
    blocks: Vec<ConvBlock>,
    frozen: bool,
}

impl FeatureExtractor {
    pub fn init<R: Rng>(config: &ModelConfig, input_channels: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if input_channels == 0 {
            return Err(Error::InvalidConfig("need at least one input channel".into()));
        }
        let mut blocks = Vec::with_capacity(config.num_blocks());
        let mut in_c = input_channels;
        for &out_c in &config.channel_widths {
            blocks.push(ConvBlock::init(out_c, in_c, config.kernel_size, rng));
            in_c = out_c;
        }
        Ok(Self {
            config: config.clone(),
            input_channels,
            blocks,
            frozen: false,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn blocks(&self) -> &[ConvBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ConvBlock] {
        &mut self.blocks
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Marks all parameters non-trainable; forward behavior is unchanged.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    /// Trainable parameter slices in fixed order (block weight, block bias,
    /// ...). Empty when frozen.
    pub fn param_groups_mut(&mut self) -> Vec<&mut [f64]> {
        if self.frozen {
            return Vec::new();
        }
        let mut groups = Vec::with_capacity(self.blocks.len() * 2);
        for block in &mut self.blocks {
            groups.push(block.weight.as_slice_mut().expect("contiguous"));
            groups.push(block.bias.as_slice_mut().expect("contiguous"));
        }
        groups
    }
}

/// Per-block forward intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BlockCache {
    /// `(in_channels, t_in)`
    pub input: Array2<f64>,
    /// Pre-ReLU activation `(out_channels, t_in)`.
    pub pre_activation: Array2<f64>,
    /// Index of the max within each pooled pair, `(out_channels, t_out)`.
    pub pool_argmax: Array2<usize>,
    /// Pooled output `(out_channels, t_out)`.
    pub output: Array2<f64>,
}

/// Forward intermediates for one window.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    pub blocks: Vec<BlockCache>,
    pub features: Array1<f64>,
}

fn conv_same(input: &Array2<f64>, block: &ConvBlock) -> Array2<f64> {
    let (in_c, t_len) = input.dim();
    let (out_c, w_in_c, kernel) = block.weight.dim();
    debug_assert_eq!(in_c, w_in_c);
    let half = (kernel - 1) / 2;
    let mut out = Array2::zeros((out_c, t_len));
    for o in 0..out_c {
        for t in 0..t_len {
            let mut acc = block.bias[o];
            for i in 0..in_c {
                for dk in 0..kernel {
                    let s = t as isize + dk as isize - half as isize;
                    if s >= 0 && (s as usize) < t_len {
                        acc += block.weight[(o, i, dk)] * input[(i, s as usize)];
                    }
                }
            }
            out[(o, t)] = acc;
        }
    }
    out
}

fn block_forward(input: Array2<f64>, block: &ConvBlock) -> BlockCache {
    let pre_activation = conv_same(&input, block);
    let (out_c, t_len) = pre_activation.dim();
    let t_out = t_len / 2;
    let mut pooled = Array2::zeros((out_c, t_out));
    let mut argmax = Array2::zeros((out_c, t_out));
    for o in 0..out_c {
        for u in 0..t_out {
            let a = pre_activation[(o, 2 * u)].max(0.0);
            let b = pre_activation[(o, 2 * u + 1)].max(0.0);
            if a >= b {
                pooled[(o, u)] = a;
                argmax[(o, u)] = 2 * u;
            } else {
                pooled[(o, u)] = b;
                argmax[(o, u)] = 2 * u + 1;
            }
        }
    }
    BlockCache {
        input,
        pre_activation,
        pool_argmax: argmax,
        output: pooled,
    }
}

fn window_to_channels_major(b: &LabeledBatch, index: usize) -> Array2<f64> {
    let w = &b.windows()[index];
    let (t_len, channels) = w.samples().dim();
    Array2::from_shape_fn((channels, t_len), |(c, t)| w.samples()[(t, c)])
}

fn check_batch_shape(e: &FeatureExtractor, b: &LabeledBatch) -> Result<()> {
    if b.channels() != e.input_channels {
        return Err(Error::ShapeMismatch(format!(
            "extractor expects {} input channels, batch has {}",
            e.input_channels,
            b.channels()
        )));
    }
    let min_t = e.config.min_t();
    if b.t_len() < min_t {
        return Err(Error::ShapeMismatch(format!(
            "window length {} too short for {} pooling stages; need at least {min_t}",
            b.t_len(),
            e.config.num_blocks()
        )));
    }
    Ok(())
}

/// Forward pass through the extractor, keeping per-window caches.
pub fn forward_features_cached(
    e: &FeatureExtractor,
    b: &LabeledBatch,
) -> Result<(Array2<f64>, Vec<FeatureCache>)> {
    check_batch_shape(e, b)?;
    let n = b.len();
    let fd = e.feature_dim();
    let mut features = Array2::zeros((n, fd));
    let mut caches = Vec::with_capacity(n);
    for idx in 0..n {
        let mut current = window_to_channels_major(b, idx);
        let mut blocks = Vec::with_capacity(e.blocks.len());
        for block in &e.blocks {
            let cache = block_forward(current, block);
            current = cache.output.clone();
            blocks.push(cache);
        }
        let (out_c, t_out) = current.dim();
        let mut feat = Array1::zeros(out_c);
        for o in 0..out_c {
            let mut acc = 0.0;
            for t in 0..t_out {
                acc += current[(o, t)];
            }
            feat[o] = acc / t_out as f64;
        }
        for o in 0..fd {
            features[(idx, o)] = feat[o];
        }
        caches.push(FeatureCache {
            blocks,
            features: feat,
        });
    }
    Ok((features, caches))
}

/// Forward pass without caches: `(n, feature_dim)` feature matrix.
pub fn forward_features(e: &FeatureExtractor, b: &LabeledBatch) -> Result<Array2<f64>> {
    Ok(forward_features_cached(e, b)?.0)
}

/// Single affine map plus softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    /// `(num_classes, in_dim)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Classifier {
    pub fn init<R: Rng>(in_dim: usize, num_classes: usize, rng: &mut R) -> Result<Self> {
        if in_dim == 0 || num_classes == 0 {
            return Err(Error::InvalidConfig(
                "classifier needs positive widths".into(),
            ));
        }
        let mut draw = he_uniform(in_dim, rng);
        Ok(Self {
            weight: Array2::from_shape_fn((num_classes, in_dim), |_| draw()),
            bias: Array1::zeros(num_classes),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.weight.nrows()
    }

    pub fn param_groups_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weight.as_slice_mut().expect("contiguous"),
            self.bias.as_slice_mut().expect("contiguous"),
        ]
    }
}

/// Affine map plus row-wise softmax; each probability row sums to 1.
pub fn forward_logits(cls: &Classifier, feats: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    if feats.ncols() != cls.in_dim() {
        return Err(Error::ShapeMismatch(format!(
            "classifier expects {} features, got {}",
            cls.in_dim(),
            feats.ncols()
        )));
    }
    let n = feats.nrows();
    let k = cls.num_classes();
    let mut logits = Array2::zeros((n, k));
    for r in 0..n {
        for c in 0..k {
            let mut acc = cls.bias[c];
            for j in 0..cls.in_dim() {
                acc += cls.weight[(c, j)] * feats[(r, j)];
            }
            logits[(r, c)] = acc;
        }
    }
    let mut probs = Array2::zeros((n, k));
    for r in 0..n {
        let row_max = (0..k).fold(f64::NEG_INFINITY, |m, c| m.max(logits[(r, c)]));
        let mut denom = 0.0;
        for c in 0..k {
            let e = (logits[(r, c)] - row_max).exp();
            probs[(r, c)] = e;
            denom += e;
        }
        for c in 0..k {
            probs[(r, c)] /= denom;
        }
    }
    Ok((logits, probs))
}

const LOG_CLAMP: f64 = 1e-12;

/// Mean over the batch of `-sum_k target_k * ln(max(prob_k, 1e-12))`.
pub fn soft_cross_entropy(probs: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
    if probs.dim() != targets.dim() {
        return Err(Error::ShapeMismatch(format!(
            "probs {:?} vs targets {:?}",
            probs.dim(),
            targets.dim()
        )));
    }
    let n = probs.nrows();
    let mut total = 0.0;
    for r in 0..n {
        for c in 0..probs.ncols() {
            total -= targets[(r, c)] * probs[(r, c)].max(LOG_CLAMP).ln();
        }
    }
    Ok(total / n as f64)
}

/// Gradient of the mean soft cross-entropy with respect to the logits:
/// `(probs - targets) / n`.
pub fn cross_entropy_logit_grad(probs: &Array2<f64>, targets: &Array2<f64>) -> Array2<f64> {
    let n = probs.nrows() as f64;
    (probs - targets) / n
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockGrad {
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorGrad {
    pub blocks: Vec<ConvBlockGrad>,
}

impl ClassifierGrad {
    pub fn groups(&self) -> Vec<&[f64]> {
        vec![
            self.weight.as_slice().expect("contiguous"),
            self.bias.as_slice().expect("contiguous"),
        ]
    }
}

impl ExtractorGrad {
    pub fn groups(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.blocks.len() * 2);
        for b in &self.blocks {
            out.push(b.weight.as_slice().expect("contiguous"));
            out.push(b.bias.as_slice().expect("contiguous"));
        }
        out
    }
}

/// Backprop through the classifier: parameter gradients plus the gradient
/// with respect to the input features.
pub fn classifier_backward(
    cls: &Classifier,
    feats: &Array2<f64>,
    dlogits: &Array2<f64>,
) -> (ClassifierGrad, Array2<f64>) {
    let n = feats.nrows();
    let k = cls.num_classes();
    let in_dim = cls.in_dim();
    let mut dw = Array2::zeros((k, in_dim));
    let mut db = Array1::zeros(k);
    let mut dfeats = Array2::zeros((n, in_dim));
    for r in 0..n {
        for c in 0..k {
            let g = dlogits[(r, c)];
            db[c] += g;
            for j in 0..in_dim {
                dw[(c, j)] += g * feats[(r, j)];
                dfeats[(r, j)] += g * cls.weight[(c, j)];
            }
        }
    }
    (ClassifierGrad { weight: dw, bias: db }, dfeats)
}

fn block_backward(
    block: &ConvBlock,
    cache: &BlockCache,
    dout: &Array2<f64>,
    grad: &mut ConvBlockGrad,
) -> Array2<f64> {
    let (out_c, t_out) = dout.dim();
    let (in_c, t_in) = cache.input.dim();
    let kernel = block.weight.dim().2;
    let half = (kernel - 1) / 2;

    // Max-pool and ReLU backward: route to the argmax, mask by pre-activation.
    let mut dpre: Array2<f64> = Array2::zeros((out_c, t_in));
    for o in 0..out_c {
        for u in 0..t_out {
            let src = cache.pool_argmax[(o, u)];
            if cache.pre_activation[(o, src)] > 0.0 {
                dpre[(o, src)] += dout[(o, u)];
            }
        }
    }

    // Convolution backward.
    let mut dinput: Array2<f64> = Array2::zeros((in_c, t_in));
    for o in 0..out_c {
        for t in 0..t_in {
            let g = dpre[(o, t)];
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            for i in 0..in_c {
                for dk in 0..kernel {
                    let s = t as isize + dk as isize - half as isize;
                    if s >= 0 && (s as usize) < t_in {
                        grad.weight[(o, i, dk)] += g * cache.input[(i, s as usize)];
                        dinput[(i, s as usize)] += g * block.weight[(o, i, dk)];
                    }
                }
            }
        }
    }
    dinput
}

/// Backprop the per-window feature gradients through the extractor.
/// Returns `None` when the extractor is frozen.
pub fn extractor_backward(
    e: &FeatureExtractor,
    caches: &[FeatureCache],
    dfeats: &Array2<f64>,
) -> Option<ExtractorGrad> {
    if e.is_frozen() {
        return None;
    }
    let mut grad = ExtractorGrad {
        blocks: e
            .blocks
            .iter()
            .map(|b| ConvBlockGrad {
                weight: Array3::zeros(b.weight.dim()),
                bias: Array1::zeros(b.bias.dim()),
            })
            .collect(),
    };
    for (idx, cache) in caches.iter().enumerate() {
        let last = cache.blocks.last().expect("at least one block");
        let (out_c, t_out) = last.output.dim();
        // Global average pooling backward.
        let mut dcurrent: Array2<f64> = Array2::zeros((out_c, t_out));
        for o in 0..out_c {
            let g = dfeats[(idx, o)] / t_out as f64;
            for t in 0..t_out {
                dcurrent[(o, t)] = g;
            }
        }
        for (b_idx, block_cache) in cache.blocks.iter().enumerate().rev() {
            dcurrent = block_backward(
                &e.blocks[b_idx],
                block_cache,
                &dcurrent,
                &mut grad.blocks[b_idx],
            );
        }
    }
    Some(grad)
}

/// Loss, probabilities, and gradients of one (extractor, classifier) pair on
/// a batch. Frozen extractors receive no gradient.
#[derive(Debug)]
pub struct BackwardOutput {
    pub loss: f64,
    pub probs: Array2<f64>,
    pub extractor_grad: Option<ExtractorGrad>,
    pub classifier_grad: ClassifierGrad,
}

/// Matrix of label rows for a batch.
pub fn targets_of(b: &LabeledBatch) -> Array2<f64> {
    let n = b.len();
    let k = b.num_classes();
    Array2::from_shape_fn((n, k), |(r, c)| b.labels()[r].probs()[c])
}

/// Full forward and backward pass of the loss
/// `soft_cross_entropy(softmax(cls(E(x))), labels)`.
pub fn backward(e: &FeatureExtractor, cls: &Classifier, b: &LabeledBatch) -> Result<BackwardOutput> {
    let (feats, caches) = forward_features_cached(e, b)?;
    let (_, probs) = forward_logits(cls, &feats)?;
    let targets = targets_of(b);
    let loss = soft_cross_entropy(&probs, &targets)?;
    let dlogits = cross_entropy_logit_grad(&probs, &targets);
    let (classifier_grad, dfeats) = classifier_backward(cls, &feats, &dlogits);
    let extractor_grad = extractor_backward(e, &caches, &dfeats);
    Ok(BackwardOutput {
        loss,
        probs,
        extractor_grad,
        classifier_grad,
    })
}

/// Bias-corrected Adam with lazily allocated per-parameter moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over aligned parameter/gradient groups.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter groups vs {} gradient groups",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        if self.m.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} groups, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (g_idx, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            if param.len() != grad.len() || param.len() != self.m[g_idx].len() {
                return Err(Error::ShapeMismatch(format!(
                    "group {g_idx}: param {} / grad {} / moment {}",
                    param.len(),
                    grad.len(),
                    self.m[g_idx].len()
                )));
            }
            for i in 0..param.len() {
                let g = grad[i];
                let m = &mut self.m[g_idx][i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                let v = &mut self.v[g_idx][i];
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                param[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
