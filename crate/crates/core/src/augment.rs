//! Data-augmentation primitives and policy composition.
//!
//! Synthetic primitives (mixup, 1-D RICAP, octave mix) blend pairs of windows
//! and mix their labels with the same weights; rotation applies a random
//! SO(3) transform to each (x, y, z) channel triple and leaves labels alone.
//! A policy is an ordered list of primitives applied to a copy of the batch
//! with some probability, after which the copy is concatenated behind the
//! originals.
//!
//! All primitives are pure given an explicit generator. Distinct batches may
//! be augmented concurrently with independently derived sub-streams.

use std::cell::Cell;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{decompose_with_kernel, design_lowpass, FilterSpec, Window};

thread_local! {
    static AUGMENT_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of augmentation invocations (primitives and policy applications)
/// made by the current thread. Training is single-threaded, so a caller can
/// assert that phases which must see clean data never touch the augmentation
/// path by comparing this counter before and after.
pub fn augmentation_call_count() -> u64 {
    AUGMENT_CALLS.with(|c| c.get())
}

fn record_call() {
    AUGMENT_CALLS.with(|c| c.set(c.get() + 1));
}

/// Probability vector over classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel {
    probs: Vec<f64>,
}

impl SoftLabel {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidLabel("empty probability vector".into()));
        }
        if probs.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::InvalidLabel(format!(
                "probabilities must be finite and nonnegative: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidLabel(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn one_hot(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::InvalidLabel(format!(
                "class {class} out of range for {num_classes} classes"
            )));
        }
        let mut probs = vec![0.0; num_classes];
        probs[class] = 1.0;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Convex combination `w * a + (1 - w) * b`.
    pub fn mix(a: &SoftLabel, b: &SoftLabel, w: f64) -> Result<Self> {
        if a.num_classes() != b.num_classes() {
            return Err(Error::ShapeMismatch(format!(
                "label widths differ: {} vs {}",
                a.num_classes(),
                b.num_classes()
            )));
        }
        let probs = a
            .probs
            .iter()
            .zip(&b.probs)
            .map(|(&pa, &pb)| w * pa + (1.0 - w) * pb)
            .collect();
        Self::new(probs)
    }
}

/// A mini batch: n windows with matching soft labels, uniform in shape,
/// sample rate and class count.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    windows: Vec<Window>,
    labels: Vec<SoftLabel>,
}

impl LabeledBatch {
    pub fn new(windows: Vec<Window>, labels: Vec<SoftLabel>) -> Result<Self> {
        if windows.is_empty() || windows.len() != labels.len() {
            return Err(Error::InvalidBatch(format!(
                "need matching nonempty windows/labels, got {}/{}",
                windows.len(),
                labels.len()
            )));
        }
        let t_len = windows[0].len_t();
        let channels = windows[0].channels();
        let fs = windows[0].sample_rate_hz();
        for w in &windows {
            if w.len_t() != t_len || w.channels() != channels || w.sample_rate_hz() != fs {
                return Err(Error::InvalidBatch(
                    "windows must share shape and sample rate".into(),
                ));
            }
        }
        let k = labels[0].num_classes();
        if labels.iter().any(|l| l.num_classes() != k) {
            return Err(Error::InvalidBatch("labels must share class count".into()));
        }
        Ok(Self { windows, labels })
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn labels(&self) -> &[SoftLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn t_len(&self) -> usize {
        self.windows[0].len_t()
    }

    pub fn channels(&self) -> usize {
        self.windows[0].channels()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.windows[0].sample_rate_hz()
    }

    pub fn num_classes(&self) -> usize {
        self.labels[0].num_classes()
    }

    /// Sub-batch at the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let windows = indices.iter().map(|&i| self.windows[i].clone()).collect();
        let labels = indices.iter().map(|&i| self.labels[i].clone()).collect();
        Self::new(windows, labels)
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        let mut windows = self.windows.clone();
        windows.extend(other.windows.iter().cloned());
        let mut labels = self.labels.clone();
        labels.extend(other.labels.iter().cloned());
        Self::new(windows, labels)
    }
}

/// Symmetric Beta shape parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams {
    alpha: f64,
}

impl BetaParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "beta shape must be positive, got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Draws `lambda ~ Beta(alpha, alpha)` via two Gamma(alpha, 1) variates.
pub fn sample_lambda<R: Rng>(p: BetaParams, rng: &mut R) -> f64 {
    let gamma = Gamma::new(p.alpha(), 1.0).expect("validated shape");
    let g1: f64 = gamma.sample(rng);
    let g2: f64 = gamma.sample(rng);
    let sum = g1 + g2;
    if sum == 0.0 || !sum.is_finite() {
        // Both variates underflowed (tiny alpha); any value is as likely.
        return 0.5;
    }
    g1 / sum
}

/// One batch-level mixing decision: a partner for every index plus a single
/// blend weight shared by the whole batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MixPlan {
    pairing: Vec<usize>,
    lambda: f64,
}

impl MixPlan {
    /// Validates that `pairing` is a permutation and `lambda` is in [0, 1].
    pub fn new(pairing: Vec<usize>, lambda: f64) -> Result<Self> {
        let n = pairing.len();
        let mut seen = vec![false; n];
        for &j in &pairing {
            if j >= n || seen[j] {
                return Err(Error::InvalidParameter(
                    "pairing must be a permutation of 0..n".into(),
                ));
            }
            seen[j] = true;
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidParameter(format!(
                "lambda must lie in [0, 1], got {lambda}"
            )));
        }
        Ok(Self { pairing, lambda })
    }

    /// Samples the shuffled pairing first, then the shared lambda.
    pub fn sample<R: Rng>(n: usize, p: BetaParams, rng: &mut R) -> Self {
        let mut pairing: Vec<usize> = (0..n).collect();
        pairing.shuffle(rng);
        let lambda = sample_lambda(p, rng);
        Self { pairing, lambda }
    }

    pub fn pairing(&self) -> &[usize] {
        &self.pairing
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// The two swapped low/high composites formed from one window pair.
#[derive(Debug, Clone)]
pub struct OctavePair {
    pub g1: Window,
    pub g2: Window,
}

pub type Mat3 = [[f64; 3]; 3];

/// Uniform random rotation matrix (unit-quaternion method).
pub fn sample_rotation_matrix<R: Rng>(rng: &mut R) -> Mat3 {
    let u1: f64 = rng.random_range(0.0..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    let u3: f64 = rng.random_range(0.0..1.0);
    let two_pi = 2.0 * std::f64::consts::PI;
    let q = [
        (1.0 - u1).sqrt() * (two_pi * u2).sin(),
        (1.0 - u1).sqrt() * (two_pi * u2).cos(),
        u1.sqrt() * (two_pi * u3).sin(),
        u1.sqrt() * (two_pi * u3).cos(),
    ];
    rotation_matrix_from_quaternion(q)
}

/// Rotation matrix of a (not necessarily normalized) quaternion `(x, y, z, w)`.
pub fn rotation_matrix_from_quaternion(q: [f64; 4]) -> Mat3 {
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let [x, y, z, w] = [q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm];
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
        ],
        [
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
        ],
        [
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Applies one rotation matrix per window to every consecutive 3-channel
/// group at every timestep. Labels are unchanged.
pub fn apply_rotations(b: &LabeledBatch, rotations: &[Mat3]) -> Result<LabeledBatch> {
    let channels = b.channels();
    if !channels.is_multiple_of(3) {
        return Err(Error::ChannelGrouping(format!(
            "rotation needs channel count divisible by 3, got {channels}"
        )));
    }
    if rotations.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rotations for {} windows",
            rotations.len(),
            b.len()
        )));
    }
    let t_len = b.t_len();
    let fs = b.sample_rate_hz();
    let mut windows = Vec::with_capacity(b.len());
    for (w, rot) in b.windows().iter().zip(rotations) {
        let mut out = Array2::zeros((t_len, channels));
        for t in 0..t_len {
            for g in 0..channels / 3 {
                let c0 = 3 * g;
                let v = [
                    w.samples()[(t, c0)],
                    w.samples()[(t, c0 + 1)],
                    w.samples()[(t, c0 + 2)],
                ];
                for row in 0..3 {
                    out[(t, c0 + row)] =
                        rot[row][0] * v[0] + rot[row][1] * v[1] + rot[row][2] * v[2];
                }
            }
        }
        windows.push(Window::new(out, fs)?);
    }
    LabeledBatch::new(windows, b.labels().to_vec())
}

/// Rotation augmentation: one uniform SO(3) rotation per window.
pub fn rotation<R: Rng>(b: &LabeledBatch, rng: &mut R) -> Result<LabeledBatch> {
    record_call();
    let rotations: Vec<Mat3> = (0..b.len()).map(|_| sample_rotation_matrix(rng)).collect();
    apply_rotations(b, &rotations)
}

fn blend_windows(a: &Window, b: &Window, w: f64) -> Result<Window> {
    let samples = a.samples() * w + b.samples() * (1.0 - w);
    Window::new(samples, a.sample_rate_hz())
}

/// mixup under an explicit plan: window i becomes
/// `lambda * x_i + (1 - lambda) * x_j` and labels mix with the same weight.
pub fn mixup_with_plan(b: &LabeledBatch, plan: &MixPlan) -> Result<LabeledBatch> {
    if plan.pairing().len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "plan for {} windows applied to batch of {}",
            plan.pairing().len(),
            b.len()
        )));
    }
    let lambda = plan.lambda();
    let mut windows = Vec::with_capacity(b.len());
    let mut labels = Vec::with_capacity(b.len());
    for (i, &j) in plan.pairing().iter().enumerate() {
        windows.push(blend_windows(&b.windows()[i], &b.windows()[j], lambda)?);
        labels.push(SoftLabel::mix(&b.labels()[i], &b.labels()[j], lambda)?);
    }
    LabeledBatch::new(windows, labels)
}

/// mixup with a freshly sampled plan.
pub fn mixup<R: Rng>(b: &LabeledBatch, p: BetaParams, rng: &mut R) -> Result<LabeledBatch> {
    record_call();
    let plan = MixPlan::sample(b.len(), p, rng);
    mixup_with_plan(b, &plan)
}

/// 1-D RICAP under an explicit plan: the first `round(lambda * T)` timesteps
/// come from window i, the rest keep window j's samples at their original
/// positions; labels mix with the segment-length fractions.
pub fn ricap_1d_with_plan(b: &LabeledBatch, plan: &MixPlan) -> Result<LabeledBatch> {
    if plan.pairing().len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "plan for {} windows applied to batch of {}",
            plan.pairing().len(),
            b.len()
        )));
    }
    let t_len = b.t_len();
    let cut = (plan.lambda() * t_len as f64).round().clamp(0.0, t_len as f64) as usize;
    let weight = cut as f64 / t_len as f64;
    let fs = b.sample_rate_hz();
    let mut windows = Vec::with_capacity(b.len());
    let mut labels = Vec::with_capacity(b.len());
    for (i, &j) in plan.pairing().iter().enumerate() {
        let front = b.windows()[i].samples();
        let tail = b.windows()[j].samples();
        let samples = Array2::from_shape_fn((t_len, b.channels()), |(t, c)| {
            if t < cut {
                front[(t, c)]
            } else {
                tail[(t, c)]
            }
        });
        windows.push(Window::new(samples, fs)?);
        labels.push(SoftLabel::mix(&b.labels()[i], &b.labels()[j], weight)?);
    }
    LabeledBatch::new(windows, labels)
}

/// 1-D RICAP with a freshly sampled plan.
pub fn ricap_1d<R: Rng>(b: &LabeledBatch, p: BetaParams, rng: &mut R) -> Result<LabeledBatch> {
    record_call();
    let plan = MixPlan::sample(b.len(), p, rng);
    ricap_1d_with_plan(b, &plan)
}

/// Octave mix under an explicit plan: the whole batch is decomposed once,
/// then window i blends the two swapped composites
/// `g1 = low_i + high_j`, `g2 = low_j + high_i` as `lambda*g1 + (1-lambda)*g2`;
/// labels mix exactly like mixup.
pub fn octave_mix_with_plan(
    b: &LabeledBatch,
    plan: &MixPlan,
    spec: &FilterSpec,
) -> Result<LabeledBatch> {
    if plan.pairing().len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "plan for {} windows applied to batch of {}",
            plan.pairing().len(),
            b.len()
        )));
    }
    if spec.sample_rate_hz != b.sample_rate_hz() {
        return Err(Error::InvalidFilterSpec(format!(
            "filter designed for {} Hz applied to {} Hz batch",
            spec.sample_rate_hz,
            b.sample_rate_hz()
        )));
    }
    let kernel = design_lowpass(spec)?;
    let mut lows = Vec::with_capacity(b.len());
    let mut highs = Vec::with_capacity(b.len());
    for w in b.windows() {
        let (low, high) = decompose_with_kernel(w, &kernel)?;
        lows.push(low);
        highs.push(high);
    }
    let lambda = plan.lambda();
    let fs = b.sample_rate_hz();
    let mut windows = Vec::with_capacity(b.len());
    let mut labels = Vec::with_capacity(b.len());
    for (i, &j) in plan.pairing().iter().enumerate() {
        let g1 = lows[i].samples() + highs[j].samples();
        let g2 = lows[j].samples() + highs[i].samples();
        let blended = g1 * lambda + g2 * (1.0 - lambda);
        windows.push(Window::new(blended, fs)?);
        labels.push(SoftLabel::mix(&b.labels()[i], &b.labels()[j], lambda)?);
    }
    LabeledBatch::new(windows, labels)
}

/// The two composites for one pair of windows.
pub fn octave_pair(x1: &Window, x2: &Window, spec: &FilterSpec) -> Result<OctavePair> {
    let kernel = design_lowpass(spec)?;
    let (low1, high1) = decompose_with_kernel(x1, &kernel)?;
    let (low2, high2) = decompose_with_kernel(x2, &kernel)?;
    let fs = x1.sample_rate_hz();
    Ok(OctavePair {
        g1: Window::new(low1.samples() + high2.samples(), fs)?,
        g2: Window::new(low2.samples() + high1.samples(), fs)?,
    })
}

/// Octave mix with a freshly sampled plan. With a pass-through cutoff this
/// consumes the generator exactly like [`mixup`] and produces the same batch.
pub fn octave_mix<R: Rng>(
    b: &LabeledBatch,
    p: BetaParams,
    spec: &FilterSpec,
    rng: &mut R,
) -> Result<LabeledBatch> {
    record_call();
    let plan = MixPlan::sample(b.len(), p, rng);
    octave_mix_with_plan(b, &plan, spec)
}

/// One augmentation step inside a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AugStep {
    Rotation,
    Mixup { alpha: f64 },
    Ricap1d { alpha: f64 },
    OctaveMix { alpha: f64, cutoff_hz: f64 },
}

impl AugStep {
    fn is_synthetic(&self) -> bool {
        !matches!(self, AugStep::Rotation)
    }

    /// Short human-readable form used in run summaries.
    pub fn describe(&self) -> String {
        match self {
            AugStep::Rotation => "rotation".into(),
            AugStep::Mixup { alpha } => format!("mixup(alpha={alpha})"),
            AugStep::Ricap1d { alpha } => format!("ricap(alpha={alpha})"),
            AugStep::OctaveMix { alpha, cutoff_hz } => {
                format!("octave-mix(alpha={alpha}, cutoff={cutoff_hz}Hz)")
            }
        }
    }

    fn apply<R: Rng>(&self, b: &LabeledBatch, rng: &mut R) -> Result<LabeledBatch> {
        match self {
            AugStep::Rotation => rotation(b, rng),
            AugStep::Mixup { alpha } => mixup(b, BetaParams::new(*alpha)?, rng),
            AugStep::Ricap1d { alpha } => ricap_1d(b, BetaParams::new(*alpha)?, rng),
            AugStep::OctaveMix { alpha, cutoff_hz } => {
                let spec = FilterSpec::with_default_taps(*cutoff_hz, b.sample_rate_hz())?;
                octave_mix(b, BetaParams::new(*alpha)?, &spec, rng)
            }
        }
    }
}

/// Ordered composition of augmentation steps with a per-batch apply
/// probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugPolicy {
    pub steps: Vec<AugStep>,
    #[serde(default = "default_apply_prob")]
    pub apply_prob: f64,
}

fn default_apply_prob() -> f64 {
    0.5
}

impl AugPolicy {
    pub fn new(steps: Vec<AugStep>, apply_prob: f64) -> Result<Self> {
        let policy = Self { steps, apply_prob };
        policy.validate()?;
        Ok(policy)
    }

    /// Rotation followed by octave mix with the tuned defaults.
    pub fn rotation_octave_mix() -> Self {
        Self {
            steps: vec![
                AugStep::Rotation,
                AugStep::OctaveMix {
                    alpha: 0.5,
                    cutoff_hz: 2.1,
                },
            ],
            apply_prob: 0.5,
        }
    }

    /// Rotation followed by mixup with the tuned default.
    pub fn rotation_mixup() -> Self {
        Self {
            steps: vec![AugStep::Rotation, AugStep::Mixup { alpha: 5.0 }],
            apply_prob: 0.5,
        }
    }

    /// Rotation followed by 1-D RICAP with the tuned default.
    pub fn rotation_ricap() -> Self {
        Self {
            steps: vec![AugStep::Rotation, AugStep::Ricap1d { alpha: 5.0 }],
            apply_prob: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(Error::InvalidPolicy(format!(
                "apply probability must lie in [0, 1], got {}",
                self.apply_prob
            )));
        }
        let synthetic = self.steps.iter().filter(|s| s.is_synthetic()).count();
        if synthetic > 1 {
            return Err(Error::InvalidPolicy(format!(
                "at most one synthetic step per policy, got {synthetic}"
            )));
        }
        for step in &self.steps {
            match step {
                AugStep::Mixup { alpha } | AugStep::Ricap1d { alpha } => {
                    BetaParams::new(*alpha)?;
                }
                AugStep::OctaveMix { alpha, cutoff_hz } => {
                    BetaParams::new(*alpha)?;
                    if !cutoff_hz.is_finite() || *cutoff_hz <= 0.0 {
                        return Err(Error::InvalidPolicy(format!(
                            "octave-mix cutoff must be positive, got {cutoff_hz}"
                        )));
                    }
                }
                AugStep::Rotation => {}
            }
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        if self.steps.is_empty() {
            return "identity".into();
        }
        self.steps
            .iter()
            .map(AugStep::describe)
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// Runs the steps unconditionally, in order, on a copy of the batch.
pub fn apply_steps<R: Rng>(
    b: &LabeledBatch,
    steps: &[AugStep],
    rng: &mut R,
) -> Result<LabeledBatch> {
    let mut augmented = b.clone();
    for step in steps {
        augmented = step.apply(&augmented, rng)?;
    }
    Ok(augmented)
}

/// Applies the policy to the batch: one Bernoulli(apply_prob) draw decides
/// whether the steps run; on success the augmented copy is appended after the
/// originals (2n windows), otherwise the batch is returned unchanged.
pub fn apply_policy<R: Rng>(
    b: &LabeledBatch,
    policy: &AugPolicy,
    rng: &mut R,
) -> Result<LabeledBatch> {
    policy.validate()?;
    record_call();
    let coin: f64 = rng.random_range(0.0..1.0);
    if coin >= policy.apply_prob {
        return Ok(b.clone());
    }
    let augmented = apply_steps(b, &policy.steps, rng)?;
    b.concat(&augmented)
}
