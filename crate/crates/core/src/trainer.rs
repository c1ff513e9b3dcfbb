//! The K-way augmentation-ensemble model and its two-phase training
//! algorithm, plus the single-model and simple-ensemble baselines.
//!
//! The two-phase algorithm (DAR-FFE) pretrains each branch `(E_k, C_k)` on
//! data augmented by its own policy, then freezes every extractor and trains
//! one fresh combined classifier `C` on clean data. Prediction uses only the
//! frozen extractors and `C`; features are concatenated in branch index
//! order.
//!
//! Branch pretraining jobs draw from seeds derived per branch, so branch k's
//! result does not depend on whether other branches ran. The classifier
//! phase is single-writer on `C` with read-only frozen extractors.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayD};
use serde::{Deserialize, Serialize};

use crate::augment::{apply_policy, apply_steps, AugPolicy, LabeledBatch};
use crate::container::{read_tensor, write_tensor, DType};
use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, TrialReport};
use crate::network::{
    backward, classifier_backward, cross_entropy_logit_grad, extractor_backward,
    forward_features, forward_features_cached, forward_logits, soft_cross_entropy, targets_of,
    AdamState, Classifier, FeatureExtractor, ModelConfig,
};
use crate::rng::{derive_seed, rng_from, stream};

/// One pretraining branch: a feature extractor with its own head classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub extractor: FeatureExtractor,
    pub head: Classifier,
}

impl Branch {
    pub fn init(model_cfg: &ModelConfig, input_channels: usize, unit_seed: u64) -> Result<Self> {
        let mut rng = rng_from(unit_seed, &[stream::INIT]);
        let extractor = FeatureExtractor::init(model_cfg, input_channels, &mut rng)?;
        let head = Classifier::init(model_cfg.feature_dim(), model_cfg.num_classes, &mut rng)?;
        Ok(Self { extractor, head })
    }

    /// Probabilities through the branch's own head.
    pub fn predict(&self, b: &LabeledBatch) -> Result<Array2<f64>> {
        let feats = forward_features(&self.extractor, b)?;
        Ok(forward_logits(&self.head, &feats)?.1)
    }
}

/// K frozen-or-trainable extractors, their pretraining heads, and the
/// combined classifier over concatenated features.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub extractors: Vec<FeatureExtractor>,
    pub heads: Vec<Classifier>,
    pub combined: Classifier,
}

impl EnsembleModel {
    pub fn k(&self) -> usize {
        self.extractors.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.extractors.is_empty() || self.extractors.len() != self.heads.len() {
            return Err(Error::InvalidConfig(
                "ensemble needs matching extractors and heads".into(),
            ));
        }
        let fd = self.extractors[0].feature_dim();
        if self.extractors.iter().any(|e| e.feature_dim() != fd) {
            return Err(Error::InvalidConfig(
                "all extractors must share the model config".into(),
            ));
        }
        if self.combined.in_dim() != self.k() * fd {
            return Err(Error::ShapeMismatch(format!(
                "combined classifier takes {} features, ensemble provides {}",
                self.combined.in_dim(),
                self.k() * fd
            )));
        }
        Ok(())
    }

    /// Features of all branches side by side, in branch index order.
    pub fn concat_features(&self, b: &LabeledBatch) -> Result<Array2<f64>> {
        let n = b.len();
        let fd = self.extractors[0].feature_dim();
        let mut out = Array2::zeros((n, self.k() * fd));
        for (k, e) in self.extractors.iter().enumerate() {
            let feats = forward_features(e, b)?;
            for r in 0..n {
                for j in 0..fd {
                    out[(r, k * fd + j)] = feats[(r, j)];
                }
            }
        }
        Ok(out)
    }
}

/// Run-level training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// One policy per branch for ensemble variants; single-model variants
    /// take their policy from the variant itself.
    pub policies: Vec<AugPolicy>,
    /// Pretraining epochs (N).
    pub pretrain_epochs: usize,
    /// Classifier-phase epochs (M).
    pub classifier_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        for p in &self.policies {
            p.validate()?;
        }
        Ok(())
    }
}

/// Per-epoch traces of one training phase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epoch_losses: Vec<f64>,
    /// Validation accuracy after each epoch; empty when no validation set
    /// was supplied.
    pub valid_accuracy: Vec<f64>,
}

fn batch_order(n: usize, unit_seed: u64, phase: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_from(unit_seed, &[stream::SHUFFLE, phase, epoch as u64]);
    order.shuffle(&mut rng);
    order
}

fn accuracy_of_probs(probs: &Array2<f64>, b: &LabeledBatch) -> f64 {
    let mut correct = 0usize;
    for (r, label) in b.labels().iter().enumerate() {
        let mut best = 0;
        for c in 0..probs.ncols() {
            if probs[(r, c)] > probs[(r, best)] {
                best = c;
            }
        }
        if best == label.argmax() {
            correct += 1;
        }
    }
    correct as f64 / b.len() as f64
}

/// Trains one branch in place for `epochs` epochs: every mini-batch is run
/// through the policy (when given), then one Adam step on the head's loss.
#[allow(clippy::too_many_arguments)]
fn run_branch_phase(
    branch: &mut Branch,
    adam: &mut AdamState,
    data: &LabeledBatch,
    valid: Option<&LabeledBatch>,
    policy: Option<&AugPolicy>,
    epochs: usize,
    cfg: &TrainConfig,
    unit_seed: u64,
    phase: u64,
) -> Result<TrainTrace> {
    let mut trace = TrainTrace::default();
    for epoch in 0..epochs {
        let order = batch_order(data.len(), unit_seed, phase, epoch);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut batch = data.select(chunk)?;
            if let Some(pol) = policy {
                let mut aug_rng = rng_from(
                    unit_seed,
                    &[stream::AUGMENT, phase, epoch as u64, batch_idx as u64],
                );
                batch = apply_policy(&batch, pol, &mut aug_rng)?;
            }
            let out = backward(&branch.extractor, &branch.head, &batch)?;
            epoch_loss += out.loss;
            batches += 1;
            let mut params = branch.extractor.param_groups_mut();
            params.extend(branch.head.param_groups_mut());
            let mut grads = match out.extractor_grad.as_ref() {
                Some(eg) => eg.groups(),
                None => Vec::new(),
            };
            grads.extend(out.classifier_grad.groups());
            adam.step(&mut params, &grads)?;
        }
        trace.epoch_losses.push(epoch_loss / batches.max(1) as f64);
        if let Some(v) = valid {
            trace.valid_accuracy.push(accuracy_of_probs(&branch.predict(v)?, v));
        }
    }
    Ok(trace)
}

/// Initializes and trains a standalone `(E, C)` model.
pub fn train_single(
    data: &LabeledBatch,
    valid: Option<&LabeledBatch>,
    model_cfg: &ModelConfig,
    policy: Option<&AugPolicy>,
    epochs: usize,
    cfg: &TrainConfig,
    unit_seed: u64,
) -> Result<(Branch, TrainTrace)> {
    cfg.validate()?;
    let mut branch = Branch::init(model_cfg, data.channels(), unit_seed)?;
    let mut adam = AdamState::new(cfg.lr);
    let trace = run_branch_phase(
        &mut branch,
        &mut adam,
        data,
        valid,
        policy,
        epochs,
        cfg,
        unit_seed,
        0,
    )?;
    Ok((branch, trace))
}

/// Pretrains branch k on data augmented by `cfg.policies[k]` for
/// `cfg.pretrain_epochs` epochs. Branch seeds derive from `(seed, k)`, so
/// results do not depend on the other branches.
pub fn pretrain_branch(
    k: usize,
    data: &LabeledBatch,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(Branch, TrainTrace)> {
    let policy = cfg.policies.get(k).ok_or_else(|| {
        Error::InvalidConfig(format!("no policy for branch {k} ({} given)", cfg.policies.len()))
    })?;
    train_single(
        data,
        None,
        model_cfg,
        Some(policy),
        cfg.pretrain_epochs,
        cfg,
        derive_seed(cfg.seed, &[stream::BRANCH, k as u64]),
    )
}

/// Trains the combined classifier on clean data through the frozen
/// extractors. Errors if any extractor is still trainable; never touches the
/// augmentation path.
pub fn train_combined_classifier(
    model: &mut EnsembleModel,
    data: &LabeledBatch,
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    model.validate()?;
    cfg.validate()?;
    if let Some(k) = model.extractors.iter().position(|e| !e.is_frozen()) {
        return Err(Error::ContractViolation(format!(
            "extractor {k} must be frozen before the classifier phase"
        )));
    }
    let unit_seed = derive_seed(cfg.seed, &[stream::COMBINED]);
    let mut adam = AdamState::new(cfg.lr);
    let mut trace = TrainTrace::default();
    for epoch in 0..cfg.classifier_epochs {
        let order = batch_order(data.len(), unit_seed, 0, epoch);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(chunk)?;
            let feats = model.concat_features(&batch)?;
            let (_, probs) = forward_logits(&model.combined, &feats)?;
            let targets = targets_of(&batch);
            epoch_loss += soft_cross_entropy(&probs, &targets)?;
            batches += 1;
            let dlogits = cross_entropy_logit_grad(&probs, &targets);
            let (grad, _) = classifier_backward(&model.combined, &feats, &dlogits);
            let mut params = model.combined.param_groups_mut();
            adam.step(&mut params, &grad.groups())?;
        }
        trace.epoch_losses.push(epoch_loss / batches.max(1) as f64);
    }
    Ok(trace)
}

/// Probabilities and winning class ids through the frozen extractors and the
/// combined classifier. The heads play no part in prediction.
pub fn predict(model: &EnsembleModel, b: &LabeledBatch) -> Result<(Array2<f64>, Vec<usize>)> {
    model.validate()?;
    let feats = model.concat_features(b)?;
    let (_, probs) = forward_logits(&model.combined, &feats)?;
    let ids = argmax_rows(&probs);
    Ok((probs, ids))
}

fn argmax_rows(probs: &Array2<f64>) -> Vec<usize> {
    (0..probs.nrows())
        .map(|r| {
            let mut best = 0;
            for c in 0..probs.ncols() {
                if probs[(r, c)] > probs[(r, best)] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Full two-phase training: pretrain all branches, freeze the extractors,
/// then fit a freshly initialized combined classifier on clean data.
pub fn train_dar_ffe(
    data: &LabeledBatch,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(EnsembleModel, Vec<TrainTrace>, TrainTrace)> {
    cfg.validate()?;
    if cfg.policies.is_empty() {
        return Err(Error::InvalidConfig("dar-ffe needs at least one policy".into()));
    }
    let k = cfg.policies.len();
    let mut extractors = Vec::with_capacity(k);
    let mut heads = Vec::with_capacity(k);
    let mut traces = Vec::with_capacity(k);
    for branch_idx in 0..k {
        let (branch, trace) = pretrain_branch(branch_idx, data, model_cfg, cfg)?;
        let mut extractor = branch.extractor;
        extractor.freeze();
        extractors.push(extractor);
        heads.push(branch.head);
        traces.push(trace);
    }
    let mut combined_rng = rng_from(derive_seed(cfg.seed, &[stream::COMBINED]), &[stream::INIT]);
    let combined = Classifier::init(
        k * model_cfg.feature_dim(),
        model_cfg.num_classes,
        &mut combined_rng,
    )?;
    let mut model = EnsembleModel {
        extractors,
        heads,
        combined,
    };
    let classifier_trace = train_combined_classifier(&mut model, data, cfg)?;
    Ok((model, traces, classifier_trace))
}

/// Single joint phase: every branch sees the shared batch augmented by its
/// own policy, features are concatenated, and the loss on the combined
/// classifier drives gradients into all extractors at once. One shared coin
/// per batch keeps the per-branch batches aligned; targets are the mean of
/// the per-branch mixed labels (cross-entropy is linear in the target). The
/// heads stay at initialization.
pub fn train_simple_ensemble(
    data: &LabeledBatch,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(EnsembleModel, TrainTrace)> {
    cfg.validate()?;
    if cfg.policies.is_empty() {
        return Err(Error::InvalidConfig(
            "simple ensemble needs at least one policy".into(),
        ));
    }
    let apply_prob = cfg.policies[0].apply_prob;
    if cfg.policies.iter().any(|p| p.apply_prob != apply_prob) {
        return Err(Error::InvalidConfig(
            "joint training shares one coin per batch; all policies must use the same apply probability"
                .into(),
        ));
    }
    let k = cfg.policies.len();
    let fd = model_cfg.feature_dim();
    let mut extractors = Vec::with_capacity(k);
    let mut heads = Vec::with_capacity(k);
    for branch_idx in 0..k {
        let branch = Branch::init(
            model_cfg,
            data.channels(),
            derive_seed(cfg.seed, &[stream::BRANCH, branch_idx as u64]),
        )?;
        extractors.push(branch.extractor);
        heads.push(branch.head);
    }
    let joint_seed = derive_seed(cfg.seed, &[stream::COMBINED]);
    let mut combined_rng = rng_from(joint_seed, &[stream::INIT]);
    let combined = Classifier::init(k * fd, model_cfg.num_classes, &mut combined_rng)?;
    let mut model = EnsembleModel {
        extractors,
        heads,
        combined,
    };
    model.validate()?;

    let mut adam = AdamState::new(cfg.lr);
    let mut trace = TrainTrace::default();
    for epoch in 0..cfg.pretrain_epochs {
        let order = batch_order(data.len(), joint_seed, 1, epoch);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let base = data.select(chunk)?;
            let mut coin_rng = rng_from(
                joint_seed,
                &[stream::AUGMENT, epoch as u64, batch_idx as u64],
            );
            let coin: f64 = rand::Rng::random_range(&mut coin_rng, 0.0..1.0);
            let branch_batches: Vec<LabeledBatch> = if coin < apply_prob {
                let mut out = Vec::with_capacity(k);
                for (branch_idx, policy) in cfg.policies.iter().enumerate() {
                    let mut aug_rng = rng_from(
                        joint_seed,
                        &[
                            stream::AUGMENT,
                            branch_idx as u64 + 1,
                            epoch as u64,
                            batch_idx as u64,
                        ],
                    );
                    let augmented = apply_steps(&base, &policy.steps, &mut aug_rng)?;
                    out.push(base.concat(&augmented)?);
                }
                out
            } else {
                vec![base.clone(); k]
            };

            let n = branch_batches[0].len();
            let mut feats = Array2::zeros((n, k * fd));
            let mut caches = Vec::with_capacity(k);
            for (branch_idx, batch) in branch_batches.iter().enumerate() {
                let (f, c) = forward_features_cached(&model.extractors[branch_idx], batch)?;
                for r in 0..n {
                    for j in 0..fd {
                        feats[(r, branch_idx * fd + j)] = f[(r, j)];
                    }
                }
                caches.push(c);
            }
            // Mean of the per-branch targets.
            let mut targets = targets_of(&branch_batches[0]);
            for batch in &branch_batches[1..] {
                targets = targets + targets_of(batch);
            }
            targets /= k as f64;

            let (_, probs) = forward_logits(&model.combined, &feats)?;
            epoch_loss += soft_cross_entropy(&probs, &targets)?;
            batches += 1;
            let dlogits = cross_entropy_logit_grad(&probs, &targets);
            let (cls_grad, dfeats) = classifier_backward(&model.combined, &feats, &dlogits);

            let mut extractor_grads = Vec::with_capacity(k);
            for (branch_idx, (extractor, cache)) in
                model.extractors.iter().zip(&caches).enumerate()
            {
                let slice = dfeats
                    .slice(ndarray::s![.., branch_idx * fd..(branch_idx + 1) * fd])
                    .to_owned();
                let grad = extractor_backward(extractor, cache, &slice)
                    .expect("extractors are trainable in the joint phase");
                extractor_grads.push(grad);
            }

            let mut params = Vec::new();
            for e in model.extractors.iter_mut() {
                params.extend(e.param_groups_mut());
            }
            params.extend(model.combined.param_groups_mut());
            let mut grads = Vec::new();
            for g in &extractor_grads {
                grads.extend(g.groups());
            }
            grads.extend(cls_grad.groups());
            adam.step(&mut params, &grads)?;
        }
        trace.epoch_losses.push(epoch_loss / batches.max(1) as f64);
    }
    Ok((model, trace))
}

/// Training pipeline selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    None,
    Rotation,
    RotMixup,
    RotRicap,
    RotOctmix,
    SimpleEnsemble,
    DarFfeSingle,
    DarFfeEnsemble,
    /// Comparison variant: pretrain with augmentation, then keep training the
    /// whole single model (no freezing) on clean data.
    DarRetrain,
}

impl Variant {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "none" => Ok(Self::None),
            "rotation" => Ok(Self::Rotation),
            "rot-mixup" => Ok(Self::RotMixup),
            "rot-ricap" => Ok(Self::RotRicap),
            "rot-octmix" => Ok(Self::RotOctmix),
            "simple-ensemble" => Ok(Self::SimpleEnsemble),
            "dar-ffe-single" => Ok(Self::DarFfeSingle),
            "dar-ffe-ensemble" => Ok(Self::DarFfeEnsemble),
            "dar-retrain" => Ok(Self::DarRetrain),
            other => Err(Error::UnknownVariant(format!(
                "{other} (expected one of: none, rotation, rot-mixup, rot-ricap, rot-octmix, \
                 simple-ensemble, dar-ffe-single, dar-ffe-ensemble, dar-retrain)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Rotation => "rotation",
            Self::RotMixup => "rot-mixup",
            Self::RotRicap => "rot-ricap",
            Self::RotOctmix => "rot-octmix",
            Self::SimpleEnsemble => "simple-ensemble",
            Self::DarFfeSingle => "dar-ffe-single",
            Self::DarFfeEnsemble => "dar-ffe-ensemble",
            Self::DarRetrain => "dar-retrain",
        }
    }
}

/// Either a plain single model or the full ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Single(Branch),
    Ensemble(EnsembleModel),
}

impl TrainedModel {
    pub fn predict(&self, b: &LabeledBatch) -> Result<(Array2<f64>, Vec<usize>)> {
        match self {
            TrainedModel::Single(branch) => {
                let probs = branch.predict(b)?;
                let ids = argmax_rows(&probs);
                Ok((probs, ids))
            }
            TrainedModel::Ensemble(model) => predict(model, b),
        }
    }
}

/// Train/valid/test batches of one trial.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train: LabeledBatch,
    pub valid: LabeledBatch,
    pub test: LabeledBatch,
}

/// Outcome of one trial: the trained model, one report per split, the
/// policies actually used, and the per-epoch validation accuracy trace of
/// single-model variants.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub model: TrainedModel,
    pub reports: Vec<TrialReport>,
    pub policy_descriptions: Vec<String>,
    pub valid_trace: Vec<f64>,
}

/// Report of one model on one batch.
pub fn evaluate_model(
    model: &TrainedModel,
    b: &LabeledBatch,
    trial_id: usize,
    split: &str,
) -> Result<TrialReport> {
    let (_, predicted) = model.predict(b)?;
    let truths: Vec<usize> = b.labels().iter().map(|l| l.argmax()).collect();
    let cm = ConfusionMatrix::from_predictions(&truths, &predicted, b.num_classes())?;
    TrialReport::from_confusion(trial_id, split, cm)
}

/// Default ensemble policies: rotation overlaid with octave mix, and rotation
/// overlaid with mixup.
pub fn default_ensemble_policies() -> Vec<AugPolicy> {
    vec![AugPolicy::rotation_octave_mix(), AugPolicy::rotation_mixup()]
}

fn single_policy_for(variant: Variant) -> Option<AugPolicy> {
    match variant {
        Variant::None => None,
        Variant::Rotation => Some(AugPolicy {
            steps: vec![crate::augment::AugStep::Rotation],
            apply_prob: 0.5,
        }),
        Variant::RotMixup => Some(AugPolicy::rotation_mixup()),
        Variant::RotRicap => Some(AugPolicy::rotation_ricap()),
        Variant::RotOctmix => Some(AugPolicy::rotation_octave_mix()),
        _ => None,
    }
}

/// Runs one trial of the requested variant on already-split data.
pub fn run_experiment(
    variant: Variant,
    data: &SplitData,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    trial_id: usize,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    let (model, policy_descriptions, valid_trace) = match variant {
        Variant::None
        | Variant::Rotation
        | Variant::RotMixup
        | Variant::RotRicap
        | Variant::RotOctmix => {
            let policy = single_policy_for(variant);
            let (branch, trace) = train_single(
                &data.train,
                Some(&data.valid),
                model_cfg,
                policy.as_ref(),
                cfg.pretrain_epochs,
                cfg,
                derive_seed(cfg.seed, &[stream::BRANCH, 0]),
            )?;
            let descriptions = vec![policy.map_or_else(|| "none".to_string(), |p| p.describe())];
            (TrainedModel::Single(branch), descriptions, trace.valid_accuracy)
        }
        Variant::DarRetrain => {
            let policy = cfg
                .policies
                .first()
                .cloned()
                .unwrap_or_else(AugPolicy::rotation_octave_mix);
            let unit_seed = derive_seed(cfg.seed, &[stream::BRANCH, 0]);
            let mut branch = Branch::init(model_cfg, data.train.channels(), unit_seed)?;
            let mut adam = AdamState::new(cfg.lr);
            let mut trace = run_branch_phase(
                &mut branch,
                &mut adam,
                &data.train,
                Some(&data.valid),
                Some(&policy),
                cfg.pretrain_epochs,
                cfg,
                unit_seed,
                0,
            )?;
            let clean = run_branch_phase(
                &mut branch,
                &mut adam,
                &data.train,
                Some(&data.valid),
                None,
                cfg.classifier_epochs,
                cfg,
                unit_seed,
                1,
            )?;
            trace.valid_accuracy.extend(clean.valid_accuracy);
            (
                TrainedModel::Single(branch),
                vec![policy.describe()],
                trace.valid_accuracy,
            )
        }
        Variant::DarFfeSingle => {
            let mut cfg = cfg.clone();
            if cfg.policies.is_empty() {
                cfg.policies = vec![AugPolicy::rotation_octave_mix()];
            }
            cfg.policies.truncate(1);
            let descriptions = cfg.policies.iter().map(AugPolicy::describe).collect();
            let (model, _, _) = train_dar_ffe(&data.train, model_cfg, &cfg)?;
            (TrainedModel::Ensemble(model), descriptions, Vec::new())
        }
        Variant::DarFfeEnsemble => {
            let mut cfg = cfg.clone();
            if cfg.policies.is_empty() {
                cfg.policies = default_ensemble_policies();
            }
            let descriptions = cfg.policies.iter().map(AugPolicy::describe).collect();
            let (model, _, _) = train_dar_ffe(&data.train, model_cfg, &cfg)?;
            (TrainedModel::Ensemble(model), descriptions, Vec::new())
        }
        Variant::SimpleEnsemble => {
            let mut cfg = cfg.clone();
            if cfg.policies.is_empty() {
                cfg.policies = default_ensemble_policies();
            }
            let descriptions = cfg.policies.iter().map(AugPolicy::describe).collect();
            let (model, _) = train_simple_ensemble(&data.train, model_cfg, &cfg)?;
            (TrainedModel::Ensemble(model), descriptions, Vec::new())
        }
    };
    let reports = vec![
        evaluate_model(&model, &data.train, trial_id, "train")?,
        evaluate_model(&model, &data.valid, trial_id, "valid")?,
        evaluate_model(&model, &data.test, trial_id, "test")?,
    ];
    Ok(ExperimentOutcome {
        model,
        reports,
        policy_descriptions,
        valid_trace,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    frozen: bool,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    kind: String,
    model: ModelConfig,
    input_channels: usize,
    num_branches: usize,
    params: Vec<ParamRecord>,
}

fn tensor_of_1d(a: &Array1<f64>) -> ArrayD<f64> {
    a.clone().into_dyn()
}

fn tensor_of_2d(a: &Array2<f64>) -> ArrayD<f64> {
    a.clone().into_dyn()
}

fn tensor_of_3d(a: &Array3<f64>) -> ArrayD<f64> {
    a.clone().into_dyn()
}

fn push_extractor_params(
    records: &mut Vec<(String, ArrayD<f64>, bool)>,
    prefix: &str,
    e: &FeatureExtractor,
) {
    for (i, block) in e.blocks().iter().enumerate() {
        records.push((
            format!("{prefix}.block_{i}.weight"),
            tensor_of_3d(&block.weight),
            e.is_frozen(),
        ));
        records.push((
            format!("{prefix}.block_{i}.bias"),
            tensor_of_1d(&block.bias),
            e.is_frozen(),
        ));
    }
}

fn push_classifier_params(
    records: &mut Vec<(String, ArrayD<f64>, bool)>,
    prefix: &str,
    c: &Classifier,
) {
    records.push((format!("{prefix}.weight"), tensor_of_2d(&c.weight), false));
    records.push((format!("{prefix}.bias"), tensor_of_1d(&c.bias), false));
}

/// Saves a trained model as one tensor container per parameter plus a JSON
/// manifest listing names, shapes, and freeze flags.
pub fn save_model(dir: &Path, model: &TrainedModel, model_cfg: &ModelConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut records: Vec<(String, ArrayD<f64>, bool)> = Vec::new();
    let (kind, input_channels, num_branches) = match model {
        TrainedModel::Single(branch) => {
            push_extractor_params(&mut records, "extractor_0", &branch.extractor);
            push_classifier_params(&mut records, "head_0", &branch.head);
            ("single", branch.extractor.input_channels(), 1)
        }
        TrainedModel::Ensemble(m) => {
            for (k, e) in m.extractors.iter().enumerate() {
                push_extractor_params(&mut records, &format!("extractor_{k}"), e);
            }
            for (k, h) in m.heads.iter().enumerate() {
                push_classifier_params(&mut records, &format!("head_{k}"), h);
            }
            push_classifier_params(&mut records, "combined", &m.combined);
            ("ensemble", m.extractors[0].input_channels(), m.k())
        }
    };
    let mut params = Vec::with_capacity(records.len());
    for (name, tensor, frozen) in &records {
        let file = format!("{name}.tensor");
        write_tensor(&dir.join(&file), tensor, DType::F64)?;
        params.push(ParamRecord {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            frozen: *frozen,
            file,
        });
    }
    let manifest = ModelManifest {
        kind: kind.to_string(),
        model: model_cfg.clone(),
        input_channels,
        num_branches,
        params,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Parse(format!("manifest encode: {e}")))?;
    fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

fn load_named(dir: &Path, manifest: &ModelManifest, name: &str) -> Result<ArrayD<f64>> {
    let record = manifest
        .params
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::Parse(format!("model manifest misses parameter {name}")))?;
    let tensor = read_tensor(&dir.join(&record.file))?;
    if tensor.shape() != record.shape.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "parameter {name}: file shape {:?} vs manifest {:?}",
            tensor.shape(),
            record.shape
        )));
    }
    Ok(tensor)
}

fn load_extractor(
    dir: &Path,
    manifest: &ModelManifest,
    prefix: &str,
) -> Result<FeatureExtractor> {
    let mut rng = rng_from(0, &[]);
    let mut extractor =
        FeatureExtractor::init(&manifest.model, manifest.input_channels, &mut rng)?;
    let mut frozen = false;
    for i in 0..manifest.model.num_blocks() {
        let w = load_named(dir, manifest, &format!("{prefix}.block_{i}.weight"))?;
        let b = load_named(dir, manifest, &format!("{prefix}.block_{i}.bias"))?;
        frozen = manifest
            .params
            .iter()
            .find(|p| p.name == format!("{prefix}.block_{i}.weight"))
            .map(|p| p.frozen)
            .unwrap_or(false);
        let block = &mut extractor.blocks_mut()[i];
        block.weight = w
            .into_dimensionality::<ndarray::Ix3>()
            .map_err(|e| Error::ShapeMismatch(format!("{prefix} block {i} weight: {e}")))?;
        block.bias = b
            .into_dimensionality::<ndarray::Ix1>()
            .map_err(|e| Error::ShapeMismatch(format!("{prefix} block {i} bias: {e}")))?;
    }
    if frozen {
        extractor.freeze();
    }
    Ok(extractor)
}

fn load_classifier(dir: &Path, manifest: &ModelManifest, prefix: &str) -> Result<Classifier> {
    let w = load_named(dir, manifest, &format!("{prefix}.weight"))?
        .into_dimensionality::<ndarray::Ix2>()
        .map_err(|e| Error::ShapeMismatch(format!("{prefix} weight: {e}")))?;
    let b = load_named(dir, manifest, &format!("{prefix}.bias"))?
        .into_dimensionality::<ndarray::Ix1>()
        .map_err(|e| Error::ShapeMismatch(format!("{prefix} bias: {e}")))?;
    Ok(Classifier { weight: w, bias: b })
}

/// Loads a model saved by [`save_model`].
pub fn load_model(dir: &Path) -> Result<(TrainedModel, ModelConfig)> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: ModelManifest =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("model manifest: {e}")))?;
    manifest.model.validate()?;
    let model = match manifest.kind.as_str() {
        "single" => TrainedModel::Single(Branch {
            extractor: load_extractor(dir, &manifest, "extractor_0")?,
            head: load_classifier(dir, &manifest, "head_0")?,
        }),
        "ensemble" => {
            let mut extractors = Vec::with_capacity(manifest.num_branches);
            let mut heads = Vec::with_capacity(manifest.num_branches);
            for k in 0..manifest.num_branches {
                extractors.push(load_extractor(dir, &manifest, &format!("extractor_{k}"))?);
                heads.push(load_classifier(dir, &manifest, &format!("head_{k}"))?);
            }
            let combined = load_classifier(dir, &manifest, "combined")?;
            let model = EnsembleModel {
                extractors,
                heads,
                combined,
            };
            model.validate()?;
            TrainedModel::Ensemble(model)
        }
        other => {
            return Err(Error::Parse(format!("unknown model kind {other:?}")));
        }
    };
    Ok((model, manifest.model))
}
