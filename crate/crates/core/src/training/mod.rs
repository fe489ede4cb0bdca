//! Objective, modality batch mixing, per-fold training with early stopping
//! and stratified cross-validation.

mod objective;

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::AdamState;
use crate::data::{class_weights, stratified_folds, Dimension, FoldSplit, Standardizer, SubjectData};
use crate::error::{Error, Result};
use crate::model::{Model, ModelDims, ParamGroup};
use crate::rng::{derive_seed, stream};

pub use objective::{compute_objective, mix_domain_batch, mix_indices, LossBundle, Objective};

const PURPOSE_SHUFFLE: u64 = 200;
const PURPOSE_MIX: u64 = 201;
const PURPOSE_VAL_MIX: u64 = 202;
const PURPOSE_FOLD: u64 = 203;
const PURPOSE_INNER: u64 = 204;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lambdas {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda11: f64,
    pub lambda12: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.5,
            lambda11: 1.0,
            lambda12: 1.0,
        }
    }
}

/// What the discriminator sees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixMode {
    /// Half the pairs contribute their EEG embedding, the other half their
    /// music embedding; the target is the source modality (music = 1).
    #[default]
    Modality,
    /// Every pair contributes `u ∘ v`; half the pairs have their music
    /// partner permuted. The target is "matched pair" (= 1).
    Mismatch,
}

/// Where the early-stopping validation loss comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationSplit {
    /// The held-out test fold.
    #[default]
    Heldout,
    /// One stratified fifth of the training trials; the test fold stays
    /// unseen until evaluation.
    Inner,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lambdas: Lambdas,
    pub lambda_grl: f64,
    /// Discriminator learning rate as a multiple of `learning_rate`.
    pub disc_lr_scale: f64,
    /// `false` drops `ell_b` from the objective.
    pub music_supervision: bool,
    /// `false` drops the discriminator and `ell_dd`.
    pub domain_discriminator: bool,
    pub mix_mode: MixMode,
    pub validation: ValidationSplit,
    pub folds: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            patience: 15,
            max_epochs: 300,
            batch_size: 32,
            lambdas: Lambdas::default(),
            lambda_grl: 1.0,
            disc_lr_scale: 1.0,
            music_supervision: true,
            domain_discriminator: true,
            mix_mode: MixMode::Modality,
            validation: ValidationSplit::Heldout,
            folds: 5,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(Error::invalid("patience must be >= 1"));
        }
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "batch_size must be even and >= 2, got {}",
                self.batch_size
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be >= 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and >= 0"));
        }
        let l = self.lambdas;
        if !(self.disc_lr_scale > 0.0 && self.disc_lr_scale.is_finite()) {
            return Err(Error::invalid("disc_lr_scale must be finite and > 0"));
        }
        if [l.lambda1, l.lambda2, l.lambda11, l.lambda12, self.lambda_grl]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::invalid("lambdas must be finite and >= 0"));
        }
        if self.folds < 2 {
            return Err(Error::invalid("folds must be >= 2"));
        }
        Ok(())
    }

    /// Lambdas after the ablation switches.
    pub fn effective_lambdas(&self) -> Lambdas {
        let mut l = self.lambdas;
        if !self.music_supervision {
            l.lambda12 = 0.0;
        }
        if !self.domain_discriminator {
            l.lambda2 = 0.0;
        }
        l
    }

    /// Whether a parameter group can receive gradient under this config.
    pub fn trains(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::EegBranch | ParamGroup::Classifier => true,
            ParamGroup::MusicBranch => self.music_supervision || self.domain_discriminator,
            ParamGroup::Discriminator => self.domain_discriminator,
        }
    }
}

/// One aligned, standardized training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub eeg: Vec<f64>,
    pub music: Vec<f64>,
    pub label: u8,
    pub trial_id: u16,
    pub track_id: u16,
    pub segment_index: usize,
}

/// Examples of the given trials, EEG standardized with `st`.
pub fn prepare(subject: &SubjectData, trials: &[u16], dim: Dimension, st: &Standardizer) -> Vec<Example> {
    let mut out = Vec::new();
    for t in subject.trials.iter().filter(|t| trials.contains(&t.trial_id)) {
        for inst in t.instances(dim) {
            out.push(Example {
                eeg: st.apply(&inst.eeg.values),
                music: inst.music.to_vec(),
                label: inst.label,
                trial_id: inst.trial_id,
                track_id: inst.track_id,
                segment_index: inst.segment_index,
            });
        }
    }
    out
}

/// Per-epoch record; also emitted as a key=value log line.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossBundle,
    pub val_j: f64,
    /// Discriminator accuracy on the epoch's mixed training batches.
    pub modality_acc: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub fold: usize,
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val: f64,
    pub stopped_epoch: usize,
    pub stop_reason: StopReason,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Waiting,
    Stop,
}

/// Stops once the validation loss has not decreased for `patience`
/// consecutive epochs.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val: f64) -> Progress {
        if val < self.best {
            self.best = val;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            Progress::Improved
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                Progress::Stop
            } else {
                Progress::Waiting
            }
        }
    }
}

/// Total `J` over `set` in fixed batches, mixing seeded per batch index so
/// successive epochs are comparable.
pub fn evaluate_objective(
    model: &Model,
    set: &[Example],
    config: &TrainConfig,
    weights: [f64; 2],
    seed: u64,
) -> Result<LossBundle> {
    let refs: Vec<&Example> = set.iter().collect();
    let mut acc = LossBundle::zero(config.effective_lambdas());
    let mut n = 0usize;
    for (b, batch) in refs.chunks(config.batch_size).enumerate() {
        let mut g = crate::autodiff::Graph::new();
        let bound = model.bind_frozen(&mut g);
        let obj = compute_objective(model, &mut g, &bound, batch, config, weights, derive_seed(seed, PURPOSE_VAL_MIX, b as u64, 0))?;
        acc.accumulate(&obj.bundle, batch.len());
        n += batch.len();
    }
    Ok(acc.averaged(n))
}

/// Output of `train_fold`: best-validation parameters and the log.
#[derive(Clone, Debug)]
pub struct FoldTraining {
    pub model: Model,
    pub report: TrainReport,
}

/// Adam on `J` over shuffled mini-batches with early stopping on the
/// validation `J`. Returns the parameters of the best validation epoch.
pub fn train_fold(
    init: Model,
    train: &[Example],
    val: &[Example],
    config: &TrainConfig,
    fold: usize,
    seed: u64,
) -> Result<FoldTraining> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("train_fold needs non-empty train and validation sets"));
    }
    let labels: Vec<u8> = train.iter().map(|e| e.label).collect();
    let weights = class_weights(&labels);
    let mut model = init;
    let mut adam = AdamState::new(&model.params);
    let lr_scale: Vec<f64> = (0..model.params.len())
        .map(|i| match model.group(i) {
            g if !config.trains(g) => 0.0,
            ParamGroup::Discriminator => config.disc_lr_scale,
            _ => 1.0,
        })
        .collect();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stop_reason = StopReason::MaxEpochs;
    let started = Instant::now();

    for epoch in 1..=config.max_epochs {
        let mut rng = stream(seed, PURPOSE_SHUFFLE, epoch as u64, 0);
        order.shuffle(&mut rng);
        let mut acc = LossBundle::zero(config.effective_lambdas());
        let (mut hits, mut mixed) = (0usize, 0usize);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train[i]).collect();
            let mut g = crate::autodiff::Graph::new();
            let bound = model.bind(&mut g);
            let mix_seed = derive_seed(seed, PURPOSE_MIX, epoch as u64, b as u64);
            let obj = compute_objective(&model, &mut g, &bound, &batch, config, weights, mix_seed)?;
            let bl = obj.bundle;
            if !bl.j.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    ell_a: bl.ell_a,
                    ell_b: bl.ell_b,
                    ell_dd: bl.ell_dd,
                });
            }
            let mut grads = g.backward(obj.j)?;
            let grads: Vec<_> = bound.vars.iter().map(|&v| grads.take(v)).collect();
            adam.step_scaled(&mut model.params, &grads, config.learning_rate, |i| lr_scale[i])?;
            acc.accumulate(&bl, batch.len());
            hits += obj.modality_correct;
            mixed += obj.modality_total;
        }
        let modality_acc = (mixed > 0).then(|| hits as f64 / mixed as f64);
        let train_bundle = acc.averaged(train.len());
        let val_j = evaluate_objective(&model, val, config, weights, seed)?.j;
        if !val_j.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                ell_a: f64::NAN,
                ell_b: f64::NAN,
                ell_dd: f64::NAN,
            });
        }
        log::info!(
            "event=epoch fold={fold} epoch={epoch} ell_a={:.6} ell_b={:.6} ell_dd={:.6} J={:.6} val_J={:.6} modality_acc={}",
            train_bundle.ell_a,
            train_bundle.ell_b,
            train_bundle.ell_dd,
            train_bundle.j,
            val_j,
            modality_acc.map_or("na".to_string(), |a| format!("{a:.4}"))
        );
        epochs.push(EpochLog {
            epoch,
            train: train_bundle,
            val_j,
            modality_acc,
        });
        match stopper.observe(epoch, val_j) {
            Progress::Improved => best = model.clone(),
            Progress::Waiting => {}
            Progress::Stop => {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }
    let stopped_epoch = epochs.len();
    log::info!(
        "event=fold_done fold={fold} best_epoch={} stopped_epoch={stopped_epoch} best_val_J={:.6} wall_s={:.2}",
        stopper.best_epoch,
        stopper.best,
        started.elapsed().as_secs_f64()
    );
    Ok(FoldTraining {
        model: best,
        report: TrainReport {
            fold,
            epochs,
            best_epoch: stopper.best_epoch,
            best_val: stopper.best,
            stopped_epoch,
            stop_reason,
        },
    })
}

/// One trained fold with everything evaluation needs.
#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub train_trials: Vec<u16>,
    pub test_trials: Vec<u16>,
    pub standardizer: Standardizer,
    pub model: Model,
    pub report: TrainReport,
}

#[derive(Clone, Debug)]
pub struct CrossValidation {
    pub subject_id: u16,
    pub dimension: Dimension,
    pub split: FoldSplit,
    pub folds: Vec<FoldResult>,
}

/// Seed of fold `fold` of `subject`; independent of the order folds run in.
pub fn fold_seed(seed: u64, subject: u16, fold: usize) -> u64 {
    derive_seed(seed, PURPOSE_FOLD, subject as u64, fold as u64)
}

/// Model dims with the data-determined sizes filled in.
pub fn dims_for(subject: &SubjectData, template: &ModelDims) -> ModelDims {
    ModelDims {
        channels: subject.channels(),
        features_per_channel: subject.features_per_channel(),
        music_dim: subject.music_dim(),
        ..template.clone()
    }
}

/// Train one fold of a precomputed split.
pub fn run_fold(
    subject: &SubjectData,
    dim: Dimension,
    split: &FoldSplit,
    fold: usize,
    template: &ModelDims,
    config: &TrainConfig,
) -> Result<FoldResult> {
    let seed = fold_seed(config.seed, subject.subject_id, fold);
    let test_trials = split.test_trials(fold);
    let mut train_trials = split.train_trials(fold);
    let val_trials = match config.validation {
        ValidationSplit::Heldout => test_trials.clone(),
        ValidationSplit::Inner => {
            let labelled: Vec<(u16, u8)> = subject
                .trials
                .iter()
                .filter(|t| train_trials.contains(&t.trial_id))
                .map(|t| (t.trial_id, t.label(dim)))
                .collect();
            let inner = stratified_folds(&labelled, 5, derive_seed(seed, PURPOSE_INNER, 0, 0))?;
            let val = inner.test_trials(0);
            train_trials.retain(|t| !val.contains(t));
            val
        }
    };
    let st = Standardizer::fit_features(
        subject
            .trials
            .iter()
            .filter(|t| train_trials.contains(&t.trial_id))
            .flat_map(|t| t.eeg.iter()),
    );
    let train = prepare(subject, &train_trials, dim, &st);
    let val = prepare(subject, &val_trials, dim, &st);
    let init = Model::init(dims_for(subject, template), seed)?;
    let trained = train_fold(init, &train, &val, config, fold, seed)?;
    Ok(FoldResult {
        fold,
        train_trials,
        test_trials,
        standardizer: st,
        model: trained.model,
        report: trained.report,
    })
}

/// Stratified trial-level folds of `subject` for `config.folds` and seed.
pub fn split_subject(subject: &SubjectData, dim: Dimension, config: &TrainConfig) -> Result<FoldSplit> {
    let labelled: Vec<(u16, u8)> = subject.trials.iter().map(|t| (t.trial_id, t.label(dim))).collect();
    stratified_folds(&labelled, config.folds, derive_seed(config.seed, PURPOSE_FOLD, subject.subject_id as u64, u64::MAX))
}

/// Stratified k-fold over trials; each fold standardizes on its own
/// training trials. Folds run on up to `jobs` threads.
pub fn cross_validate(
    subject: &SubjectData,
    dim: Dimension,
    template: &ModelDims,
    config: &TrainConfig,
    jobs: usize,
) -> Result<CrossValidation> {
    config.validate()?;
    subject.validate()?;
    let split = split_subject(subject, dim, config)?;
    let folds: Vec<usize> = (0..config.folds).collect();
    let results = parallel_map(&folds, jobs, |&f| run_fold(subject, dim, &split, f, template, config))?;
    Ok(CrossValidation {
        subject_id: subject.subject_id,
        dimension: dim,
        split,
        folds: results,
    })
}

/// Order-preserving map over `items` on up to `jobs` scoped threads.
pub fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    jobs: usize,
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<R>>> = (0..items.len()).map(|_| None).collect();
    let collected = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                collected.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every item processed")).collect()
}

/// Train only the discriminator on mixed batches of frozen embeddings and
/// report its accuracy on the same mixed batches.
pub fn modality_probe(
    model: &Model,
    set: &[Example],
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<f64> {
    let config = TrainConfig {
        lambdas: Lambdas {
            lambda1: 0.0,
            lambda2: 1.0,
            lambda11: 0.0,
            lambda12: 0.0,
        },
        lambda_grl: 0.0,
        music_supervision: false,
        ..TrainConfig::default()
    };
    let mut probe = model.clone();
    let mut adam = AdamState::new(&probe.params);
    let active: Vec<bool> = (0..probe.params.len())
        .map(|i| probe.group(i) == ParamGroup::Discriminator)
        .collect();
    // Embeddings are fixed, so compute them once.
    let (u, v) = embed_all(model, set)?;
    let mut order: Vec<usize> = (0..set.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut stream(seed, PURPOSE_SHUFFLE, epoch as u64, 1));
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let (z, labels) = mixed_rows(&u, &v, idx, derive_seed(seed, PURPOSE_MIX, epoch as u64, b as u64))?;
            let mut g = crate::autodiff::Graph::new();
            let bound = probe.bind(&mut g);
            let x = g.constant(z);
            let p = probe.discriminate(&mut g, &bound, x, 0.0)?;
            let target = crate::autodiff::Tensor::matrix(labels.len(), 1, labels.iter().map(|&y| y as f64).collect());
            let loss = g.bce(p, &target, None)?;
            let mut grads = g.backward(loss)?;
            let grads: Vec<_> = bound.vars.iter().map(|&v| grads.take(v)).collect();
            adam.step_where(&mut probe.params, &grads, learning_rate, |i| active[i])?;
        }
    }
    mixed_modality_accuracy(&probe, set, seed)
}

/// Accuracy of the model's own discriminator on mixed batches of `set`.
pub fn mixed_modality_accuracy(model: &Model, set: &[Example], seed: u64) -> Result<f64> {
    let (u, v) = embed_all(model, set)?;
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut correct = 0usize;
    let mut total = 0usize;
    for (b, chunk) in idx.chunks(32).enumerate() {
        let (z, labels) = mixed_rows(&u, &v, chunk, derive_seed(seed, PURPOSE_VAL_MIX, b as u64, 1))?;
        let p = model.discriminate_embeddings(&z)?;
        correct += p.iter().zip(&labels).filter(|(p, &y)| (**p > 0.5) == (y == 1)).count();
        total += labels.len();
    }
    Ok(correct as f64 / total as f64)
}

fn embed_all(model: &Model, set: &[Example]) -> Result<(crate::autodiff::Tensor, crate::autodiff::Tensor)> {
    let eeg: Vec<&[f64]> = set.iter().map(|e| e.eeg.as_slice()).collect();
    let music: Vec<&[f64]> = set.iter().map(|e| e.music.as_slice()).collect();
    let (u, _) = model.embed_eeg(&eeg)?;
    let v = model.embed_music(&music)?;
    Ok((u, v))
}

/// Modality-mixed rows for the examples `idx` (largest even prefix).
fn mixed_rows(
    u: &crate::autodiff::Tensor,
    v: &crate::autodiff::Tensor,
    idx: &[usize],
    seed: u64,
) -> Result<(crate::autodiff::Tensor, Vec<u8>)> {
    let n = idx.len() / 2 * 2;
    let d = u.cols();
    let (sel, labels) = mix_indices(n, seed)?;
    let mut data = Vec::with_capacity(n * d);
    for &s in &sel {
        let row = if s < n { u.row_slice(idx[s]) } else { v.row_slice(idx[s - n]) };
        data.extend_from_slice(row);
    }
    Ok((crate::autodiff::Tensor::matrix(n, d, data), labels))
}
