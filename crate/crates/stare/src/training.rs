//! Training loop and experiment plumbing: negative sampling for the binary
//! choice task, repeated train/test splits, validation-plateau learning-rate
//! decay, early stopping, and deterministic minibatch optimization.

use crate::error::{Error, Result};
use crate::gaze_data::{Dataset, Outcome};
use crate::model::{prepare_session, SessionInput, StareModel, Target, TaskKind};
use crate::nn::{GradStore, ParamStore};
use crate::rng;
use crate::roi_map::RoiMap;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Consecutive non-improving epochs before the learning rate is halved.
    pub plateau_epochs: usize,
    pub lr_decay: f64,
    pub lr_floor: f64,
    /// Fraction of the training set held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
    pub max_len: usize,
    /// Negatives sampled per positive for the binary choice task.
    pub negative_ratio: usize,
    /// Decoupled L2 weight decay applied at each optimizer step.
    pub weight_decay: f64,
    /// Probability of masking out each sequence position during training.
    /// Occupancy statistics survive the masking, session-specific
    /// fingerprints do not, which curbs memorization.
    pub fixation_dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-5,
            batch_size: 8,
            max_epochs: 1000,
            patience: 5,
            plateau_epochs: 2,
            lr_decay: 0.5,
            lr_floor: 1e-7,
            val_fraction: 0.1,
            seed: 0,
            max_len: 128,
            negative_ratio: 1,
            weight_decay: 0.0,
            fixation_dropout: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return Err(Error::Config("lr must be positive and decay in (0,1)".to_string()));
        }
        if self.batch_size == 0 || self.plateau_epochs == 0 {
            return Err(Error::Config("batch_size and plateau_epochs must be positive".to_string()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must be in [0,1)".to_string()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".to_string()));
        }
        if !(0.0..1.0).contains(&self.fixation_dropout) {
            return Err(Error::Config("fixation_dropout must be in [0,1)".to_string()));
        }
        Ok(())
    }
}

/// Tracks the best validation loss; `observe` returns true while training
/// should continue. Stops after `patience` epochs without improvement.
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    pub best_epoch: usize,
    since_best: usize,
    epoch: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> EarlyStopper {
        EarlyStopper { patience, best: f64::INFINITY, best_epoch: 0, since_best: 0, epoch: 0 }
    }

    /// Returns (improved, keep_going) for the epoch just finished.
    pub fn observe(&mut self, val_loss: f64) -> (bool, bool) {
        self.epoch += 1;
        let improved = val_loss < self.best;
        if improved {
            self.best = val_loss;
            self.best_epoch = self.epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        (improved, self.since_best < self.patience)
    }
}

/// Halves the learning rate after `plateau` consecutive non-improving
/// validation epochs, never below the floor.
pub struct LrScheduler {
    lr: f64,
    decay: f64,
    floor: f64,
    plateau: usize,
    best: f64,
    since_best: usize,
}

impl LrScheduler {
    pub fn new(lr: f64, decay: f64, floor: f64, plateau: usize) -> LrScheduler {
        LrScheduler { lr, decay, floor, plateau, best: f64::INFINITY, since_best: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Observe one epoch's validation loss and return the rate for the next
    /// epoch.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= self.plateau {
                self.lr = (self.lr * self.decay).max(self.floor);
                self.since_best = 0;
            }
        }
        self.lr
    }
}

/// Uniform negatives without replacement from the non-chosen candidates.
/// Sessions with nothing chosen still contribute one negative so every
/// session carries signal; a candidate pool smaller than the request yields
/// the whole pool.
pub fn sample_negatives(
    chosen: &BTreeSet<u32>,
    n_candidates: usize,
    ratio: usize,
    rng: &mut impl Rng,
) -> Vec<u32> {
    let pool: Vec<u32> =
        (0..n_candidates as u32).filter(|i| !chosen.contains(i)).collect();
    let want = (chosen.len() * ratio).max(1).min(pool.len());
    let mut pool = pool;
    pool.shuffle(rng);
    let mut picked: Vec<u32> = pool.into_iter().take(want).collect();
    picked.sort_unstable();
    picked
}

/// Build the training target for one outcome under the task, sampling
/// negatives where the task needs them.
pub fn make_target(
    outcome: &Outcome,
    task: TaskKind,
    n_candidates: usize,
    ratio: usize,
    rng: &mut impl Rng,
) -> Result<Target> {
    match task {
        TaskKind::ChoiceBinary => {
            let mut pairs: Vec<(u32, f64)> =
                outcome.chosen_roi_ids.iter().map(|&i| (i, 1.0)).collect();
            for neg in sample_negatives(&outcome.chosen_roi_ids, n_candidates, ratio, rng) {
                pairs.push((neg, 0.0));
            }
            Ok(Target::Choice(pairs))
        }
        TaskKind::ChoiceMulticlass => {
            let label = outcome.class_label.ok_or_else(|| {
                Error::Config(format!(
                    "session '{}' lacks a class label for the multiclass task",
                    outcome.session_id
                ))
            })?;
            Ok(Target::Class(label))
        }
        TaskKind::Count => Ok(Target::Count(outcome.item_count as f64)),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Repeated random subsampling: each repeat is an independent seeded
/// partition with |test| = round(test_fraction * n) and disjoint halves.
pub fn make_splits(n: usize, repeats: usize, test_fraction: f64, seed: u64) -> Result<Vec<Split>> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config("test_fraction must be in [0,1)".to_string()));
    }
    if n < 2 {
        return Err(Error::Config(format!("cannot split {n} sessions")));
    }
    let n_test = ((test_fraction * n as f64).round() as usize).min(n - 1);
    let mut out = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(seed, &format!("split-{r}")));
        let (test, train) = order.split_at(n_test);
        let mut test = test.to_vec();
        let mut train = train.to_vec();
        test.sort_unstable();
        train.sort_unstable();
        out.push(Split { train, test });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

pub struct TrainResult {
    pub params: ParamStore,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    /// Decision threshold for the binary choice task, chosen to maximize
    /// accuracy on the validation holdout; 0.5 for other tasks or when no
    /// holdout exists.
    pub threshold: f64,
}

/// Prepared examples for one model variant: session inputs paired with
/// fixed targets. Targets for the binary task are sampled once so epochs
/// see a stable objective.
pub struct PreparedSet {
    pub examples: Vec<(SessionInput, Target)>,
}

pub fn prepare_examples(
    dataset: &Dataset,
    map: &RoiMap,
    model: &StareModel,
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<PreparedSet> {
    let mut neg_rng = rng::stream(cfg.seed, "negatives");
    let mut examples = Vec::with_capacity(indices.len());
    for &i in indices {
        let (seq, outcome) = &dataset.sessions[i];
        let input =
            prepare_session(seq, map, model.cfg.variant, model.cfg.chronos_bins, cfg.max_len)?;
        let target = make_target(
            outcome,
            model.cfg.task,
            model.cfg.n_candidates,
            cfg.negative_ratio,
            &mut neg_rng,
        )?;
        examples.push((input, target));
    }
    Ok(PreparedSet { examples })
}

fn mean_loss(model: &StareModel, store: &ParamStore, set: &[(SessionInput, Target)]) -> Result<f64> {
    let mut total = 0.0;
    for (input, target) in set {
        let mut tape = crate::nn::Tape::new();
        let loss = model.session_loss(&mut tape, store, input, target)?;
        total += tape.scalar(loss);
    }
    Ok(total / set.len().max(1) as f64)
}

fn accumulate_grads(into: &mut GradStore, from: GradStore) {
    for (name, grad) in from {
        into.entry(name)
            .and_modify(|g| *g += &grad)
            .or_insert(grad);
    }
}

/// Randomly mask out active positions, always keeping at least one.
fn drop_positions(input: &SessionInput, p: f64, rng: &mut impl Rng) -> SessionInput {
    let mut out = input.clone();
    for keep in out.mask.iter_mut() {
        if *keep && rng.gen::<f64>() < p {
            *keep = false;
        }
    }
    if !out.mask.iter().any(|&b| b) {
        out.mask.clone_from(&input.mask);
    }
    out
}

/// Minibatch Adam with a seeded validation holdout, plateau learning-rate
/// decay, and early stopping. Returns the parameters from the best
/// validation epoch. `max_epochs == 0` returns the initialization untouched.
pub fn train(
    model: &StareModel,
    prepared: &PreparedSet,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    if prepared.examples.is_empty() {
        return Err(Error::Config("no training examples".to_string()));
    }
    let mut store = model.init_params(&mut rng::stream(cfg.seed, "init"));
    let n = prepared.examples.len();
    let n_val = ((cfg.val_fraction * n as f64).round() as usize).min(n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(cfg.seed, "val-split"));
    let (val_idx, train_idx) = order.split_at(n_val);
    let val: Vec<(SessionInput, Target)> =
        val_idx.iter().map(|&i| prepared.examples[i].clone()).collect();
    let train_set: Vec<(SessionInput, Target)> =
        train_idx.iter().map(|&i| prepared.examples[i].clone()).collect();
    // With no validation holdout the training loss drives the schedule.
    let monitor_train = val.is_empty();

    let mut best_params = store.clone();
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut sched = LrScheduler::new(cfg.lr, cfg.lr_decay, cfg.lr_floor, cfg.plateau_epochs);
    let mut history = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let lr = sched.lr();
        let mut idx: Vec<usize> = (0..train_set.len()).collect();
        idx.shuffle(&mut rng::stream(cfg.seed, &format!("shuffle-{epoch}")));
        let mut drop_rng = rng::stream(cfg.seed, &format!("fix-drop-{epoch}"));
        let mut train_loss = 0.0;
        for batch in idx.chunks(cfg.batch_size) {
            let mut grads = GradStore::new();
            for &i in batch {
                let (input, target) = &train_set[i];
                let dropped;
                let input = if cfg.fixation_dropout > 0.0 {
                    dropped = drop_positions(input, cfg.fixation_dropout, &mut drop_rng);
                    &dropped
                } else {
                    input
                };
                let (loss, g) = model.loss_and_grads(&store, input, target)?;
                train_loss += loss;
                accumulate_grads(&mut grads, g);
            }
            let inv = 1.0 / batch.len() as f64;
            for (_, g) in grads.iter_mut() {
                *g *= inv;
            }
            store.adam_step(
                &grads,
                lr,
                crate::nn::ADAM_BETA1,
                crate::nn::ADAM_BETA2,
                crate::nn::ADAM_EPS,
                cfg.weight_decay,
            )?;
        }
        let train_loss = train_loss / train_set.len() as f64;
        let val_loss = if monitor_train { train_loss } else { mean_loss(model, &store, &val)? };
        history.push(EpochStats { epoch, train_loss, val_loss, lr });
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} lr {lr:.2e}");

        let (improved, keep_going) = stopper.observe(val_loss);
        if improved {
            best_params = store.clone();
        }
        sched.observe(val_loss);
        if !keep_going {
            break;
        }
    }
    let threshold = calibrate_choice_threshold(model, &best_params, &val)?;
    Ok(TrainResult { params: best_params, history, best_epoch: stopper.best_epoch, threshold })
}

/// Probability cutoff with the best validation accuracy on the binary
/// choice task. The cutoff is a training byproduct fitted on held-out
/// training sessions, never on test data.
fn calibrate_choice_threshold(
    model: &StareModel,
    store: &ParamStore,
    val: &[(SessionInput, Target)],
) -> Result<f64> {
    let mut scored: Vec<(f64, bool)> = Vec::new();
    for (input, target) in val {
        let Target::Choice(pairs) = target else { continue };
        let probs = predict_choice_probs(model, store, input)?;
        for &(cand, label) in pairs {
            scored.push((probs[cand as usize], label > 0.5));
        }
    }
    if scored.is_empty() {
        return Ok(0.5);
    }
    let mut best = (0.5, 0usize);
    for t in 1..100 {
        let th = t as f64 / 100.0;
        let hits = scored.iter().filter(|(p, l)| (*p >= th) == *l).count();
        if hits > best.1 {
            best = (th, hits);
        }
    }
    Ok(best.0)
}

/// Per-candidate choice probabilities for one session.
pub fn predict_choice_probs(
    model: &StareModel,
    store: &ParamStore,
    input: &SessionInput,
) -> Result<Vec<f64>> {
    let mut tape = crate::nn::Tape::new();
    let z = model.forward_z(&mut tape, store, input)?;
    let mut probs = Vec::with_capacity(model.cfg.n_candidates);
    for cand in 0..model.cfg.n_candidates {
        let logit = model.choice_logit(&mut tape, store, z, cand as u32)?;
        let l = tape.scalar(logit);
        probs.push(1.0 / (1.0 + (-l).exp()));
    }
    Ok(probs)
}

pub fn predict_count(
    model: &StareModel,
    store: &ParamStore,
    input: &SessionInput,
) -> Result<f64> {
    let mut tape = crate::nn::Tape::new();
    let z = model.forward_z(&mut tape, store, input)?;
    let pred = model.count_prediction(&mut tape, store, z)?;
    Ok(tape.scalar(pred))
}

/// Pick the candidate with the lowest score; ties break toward the smaller
/// parameter count, then the lexicographically smaller name.
pub fn grid_search<T>(
    candidates: &[(String, T)],
    mut eval: impl FnMut(&T) -> Result<(f64, usize)>,
) -> Result<(String, f64)> {
    if candidates.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".to_string()));
    }
    let mut best: Option<(f64, usize, &str)> = None;
    for (name, cand) in candidates {
        let (score, n_params) = eval(cand)?;
        let better = match &best {
            None => true,
            Some((s, p, n)) => {
                score < *s
                    || (score == *s && n_params < *p)
                    || (score == *s && n_params == *p && name.as_str() < *n)
            }
        };
        if better {
            best = Some((score, n_params, name));
        }
    }
    let (score, _, name) = best.unwrap();
    Ok((name.to_string(), score))
}
