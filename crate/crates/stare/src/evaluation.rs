//! Metrics, evaluation slices, and the ablation and data-budget sweep
//! runners with CSV reporting.

use crate::error::{Error, Result};
use crate::gaze_data::{Dataset, GazeRecords, GazeSequence};
use crate::model::{ModelConfig, StareModel, TaskKind, Variant};
use crate::roi_map::RoiMap;
use crate::training::{self, Split, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Fraction of 0/1 labels matched after thresholding scores at 0.5.
pub fn accuracy(scores: &[f64], labels: &[bool]) -> Result<f64> {
    accuracy_at(scores, labels, 0.5)
}

/// Fraction of 0/1 labels matched after thresholding scores at `threshold`.
pub fn accuracy_at(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    check_paired(scores, labels)?;
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, &l)| (**s >= threshold) == l)
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Harmonic mean of precision and recall at threshold 0.5; degenerate 0/0
/// cases collapse to zero.
pub fn f1(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_paired(scores, labels)?;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fun = 0.0;
    for (s, &l) in scores.iter().zip(labels) {
        match (*s >= 0.5, l) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fun += 1.0,
            (false, false) => {}
        }
    }
    if tp == 0.0 {
        return Ok(0.0);
    }
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fun);
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Probability a random positive outscores a random negative, ties counted
/// half. Exhaustive pairwise comparison, so exact for any evaluable input.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_paired(scores, labels)?;
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::UndefinedMetric(
            "AUC needs both a positive and a negative example".to_string(),
        ));
    }
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

pub fn rmse(preds: &[f64], truths: &[f64]) -> Result<f64> {
    check_paired(preds, truths)?;
    let ss: f64 = preds.iter().zip(truths).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((ss / preds.len() as f64).sqrt())
}

pub fn mae(preds: &[f64], truths: &[f64]) -> Result<f64> {
    check_paired(preds, truths)?;
    let total: f64 = preds.iter().zip(truths).map(|(p, t)| (p - t).abs()).sum();
    Ok(total / preds.len() as f64)
}

/// Mean absolute percentage error, in percent. Undefined when any true
/// value is zero.
pub fn mape(preds: &[f64], truths: &[f64]) -> Result<f64> {
    check_paired(preds, truths)?;
    if truths.iter().any(|t| *t == 0.0) {
        return Err(Error::UndefinedMetric(
            "MAPE is undefined for a zero true value".to_string(),
        ));
    }
    let total: f64 = preds.iter().zip(truths).map(|(p, t)| ((p - t) / t).abs()).sum();
    Ok(100.0 * total / preds.len() as f64)
}

fn check_paired<A, B>(a: &[A], b: &[B]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::UndefinedMetric("empty inputs".to_string()));
    }
    if a.len() != b.len() {
        return Err(Error::Shape(format!("paired lengths differ: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// Percent change of a candidate score over a baseline, oriented so a
/// positive value always means the candidate is better.
pub fn relative_improvement(candidate: f64, baseline: f64, lower_is_better: bool) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::UndefinedMetric("zero baseline".to_string()));
    }
    let delta =
        if lower_is_better { baseline - candidate } else { candidate - baseline };
    Ok(100.0 * delta / baseline.abs())
}

/// First ceil(fraction * T) records of a session, never fewer than one.
pub fn partial_data_slice(seq: &GazeSequence, fraction: f64) -> Result<GazeSequence> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} outside (0,1]")));
    }
    let t = seq.len();
    let keep = ((fraction * t as f64).ceil() as usize).clamp(1, t);
    let records = match &seq.records {
        GazeRecords::Fixation(recs) => GazeRecords::Fixation(recs[..keep].to_vec()),
        GazeRecords::BinocularRaw(recs) => GazeRecords::BinocularRaw(recs[..keep].to_vec()),
    };
    Ok(GazeSequence { session_id: seq.session_id.clone(), records })
}

/// Records beginning inside the first `seconds` of viewing. A session whose
/// first record starts later keeps that first record so the slice is never
/// empty.
pub fn partial_time_slice(seq: &GazeSequence, seconds: f64) -> Result<GazeSequence> {
    if !(seconds > 0.0) {
        return Err(Error::Config(format!("window {seconds}s must be positive")));
    }
    let cutoff = seconds * 1000.0;
    let records = match &seq.records {
        GazeRecords::Fixation(recs) => {
            let mut kept: Vec<_> =
                recs.iter().filter(|r| (r.start_ms as f64) < cutoff).cloned().collect();
            if kept.is_empty() {
                kept.push(recs[0].clone());
            }
            GazeRecords::Fixation(kept)
        }
        GazeRecords::BinocularRaw(recs) => {
            let mut kept: Vec<_> =
                recs.iter().filter(|r| (r.time_ms as f64) < cutoff).cloned().collect();
            if kept.is_empty() {
                kept.push(recs[0].clone());
            }
            GazeRecords::BinocularRaw(kept)
        }
    };
    Ok(GazeSequence { session_id: seq.session_id.clone(), records })
}

/// Test metrics for a trained model. Choice metrics score balanced pairs
/// per session (positives plus seeded sampled negatives) so chance level is
/// 0.5 under the default 1:1 ratio; count metrics are per session. Negative
/// draws are keyed by session id, independent of index order. `threshold`
/// is the choice decision cutoff, normally the validation-calibrated value
/// from `TrainResult`.
pub fn evaluate(
    model: &StareModel,
    params: &crate::nn::ParamStore,
    dataset: &Dataset,
    map: &RoiMap,
    indices: &[usize],
    max_len: usize,
    negative_ratio: usize,
    threshold: f64,
) -> Result<BTreeMap<String, f64>> {
    let mut metrics = BTreeMap::new();
    match model.cfg.task {
        TaskKind::ChoiceBinary => {
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for &i in indices {
                let (seq, out) = &dataset.sessions[i];
                let input = crate::model::prepare_session(
                    seq,
                    map,
                    model.cfg.variant,
                    model.cfg.chronos_bins,
                    max_len,
                )?;
                let probs = training::predict_choice_probs(model, params, &input)?;
                let mut rng =
                    crate::rng::stream(0x65_76_61_6c, &format!("eval-neg-{}", out.session_id));
                let negs = training::sample_negatives(
                    &out.chosen_roi_ids,
                    model.cfg.n_candidates,
                    negative_ratio,
                    &mut rng,
                );
                for &cand in out.chosen_roi_ids.iter().chain(negs.iter()) {
                    scores.push(probs[cand as usize]);
                    labels.push(out.chosen_roi_ids.contains(&cand));
                }
            }
            metrics.insert("accuracy".to_string(), accuracy_at(&scores, &labels, threshold)?);
            metrics.insert("f1".to_string(), f1(&scores, &labels)?);
            match auc_roc(&scores, &labels) {
                Ok(v) => {
                    metrics.insert("auc".to_string(), v);
                }
                Err(e) => log::warn!("AUC skipped: {e}"),
            }
        }
        TaskKind::ChoiceMulticlass => {
            let mut hits = 0usize;
            for &i in indices {
                let (seq, out) = &dataset.sessions[i];
                let label = out.class_label.ok_or_else(|| {
                    Error::Config(format!("session '{}' lacks a class label", out.session_id))
                })?;
                let input = crate::model::prepare_session(
                    seq,
                    map,
                    model.cfg.variant,
                    model.cfg.chronos_bins,
                    max_len,
                )?;
                let mut tape = crate::nn::Tape::new();
                let z = model.forward_z(&mut tape, params, &input)?;
                let logits = model.class_logits(&mut tape, params, z)?;
                let row = tape.value(logits);
                let argmax = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                if argmax == label as usize {
                    hits += 1;
                }
            }
            metrics.insert("accuracy".to_string(), hits as f64 / indices.len().max(1) as f64);
        }
        TaskKind::Count => {
            let mut preds = Vec::new();
            let mut truths = Vec::new();
            for &i in indices {
                let (seq, out) = &dataset.sessions[i];
                let input = crate::model::prepare_session(
                    seq,
                    map,
                    model.cfg.variant,
                    model.cfg.chronos_bins,
                    max_len,
                )?;
                preds.push(training::predict_count(model, params, &input)?);
                truths.push(out.item_count as f64);
            }
            metrics.insert("rmse".to_string(), rmse(&preds, &truths)?);
            metrics.insert("mae".to_string(), mae(&preds, &truths)?);
            match mape(&preds, &truths) {
                Ok(v) => {
                    metrics.insert("mape".to_string(), v);
                }
                Err(e) => log::warn!("MAPE skipped: {e}"),
            }
        }
    }
    Ok(metrics)
}

/// Train on the split's training half, report test metrics.
pub fn train_and_eval(
    dataset: &Dataset,
    map: &RoiMap,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    split: &Split,
) -> Result<BTreeMap<String, f64>> {
    let model = StareModel::new(model_cfg.clone())?;
    let prepared = training::prepare_examples(dataset, map, &model, &split.train, train_cfg)?;
    let result = training::train(&model, &prepared, train_cfg)?;
    evaluate(
        &model,
        &result.params,
        dataset,
        map,
        &split.test,
        train_cfg.max_len,
        train_cfg.negative_ratio,
        result.threshold,
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub metric: String,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub n_repeats: usize,
}

fn summarize(rows: &mut Vec<AblationRow>, variant: &str, runs: &[BTreeMap<String, f64>]) {
    let mut by_metric: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for run in runs {
        for (k, v) in run {
            by_metric.entry(k).or_default().push(*v);
        }
    }
    for (metric, vals) in by_metric {
        rows.push(AblationRow {
            variant: variant.to_string(),
            metric: metric.to_string(),
            mean: vals.iter().sum::<f64>() / vals.len() as f64,
            min: vals.iter().copied().fold(f64::INFINITY, f64::min),
            max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            n_repeats: vals.len(),
        });
    }
}

/// Train and score every variant on identical splits and seeds. Repeats run
/// in parallel; results merge in deterministic order.
pub fn run_ablation(
    dataset: &Dataset,
    map: &RoiMap,
    base_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    variants: &[Variant],
    splits: &[Split],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &variant in variants {
        let mut cfg = base_cfg.clone();
        cfg.variant = variant;
        cfg.encoder.vocab_size = ModelConfig::required_vocab(variant, map, cfg.chronos_bins);
        let runs: Result<Vec<BTreeMap<String, f64>>> = splits
            .par_iter()
            .enumerate()
            .map(|(r, split)| {
                let mut tc = train_cfg.clone();
                tc.seed = crate::rng::child_seed(train_cfg.seed, "ablation-repeat", r as u64);
                train_and_eval(dataset, map, &cfg, &tc, split)
            })
            .collect();
        summarize(&mut rows, variant.name(), &runs?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SliceRow {
    pub slice: f64,
    pub metric: String,
    pub mean: f64,
    pub n_repeats: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceKind {
    DataFraction,
    TimeSeconds,
}

fn slice_dataset(dataset: &Dataset, kind: SliceKind, value: f64) -> Result<Dataset> {
    let mut sessions = Vec::with_capacity(dataset.sessions.len());
    for (seq, out) in &dataset.sessions {
        let sliced = match kind {
            SliceKind::DataFraction => partial_data_slice(seq, value)?,
            SliceKind::TimeSeconds => partial_time_slice(seq, value)?,
        };
        sessions.push((sliced, out.clone()));
    }
    Dataset::new(sessions)
}

/// Sweep a data-budget axis. With `retrain` each slice trains its own model
/// on sliced training sessions; otherwise one model trained on full
/// sessions is scored on sliced test sessions.
pub fn run_slice_sweep(
    dataset: &Dataset,
    map: &RoiMap,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    kind: SliceKind,
    values: &[f64],
    splits: &[Split],
    retrain: bool,
) -> Result<Vec<SliceRow>> {
    let mut rows = Vec::new();
    // Shared models for the no-retrain path, one per split.
    let full_models: Option<Vec<(StareModel, crate::nn::ParamStore, f64)>> = if retrain {
        None
    } else {
        let trained: Result<Vec<_>> = splits
            .par_iter()
            .enumerate()
            .map(|(r, split)| {
                let mut tc = train_cfg.clone();
                tc.seed = crate::rng::child_seed(train_cfg.seed, "slice-repeat", r as u64);
                let model = StareModel::new(model_cfg.clone())?;
                let prepared =
                    training::prepare_examples(dataset, map, &model, &split.train, &tc)?;
                let result = training::train(&model, &prepared, &tc)?;
                Ok((model, result.params, result.threshold))
            })
            .collect();
        Some(trained?)
    };
    match &full_models {
        Some(models) => {
            rows.extend(slice_sweep_with_models(
                dataset, map, models, train_cfg, kind, values, splits,
            )?);
        }
        None => {
            for &value in values {
                let sliced = slice_dataset(dataset, kind, value)?;
                let runs: Result<Vec<BTreeMap<String, f64>>> = splits
                    .par_iter()
                    .enumerate()
                    .map(|(r, split)| {
                        let mut tc = train_cfg.clone();
                        tc.seed =
                            crate::rng::child_seed(train_cfg.seed, "slice-repeat", r as u64);
                        train_and_eval(&sliced, map, model_cfg, &tc, split)
                    })
                    .collect();
                summarize_slices(&mut rows, value, runs?);
            }
        }
    }
    Ok(rows)
}

fn summarize_slices(rows: &mut Vec<SliceRow>, value: f64, runs: Vec<BTreeMap<String, f64>>) {
    let mut by_metric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for run in runs {
        for (k, v) in run {
            by_metric.entry(k).or_default().push(v);
        }
    }
    for (metric, vals) in by_metric {
        rows.push(SliceRow {
            slice: value,
            metric,
            mean: vals.iter().sum::<f64>() / vals.len() as f64,
            n_repeats: vals.len(),
        });
    }
}

/// Slice evaluation against already-trained models, one per split. Skips
/// the per-slice retraining entirely.
pub fn slice_sweep_with_models(
    dataset: &Dataset,
    map: &RoiMap,
    models: &[(StareModel, crate::nn::ParamStore, f64)],
    train_cfg: &TrainConfig,
    kind: SliceKind,
    values: &[f64],
    splits: &[Split],
) -> Result<Vec<SliceRow>> {
    if models.len() != splits.len() {
        return Err(Error::Config("one trained model per split is required".to_string()));
    }
    let mut rows = Vec::new();
    for &value in values {
        let sliced = slice_dataset(dataset, kind, value)?;
        let runs: Result<Vec<BTreeMap<String, f64>>> = splits
            .par_iter()
            .zip(models.par_iter())
            .map(|(split, (model, params, threshold))| {
                evaluate(
                    model,
                    params,
                    &sliced,
                    map,
                    &split.test,
                    train_cfg.max_len,
                    train_cfg.negative_ratio,
                    *threshold,
                )
            })
            .collect();
        summarize_slices(&mut rows, value, runs?);
    }
    Ok(rows)
}

pub fn write_ablation_csv(path: impl AsRef<Path>, rows: &[AblationRow]) -> Result<()> {
    let path = path.as_ref();
    let p = path.display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(&p, e.into()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::io(&p, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;
    Ok(())
}

pub fn write_slice_csv(path: impl AsRef<Path>, rows: &[SliceRow]) -> Result<()> {
    let path = path.as_ref();
    let p = path.display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(&p, e.into()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::io(&p, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;
    Ok(())
}

/// The 19-step data-budget axis: 10% through 100% in 5% increments.
pub fn data_fraction_steps() -> Vec<f64> {
    (0..19).map(|i| 0.10 + 0.05 * i as f64).collect()
}

/// Standard viewing-time windows, in seconds.
pub fn time_window_steps() -> Vec<f64> {
    vec![1.0, 2.0, 5.0, 8.0, 10.0]
}
