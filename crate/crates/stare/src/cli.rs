//! Command implementations behind the binary. Each command reads the
//! experiment config, writes its artifacts under an output directory, and
//! produces byte-identical files when rerun with the same seed.

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::evaluation::{self, SliceKind};
use crate::gaze_data::{self, Dataset};
use crate::model::{prepare_session, ModelConfig, StareModel, TaskKind, Variant};
use crate::roi_map::RoiMap;
use crate::training::{self, TrainConfig};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::io(path.display().to_string(), e)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// Load sessions and the ROI layout from the configured sources; without
/// file paths the synthetic generator provides both.
pub fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, RoiMap)> {
    let data = &cfg.data;
    if data.fixations.is_none() && data.raw_gaze.is_none() {
        let gen = data.synthetic.clone().unwrap_or_default();
        let (dataset, generated_map) = gaze_data::generate_synthetic(&gen, seed)?;
        let map = match &cfg.roi_map {
            Some(path) => RoiMap::load(path)?,
            None => generated_map,
        };
        return Ok((dataset, map));
    }
    let map_path = cfg.roi_map.as_ref().ok_or_else(|| {
        Error::Config("roi_map path is required when loading recorded data".to_string())
    })?;
    let map = RoiMap::load(map_path)?;
    let sequences = match (&data.fixations, &data.raw_gaze) {
        (Some(p), None) => gaze_data::load_fixations(p)?,
        (None, Some(p)) => gaze_data::load_raw_gaze(p)?,
        _ => unreachable!("validated as mutually exclusive"),
    };
    let outcomes_path = data.outcomes.as_ref().ok_or_else(|| {
        Error::Config("data.outcomes is required when loading recorded data".to_string())
    })?;
    let outcomes = gaze_data::load_outcomes(outcomes_path)?;
    let mut by_id: std::collections::HashMap<String, gaze_data::Outcome> =
        outcomes.into_iter().map(|o| (o.session_id.clone(), o)).collect();
    let mut sessions = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let outcome = by_id.remove(&seq.session_id).ok_or_else(|| {
            Error::Integrity(format!("session '{}' has no outcome row", seq.session_id))
        })?;
        sessions.push((seq, outcome));
    }
    if let Some(orphan) = by_id.keys().next() {
        return Err(Error::Integrity(format!(
            "outcome for '{orphan}' has no gaze session"
        )));
    }
    Ok((Dataset::new(sessions)?, map))
}

fn model_for(cfg: &ExperimentConfig, map: &RoiMap) -> Result<StareModel> {
    let mut mc: ModelConfig = cfg.model.clone();
    mc.n_candidates = map.n_rois();
    mc.encoder.vocab_size = ModelConfig::required_vocab(mc.variant, map, mc.chronos_bins);
    // Structured candidate embeddings need the axis tokens of each grid
    // cell; derive them from the map unless the config pinned its own.
    if mc.task == TaskKind::ChoiceBinary
        && mc.variant.uses_roi_tokens()
        && mc.candidate_tokens.is_none()
    {
        mc.candidate_tokens = Some(ModelConfig::candidate_axis_tokens(map));
    }
    StareModel::new(mc)
}

/// Write a synthetic dataset: fixation CSV, outcomes CSV, and the ROI map.
pub fn cmd_gen(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let gen = cfg.data.synthetic.clone().unwrap_or_default();
    let (dataset, map) = gaze_data::generate_synthetic(&gen, seed)?;
    let sequences: Vec<_> = dataset.sessions.iter().map(|(s, _)| s.clone()).collect();
    let outcomes: Vec<_> = dataset.sessions.iter().map(|(_, o)| o.clone()).collect();
    let fix_path = out.join("fixations.csv");
    let out_path = out.join("outcomes.csv");
    let map_path = out.join("roi_map.json");
    gaze_data::write_fixations(&fix_path, &sequences)?;
    gaze_data::write_outcomes(&out_path, &outcomes)?;
    map.save(&map_path)?;
    log::info!("wrote {} sessions to {}", dataset.sessions.len(), out.display());
    Ok(vec![fix_path, out_path, map_path])
}

/// Emit per-session token channels as JSON lines.
pub fn cmd_tokenize(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let (dataset, map) = load_dataset(cfg, seed)?;
    let path = out.join("tokens.jsonl");
    let mut f = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    for (seq, _) in &dataset.sessions {
        let input = prepare_session(
            seq,
            &map,
            cfg.model.variant,
            cfg.model.chronos_bins,
            cfg.train.max_len,
        )?;
        let channels: Vec<Vec<serde_json::Value>> = match &input.channels {
            crate::model::ChannelInputs::Tokens(seqs) => seqs
                .iter()
                .map(|s| s.tokens.iter().map(|&t| serde_json::json!(t)).collect())
                .collect(),
            crate::model::ChannelInputs::Raw(series) => series
                .iter()
                .map(|s| s.iter().map(|&v| serde_json::json!(v)).collect())
                .collect(),
        };
        let line = serde_json::json!({
            "session_id": input.session_id,
            "channels": channels,
            "mask_len": input.mask.len(),
        });
        writeln!(f, "{line}").map_err(|e| io_err(&path, e))?;
    }
    Ok(path)
}

#[derive(Serialize)]
struct TrainReport {
    variant: String,
    n_sessions: usize,
    n_params: usize,
    epochs_run: usize,
    best_epoch: usize,
    final_train_loss: Option<f64>,
    best_val_loss: Option<f64>,
}

/// Train on every session and write checkpoint, history, and report.
pub fn cmd_train(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let (dataset, map) = load_dataset(cfg, seed)?;
    let model = model_for(cfg, &map)?;
    let mut tc: TrainConfig = cfg.train.clone();
    tc.seed = seed;
    let idx: Vec<usize> = (0..dataset.sessions.len()).collect();
    let prepared = training::prepare_examples(&dataset, &map, &model, &idx, &tc)?;
    let result = training::train(&model, &prepared, &tc)?;

    let ckpt_path = out.join("checkpoint.json");
    result.params.save(&ckpt_path)?;

    let hist_path = out.join("history.csv");
    let mut w = csv::Writer::from_path(&hist_path)
        .map_err(|e| Error::io(hist_path.display().to_string(), e.into()))?;
    for row in &result.history {
        w.serialize(row)
            .map_err(|e| Error::io(hist_path.display().to_string(), e.into()))?;
    }
    w.flush().map_err(|e| io_err(&hist_path, e))?;

    let report_path = out.join("train_report.json");
    let best = result
        .history
        .iter()
        .map(|h| h.val_loss)
        .fold(f64::INFINITY, f64::min);
    write_json(
        &report_path,
        &TrainReport {
            variant: model.cfg.variant.name().to_string(),
            n_sessions: dataset.sessions.len(),
            n_params: result.params.n_params(),
            epochs_run: result.history.len(),
            best_epoch: result.best_epoch,
            final_train_loss: result.history.last().map(|h| h.train_loss),
            best_val_loss: result.history.last().map(|_| best),
        },
    )?;
    Ok(vec![ckpt_path, hist_path, report_path])
}

/// Score a saved checkpoint on the configured dataset.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    seed: u64,
    checkpoint: &Path,
    out: &Path,
) -> Result<PathBuf> {
    ensure_dir(out)?;
    let (dataset, map) = load_dataset(cfg, seed)?;
    let model = model_for(cfg, &map)?;
    let params = crate::nn::ParamStore::load(checkpoint)?;
    let idx: Vec<usize> = (0..dataset.sessions.len()).collect();
    let metrics = evaluation::evaluate(
        &model,
        &params,
        &dataset,
        &map,
        &idx,
        cfg.train.max_len,
        cfg.train.negative_ratio,
        // Saved checkpoints carry no calibrated cutoff, so score at 0.5.
        0.5,
    )?;
    let path = out.join("eval_report.json");
    write_json(&path, &metrics)?;
    Ok(path)
}

/// Full representation/fusion ladder on shared splits.
pub fn cmd_ablate(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let (dataset, map) = load_dataset(cfg, seed)?;
    let mut mc = cfg.model.clone();
    mc.n_candidates = map.n_rois();
    let mut tc = cfg.train.clone();
    tc.seed = seed;
    let splits = training::make_splits(
        dataset.sessions.len(),
        cfg.eval.repeats,
        cfg.eval.test_fraction,
        seed,
    )?;
    let rows =
        evaluation::run_ablation(&dataset, &map, &mc, &tc, &Variant::all(), &splits)?;
    let path = out.join("ablation.csv");
    evaluation::write_ablation_csv(&path, &rows)?;
    Ok(path)
}

/// Data-budget sweep over partial-sequence or partial-time slices.
pub fn cmd_slice(
    cfg: &ExperimentConfig,
    seed: u64,
    kind: SliceKind,
    out: &Path,
) -> Result<PathBuf> {
    ensure_dir(out)?;
    let (dataset, map) = load_dataset(cfg, seed)?;
    let model = model_for(cfg, &map)?;
    let mut tc = cfg.train.clone();
    tc.seed = seed;
    let splits = training::make_splits(
        dataset.sessions.len(),
        cfg.eval.repeats,
        cfg.eval.test_fraction,
        seed,
    )?;
    let values = match kind {
        SliceKind::DataFraction => evaluation::data_fraction_steps(),
        SliceKind::TimeSeconds => evaluation::time_window_steps(),
    };
    let rows = evaluation::run_slice_sweep(
        &dataset,
        &map,
        &model.cfg,
        &tc,
        kind,
        &values,
        &splits,
        cfg.eval.retrain_slices,
    )?;
    let name = match kind {
        SliceKind::DataFraction => "slice_data.csv",
        SliceKind::TimeSeconds => "slice_time.csv",
    };
    let path = out.join(name);
    evaluation::write_slice_csv(&path, &rows)?;
    Ok(path)
}

/// Human-readable roll-up of whatever artifacts exist in a run directory.
pub fn cmd_report(out: &Path) -> Result<String> {
    let mut lines = Vec::new();
    let ablation = out.join("ablation.csv");
    if ablation.exists() {
        let text = std::fs::read_to_string(&ablation).map_err(|e| io_err(&ablation, e))?;
        lines.push("== ablation ==".to_string());
        lines.extend(text.lines().map(str::to_string));
    }
    for name in ["slice_data.csv", "slice_time.csv"] {
        let p = out.join(name);
        if p.exists() {
            let text = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
            lines.push(format!("== {name} =="));
            lines.extend(text.lines().map(str::to_string));
        }
    }
    let report = out.join("train_report.json");
    if report.exists() {
        let text = std::fs::read_to_string(&report).map_err(|e| io_err(&report, e))?;
        lines.push("== training ==".to_string());
        lines.push(text);
    }
    if lines.is_empty() {
        return Err(Error::Config(format!(
            "no artifacts found under {}",
            out.display()
        )));
    }
    Ok(lines.join("\n"))
}
