//! Experiment configuration: one JSON file covering data sources, the ROI
//! layout, model shape, training, and evaluation protocol. Unknown keys are
//! rejected with every offender listed, not just the first.

use crate::error::{Error, Result};
use crate::gaze_data::SyntheticConfig;
use crate::model::ModelConfig;
use crate::training::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// CSV of fixation records; mutually exclusive with `raw_gaze`.
    pub fixations: Option<String>,
    /// CSV of binocular raw gaze samples.
    pub raw_gaze: Option<String>,
    pub outcomes: Option<String>,
    /// Generator settings used when no file paths are given.
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub repeats: usize,
    pub test_fraction: f64,
    /// Retrain per data-budget slice; set false to score one full-data model
    /// on sliced test sessions.
    pub retrain_slices: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { repeats: 10, test_fraction: 0.3, retrain_slices: true }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    /// Path to a ROI map JSON; omitted means a uniform grid from the
    /// synthetic generator settings.
    pub roi_map: Option<String>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.encoder.validate()?;
        self.train.validate()?;
        if !(0.0..1.0).contains(&self.eval.test_fraction) {
            return Err(Error::Config("eval.test_fraction must be in [0,1)".to_string()));
        }
        if self.eval.repeats == 0 {
            return Err(Error::Config("eval.repeats must be positive".to_string()));
        }
        if self.data.fixations.is_some() && self.data.raw_gaze.is_some() {
            return Err(Error::Config(
                "data.fixations and data.raw_gaze are mutually exclusive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Walk the candidate against the key tree of a default-serialized config
/// and record every key with no schema counterpart.
fn collect_unknown(schema: &Value, candidate: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Object(schema_map), Value::Object(cand_map)) = (schema, candidate) else {
        return;
    };
    for (key, sub) in cand_map {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match schema_map.get(key) {
            None => out.push(path),
            // Null schema slots are optional sections; their inner schema is
            // the default of the section type, checked by the typed parse.
            Some(s) => collect_unknown(s, sub, &path, out),
        }
    }
}

pub fn unknown_keys(candidate: &Value) -> Vec<String> {
    let schema = serde_json::to_value(ExperimentConfig::default()).expect("default serializes");
    // Optional sections serialize to null in the default; substitute their
    // full key sets so nested keys are checked too.
    let mut schema = schema;
    if let Value::Object(root) = &mut schema {
        if let Some(Value::Object(data)) = root.get_mut("data") {
            data.insert(
                "synthetic".to_string(),
                serde_json::to_value(SyntheticConfig::default()).unwrap(),
            );
        }
    }
    let mut out = Vec::new();
    collect_unknown(&schema, candidate, "", &mut out);
    out
}

pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let bad = unknown_keys(&value);
    if !bad.is_empty() {
        return Err(Error::Config(format!(
            "unknown configuration keys: {}",
            bad.join(", ")
        )));
    }
    let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| Error::Json {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_yields_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        std::fs::write(&p, "{}").unwrap();
        let cfg = load(&p).unwrap();
        assert_eq!(cfg.eval.repeats, 10);
        assert_eq!(cfg.train.patience, 5);
        assert_eq!(cfg.train.lr, 2e-5);
    }

    #[test]
    fn every_unknown_key_is_reported() {
        let value: Value = serde_json::from_str(
            r#"{
                "train": {"lr": 0.001, "momentum": 0.9},
                "model": {"encoder": {"d": 32, "dropout": 0.1}},
                "extra_section": {}
            }"#,
        )
        .unwrap();
        let mut bad = unknown_keys(&value);
        bad.sort();
        assert_eq!(
            bad,
            vec!["extra_section", "model.encoder.dropout", "train.momentum"]
        );
    }

    #[test]
    fn unknown_key_load_fails_listing_all() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        std::fs::write(&p, r#"{"trian": {}, "evaal": {}}"#).unwrap();
        let err = load(&p).unwrap_err().to_string();
        assert!(err.contains("trian") && err.contains("evaal"), "{err}");
    }

    #[test]
    fn synthetic_section_keys_are_known() {
        let value: Value = serde_json::from_str(
            r#"{"data": {"synthetic": {"rows": 4, "cols": 4, "bogus": 1}}}"#,
        )
        .unwrap();
        assert_eq!(unknown_keys(&value), vec!["data.synthetic.bogus"]);
    }

    #[test]
    fn invalid_values_fail_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        std::fs::write(&p, r#"{"train": {"lr": -1.0}}"#).unwrap();
        assert!(load(&p).is_err());
        std::fs::write(
            &p,
            r#"{"data": {"fixations": "a.csv", "raw_gaze": "b.csv"}}"#,
        )
        .unwrap();
        assert!(load(&p).is_err());
    }

    #[test]
    fn roundtrip_preserves_settings() {
        let mut cfg = ExperimentConfig::default();
        cfg.train.lr = 1e-3;
        cfg.model.encoder.d = 16;
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        std::fs::write(&p, text).unwrap();
        let back = load(&p).unwrap();
        assert_eq!(back.train.lr, 1e-3);
        assert_eq!(back.model.encoder.d, 16);
    }
}
