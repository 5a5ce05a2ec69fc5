//! Named parameter store with per-tensor Adam state and a bit-exact
//! JSON checkpoint format.

use crate::error::{Error, Result};
use crate::nn::tape::{GradStore, Matrix};
use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Default)]
struct AdamState {
    m: Matrix,
    v: Matrix,
}

/// Model parameters θ. Iteration order is insertion order, so identical
/// construction yields identical update order and bitwise-identical training.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    tensors: IndexMap<String, Matrix>,
    adam: IndexMap<String, AdamState>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Matrix) {
        assert!(
            !self.tensors.contains_key(name),
            "duplicate parameter '{name}'"
        );
        self.tensors.insert(name.to_string(), value);
    }

    /// Insert a tensor with entries uniform in [-scale, scale].
    pub fn insert_uniform(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) {
        let value = Matrix::from_shape_fn((rows, cols), |_| (rng.gen::<f64>() * 2.0 - 1.0) * scale);
        self.insert(name, value);
    }

    /// Replace an existing tensor; the name must already be present.
    pub fn replace(&mut self, name: &str, value: Matrix) {
        assert!(self.tensors.contains_key(name), "unknown parameter '{name}'");
        self.tensors.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> &Matrix {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Matrix {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Total scalar parameter count.
    pub fn n_params(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// One bias-corrected Adam update over every gradient in `grads`, with
    /// decoupled weight decay applied to the updated tensors.
    pub fn adam_step(
        &mut self,
        grads: &GradStore,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = self
                .tensors
                .get(name)
                .ok_or_else(|| Error::Config(format!("gradient for unknown tensor '{name}'")))?;
            if g.dim() != p.dim() {
                return Err(Error::Shape(format!(
                    "gradient shape {:?} != parameter shape {:?} for '{name}'",
                    g.dim(),
                    p.dim()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient for tensor '{name}'")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (name, g) in grads {
            let state = self
                .adam
                .entry(name.clone())
                .or_insert_with(|| AdamState {
                    m: Matrix::zeros(g.dim()),
                    v: Matrix::zeros(g.dim()),
                });
            state.m = &state.m * beta1 + g * (1.0 - beta1);
            state.v = &state.v * beta2 + &g.mapv(|x| x * x) * (1.0 - beta2);
            let p = self.tensors.get_mut(name).unwrap();
            ndarray::Zip::from(p)
                .and(&state.m)
                .and(&state.v)
                .for_each(|p, &m, &v| {
                    let m_hat = m / bc1;
                    let v_hat = v / bc2;
                    *p -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *p);
                });
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = CheckpointFile {
            version: 1,
            step: self.step,
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| {
                    (
                        name.clone(),
                        TensorRecord {
                            shape: vec![t.nrows(), t.ncols()],
                            data: t.iter().cloned().collect(),
                        },
                    )
                })
                .collect(),
        };
        let text = serde_json::to_string(&file).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ParamStore> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        if file.version != 1 {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                file.version
            )));
        }
        let mut store = ParamStore::new();
        store.step = file.step;
        for (name, rec) in file.tensors {
            let t = Matrix::from_shape_vec((rec.shape[0], rec.shape[1]), rec.data)
                .map_err(|e| Error::Shape(e.to_string()))?;
            store.tensors.insert(name, t);
        }
        Ok(store)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    step: u64,
    tensors: IndexMap<String, TensorRecord>,
}
