//! Pure forward kernels, independent of the tape. The tape reuses the same
//! numerics; tests treat these as the reference path.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Axis};

/// Numerically stable softmax along the last axis.
pub fn softmax(x: &Array2<f64>) -> Result<Array2<f64>> {
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN input to softmax".to_string()));
    }
    let mut out = Array2::zeros(x.dim());
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let denom: f64 = exps.iter().sum();
        for (j, e) in exps.into_iter().enumerate() {
            out[[i, j]] = e / denom;
        }
    }
    Ok(out)
}

/// Scaled dot-product attention. `key_mask` marks valid key positions; masked
/// keys receive exactly zero weight. A fully-masked query row yields a zero
/// output row. When `scaled` is false the 1/sqrt(d) factor is dropped.
pub fn attention(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    key_mask: &[bool],
    scaled: bool,
) -> Result<Array2<f64>> {
    if q.ncols() != k.ncols() {
        return Err(Error::Shape(format!(
            "query dim {} != key dim {}",
            q.ncols(),
            k.ncols()
        )));
    }
    if k.nrows() != v.nrows() || k.nrows() != key_mask.len() {
        return Err(Error::Shape(format!(
            "key rows {}, value rows {}, mask len {} must agree",
            k.nrows(),
            v.nrows(),
            key_mask.len()
        )));
    }
    let weights = attention_weights(q, k, key_mask, scaled)?;
    Ok(weights.dot(v))
}

/// The attention weight matrix alone (L_q x L_k), for invariant checks.
pub fn attention_weights(
    q: &Array2<f64>,
    k: &Array2<f64>,
    key_mask: &[bool],
    scaled: bool,
) -> Result<Array2<f64>> {
    let scale = if scaled { 1.0 / (q.ncols() as f64).sqrt() } else { 1.0 };
    let scores = q.dot(&k.t()) * scale;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN attention scores".to_string()));
    }
    let mut out = Array2::zeros(scores.dim());
    for (i, row) in scores.axis_iter(Axis(0)).enumerate() {
        let m = row
            .iter()
            .zip(key_mask)
            .filter(|(_, &ok)| ok)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            log::debug!("fully-masked attention row {i}; emitting zero weights");
            continue;
        }
        let mut denom = 0.0;
        for (j, &ok) in key_mask.iter().enumerate() {
            if ok {
                let e = (row[j] - m).exp();
                out[[i, j]] = e;
                denom += e;
            }
        }
        for j in 0..key_mask.len() {
            out[[i, j]] /= denom;
        }
    }
    Ok(out)
}

/// -log p[label] with p clamped at 1e-12. `probs` must already be a
/// distribution.
pub fn cross_entropy(probs: &Array1<f64>, label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::Index(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(-probs[label].max(1e-12).ln())
}

/// Mean of squared elementwise differences.
pub fn mse(pred: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "mse shapes {:?} vs {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}
