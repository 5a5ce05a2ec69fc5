//! A small reverse-mode tape over dense f64 matrices. Forward values are
//! computed eagerly; `backward` walks the tape in reverse accumulating
//! gradients into a named store. Each op carries its hand-derived backward.

use indexmap::IndexMap;
use ndarray::{Array2, Axis};

pub type Matrix = Array2<f64>;
pub type GradStore = IndexMap<String, Matrix>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

const LN_EPS: f64 = 1e-5;

enum Op {
    Leaf { param: Option<String> },
    MatMul(NodeId, NodeId),
    /// a · b^T
    MatMulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Elementwise product of two same-shape matrices.
    Hadamard(NodeId, NodeId),
    /// x (L x d) plus a 1 x d bias broadcast over rows
    AddBias(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Gelu(NodeId),
    /// Row-wise softmax over key columns; masked columns get exactly zero.
    MaskedSoftmaxRows(NodeId, Vec<bool>),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId },
    /// Rows of `table` selected by `ids`.
    Gather { table: NodeId, ids: Vec<usize> },
    /// Mask-aware mean over rows -> 1 x d.
    MeanPoolRows(NodeId, Vec<bool>),
    ConcatCols(Vec<NodeId>),
    /// logits 1 x J, hard label -> scalar loss.
    SoftmaxCrossEntropy { logits: NodeId, label: usize },
    /// 1 x 1 logit, binary target -> scalar loss.
    BceWithLogit { logit: NodeId, target: f64 },
    /// mean((pred - target)^2) -> scalar loss.
    SquaredErrorMean { pred: NodeId, target: Matrix },
    SumScalars(Vec<NodeId>),
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: std::collections::HashMap<String, NodeId>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[[0, 0]]
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        debug_assert!(value.iter().all(|v| v.is_finite()), "non-finite op output");
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf { param: None })
    }

    /// A named parameter leaf; repeated requests for the same name return the
    /// same node so gradients accumulate across uses.
    pub fn param(&mut self, name: &str, value: Matrix) -> NodeId {
        if let Some(&id) = self.param_nodes.get(name) {
            return id;
        }
        let id = self.push(value, Op::Leaf { param: Some(name.to_string()) });
        self.param_nodes.insert(name.to_string(), id);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value.t());
        self.push(v, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::Hadamard(a, b))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let b = &self.nodes[bias.0].value;
        let v = &self.nodes[x.0].value + &b.row(0);
        self.push(v, Op::AddBias(x, bias))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let v = &self.nodes[x.0].value * s;
        self.push(v, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.mapv(|v| v.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.mapv(gelu);
        self.push(v, Op::Gelu(x))
    }

    /// Softmax over columns per row, restricted to unmasked key positions.
    /// A fully-masked row yields an all-zero row.
    pub fn masked_softmax_rows(&mut self, scores: NodeId, key_mask: &[bool]) -> NodeId {
        let s = &self.nodes[scores.0].value;
        assert_eq!(s.ncols(), key_mask.len(), "mask length must match key count");
        let mut out = Matrix::zeros(s.dim());
        for (i, row) in s.axis_iter(Axis(0)).enumerate() {
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
        self.push(out, Op::MaskedSoftmaxRows(scores, key_mask.to_vec()))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let g = &self.nodes[gain.0].value;
        let b = &self.nodes[bias.0].value;
        let mut out = Matrix::zeros(xv.dim());
        for (i, row) in xv.axis_iter(Axis(0)).enumerate() {
            let (mu, sigma) = row_moments(&row.to_vec());
            for j in 0..xv.ncols() {
                out[[i, j]] = g[[0, j]] * (row[j] - mu) / sigma + b[[0, j]];
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias })
    }

    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let t = &self.nodes[table.0].value;
        let mut out = Matrix::zeros((ids.len(), t.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).assign(&t.row(id));
        }
        self.push(out, Op::Gather { table, ids: ids.to_vec() })
    }

    pub fn mean_pool_rows(&mut self, x: NodeId, row_mask: &[bool]) -> NodeId {
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.nrows(), row_mask.len());
        let count = row_mask.iter().filter(|&&b| b).count().max(1);
        let mut out = Matrix::zeros((1, xv.ncols()));
        for (i, &ok) in row_mask.iter().enumerate() {
            if ok {
                out.row_mut(0).scaled_add(1.0 / count as f64, &xv.row(i));
            }
        }
        self.push(out, Op::MeanPoolRows(x, row_mask.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.nodes[parts[0].0].value.nrows();
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.ncols()).sum();
        let mut out = Matrix::zeros((rows, total));
        let mut off = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            out.slice_mut(ndarray::s![.., off..off + v.ncols()]).assign(v);
            off += v.ncols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, label: usize) -> NodeId {
        let probs = stable_softmax_row(&self.nodes[logits.0].value);
        let p = probs[label].max(1e-12);
        let loss = Matrix::from_elem((1, 1), -p.ln());
        self.push(loss, Op::SoftmaxCrossEntropy { logits, label })
    }

    pub fn bce_with_logit(&mut self, logit: NodeId, target: f64) -> NodeId {
        let z = self.nodes[logit.0].value[[0, 0]];
        // max(z,0) - z*target + ln(1 + exp(-|z|))
        let loss = z.max(0.0) - z * target + (-z.abs()).exp().ln_1p();
        self.push(Matrix::from_elem((1, 1), loss), Op::BceWithLogit { logit, target })
    }

    pub fn squared_error_mean(&mut self, pred: NodeId, target: Matrix) -> NodeId {
        let p = &self.nodes[pred.0].value;
        assert_eq!(p.dim(), target.dim(), "mse shape mismatch");
        let n = p.len() as f64;
        let loss = p
            .iter()
            .zip(target.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        self.push(Matrix::from_elem((1, 1), loss), Op::SquaredErrorMean { pred, target })
    }

    pub fn sum_scalars(&mut self, parts: &[NodeId]) -> NodeId {
        let total: f64 = parts.iter().map(|p| self.nodes[p.0].value[[0, 0]]).sum();
        self.push(Matrix::from_elem((1, 1), total), Op::SumScalars(parts.to_vec()))
    }

    /// Backpropagate from a scalar loss node; returns per-parameter grads.
    pub fn backward(&self, loss: NodeId) -> GradStore {
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::from_elem((1, 1), 1.0));

        let mut store = GradStore::new();
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf { param } => {
                    if let Some(name) = param {
                        match store.get_mut(name) {
                            Some(acc) => *acc += &g,
                            None => {
                                store.insert(name.clone(), g);
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.nodes[b.0].value.t());
                    let db = self.nodes[a.0].value.t().dot(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulNT(a, b) => {
                    let da = g.dot(&self.nodes[b.0].value);
                    let db = g.t().dot(&self.nodes[a.0].value);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Hadamard(a, b) => {
                    let da = &g * &self.nodes[b.0].value;
                    let db = &g * &self.nodes[a.0].value;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddBias(x, bias) => {
                    let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *x, g);
                    accumulate(&mut grads, *bias, db);
                }
                Op::Scale(x, s) => accumulate(&mut grads, *x, &g * *s),
                Op::Relu(x) => {
                    let dx = &g * &self.nodes[x.0].value.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *x, dx);
                }
                Op::Gelu(x) => {
                    let dx = &g * &self.nodes[x.0].value.mapv(gelu_grad);
                    accumulate(&mut grads, *x, dx);
                }
                Op::MaskedSoftmaxRows(scores, _mask) => {
                    let p = &self.nodes[i].value;
                    let mut ds = Matrix::zeros(p.dim());
                    for r in 0..p.nrows() {
                        let dot: f64 = (0..p.ncols()).map(|c| g[[r, c]] * p[[r, c]]).sum();
                        for c in 0..p.ncols() {
                            ds[[r, c]] = p[[r, c]] * (g[[r, c]] - dot);
                        }
                    }
                    accumulate(&mut grads, *scores, ds);
                }
                Op::LayerNorm { x, gain, bias } => {
                    let xv = &self.nodes[x.0].value;
                    let gv = &self.nodes[gain.0].value;
                    let d = xv.ncols() as f64;
                    let mut dx = Matrix::zeros(xv.dim());
                    let mut dgain = Matrix::zeros((1, xv.ncols()));
                    let mut dbias = Matrix::zeros((1, xv.ncols()));
                    for r in 0..xv.nrows() {
                        let row: Vec<f64> = xv.row(r).to_vec();
                        let (mu, sigma) = row_moments(&row);
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mu) / sigma).collect();
                        let dy_g: Vec<f64> =
                            (0..row.len()).map(|c| g[[r, c]] * gv[[0, c]]).collect();
                        let mean_dyg: f64 = dy_g.iter().sum::<f64>() / d;
                        let mean_dyg_xhat: f64 =
                            dy_g.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d;
                        for c in 0..row.len() {
                            dx[[r, c]] = (dy_g[c] - mean_dyg - xhat[c] * mean_dyg_xhat) / sigma;
                            dgain[[0, c]] += g[[r, c]] * xhat[c];
                            dbias[[0, c]] += g[[r, c]];
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gain, dgain);
                    accumulate(&mut grads, *bias, dbias);
                }
                Op::Gather { table, ids } => {
                    let t = &self.nodes[table.0].value;
                    let mut dt = Matrix::zeros(t.dim());
                    for (r, &id) in ids.iter().enumerate() {
                        dt.row_mut(id).scaled_add(1.0, &g.row(r));
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::MeanPoolRows(x, mask) => {
                    let xv = &self.nodes[x.0].value;
                    let count = mask.iter().filter(|&&b| b).count().max(1) as f64;
                    let mut dx = Matrix::zeros(xv.dim());
                    for (r, &ok) in mask.iter().enumerate() {
                        if ok {
                            dx.row_mut(r).scaled_add(1.0 / count, &g.row(0));
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.ncols();
                        let slice = g.slice(ndarray::s![.., off..off + w]).to_owned();
                        accumulate(&mut grads, *p, slice);
                        off += w;
                    }
                }
                Op::SoftmaxCrossEntropy { logits, label } => {
                    let probs = stable_softmax_row(&self.nodes[logits.0].value);
                    let mut dl = Matrix::zeros((1, probs.len()));
                    for c in 0..probs.len() {
                        let onehot = if c == *label { 1.0 } else { 0.0 };
                        dl[[0, c]] = (probs[c] - onehot) * g[[0, 0]];
                    }
                    accumulate(&mut grads, *logits, dl);
                }
                Op::BceWithLogit { logit, target } => {
                    let z = self.nodes[logit.0].value[[0, 0]];
                    let dz = (sigmoid(z) - target) * g[[0, 0]];
                    accumulate(&mut grads, *logit, Matrix::from_elem((1, 1), dz));
                }
                Op::SquaredErrorMean { pred, target } => {
                    let p = &self.nodes[pred.0].value;
                    let n = p.len() as f64;
                    let dp = (p - target) * (2.0 / n * g[[0, 0]]);
                    accumulate(&mut grads, *pred, dp);
                }
                Op::SumScalars(parts) => {
                    for p in parts {
                        accumulate(&mut grads, *p, g.clone());
                    }
                }
            }
        }
        store
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut grads[id.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

fn row_moments(row: &[f64]) -> (f64, f64) {
    let d = row.len() as f64;
    let mu = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
    (mu, (var + LN_EPS).sqrt())
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn stable_softmax_row(logits: &Matrix) -> Vec<f64> {
    let row = logits.row(0);
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / denom).collect()
}
