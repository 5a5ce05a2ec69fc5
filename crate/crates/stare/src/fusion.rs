//! Co-attention and cross-attention over channel embeddings, combination by
//! concatenation, and mask-aware temporal pooling into the fused vector Z.
//!
//! The cross branch carries parameters disjoint from the co branches even
//! though the wiring is identical; with shared parameters the cross branch
//! would be redundant.

use crate::error::{Error, Result};
use crate::nn::{Matrix, NodeId, ParamStore, Tape};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    None,
    CrossOnly,
    CoOnly,
    CrossAndCo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossDirection {
    /// Fixation: x queries y. Binocular: left-eye group queries right.
    Ch1QueriesCh2,
    /// Fixation: y queries x. Binocular: right-eye group queries left.
    Ch2QueriesCh1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelGrouping {
    Xy,
    LeftRightEyes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    Last,
}

/// Operational co-attention is mutual cross-channel attention; `self_attn`
/// switches to the per-channel self-attention reading for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoStyle {
    Mutual,
    SelfAttn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub direction: CrossDirection,
    pub channel_grouping: ChannelGrouping,
    pub pooling: Pooling,
    pub co_style: CoStyle,
    /// Additive attention-score penalty of `align_bias * |t - s|` between
    /// query position t and key position s. Both channels sample the same
    /// fixation at each step, so cross-channel attention favors temporal
    /// neighbors; zero disables the prior.
    pub align_bias: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            mode: FusionMode::CrossAndCo,
            direction: CrossDirection::Ch1QueriesCh2,
            channel_grouping: ChannelGrouping::Xy,
            pooling: Pooling::Mean,
            co_style: CoStyle::Mutual,
            align_bias: 4.0,
        }
    }
}

impl FusionConfig {
    /// Number of attended sequences concatenated into Z, per channel count.
    pub fn n_outputs(&self, n_channels: usize) -> usize {
        let (co, cross) = match self.channel_grouping {
            ChannelGrouping::Xy => (2, 1),
            ChannelGrouping::LeftRightEyes => (4, 2),
        };
        match self.mode {
            FusionMode::None => n_channels,
            FusionMode::CrossOnly => cross,
            FusionMode::CoOnly => co,
            FusionMode::CrossAndCo => co + cross,
        }
    }
}

pub struct Fusion {
    pub cfg: FusionConfig,
    d: usize,
    scaled: bool,
}

impl Fusion {
    pub fn new(cfg: FusionConfig, d: usize, scaled: bool) -> Fusion {
        Fusion { cfg, d, scaled }
    }

    fn co_prefixes(&self) -> Vec<String> {
        match self.cfg.channel_grouping {
            ChannelGrouping::Xy => vec!["fus.co1".into(), "fus.co2".into()],
            ChannelGrouping::LeftRightEyes => vec![
                "fus.co_x1".into(),
                "fus.co_x2".into(),
                "fus.co_y1".into(),
                "fus.co_y2".into(),
            ],
        }
    }

    fn cross_prefixes(&self) -> Vec<String> {
        match self.cfg.channel_grouping {
            ChannelGrouping::Xy => vec!["fus.cross".into()],
            ChannelGrouping::LeftRightEyes => vec!["fus.cross_x".into(), "fus.cross_y".into()],
        }
    }

    /// Allocate projection parameters for the active branches only, so the
    /// ablation ladder is visible in the parameter count.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let scale = 1.0 / (self.d as f64).sqrt();
        let mut active = Vec::new();
        if matches!(self.cfg.mode, FusionMode::CoOnly | FusionMode::CrossAndCo) {
            active.extend(self.co_prefixes());
        }
        if matches!(self.cfg.mode, FusionMode::CrossOnly | FusionMode::CrossAndCo) {
            active.extend(self.cross_prefixes());
        }
        for prefix in active {
            for suffix in ["wq", "wk"] {
                store.insert_uniform(&format!("{prefix}.{suffix}"), self.d, self.d, scale, rng);
            }
            // Identity value projection: the gated attention output starts
            // as a plain product of the two streams, so joint co-occurrence
            // features exist before any training.
            store.insert(&format!("{prefix}.wv"), Matrix::eye(self.d));
        }
    }

    /// Projected scaled attention under one parameter prefix.
    fn attn(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prefix: &str,
        query_src: NodeId,
        kv_src: NodeId,
        key_mask: &[bool],
    ) -> NodeId {
        let p = |t: &mut Tape, suffix: &str| {
            let name = format!("{prefix}.{suffix}");
            let v = store.get(&name).clone();
            t.param(&name, v)
        };
        let wq = p(tape, "wq");
        let wk = p(tape, "wk");
        let wv = p(tape, "wv");
        let q = tape.matmul(query_src, wq);
        let k = tape.matmul(kv_src, wk);
        let v = tape.matmul(kv_src, wv);
        let scores = tape.matmul_nt(q, k);
        let scale = if self.scaled { 1.0 / (self.d as f64).sqrt() } else { 1.0 };
        let mut scores = tape.scale(scores, scale);
        if self.cfg.align_bias > 0.0 {
            let (rows, cols) = tape.value(scores).dim();
            let penalty = Matrix::from_shape_fn((rows, cols), |(t, s)| {
                -self.cfg.align_bias * (t as f64 - s as f64).abs()
            });
            let penalty = tape.constant(penalty);
            scores = tape.add(scores, penalty);
        }
        let weights = tape.masked_softmax_rows(scores, key_mask);
        let attended = tape.matmul(weights, v);
        // Multiplicative gate: pairing each query position with what it
        // attended to lets pooled features carry joint co-occurrence of the
        // two streams rather than per-stream marginal summaries alone.
        tape.hadamard(attended, query_src)
    }

    /// Mutual attention between two channels with independent parameters per
    /// direction.
    pub fn co_attention(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prefix_ab: &str,
        prefix_ba: &str,
        h_a: NodeId,
        h_b: NodeId,
        mask: &[bool],
    ) -> (NodeId, NodeId) {
        match self.cfg.co_style {
            CoStyle::Mutual => (
                self.attn(tape, store, prefix_ab, h_a, h_b, mask),
                self.attn(tape, store, prefix_ba, h_b, h_a, mask),
            ),
            CoStyle::SelfAttn => (
                self.attn(tape, store, prefix_ab, h_a, h_a, mask),
                self.attn(tape, store, prefix_ba, h_b, h_b, mask),
            ),
        }
    }

    /// One-directional attention; the configured direction picks the query.
    pub fn cross_attention(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prefix: &str,
        h_1: NodeId,
        h_2: NodeId,
        mask: &[bool],
    ) -> NodeId {
        match self.cfg.direction {
            CrossDirection::Ch1QueriesCh2 => self.attn(tape, store, prefix, h_1, h_2, mask),
            CrossDirection::Ch2QueriesCh1 => self.attn(tape, store, prefix, h_2, h_1, mask),
        }
    }

    fn pool(&self, tape: &mut Tape, x: NodeId, mask: &[bool]) -> NodeId {
        match self.cfg.pooling {
            Pooling::Mean => tape.mean_pool_rows(x, mask),
            Pooling::Last => {
                let last = mask.iter().rposition(|&b| b).unwrap_or(0);
                let one_hot: Vec<bool> = (0..mask.len()).map(|i| i == last).collect();
                tape.mean_pool_rows(x, &one_hot)
            }
        }
    }

    /// Concatenate attended sequences along the feature axis and pool over
    /// time into a fixed-size vector.
    pub fn combine_and_pool(
        &self,
        tape: &mut Tape,
        parts: &[NodeId],
        mask: &[bool],
    ) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape("nothing to combine".to_string()));
        }
        let len = tape.value(parts[0]).nrows();
        if parts.iter().any(|p| tape.value(*p).nrows() != len) {
            return Err(Error::Shape(
                "combined sequences must share temporal length".to_string(),
            ));
        }
        if mask.len() != len {
            return Err(Error::Shape(format!(
                "mask length {} != sequence length {len}",
                mask.len()
            )));
        }
        let concat = if parts.len() == 1 { parts[0] } else { tape.concat_cols(parts) };
        Ok(self.pool(tape, concat, mask))
    }

    /// Fixation-path fusion of two channel embeddings into Z.
    pub fn fuse_xy(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h_1: NodeId,
        h_2: NodeId,
        mask: &[bool],
    ) -> Result<NodeId> {
        if self.cfg.channel_grouping != ChannelGrouping::Xy {
            return Err(Error::Config("fuse_xy requires xy channel grouping".to_string()));
        }
        let mut parts = Vec::new();
        match self.cfg.mode {
            FusionMode::None => parts.extend([h_1, h_2]),
            FusionMode::CrossOnly => {
                parts.push(self.cross_attention(tape, store, "fus.cross", h_1, h_2, mask));
            }
            FusionMode::CoOnly => {
                let (a, b) =
                    self.co_attention(tape, store, "fus.co1", "fus.co2", h_1, h_2, mask);
                parts.extend([a, b]);
            }
            FusionMode::CrossAndCo => {
                let (a, b) =
                    self.co_attention(tape, store, "fus.co1", "fus.co2", h_1, h_2, mask);
                parts.extend([a, b]);
                parts.push(self.cross_attention(tape, store, "fus.cross", h_1, h_2, mask));
            }
        }
        self.combine_and_pool(tape, &parts, mask)
    }

    /// Binocular fusion: mutual co-attention between corresponding channels
    /// of the two eyes, cross-attention from the dominant eye group to the
    /// other, concatenated and pooled. Channels ordered
    /// (left-x, left-y, right-x, right-y).
    pub fn fuse_binocular(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        channels: &[NodeId],
        mask: &[bool],
    ) -> Result<NodeId> {
        if self.cfg.channel_grouping != ChannelGrouping::LeftRightEyes {
            return Err(Error::Config(
                "binocular fusion requires left_right_eyes grouping".to_string(),
            ));
        }
        if channels.len() != 4 {
            return Err(Error::Config(format!(
                "binocular fusion requires K=4 channels, got {}",
                channels.len()
            )));
        }
        let (lx, ly, rx, ry) = (channels[0], channels[1], channels[2], channels[3]);
        let mut parts = Vec::new();
        if matches!(self.cfg.mode, FusionMode::None) {
            parts.extend([lx, ly, rx, ry]);
        }
        if matches!(self.cfg.mode, FusionMode::CoOnly | FusionMode::CrossAndCo) {
            let (a, b) = self.co_attention(tape, store, "fus.co_x1", "fus.co_x2", lx, rx, mask);
            parts.extend([a, b]);
            let (a, b) = self.co_attention(tape, store, "fus.co_y1", "fus.co_y2", ly, ry, mask);
            parts.extend([a, b]);
        }
        if matches!(self.cfg.mode, FusionMode::CrossOnly | FusionMode::CrossAndCo) {
            parts.push(self.cross_attention(tape, store, "fus.cross_x", lx, rx, mask));
            parts.push(self.cross_attention(tape, store, "fus.cross_y", ly, ry, mask));
        }
        self.combine_and_pool(tape, &parts, mask)
    }
}
