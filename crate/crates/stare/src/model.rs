//! End-to-end model assembly: session records become channel inputs, each
//! channel is encoded, channels are fused into Z, and a task head turns Z
//! into choice logits or a count estimate.

use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::fusion::{ChannelGrouping, Fusion, FusionConfig, FusionMode};
use crate::gaze_data::{GazeRecords, GazeSequence};
use crate::nn::{GradStore, Matrix, NodeId, ParamStore, Tape};
use crate::roi_map::RoiMap;
use crate::tokenizer::{self, TokenSequence};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Input-representation and fusion ladder, ordered weakest to strongest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Raw normalized coordinates, no fusion.
    RawSeq,
    /// Mean-scaled quantization of coordinate values, no fusion.
    TokenOnly,
    /// ROI row/column tokens, no fusion.
    TokenRoi,
    /// ROI tokens plus one-directional cross-attention.
    TokenRoiCross,
    /// ROI tokens plus mutual co-attention.
    TokenRoiCo,
    /// ROI tokens plus both attention branches.
    Stare,
}

impl Variant {
    pub fn all() -> [Variant; 6] {
        [
            Variant::RawSeq,
            Variant::TokenOnly,
            Variant::TokenRoi,
            Variant::TokenRoiCross,
            Variant::TokenRoiCo,
            Variant::Stare,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::RawSeq => "raw_seq",
            Variant::TokenOnly => "token_only",
            Variant::TokenRoi => "token_roi",
            Variant::TokenRoiCross => "token_roi_cross",
            Variant::TokenRoiCo => "token_roi_co",
            Variant::Stare => "stare",
        }
    }

    pub fn fusion_mode(&self) -> FusionMode {
        match self {
            Variant::RawSeq | Variant::TokenOnly | Variant::TokenRoi => FusionMode::None,
            Variant::TokenRoiCross => FusionMode::CrossOnly,
            Variant::TokenRoiCo => FusionMode::CoOnly,
            Variant::Stare => FusionMode::CrossAndCo,
        }
    }

    pub fn uses_roi_tokens(&self) -> bool {
        !matches!(self, Variant::RawSeq | Variant::TokenOnly)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// One sigmoid logit per (session, candidate product).
    ChoiceBinary,
    /// One softmax over the full product set per session.
    ChoiceMulticlass,
    /// Linear regression of the purchased item count.
    Count,
}

pub const CHRONOS_BINS: usize = 64;
pub const CHRONOS_LO: f64 = 0.0;
pub const CHRONOS_HI: f64 = 2.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub fusion: FusionConfig,
    pub variant: Variant,
    pub task: TaskKind,
    /// Number of candidate products J (grid cells for shelf data).
    pub n_candidates: usize,
    pub head_hidden: usize,
    pub chronos_bins: usize,
    /// Axis tokens (column token, row token) per candidate, indexed by
    /// candidate id. When present and the variant consumes ROI tokens, the
    /// candidate embedding is read from the encoder token table (plus a free
    /// per-candidate residual) so its statistics are shared across all
    /// candidates in the same row or column.
    pub candidate_tokens: Option<Vec<(u32, u32)>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            fusion: FusionConfig::default(),
            variant: Variant::Stare,
            task: TaskKind::ChoiceBinary,
            n_candidates: 64,
            head_hidden: 32,
            chronos_bins: CHRONOS_BINS,
            candidate_tokens: None,
        }
    }
}

impl ModelConfig {
    /// Smallest vocabulary covering every token the variant can emit.
    pub fn required_vocab(variant: Variant, map: &RoiMap, chronos_bins: usize) -> usize {
        match variant {
            Variant::RawSeq => tokenizer::N_SPECIALS as usize,
            Variant::TokenOnly => tokenizer::N_SPECIALS as usize + chronos_bins,
            _ => tokenizer::axis_vocab_size(map),
        }
    }

    /// Per-candidate (column token, row token) pairs for a grid map, indexed
    /// by ROI id.
    pub fn candidate_axis_tokens(map: &RoiMap) -> Vec<(u32, u32)> {
        let mut out = vec![(tokenizer::OFF, tokenizer::OFF); map.n_rois()];
        for roi in &map.rois {
            out[roi.id as usize] =
                (tokenizer::column_token(roi.col), tokenizer::row_token(map, roi.row));
        }
        out
    }
}

/// Per-session inputs after tokenization, ready for the encoder. All
/// channels of one session share length and mask.
#[derive(Debug, Clone)]
pub struct SessionInput {
    pub session_id: String,
    pub channels: ChannelInputs,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone)]
pub enum ChannelInputs {
    Tokens(Vec<TokenSequence>),
    Raw(Vec<Vec<f64>>),
}

impl SessionInput {
    pub fn n_channels(&self) -> usize {
        match &self.channels {
            ChannelInputs::Tokens(seqs) => seqs.len(),
            ChannelInputs::Raw(series) => series.len(),
        }
    }
}

fn truncate_tokens(mut seq: TokenSequence, max_len: usize) -> TokenSequence {
    if seq.tokens.len() > max_len {
        seq.tokens.truncate(max_len - 1);
        seq.tokens.push(tokenizer::EOS);
    }
    seq
}

/// Tokenize one session for the chosen variant. Sequences longer than
/// `max_len` keep the earliest steps; tokenized forms keep a final EOS.
pub fn prepare_session(
    seq: &GazeSequence,
    map: &RoiMap,
    variant: Variant,
    chronos_bins: usize,
    max_len: usize,
) -> Result<SessionInput> {
    if max_len < 2 {
        return Err(Error::Config(format!("max_len {max_len} too small")));
    }
    let channels = match (variant, &seq.records) {
        (Variant::RawSeq, GazeRecords::Fixation(recs)) => {
            let xs: Vec<f64> = recs.iter().map(|r| r.x_px / map.image_width).collect();
            let ys: Vec<f64> = recs.iter().map(|r| r.y_px / map.image_height).collect();
            ChannelInputs::Raw(vec![xs, ys])
        }
        (Variant::RawSeq, GazeRecords::BinocularRaw(recs)) => ChannelInputs::Raw(vec![
            recs.iter().map(|r| r.left_x / map.image_width).collect(),
            recs.iter().map(|r| r.left_y / map.image_height).collect(),
            recs.iter().map(|r| r.right_x / map.image_width).collect(),
            recs.iter().map(|r| r.right_y / map.image_height).collect(),
        ]),
        (Variant::TokenOnly, GazeRecords::Fixation(recs)) => {
            let xs: Vec<f64> = recs.iter().map(|r| r.x_px).collect();
            let ys: Vec<f64> = recs.iter().map(|r| r.y_px).collect();
            ChannelInputs::Tokens(vec![
                tokenizer::chronos_tokenize(&xs, chronos_bins, CHRONOS_LO, CHRONOS_HI)?,
                tokenizer::chronos_tokenize(&ys, chronos_bins, CHRONOS_LO, CHRONOS_HI)?,
            ])
        }
        (Variant::TokenOnly, GazeRecords::BinocularRaw(recs)) => {
            let series: [Vec<f64>; 4] = [
                recs.iter().map(|r| r.left_x).collect(),
                recs.iter().map(|r| r.left_y).collect(),
                recs.iter().map(|r| r.right_x).collect(),
                recs.iter().map(|r| r.right_y).collect(),
            ];
            let mut toks = Vec::with_capacity(4);
            for s in &series {
                toks.push(tokenizer::chronos_tokenize(s, chronos_bins, CHRONOS_LO, CHRONOS_HI)?);
            }
            ChannelInputs::Tokens(toks)
        }
        (_, GazeRecords::Fixation(_)) => {
            let (x, y) = tokenizer::tokenize_fixations(seq, map)?;
            ChannelInputs::Tokens(vec![x, y])
        }
        (_, GazeRecords::BinocularRaw(_)) => {
            ChannelInputs::Tokens(tokenizer::tokenize_binocular(seq, map)?.into())
        }
    };
    let channels = match channels {
        ChannelInputs::Tokens(seqs) => ChannelInputs::Tokens(
            seqs.into_iter().map(|s| truncate_tokens(s, max_len)).collect(),
        ),
        ChannelInputs::Raw(series) => ChannelInputs::Raw(
            series
                .into_iter()
                .map(|mut s| {
                    s.truncate(max_len);
                    s
                })
                .collect(),
        ),
    };
    let len = match &channels {
        ChannelInputs::Tokens(seqs) => seqs[0].tokens.len(),
        ChannelInputs::Raw(series) => series[0].len(),
    };
    Ok(SessionInput {
        session_id: seq.session_id.clone(),
        channels,
        mask: vec![true; len],
    })
}

/// Training target for one session under a fixed task.
#[derive(Debug, Clone)]
pub enum Target {
    /// Candidate ids paired with 0/1 labels (positives plus sampled
    /// negatives).
    Choice(Vec<(u32, f64)>),
    Class(u32),
    Count(f64),
}

pub struct StareModel {
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub fusion: Fusion,
}

impl StareModel {
    pub fn new(mut cfg: ModelConfig) -> Result<StareModel> {
        cfg.fusion.mode = cfg.variant.fusion_mode();
        if cfg.n_candidates == 0 || cfg.head_hidden == 0 || cfg.chronos_bins == 0 {
            return Err(Error::Config("model sizes must be positive".to_string()));
        }
        if let Some(toks) = &cfg.candidate_tokens {
            if toks.len() != cfg.n_candidates {
                return Err(Error::Config(format!(
                    "candidate_tokens has {} entries for {} candidates",
                    toks.len(),
                    cfg.n_candidates
                )));
            }
            if cfg.variant.uses_roi_tokens() {
                let vocab = cfg.encoder.vocab_size as u32;
                if toks.iter().any(|&(c, r)| c >= vocab || r >= vocab) {
                    return Err(Error::Config(
                        "candidate_tokens exceed the encoder vocabulary".to_string(),
                    ));
                }
            }
        }
        let encoder = Encoder::new(cfg.encoder.clone())?;
        let fusion = Fusion::new(cfg.fusion.clone(), cfg.encoder.d, cfg.encoder.scaled_attention);
        Ok(StareModel { cfg, encoder, fusion })
    }

    fn n_channels(&self) -> usize {
        match self.cfg.fusion.channel_grouping {
            ChannelGrouping::Xy => 2,
            ChannelGrouping::LeftRightEyes => 4,
        }
    }

    fn ties_candidates(&self) -> bool {
        self.cfg.candidate_tokens.is_some() && self.cfg.variant.uses_roi_tokens()
    }

    /// Width of Z after concatenation and pooling.
    pub fn fused_dim(&self) -> usize {
        self.cfg.fusion.n_outputs(self.n_channels()) * self.cfg.encoder.d
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> ParamStore {
        let mut store = ParamStore::new();
        self.encoder.init_params(&mut store, self.n_channels(), rng);
        self.fusion.init_params(&mut store, rng);
        let dz = self.fused_dim();
        let d = self.cfg.encoder.d;
        let h = self.cfg.head_hidden;
        let j = self.cfg.n_candidates;
        match self.cfg.task {
            TaskKind::ChoiceBinary => {
                if self.ties_candidates() {
                    // Structured candidate embedding built from axis tables
                    // so every candidate in the same row or column shares
                    // statistics: an additive column + row part carries
                    // marginal evidence, a column-gated-by-row product part
                    // singles out one grid cell for joint evidence, and the
                    // per-candidate table is a zero-initialized residual.
                    // Zero-initialized axis tables and residual: at
                    // initialization the candidate embedding is exactly the
                    // token-embedding product, so the interaction shortcut
                    // starts as a matched filter for joint visit counts
                    // instead of being drowned by random candidate noise.
                    let v = self.cfg.encoder.vocab_size;
                    store.insert("head.cand_col", Matrix::zeros((v, d)));
                    store.insert("head.cand_row", Matrix::zeros((v, d)));
                    store.insert("head.cand", Matrix::zeros((j, d)));
                    self.init_axis_codes(&mut store);
                } else {
                    store.insert_uniform("head.cand", j, d, 1.0 / (d as f64).sqrt(), rng);
                }
                // Stacked identity blocks: each d-wide slice of Z reaches
                // the interaction feature unmixed at initialization.
                let blocks = dz / d;
                let mut proj = Matrix::zeros((dz, d));
                for b in 0..blocks {
                    for k in 0..d {
                        proj[[b * d + k, k]] = 1.0 / blocks as f64;
                    }
                }
                store.insert("head.proj", proj);
                // Constant readout so the interaction's matched-filter sum
                // is active at initialization instead of cancelling.
                store.insert("head.u", Matrix::from_elem((d, 1), 1.0 / (d as f64).sqrt()));
                let w1_rows = dz + 2 * d;
                store.insert_uniform("head.w1", w1_rows, h, 1.0 / (w1_rows as f64).sqrt(), rng);
                store.insert("head.b1", Matrix::zeros((1, h)));
                // Zero-initialized output layer: the MLP contributes nothing
                // at initialization, leaving the interaction shortcut as the
                // only logit path until training engages it.
                store.insert("head.w2", Matrix::zeros((h, 1)));
                store.insert("head.b2", Matrix::zeros((1, 1)));
            }
            TaskKind::ChoiceMulticlass => {
                store.insert_uniform("head.wc", dz, j, 1.0 / (dz as f64).sqrt(), rng);
                store.insert("head.bc", Matrix::zeros((1, j)));
            }
            TaskKind::Count => {
                store.insert_uniform("head.wr", dz, 1, 1.0 / (dz as f64).sqrt(), rng);
                store.insert("head.br", Matrix::zeros((1, 1)));
            }
        }
        store
    }

    /// Overwrite the axis-token embeddings with sign codes whose elementwise
    /// column-by-row products are mutually orthogonal across grid cells.
    /// Random embeddings leave every cell's product code correlated with its
    /// neighbours, so the interaction readout sums joint visit counts plus
    /// cross-talk from all other cells; orthogonal codes remove that
    /// cross-talk at initialization. Skipped when the code does not fit in d.
    fn init_axis_codes(&self, store: &mut ParamStore) {
        let Some(toks) = &self.cfg.candidate_tokens else { return };
        let d = self.cfg.encoder.d;
        let mut cols: Vec<u32> = toks.iter().map(|t| t.0).collect();
        cols.sort_unstable();
        cols.dedup();
        let mut rows: Vec<u32> = toks.iter().map(|t| t.1).collect();
        rows.sort_unstable();
        rows.dedup();
        let k1 = cols.len().next_power_of_two();
        let k2 = rows.len().next_power_of_two();
        if k1 * k2 > d {
            return;
        }
        let h1 = hadamard_signs(k1);
        let h2 = hadamard_signs(k2);
        // Channel tables may be tied to one tensor, so write both axes into
        // each table before storing it back.
        let names: Vec<String> = if self.encoder.emb_name(0) == self.encoder.emb_name(1) {
            vec![self.encoder.emb_name(0)]
        } else {
            vec![self.encoder.emb_name(0), self.encoder.emb_name(1)]
        };
        for name in names {
            let mut emb = store.get(&name).clone();
            for (c, &tok) in cols.iter().enumerate() {
                for b in 0..k1 {
                    for i in 0..k2 {
                        emb[[tok as usize, b * k2 + i]] = h1[c][b];
                    }
                }
            }
            for (r, &tok) in rows.iter().enumerate() {
                for b in 0..k1 {
                    for i in 0..k2 {
                        emb[[tok as usize, b * k2 + i]] = h2[r][i];
                    }
                }
            }
            store.replace(&name, emb);
        }
    }

    /// Encode each channel and fuse into the session vector Z (1 x dz).
    pub fn forward_z(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: &SessionInput,
    ) -> Result<NodeId> {
        let expected = self.n_channels();
        if input.n_channels() != expected {
            return Err(Error::Config(format!(
                "model expects {expected} channels, session '{}' has {}",
                input.session_id,
                input.n_channels()
            )));
        }
        let mut hs = Vec::with_capacity(expected);
        match &input.channels {
            ChannelInputs::Tokens(seqs) => {
                for (ch, seq) in seqs.iter().enumerate() {
                    hs.push(self.encoder.embed_tokens(tape, store, &seq.tokens, &input.mask, ch)?);
                }
            }
            ChannelInputs::Raw(series) => {
                for (ch, vals) in series.iter().enumerate() {
                    hs.push(self.encoder.embed_raw(tape, store, vals, &input.mask, ch)?);
                }
            }
        }
        match self.cfg.fusion.channel_grouping {
            ChannelGrouping::Xy => self.fusion.fuse_xy(tape, store, hs[0], hs[1], &input.mask),
            ChannelGrouping::LeftRightEyes => {
                self.fusion.fuse_binocular(tape, store, &hs, &input.mask)
            }
        }
    }

    fn head_param(&self, tape: &mut Tape, store: &ParamStore, name: &str) -> NodeId {
        tape.param(name, store.get(name).clone())
    }

    /// Sigmoid logit for one candidate. The head concatenates a learned
    /// candidate embedding onto Z and also feeds their elementwise product
    /// (after projecting Z to the embedding width) so the classifier can
    /// express per-candidate linear readouts of Z directly, plus a bilinear
    /// shortcut into the logit.
    pub fn choice_logit(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: NodeId,
        candidate: u32,
    ) -> Result<NodeId> {
        if self.cfg.task != TaskKind::ChoiceBinary {
            return Err(Error::Config("choice_logit requires the binary choice head".to_string()));
        }
        if candidate as usize >= self.cfg.n_candidates {
            return Err(Error::Vocabulary { id: candidate, vocab: self.cfg.n_candidates });
        }
        let cand_table = self.head_param(tape, store, "head.cand");
        let mut cand = tape.gather(cand_table, &[candidate as usize]);
        if self.ties_candidates() {
            let (col_tok, row_tok) = self.cfg.candidate_tokens.as_ref().unwrap()[candidate as usize];
            let (c, r) = (col_tok as usize, row_tok as usize);
            let col_table = self.head_param(tape, store, "head.cand_col");
            let row_table = self.head_param(tape, store, "head.cand_row");
            let col_emb = tape.gather(col_table, &[c]);
            let row_emb = tape.gather(row_table, &[r]);
            let additive = tape.add(col_emb, row_emb);
            // Product part reuses the encoder token embeddings, matching the
            // gated-fusion components of Z so the interaction feature reads
            // this candidate's joint visit evidence directly.
            let colx_table = self.head_param(tape, store, &self.encoder.emb_name(0));
            let rowx_table = self.head_param(tape, store, &self.encoder.emb_name(1));
            let colx_emb = tape.gather(colx_table, &[c]);
            let rowx_emb = tape.gather(rowx_table, &[r]);
            let product = tape.hadamard(colx_emb, rowx_emb);
            let tied = tape.add(additive, product);
            cand = tape.add(cand, tied);
        }
        let proj = self.head_param(tape, store, "head.proj");
        let zp = tape.matmul(z, proj);
        let interaction = tape.hadamard(zp, cand);
        let joined = tape.concat_cols(&[z, cand, interaction]);
        let w1 = self.head_param(tape, store, "head.w1");
        let b1 = self.head_param(tape, store, "head.b1");
        let hidden = tape.matmul(joined, w1);
        let hidden = tape.add_bias(hidden, b1);
        let hidden = tape.relu(hidden);
        let w2 = self.head_param(tape, store, "head.w2");
        let b2 = self.head_param(tape, store, "head.b2");
        let mlp_logit = tape.matmul(hidden, w2);
        let u = self.head_param(tape, store, "head.u");
        let shortcut = tape.matmul(interaction, u);
        let logit = tape.add(mlp_logit, shortcut);
        Ok(tape.add_bias(logit, b2))
    }

    /// Softmax logits over all J candidates.
    pub fn class_logits(&self, tape: &mut Tape, store: &ParamStore, z: NodeId) -> Result<NodeId> {
        if self.cfg.task != TaskKind::ChoiceMulticlass {
            return Err(Error::Config("class_logits requires the multiclass head".to_string()));
        }
        let wc = self.head_param(tape, store, "head.wc");
        let bc = self.head_param(tape, store, "head.bc");
        let logits = tape.matmul(z, wc);
        Ok(tape.add_bias(logits, bc))
    }

    /// Linear count estimate.
    pub fn count_prediction(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: NodeId,
    ) -> Result<NodeId> {
        if self.cfg.task != TaskKind::Count {
            return Err(Error::Config("count_prediction requires the count head".to_string()));
        }
        let wr = self.head_param(tape, store, "head.wr");
        let br = self.head_param(tape, store, "head.br");
        let pred = tape.matmul(z, wr);
        Ok(tape.add_bias(pred, br))
    }

    /// Session loss for the configured task. Z is computed once and shared
    /// across candidates.
    pub fn session_loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: &SessionInput,
        target: &Target,
    ) -> Result<NodeId> {
        let z = self.forward_z(tape, store, input)?;
        match (self.cfg.task, target) {
            (TaskKind::ChoiceBinary, Target::Choice(pairs)) => {
                if pairs.is_empty() {
                    return Err(Error::Config("empty candidate list".to_string()));
                }
                let mut losses = Vec::with_capacity(pairs.len());
                for &(cand, label) in pairs {
                    let logit = self.choice_logit(tape, store, z, cand)?;
                    losses.push(tape.bce_with_logit(logit, label));
                }
                let sum = tape.sum_scalars(&losses);
                Ok(tape.scale(sum, 1.0 / pairs.len() as f64))
            }
            (TaskKind::ChoiceMulticlass, Target::Class(label)) => {
                if *label as usize >= self.cfg.n_candidates {
                    return Err(Error::Index(format!(
                        "class label {label} outside 0..{}",
                        self.cfg.n_candidates
                    )));
                }
                let logits = self.class_logits(tape, store, z)?;
                Ok(tape.softmax_cross_entropy(logits, *label as usize))
            }
            (TaskKind::Count, Target::Count(y)) => {
                let pred = self.count_prediction(tape, store, z)?;
                Ok(tape.squared_error_mean(pred, Matrix::from_elem((1, 1), *y)))
            }
            _ => Err(Error::Config("target kind does not match task head".to_string())),
        }
    }

    /// Loss value and gradients for one session on a fresh tape.
    pub fn loss_and_grads(
        &self,
        store: &ParamStore,
        input: &SessionInput,
        target: &Target,
    ) -> Result<(f64, GradStore)> {
        let mut tape = Tape::new();
        let loss = self.session_loss(&mut tape, store, input, target)?;
        Ok((tape.scalar(loss), tape.backward(loss)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaze_data::{generate_synthetic, SyntheticConfig};
    use crate::nn::grad_check;
    use crate::rng;

    fn small_dataset() -> (crate::gaze_data::Dataset, RoiMap) {
        let cfg = SyntheticConfig {
            rows: 3,
            cols: 3,
            sessions: 4,
            min_fix: 5,
            max_fix: 9,
            ..Default::default()
        };
        generate_synthetic(&cfg, 900).unwrap()
    }

    fn small_model(variant: Variant, task: TaskKind, map: &RoiMap) -> StareModel {
        let mut cfg = ModelConfig {
            variant,
            task,
            n_candidates: map.n_rois(),
            head_hidden: 8,
            chronos_bins: 16,
            ..Default::default()
        };
        cfg.encoder.d = 8;
        cfg.encoder.n_layers = 1;
        cfg.encoder.n_heads = 2;
        cfg.encoder.ff_mult = 2;
        cfg.encoder.vocab_size = ModelConfig::required_vocab(variant, map, cfg.chronos_bins);
        StareModel::new(cfg).unwrap()
    }

    #[test]
    fn prepare_roi_variant_appends_eos_and_full_mask() {
        let (data, map) = small_dataset();
        let (seq, _) = &data.sessions[0];
        let input = prepare_session(seq, &map, Variant::Stare, 16, 64).unwrap();
        match &input.channels {
            ChannelInputs::Tokens(seqs) => {
                assert_eq!(seqs.len(), 2);
                assert_eq!(seqs[0].tokens.len(), seq.len() + 1);
                assert_eq!(*seqs[0].tokens.last().unwrap(), tokenizer::EOS);
            }
            _ => panic!("expected tokens"),
        }
        assert!(input.mask.iter().all(|&b| b));
    }

    #[test]
    fn prepare_raw_variant_keeps_length_without_eos() {
        let (data, map) = small_dataset();
        let (seq, _) = &data.sessions[0];
        let input = prepare_session(seq, &map, Variant::RawSeq, 16, 64).unwrap();
        match &input.channels {
            ChannelInputs::Raw(series) => {
                assert_eq!(series.len(), 2);
                assert_eq!(series[0].len(), seq.len());
                assert!(series[0].iter().all(|v| (0.0..=1.0).contains(v)));
            }
            _ => panic!("expected raw"),
        }
    }

    #[test]
    fn prepare_truncates_to_max_len() {
        let (data, map) = small_dataset();
        let (seq, _) = &data.sessions[0];
        let input = prepare_session(seq, &map, Variant::Stare, 16, 4).unwrap();
        match &input.channels {
            ChannelInputs::Tokens(seqs) => {
                assert_eq!(seqs[0].tokens.len(), 4);
                assert_eq!(*seqs[0].tokens.last().unwrap(), tokenizer::EOS);
            }
            _ => panic!("expected tokens"),
        }
    }

    #[test]
    fn fused_dim_tracks_variant() {
        let (_, map) = small_dataset();
        let d = 8;
        assert_eq!(small_model(Variant::TokenRoi, TaskKind::Count, &map).fused_dim(), 2 * d);
        assert_eq!(small_model(Variant::TokenRoiCross, TaskKind::Count, &map).fused_dim(), d);
        assert_eq!(small_model(Variant::Stare, TaskKind::Count, &map).fused_dim(), 3 * d);
    }

    #[test]
    fn forward_is_deterministic_given_params() {
        let (data, map) = small_dataset();
        let model = small_model(Variant::Stare, TaskKind::Count, &map);
        let store = model.init_params(&mut rng::stream(1, "model-init"));
        let (seq, _) = &data.sessions[0];
        let input = prepare_session(seq, &map, Variant::Stare, 16, 64).unwrap();
        let z_of = || {
            let mut tape = Tape::new();
            let z = model.forward_z(&mut tape, &store, &input).unwrap();
            tape.value(z).clone()
        };
        assert_eq!(z_of(), z_of());
    }

    #[test]
    fn all_variants_and_tasks_produce_finite_losses() {
        let (data, map) = small_dataset();
        for variant in Variant::all() {
            for task in [TaskKind::ChoiceBinary, TaskKind::ChoiceMulticlass, TaskKind::Count] {
                let model = small_model(variant, task, &map);
                let store = model.init_params(&mut rng::stream(2, "model-init"));
                let (seq, out) = &data.sessions[1];
                let input = prepare_session(seq, &map, variant, 16, 64).unwrap();
                let target = match task {
                    TaskKind::ChoiceBinary => {
                        let mut pairs: Vec<(u32, f64)> =
                            out.chosen_roi_ids.iter().map(|&i| (i, 1.0)).collect();
                        pairs.push((0, 0.0));
                        Target::Choice(pairs)
                    }
                    TaskKind::ChoiceMulticlass => Target::Class(0),
                    TaskKind::Count => Target::Count(out.item_count as f64),
                };
                let (loss, grads) = model.loss_and_grads(&store, &input, &target).unwrap();
                assert!(loss.is_finite(), "{} {:?}", variant.name(), task);
                assert!(!grads.is_empty());
            }
        }
    }

    #[test]
    fn mismatched_target_kind_is_rejected() {
        let (data, map) = small_dataset();
        let model = small_model(Variant::Stare, TaskKind::Count, &map);
        let store = model.init_params(&mut rng::stream(3, "model-init"));
        let (seq, _) = &data.sessions[0];
        let input = prepare_session(seq, &map, Variant::Stare, 16, 64).unwrap();
        assert!(model.loss_and_grads(&store, &input, &Target::Class(0)).is_err());
    }

    #[test]
    fn out_of_range_candidate_is_rejected() {
        let (data, map) = small_dataset();
        let model = small_model(Variant::Stare, TaskKind::ChoiceBinary, &map);
        let store = model.init_params(&mut rng::stream(4, "model-init"));
        let (seq, _) = &data.sessions[0];
        let input = prepare_session(seq, &map, Variant::Stare, 16, 64).unwrap();
        let bad = Target::Choice(vec![(map.n_rois() as u32, 1.0)]);
        assert!(model.loss_and_grads(&store, &input, &bad).is_err());
    }

    #[test]
    fn full_model_gradients_check_out() {
        let (data, map) = small_dataset();
        let model = small_model(Variant::Stare, TaskKind::ChoiceBinary, &map);
        let store = model.init_params(&mut rng::stream(5, "model-init"));
        let (seq, out) = &data.sessions[2];
        let input = prepare_session(seq, &map, Variant::Stare, 16, 64).unwrap();
        let mut pairs: Vec<(u32, f64)> = out.chosen_roi_ids.iter().map(|&i| (i, 1.0)).collect();
        pairs.push((1, 0.0));
        let target = Target::Choice(pairs);
        let err = grad_check(
            |p| model.loss_and_grads(p, &input, &target).unwrap(),
            &store,
            1e-5,
            40,
            5,
        );
        assert!(err < 1e-4, "err {err}");
    }
}

/// Rows of a Sylvester sign matrix: n must be a power of two; any two
/// distinct rows have zero dot product.
fn hadamard_signs(n: usize) -> Vec<Vec<f64>> {
    let mut h = vec![vec![1.0]];
    while h.len() < n {
        let m = h.len();
        let mut next = vec![vec![0.0; 2 * m]; 2 * m];
        for (r, row) in h.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                next[r][c] = v;
                next[r][c + m] = v;
                next[r + m][c] = v;
                next[r + m][c + m] = -v;
            }
        }
        h = next;
    }
    h
}
