//! Per-channel sequence encoder: token embedding + learned positional
//! embedding + a stack of pre-norm self-attention blocks with feed-forward
//! sublayers. Trained from scratch; the embedding interface is pluggable
//! between token ids and raw scalar inputs.

use crate::error::{Error, Result};
use crate::nn::{Matrix, NodeId, ParamStore, Tape};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Gelu,
    Relu,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    pub max_len: usize,
    pub tie_channel_embeddings: bool,
    pub activation: Activation,
    /// Drop the 1/sqrt(d) score scaling when false.
    pub scaled_attention: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 32,
            d: 64,
            n_layers: 2,
            n_heads: 2,
            ff_mult: 4,
            max_len: 128,
            tie_channel_embeddings: true,
            activation: Activation::Gelu,
            scaled_attention: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_heads == 0 || self.d % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "n_heads {} must divide d {}",
                self.n_heads, self.d
            )));
        }
        if self.vocab_size == 0 || self.max_len == 0 || self.ff_mult == 0 {
            return Err(Error::Config(
                "vocab_size, max_len, ff_mult must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

pub struct Encoder {
    pub cfg: EncoderConfig,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Encoder> {
        cfg.validate()?;
        Ok(Encoder { cfg })
    }

    pub(crate) fn emb_name(&self, channel: usize) -> String {
        if self.cfg.tie_channel_embeddings {
            "enc.emb".to_string()
        } else {
            format!("enc.emb.ch{channel}")
        }
    }

    /// Allocate all encoder parameters for `n_channels` input channels.
    pub fn init_params(&self, store: &mut ParamStore, n_channels: usize, rng: &mut impl Rng) {
        let cfg = &self.cfg;
        let scale = 1.0 / (cfg.d as f64).sqrt();
        // Unit-scale token embeddings keep pooled product features, and with
        // them the matched-filter logits of the choice head, at order one.
        let emb_tables = if cfg.tie_channel_embeddings { 1 } else { n_channels };
        for ch in 0..emb_tables {
            store.insert_uniform(&self.emb_name(ch), cfg.vocab_size, cfg.d, 1.0, rng);
        }
        // Raw-input projections, one per channel (RawSeq path).
        for ch in 0..n_channels {
            store.insert_uniform(&format!("enc.raw.w.ch{ch}"), 1, cfg.d, scale, rng);
        }
        // Positional vectors start an order of magnitude smaller than token
        // vectors: position information stays available to the layers while
        // positional products cannot drown token co-occurrence in the pooled
        // fusion features.
        store.insert_uniform("enc.pos", cfg.max_len, cfg.d, scale * 0.8, rng);
        let dh = cfg.d / cfg.n_heads;
        for l in 0..cfg.n_layers {
            store.insert(&format!("enc.l{l}.ln1.g"), Matrix::ones((1, cfg.d)));
            store.insert(&format!("enc.l{l}.ln1.b"), Matrix::zeros((1, cfg.d)));
            for h in 0..cfg.n_heads {
                store.insert_uniform(&format!("enc.l{l}.attn.h{h}.wq"), cfg.d, dh, scale, rng);
                store.insert_uniform(&format!("enc.l{l}.attn.h{h}.wk"), cfg.d, dh, scale, rng);
                store.insert_uniform(&format!("enc.l{l}.attn.h{h}.wv"), cfg.d, dh, scale, rng);
            }
            // Small output projections start each block near the identity,
            // so deeper encoders keep the token-product geometry the fused
            // head reads until training engages the layers.
            store.insert_uniform(&format!("enc.l{l}.attn.wo"), cfg.d, cfg.d, scale * 0.1, rng);
            store.insert(&format!("enc.l{l}.ln2.g"), Matrix::ones((1, cfg.d)));
            store.insert(&format!("enc.l{l}.ln2.b"), Matrix::zeros((1, cfg.d)));
            let ff = cfg.ff_mult * cfg.d;
            store.insert_uniform(&format!("enc.l{l}.ff.w1"), cfg.d, ff, scale, rng);
            store.insert(&format!("enc.l{l}.ff.b1"), Matrix::zeros((1, ff)));
            store.insert_uniform(&format!("enc.l{l}.ff.w2"), ff, cfg.d, scale * 0.1, rng);
            store.insert(&format!("enc.l{l}.ff.b2"), Matrix::zeros((1, cfg.d)));
        }
    }

    /// Encode one token sequence (one session, one channel) into L x d
    /// contextual embeddings.
    pub fn embed_tokens(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        tokens: &[u32],
        mask: &[bool],
        channel: usize,
    ) -> Result<NodeId> {
        if tokens.len() > self.cfg.max_len {
            return Err(Error::Length { len: tokens.len(), max: self.cfg.max_len });
        }
        for &id in tokens {
            if id as usize >= self.cfg.vocab_size {
                return Err(Error::Vocabulary { id, vocab: self.cfg.vocab_size });
            }
        }
        let emb = tape.param(&self.emb_name(channel), store.get(&self.emb_name(channel)).clone());
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let tok = tape.gather(emb, &ids);
        let h = self.add_positions(tape, store, tok, tokens.len());
        self.run_blocks(tape, store, h, mask)
    }

    /// Encode raw scalar inputs (one value per step) via a linear projection
    /// in place of the token embedding.
    pub fn embed_raw(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        values: &[f64],
        mask: &[bool],
        channel: usize,
    ) -> Result<NodeId> {
        if values.len() > self.cfg.max_len {
            return Err(Error::Length { len: values.len(), max: self.cfg.max_len });
        }
        let name = format!("enc.raw.w.ch{channel}");
        let w = tape.param(&name, store.get(&name).clone());
        let col = Matrix::from_shape_vec((values.len(), 1), values.to_vec())
            .expect("column vector");
        let x = tape.constant(col);
        let proj = tape.matmul(x, w);
        let h = self.add_positions(tape, store, proj, values.len());
        self.run_blocks(tape, store, h, mask)
    }

    fn add_positions(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: NodeId,
        len: usize,
    ) -> NodeId {
        let pos = tape.param("enc.pos", store.get("enc.pos").clone());
        let positions: Vec<usize> = (0..len).collect();
        let p = tape.gather(pos, &positions);
        tape.add(h, p)
    }

    fn run_blocks(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mut h: NodeId,
        mask: &[bool],
    ) -> Result<NodeId> {
        for l in 0..self.cfg.n_layers {
            h = self.block(tape, store, h, mask, l);
        }
        Ok(h)
    }

    /// One pre-norm residual block: H + Wo·Attn(LN(H)), then + FF(LN(·)).
    fn block(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: NodeId,
        mask: &[bool],
        layer: usize,
    ) -> NodeId {
        let cfg = &self.cfg;
        let p = |t: &mut Tape, name: String| {
            let v = store.get(&name).clone();
            t.param(&name, v)
        };
        let ln1g = p(tape, format!("enc.l{layer}.ln1.g"));
        let ln1b = p(tape, format!("enc.l{layer}.ln1.b"));
        let normed = tape.layer_norm(h, ln1g, ln1b);

        let dh = cfg.d / cfg.n_heads;
        let scale = if cfg.scaled_attention { 1.0 / (dh as f64).sqrt() } else { 1.0 };
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for head in 0..cfg.n_heads {
            let wq = p(tape, format!("enc.l{layer}.attn.h{head}.wq"));
            let wk = p(tape, format!("enc.l{layer}.attn.h{head}.wk"));
            let wv = p(tape, format!("enc.l{layer}.attn.h{head}.wv"));
            let q = tape.matmul(normed, wq);
            let k = tape.matmul(normed, wk);
            let v = tape.matmul(normed, wv);
            let scores = tape.matmul_nt(q, k);
            let scores = tape.scale(scores, scale);
            let weights = tape.masked_softmax_rows(scores, mask);
            heads.push(tape.matmul(weights, v));
        }
        let concat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
        let wo = p(tape, format!("enc.l{layer}.attn.wo"));
        let attn_out = tape.matmul(concat, wo);
        let h = tape.add(h, attn_out);

        let ln2g = p(tape, format!("enc.l{layer}.ln2.g"));
        let ln2b = p(tape, format!("enc.l{layer}.ln2.b"));
        let normed = tape.layer_norm(h, ln2g, ln2b);
        let w1 = p(tape, format!("enc.l{layer}.ff.w1"));
        let b1 = p(tape, format!("enc.l{layer}.ff.b1"));
        let w2 = p(tape, format!("enc.l{layer}.ff.w2"));
        let b2 = p(tape, format!("enc.l{layer}.ff.b2"));
        let x = tape.matmul(normed, w1);
        let x = tape.add_bias(x, b1);
        let x = match cfg.activation {
            Activation::Gelu => tape.gelu(x),
            Activation::Relu => tape.relu(x),
        };
        let x = tape.matmul(x, w2);
        let x = tape.add_bias(x, b2);
        tape.add(h, x)
    }
}
