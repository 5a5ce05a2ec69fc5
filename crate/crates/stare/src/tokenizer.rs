//! Token sequences: ROI axis tokenization, the mean-absolute-scaling
//! quantizer used as the TokenOnly baseline, and batch padding.
//!
//! Row and column tokens occupy disjoint id ranges in one shared vocabulary;
//! the reserved ids PAD, EOS, OFF come first so content ids never collide
//! with specials.

use crate::error::{Error, Result};
use crate::gaze_data::{GazeRecords, GazeSequence};
use crate::roi_map::{MapToken, RoiMap};

pub const PAD: u32 = 0;
pub const EOS: u32 = 1;
pub const OFF: u32 = 2;
pub const N_SPECIALS: u32 = 3;

/// Content token for grid column `c`.
pub fn column_token(c: u32) -> u32 {
    N_SPECIALS + c
}

/// Content token for grid row `r`, offset past the column range.
pub fn row_token(m: &RoiMap, r: u32) -> u32 {
    N_SPECIALS + m.n_cols + r
}

/// Vocabulary size for axis channels on a grid map.
pub fn axis_vocab_size(m: &RoiMap) -> usize {
    (N_SPECIALS + m.n_cols + m.n_rows) as usize
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    /// Input channel index k (0-based).
    pub channel: usize,
    pub tokens: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn axis_token(t: MapToken, to_id: impl Fn(u32) -> u32) -> u32 {
    match t {
        MapToken::Id(i) => to_id(i),
        MapToken::Off => OFF,
    }
}

/// Tokenize a fixation sequence into (column, row) channel sequences with a
/// terminal EOS each.
pub fn tokenize_fixations(g: &GazeSequence, m: &RoiMap) -> Result<(TokenSequence, TokenSequence)> {
    let GazeRecords::Fixation(recs) = &g.records else {
        return Err(Error::Config(format!(
            "session '{}' is not fixation data",
            g.session_id
        )));
    };
    let mut xs = Vec::with_capacity(recs.len() + 1);
    let mut ys = Vec::with_capacity(recs.len() + 1);
    for r in recs {
        xs.push(axis_token(m.map_x_to_column_token(r.x_px)?, column_token));
        ys.push(axis_token(m.map_y_to_row_token(r.y_px)?, |r| row_token(m, r)));
    }
    xs.push(EOS);
    ys.push(EOS);
    Ok((
        TokenSequence { channel: 0, tokens: xs },
        TokenSequence { channel: 1, tokens: ys },
    ))
}

/// Tokenize binocular raw samples into four channel sequences ordered
/// (left-x, left-y, right-x, right-y).
pub fn tokenize_binocular(g: &GazeSequence, m: &RoiMap) -> Result<[TokenSequence; 4]> {
    let GazeRecords::BinocularRaw(recs) = &g.records else {
        return Err(Error::Config(format!(
            "session '{}' is not binocular raw data",
            g.session_id
        )));
    };
    let mut chans: [Vec<u32>; 4] = std::array::from_fn(|_| Vec::with_capacity(recs.len() + 1));
    for r in recs {
        chans[0].push(axis_token(m.map_x_to_column_token(r.left_x)?, column_token));
        chans[1].push(axis_token(m.map_y_to_row_token(r.left_y)?, |i| row_token(m, i)));
        chans[2].push(axis_token(m.map_x_to_column_token(r.right_x)?, column_token));
        chans[3].push(axis_token(m.map_y_to_row_token(r.right_y)?, |i| row_token(m, i)));
    }
    for c in &mut chans {
        c.push(EOS);
    }
    let mut it = chans.into_iter().enumerate();
    Ok(std::array::from_fn(|_| {
        let (channel, tokens) = it.next().unwrap();
        TokenSequence { channel, tokens }
    }))
}

/// Mean-absolute-scaling quantizer: scale by meanabs(series), clamp to
/// [lo, hi], assign half-open uniform bins. Returns content tokens plus EOS.
pub fn chronos_tokenize(series: &[f64], n_bins: usize, lo: f64, hi: f64) -> Result<TokenSequence> {
    let scale = mean_abs(series)?;
    if n_bins < 2 {
        return Err(Error::Config(format!("n_bins must be >= 2, got {n_bins}")));
    }
    if lo >= hi {
        return Err(Error::Config(format!("need lo < hi, got [{lo}, {hi}]")));
    }
    let mut tokens: Vec<u32> = series
        .iter()
        .map(|&v| N_SPECIALS + quantize(v / scale, n_bins, lo, hi) as u32)
        .collect();
    tokens.push(EOS);
    Ok(TokenSequence { channel: 0, tokens })
}

pub fn mean_abs(series: &[f64]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::Config("series must be non-empty".to_string()));
    }
    let scale = series.iter().map(|v| v.abs()).sum::<f64>() / series.len() as f64;
    if scale == 0.0 {
        return Err(Error::Numeric("degenerate scale: all-zero series".to_string()));
    }
    Ok(scale)
}

/// Bin index of a scaled value under half-open uniform bins over [lo, hi].
pub fn quantize(scaled: f64, n_bins: usize, lo: f64, hi: f64) -> usize {
    let v = scaled.clamp(lo, hi);
    let width = (hi - lo) / n_bins as f64;
    (((v - lo) / width).floor() as usize).min(n_bins - 1)
}

/// Bin center of bin `b`.
pub fn dequantize(bin: usize, n_bins: usize, lo: f64, hi: f64) -> f64 {
    let width = (hi - lo) / n_bins as f64;
    lo + (bin as f64 + 0.5) * width
}

/// Fixed-length batch: per-session channel sequences, right-padded with PAD,
/// with a shared mask per session marking real tokens (EOS counts as real).
#[derive(Debug, Clone)]
pub struct TokenBatch {
    /// `[session][channel][position]`, each inner vec of length `max_len`.
    pub sequences: Vec<Vec<Vec<u32>>>,
    /// `[session][position]`, true exactly on non-PAD positions.
    pub mask: Vec<Vec<bool>>,
    /// Unpadded lengths per session.
    pub lengths: Vec<usize>,
    pub max_len: usize,
}

/// Pad per-session channel groups to length `max_len`. When `truncate` is
/// set, over-long sequences keep their first `max_len - 1` tokens plus EOS.
pub fn pad_to_batch(groups: &[Vec<TokenSequence>], max_len: usize, truncate: bool) -> Result<TokenBatch> {
    if max_len < 2 {
        return Err(Error::Config(format!("batch length must be >= 2, got {max_len}")));
    }
    let mut sequences = Vec::with_capacity(groups.len());
    let mut mask = Vec::with_capacity(groups.len());
    let mut lengths = Vec::with_capacity(groups.len());
    for group in groups {
        let len = group.first().map(|s| s.len()).unwrap_or(0);
        if len == 0 {
            return Err(Error::Config("empty token sequence group".to_string()));
        }
        if group.iter().any(|s| s.len() != len) {
            return Err(Error::Config(
                "channels of one session must share length".to_string(),
            ));
        }
        let kept = if len > max_len {
            if !truncate {
                return Err(Error::Config(format!(
                    "sequence length {len} exceeds batch length {max_len} and truncation is disabled"
                )));
            }
            max_len
        } else {
            len
        };
        let mut chans = Vec::with_capacity(group.len());
        for seq in group {
            let mut padded = Vec::with_capacity(max_len);
            if len > max_len {
                padded.extend_from_slice(&seq.tokens[..max_len - 1]);
                padded.push(EOS);
            } else {
                padded.extend_from_slice(&seq.tokens);
            }
            padded.resize(max_len, PAD);
            chans.push(padded);
        }
        let row_mask: Vec<bool> = (0..max_len).map(|i| i < kept).collect();
        sequences.push(chans);
        mask.push(row_mask);
        lengths.push(kept);
    }
    Ok(TokenBatch { sequences, mask, lengths, max_len })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaze_data::{FixationRecord, RawGazeSample};
    use crate::roi_map::RoiMap;
    use proptest::prelude::*;

    fn grid2() -> RoiMap {
        RoiMap::uniform_grid(2, 2, 100.0, 100.0)
    }

    fn fix_session(points: &[(f64, f64)]) -> GazeSequence {
        let recs = points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| FixationRecord {
                session_id: "s1".to_string(),
                t_index: i as u32 + 1,
                start_ms: i as i64 * 300,
                end_ms: i as i64 * 300 + 250,
                x_px: x,
                y_px: y,
            })
            .collect();
        GazeSequence { session_id: "s1".to_string(), records: GazeRecords::Fixation(recs) }
    }

    #[test]
    fn fixation_tokens_direct_mapping() {
        let m = grid2();
        let g = fix_session(&[(25.0, 25.0), (75.0, 75.0)]);
        let (tx, ty) = tokenize_fixations(&g, &m).unwrap();
        assert_eq!(tx.tokens, vec![column_token(0), column_token(1), EOS]);
        assert_eq!(ty.tokens, vec![row_token(&m, 0), row_token(&m, 1), EOS]);
    }

    #[test]
    fn off_image_fixation_yields_off_token() {
        let m = grid2();
        let g = fix_session(&[(120.0, 50.0)]);
        let (tx, _) = tokenize_fixations(&g, &m).unwrap();
        assert_eq!(tx.tokens[0], OFF);
    }

    #[test]
    fn non_grid_map_is_rejected() {
        let mut m = grid2();
        m.grid = false;
        let g = fix_session(&[(25.0, 25.0)]);
        assert!(tokenize_fixations(&g, &m).is_err());
    }

    fn raw_session(points: &[((f64, f64), (f64, f64))]) -> GazeSequence {
        let recs = points
            .iter()
            .enumerate()
            .map(|(i, &((lx, ly), (rx, ry)))| RawGazeSample {
                session_id: "s1".to_string(),
                t_index: i as u32 + 1,
                time_ms: i as i64 * 20,
                left_x: lx,
                left_y: ly,
                right_x: rx,
                right_y: ry,
            })
            .collect();
        GazeSequence { session_id: "s1".to_string(), records: GazeRecords::BinocularRaw(recs) }
    }

    #[test]
    fn binocular_symmetric_eyes_match() {
        let m = grid2();
        let g = raw_session(&[((25.0, 25.0), (25.0, 25.0)), ((75.0, 25.0), (75.0, 25.0))]);
        let ts = tokenize_binocular(&g, &m).unwrap();
        assert_eq!(ts[0].tokens, ts[2].tokens);
        assert_eq!(ts[1].tokens, ts[3].tokens);
    }

    #[test]
    fn binocular_asymmetric_columns() {
        let m = grid2();
        let g = raw_session(&[((25.0, 25.0), (75.0, 25.0))]);
        let ts = tokenize_binocular(&g, &m).unwrap();
        assert_eq!(ts[0].tokens[0], column_token(0));
        assert_eq!(ts[2].tokens[0], column_token(1));
        assert_eq!(ts[1].tokens, ts[3].tokens);
    }

    proptest! {
        #[test]
        fn binocular_channels_share_length(n in 1usize..40, seed in 0u64..1000) {
            let m = grid2();
            let mut rng = crate::rng::stream(seed, "tok-prop");
            use rand::Rng;
            let pts: Vec<_> = (0..n)
                .map(|_| {
                    let mut p = || (rng.gen::<f64>() * 110.0 - 5.0, rng.gen::<f64>() * 110.0 - 5.0);
                    (p(), p())
                })
                .collect();
            let g = raw_session(&pts);
            let ts = tokenize_binocular(&g, &m).unwrap();
            for t in &ts {
                prop_assert_eq!(t.len(), n + 1);
            }
        }

        // Vocabulary closure on grid maps.
        #[test]
        fn axis_tokens_stay_in_vocab(x in -50.0..150.0f64, y in -50.0..150.0f64) {
            let m = grid2();
            let g = fix_session(&[(x, y)]);
            let (tx, ty) = tokenize_fixations(&g, &m).unwrap();
            let vocab = axis_vocab_size(&m) as u32;
            for t in tx.tokens.iter().chain(ty.tokens.iter()) {
                prop_assert!(*t < vocab);
            }
        }

        // Monotone quantizer.
        #[test]
        fn quantizer_is_monotone(a in -3.0..3.0f64, b in -3.0..3.0f64) {
            let (lo, hi) = (-2.0, 2.0);
            let (v1, v2) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize(v1, 16, lo, hi) <= quantize(v2, 16, lo, hi));
        }
    }

    #[test]
    fn order_preservation_watermark() {
        // Injective watermark: fixation t lands in column t mod cols.
        let m = RoiMap::uniform_grid(1, 4, 100.0, 50.0);
        let pts: Vec<(f64, f64)> =
            (0..8).map(|t| ((t % 4) as f64 * 25.0 + 10.0, 25.0)).collect();
        let g = fix_session(&pts);
        let (tx, _) = tokenize_fixations(&g, &m).unwrap();
        for (t, tok) in tx.tokens[..8].iter().enumerate() {
            assert_eq!(*tok, column_token((t % 4) as u32));
        }
    }

    #[test]
    fn chronos_scaling_example() {
        // meanabs([2,-2]) = 2 so the scaled series is [1, -1].
        let scale = mean_abs(&[2.0, -2.0]).unwrap();
        assert_eq!(scale, 2.0);
    }

    #[test]
    fn chronos_binning_oracle() {
        // series [1,2,3] scaled by meanabs 2 -> [0.5, 1.0, 1.5]; bin edges
        // 0, 0.5, 1.0, 1.5, 2.0 place them in bins 1, 2, 3.
        let seq = chronos_tokenize(&[1.0, 2.0, 3.0], 4, 0.0, 2.0).unwrap();
        assert_eq!(
            seq.tokens,
            vec![N_SPECIALS + 1, N_SPECIALS + 2, N_SPECIALS + 3, EOS]
        );
    }

    #[test]
    fn chronos_all_zero_series_is_error() {
        assert!(chronos_tokenize(&[0.0, 0.0], 4, -1.0, 1.0).is_err());
    }

    #[test]
    fn dequantize_error_within_half_bin_width() {
        // 1e4-point grid over the in-range domain.
        let (n_bins, lo, hi) = (32usize, -2.0, 2.0);
        let half_width = (hi - lo) / n_bins as f64 / 2.0;
        for i in 0..10_000 {
            let v = lo + (hi - lo) * (i as f64 + 0.5) / 10_000.0;
            let b = quantize(v, n_bins, lo, hi);
            let err = (dequantize(b, n_bins, lo, hi) - v).abs();
            assert!(err <= half_width + 1e-12, "v={v} err={err}");
        }
    }

    #[test]
    fn padding_masks_and_lengths() {
        let s = |n: usize| TokenSequence { channel: 0, tokens: (0..n as u32).map(|_| 5).collect() };
        let groups = vec![vec![s(3)], vec![s(5)]];
        let b = pad_to_batch(&groups, 6, false).unwrap();
        assert_eq!(b.mask[0], vec![true, true, true, false, false, false]);
        assert_eq!(b.mask[1], vec![true, true, true, true, true, false]);
        assert_eq!(b.sequences[0][0][3..], [PAD, PAD, PAD]);
    }

    #[test]
    fn truncation_keeps_prefix_plus_eos() {
        let mut tokens: Vec<u32> = (0..9).map(|i| N_SPECIALS + i).collect();
        tokens.push(EOS);
        let groups = vec![vec![TokenSequence { channel: 0, tokens }]];
        let b = pad_to_batch(&groups, 4, true).unwrap();
        assert_eq!(b.sequences[0][0], vec![N_SPECIALS, N_SPECIALS + 1, N_SPECIALS + 2, EOS]);
        assert_eq!(b.lengths[0], 4);
    }

    #[test]
    fn too_short_batch_length_is_config_error() {
        assert!(pad_to_batch(&[], 1, false).is_err());
    }
}
