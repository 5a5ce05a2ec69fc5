//! Gaze data model, CSV ingestion, and a deterministic synthetic generator
//! producing choice-labeled scan-paths with a planted ROI-dwell signal.

use crate::error::{Error, Result};
use crate::rng;
use crate::roi_map::RoiMap;
use rand::Rng;
use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

pub const FIXATION_HEADER: &str = "session_id,t_index,start_ms,end_ms,x_px,y_px";
pub const RAW_GAZE_HEADER: &str = "session_id,t_index,time_ms,left_x,left_y,right_x,right_y";
pub const OUTCOMES_HEADER: &str = "session_id,shelf_id,chosen_roi_ids,item_count";

/// One eye fixation (positions of both eyes averaged upstream).
#[derive(Debug, Clone, PartialEq)]
pub struct FixationRecord {
    pub session_id: String,
    pub t_index: u32,
    pub start_ms: i64,
    pub end_ms: i64,
    pub x_px: f64,
    pub y_px: f64,
}

/// One raw binocular sample; K=4 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGazeSample {
    pub session_id: String,
    pub t_index: u32,
    pub time_ms: i64,
    pub left_x: f64,
    pub left_y: f64,
    pub right_x: f64,
    pub right_y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GazeRecords {
    Fixation(Vec<FixationRecord>),
    BinocularRaw(Vec<RawGazeSample>),
}

/// Per-session time series; non-empty, modality homogeneous.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeSequence {
    pub session_id: String,
    pub records: GazeRecords,
}

impl GazeSequence {
    pub fn len(&self) -> usize {
        match &self.records {
            GazeRecords::Fixation(v) => v.len(),
            GazeRecords::BinocularRaw(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_fixation(&self) -> bool {
        matches!(self.records, GazeRecords::Fixation(_))
    }
}

/// Choice outcome for one session (one participant viewing one shelf).
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub session_id: String,
    pub shelf_id: String,
    pub chosen_roi_ids: BTreeSet<u32>,
    pub item_count: u32,
    /// Present only for single-choice tasks.
    pub class_label: Option<u32>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub sessions: Vec<(GazeSequence, Outcome)>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(sessions: Vec<(GazeSequence, Outcome)>) -> Result<Dataset> {
        let mut index = HashMap::with_capacity(sessions.len());
        for (i, (g, o)) in sessions.iter().enumerate() {
            if g.session_id != o.session_id {
                return Err(Error::Integrity(format!(
                    "sequence session '{}' paired with outcome session '{}'",
                    g.session_id, o.session_id
                )));
            }
            if index.insert(g.session_id.clone(), i).is_some() {
                return Err(Error::Integrity(format!(
                    "duplicate session_id '{}'",
                    g.session_id
                )));
            }
        }
        Ok(Dataset { sessions, index })
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn get(&self, session_id: &str) -> Option<&(GazeSequence, Outcome)> {
        self.index.get(session_id).map(|&i| &self.sessions[i])
    }

    pub fn mean_len(&self) -> f64 {
        if self.sessions.is_empty() {
            return 0.0;
        }
        let total: usize = self.sessions.iter().map(|(g, _)| g.len()).sum();
        total as f64 / self.sessions.len() as f64
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn open_reader(path: &Path, expected_header: &str) -> Result<csv::Reader<std::fs::File>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| parse_err(path, 0, e.to_string()))?;
    let header = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != expected_header {
        return Err(parse_err(
            path,
            1,
            format!("expected header '{expected_header}', got '{header}'"),
        ));
    }
    Ok(rdr)
}

fn field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    name: &str,
    path: &Path,
    line: usize,
) -> Result<T> {
    let raw = rec
        .get(idx)
        .ok_or_else(|| parse_err(path, line, format!("missing field '{name}'")))?;
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("non-numeric or invalid '{name}': '{raw}'")))
}

/// Group parsed records into per-session sequences sorted by t_index.
/// Sessions are ordered by session_id for deterministic output.
fn group_sessions<R, F, G>(records: Vec<R>, session_of: F, t_of: G) -> Result<Vec<(String, Vec<R>)>>
where
    F: Fn(&R) -> &str,
    G: Fn(&R) -> u32,
{
    let mut by_session: Vec<(String, Vec<R>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for r in records {
        let sid = session_of(&r).to_string();
        let i = *index.entry(sid.clone()).or_insert_with(|| {
            by_session.push((sid, Vec::new()));
            by_session.len() - 1
        });
        by_session[i].1.push(r);
    }
    by_session.sort_by(|a, b| a.0.cmp(&b.0));
    for (sid, recs) in &mut by_session {
        recs.sort_by_key(|r| t_of(r));
        for w in recs.windows(2) {
            if t_of(&w[0]) == t_of(&w[1]) {
                return Err(Error::Integrity(format!(
                    "duplicate (session_id, t_index) = ({sid}, {})",
                    t_of(&w[0])
                )));
            }
        }
    }
    Ok(by_session)
}

/// Load fixation sequences from CSV, grouped by session and sorted by t_index.
pub fn load_fixations(path: impl AsRef<Path>) -> Result<Vec<GazeSequence>> {
    let path = path.as_ref();
    let mut rdr = open_reader(path, FIXATION_HEADER)?;
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        if rec.len() != 6 {
            return Err(parse_err(path, line, format!("expected 6 fields, got {}", rec.len())));
        }
        let r = FixationRecord {
            session_id: rec.get(0).unwrap().to_string(),
            t_index: field(&rec, 1, "t_index", path, line)?,
            start_ms: field(&rec, 2, "start_ms", path, line)?,
            end_ms: field(&rec, 3, "end_ms", path, line)?,
            x_px: field(&rec, 4, "x_px", path, line)?,
            y_px: field(&rec, 5, "y_px", path, line)?,
        };
        if r.end_ms <= r.start_ms {
            return Err(parse_err(path, line, "end_ms must exceed start_ms"));
        }
        records.push(r);
    }
    let grouped = group_sessions(records, |r| &r.session_id, |r| r.t_index)?;
    for (sid, recs) in &grouped {
        for w in recs.windows(2) {
            if w[1].start_ms < w[0].start_ms {
                return Err(Error::Integrity(format!(
                    "start_ms decreases within session '{sid}'"
                )));
            }
        }
    }
    Ok(grouped
        .into_iter()
        .map(|(session_id, recs)| GazeSequence {
            session_id,
            records: GazeRecords::Fixation(recs),
        })
        .collect())
}

/// Load raw binocular gaze sequences; rejects non-uniform sampling beyond
/// a ±1 ms tolerance.
pub fn load_raw_gaze(path: impl AsRef<Path>) -> Result<Vec<GazeSequence>> {
    let path = path.as_ref();
    let mut rdr = open_reader(path, RAW_GAZE_HEADER)?;
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        if rec.len() != 7 {
            return Err(parse_err(path, line, format!("expected 7 fields, got {}", rec.len())));
        }
        records.push(RawGazeSample {
            session_id: rec.get(0).unwrap().to_string(),
            t_index: field(&rec, 1, "t_index", path, line)?,
            time_ms: field(&rec, 2, "time_ms", path, line)?,
            left_x: field(&rec, 3, "left_x", path, line)?,
            left_y: field(&rec, 4, "left_y", path, line)?,
            right_x: field(&rec, 5, "right_x", path, line)?,
            right_y: field(&rec, 6, "right_y", path, line)?,
        });
    }
    let grouped = group_sessions(records, |r| &r.session_id, |r| r.t_index)?;
    for (sid, recs) in &grouped {
        for w in recs.windows(2) {
            if w[1].time_ms <= w[0].time_ms {
                return Err(Error::Integrity(format!(
                    "time_ms must strictly increase within session '{sid}'"
                )));
            }
        }
        if recs.len() >= 3 {
            let spacing = recs[1].time_ms - recs[0].time_ms;
            for w in recs.windows(2) {
                let dt = w[1].time_ms - w[0].time_ms;
                if (dt - spacing).abs() > 1 {
                    return Err(Error::Integrity(format!(
                        "non-uniform sample spacing in session '{sid}': {dt} ms vs {spacing} ms"
                    )));
                }
            }
        }
    }
    Ok(grouped
        .into_iter()
        .map(|(session_id, recs)| GazeSequence {
            session_id,
            records: GazeRecords::BinocularRaw(recs),
        })
        .collect())
}

/// Load outcomes; the stored item_count must match |chosen_roi_ids|.
pub fn load_outcomes(path: impl AsRef<Path>) -> Result<Vec<Outcome>> {
    let path = path.as_ref();
    let mut rdr = open_reader(path, OUTCOMES_HEADER)?;
    let mut outcomes = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        if rec.len() != 4 {
            return Err(parse_err(path, line, format!("expected 4 fields, got {}", rec.len())));
        }
        let ids_raw = rec.get(2).unwrap();
        let mut chosen = BTreeSet::new();
        if !ids_raw.is_empty() {
            for part in ids_raw.split('|') {
                let id: u32 = part.parse().map_err(|_| {
                    parse_err(path, line, format!("bad roi id '{part}' in chosen_roi_ids"))
                })?;
                chosen.insert(id);
            }
        }
        let stored_count: u32 = field(&rec, 3, "item_count", path, line)?;
        if stored_count as usize != chosen.len() {
            return Err(Error::Integrity(format!(
                "session '{}': stored item_count {} != |chosen_roi_ids| {}",
                rec.get(0).unwrap(),
                stored_count,
                chosen.len()
            )));
        }
        outcomes.push(Outcome {
            session_id: rec.get(0).unwrap().to_string(),
            shelf_id: rec.get(1).unwrap().to_string(),
            chosen_roi_ids: chosen,
            item_count: stored_count,
            class_label: None,
        });
    }
    Ok(outcomes)
}

/// Canonical writers; `write(load(f))` is the canonical form of `f`.
pub fn write_fixations(path: impl AsRef<Path>, sequences: &[GazeSequence]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut write = |s: String| -> Result<()> {
        writeln!(f, "{s}").map_err(|e| Error::io(path.display().to_string(), e))
    };
    write(FIXATION_HEADER.to_string())?;
    for g in sequences {
        if let GazeRecords::Fixation(recs) = &g.records {
            for r in recs {
                write(format!(
                    "{},{},{},{},{},{}",
                    r.session_id, r.t_index, r.start_ms, r.end_ms, r.x_px, r.y_px
                ))?;
            }
        }
    }
    Ok(())
}

pub fn write_outcomes(path: impl AsRef<Path>, outcomes: &[Outcome]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    writeln!(f, "{OUTCOMES_HEADER}").map_err(|e| Error::io(path.display().to_string(), e))?;
    for o in outcomes {
        let ids = o
            .chosen_roi_ids
            .iter()
            .map(|id| id.to_string())
            .collect::<Vec<_>>()
            .join("|");
        writeln!(f, "{},{},{},{}", o.session_id, o.shelf_id, ids, o.item_count)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Synthetic generator configuration.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub rows: u32,
    pub cols: u32,
    pub sessions: u32,
    pub min_fix: u32,
    pub max_fix: u32,
    /// Per-ROI probability of being marked chosen.
    pub p_choose: f64,
    /// Multiplier on transition weight into chosen ROIs; must exceed 1.
    pub dwell_bias: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            rows: 8,
            cols: 8,
            sessions: 163,
            min_fix: 18,
            max_fix: 36,
            p_choose: 0.05,
            dwell_bias: 6.0,
        }
    }
}

const CELL_PX: f64 = 50.0;

/// Generate a grid ROI map and `sessions` choice-labeled scan-paths. The
/// scan-path is a Markov walk over ROIs with transition weight into chosen
/// ROIs multiplied by `dwell_bias`; fixation coordinates are uniform within
/// the visited ROI. Deterministic for a fixed seed.
pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<(Dataset, RoiMap)> {
    if cfg.dwell_bias <= 1.0 {
        return Err(Error::Config(format!(
            "dwell_bias must exceed 1 (no planted signal), got {}",
            cfg.dwell_bias
        )));
    }
    let n_rois = (cfg.rows * cfg.cols) as usize;
    if n_rois < 2 {
        return Err(Error::Config("grid must contain at least 2 ROIs".to_string()));
    }
    if cfg.min_fix == 0 || cfg.min_fix > cfg.max_fix {
        return Err(Error::Config(format!(
            "fixation range [{}, {}] is invalid",
            cfg.min_fix, cfg.max_fix
        )));
    }
    if !(0.0..=1.0).contains(&cfg.p_choose) {
        return Err(Error::Config(format!("p_choose must lie in [0,1], got {}", cfg.p_choose)));
    }

    let map = RoiMap::uniform_grid(
        cfg.rows,
        cfg.cols,
        cfg.cols as f64 * CELL_PX,
        cfg.rows as f64 * CELL_PX,
    );
    let mut rng = rng::stream(seed, "synthetic-data");
    let mut sessions = Vec::with_capacity(cfg.sessions as usize);
    for s in 0..cfg.sessions {
        let session_id = format!("s{s:05}");
        let chosen: BTreeSet<u32> = (0..n_rois as u32)
            .filter(|_| rng.gen::<f64>() < cfg.p_choose)
            .collect();

        // Biased transition distribution over ROIs, shared by every step.
        let weights: Vec<f64> = (0..n_rois as u32)
            .map(|id| if chosen.contains(&id) { cfg.dwell_bias } else { 1.0 })
            .collect();
        let total: f64 = weights.iter().sum();

        let t_count = rng.gen_range(cfg.min_fix..=cfg.max_fix);
        let mut records = Vec::with_capacity(t_count as usize);
        let mut clock_ms: i64 = 0;
        for t in 1..=t_count {
            let mut draw = rng.gen::<f64>() * total;
            let mut roi_idx = n_rois - 1;
            for (i, w) in weights.iter().enumerate() {
                if draw < *w {
                    roi_idx = i;
                    break;
                }
                draw -= w;
            }
            let roi = &map.rois[roi_idx];
            let x = roi.x_min + rng.gen::<f64>() * (roi.x_max - roi.x_min);
            let y = roi.y_min + rng.gen::<f64>() * (roi.y_max - roi.y_min);
            let duration = rng.gen_range(200..=500);
            records.push(FixationRecord {
                session_id: session_id.clone(),
                t_index: t,
                start_ms: clock_ms,
                end_ms: clock_ms + duration,
                x_px: x,
                y_px: y,
            });
            clock_ms += duration;
        }

        let outcome = Outcome {
            session_id: session_id.clone(),
            shelf_id: "shelf0".to_string(),
            item_count: chosen.len() as u32,
            chosen_roi_ids: chosen,
            class_label: None,
        };
        sessions.push((
            GazeSequence {
                session_id,
                records: GazeRecords::Fixation(records),
            },
            outcome,
        ));
    }
    Ok((Dataset::new(sessions)?, map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roi_map::MapToken;

    fn write_tmp(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn empty_file_with_header_is_empty_fragment() {
        let (_d, p) = write_tmp("session_id,t_index,start_ms,end_ms,x_px,y_px\n");
        assert!(load_fixations(p).unwrap().is_empty());
    }

    #[test]
    fn two_rows_one_session() {
        let (_d, p) = write_tmp(
            "session_id,t_index,start_ms,end_ms,x_px,y_px\ns1,1,0,200,10.0,20.0\ns1,2,200,400,30.0,40.0\n",
        );
        let seqs = load_fixations(p).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].len(), 2);
    }

    #[test]
    fn rows_out_of_order_are_sorted_by_t_index() {
        let (_d, p) = write_tmp(
            "session_id,t_index,start_ms,end_ms,x_px,y_px\ns1,3,400,600,5,5\ns1,1,0,200,1,1\ns1,2,200,400,3,3\n",
        );
        let seqs = load_fixations(p).unwrap();
        let GazeRecords::Fixation(recs) = &seqs[0].records else { panic!() };
        let ts: Vec<u32> = recs.iter().map(|r| r.t_index).collect();
        let mut sorted = ts.clone();
        sorted.sort_unstable();
        assert_eq!(ts, sorted);
        assert_eq!(ts, vec![1, 2, 3]);
    }

    #[test]
    fn malformed_row_names_line() {
        let (_d, p) = write_tmp("session_id,t_index,start_ms,end_ms,x_px,y_px\ns1,1,0,200,abc,20\n");
        let err = load_fixations(p).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn duplicate_t_index_is_integrity_error() {
        let (_d, p) = write_tmp(
            "session_id,t_index,start_ms,end_ms,x_px,y_px\ns1,1,0,200,1,1\ns1,1,200,400,2,2\n",
        );
        assert!(matches!(load_fixations(p).unwrap_err(), Error::Integrity(_)));
    }

    #[test]
    fn raw_gaze_accepts_50hz_spacing() {
        let (_d, p) = write_tmp(
            "session_id,t_index,time_ms,left_x,left_y,right_x,right_y\ns1,1,0,1,2,3,4\ns1,2,20,1,2,3,4\ns1,3,40,1,2,3,4\n",
        );
        let seqs = load_raw_gaze(p).unwrap();
        assert_eq!(seqs[0].len(), 3);
    }

    #[test]
    fn raw_gaze_rejects_uneven_spacing() {
        let (_d, p) = write_tmp(
            "session_id,t_index,time_ms,left_x,left_y,right_x,right_y\ns1,1,0,1,2,3,4\ns1,2,20,1,2,3,4\ns1,3,45,1,2,3,4\n",
        );
        assert!(matches!(load_raw_gaze(p).unwrap_err(), Error::Integrity(_)));
    }

    #[test]
    fn raw_gaze_single_sample_ok() {
        let (_d, p) = write_tmp(
            "session_id,t_index,time_ms,left_x,left_y,right_x,right_y\ns1,1,0,1,2,3,4\n",
        );
        assert_eq!(load_raw_gaze(p).unwrap()[0].len(), 1);
    }

    #[test]
    fn outcomes_parse_and_recount() {
        let (_d, p) = write_tmp("session_id,shelf_id,chosen_roi_ids,item_count\ns1,5,12|7,2\n");
        let o = load_outcomes(p).unwrap();
        assert_eq!(o[0].chosen_roi_ids, BTreeSet::from([7, 12]));
        assert_eq!(o[0].item_count, 2);
    }

    #[test]
    fn outcomes_empty_choice_is_valid() {
        let (_d, p) = write_tmp("session_id,shelf_id,chosen_roi_ids,item_count\ns1,5,,0\n");
        let o = load_outcomes(p).unwrap();
        assert!(o[0].chosen_roi_ids.is_empty());
    }

    #[test]
    fn outcomes_count_mismatch_is_integrity_error() {
        let (_d, p) = write_tmp("session_id,shelf_id,chosen_roi_ids,item_count\ns1,5,,1\n");
        assert!(matches!(load_outcomes(p).unwrap_err(), Error::Integrity(_)));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SyntheticConfig { sessions: 8, ..Default::default() };
        let (d1, _) = generate_synthetic(&cfg, 42).unwrap();
        let (d2, _) = generate_synthetic(&cfg, 42).unwrap();
        assert_eq!(d1.sessions, d2.sessions);
    }

    #[test]
    fn synthetic_rejects_bad_config() {
        let cfg = SyntheticConfig { dwell_bias: 1.0, ..Default::default() };
        assert!(generate_synthetic(&cfg, 1).is_err());
        let cfg = SyntheticConfig { rows: 1, cols: 1, ..Default::default() };
        assert!(generate_synthetic(&cfg, 1).is_err());
    }

    #[test]
    fn extreme_bias_forces_chosen_rois() {
        let cfg = SyntheticConfig {
            sessions: 20,
            p_choose: 0.1,
            dwell_bias: 1e12,
            ..Default::default()
        };
        let (d, m) = generate_synthetic(&cfg, 3).unwrap();
        for (g, o) in &d.sessions {
            if o.chosen_roi_ids.is_empty() {
                continue;
            }
            let GazeRecords::Fixation(recs) = &g.records else { panic!() };
            for r in recs {
                let MapToken::Id(id) = m.map_point_to_roi(r.x_px, r.y_px) else { panic!() };
                assert!(o.chosen_roi_ids.contains(&id));
            }
        }
    }

    #[test]
    fn paper_scale_mean_fixations() {
        // N=163 with the default fixation range lands near the reported
        // per-participant mean.
        let cfg = SyntheticConfig { sessions: 163, min_fix: 18, max_fix: 36, ..Default::default() };
        let (d, _) = generate_synthetic(&cfg, 9).unwrap();
        let mean = d.mean_len();
        assert!((25.0..=29.0).contains(&mean), "mean fixations {mean}");
    }

    #[test]
    fn dwell_fraction_exceeds_chance() {
        // Planted-signal property: averaged over sessions, the fraction of
        // fixations inside chosen ROIs beats the chance fraction.
        let cfg = SyntheticConfig { sessions: 120, ..Default::default() };
        let mut margin_sum = 0.0;
        let mut n = 0usize;
        for seed in [1u64, 2, 3] {
            let (d, m) = generate_synthetic(&cfg, seed).unwrap();
            for (g, o) in &d.sessions {
                if o.chosen_roi_ids.is_empty() {
                    continue;
                }
                let GazeRecords::Fixation(recs) = &g.records else { panic!() };
                let inside = recs
                    .iter()
                    .filter(|r| match m.map_point_to_roi(r.x_px, r.y_px) {
                        MapToken::Id(id) => o.chosen_roi_ids.contains(&id),
                        MapToken::Off => false,
                    })
                    .count();
                let frac = inside as f64 / recs.len() as f64;
                let chance = o.chosen_roi_ids.len() as f64 / m.n_rois() as f64;
                margin_sum += frac - chance;
                n += 1;
            }
        }
        assert!(n >= 100);
        assert!(margin_sum / n as f64 > 0.0);
    }

    #[test]
    fn fixation_roundtrip_is_canonical() {
        let cfg = SyntheticConfig { sessions: 5, ..Default::default() };
        let (d, _) = generate_synthetic(&cfg, 5).unwrap();
        let seqs: Vec<GazeSequence> = d.sessions.iter().map(|(g, _)| g.clone()).collect();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        write_fixations(&p1, &seqs).unwrap();
        let reloaded = load_fixations(&p1).unwrap();
        write_fixations(&p2, &reloaded).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p1).unwrap(),
            std::fs::read_to_string(&p2).unwrap()
        );
    }

    #[test]
    fn dataset_lookup_by_session_id() {
        let cfg = SyntheticConfig { sessions: 6, ..Default::default() };
        let (d, _) = generate_synthetic(&cfg, 2).unwrap();
        assert!(d.get("s00003").is_some());
        assert!(d.get("missing").is_none());
    }
}
