//! Trajectory data model and the on-disk formats for datasets, segmentations and masks.
//!
//! Datasets are JSON Lines, one trajectory per line:
//!
//! ```text
//! {"id":"traj_000","states":[[...],...],"actions":[[...],...],"truth":{"good":true,"subtasks_good":[true,true,true]}}
//! ```
//!
//! Reals are written with 17 significant digits so that loading a saved file
//! reproduces every value bit for bit. Ground-truth labels live in
//! [`LabeledDataset`] only; every curation routine takes a plain [`Dataset`],
//! which has no way to carry them.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::csvio::{self, fmt_real};
use crate::{Error, Result};

/// Number of trailing state channels with a fixed meaning: gripper openness, then end-effector height.
pub const RESERVED_CHANNELS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    id: String,
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, states: Vec<Vec<f64>>, actions: Vec<Vec<f64>>) -> Result<Self> {
        let id = id.into();
        if states.len() != actions.len() {
            return Err(Error::invalid(format!(
                "trajectory {id}: {} states but {} actions",
                states.len(),
                actions.len()
            )));
        }
        if states.len() < 2 {
            return Err(Error::invalid(format!("trajectory {id}: needs at least 2 steps")));
        }
        let s_dim = states[0].len();
        let a_dim = actions[0].len();
        if s_dim < RESERVED_CHANNELS || a_dim == 0 {
            return Err(Error::invalid(format!(
                "trajectory {id}: state dim {s_dim} / action dim {a_dim} too small"
            )));
        }
        for (t, (s, a)) in states.iter().zip(&actions).enumerate() {
            if s.len() != s_dim || a.len() != a_dim {
                return Err(Error::invalid(format!("trajectory {id}: inconsistent dimensions at step {t}")));
            }
            if s.iter().chain(a).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("trajectory {id}: non-finite value at step {t}")));
            }
        }
        Ok(Self { id, states, actions })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn action_dim(&self) -> usize {
        self.actions[0].len()
    }

    pub fn gripper(&self, t: usize) -> f64 {
        let s = &self.states[t];
        s[s.len() - 2]
    }

    pub fn height(&self, t: usize) -> f64 {
        let s = &self.states[t];
        s[s.len() - 1]
    }
}

/// Evaluation-only labels attached by the synthetic generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truth {
    pub good: bool,
    pub subtasks_good: Vec<bool>,
}

impl Truth {
    /// 1-based indices of the corrupted subtasks.
    pub fn bad_subtasks(&self) -> Vec<usize> {
        self.subtasks_good
            .iter()
            .enumerate()
            .filter(|(_, g)| !**g)
            .map(|(j, _)| j + 1)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
    state_dim: usize,
    action_dim: usize,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::invalid("dataset must contain at least one trajectory"))?;
        let (state_dim, action_dim) = (first.state_dim(), first.action_dim());
        let mut seen = HashSet::new();
        for t in &trajectories {
            if t.state_dim() != state_dim || t.action_dim() != action_dim {
                return Err(Error::invalid(format!(
                    "trajectory {}: dimensions ({}, {}) differ from dataset ({state_dim}, {action_dim})",
                    t.id(),
                    t.state_dim(),
                    t.action_dim()
                )));
            }
            if !seen.insert(t.id()) {
                return Err(Error::invalid(format!("duplicate trajectory id {}", t.id())));
            }
        }
        Ok(Self {
            trajectories,
            state_dim,
            action_dim,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Trajectory> {
        self.trajectories.iter()
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.trajectories.iter().position(|t| t.id() == id)
    }

    /// Keeps the trajectories for which `keep` returns true, in order.
    pub fn filter(&self, mut keep: impl FnMut(usize, &Trajectory) -> bool) -> Result<Dataset> {
        let kept = self
            .trajectories
            .iter()
            .enumerate()
            .filter(|(i, t)| keep(*i, t))
            .map(|(_, t)| t.clone())
            .collect();
        Dataset::new(kept)
    }
}

/// A dataset together with its (optional) ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    data: Dataset,
    truth: Vec<Option<Truth>>,
}

impl LabeledDataset {
    pub fn new(data: Dataset, truth: Vec<Option<Truth>>) -> Result<Self> {
        if truth.len() != data.len() {
            return Err(Error::invalid("truth labels must match trajectory count"));
        }
        Ok(Self { data, truth })
    }

    pub fn unlabeled(data: Dataset) -> Self {
        let truth = vec![None; data.len()];
        Self { data, truth }
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn truth(&self) -> &[Option<Truth>] {
        &self.truth
    }

    /// Drops the labels; the only way curation code gets to see trajectories.
    pub fn into_unlabeled(self) -> Dataset {
        self.data
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryLine {
    id: String,
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    #[serde(default)]
    truth: Option<Truth>,
}

fn write_matrix(out: &mut String, rows: &[Vec<f64>]) {
    out.push('[');
    for (i, row) in rows.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('[');
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&fmt_real(*v));
        }
        out.push(']');
    }
    out.push(']');
}

/// Serializes to the JSON Lines text written by [`save_dataset`].
pub fn dataset_to_jsonl(d: &LabeledDataset) -> String {
    let mut out = String::new();
    for (t, truth) in d.data.iter().zip(&d.truth) {
        // serde_json handles escaping of the id.
        let id = serde_json::to_string(t.id()).expect("string serialization");
        write!(out, "{{\"id\":{id},\"states\":").unwrap();
        write_matrix(&mut out, t.states());
        out.push_str(",\"actions\":");
        write_matrix(&mut out, t.actions());
        if let Some(truth) = truth {
            let tr = serde_json::to_string(truth).expect("truth serialization");
            write!(out, ",\"truth\":{tr}").unwrap();
        }
        out.push_str("}\n");
    }
    out
}

pub fn dataset_from_jsonl(text: &str) -> Result<LabeledDataset> {
    let mut trajectories = Vec::new();
    let mut truth = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TrajectoryLine =
            serde_json::from_str(line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        trajectories.push(Trajectory::new(parsed.id, parsed.states, parsed.actions)?);
        truth.push(parsed.truth);
    }
    LabeledDataset::new(Dataset::new(trajectories)?, truth)
}

pub fn load_dataset<P: AsRef<Path>>(path: P) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    dataset_from_jsonl(&text)
}

pub fn save_dataset<P: AsRef<Path>>(d: &LabeledDataset, path: P) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset_to_jsonl(d)).map_err(|e| Error::io(path, e))
}

/// Boundary indices splitting one trajectory into consecutive subtasks.
///
/// Subtasks are numbered from 1. A trajectory with fewer segments than
/// `k_expected` is missing its trailing subtasks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubtaskSegmentation {
    trajectory_id: String,
    boundaries: Vec<usize>,
    horizon: usize,
    k_expected: usize,
}

impl SubtaskSegmentation {
    pub fn new(
        trajectory_id: impl Into<String>,
        boundaries: Vec<usize>,
        horizon: usize,
        k_expected: usize,
    ) -> Result<Self> {
        let trajectory_id = trajectory_id.into();
        if k_expected == 0 {
            return Err(Error::invalid("k_expected must be at least 1"));
        }
        let mut prev = 0usize;
        for &b in &boundaries {
            if b == 0 || b >= horizon {
                return Err(Error::invalid(format!(
                    "trajectory {trajectory_id}: boundary {b} outside (0, {horizon})"
                )));
            }
            if b <= prev {
                return Err(Error::invalid(format!(
                    "trajectory {trajectory_id}: boundaries not strictly increasing at {b}"
                )));
            }
            prev = b;
        }
        if boundaries.len() + 1 > k_expected {
            return Err(Error::invalid(format!(
                "trajectory {trajectory_id}: {} segments exceed k_expected = {k_expected}",
                boundaries.len() + 1
            )));
        }
        Ok(Self {
            trajectory_id,
            boundaries,
            horizon,
            k_expected,
        })
    }

    pub fn trajectory_id(&self) -> &str {
        &self.trajectory_id
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn k_expected(&self) -> usize {
        self.k_expected
    }

    pub fn segment_count(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn segments(&self) -> Vec<Range<usize>> {
        let mut out = Vec::with_capacity(self.segment_count());
        let mut start = 0;
        for &b in &self.boundaries {
            out.push(start..b);
            start = b;
        }
        out.push(start..self.horizon);
        out
    }

    /// Timestep range of subtask `j` (1-based), or `None` when absent.
    pub fn segment(&self, j: usize) -> Option<Range<usize>> {
        if j == 0 || j > self.segment_count() {
            return None;
        }
        let start = if j == 1 { 0 } else { self.boundaries[j - 2] };
        let end = self.boundaries.get(j - 1).copied().unwrap_or(self.horizon);
        Some(start..end)
    }

    /// Subtask index (1-based) that timestep `t` falls in.
    pub fn subtask_of(&self, t: usize) -> usize {
        self.boundaries.partition_point(|&b| b <= t) + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskEntry {
    pub trajectory_id: String,
    pub subtask_index: usize,
    pub present: bool,
    pub mean_score: Option<f64>,
    pub beta: bool,
}

/// Binary keep/drop decision for every (trajectory, subtask) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SubtaskMask {
    entries: Vec<MaskEntry>,
    rho: usize,
    method: Option<String>,
}

impl SubtaskMask {
    /// Validates and sorts entries by (trajectory_id, subtask_index).
    pub fn new(mut entries: Vec<MaskEntry>, rho: usize) -> Result<Self> {
        entries.sort_by(|a, b| {
            a.trajectory_id
                .cmp(&b.trajectory_id)
                .then(a.subtask_index.cmp(&b.subtask_index))
        });
        for w in entries.windows(2) {
            if w[0].trajectory_id == w[1].trajectory_id && w[0].subtask_index == w[1].subtask_index {
                return Err(Error::invalid(format!(
                    "duplicate mask entry ({}, {})",
                    w[0].trajectory_id, w[0].subtask_index
                )));
            }
        }
        let mut present = 0usize;
        let mut kept = 0usize;
        for e in &entries {
            if e.subtask_index == 0 {
                return Err(Error::invalid("subtask indices start at 1"));
            }
            if e.present {
                let s = e.mean_score.ok_or_else(|| {
                    Error::invalid(format!(
                        "present subtask ({}, {}) has no score",
                        e.trajectory_id, e.subtask_index
                    ))
                })?;
                if !s.is_finite() || s < 0.0 {
                    return Err(Error::invalid(format!(
                        "subtask ({}, {}) has invalid score {s}",
                        e.trajectory_id, e.subtask_index
                    )));
                }
                present += 1;
                kept += usize::from(e.beta);
            } else if e.beta || e.mean_score.is_some() {
                return Err(Error::invalid(format!(
                    "absent subtask ({}, {}) must have beta 0 and no score",
                    e.trajectory_id, e.subtask_index
                )));
            }
        }
        if rho > present {
            return Err(Error::invalid(format!("rho = {rho} exceeds {present} present subtasks")));
        }
        if kept != present - rho {
            return Err(Error::invalid(format!(
                "sum of beta is {kept}, constraint requires {present} - {rho} = {}",
                present - rho
            )));
        }
        Ok(Self {
            entries,
            rho,
            method: None,
        })
    }

    pub fn with_method(mut self, method: impl Into<String>) -> Self {
        self.method = Some(method.into());
        self
    }

    pub fn entries(&self) -> &[MaskEntry] {
        &self.entries
    }

    pub fn rho(&self) -> usize {
        self.rho
    }

    pub fn method(&self) -> Option<&str> {
        self.method.as_deref()
    }

    pub fn present_count(&self) -> usize {
        self.entries.iter().filter(|e| e.present).count()
    }

    pub fn beta(&self, trajectory_id: &str, subtask_index: usize) -> Option<bool> {
        self.entries
            .binary_search_by(|e| {
                e.trajectory_id
                    .as_str()
                    .cmp(trajectory_id)
                    .then(e.subtask_index.cmp(&subtask_index))
            })
            .ok()
            .map(|i| self.entries[i].beta)
    }

    /// Beta values keyed by trajectory id, in subtask order.
    pub fn betas_by_trajectory(&self) -> BTreeMap<&str, Vec<bool>> {
        let mut out: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
        for e in &self.entries {
            let v = out.entry(e.trajectory_id.as_str()).or_default();
            if v.len() < e.subtask_index {
                v.resize(e.subtask_index, false);
            }
            v[e.subtask_index - 1] = e.beta;
        }
        out
    }
}

const MASK_HEADER: [&str; 5] = ["trajectory_id", "subtask_index", "present", "mean_score", "beta"];

fn mask_rows(m: &SubtaskMask) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let mut header = MASK_HEADER.to_vec();
    if m.method.is_some() {
        header.push("method");
    }
    let rows = m
        .entries
        .iter()
        .map(|e| {
            let mut row = vec![
                e.trajectory_id.clone(),
                e.subtask_index.to_string(),
                u8::from(e.present).to_string(),
                e.mean_score.map(fmt_real).unwrap_or_default(),
                u8::from(e.beta).to_string(),
            ];
            if let Some(method) = &m.method {
                row.push(method.clone());
            }
            row
        })
        .collect();
    (header, rows)
}

pub fn mask_to_csv(m: &SubtaskMask) -> Vec<u8> {
    let (header, rows) = mask_rows(m);
    csvio::csv_bytes(&header, &rows)
}

pub fn save_mask<P: AsRef<Path>>(m: &SubtaskMask, path: P) -> Result<()> {
    // Re-validate: a mask can only be built through `new`, but be strict about what reaches disk.
    SubtaskMask::new(m.entries.clone(), m.rho)?;
    let (header, rows) = mask_rows(m);
    csvio::write_csv(path, &header, &rows)
}

pub fn load_mask<P: AsRef<Path>>(path: P) -> Result<SubtaskMask> {
    let table = csvio::read_csv(path, &MASK_HEADER)?;
    let method_col = table.column("method");
    let mut entries = Vec::with_capacity(table.rows.len());
    let mut method: Option<String> = None;
    for (line, row) in &table.rows {
        let line = *line;
        let score = if row[3].trim().is_empty() {
            None
        } else {
            Some(csvio::parse_real(&row[3], line, "mean_score")?)
        };
        entries.push(MaskEntry {
            trajectory_id: row[0].clone(),
            subtask_index: csvio::parse_usize(&row[1], line, "subtask_index")?,
            present: csvio::parse_flag(&row[2], line, "present")?,
            mean_score: score,
            beta: csvio::parse_flag(&row[4], line, "beta")?,
        });
        if let Some(c) = method_col {
            method.get_or_insert_with(|| row[c].clone());
        }
    }
    let present = entries.iter().filter(|e| e.present).count();
    let kept = entries.iter().filter(|e| e.present && e.beta).count();
    let mask = SubtaskMask::new(entries, present - kept)?;
    Ok(match method {
        Some(m) => mask.with_method(m),
        None => mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(id: &str, n: usize) -> Trajectory {
        let states = (0..n).map(|t| vec![t as f64 * 0.1, 0.5, 1.0]).collect();
        let actions = (0..n).map(|t| vec![-(t as f64) / 3.0]).collect();
        Trajectory::new(id, states, actions).unwrap()
    }

    #[test]
    fn two_trajectories_load() {
        let d = LabeledDataset::unlabeled(Dataset::new(vec![traj("a", 5), traj("b", 5)]).unwrap());
        let text = dataset_to_jsonl(&d);
        let back = dataset_from_jsonl(&text).unwrap();
        assert_eq!(back.data().len(), 2);
        assert_eq!(back, d);
    }

    #[test]
    fn length_mismatch_names_trajectory() {
        let line = r#"{"id":"bad_one","states":[[0,0],[0,0],[0,0],[0,0],[0,0]],"actions":[[0],[0],[0],[0]]}"#;
        let err = dataset_from_jsonl(line).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("bad_one"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let good = dataset_to_jsonl(&LabeledDataset::unlabeled(Dataset::new(vec![traj("a", 3)]).unwrap()));
        let text = format!("{good}{{not json\n");
        match dataset_from_jsonl(&text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_ids_and_dims_rejected() {
        assert!(Dataset::new(vec![traj("a", 3), traj("a", 4)]).is_err());
        let other = Trajectory::new("b", vec![vec![0.0; 4]; 3], vec![vec![0.0]; 3]).unwrap();
        let err = Dataset::new(vec![traj("a", 3), other]).unwrap_err();
        assert!(err.to_string().contains('b'));
        assert!(Dataset::new(vec![]).is_err());
        assert!(Trajectory::new("x", vec![vec![0.0, 0.0]], vec![vec![0.0]]).is_err());
        assert!(Trajectory::new("x", vec![vec![0.0, f64::NAN]; 2], vec![vec![0.0]; 2]).is_err());
    }

    #[test]
    fn single_trajectory_is_one_line() {
        let d = LabeledDataset::unlabeled(Dataset::new(vec![traj("only", 4)]).unwrap());
        assert_eq!(dataset_to_jsonl(&d).lines().count(), 1);
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let d = LabeledDataset::new(
            Dataset::new(vec![traj("a", 3), traj("b", 4)]).unwrap(),
            vec![
                Some(Truth {
                    good: false,
                    subtasks_good: vec![true, false],
                }),
                None,
            ],
        )
        .unwrap();
        save_dataset(&d, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), d);
        assert!(save_dataset(&d, dir.path().join("missing/d.jsonl")).is_err());
    }

    #[test]
    fn segmentation_segments_and_errors() {
        let s = SubtaskSegmentation::new("t", vec![10, 20], 30, 3).unwrap();
        let lens: Vec<usize> = s.segments().iter().map(|r| r.len()).collect();
        assert_eq!(lens, vec![10, 10, 10]);
        assert_eq!(s.segment(2), Some(10..20));
        assert_eq!(s.segment(4), None);
        assert_eq!(s.subtask_of(0), 1);
        assert_eq!(s.subtask_of(10), 2);
        assert_eq!(s.subtask_of(29), 3);
        assert!(SubtaskSegmentation::new("t", vec![20, 10], 30, 3).is_err());
        assert!(SubtaskSegmentation::new("t", vec![0], 30, 3).is_err());
        assert!(SubtaskSegmentation::new("t", vec![30], 30, 3).is_err());
        assert!(SubtaskSegmentation::new("t", vec![5, 10, 15], 30, 3).is_err());
    }

    fn entry(id: &str, j: usize, score: Option<f64>, beta: bool) -> MaskEntry {
        MaskEntry {
            trajectory_id: id.into(),
            subtask_index: j,
            present: score.is_some(),
            mean_score: score,
            beta,
        }
    }

    #[test]
    fn mask_one_entry_two_lines() {
        let m = SubtaskMask::new(vec![entry("a", 1, Some(0.5), true)], 0).unwrap();
        let text = String::from_utf8(mask_to_csv(&m)).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap(), "trajectory_id,subtask_index,present,mean_score,beta");
    }

    #[test]
    fn mask_constraint_enforced() {
        let entries = vec![entry("a", 1, Some(0.5), true), entry("a", 2, Some(0.7), true)];
        assert!(SubtaskMask::new(entries.clone(), 1).is_err());
        assert!(SubtaskMask::new(entries.clone(), 0).is_ok());
        assert!(SubtaskMask::new(vec![entry("a", 1, None, true)], 0).is_err());
        assert!(SubtaskMask::new(vec![entry("a", 1, Some(-1.0), true)], 0).is_err());
    }

    #[test]
    fn mask_file_roundtrip_with_absent_and_method() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = SubtaskMask::new(
            vec![
                entry("b", 1, Some(1.0 / 3.0), false),
                entry("a", 2, None, false),
                entry("a", 1, Some(2.5e-7), true),
            ],
            1,
        )
        .unwrap()
        .with_method("lof");
        save_mask(&m, &path).unwrap();
        let back = load_mask(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.entries()[0].trajectory_id, "a");
        assert_eq!(back.beta("b", 1), Some(false));
        assert_eq!(back.beta("c", 1), None);
    }
}
