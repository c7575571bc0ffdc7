//! Splitting trajectories into subtasks.
//!
//! The heuristic watches the two reserved state channels. A boundary is an
//! upward crossing of the gripper-openness threshold (the gripper opens after
//! having been closed) or of the height threshold (the end effector lifts).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::csvio;
use crate::dataset::{Dataset, SubtaskSegmentation, Trajectory};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicConfig {
    pub k_expected: usize,
    pub gripper_threshold: f64,
    pub height_threshold: f64,
    /// Events closer than this many timesteps to the previous kept event are dropped.
    pub debounce: usize,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            k_expected: 3,
            gripper_threshold: 0.5,
            height_threshold: 0.3,
            debounce: 5,
        }
    }
}

fn crossing_events(t: &Trajectory, cfg: &HeuristicConfig) -> Vec<usize> {
    (1..t.len())
        .filter(|&i| {
            let opened = t.gripper(i - 1) < cfg.gripper_threshold && t.gripper(i) >= cfg.gripper_threshold;
            let lifted = t.height(i - 1) < cfg.height_threshold && t.height(i) >= cfg.height_threshold;
            opened || lifted
        })
        .collect()
}

fn debounce(events: &[usize], window: usize) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::with_capacity(events.len());
    for &e in events {
        match kept.last() {
            Some(&last) if e - last < window => {}
            _ => kept.push(e),
        }
    }
    kept
}

/// Keeps the `keep` boundaries whose shorter adjacent segment is longest
/// (earlier boundary wins ties), returned in increasing order.
fn keep_widest(boundaries: &[usize], horizon: usize, keep: usize) -> Vec<usize> {
    if boundaries.len() <= keep {
        return boundaries.to_vec();
    }
    let mut spaced: Vec<(usize, usize)> = boundaries
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let prev = if i == 0 { 0 } else { boundaries[i - 1] };
            let next = boundaries.get(i + 1).copied().unwrap_or(horizon);
            ((b - prev).min(next - b), b)
        })
        .collect();
    spaced.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = spaced.into_iter().take(keep).map(|(_, b)| b).collect();
    out.sort_unstable();
    out
}

pub fn segment_heuristic(t: &Trajectory, cfg: &HeuristicConfig) -> Result<SubtaskSegmentation> {
    if cfg.k_expected < 1 {
        return Err(Error::invalid("k_expected must be at least 1"));
    }
    let events = debounce(&crossing_events(t, cfg), cfg.debounce.max(1));
    let boundaries = keep_widest(&events, t.len(), cfg.k_expected - 1);
    SubtaskSegmentation::new(t.id(), boundaries, t.len(), cfg.k_expected)
}

pub fn segment_from_annotation(t: &Trajectory, boundaries: Vec<usize>, k_expected: usize) -> Result<SubtaskSegmentation> {
    SubtaskSegmentation::new(t.id(), boundaries, t.len(), k_expected)
}

pub fn segment_dataset(data: &Dataset, cfg: &HeuristicConfig) -> Result<Vec<SubtaskSegmentation>> {
    data.iter().map(|t| segment_heuristic(t, cfg)).collect()
}

/// Applies annotations (boundary lists keyed by trajectory id; a trajectory
/// without an entry is one segment).
pub fn segment_dataset_from_annotations(
    data: &Dataset,
    annotations: &BTreeMap<String, Vec<usize>>,
    k_expected: usize,
) -> Result<Vec<SubtaskSegmentation>> {
    for id in annotations.keys() {
        if data.index_of(id).is_none() {
            return Err(Error::invalid(format!("annotation for unknown trajectory {id}")));
        }
    }
    data.iter()
        .map(|t| {
            let b = annotations.get(t.id()).cloned().unwrap_or_default();
            segment_from_annotation(t, b, k_expected)
        })
        .collect()
}

/// Writes `trajectory_id,boundary_index`, one row per boundary.
pub fn save_segmentations<P: AsRef<Path>>(segs: &[SubtaskSegmentation], path: P) -> Result<()> {
    let rows: Vec<Vec<String>> = segs
        .iter()
        .flat_map(|s| {
            s.boundaries()
                .iter()
                .map(move |b| vec![s.trajectory_id().to_owned(), b.to_string()])
        })
        .collect();
    csvio::write_csv(path, &["trajectory_id", "boundary_index"], &rows)
}

/// Reads a boundaries file into per-trajectory lists (row order preserved).
pub fn load_boundaries<P: AsRef<Path>>(path: P) -> Result<BTreeMap<String, Vec<usize>>> {
    let table = csvio::read_csv(path, &["trajectory_id", "boundary_index"])?;
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (line, row) in &table.rows {
        let b = csvio::parse_usize(&row[1], *line, "boundary_index")?;
        out.entry(row[0].clone()).or_default().push(b);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// States are `[extra..., gripper, height]`.
    fn traj(gripper: &[f64], height: &[f64], extra: usize) -> Trajectory {
        let states = gripper
            .iter()
            .zip(height)
            .map(|(g, h)| {
                let mut s = vec![0.3; extra];
                s.extend([*g, *h]);
                s
            })
            .collect();
        Trajectory::new("t", states, vec![vec![0.0]; gripper.len()]).unwrap()
    }

    #[test]
    fn gripper_reopening_splits() {
        let t = traj(&[1., 1., 0., 0., 0., 1., 1.], &[0.0; 7], 1);
        let s = segment_heuristic(&t, &HeuristicConfig::default()).unwrap();
        assert_eq!(s.boundaries(), &[5]);
        assert_eq!(s.segment_count(), 2);
    }

    #[test]
    fn constant_signals_give_one_segment() {
        let t = traj(&[0.7; 20], &[0.1; 20], 2);
        let s = segment_heuristic(&t, &HeuristicConfig::default()).unwrap();
        assert!(s.boundaries().is_empty());
        assert_eq!(s.segments(), vec![0..20]);
    }

    #[test]
    fn close_events_are_merged_keeping_the_first() {
        let mut h = vec![0.0; 30];
        h[10..].iter_mut().for_each(|v| *v = 0.5);
        let mut g = vec![1.0; 30];
        g[5..12].iter_mut().for_each(|v| *v = 0.0);
        // Height crossing at 10, gripper reopening at 12: merged into 10.
        let s = segment_heuristic(&traj(&g, &h, 1), &HeuristicConfig::default()).unwrap();
        assert_eq!(s.boundaries(), &[10]);
    }

    #[test]
    fn surplus_events_keep_the_widest() {
        // Reopenings at 10, 20 and 37 on a 40-step trajectory, k = 3.
        let mut g = vec![1.0; 40];
        for r in [5..10, 15..20, 32..37] {
            g[r].iter_mut().for_each(|v| *v = 0.0);
        }
        let s = segment_heuristic(
            &traj(&g, &[0.0; 40], 1),
            &HeuristicConfig {
                k_expected: 3,
                ..HeuristicConfig::default()
            },
        )
        .unwrap();
        assert_eq!(s.boundaries(), &[10, 20]);
        assert!(segment_heuristic(
            &traj(&g, &[0.0; 40], 1),
            &HeuristicConfig {
                k_expected: 0,
                ..HeuristicConfig::default()
            }
        )
        .is_err());
    }

    #[test]
    fn annotations() {
        let t = traj(&[1.0; 30], &[0.0; 30], 1);
        assert_eq!(segment_from_annotation(&t, vec![], 3).unwrap().segment_count(), 1);
        let s = segment_from_annotation(&t, vec![10, 20], 3).unwrap();
        assert_eq!(s.segments().iter().map(|r| r.len()).collect::<Vec<_>>(), vec![10, 10, 10]);
        assert!(segment_from_annotation(&t, vec![20, 10], 3).is_err());
        assert!(segment_from_annotation(&t, vec![5, 10, 20], 3).is_err());
        assert!(segment_from_annotation(&t, vec![31], 3).is_err());
    }

    #[test]
    fn boundaries_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("segs.csv");
        let t = traj(&[1.0; 30], &[0.0; 30], 1);
        let segs = vec![segment_from_annotation(&t, vec![4, 17], 3).unwrap()];
        save_segmentations(&segs, &path).unwrap();
        let back = load_boundaries(&path).unwrap();
        assert_eq!(back.get("t"), Some(&vec![4, 17]));
    }

    proptest! {
        #[test]
        fn segments_partition_and_respect_k(
            gripper in prop::collection::vec(0.0f64..1.0, 2..80),
            heights in prop::collection::vec(0.0f64..0.6, 80),
            k in 1usize..5,
            extra in 0usize..3,
        ) {
            let n = gripper.len();
            let cfg = HeuristicConfig { k_expected: k, ..HeuristicConfig::default() };
            let s = segment_heuristic(&traj(&gripper, &heights[..n], 1), &cfg).unwrap();
            prop_assert!(s.segment_count() <= k);
            let segs = s.segments();
            prop_assert_eq!(segs[0].start, 0);
            prop_assert_eq!(segs.last().unwrap().end, n);
            for w in segs.windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
                prop_assert!(!w[0].is_empty());
            }
            // Extra leading channels do not change the result.
            let wider = segment_heuristic(&traj(&gripper, &heights[..n], 1 + extra), &cfg).unwrap();
            prop_assert_eq!(wider.boundaries(), s.boundaries());
        }
    }
}
