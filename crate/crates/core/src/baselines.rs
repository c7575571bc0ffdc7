//! LOF and KNN outlier detectors over per-segment mean latents.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::csvio::{self, fmt_real};
use crate::dataset::{SubtaskMask, SubtaskSegmentation};
use crate::encoder::LatentTrajectory;
use crate::scoring::{build_mask, ScoreRow, ScoreTable};
use crate::{Error, Result};

pub const DEFAULT_NEIGHBORS: usize = 5;
const JITTER: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detector {
    Lof,
    Knn,
}

impl Detector {
    pub fn name(self) -> &'static str {
        match self {
            Detector::Lof => "lof",
            Detector::Knn => "knn",
        }
    }
}

/// Mean latent vector of one present segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFeature {
    pub trajectory_id: String,
    pub subtask_index: usize,
    pub mean: Vec<f64>,
}

/// One feature per present (trajectory, subtask), in trajectory then subtask order.
pub fn segment_features(latents: &[LatentTrajectory], segs: &[SubtaskSegmentation]) -> Result<Vec<SegmentFeature>> {
    if latents.len() != segs.len() {
        return Err(Error::invalid("one segmentation per latent trajectory required"));
    }
    let mut out = Vec::new();
    for (z, s) in latents.iter().zip(segs) {
        if z.trajectory_id != s.trajectory_id() || z.len() != s.horizon() {
            return Err(Error::invalid(format!(
                "latents and segmentation disagree for trajectory {}",
                z.trajectory_id
            )));
        }
        for (j, range) in s.segments().into_iter().enumerate() {
            if range.is_empty() {
                return Err(Error::invalid(format!("empty segment in trajectory {}", z.trajectory_id)));
            }
            let n = range.len() as f64;
            let mut mean = vec![0.0; z.dim()];
            for v in &z.z[range] {
                for (m, x) in mean.iter_mut().zip(v) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            out.push(SegmentFeature {
                trajectory_id: z.trajectory_id.clone(),
                subtask_index: j + 1,
                mean,
            });
        }
    }
    Ok(out)
}

fn check_points(points: &[Vec<f64>], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k_neighbors must be positive"));
    }
    if points.len() <= k {
        return Err(Error::invalid(format!(
            "{} points is too few for k_neighbors = {k}",
            points.len()
        )));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::invalid("points have inconsistent dimensions"));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite point"));
    }
    Ok(())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distances from `i` to every other point, ascending (ties by index).
fn sorted_neighbors(points: &[Vec<f64>], i: usize) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = (0..points.len())
        .filter(|&j| j != i)
        .map(|j| (distance(&points[i], &points[j]), j))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d
}

/// Distance to the k-th nearest other point.
pub fn knn_outlier_scores(points: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    check_points(points, k)?;
    Ok((0..points.len())
        .into_par_iter()
        .map(|i| sorted_neighbors(points, i)[k - 1].0)
        .collect())
}

/// Repeated points get a tiny seeded offset so densities stay finite. The
/// offset depends only on the point's value and its occurrence rank, not on
/// its position in the input.
fn jitter_duplicates(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut seen: BTreeMap<Vec<u64>, u64> = BTreeMap::new();
    points
        .iter()
        .map(|p| {
            let key: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
            let rank = seen.entry(key).or_insert(0);
            let mut q = p.clone();
            if *rank > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(*rank);
                q.iter_mut().for_each(|v| *v += JITTER * rng.random_range(-1.0..1.0));
            }
            *rank += 1;
            q
        })
        .collect()
}

/// Local outlier factor with reachability distances; the k-neighbourhood
/// includes every point tied with the k-th nearest.
pub fn lof_scores(points: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    check_points(points, k)?;
    let points = jitter_duplicates(points);
    let n = points.len();
    // Neighbourhood of each point in index order, with its k-distance.
    let hoods: Vec<(f64, Vec<(usize, f64)>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let sorted = sorted_neighbors(&points, i);
            let kdist = sorted[k - 1].0;
            let mut hood: Vec<(usize, f64)> = sorted
                .into_iter()
                .take_while(|(d, _)| *d <= kdist)
                .map(|(d, j)| (j, d))
                .collect();
            hood.sort_by_key(|(j, _)| *j);
            (kdist, hood)
        })
        .collect();
    let lrd: Vec<f64> = hoods
        .par_iter()
        .map(|(_, hood)| {
            let reach: f64 = hood.iter().map(|&(j, d)| d.max(hoods[j].0)).sum();
            hood.len() as f64 / reach
        })
        .collect();
    let scores: Vec<f64> = hoods
        .par_iter()
        .enumerate()
        .map(|(i, (_, hood))| {
            let s: f64 = hood.iter().map(|&(j, _)| lrd[j]).sum();
            s / hood.len() as f64 / lrd[i]
        })
        .collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::numeric("LOF produced a non-finite score"));
    }
    Ok(scores)
}

/// Scores features with a detector and lays them out as a score table
/// covering subtasks `1..=k_expected` of every trajectory seen.
pub fn detector_scores(features: &[SegmentFeature], k_expected: usize, detector: Detector, k: usize) -> Result<ScoreTable> {
    let points: Vec<Vec<f64>> = features.iter().map(|f| f.mean.clone()).collect();
    let scores = match detector {
        Detector::Lof => lof_scores(&points, k)?,
        Detector::Knn => knn_outlier_scores(&points, k)?,
    };
    let mut by_key: BTreeMap<(&str, usize), f64> = BTreeMap::new();
    for (f, s) in features.iter().zip(scores) {
        if f.subtask_index == 0 || f.subtask_index > k_expected {
            return Err(Error::invalid(format!("subtask index {} out of range", f.subtask_index)));
        }
        if by_key.insert((&f.trajectory_id, f.subtask_index), s).is_some() {
            return Err(Error::invalid(format!(
                "duplicate feature for ({}, {})",
                f.trajectory_id, f.subtask_index
            )));
        }
    }
    let ids: std::collections::BTreeSet<&str> = features.iter().map(|f| f.trajectory_id.as_str()).collect();
    let rows = ids
        .into_iter()
        .flat_map(|id| {
            let by_key = &by_key;
            (1..=k_expected).map(move |j| ScoreRow {
                trajectory_id: id.to_owned(),
                subtask_index: j,
                mean_score: by_key.get(&(id, j)).copied(),
            })
        })
        .collect();
    ScoreTable::new(rows)
}

pub fn detector_mask(features: &[SegmentFeature], k_expected: usize, detector: Detector, k: usize, rho: usize) -> Result<SubtaskMask> {
    let table = detector_scores(features, k_expected, detector, k)?;
    Ok(build_mask(&table, rho)?.with_method(detector.name()))
}

/// Writes `trajectory_id,subtask_index,f0,...`.
pub fn save_features<P: AsRef<Path>>(features: &[SegmentFeature], path: P) -> Result<()> {
    let d = features.first().map_or(0, |f| f.mean.len());
    let names: Vec<String> = (0..d).map(|i| format!("f{i}")).collect();
    let mut header = vec!["trajectory_id", "subtask_index"];
    header.extend(names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = features
        .iter()
        .map(|f| {
            let mut r = vec![f.trajectory_id.clone(), f.subtask_index.to_string()];
            r.extend(f.mean.iter().map(|v| fmt_real(*v)));
            r
        })
        .collect();
    csvio::write_csv(path, &header, &rows)
}

pub fn load_features<P: AsRef<Path>>(path: P) -> Result<Vec<SegmentFeature>> {
    let table = csvio::read_csv(path, &["trajectory_id", "subtask_index"])?;
    table
        .rows
        .iter()
        .map(|(line, row)| {
            let mean = row[2..]
                .iter()
                .map(|v| csvio::parse_real(v, *line, "feature"))
                .collect::<Result<Vec<_>>>()?;
            if mean.is_empty() {
                return Err(Error::parse(*line, "no feature columns"));
            }
            Ok(SegmentFeature {
                trajectory_id: row[0].clone(),
                subtask_index: csvio::parse_usize(&row[1], *line, "subtask_index")?,
                mean,
            })
        })
        .collect()
}
