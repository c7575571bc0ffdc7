//! Stage two: per-subtask latent Gaussians, Mahalanobis scoring and masking.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bed::TrajectoryWeights;
use crate::csvio::{self, fmt_real};
use crate::dataset::{MaskEntry, SubtaskMask, SubtaskSegmentation};
use crate::encoder::LatentTrajectory;
use crate::linalg::{Cholesky, SquareMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    /// Shrinkage towards `trace / d * I`.
    pub epsilon: f64,
    /// Added to the diagonal after shrinkage.
    pub floor: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            floor: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubtaskGaussian {
    pub subtask_index: usize,
    pub mu: Vec<f64>,
    pub sigma: SquareMatrix,
    pub n_samples: usize,
    chol: Cholesky,
}

impl SubtaskGaussian {
    pub fn new(subtask_index: usize, mu: Vec<f64>, sigma: SquareMatrix, n_samples: usize) -> Result<Self> {
        if mu.len() != sigma.dim() {
            return Err(Error::invalid("mean and covariance dimensions differ"));
        }
        let chol = Cholesky::new(&sigma)?;
        Ok(Self {
            subtask_index,
            mu,
            sigma,
            n_samples,
            chol,
        })
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Sample mean and the unbiased (`n - 1`) sample covariance.
///
/// Samples are summed in a canonical (lexicographic) order, so the result
/// does not depend on the order they are passed in.
pub fn sample_statistics(samples: &[&[f64]]) -> Result<(Vec<f64>, SquareMatrix)> {
    if samples.len() < 2 {
        return Err(Error::invalid("covariance needs at least two samples"));
    }
    let d = samples[0].len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::invalid("samples have inconsistent dimensions"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| lexicographic(a, b));
    let n = sorted.len() as f64;
    let mut mu = vec![0.0; d];
    for s in &sorted {
        for (m, v) in mu.iter_mut().zip(s.iter()) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n);
    let mut cov = SquareMatrix::zeros(d);
    for s in &sorted {
        for i in 0..d {
            let di = s[i] - mu[i];
            for j in 0..=i {
                cov.set(i, j, cov.get(i, j) + di * (s[j] - mu[j]));
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = cov.get(i, j) / (n - 1.0);
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    Ok((mu, cov))
}

/// `(1 - eps) * sigma + eps * (trace / d) * I + floor * I`.
pub fn regularize(sigma: &SquareMatrix, cfg: &ScoringConfig) -> SquareMatrix {
    let d = sigma.dim();
    let target = sigma.trace() / d as f64;
    let mut out = SquareMatrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            let mut v = (1.0 - cfg.epsilon) * sigma.get(i, j);
            if i == j {
                v += cfg.epsilon * target + cfg.floor;
            }
            out.set(i, j, v);
        }
    }
    out
}

/// Fits a regularised Gaussian to pooled latent vectors.
pub fn fit_gaussian(samples: &[&[f64]], subtask_index: usize, cfg: &ScoringConfig) -> Result<SubtaskGaussian> {
    let d = samples.first().map_or(0, |s| s.len());
    if samples.len() < d + 1 || samples.len() < 2 {
        return Err(Error::invalid(format!(
            "subtask {subtask_index}: {} pooled samples, need at least {}",
            samples.len(),
            (d + 1).max(2)
        )));
    }
    let (mu, sigma) = sample_statistics(samples)?;
    let sigma = regularize(&sigma, cfg);
    SubtaskGaussian::new(subtask_index, mu, sigma, samples.len())
        .map_err(|e| Error::numeric(format!("subtask {subtask_index}: {e}")))
}

fn check_aligned(latents: &[LatentTrajectory], segs: &[SubtaskSegmentation]) -> Result<()> {
    if latents.len() != segs.len() {
        return Err(Error::invalid("one segmentation per latent trajectory required"));
    }
    for (z, s) in latents.iter().zip(segs) {
        if z.trajectory_id != s.trajectory_id() || z.len() != s.horizon() {
            return Err(Error::invalid(format!(
                "latents and segmentation disagree for trajectory {}",
                z.trajectory_id
            )));
        }
    }
    Ok(())
}

/// Pools the latents of subtask `j` over trajectories judged good and fits a Gaussian.
pub fn fit_subtask_gaussian(
    latents: &[LatentTrajectory],
    segs: &[SubtaskSegmentation],
    weights: &TrajectoryWeights,
    j: usize,
    cfg: &ScoringConfig,
) -> Result<SubtaskGaussian> {
    check_aligned(latents, segs)?;
    let mut pool: Vec<&[f64]> = Vec::new();
    for (z, s) in latents.iter().zip(segs) {
        let good = weights.is_good(&z.trajectory_id).ok_or_else(|| {
            Error::invalid(format!("no weight for trajectory {}", z.trajectory_id))
        })?;
        if !good {
            continue;
        }
        if let Some(range) = s.segment(j) {
            pool.extend(z.z[range].iter().map(Vec::as_slice));
        }
    }
    fit_gaussian(&pool, j, cfg)
}

/// Fits every subtask index `1..=k` that some good trajectory contains.
pub fn fit_all_subtasks(
    latents: &[LatentTrajectory],
    segs: &[SubtaskSegmentation],
    weights: &TrajectoryWeights,
    cfg: &ScoringConfig,
) -> Result<Vec<SubtaskGaussian>> {
    let k = segs.iter().map(SubtaskSegmentation::k_expected).max().unwrap_or(0);
    (1..=k)
        .filter(|&j| {
            latents
                .iter()
                .zip(segs)
                .any(|(z, s)| s.segment(j).is_some() && weights.is_good(&z.trajectory_id) == Some(true))
        })
        .map(|j| fit_subtask_gaussian(latents, segs, weights, j, cfg))
        .collect()
}

pub fn mahalanobis(z: &[f64], g: &SubtaskGaussian) -> Result<f64> {
    if z.len() != g.mu.len() {
        return Err(Error::invalid("latent and Gaussian dimensions differ"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite latent"));
    }
    let diff: Vec<f64> = z.iter().zip(&g.mu).map(|(a, b)| a - b).collect();
    Ok(g.chol.inverse_quadratic_form(&diff).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub trajectory_id: String,
    pub subtask_index: usize,
    /// `None` for an absent subtask.
    pub mean_score: Option<f64>,
}

/// One row per (trajectory, subtask) pair up to `k_expected`, sorted by id then subtask.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn new(mut rows: Vec<ScoreRow>) -> Result<Self> {
        rows.sort_by(|a, b| {
            a.trajectory_id
                .cmp(&b.trajectory_id)
                .then(a.subtask_index.cmp(&b.subtask_index))
        });
        for r in &rows {
            if let Some(s) = r.mean_score {
                if !s.is_finite() || s < 0.0 {
                    return Err(Error::invalid(format!(
                        "invalid score {s} for ({}, {})",
                        r.trajectory_id, r.subtask_index
                    )));
                }
            }
        }
        Ok(Self { rows })
    }

    pub fn present(&self) -> impl Iterator<Item = (&ScoreRow, f64)> {
        self.rows.iter().filter_map(|r| r.mean_score.map(|s| (r, s)))
    }

    pub fn present_count(&self) -> usize {
        self.present().count()
    }

    pub fn get(&self, trajectory_id: &str, subtask_index: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.trajectory_id == trajectory_id && r.subtask_index == subtask_index)
            .and_then(|r| r.mean_score)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.trajectory_id.clone(),
                    r.subtask_index.to_string(),
                    r.mean_score.map(fmt_real).unwrap_or_default(),
                ]
            })
            .collect();
        csvio::write_csv(path, &["trajectory_id", "subtask_index", "mean_score"], &rows)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let table = csvio::read_csv(path, &["trajectory_id", "subtask_index", "mean_score"])?;
        let rows = table
            .rows
            .iter()
            .map(|(line, row)| {
                let mean_score = if row[2].trim().is_empty() {
                    None
                } else {
                    Some(csvio::parse_real(&row[2], *line, "mean_score")?)
                };
                Ok(ScoreRow {
                    trajectory_id: row[0].clone(),
                    subtask_index: csvio::parse_usize(&row[1], *line, "subtask_index")?,
                    mean_score,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: usize,
    pub subtask_index: usize,
    pub distance: f64,
}

/// Per-timestep Mahalanobis distance of one trajectory against its subtask Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationTrace {
    pub trajectory_id: String,
    pub records: Vec<TraceRecord>,
}

impl DeviationTrace {
    /// Mean distance over the records of subtask `j`.
    pub fn segment_mean(&self, j: usize) -> Option<f64> {
        let vals: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.subtask_index == j)
            .map(|r| r.distance)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

fn trace_one(z: &LatentTrajectory, s: &SubtaskSegmentation, by_index: &BTreeMap<usize, &SubtaskGaussian>) -> Result<DeviationTrace> {
    let mut records = Vec::with_capacity(z.len());
    for (j, range) in s.segments().into_iter().enumerate() {
        let j = j + 1;
        let g = by_index.get(&j).ok_or_else(|| {
            Error::invalid(format!(
                "no Gaussian fitted for subtask {j} (present in trajectory {})",
                z.trajectory_id
            ))
        })?;
        for t in range {
            records.push(TraceRecord {
                t,
                subtask_index: j,
                distance: mahalanobis(&z.z[t], g)?,
            });
        }
    }
    Ok(DeviationTrace {
        trajectory_id: z.trajectory_id.clone(),
        records,
    })
}

/// Scores every subtask of every trajectory (good or not) by its mean
/// per-timestep Mahalanobis distance; also returns the full traces.
pub fn score_subtasks(
    latents: &[LatentTrajectory],
    segs: &[SubtaskSegmentation],
    gaussians: &[SubtaskGaussian],
) -> Result<(ScoreTable, Vec<DeviationTrace>)> {
    check_aligned(latents, segs)?;
    let by_index: BTreeMap<usize, &SubtaskGaussian> = gaussians.iter().map(|g| (g.subtask_index, g)).collect();
    let traces: Vec<DeviationTrace> = latents
        .par_iter()
        .zip(segs)
        .map(|(z, s)| trace_one(z, s, &by_index))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (trace, s) in traces.iter().zip(segs) {
        for j in 1..=s.k_expected() {
            rows.push(ScoreRow {
                trajectory_id: trace.trajectory_id.clone(),
                subtask_index: j,
                mean_score: trace.segment_mean(j),
            });
        }
    }
    Ok((ScoreTable::new(rows)?, traces))
}

/// Ranks present subtasks by score (descending; ties by trajectory id then
/// subtask index, ascending) and drops the first `rho`. Absent subtasks are
/// dropped without using up the budget.
pub fn build_mask(table: &ScoreTable, rho: usize) -> Result<SubtaskMask> {
    let present = table.present_count();
    if rho > present {
        return Err(Error::invalid(format!("rho = {rho} exceeds the {present} present subtasks")));
    }
    let mut ranked: Vec<(&ScoreRow, f64)> = table.present().collect();
    ranked.sort_by(|(ra, a), (rb, b)| {
        b.total_cmp(a)
            .then_with(|| ra.trajectory_id.cmp(&rb.trajectory_id))
            .then(ra.subtask_index.cmp(&rb.subtask_index))
    });
    let mut entries: Vec<MaskEntry> = ranked
        .iter()
        .enumerate()
        .map(|(rank, (r, s))| MaskEntry {
            trajectory_id: r.trajectory_id.clone(),
            subtask_index: r.subtask_index,
            present: true,
            mean_score: Some(*s),
            beta: rank >= rho,
        })
        .collect();
    entries.extend(table.rows.iter().filter(|r| r.mean_score.is_none()).map(|r| MaskEntry {
        trajectory_id: r.trajectory_id.clone(),
        subtask_index: r.subtask_index,
        present: false,
        mean_score: None,
        beta: false,
    }));
    SubtaskMask::new(entries, rho)
}

pub fn save_traces<P: AsRef<Path>>(traces: &[DeviationTrace], path: P) -> Result<()> {
    let rows: Vec<Vec<String>> = traces
        .iter()
        .flat_map(|tr| {
            tr.records.iter().map(move |r| {
                vec![
                    tr.trajectory_id.clone(),
                    r.t.to_string(),
                    r.subtask_index.to_string(),
                    fmt_real(r.distance),
                ]
            })
        })
        .collect();
    csvio::write_csv(path, &["trajectory_id", "t", "subtask_index", "distance"], &rows)
}

pub fn load_traces<P: AsRef<Path>>(path: P) -> Result<Vec<DeviationTrace>> {
    let table = csvio::read_csv(path, &["trajectory_id", "t", "subtask_index", "distance"])?;
    let mut out: Vec<DeviationTrace> = Vec::new();
    for (line, row) in &table.rows {
        let rec = TraceRecord {
            t: csvio::parse_usize(&row[1], *line, "t")?,
            subtask_index: csvio::parse_usize(&row[2], *line, "subtask_index")?,
            distance: csvio::parse_real(&row[3], *line, "distance")?,
        };
        match out.last_mut() {
            Some(tr) if tr.trajectory_id == row[0] => tr.records.push(rec),
            _ => out.push(DeviationTrace {
                trajectory_id: row[0].clone(),
                records: vec![rec],
            }),
        }
    }
    Ok(out)
}
