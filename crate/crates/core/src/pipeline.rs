//! End-to-end curation: weights, segmentation, latents, subtask Gaussians,
//! scores and masks, plus the evaluation helpers built on top.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{detector_mask, segment_features, Detector, SegmentFeature};
use crate::bed::{train_bed, BedConfig, BedOutcome, TrajectoryWeights};
use crate::csvio::{self, fmt_real};
use crate::dataset::{load_mask, Dataset, SubtaskMask, SubtaskSegmentation};
use crate::encoder::{encode_dataset, LatentTrajectory};
use crate::policy::{as_controller, load_eval_report, train_policy, PolicyConfig, StepWeights};
use crate::scoring::{build_mask, fit_all_subtasks, score_subtasks, DeviationTrace, ScoreTable, ScoringConfig, SubtaskGaussian};
use crate::segmentation::{segment_dataset, segment_dataset_from_annotations, HeuristicConfig};
use crate::synthgym::{evaluate_policy, load_truth, Scenario, SuccessRates, TruthRow, DEFAULT_HORIZON};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationConfig {
    pub bed: BedConfig,
    pub segmentation: HeuristicConfig,
    pub scoring: ScoringConfig,
}

/// Everything produced by one curation run.
#[derive(Debug, Clone)]
pub struct Curation {
    pub bed: BedOutcome,
    pub segs: Vec<SubtaskSegmentation>,
    pub latents: Vec<LatentTrajectory>,
    pub gaussians: Vec<SubtaskGaussian>,
    pub scores: ScoreTable,
    pub traces: Vec<DeviationTrace>,
}

impl Curation {
    /// Drops the `rho` highest-scoring subtasks.
    pub fn mask(&self, rho: usize) -> Result<SubtaskMask> {
        build_mask(&self.scores, rho)
    }

    pub fn features(&self) -> Result<Vec<SegmentFeature>> {
        segment_features(&self.latents, &self.segs)
    }

    /// Baseline mask over segment-mean latents of the same encoder.
    pub fn baseline_mask(&self, detector: Detector, neighbors: usize, rho: usize) -> Result<SubtaskMask> {
        detector_mask(&self.features()?, self.k_expected(), detector, neighbors, rho)
    }

    pub fn k_expected(&self) -> usize {
        self.segs.iter().map(SubtaskSegmentation::k_expected).max().unwrap_or(0)
    }
}

/// Runs both stages. Boundaries come from `annotations` when given,
/// otherwise from the gripper/height heuristic.
pub fn curate(
    data: &Dataset,
    cfg: &CurationConfig,
    annotations: Option<&BTreeMap<String, Vec<usize>>>,
) -> Result<Curation> {
    let bed = train_bed(data, &cfg.bed)?;
    let segs = match annotations {
        Some(a) => segment_dataset_from_annotations(data, a, cfg.segmentation.k_expected)?,
        None => segment_dataset(data, &cfg.segmentation)?,
    };
    let latents = encode_dataset(&bed.params, data)?;
    let gaussians = fit_all_subtasks(&latents, &segs, &bed.weights, &cfg.scoring)?;
    let (scores, traces) = score_subtasks(&latents, &segs, &gaussians)?;
    Ok(Curation {
        bed,
        segs,
        latents,
        gaussians,
        scores,
        traces,
    })
}

/// Subtask-level agreement of a mask with ground truth. A subtask counts as
/// flagged when it is present and masked out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl Detection {
    /// 1 when nothing was flagged.
    pub fn precision(&self) -> f64 {
        let flagged = self.true_positives + self.false_positives;
        if flagged == 0 {
            1.0
        } else {
            self.true_positives as f64 / flagged as f64
        }
    }

    /// 1 when nothing was corrupted.
    pub fn recall(&self) -> f64 {
        let actual = self.true_positives + self.false_negatives;
        if actual == 0 {
            1.0
        } else {
            self.true_positives as f64 / actual as f64
        }
    }
}

/// Compares the masked-out subtasks against the generator's truth rows.
pub fn detection_quality(mask: &SubtaskMask, truth: &[TruthRow]) -> Detection {
    let mut bad: BTreeMap<(&str, usize), bool> = truth
        .iter()
        .flat_map(|r| r.bad_subtasks.iter().map(move |j| ((r.trajectory_id.as_str(), *j), false)))
        .collect();
    let mut d = Detection {
        true_positives: 0,
        false_positives: 0,
        false_negatives: 0,
    };
    for e in mask.entries().iter().filter(|e| e.present && !e.beta) {
        match bad.get_mut(&(e.trajectory_id.as_str(), e.subtask_index)) {
            Some(hit) => {
                *hit = true;
                d.true_positives += 1;
            }
            None => d.false_positives += 1,
        }
    }
    d.false_negatives = bad.values().filter(|hit| !**hit).count();
    d
}

/// Fraction of trajectories whose binary weight agrees with the truth label.
pub fn weight_accuracy(weights: &TrajectoryWeights, truth: &[TruthRow]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::invalid("no truth rows"));
    }
    let mut agree = 0;
    for r in truth {
        let good = weights
            .is_good(&r.trajectory_id)
            .ok_or_else(|| Error::invalid(format!("no weight for trajectory {}", r.trajectory_id)))?;
        agree += usize::from(good == r.good);
    }
    Ok(agree as f64 / truth.len() as f64)
}

/// Trains a policy on `weights` and rolls it out.
pub fn train_and_evaluate(
    data: &Dataset,
    weights: &StepWeights,
    policy: &PolicyConfig,
    scenario: Scenario,
    rollouts: usize,
    eval_seed: u64,
) -> Result<SuccessRates> {
    let out = train_policy(data, weights, policy)?;
    let controller = as_controller(&out.params);
    evaluate_policy(&controller, scenario, rollouts, DEFAULT_HORIZON, eval_seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub rho: usize,
    pub seed: u64,
    pub rates: SuccessRates,
}

/// Success of masked behaviour cloning for every `rho` and policy seed.
pub fn sweep_rho(
    data: &Dataset,
    curation: &Curation,
    rhos: &[usize],
    seeds: &[u64],
    policy: &PolicyConfig,
    scenario: Scenario,
    rollouts: usize,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(rhos.len() * seeds.len());
    for &rho in rhos {
        let mask = curation.mask(rho)?;
        let weights = StepWeights::from_mask(data, &curation.segs, &mask)?;
        for &seed in seeds {
            let cfg = PolicyConfig { seed, ..policy.clone() };
            let rates = train_and_evaluate(data, &weights, &cfg, scenario, rollouts, seed)?;
            out.push(SweepPoint { rho, seed, rates });
        }
    }
    Ok(out)
}

/// Mean full-task success per `rho`, in ascending `rho`.
pub fn sweep_means(points: &[SweepPoint]) -> Vec<(usize, f64)> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for p in points {
        let e = acc.entry(p.rho).or_default();
        e.0 += p.rates.full;
        e.1 += 1;
    }
    acc.into_iter().map(|(rho, (s, n))| (rho, s / n as f64)).collect()
}

/// Writes `rho,seed,sub1,sub2,sub3,full`; the third subtask is empty for
/// two-subtask scenarios.
pub fn save_sweep<P: AsRef<Path>>(points: &[SweepPoint], path: P) -> Result<()> {
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            let sub = |j: usize| p.rates.subtasks.get(j).map(|v| fmt_real(*v)).unwrap_or_default();
            vec![
                p.rho.to_string(),
                p.seed.to_string(),
                sub(0),
                sub(1),
                sub(2),
                fmt_real(p.rates.full),
            ]
        })
        .collect();
    csvio::write_csv(path, &["rho", "seed", "sub1", "sub2", "sub3", "full"], &rows)
}

pub fn load_sweep<P: AsRef<Path>>(path: P) -> Result<Vec<SweepPoint>> {
    let table = csvio::read_csv(path, &["rho", "seed", "sub1", "sub2", "sub3", "full"])?;
    table
        .rows
        .iter()
        .map(|(line, r)| {
            if r.len() < 6 {
                return Err(Error::parse(*line, "expected 6 fields"));
            }
            let subtasks = r[2..5]
                .iter()
                .filter(|f| !f.trim().is_empty())
                .map(|f| csvio::parse_real(f, *line, "subtask success"))
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepPoint {
                rho: csvio::parse_usize(&r[0], *line, "rho")?,
                seed: r[1]
                    .trim()
                    .parse()
                    .map_err(|e| Error::parse(*line, format!("seed: {e}")))?,
                rates: SuccessRates {
                    subtasks,
                    full: csvio::parse_real(&r[5], *line, "full")?,
                    rollouts: 0,
                    nonfinite: 0,
                },
            })
        })
        .collect()
}

/// Markdown summary of the artifacts found in `dir`: weight accuracy and
/// mask precision/recall against `truth.csv`, then every evaluation and
/// sweep table.
pub fn markdown_report(dir: &Path) -> Result<String> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    files.sort();
    let named = |prefix: &str| -> Vec<&PathBuf> {
        files
            .iter()
            .filter(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                name.starts_with(prefix) && name.ends_with(".csv")
            })
            .collect()
    };
    let rel = |p: &Path| p.file_name().and_then(|n| n.to_str()).unwrap_or("").to_owned();

    let mut out = String::from("# Curation report\n");
    let truth_path = dir.join("truth.csv");
    let truth = if truth_path.exists() {
        Some(load_truth(&truth_path)?)
    } else {
        None
    };

    if let Some(truth) = &truth {
        let bad = truth.iter().filter(|r| !r.good).count();
        let subtasks: usize = truth.iter().map(|r| r.bad_subtasks.len()).sum();
        let _ = write!(
            out,
            "\n## Ground truth\n\n{} trajectories, {bad} with errors, {subtasks} corrupted subtasks.\n",
            truth.len()
        );
        let weights = named("weights");
        if !weights.is_empty() {
            out.push_str("\n## Trajectory weights\n\n| file | accuracy |\n|---|---|\n");
            for p in weights {
                let w = TrajectoryWeights::load(p)?;
                let _ = writeln!(out, "| {} | {:.3} |", rel(p), weight_accuracy(&w, truth)?);
            }
        }
        let masks = named("mask");
        if !masks.is_empty() {
            out.push_str("\n## Subtask masks\n\n| file | method | rho | precision | recall | tp | fp | fn |\n|---|---|---|---|---|---|---|---|\n");
            for p in masks {
                let m = load_mask(p)?;
                let d = detection_quality(&m, truth);
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {:.3} | {:.3} | {} | {} | {} |",
                    rel(p),
                    m.method().unwrap_or("gib"),
                    m.rho(),
                    d.precision(),
                    d.recall(),
                    d.true_positives,
                    d.false_positives,
                    d.false_negatives
                );
            }
        }
    }

    let evals = named("eval");
    if !evals.is_empty() {
        out.push_str("\n## Policy success\n\n| file | method | seed | sub1 | sub2 | sub3 | full |\n|---|---|---|---|---|---|---|\n");
        for p in evals {
            for r in load_eval_report(p)? {
                let sub = |j: usize| r.rates.subtasks.get(j).map(|v| format!("{v:.2}")).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} | {:.2} |",
                    rel(p),
                    r.method,
                    r.seed,
                    sub(0),
                    sub(1),
                    sub(2),
                    r.rates.full
                );
            }
        }
    }

    let sweeps = named("sweep");
    if !sweeps.is_empty() {
        out.push_str("\n## Pruning budget sweep\n\n| file | rho | mean full success |\n|---|---|---|\n");
        for p in sweeps {
            for (rho, mean) in sweep_means(&load_sweep(p)?) {
                let _ = writeln!(out, "| {} | {rho} | {mean:.3} |", rel(p));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::MaskEntry;

    fn truth() -> Vec<TruthRow> {
        let row = |id: &str, j: usize| TruthRow {
            trajectory_id: id.into(),
            good: false,
            boundaries: vec![1],
            bad_subtasks: vec![j],
        };
        vec![row("a", 1), row("b", 2)]
    }

    fn entry(id: &str, j: usize, beta: bool) -> MaskEntry {
        MaskEntry {
            trajectory_id: id.into(),
            subtask_index: j,
            present: true,
            mean_score: Some(0.0),
            beta,
        }
    }

    #[test]
    fn detection_counts() {
        let mask = SubtaskMask::new(
            vec![entry("a", 1, false), entry("a", 2, false), entry("b", 1, true), entry("b", 2, true)],
            2,
        )
        .unwrap();
        let d = detection_quality(&mask, &truth());
        assert_eq!((d.true_positives, d.false_positives, d.false_negatives), (1, 1, 1));
        assert_eq!(d.precision(), 0.5);
        assert_eq!(d.recall(), 0.5);
    }

    #[test]
    fn sweep_means_average_per_rho() {
        let rates = |full| SuccessRates {
            subtasks: vec![],
            full,
            rollouts: 1,
            nonfinite: 0,
        };
        let points = vec![
            SweepPoint { rho: 6, seed: 0, rates: rates(0.5) },
            SweepPoint { rho: 0, seed: 0, rates: rates(0.2) },
            SweepPoint { rho: 6, seed: 1, rates: rates(1.0) },
        ];
        assert_eq!(sweep_means(&points), vec![(0, 0.2), (6, 0.75)]);
    }

    #[test]
    fn sweep_csv_roundtrip_and_report() {
        let dir = tempfile::tempdir().unwrap();
        let rates = |full| SuccessRates {
            subtasks: vec![1.0, full],
            full,
            rollouts: 1,
            nonfinite: 0,
        };
        let points = vec![
            SweepPoint { rho: 0, seed: 1, rates: rates(0.25) },
            SweepPoint { rho: 6, seed: 1, rates: rates(0.5) },
        ];
        let path = dir.path().join("sweep.csv");
        save_sweep(&points, &path).unwrap();
        let back = load_sweep(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!((back[1].rho, back[1].seed, back[1].rates.full), (6, 1, 0.5));
        assert_eq!(back[1].rates.subtasks, vec![1.0, 0.5]);
        let md = markdown_report(dir.path()).unwrap();
        assert!(md.contains("| sweep.csv | 6 | 0.500 |"));
    }
}
