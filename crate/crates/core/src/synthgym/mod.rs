//! Deterministic kinematic pick/place/drawer benchmark with scripted
//! demonstrators and labelled error injection.
//!
//! States are `[ee_x, ee_y, ee_z, obj_x, obj_y, obj_z, drawer, held,
//! gripper, height]`; actions are three translation deltas, three ignored
//! rotation deltas and a gripper command.

mod script;
mod world;

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use script::Window;
pub use world::{drawer_front, step, WorldState, ACTION_DIM, GRASP_RADIUS, MAX_DELTA, STATE_DIM, TABLE_Z};

use crate::csvio;
use crate::dataset::{Dataset, LabeledDataset, Trajectory, Truth};
use crate::{Error, Result};

pub const DEFAULT_NOISE: f64 = 0.002;
pub const DEFAULT_HORIZON: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Pick an object, place it in an open drawer, push the drawer shut.
    Drawer3,
    /// Pick a pot by its handle and place it on a target.
    TwoStep,
    /// As `TwoStep`, with a left and a right handle.
    Multimodal2,
}

const CENTRE: [[f64; 3]; 1] = [[0.0, 0.0, 0.0]];
const HANDLES: [[f64; 3]; 2] = [[-0.05, 0.0, 0.0], [0.05, 0.0, 0.0]];

impl Scenario {
    pub fn has_drawer(self) -> bool {
        self == Scenario::Drawer3
    }

    pub fn k_expected(self) -> usize {
        if self.has_drawer() {
            3
        } else {
            2
        }
    }

    /// Grasp points relative to the object position; one per mode.
    pub fn grasp_offsets(self) -> &'static [[f64; 3]] {
        match self {
            Scenario::Multimodal2 => &HANDLES,
            _ => &CENTRE,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Drawer3 => "drawer3",
            Scenario::TwoStep => "twostep",
            Scenario::Multimodal2 => "multimodal2",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drawer3" => Ok(Scenario::Drawer3),
            "twostep" => Ok(Scenario::TwoStep),
            "multimodal2" => Ok(Scenario::Multimodal2),
            _ => Err(Error::invalid(format!("unknown scenario {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ErrorKind {
    /// Smooth translation noise on every action.
    ActionNoise,
    /// The object is released away from its goal.
    WrongGoal,
    /// The carry detours through a displaced midpoint, then returns.
    WrongPath,
    /// Subtask `j` (1-based) is performed wrongly.
    CorruptSubtask(usize),
}

impl ErrorKind {
    /// 1-based subtasks this error corrupts.
    pub fn bad_subtasks(self, k: usize) -> Vec<usize> {
        match self {
            ErrorKind::ActionNoise => (1..=k).collect(),
            ErrorKind::WrongGoal | ErrorKind::WrongPath => vec![2],
            ErrorKind::CorruptSubtask(j) => vec![j],
        }
    }

    pub fn default_magnitude(self) -> f64 {
        match self {
            ErrorKind::ActionNoise => 0.02,
            ErrorKind::WrongPath => 0.25,
            _ => 0.3,
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorKind::ActionNoise => f.write_str("action-noise"),
            ErrorKind::WrongGoal => f.write_str("wrong-goal"),
            ErrorKind::WrongPath => f.write_str("wrong-path"),
            ErrorKind::CorruptSubtask(j) => write!(f, "corrupt-subtask-{j}"),
        }
    }
}

impl FromStr for ErrorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "action-noise" => Ok(ErrorKind::ActionNoise),
            "wrong-goal" => Ok(ErrorKind::WrongGoal),
            "wrong-path" => Ok(ErrorKind::WrongPath),
            _ => s
                .strip_prefix("corrupt-subtask-")
                .and_then(|j| j.parse().ok())
                .filter(|j| *j >= 1)
                .map(ErrorKind::CorruptSubtask)
                .ok_or_else(|| Error::invalid(format!("unknown error kind {s:?}"))),
        }
    }
}

/// One kind of injected error, applied to `fraction` of the bad trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSpec {
    pub kind: ErrorKind,
    pub magnitude: f64,
    pub fraction: f64,
}

impl ErrorSpec {
    pub fn new(kind: ErrorKind, fraction: f64) -> Self {
        Self {
            kind,
            magnitude: kind.default_magnitude(),
            fraction,
        }
    }

    /// Parses a comma separated list of `kind[:magnitude[:fraction]]`.
    /// Missing fractions share what the explicit ones leave over.
    pub fn parse_list(s: &str) -> Result<Vec<ErrorSpec>> {
        let mut specs = Vec::new();
        let mut unset = Vec::new();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let mut parts = item.split(':');
            let kind: ErrorKind = parts.next().unwrap_or_default().parse()?;
            let num = |p: Option<&str>, what: &str| -> Result<Option<f64>> {
                p.map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::invalid(format!("bad {what} {v:?} in {item:?}")))
                })
                .transpose()
            };
            let magnitude = num(parts.next(), "magnitude")?.unwrap_or(kind.default_magnitude());
            let fraction = num(parts.next(), "fraction")?;
            if parts.next().is_some() {
                return Err(Error::invalid(format!("too many fields in {item:?}")));
            }
            if fraction.is_none() {
                unset.push(specs.len());
            }
            specs.push(ErrorSpec {
                kind,
                magnitude,
                fraction: fraction.unwrap_or(0.0),
            });
        }
        if !unset.is_empty() {
            let left = 1.0 - specs.iter().map(|e| e.fraction).sum::<f64>();
            for &i in &unset {
                specs[i].fraction = left / unset.len() as f64;
            }
        }
        Ok(specs)
    }

    fn validate(&self, scenario: Scenario) -> Result<()> {
        if !(self.magnitude.is_finite() && self.magnitude > 0.0) {
            return Err(Error::invalid(format!("{}: magnitude must be positive", self.kind)));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::invalid(format!("{}: fraction must be in (0, 1]", self.kind)));
        }
        if let ErrorKind::CorruptSubtask(j) = self.kind {
            if j == 0 || j > scenario.k_expected() {
                return Err(Error::invalid(format!("{scenario} has no subtask {j}")));
            }
        }
        Ok(())
    }
}

/// Splits `n` into integer counts proportional to `fractions` (largest remainder).
fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// A generated dataset with everything the generator knows about it.
#[derive(Debug, Clone)]
pub struct Generated {
    pub scenario: Scenario,
    pub data: LabeledDataset,
    /// True subtask boundaries per trajectory.
    pub boundaries: Vec<Vec<usize>>,
    /// Injected error per trajectory.
    pub errors: Vec<Option<ErrorKind>>,
    /// Grasp mode per trajectory.
    pub modes: Vec<usize>,
    /// Deviation and recovery action ranges of wrong-path trajectories.
    pub windows: Vec<Vec<(Window, Range<usize>)>>,
}

impl Generated {
    pub fn truth_rows(&self) -> Vec<TruthRow> {
        self.data
            .data()
            .iter()
            .zip(self.data.truth())
            .zip(&self.boundaries)
            .map(|((t, truth), b)| {
                let truth = truth.as_ref().expect("generated data is labelled");
                TruthRow {
                    trajectory_id: t.id().to_owned(),
                    good: truth.good,
                    boundaries: b.clone(),
                    bad_subtasks: truth.bad_subtasks(),
                }
            })
            .collect()
    }

    /// Writes `dataset.jsonl` and `truth.csv` into `dir`.
    pub fn save<P: AsRef<Path>>(&self, dir: P) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::dataset::save_dataset(&self.data, dir.join("dataset.jsonl"))?;
        save_truth(&self.truth_rows(), dir.join("truth.csv"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthRow {
    pub trajectory_id: String,
    pub good: bool,
    pub boundaries: Vec<usize>,
    pub bad_subtasks: Vec<usize>,
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

fn split(field: &str, line: usize, what: &str) -> Result<Vec<usize>> {
    field
        .split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| csvio::parse_usize(t, line, what))
        .collect()
}

/// Writes `trajectory_id,truth_good,boundaries,bad_subtasks`; list fields are `;` separated.
pub fn save_truth<P: AsRef<Path>>(rows: &[TruthRow], path: P) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.trajectory_id.clone(),
                if r.good { "1" } else { "0" }.to_owned(),
                join(&r.boundaries),
                join(&r.bad_subtasks),
            ]
        })
        .collect();
    csvio::write_csv(path, &["trajectory_id", "truth_good", "boundaries", "bad_subtasks"], &rows)
}

pub fn load_truth<P: AsRef<Path>>(path: P) -> Result<Vec<TruthRow>> {
    let table = csvio::read_csv(path, &["trajectory_id", "truth_good", "boundaries", "bad_subtasks"])?;
    table
        .rows
        .iter()
        .map(|(line, r)| {
            Ok(TruthRow {
                trajectory_id: r[0].clone(),
                good: csvio::parse_flag(&r[1], *line, "truth_good")?,
                boundaries: split(&r[2], *line, "boundaries")?,
                bad_subtasks: split(&r[3], *line, "bad_subtasks")?,
            })
        })
        .collect()
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generates `n_good` clean and `n_bad` error-injected demonstrations.
///
/// Each spec's `fraction` is its share of the bad trajectories; the
/// fractions must sum to one. Good demonstrations alternate between grasp
/// modes, and the good/bad order is shuffled.
pub fn generate_dataset(
    scenario: Scenario,
    n_good: usize,
    n_bad: usize,
    errors: &[ErrorSpec],
    noise_scale: f64,
    seed: u64,
) -> Result<Generated> {
    if n_good <= n_bad {
        return Err(Error::invalid(format!(
            "good demonstrations must outnumber bad ones ({n_good} good, {n_bad} bad)"
        )));
    }
    if !(noise_scale.is_finite() && noise_scale >= 0.0) {
        return Err(Error::invalid("noise scale must be finite and non-negative"));
    }
    for e in errors {
        e.validate(scenario)?;
    }
    if n_bad > 0 {
        let total: f64 = errors.iter().map(|e| e.fraction).sum();
        if errors.is_empty() || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("error fractions must sum to 1 when bad trajectories are requested"));
        }
    }

    let counts = apportion(n_bad, &errors.iter().map(|e| e.fraction).collect::<Vec<_>>());
    let mut plan: Vec<Option<(ErrorKind, f64)>> = vec![None; n_good];
    for (e, c) in errors.iter().zip(counts) {
        plan.extend(std::iter::repeat_n(Some((e.kind, e.magnitude)), c));
    }
    let modes_n = scenario.grasp_offsets().len();
    let mut modes: Vec<usize> = (0..n_good).map(|i| i % modes_n).collect();
    modes.extend((0..n_bad).map(|i| i % modes_n));
    let mut order: Vec<usize> = (0..plan.len()).collect();
    order.shuffle(&mut stream_rng(seed, 0));

    let k = scenario.k_expected();
    let mut trajectories = Vec::with_capacity(plan.len());
    let mut truth = Vec::with_capacity(plan.len());
    let mut out = Generated {
        scenario,
        data: LabeledDataset::unlabeled(Dataset::new(vec![placeholder()])?),
        boundaries: Vec::new(),
        errors: Vec::new(),
        modes: Vec::new(),
        windows: Vec::new(),
    };
    for (i, &slot) in order.iter().enumerate() {
        let error = plan[slot];
        let mut rng = stream_rng(seed, i as u64 + 1);
        let rec = script::demonstrate(scenario, modes[slot], error, noise_scale, &mut rng)?;
        let bad = error.map(|(kind, _)| kind.bad_subtasks(k)).unwrap_or_default();
        truth.push(Some(Truth {
            good: error.is_none(),
            subtasks_good: (1..=k).map(|j| !bad.contains(&j)).collect(),
        }));
        trajectories.push(Trajectory::new(format!("traj_{i:03}"), rec.states, rec.actions)?);
        out.boundaries.push(rec.boundaries);
        out.errors.push(error.map(|(kind, _)| kind));
        out.modes.push(modes[slot]);
        out.windows.push(rec.windows);
    }
    out.data = LabeledDataset::new(Dataset::new(trajectories)?, truth)?;
    Ok(out)
}

fn placeholder() -> Trajectory {
    Trajectory::new("", vec![vec![0.0; STATE_DIM]; 2], vec![vec![0.0; ACTION_DIM]; 2]).expect("valid placeholder")
}

/// Success rates over a batch of rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessRates {
    /// One rate per subtask.
    pub subtasks: Vec<f64>,
    pub full: f64,
    pub rollouts: usize,
    /// Rollouts stopped because the policy produced a non-finite action.
    pub nonfinite: usize,
}

impl SuccessRates {
    fn from_outcomes(outcomes: &[(Vec<bool>, bool, bool)], k: usize) -> Self {
        let n = outcomes.len() as f64;
        let rate = |f: &dyn Fn(&(Vec<bool>, bool, bool)) -> bool| outcomes.iter().filter(|o| f(o)).count() as f64 / n;
        Self {
            subtasks: (0..k).map(|j| rate(&|o| o.0[j])).collect(),
            full: rate(&|o| o.1),
            rollouts: outcomes.len(),
            nonfinite: outcomes.iter().filter(|o| o.2).count(),
        }
    }
}

/// Rolls out a state-feedback policy from seeded initial states, in parallel.
pub fn evaluate_policy<P>(policy: &P, scenario: Scenario, n_rollouts: usize, horizon: usize, seed: u64) -> Result<SuccessRates>
where
    P: Fn(&[f64]) -> Vec<f64> + Sync,
{
    if n_rollouts == 0 {
        return Err(Error::invalid("at least one rollout is required"));
    }
    let outcomes: Vec<(Vec<bool>, bool, bool)> = (0..n_rollouts)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64 + 1);
            let mut w = script::sample_initial(scenario, &mut rng);
            let mut progress = script::Progress::default();
            for _ in 0..horizon {
                let a = policy(&w.observe());
                if a.len() != ACTION_DIM {
                    return Err(Error::invalid(format!(
                        "policy returned {} action entries, expected {ACTION_DIM}",
                        a.len()
                    )));
                }
                if a.iter().any(|v| !v.is_finite()) {
                    return Ok((vec![false; scenario.k_expected()], false, true));
                }
                w = step(scenario, &w, &a);
                progress.update(&w);
            }
            let (subs, full) = progress.outcome(scenario, &w);
            Ok((subs, full, false))
        })
        .collect::<Result<_>>()?;
    Ok(SuccessRates::from_outcomes(&outcomes, scenario.k_expected()))
}

/// Rolls out the scripted demonstrator itself, with a random grasp mode.
pub fn evaluate_expert(scenario: Scenario, n_rollouts: usize, seed: u64) -> Result<SuccessRates> {
    if n_rollouts == 0 {
        return Err(Error::invalid("at least one rollout is required"));
    }
    let outcomes: Vec<(Vec<bool>, bool, bool)> = (0..n_rollouts)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64 + 1);
            let mode = script::pick_mode(scenario, &mut rng);
            let rec = script::demonstrate(scenario, mode, None, DEFAULT_NOISE, &mut rng)?;
            let (subs, full) = rec.progress.outcome(scenario, &rec.last);
            Ok((subs, full, false))
        })
        .collect::<Result<_>>()?;
    Ok(SuccessRates::from_outcomes(&outcomes, scenario.k_expected()))
}

/// Runs one demonstration and reports its terminal outcome (per-subtask, full).
pub fn demonstration_outcome(
    scenario: Scenario,
    mode: usize,
    error: Option<ErrorSpec>,
    seed: u64,
) -> Result<(Vec<bool>, bool)> {
    let mut rng = stream_rng(seed, 1);
    let rec = script::demonstrate(scenario, mode, error.map(|e| (e.kind, e.magnitude)), DEFAULT_NOISE, &mut rng)?;
    Ok(rec.progress.outcome(scenario, &rec.last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::dataset_to_jsonl;
    use crate::segmentation::{segment_heuristic, HeuristicConfig};

    #[test]
    fn scripted_expert_always_succeeds() {
        for s in [Scenario::Drawer3, Scenario::TwoStep, Scenario::Multimodal2] {
            let r = evaluate_expert(s, 40, 11).unwrap();
            assert_eq!(r.full, 1.0, "{s}");
            assert!(r.subtasks.iter().all(|v| *v == 1.0));
        }
    }

    #[test]
    fn zero_policy_never_succeeds() {
        let r = evaluate_policy(&|_: &[f64]| vec![0.0; ACTION_DIM], Scenario::Drawer3, 10, 50, 0).unwrap();
        assert_eq!(r.full, 0.0);
        let r = evaluate_policy(&|_: &[f64]| vec![f64::NAN; ACTION_DIM], Scenario::TwoStep, 4, 50, 0).unwrap();
        assert_eq!((r.full, r.nonfinite), (0.0, 4));
        assert!(evaluate_policy(&|_: &[f64]| vec![0.0; 3], Scenario::TwoStep, 4, 50, 0).is_err());
    }

    #[test]
    fn clean_data_is_all_good_and_heuristic_finds_true_boundaries() {
        for s in [Scenario::Drawer3, Scenario::TwoStep, Scenario::Multimodal2] {
            let g = generate_dataset(s, 10, 0, &[], DEFAULT_NOISE, 3).unwrap();
            let cfg = HeuristicConfig {
                k_expected: s.k_expected(),
                ..HeuristicConfig::default()
            };
            for ((t, truth), b) in g.data.data().iter().zip(g.data.truth()).zip(&g.boundaries) {
                assert!(truth.as_ref().unwrap().good);
                assert_eq!(b.len(), s.k_expected() - 1);
                assert_eq!(segment_heuristic(t, &cfg).unwrap().boundaries(), b.as_slice(), "{s}");
            }
        }
    }

    #[test]
    fn injected_errors_break_the_task() {
        let cases = [
            (Scenario::Drawer3, ErrorKind::WrongGoal),
            (Scenario::Drawer3, ErrorKind::CorruptSubtask(3)),
            (Scenario::TwoStep, ErrorKind::WrongGoal),
            (Scenario::Multimodal2, ErrorKind::WrongGoal),
        ];
        for (s, kind) in cases {
            for seed in 0..5 {
                let (_, full) = demonstration_outcome(s, 0, Some(ErrorSpec::new(kind, 1.0)), seed).unwrap();
                assert!(!full, "{s} {kind}");
            }
        }
        // Detours and hesitations that are corrected still complete the task.
        for j in [1, 2] {
            for seed in 0..5 {
                let spec = ErrorSpec::new(ErrorKind::CorruptSubtask(j), 1.0);
                let (_, full) = demonstration_outcome(Scenario::Drawer3, 0, Some(spec), seed).unwrap();
                assert!(full, "corrupt-subtask-{j}");
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_bounded() {
        let specs = ErrorSpec::parse_list("wrong-goal,corrupt-subtask-3:0.3:0.25,wrong-path").unwrap();
        let a = generate_dataset(Scenario::Drawer3, 9, 8, &specs, DEFAULT_NOISE, 5).unwrap();
        let b = generate_dataset(Scenario::Drawer3, 9, 8, &specs, DEFAULT_NOISE, 5).unwrap();
        assert_eq!(dataset_to_jsonl(&a.data), dataset_to_jsonl(&b.data));
        assert_eq!(a.truth_rows(), b.truth_rows());
        let c = generate_dataset(Scenario::Drawer3, 9, 8, &specs, DEFAULT_NOISE, 6).unwrap();
        assert_ne!(dataset_to_jsonl(&a.data), dataset_to_jsonl(&c.data));
        assert_eq!(a.truth_rows().iter().filter(|r| !r.good).count(), 8);
        for t in a.data.data().iter() {
            for s in t.states() {
                assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
        let paths: Vec<_> = a.windows.iter().filter(|w| !w.is_empty()).collect();
        assert!(!paths.is_empty());
        for w in paths {
            assert_eq!(w[0].0, Window::Deviation);
            assert_eq!(w[1].0, Window::Recovery);
            assert_eq!(w[0].1.end, w[1].1.start);
        }
    }

    #[test]
    fn assumption_one_and_spec_validation() {
        let wg = [ErrorSpec::new(ErrorKind::WrongGoal, 1.0)];
        assert!(generate_dataset(Scenario::Drawer3, 5, 5, &wg, DEFAULT_NOISE, 0).is_err());
        assert!(generate_dataset(Scenario::Drawer3, 5, 2, &[], DEFAULT_NOISE, 0).is_err());
        let half = [ErrorSpec::new(ErrorKind::WrongGoal, 0.5)];
        assert!(generate_dataset(Scenario::Drawer3, 5, 2, &half, DEFAULT_NOISE, 0).is_err());
        let j3 = [ErrorSpec::new(ErrorKind::CorruptSubtask(3), 1.0)];
        assert!(generate_dataset(Scenario::TwoStep, 5, 2, &j3, DEFAULT_NOISE, 0).is_err());
        assert!(ErrorSpec::parse_list("bogus").is_err());
        assert!(ErrorSpec::parse_list("wrong-goal:abc").is_err());
        let l = ErrorSpec::parse_list("corrupt-subtask-1:0.2:0.5, corrupt-subtask-2").unwrap();
        assert_eq!(l[1].fraction, 0.5);
        assert_eq!(l[0].magnitude, 0.2);
    }

    #[test]
    fn apportion_sums() {
        assert_eq!(apportion(12, &[1.0 / 3.0; 3]), vec![4, 4, 4]);
        assert_eq!(apportion(5, &[0.5, 0.5]), vec![3, 2]);
        assert_eq!(apportion(0, &[]), Vec::<usize>::new());
    }

    #[test]
    fn truth_sidecar_roundtrip() {
        let g = generate_dataset(Scenario::TwoStep, 3, 1, &[ErrorSpec::new(ErrorKind::WrongGoal, 1.0)], DEFAULT_NOISE, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        g.save(dir.path()).unwrap();
        assert_eq!(load_truth(dir.path().join("truth.csv")).unwrap(), g.truth_rows());
        let back = crate::dataset::load_dataset(dir.path().join("dataset.jsonl")).unwrap();
        assert_eq!(back, g.data);
    }
}
