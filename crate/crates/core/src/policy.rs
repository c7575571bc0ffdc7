//! Weighted behaviour cloning.
//!
//! The loss is `(1 / N) * sum_i sum_t w_it * |pi(s_t) - a_t|^2 / 2`, the
//! negative Gaussian log-likelihood with unit variance up to a constant.
//! Trajectory weights give `w_it = w_i`; a subtask mask gives
//! `w_it = beta_ij` for `t` in segment `j`. `N` counts the trajectories with
//! at least one nonzero weight, so zeroing a trajectory out is the same as
//! removing it.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bed::TrajectoryWeights;
use crate::csvio::{self, fmt_real};
use crate::dataset::{Dataset, SubtaskMask, SubtaskSegmentation};
use crate::encoder::{Dims, EncoderParams, Objective, Standardizer};
use crate::optim::Adam;
use crate::synthgym::SuccessRates;
use crate::{Error, Result};

/// Per-timestep loss weights, one row per trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct StepWeights(Vec<Vec<f64>>);

impl StepWeights {
    pub fn uniform(data: &Dataset) -> Self {
        Self(data.iter().map(|t| vec![1.0; t.len()]).collect())
    }

    /// Trajectory-level weights, constant over each trajectory.
    pub fn from_trajectory_weights(data: &Dataset, w: &TrajectoryWeights) -> Result<Self> {
        data.iter()
            .map(|t| {
                let i = w
                    .ids()
                    .iter()
                    .position(|id| id == t.id())
                    .ok_or_else(|| Error::invalid(format!("no weight for trajectory {}", t.id())))?;
                Ok(vec![w.raw()[i]; t.len()])
            })
            .collect::<Result<_>>()
            .map(Self)
    }

    /// Binary subtask weights spread over each segment's timesteps.
    pub fn from_mask(data: &Dataset, segs: &[SubtaskSegmentation], mask: &SubtaskMask) -> Result<Self> {
        if segs.len() != data.len() {
            return Err(Error::invalid("one segmentation per trajectory required"));
        }
        data.iter()
            .zip(segs)
            .map(|(t, s)| {
                if s.trajectory_id() != t.id() || s.horizon() != t.len() {
                    return Err(Error::invalid(format!("segmentation does not match trajectory {}", t.id())));
                }
                let mut row = vec![0.0; t.len()];
                for (j, range) in s.segments().into_iter().enumerate() {
                    let beta = mask.beta(t.id(), j + 1).ok_or_else(|| {
                        Error::invalid(format!("mask has no entry for ({}, {})", t.id(), j + 1))
                    })?;
                    let v = if beta { 1.0 } else { 0.0 };
                    row[range].iter_mut().for_each(|x| *x = v);
                }
                Ok(row)
            })
            .collect::<Result<_>>()
            .map(Self)
    }

    pub fn from_rows(data: &Dataset, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != data.len() || rows.iter().zip(data.iter()).any(|(r, t)| r.len() != t.len()) {
            return Err(Error::invalid("step weights do not match the dataset shape"));
        }
        if rows.iter().flatten().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("step weights must be finite and nonnegative"));
        }
        Ok(Self(rows))
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.0
    }

    /// Trajectories with at least one nonzero weight.
    pub fn active_trajectories(&self) -> usize {
        self.0.iter().filter(|r| r.iter().any(|w| *w != 0.0)).count()
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        if self.0.len() != data.len() || self.0.iter().zip(data.iter()).any(|(r, t)| r.len() != t.len()) {
            return Err(Error::invalid("step weights do not match the dataset shape"));
        }
        Ok(())
    }
}

fn sample_loss_grad(params: &EncoderParams, s: &[f64], a: &[f64], w: f64, grad: Option<&mut [f64]>) -> f64 {
    let acts = params.forward(s);
    let err: Vec<f64> = acts.action.iter().zip(a).map(|(p, y)| p - y).collect();
    let value = 0.5 * w * err.iter().map(|e| e * e).sum::<f64>();
    if let Some(g) = grad {
        let d: Vec<f64> = err.iter().map(|e| w * e).collect();
        params.backward(s, &acts, Some(&d), None, g);
    }
    value
}

fn check_dims(params: &EncoderParams, data: &Dataset) -> Result<()> {
    let d = params.dims();
    if d.state != data.state_dim() || d.action != data.action_dim() {
        return Err(Error::invalid("network dimensions do not match the dataset"));
    }
    Ok(())
}

/// Weighted BC loss and its parameter gradient over the whole dataset.
pub struct BcObjective<'a> {
    data: &'a Dataset,
    weights: &'a StepWeights,
}

impl<'a> BcObjective<'a> {
    pub fn new(data: &'a Dataset, weights: &'a StepWeights) -> Result<Self> {
        weights.check(data)?;
        if weights.active_trajectories() == 0 {
            return Err(Error::invalid("all behaviour cloning weights are zero"));
        }
        Ok(Self { data, weights })
    }

    fn eval(&self, params: &EncoderParams, with_grad: bool) -> Result<(f64, Vec<f64>)> {
        check_dims(params, self.data)?;
        let n = self.weights.active_trajectories() as f64;
        let len = params.values().len();
        let per_traj: Vec<(f64, Option<Vec<f64>>)> = self
            .data
            .trajectories()
            .par_iter()
            .zip(self.weights.rows())
            .map(|(t, row)| {
                let mut grad = with_grad.then(|| vec![0.0; len]);
                let mut value = 0.0;
                for ((s, a), &w) in t.states().iter().zip(t.actions()).zip(row) {
                    if w != 0.0 {
                        value += sample_loss_grad(params, s, a, w, grad.as_deref_mut());
                    }
                }
                (value, grad)
            })
            .collect();
        let mut value = 0.0;
        let mut grad = vec![0.0; if with_grad { len } else { 0 }];
        for (v, g) in per_traj {
            value += v;
            if let Some(g) = g {
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((value / n, grad))
    }
}

impl Objective for BcObjective<'_> {
    fn value(&self, params: &EncoderParams) -> Result<f64> {
        Ok(self.eval(params, false)?.0)
    }

    fn value_and_gradient(&self, params: &EncoderParams) -> Result<(f64, Vec<f64>)> {
        self.eval(params, true)
    }
}

pub fn bc_loss_weighted(params: &EncoderParams, data: &Dataset, weights: &StepWeights) -> Result<f64> {
    BcObjective::new(data, weights)?.value(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden: usize,
    pub latent: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub seed: u64,
    /// Train on per-dimension standardised states and actions (weighted
    /// moments of the active samples), folded back into the network after.
    pub standardize: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            latent: 16,
            epochs: 150,
            batch_size: 64,
            step_size: 1e-3,
            seed: 0,
            standardize: true,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.latent == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("hidden, latent, epochs and batch_size must be positive"));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::invalid("step_size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PolicyOutcome {
    pub params: EncoderParams,
    /// Mean mini-batch loss per epoch, on the scale of the full loss (in
    /// standardised units when standardisation is on).
    pub log: Vec<f64>,
}

/// Trains a fresh network with Adam on shuffled mini-batches of the
/// weighted samples. Zero-weight samples are never visited, and the
/// visiting order depends only on the seed and the nonzero samples.
pub fn train_policy(data: &Dataset, weights: &StepWeights, cfg: &PolicyConfig) -> Result<PolicyOutcome> {
    cfg.validate()?;
    weights.check(data)?;
    let n_eff = weights.active_trajectories();
    if n_eff == 0 {
        return Err(Error::invalid("all behaviour cloning weights are zero"));
    }
    let samples: Vec<(usize, usize, f64)> = weights
        .rows()
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().filter(|(_, w)| **w != 0.0).map(move |(t, w)| (i, t, *w)))
        .collect();
    let trajs = data.trajectories();
    let (input, output) = if cfg.standardize {
        let states = samples.iter().map(|&(i, t, w)| (trajs[i].states()[t].as_slice(), w));
        let actions = samples.iter().map(|&(i, t, w)| (trajs[i].actions()[t].as_slice(), w));
        (
            Standardizer::fit(states, data.state_dim()),
            Standardizer::fit(actions, data.action_dim()),
        )
    } else {
        (Standardizer::identity(data.state_dim()), Standardizer::identity(data.action_dim()))
    };
    let xs: Vec<Vec<f64>> = samples.iter().map(|&(i, t, _)| input.apply(&trajs[i].states()[t])).collect();
    let ys: Vec<Vec<f64>> = samples.iter().map(|&(i, t, _)| output.apply(&trajs[i].actions()[t])).collect();

    let dims = Dims::new(data.state_dim(), cfg.hidden, cfg.latent, data.action_dim());
    let mut params = EncoderParams::init(dims, cfg.seed);
    let mut opt = Adam::new(dims.param_count(), cfg.step_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            // Scales a batch sum to an estimate of the full loss.
            let scale = samples.len() as f64 / (batch.len() as f64 * n_eff as f64);
            let mut grad = vec![0.0; dims.param_count()];
            let mut value = 0.0;
            for &k in batch {
                value += sample_loss_grad(&params, &xs[k], &ys[k], samples[k].2, Some(&mut grad));
            }
            grad.iter_mut().for_each(|g| *g *= scale);
            epoch_loss += value * scale * batch.len() as f64 / samples.len() as f64;
            opt.step(params.values_mut(), &grad);
        }
        if !epoch_loss.is_finite() || params.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("policy training diverged at epoch {epoch}")));
        }
        log.push(epoch_loss);
    }
    input.fold_into_input(&mut params);
    output.fold_into_output(&mut params);
    Ok(PolicyOutcome { params, log })
}

/// The trained network as a state-to-action function; a state of the wrong
/// size yields a non-finite action.
pub fn as_controller(params: &EncoderParams) -> impl Fn(&[f64]) -> Vec<f64> + Sync + '_ {
    move |s: &[f64]| {
        params
            .predict_action(s)
            .unwrap_or_else(|_| vec![f64::NAN; params.dims().action])
    }
}

pub fn save_policy_log<P: AsRef<Path>>(log: &[f64], path: P) -> Result<()> {
    let rows: Vec<Vec<String>> = log
        .iter()
        .enumerate()
        .map(|(e, v)| vec![e.to_string(), fmt_real(*v)])
        .collect();
    csvio::write_csv(path, &["epoch", "loss"], &rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub method: String,
    pub rates: SuccessRates,
    pub seed: u64,
}

/// Writes `method,sub1,sub2,sub3,full,seed`; the third subtask is empty for
/// two-subtask scenarios.
pub fn save_eval_report<P: AsRef<Path>>(rows: &[EvalRow], path: P) -> Result<()> {
    let out: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let sub = |j: usize| r.rates.subtasks.get(j).map(|v| fmt_real(*v)).unwrap_or_default();
            vec![
                r.method.clone(),
                sub(0),
                sub(1),
                sub(2),
                fmt_real(r.rates.full),
                r.seed.to_string(),
            ]
        })
        .collect();
    csvio::write_csv(path, &["method", "sub1", "sub2", "sub3", "full", "seed"], &out)
}

pub fn load_eval_report<P: AsRef<Path>>(path: P) -> Result<Vec<EvalRow>> {
    let table = csvio::read_csv(path, &["method", "sub1", "sub2", "sub3", "full", "seed"])?;
    table
        .rows
        .iter()
        .map(|(line, r)| {
            if r.len() < 6 {
                return Err(Error::parse(*line, "expected 6 fields"));
            }
            let subtasks = r[1..4]
                .iter()
                .filter(|f| !f.trim().is_empty())
                .map(|f| csvio::parse_real(f, *line, "subtask success"))
                .collect::<Result<Vec<_>>>()?;
            Ok(EvalRow {
                method: r[0].clone(),
                rates: SuccessRates {
                    subtasks,
                    full: csvio::parse_real(&r[4], *line, "full")?,
                    rollouts: 0,
                    nonfinite: 0,
                },
                seed: r[5]
                    .trim()
                    .parse()
                    .map_err(|e| Error::parse(*line, format!("seed: {e}")))?,
            })
        })
        .collect()
}
