//! Stage one: joint learning of the latent encoder and per-trajectory weights.
//!
//! The objective mixes four terms, each weighted per trajectory by `w_i`:
//!
//! * action: `(c / N) * sum_i w_i * mean_t |pi(s_t) - a_t|^2`
//! * goal:   `h * sum_i w_i * |G - g_i|` with `g_i` the terminal latent
//! * path:   `q * sum_i w_i * |Z - resample(z_i)|_F / L`
//! * count:  `lambda * (m N - sum_i w_i)^2`
//!
//! `G` and `Z` are the weight-normalised means of terminal latents and of the
//! resampled latent paths. They are recomputed every epoch and held fixed
//! within a gradient step. Weights start at `m`, take momentum steps together
//! with the network and are clipped to `[0, 1]` after each one.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csvio::{self, fmt_real};
use crate::dataset::{Dataset, Trajectory};
use crate::encoder::{Activations, Dims, EncoderParams, LatentTrajectory, Objective, Standardizer};
use crate::optim::Momentum;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BedConfig {
    /// Action-consistency weight.
    pub c: f64,
    /// Goal-consistency weight.
    pub h_coef: f64,
    /// Path-consistency weight.
    pub q: f64,
    /// Strength of the soft constraint pulling `sum w` towards `m N`.
    pub lambda_count: f64,
    /// Expected fraction of good demonstrations.
    pub m: f64,
    pub epochs: usize,
    /// Step size for the network parameters.
    pub step_size: f64,
    /// Step size for the trajectory weights.
    pub weight_step_size: f64,
    pub momentum: f64,
    /// Length of the common time grid for the path term.
    pub resample_len: usize,
    pub hidden: usize,
    pub latent: usize,
    pub seed: u64,
    /// Train on standardised states and fold the scaling into the first
    /// layer afterwards.
    pub standardize: bool,
}

impl Default for BedConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            h_coef: 0.1,
            q: 0.1,
            lambda_count: 1.0,
            m: 0.75,
            epochs: 500,
            step_size: 1e-3,
            weight_step_size: 0.04,
            momentum: 0.9,
            resample_len: 100,
            hidden: 32,
            latent: 8,
            seed: 0,
            standardize: true,
        }
    }
}

impl BedConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("c", self.c),
            ("h_coef", self.h_coef),
            ("q", self.q),
            ("lambda_count", self.lambda_count),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be a nonnegative real, got {v}")));
            }
        }
        if !(self.m > 0.0 && self.m <= 1.0) {
            return Err(Error::invalid(format!("m must lie in (0, 1], got {}", self.m)));
        }
        for (name, v) in [("step_size", self.step_size), ("weight_step_size", self.weight_step_size)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        if self.resample_len < 2 {
            return Err(Error::invalid("resample_len must be at least 2"));
        }
        if self.hidden == 0 || self.latent == 0 {
            return Err(Error::invalid("hidden and latent widths must be positive"));
        }
        Ok(())
    }
}

/// Learned per-trajectory weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWeights {
    ids: Vec<String>,
    raw: Vec<f64>,
}

impl TrajectoryWeights {
    /// Clips every raw weight into `[0, 1]`.
    pub fn new(ids: Vec<String>, raw: Vec<f64>) -> Result<Self> {
        if ids.len() != raw.len() {
            return Err(Error::invalid("one weight per trajectory required"));
        }
        if raw.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("weights must be finite"));
        }
        let raw = raw.into_iter().map(|w| w.clamp(0.0, 1.0)).collect();
        Ok(Self { ids, raw })
    }

    /// Every trajectory at weight 1.
    pub fn uniform(data: &Dataset) -> Self {
        Self {
            ids: data.iter().map(|t| t.id().to_owned()).collect(),
            raw: vec![1.0; data.len()],
        }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    /// 1 iff the raw weight is strictly above one half.
    pub fn binary(&self) -> Vec<bool> {
        self.raw.iter().map(|w| *w > 0.5).collect()
    }

    pub fn is_good(&self, id: &str) -> Option<bool> {
        self.ids.iter().position(|i| i == id).map(|k| self.raw[k] > 0.5)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .ids
            .iter()
            .zip(&self.raw)
            .map(|(id, w)| vec![id.clone(), fmt_real(*w), u8::from(*w > 0.5).to_string()])
            .collect();
        csvio::write_csv(path, &["trajectory_id", "raw_weight", "binary"], &rows)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let table = csvio::read_csv(path, &["trajectory_id", "raw_weight", "binary"])?;
        let mut ids = Vec::new();
        let mut raw = Vec::new();
        for (line, row) in &table.rows {
            let w = csvio::parse_real(&row[1], *line, "raw_weight")?;
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::invalid(format!("line {line}: raw weight {w} outside [0, 1]")));
            }
            let b = csvio::parse_flag(&row[2], *line, "binary")?;
            if b != (w > 0.5) {
                return Err(Error::invalid(format!("line {line}: binary flag disagrees with raw weight")));
            }
            ids.push(row[0].clone());
            raw.push(w);
        }
        Self::new(ids, raw)
    }
}

/// Nominal goal `G` and nominal path `Z` on the resampled grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalStats {
    pub goal: Vec<f64>,
    pub path: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    /// Unscaled terms; `total = c*action + h*goal + q*path + lambda*count`.
    pub action: f64,
    pub goal: f64,
    pub path: f64,
    pub count: f64,
}

/// Interpolation stencil: for each of the `len` output rows, the lower
/// source index and the fraction towards the next one.
fn resample_stencil(horizon: usize, len: usize) -> Vec<(usize, f64)> {
    let last = horizon - 1;
    (0..len)
        .map(|r| {
            // Integer numerator keeps the identity case (len == horizon) exact.
            let u = (r * last) as f64 / (len - 1) as f64;
            let i0 = (u.floor() as usize).min(last);
            if i0 == last {
                (last, 0.0)
            } else {
                (i0, u - i0 as f64)
            }
        })
        .collect()
}

fn lerp_rows(z: &[Vec<f64>], stencil: &[(usize, f64)]) -> Vec<Vec<f64>> {
    stencil
        .iter()
        .map(|&(i0, f)| {
            if f == 0.0 {
                z[i0].clone()
            } else {
                z[i0].iter().zip(&z[i0 + 1]).map(|(a, b)| (1.0 - f) * a + f * b).collect()
            }
        })
        .collect()
}

/// Linear interpolation of a latent trajectory at `len` evenly spaced
/// normalised times; the first and last rows are copied exactly.
pub fn resample_latent(z: &LatentTrajectory, len: usize) -> Result<Vec<Vec<f64>>> {
    if len < 2 {
        return Err(Error::invalid("resample length must be at least 2"));
    }
    if z.len() < 2 {
        return Err(Error::invalid(format!("trajectory {} too short to resample", z.trajectory_id)));
    }
    Ok(lerp_rows(&z.z, &resample_stencil(z.len(), len)))
}

/// Forward pass over one trajectory.
struct TrajForward {
    acts: Vec<Activations>,
    stencil: Vec<(usize, f64)>,
    resampled: Vec<Vec<f64>>,
}

impl TrajForward {
    fn terminal(&self) -> &[f64] {
        &self.acts.last().expect("non-empty trajectory").latent
    }
}

fn forward_all(params: &EncoderParams, data: &Dataset, len: usize) -> Vec<TrajForward> {
    data.trajectories()
        .par_iter()
        .map(|t| {
            let acts: Vec<Activations> = t.states().iter().map(|s| params.forward(s)).collect();
            let stencil = resample_stencil(t.len(), len);
            let latents: Vec<Vec<f64>> = acts.iter().map(|a| a.latent.clone()).collect();
            let resampled = lerp_rows(&latents, &stencil);
            TrajForward {
                acts,
                stencil,
                resampled,
            }
        })
        .collect()
}

fn nominal_from(forward: &[TrajForward], weights: &[f64]) -> Result<NominalStats> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::numeric(
            "all trajectory weights are zero; the nominal goal and path are undefined (re-initialize the weights)",
        ));
    }
    let d = forward[0].terminal().len();
    let len = forward[0].resampled.len();
    let mut goal = vec![0.0; d];
    let mut path = vec![vec![0.0; d]; len];
    for (f, w) in forward.iter().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        for (g, v) in goal.iter_mut().zip(f.terminal()) {
            *g += w * v;
        }
        for (row, src) in path.iter_mut().zip(&f.resampled) {
            for (p, v) in row.iter_mut().zip(src) {
                *p += w * v;
            }
        }
    }
    goal.iter_mut().for_each(|g| *g /= total);
    path.iter_mut().flatten().for_each(|p| *p /= total);
    Ok(NominalStats { goal, path })
}

fn action_error(t: &Trajectory, f: &TrajForward) -> f64 {
    let sum: f64 = f
        .acts
        .iter()
        .zip(t.actions())
        .map(|(act, a)| act.action.iter().zip(a).map(|(p, y)| (p - y) * (p - y)).sum::<f64>())
        .sum();
    sum / t.len() as f64
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn path_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Per-trajectory unweighted costs.
struct TermCosts {
    action: Vec<f64>,
    goal: Vec<f64>,
    path: Vec<f64>,
}

fn term_costs(data: &Dataset, forward: &[TrajForward], nominal: &NominalStats, len: usize) -> TermCosts {
    let action = data
        .trajectories()
        .iter()
        .zip(forward)
        .map(|(t, f)| action_error(t, f))
        .collect();
    let goal = forward.iter().map(|f| distance(&nominal.goal, f.terminal())).collect();
    let path = forward
        .iter()
        .map(|f| path_distance(&nominal.path, &f.resampled) / len as f64)
        .collect();
    TermCosts { action, goal, path }
}

fn breakdown(cfg: &BedConfig, weights: &[f64], costs: &TermCosts) -> LossBreakdown {
    let n = weights.len() as f64;
    let dot = |v: &[f64]| weights.iter().zip(v).map(|(w, c)| w * c).sum::<f64>();
    let action = dot(&costs.action) / n;
    let goal = dot(&costs.goal);
    let path = dot(&costs.path);
    let gap = cfg.m * n - weights.iter().sum::<f64>();
    let count = gap * gap;
    LossBreakdown {
        total: cfg.c * action + cfg.h_coef * goal + cfg.q * path + cfg.lambda_count * count,
        action,
        goal,
        path,
        count,
    }
}

fn weight_gradient(cfg: &BedConfig, weights: &[f64], costs: &TermCosts) -> Vec<f64> {
    let n = weights.len() as f64;
    let gap = cfg.m * n - weights.iter().sum::<f64>();
    (0..weights.len())
        .map(|i| {
            cfg.c * costs.action[i] / n + cfg.h_coef * costs.goal[i] + cfg.q * costs.path[i]
                - 2.0 * cfg.lambda_count * gap
        })
        .collect()
}

fn param_gradient(
    params: &EncoderParams,
    data: &Dataset,
    forward: &[TrajForward],
    nominal: &NominalStats,
    weights: &[f64],
    cfg: &BedConfig,
) -> Vec<f64> {
    let n = data.len() as f64;
    let len = cfg.resample_len as f64;
    let per_traj: Vec<Option<Vec<f64>>> = data
        .trajectories()
        .par_iter()
        .zip(forward)
        .zip(weights)
        .map(|((t, f), &w)| {
            if w == 0.0 {
                return None;
            }
            let mut grad = vec![0.0; params.values().len()];
            let horizon = t.len();
            // Latent-side gradient for every timestep from the goal and path terms.
            let d = nominal.goal.len();
            let mut d_latent = vec![vec![0.0; d]; horizon];
            let g_dist = distance(&nominal.goal, f.terminal());
            if cfg.h_coef != 0.0 && g_dist > 0.0 {
                let scale = cfg.h_coef * w / g_dist;
                for (dl, (gi, gn)) in d_latent[horizon - 1].iter_mut().zip(f.terminal().iter().zip(&nominal.goal)) {
                    *dl += scale * (gi - gn);
                }
            }
            let p_dist = path_distance(&nominal.path, &f.resampled);
            if cfg.q != 0.0 && p_dist > 0.0 {
                let scale = cfg.q * w / (len * p_dist);
                for ((&(i0, frac), row), nom) in f.stencil.iter().zip(&f.resampled).zip(&nominal.path) {
                    for k in 0..d {
                        let g = scale * (row[k] - nom[k]);
                        d_latent[i0][k] += (1.0 - frac) * g;
                        if frac != 0.0 {
                            d_latent[i0 + 1][k] += frac * g;
                        }
                    }
                }
            }
            let a_scale = cfg.c * w * 2.0 / (n * horizon as f64);
            for (step, ((s, a), act)) in t.states().iter().zip(t.actions()).zip(&f.acts).enumerate() {
                let d_action: Vec<f64> = act.action.iter().zip(a).map(|(p, y)| a_scale * (p - y)).collect();
                let dl = &d_latent[step];
                let any_latent = dl.iter().any(|v| *v != 0.0);
                params.backward(s, act, Some(&d_action), any_latent.then_some(dl.as_slice()), &mut grad);
            }
            Some(grad)
        })
        .collect();
    let mut total = vec![0.0; params.values().len()];
    for g in per_traj.into_iter().flatten() {
        for (t, v) in total.iter_mut().zip(&g) {
            *t += v;
        }
    }
    total
}

fn check_inputs(params: &EncoderParams, weights: &[f64], data: &Dataset, cfg: &BedConfig) -> Result<()> {
    cfg.validate()?;
    if weights.len() != data.len() {
        return Err(Error::invalid(format!(
            "{} weights for {} trajectories",
            weights.len(),
            data.len()
        )));
    }
    if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::invalid("weights must lie in [0, 1]"));
    }
    if params.dims().state != data.state_dim() || params.dims().action != data.action_dim() {
        return Err(Error::invalid("encoder dimensions do not match the dataset"));
    }
    Ok(())
}

/// Nominal goal and path induced by `params` and `weights`.
pub fn nominal_stats(params: &EncoderParams, weights: &[f64], data: &Dataset, cfg: &BedConfig) -> Result<NominalStats> {
    check_inputs(params, weights, data, cfg)?;
    nominal_from(&forward_all(params, data, cfg.resample_len), weights)
}

/// Value of the objective, with `G` and `Z` computed from the same params and weights.
pub fn compute_bed_loss(
    params: &EncoderParams,
    weights: &[f64],
    data: &Dataset,
    cfg: &BedConfig,
) -> Result<LossBreakdown> {
    check_inputs(params, weights, data, cfg)?;
    let forward = forward_all(params, data, cfg.resample_len);
    let nominal = nominal_from(&forward, weights)?;
    Ok(breakdown(cfg, weights, &term_costs(data, &forward, &nominal, cfg.resample_len)))
}

/// Objective with `G` and `Z` frozen, as seen by one gradient step.
pub struct BedObjective<'a> {
    data: &'a Dataset,
    weights: Vec<f64>,
    cfg: BedConfig,
    nominal: NominalStats,
}

impl<'a> BedObjective<'a> {
    /// Freezes the nominal statistics at `params`.
    pub fn new(params: &EncoderParams, weights: &[f64], data: &'a Dataset, cfg: &BedConfig) -> Result<Self> {
        let nominal = nominal_stats(params, weights, data, cfg)?;
        Ok(Self::with_nominal(data, weights, cfg, nominal))
    }

    pub fn with_nominal(data: &'a Dataset, weights: &[f64], cfg: &BedConfig, nominal: NominalStats) -> Self {
        Self {
            data,
            weights: weights.to_vec(),
            cfg: cfg.clone(),
            nominal,
        }
    }

    pub fn nominal(&self) -> &NominalStats {
        &self.nominal
    }

    pub fn breakdown(&self, params: &EncoderParams) -> LossBreakdown {
        let forward = forward_all(params, self.data, self.cfg.resample_len);
        breakdown(
            &self.cfg,
            &self.weights,
            &term_costs(self.data, &forward, &self.nominal, self.cfg.resample_len),
        )
    }

    /// Gradient w.r.t. the trajectory weights at `params`.
    pub fn weight_gradient(&self, params: &EncoderParams) -> Vec<f64> {
        let forward = forward_all(params, self.data, self.cfg.resample_len);
        let costs = term_costs(self.data, &forward, &self.nominal, self.cfg.resample_len);
        weight_gradient(&self.cfg, &self.weights, &costs)
    }
}

impl Objective for BedObjective<'_> {
    fn value(&self, params: &EncoderParams) -> Result<f64> {
        Ok(self.breakdown(params).total)
    }

    fn value_and_gradient(&self, params: &EncoderParams) -> Result<(f64, Vec<f64>)> {
        let forward = forward_all(params, self.data, self.cfg.resample_len);
        let costs = term_costs(self.data, &forward, &self.nominal, self.cfg.resample_len);
        let value = breakdown(&self.cfg, &self.weights, &costs).total;
        let grad = param_gradient(params, self.data, &forward, &self.nominal, &self.weights, &self.cfg);
        Ok((value, grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct BedOutcome {
    pub params: EncoderParams,
    pub weights: TrajectoryWeights,
    pub log: Vec<EpochLog>,
}

fn first_non_finite(b: &LossBreakdown) -> Option<&'static str> {
    [
        ("action", b.action),
        ("goal", b.goal),
        ("path", b.path),
        ("count", b.count),
        ("total", b.total),
    ]
    .into_iter()
    .find(|(_, v)| !v.is_finite())
    .map(|(n, _)| n)
}

/// Runs the full stage-one optimisation. Deterministic for a given `cfg.seed`.
pub fn train_bed(data: &Dataset, cfg: &BedConfig) -> Result<BedOutcome> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(Error::invalid("weight learning needs at least two trajectories"));
    }
    let input = if cfg.standardize {
        let states = data.iter().flat_map(|t| t.states().iter().map(|s| (s.as_slice(), 1.0)));
        Standardizer::fit(states, data.state_dim())
    } else {
        Standardizer::identity(data.state_dim())
    };
    let scaled;
    let data = if cfg.standardize {
        let trajs = data
            .iter()
            .map(|t| {
                let states = t.states().iter().map(|s| input.apply(s)).collect();
                Trajectory::new(t.id(), states, t.actions().to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        scaled = Dataset::new(trajs)?;
        &scaled
    } else {
        data
    };
    let dims = Dims::new(data.state_dim(), cfg.hidden, cfg.latent, data.action_dim());
    let mut params = EncoderParams::init(dims, cfg.seed);
    let mut weights = vec![cfg.m; data.len()];
    let mut param_opt = Momentum::new(dims.param_count(), cfg.step_size, cfg.momentum);
    let mut weight_opt = Momentum::new(data.len(), cfg.weight_step_size, cfg.momentum);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let forward = forward_all(&params, data, cfg.resample_len);
        let nominal = nominal_from(&forward, &weights)?;
        let costs = term_costs(data, &forward, &nominal, cfg.resample_len);
        let loss = breakdown(cfg, &weights, &costs);
        if let Some(term) = first_non_finite(&loss) {
            return Err(Error::numeric(format!("{term} term became non-finite at epoch {epoch}")));
        }
        log.push(EpochLog { epoch, loss });

        let g_params = param_gradient(&params, data, &forward, &nominal, &weights, cfg);
        let g_weights = weight_gradient(cfg, &weights, &costs);
        param_opt.step(params.values_mut(), &g_params);
        weight_opt.step(&mut weights, &g_weights);
        for w in &mut weights {
            *w = w.clamp(0.0, 1.0);
        }
        if params.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("network parameters diverged at epoch {epoch}")));
        }
    }

    input.fold_into_input(&mut params);
    let ids = data.iter().map(|t| t.id().to_owned()).collect();
    Ok(BedOutcome {
        params,
        weights: TrajectoryWeights::new(ids, weights)?,
        log,
    })
}

pub fn save_loss_log<P: AsRef<Path>>(log: &[EpochLog], path: P) -> Result<()> {
    let rows: Vec<Vec<String>> = log
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                fmt_real(e.loss.total),
                fmt_real(e.loss.action),
                fmt_real(e.loss.goal),
                fmt_real(e.loss.path),
                fmt_real(e.loss.count),
            ]
        })
        .collect();
    csvio::write_csv(path, &["epoch", "total", "action", "goal", "path", "count"], &rows)
}
