//! Feedforward latent encoder with an action head, and its hand-written
//! reverse-mode gradients.
//!
//! Layout: `state -> hidden -> latent` (the encoder) and
//! `latent -> hidden -> action` (the head). Every layer but the action output
//! uses `tanh`, so latents live in `(-1, 1)^d`.
//!
//! All parameters sit in one flat vector, layer by layer, each layer storing
//! its weight matrix row-major (`out x in`) followed by its bias. That is also
//! the order of the binary parameter file.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

const MAGIC: &[u8; 7] = b"GIBENC1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub state: usize,
    pub hidden: usize,
    pub latent: usize,
    pub action: usize,
}

impl Dims {
    pub fn new(state: usize, hidden: usize, latent: usize, action: usize) -> Self {
        Self {
            state,
            hidden,
            latent,
            action,
        }
    }

    /// `(fan_in, fan_out)` of the four dense layers.
    pub fn layers(&self) -> [(usize, usize); 4] {
        [
            (self.state, self.hidden),
            (self.hidden, self.latent),
            (self.latent, self.hidden),
            (self.hidden, self.action),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }

    fn offsets(&self) -> [usize; 4] {
        let mut out = [0; 4];
        let mut acc = 0;
        for (k, (i, o)) in self.layers().iter().enumerate() {
            out[k] = acc;
            acc += i * o + o;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    dims: Dims,
    values: Vec<f64>,
}

/// Per-sample intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    pub hidden_in: Vec<f64>,
    pub latent: Vec<f64>,
    pub hidden_out: Vec<f64>,
    pub action: Vec<f64>,
}

fn dense(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>, squash: bool) {
    let n_in = x.len();
    out.clear();
    out.extend(b.iter().enumerate().map(|(r, bias)| {
        let row = &w[r * n_in..(r + 1) * n_in];
        let s = row.iter().zip(x).fold(*bias, |acc, (wi, xi)| acc + wi * xi);
        if squash {
            s.tanh()
        } else {
            s
        }
    }));
}

impl EncoderParams {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            values: vec![0.0; dims.param_count()],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(dims: Dims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(dims);
        let offsets = dims.offsets();
        for (k, (fan_in, fan_out)) in dims.layers().into_iter().enumerate() {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut p.values[offsets[k]..offsets[k] + fan_in * fan_out] {
                *v = rng.random_range(-a..a);
            }
        }
        p
    }

    pub fn from_values(dims: Dims, values: Vec<f64>) -> Result<Self> {
        if values.len() != dims.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                dims.param_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(Self { dims, values })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Weight matrix (row-major) and bias of dense layer `k` (0..4).
    pub fn layer(&self, k: usize) -> (&[f64], &[f64]) {
        let (i, o) = self.dims.layers()[k];
        let off = self.dims.offsets()[k];
        (&self.values[off..off + i * o], &self.values[off + i * o..off + i * o + o])
    }

    pub fn layer_mut(&mut self, k: usize) -> (&mut [f64], &mut [f64]) {
        let (i, o) = self.dims.layers()[k];
        let off = self.dims.offsets()[k];
        let (w, rest) = self.values[off..off + i * o + o].split_at_mut(i * o);
        (w, rest)
    }

    fn check_state(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.dims.state {
            return Err(Error::invalid(format!(
                "state has dimension {}, encoder expects {}",
                state.len(),
                self.dims.state
            )));
        }
        Ok(())
    }

    /// Latent embedding of one state.
    pub fn encode(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let mut h = Vec::new();
        let mut z = Vec::new();
        let (w, b) = self.layer(0);
        dense(w, b, state, &mut h, true);
        let (w, b) = self.layer(1);
        dense(w, b, &h, &mut z, true);
        Ok(z)
    }

    pub fn predict_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.check_state(state)?;
        Ok(self.forward(state).action)
    }

    /// Full forward pass; the state dimension must already be checked.
    pub fn forward(&self, state: &[f64]) -> Activations {
        let mut acts = Activations {
            hidden_in: Vec::with_capacity(self.dims.hidden),
            latent: Vec::with_capacity(self.dims.latent),
            hidden_out: Vec::with_capacity(self.dims.hidden),
            action: Vec::with_capacity(self.dims.action),
        };
        let (w, b) = self.layer(0);
        dense(w, b, state, &mut acts.hidden_in, true);
        let (w, b) = self.layer(1);
        dense(w, b, &acts.hidden_in, &mut acts.latent, true);
        let (w, b) = self.layer(2);
        dense(w, b, &acts.latent, &mut acts.hidden_out, true);
        let (w, b) = self.layer(3);
        dense(w, b, &acts.hidden_out, &mut acts.action, false);
        acts
    }

    /// Accumulates into `grad` the parameter gradient of a scalar whose
    /// partial derivatives w.r.t. this sample's action output and latent are
    /// `d_action` and `d_latent` (either may be absent).
    pub fn backward(
        &self,
        state: &[f64],
        acts: &Activations,
        d_action: Option<&[f64]>,
        d_latent: Option<&[f64]>,
        grad: &mut [f64],
    ) {
        let dims = self.dims;
        let off = dims.offsets();
        let mut dz = vec![0.0; dims.latent];
        if let Some(da) = d_action {
            // Output layer (identity).
            let (w3, _) = self.layer(3);
            let (h, a) = (dims.hidden, dims.action);
            let mut dh = vec![0.0; h];
            for r in 0..a {
                let g = da[r];
                if g == 0.0 {
                    continue;
                }
                let gw = &mut grad[off[3] + r * h..off[3] + (r + 1) * h];
                for (gwi, hi) in gw.iter_mut().zip(&acts.hidden_out) {
                    *gwi += g * hi;
                }
                grad[off[3] + a * h + r] += g;
                for (dhi, wi) in dh.iter_mut().zip(&w3[r * h..(r + 1) * h]) {
                    *dhi += g * wi;
                }
            }
            // Head hidden layer (tanh).
            let (w2, _) = self.layer(2);
            let d = dims.latent;
            for r in 0..h {
                let y = acts.hidden_out[r];
                let g = dh[r] * (1.0 - y * y);
                let gw = &mut grad[off[2] + r * d..off[2] + (r + 1) * d];
                for (gwi, zi) in gw.iter_mut().zip(&acts.latent) {
                    *gwi += g * zi;
                }
                grad[off[2] + h * d + r] += g;
                for (dzi, wi) in dz.iter_mut().zip(&w2[r * d..(r + 1) * d]) {
                    *dzi += g * wi;
                }
            }
        }
        if let Some(dl) = d_latent {
            for (a, b) in dz.iter_mut().zip(dl) {
                *a += b;
            }
        }
        let (h, d, s) = (dims.hidden, dims.latent, dims.state);
        // Latent layer (tanh).
        let (w1, _) = self.layer(1);
        let mut dh = vec![0.0; h];
        for r in 0..d {
            let y = acts.latent[r];
            let g = dz[r] * (1.0 - y * y);
            if g == 0.0 {
                continue;
            }
            let gw = &mut grad[off[1] + r * h..off[1] + (r + 1) * h];
            for (gwi, hi) in gw.iter_mut().zip(&acts.hidden_in) {
                *gwi += g * hi;
            }
            grad[off[1] + d * h + r] += g;
            for (dhi, wi) in dh.iter_mut().zip(&w1[r * h..(r + 1) * h]) {
                *dhi += g * wi;
            }
        }
        // Encoder hidden layer (tanh).
        for r in 0..h {
            let y = acts.hidden_in[r];
            let g = dh[r] * (1.0 - y * y);
            if g == 0.0 {
                continue;
            }
            let gw = &mut grad[off[0] + r * s..off[0] + (r + 1) * s];
            for (gwi, xi) in gw.iter_mut().zip(state) {
                *gwi += g * xi;
            }
            grad[off[0] + s * h + r] += g;
        }
    }

    /// Product of the Frobenius norms of the encoder's weight matrices: a
    /// Lipschitz constant of `encode` (tanh is 1-Lipschitz).
    pub fn encoder_lipschitz_bound(&self) -> f64 {
        (0..2).map(|k| frobenius(self.layer(k).0)).product()
    }

    /// Same bound for the full state-to-action map.
    pub fn policy_lipschitz_bound(&self) -> f64 {
        (0..4).map(|k| frobenius(self.layer(k).0)).product()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(7 + 16 + 8 * self.values.len());
        out.extend_from_slice(MAGIC);
        for d in [self.dims.state, self.dims.hidden, self.dims.latent, self.dims.action] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 23 || &bytes[..7] != MAGIC {
            return Err(Error::invalid("not an encoder parameter file (bad magic)"));
        }
        let dim = |k: usize| {
            let b = &bytes[7 + 4 * k..11 + 4 * k];
            u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize
        };
        let dims = Dims::new(dim(0), dim(1), dim(2), dim(3));
        if [dims.state, dims.hidden, dims.latent, dims.action].contains(&0) {
            return Err(Error::invalid("encoder dimensions must be positive"));
        }
        let body = &bytes[23..];
        if body.len() != 8 * dims.param_count() {
            return Err(Error::invalid(format!(
                "parameter payload is {} bytes, dims require {}",
                body.len(),
                8 * dims.param_count()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::from_values(dims, values)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn frobenius(w: &[f64]) -> f64 {
    w.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Scalar objective over encoder parameters with an analytic gradient.
pub trait Objective {
    fn value(&self, params: &EncoderParams) -> Result<f64>;
    fn value_and_gradient(&self, params: &EncoderParams) -> Result<(f64, Vec<f64>)>;
}

/// Compares the analytic gradient of `loss` against central finite
/// differences (step `1e-5`) on 64 randomly chosen parameters (all of them
/// when there are fewer). Returns the largest
/// `|analytic - numeric| / max(1e-8, |numeric|)`.
pub fn grad_check(params: &EncoderParams, loss: &dyn Objective, seed: u64) -> Result<f64> {
    const STEP: f64 = 1e-5;
    const SAMPLES: usize = 64;
    let (base, grad) = loss.value_and_gradient(params)?;
    if !base.is_finite() {
        return Err(Error::numeric(format!("loss is not finite: {base}")));
    }
    let n = params.values.len();
    let mut indices: Vec<usize> = (0..n).collect();
    if n > SAMPLES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..SAMPLES {
            let j = rng.random_range(i..n);
            indices.swap(i, j);
        }
        indices.truncate(SAMPLES);
    }
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for &i in &indices {
        let orig = probe.values[i];
        probe.values[i] = orig + STEP;
        let up = loss.value(&probe)?;
        probe.values[i] = orig - STEP;
        let down = loss.value(&probe)?;
        probe.values[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::numeric(format!("loss not finite near parameter {i}")));
        }
        let numeric = (up - down) / (2.0 * STEP);
        let err = (grad[i] - numeric).abs() / numeric.abs().max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Per-dimension affine standardisation.
#[derive(Debug, Clone)]
pub(crate) struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub(crate) fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    /// Weighted moments; near-constant dimensions keep unit scale.
    pub(crate) fn fit<'a>(rows: impl Iterator<Item = (&'a [f64], f64)> + Clone, d: usize) -> Self {
        let total: f64 = rows.clone().map(|(_, w)| w).sum();
        let mut mean = vec![0.0; d];
        for (x, w) in rows.clone() {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += w * v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= total);
        let mut var = vec![0.0; d];
        for (x, w) in rows {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += w * (v - m) * (v - m);
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let sd = (v / total).sqrt();
                if sd > 1e-6 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    /// Rewrites a network trained on standardised inputs to act on raw ones.
    pub(crate) fn fold_into_input(&self, params: &mut EncoderParams) {
        let dims = params.dims();
        let (w, b) = params.layer_mut(0);
        for r in 0..dims.hidden {
            let row = &mut w[r * dims.state..(r + 1) * dims.state];
            for c in 0..dims.state {
                row[c] /= self.scale[c];
                b[r] -= row[c] * self.mean[c];
            }
        }
    }

    /// Rewrites a network trained on standardised targets to emit raw ones.
    pub(crate) fn fold_into_output(&self, params: &mut EncoderParams) {
        let dims = params.dims();
        let (w, b) = params.layer_mut(3);
        for r in 0..dims.action {
            let s = self.scale[r];
            w[r * dims.hidden..(r + 1) * dims.hidden].iter_mut().for_each(|v| *v *= s);
            b[r] = s * b[r] + self.mean[r];
        }
    }
}


/// Per-timestep latents of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrajectory {
    pub trajectory_id: String,
    pub z: Vec<Vec<f64>>,
}

impl LatentTrajectory {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.z.first().map_or(0, Vec::len)
    }
}

pub fn encode_trajectory(params: &EncoderParams, traj: &crate::dataset::Trajectory) -> Result<LatentTrajectory> {
    let z = traj
        .states()
        .iter()
        .map(|s| params.encode(s))
        .collect::<Result<Vec<_>>>()?;
    Ok(LatentTrajectory {
        trajectory_id: traj.id().to_owned(),
        z,
    })
}

pub fn encode_dataset(params: &EncoderParams, data: &crate::dataset::Dataset) -> Result<Vec<LatentTrajectory>> {
    use rayon::prelude::*;
    data.trajectories()
        .par_iter()
        .map(|t| encode_trajectory(params, t))
        .collect()
}
