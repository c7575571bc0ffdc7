//! Curation of mixed-quality robot demonstrations.
//!
//! The pipeline runs in two stages. [`bed`] jointly trains a latent encoder
//! and per-trajectory quality weights by penalising action, goal and path
//! inconsistency. [`scoring`] then fits one Gaussian per subtask to the
//! latents of the trajectories judged good, scores every subtask of every
//! trajectory by its mean Mahalanobis distance, and masks out the `rho`
//! worst. [`policy`] consumes the mask through a subtask-weighted behaviour
//! cloning loss, and [`synthgym`] provides a deterministic pick/place/drawer
//! benchmark with ground-truth corruption labels to check all of it.

pub mod baselines;
pub mod bed;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod linalg;
pub mod optim;
pub mod pipeline;
pub mod plot;
pub mod policy;
pub mod scoring;
pub mod segmentation;
pub mod synthgym;

mod csvio;

pub use error::{Error, Result};
