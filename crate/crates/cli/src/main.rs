//! `gib`: command-line pipeline for curating demonstrations.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use gib_core::baselines::{detector_mask, load_features, save_features, segment_features, Detector, DEFAULT_NEIGHBORS};
use gib_core::bed::{save_loss_log, train_bed, BedConfig, TrajectoryWeights};
use gib_core::dataset::{load_dataset, save_mask, SubtaskSegmentation};
use gib_core::encoder::{encode_dataset, EncoderParams};
use gib_core::pipeline::{curate, markdown_report, save_sweep, sweep_means, sweep_rho, CurationConfig};
use gib_core::plot::{sweep_svg, trace_svg};
use gib_core::policy::{as_controller, save_eval_report, save_policy_log, train_policy, EvalRow, PolicyConfig, StepWeights};
use gib_core::scoring::{build_mask, fit_all_subtasks, load_traces, save_traces, score_subtasks, ScoreTable, ScoringConfig};
use gib_core::segmentation::{
    load_boundaries, save_segmentations, segment_dataset, segment_dataset_from_annotations, HeuristicConfig,
};
use gib_core::synthgym::{evaluate_policy, generate_dataset, ErrorSpec, Scenario, DEFAULT_HORIZON, DEFAULT_NOISE};

#[derive(Parser)]
#[command(name = "gib", version, about = "Curate mixed-quality demonstrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Gib,
    Lof,
    Knn,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground-truth labels.
    Gen {
        #[arg(long)]
        scenario: Scenario,
        #[arg(long)]
        good: usize,
        #[arg(long)]
        bad: usize,
        /// Comma-separated `kind[:magnitude[:fraction]]` entries.
        #[arg(long, default_value = "")]
        errors: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_NOISE)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn trajectory weights and the latent encoder.
    TrainBed {
        #[arg(long)]
        data: PathBuf,
        /// JSON weight-learning config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        m: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split trajectories into subtasks.
    Segment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Boundaries CSV to use instead of the heuristic.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, default_value_t = HeuristicConfig::default().height_threshold)]
        height_threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every subtask against Gaussians fitted on good trajectories.
    Score {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        segs: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// JSON scoring config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mask the `rho` most deviant subtasks.
    Mask {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        rho: usize,
        #[arg(long, value_enum, default_value = "gib")]
        method: Method,
        /// Segment features for the baselines; defaults to `features.csv`
        /// next to the score table.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_NEIGHBORS)]
        neighbors: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a behaviour cloning policy, optionally on masked data.
    TrainPolicy {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, requires = "segs")]
        mask: Option<PathBuf>,
        /// Boundaries the mask refers to.
        #[arg(long)]
        segs: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// JSON policy config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out a policy in the simulator.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        scenario: Scenario,
        #[arg(long, default_value_t = 50)]
        rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_HORIZON)]
        horizon: usize,
        /// Label written to the `method` column.
        #[arg(long, default_value = "policy")]
        method: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot one trajectory's deviation trace as SVG.
    PlotTrace {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        traj: String,
        #[arg(long)]
        segs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Policy success as a function of the pruning budget (CSV and SVG).
    SweepRho {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        rhos: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long, default_value = "drawer3")]
        scenario: Scenario,
        #[arg(long, default_value_t = 50)]
        rollouts: usize,
        /// JSON curation config (`bed`, `segmentation`, `scoring`).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        policy_config: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarise the artifacts of a run directory as markdown.
    Report {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Bad command-line input that clap cannot catch.
#[derive(Debug)]
struct Invalid(String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", p.display())))
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn segmentations(
    data: &gib_core::dataset::Dataset,
    boundaries: &Path,
    k: usize,
) -> Result<Vec<SubtaskSegmentation>> {
    Ok(segment_dataset_from_annotations(data, &load_boundaries(boundaries)?, k)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            scenario,
            good,
            bad,
            errors,
            seed,
            noise,
            out,
        } => {
            let specs = if errors.trim().is_empty() {
                Vec::new()
            } else {
                ErrorSpec::parse_list(&errors)?
            };
            let g = generate_dataset(scenario, good, bad, &specs, noise, seed)?;
            g.save(&out)?;
            let k = scenario.k_expected();
            let segs = g
                .data
                .data()
                .iter()
                .zip(&g.boundaries)
                .map(|(t, b)| SubtaskSegmentation::new(t.id(), b.clone(), t.len(), k))
                .collect::<gib_core::Result<Vec<_>>>()?;
            save_segmentations(&segs, out.join("annotations.csv"))?;
        }
        Command::TrainBed {
            data,
            config,
            seed,
            epochs,
            m,
            out,
        } => {
            let mut cfg: BedConfig = read_config(config.as_deref())?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.m = m.unwrap_or(cfg.m);
            let data = load_dataset(&data)?.into_unlabeled();
            let outcome = train_bed(&data, &cfg)?;
            create_dir(&out)?;
            outcome.params.save(out.join("encoder.bin"))?;
            outcome.weights.save(out.join("weights.csv"))?;
            save_loss_log(&outcome.log, out.join("bed_loss.csv"))?;
        }
        Command::Segment {
            data,
            k,
            annotations,
            height_threshold,
            out,
        } => {
            let data = load_dataset(&data)?.into_unlabeled();
            let segs = match annotations {
                Some(a) => segmentations(&data, &a, k)?,
                None => {
                    let cfg = HeuristicConfig {
                        k_expected: k,
                        height_threshold,
                        ..HeuristicConfig::default()
                    };
                    segment_dataset(&data, &cfg)?
                }
            };
            save_segmentations(&segs, &out)?;
        }
        Command::Score {
            data,
            encoder,
            weights,
            segs,
            k,
            config,
            out,
        } => {
            let cfg: ScoringConfig = read_config(config.as_deref())?;
            let data = load_dataset(&data)?.into_unlabeled();
            let params = EncoderParams::load(&encoder)?;
            let weights = TrajectoryWeights::load(&weights)?;
            let segs = segmentations(&data, &segs, k)?;
            let latents = encode_dataset(&params, &data)?;
            let gaussians = fit_all_subtasks(&latents, &segs, &weights, &cfg)?;
            let (table, traces) = score_subtasks(&latents, &segs, &gaussians)?;
            create_dir(&out)?;
            table.save(out.join("scores.csv"))?;
            save_traces(&traces, out.join("traces.csv"))?;
            save_features(&segment_features(&latents, &segs)?, out.join("features.csv"))?;
        }
        Command::Mask {
            scores,
            rho,
            method,
            features,
            neighbors,
            out,
        } => {
            let table = ScoreTable::load(&scores)?;
            let mask = match method {
                Method::Gib => build_mask(&table, rho)?,
                Method::Lof | Method::Knn => {
                    let detector = if matches!(method, Method::Lof) {
                        Detector::Lof
                    } else {
                        Detector::Knn
                    };
                    let path = features.unwrap_or_else(|| scores.with_file_name("features.csv"));
                    let features = load_features(&path)?;
                    let k = table.rows.iter().map(|r| r.subtask_index).max().unwrap_or(0);
                    detector_mask(&features, k, detector, neighbors, rho)?
                }
            };
            save_mask(&mask, &out)?;
        }
        Command::TrainPolicy {
            data,
            mask,
            segs,
            k,
            config,
            seed,
            epochs,
            out,
        } => {
            let mut cfg: PolicyConfig = read_config(config.as_deref())?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            let data = load_dataset(&data)?.into_unlabeled();
            let weights = match (mask, segs) {
                (Some(m), Some(s)) => {
                    let segs = segmentations(&data, &s, k)?;
                    StepWeights::from_mask(&data, &segs, &gib_core::dataset::load_mask(&m)?)?
                }
                (None, _) => StepWeights::uniform(&data),
                (Some(_), None) => return Err(invalid("--mask needs --segs")),
            };
            let outcome = train_policy(&data, &weights, &cfg)?;
            create_dir(&out)?;
            outcome.params.save(out.join("policy.bin"))?;
            save_policy_log(&outcome.log, out.join("policy_loss.csv"))?;
        }
        Command::Eval {
            policy,
            scenario,
            rollouts,
            seed,
            horizon,
            method,
            out,
        } => {
            let params = EncoderParams::load(&policy)?;
            let rates = evaluate_policy(&as_controller(&params), scenario, rollouts, horizon, seed)?;
            save_eval_report(&[EvalRow { method, rates, seed }], &out)?;
        }
        Command::PlotTrace { trace, traj, segs, out } => {
            let traces = load_traces(&trace)?;
            let t = traces
                .iter()
                .find(|t| t.trajectory_id == traj)
                .ok_or_else(|| invalid(format!("no trace for trajectory {traj}")))?;
            let boundaries = load_boundaries(&segs)?.remove(&traj).unwrap_or_default();
            let svg = trace_svg(t, &boundaries)?;
            fs::write(&out, svg).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::SweepRho {
            data,
            rhos,
            seeds,
            scenario,
            rollouts,
            config,
            policy_config,
            annotations,
            out,
        } => {
            let cfg: CurationConfig = read_config(config.as_deref())?;
            let policy: PolicyConfig = read_config(policy_config.as_deref())?;
            let data = load_dataset(&data)?.into_unlabeled();
            let annotations = annotations.map(load_boundaries).transpose()?;
            let curation = curate(&data, &cfg, annotations.as_ref())?;
            let points = sweep_rho(&data, &curation, &rhos, &seeds, &policy, scenario, rollouts)?;
            save_sweep(&points, &out)?;
            let svg = sweep_svg(&sweep_means(&points))?;
            let svg_path = out.with_extension("svg");
            fs::write(&svg_path, svg).with_context(|| format!("writing {}", svg_path.display()))?;
        }
        Command::Report { dir, out } => {
            let md = markdown_report(&dir)?;
            fs::write(&out, md).with_context(|| format!("writing {}", out.display()))?;
        }
    }
    Ok(())
}

/// 3 for bad input, 4 for numeric failure, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<gib_core::Error>() {
            return match e {
                gib_core::Error::Io { .. } => 1,
                gib_core::Error::Parse { .. } | gib_core::Error::Validation(_) => 3,
                gib_core::Error::Numeric(_) => 4,
            };
        }
        if cause.is::<Invalid>() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", msg.join(": "));
            ExitCode::from(exit_code(&e))
        }
    }
}
