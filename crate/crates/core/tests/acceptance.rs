//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use gib_core::baselines::{lof_scores, Detector};
use gib_core::bed::{save_loss_log, BedConfig, BedObjective, TrajectoryWeights};
use gib_core::dataset::{save_mask, Dataset, Trajectory};
use gib_core::encoder::{grad_check, Dims, EncoderParams};
use gib_core::linalg::SquareMatrix;
use gib_core::pipeline::{
    curate, detection_quality, save_sweep, sweep_rho, train_and_evaluate, weight_accuracy, Curation, CurationConfig,
};
use gib_core::plot::{sweep_svg, trace_svg};
use gib_core::policy::{
    as_controller, save_eval_report, save_policy_log, train_policy, BcObjective, EvalRow, PolicyConfig, StepWeights,
};
use gib_core::scoring::{
    build_mask, fit_gaussian, mahalanobis, save_traces, ScoreRow, ScoreTable, ScoringConfig, SubtaskGaussian,
};
use gib_core::segmentation::{save_segmentations, segment_from_annotation};
use gib_core::synthgym::{
    evaluate_policy, generate_dataset, ErrorSpec, Generated, Scenario, SuccessRates, Window, DEFAULT_HORIZON,
    DEFAULT_NOISE,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [0, 1, 2];
const ROLLOUTS: usize = 50;
const RHO: usize = 12;
const SWEEP: [usize; 5] = [0, 6, 12, 18, 24];

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(budget: Duration, start: Instant, detail: String) -> Outcome {
    let took = start.elapsed();
    check(took < budget, format!("{detail}; {:.1}s of {}s", took.as_secs_f64(), budget.as_secs()))
}

fn curation_config(m: f64, seed: u64) -> CurationConfig {
    CurationConfig {
        bed: BedConfig { m, seed, ..BedConfig::default() },
        ..CurationConfig::default()
    }
}

fn generate(scenario: Scenario, good: usize, bad: usize, errors: &str, seed: u64) -> Generated {
    let errors = ErrorSpec::parse_list(errors).expect("error list");
    generate_dataset(scenario, good, bad, &errors, DEFAULT_NOISE, seed).expect("generation")
}

fn random_data(seed: u64, n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ts = (0..n)
        .map(|i| {
            let len = rng.random_range(9..13);
            let states = (0..len).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let actions = (0..len).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            Trajectory::new(format!("t{i}"), states, actions).unwrap()
        })
        .collect();
    Dataset::new(ts).unwrap()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in SEEDS {
        let data = random_data(seed, 4);
        let params = EncoderParams::init(Dims::new(8, 16, 4, 3), seed + 100);
        let cfg = BedConfig { resample_len: 6, ..BedConfig::default() };
        let bed = BedObjective::new(&params, &[0.9, 0.3, 0.6, 1.0], &data, &cfg).map_err(|e| e.to_string())?;
        worst = worst.max(grad_check(&params, &bed, seed).map_err(|e| e.to_string())?);

        let tw = TrajectoryWeights::new(
            data.iter().map(|t| t.id().to_owned()).collect(),
            vec![1.0, 0.0, 1.0, 1.0],
        )
        .unwrap();
        let by_traj = StepWeights::from_trajectory_weights(&data, &tw).unwrap();
        let segs: Vec<_> = data.iter().map(|t| segment_from_annotation(t, vec![3, 6], 3).unwrap()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = segs
            .iter()
            .flat_map(|s| {
                (1..=3)
                    .map(|j| ScoreRow {
                        trajectory_id: s.trajectory_id().to_owned(),
                        subtask_index: j,
                        mean_score: Some(rng.random_range(0.0..5.0)),
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let mask = build_mask(&ScoreTable::new(rows).unwrap(), 4).unwrap();
        let by_mask = StepWeights::from_mask(&data, &segs, &mask).unwrap();
        for w in [&by_traj, &by_mask] {
            let bc = BcObjective::new(&data, w).map_err(|e| e.to_string())?;
            worst = worst.max(grad_check(&params, &bc, seed).map_err(|e| e.to_string())?);
        }
    }
    let ok = worst < 1e-4;
    within(Duration::from_secs(30), start, format!("max relative error {worst:.2e}")).and_then(|d| check(ok, d))
}

fn separation(scenario: Scenario, good: usize, bad: usize, m: f64, strict_groups: bool) -> Outcome {
    let start = Instant::now();
    let mut accs = Vec::new();
    let mut grouped = true;
    for seed in SEEDS {
        let g = generate(scenario, good, bad, "wrong-goal", seed);
        let cfg = BedConfig { m, seed, ..BedConfig::default() };
        let out = gib_core::bed::train_bed(g.data.data(), &cfg).map_err(|e| e.to_string())?;
        let truth = g.truth_rows();
        accs.push(weight_accuracy(&out.weights, &truth).map_err(|e| e.to_string())?);
        if strict_groups {
            let binary = out.weights.binary();
            let modes_ok = (0..2).all(|mode| {
                truth
                    .iter()
                    .zip(&binary)
                    .zip(&g.modes)
                    .filter(|((t, _), md)| t.good && **md == mode)
                    .all(|((_, b), _)| *b)
            });
            let bad_ok = truth.iter().zip(&binary).filter(|(t, _)| !t.good).all(|(_, b)| !*b);
            grouped &= modes_ok && bad_ok;
        }
    }
    let ok = accs.iter().all(|a| *a >= 0.9) && (strict_groups || accs.iter().any(|a| *a == 1.0)) && grouped;
    let detail = format!("accuracy per seed {accs:?}, modes and corrupted grouped: {grouped}");
    within(Duration::from_secs(180), start, detail).and_then(|d| check(ok, d))
}

/// Criterion-4 dataset for one seed, curated.
struct Corrupted {
    seed: u64,
    generated: Generated,
    curation: Curation,
}

const CORRUPT_M: f64 = 0.6;

fn corrupted_runs() -> (Vec<Corrupted>, Duration) {
    let start = Instant::now();
    let runs = SEEDS
        .iter()
        .map(|&seed| {
            let generated = generate(
                Scenario::Drawer3,
                18,
                12,
                "corrupt-subtask-1,corrupt-subtask-2,corrupt-subtask-3",
                seed,
            );
            let curation = curate(generated.data.data(), &curation_config(CORRUPT_M, seed), None).expect("curation");
            Corrupted { seed, generated, curation }
        })
        .collect();
    (runs, start.elapsed())
}

fn detection(runs: &[Corrupted], took: Duration) -> Outcome {
    let start = Instant::now();
    let mut pr = Vec::new();
    for r in runs {
        let mask = r.curation.mask(RHO).map_err(|e| e.to_string())?;
        let d = detection_quality(&mask, &r.generated.truth_rows());
        pr.push((d.precision(), d.recall()));
    }
    let ok = pr.iter().all(|(p, r)| *p >= 0.8 && *r >= 0.8);
    let elapsed = took + start.elapsed();
    let detail = format!("(precision, recall) per seed {pr:.2?}; {:.1}s of 180s", elapsed.as_secs_f64());
    check(ok && elapsed < Duration::from_secs(180), detail)
}

fn mean_full(rates: &[SuccessRates]) -> f64 {
    rates.iter().map(|r| r.full).sum::<f64>() / rates.len() as f64
}

fn downstream(runs: &[Corrupted]) -> (Outcome, Vec<f64>) {
    let start = Instant::now();
    let policy = PolicyConfig::default();
    let (mut unmasked, mut gib, mut lof) = (Vec::new(), Vec::new(), Vec::new());
    let mut sweep: Vec<Vec<f64>> = vec![Vec::new(); SWEEP.len()];
    for r in runs {
        let data = r.generated.data.data();
        let cfg = PolicyConfig { seed: r.seed, ..policy.clone() };
        let run = |w: &StepWeights| train_and_evaluate(data, w, &cfg, Scenario::Drawer3, ROLLOUTS, r.seed).expect("policy");
        unmasked.push(run(&StepWeights::uniform(data)));
        let lof_mask = r.curation.baseline_mask(Detector::Lof, 5, RHO).expect("lof mask");
        lof.push(run(&StepWeights::from_mask(data, &r.curation.segs, &lof_mask).unwrap()));
        for (slot, &rho) in SWEEP.iter().enumerate() {
            let mask = r.curation.mask(rho).expect("mask");
            let rates = run(&StepWeights::from_mask(data, &r.curation.segs, &mask).unwrap());
            if rho == RHO {
                gib.push(rates.clone());
            }
            sweep[slot].push(rates.full);
        }
    }
    let (u, g, l) = (mean_full(&unmasked), mean_full(&gib), mean_full(&lof));
    let ok = g - u >= 0.05 && g >= l - 0.05;
    let detail = format!("full success unmasked {u:.3}, GiB {g:.3}, LOF {l:.3}");
    let means = sweep.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    let outcome = within(Duration::from_secs(600), start, detail).and_then(|d| check(ok, d));
    (outcome, means)
}

fn sweep_shape(means: &[f64]) -> Outcome {
    let at = |rho: usize| means[SWEEP.iter().position(|r| *r == rho).unwrap()];
    let ok = at(RHO) >= at(0) && at(RHO) >= at(24);
    let pairs: Vec<String> = SWEEP.iter().zip(means).map(|(r, m)| format!("{r}: {m:.3}")).collect();
    check(ok, format!("mean full success by rho {{{}}}", pairs.join(", ")))
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    num / den
}

fn recovery() -> Outcome {
    let (mut agree, mut total) = (0, 0);
    let mut worst = Vec::new();
    for seed in SEEDS {
        let g = generate(Scenario::Drawer3, 20, 4, "wrong-path", seed);
        let c = curate(g.data.data(), &curation_config(0.8, seed), None).map_err(|e| e.to_string())?;
        for (i, windows) in g.windows.iter().enumerate() {
            for (kind, range) in windows {
                let pts: Vec<(f64, f64)> = c.traces[i]
                    .records
                    .iter()
                    .filter(|r| range.contains(&r.t))
                    .map(|r| (r.t as f64, r.distance))
                    .collect();
                let s = slope(&pts);
                let right = match kind {
                    Window::Deviation => s > 0.0,
                    Window::Recovery => s < 0.0,
                };
                total += 1;
                agree += usize::from(right);
                if !right {
                    worst.push(format!("seed {seed} traj {i} {kind:?} slope {s:.3}"));
                }
            }
        }
    }
    check(
        total > 0 && agree == total,
        format!("{agree}/{total} windows with the expected slope sign {worst:?}"),
    )
}

/// Gauss-Jordan inverse with partial pivoting.
fn explicit_inverse(a: &SquareMatrix) -> Vec<Vec<f64>> {
    let n = a.dim();
    let mut m: Vec<Vec<f64>> = a
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, mut r)| {
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let p = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, p);
        let d = m[col][col];
        m[col].iter_mut().for_each(|v| *v /= d);
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                let pivot = m[col].clone();
                m[r].iter_mut().zip(&pivot).for_each(|(v, q)| *v -= f * q);
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> SquareMatrix {
    let b: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let rows: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| (0..d).map(|k| b[i][k] * b[j][k]).sum::<f64>() + if i == j { 0.5 } else { 0.0 })
                .collect()
        })
        .collect();
    SquareMatrix::from_rows(&rows).unwrap()
}

/// Textbook LOF over all pairs, summing in index order.
fn brute_lof(points: &[Vec<f64>], k: usize) -> Vec<f64> {
    let n = points.len();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let kdist: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist(&points[i], &points[j])).collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect();
    let hood = |i: usize| -> Vec<usize> {
        (0..n).filter(|&j| j != i && dist(&points[i], &points[j]) <= kdist[i]).collect()
    };
    let lrd: Vec<f64> = (0..n)
        .map(|i| {
            let h = hood(i);
            let mut reach = 0.0;
            for &j in &h {
                reach += dist(&points[i], &points[j]).max(kdist[j]);
            }
            h.len() as f64 / reach
        })
        .collect();
    (0..n)
        .map(|i| {
            let h = hood(i);
            let mut s = 0.0;
            for &j in &h {
                s += lrd[j];
            }
            s / h.len() as f64 / lrd[i]
        })
        .collect()
}

fn oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    let mut maha_err = 0.0f64;
    for d in 1..=6 {
        let sigma = random_spd(&mut rng, d);
        let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let inv = explicit_inverse(&sigma);
        let g = SubtaskGaussian::new(1, mu.clone(), sigma, 10).unwrap();
        for _ in 0..20 {
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let diff: Vec<f64> = z.iter().zip(&mu).map(|(a, b)| a - b).collect();
            let q: f64 = (0..d).map(|i| (0..d).map(|j| diff[i] * inv[i][j] * diff[j]).sum::<f64>()).sum();
            maha_err = maha_err.max((mahalanobis(&z, &g).unwrap() - q.sqrt()).abs());
        }
    }

    let mut lof_exact = true;
    for k in [1, 3, 5] {
        let points: Vec<Vec<f64>> = (0..40).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        lof_exact &= lof_scores(&points, k).unwrap() == brute_lof(&points, k);
    }

    // Samples (0,0), (2,0), (0,2), (2,2): mean (1,1), covariance (4/3) I,
    // trace / d = 4/3, so the regularised covariance is (4/3 + floor) I.
    let cfg = ScoringConfig::default();
    let samples = [[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]];
    let refs: Vec<&[f64]> = samples.iter().map(|s| s.as_slice()).collect();
    let g = fit_gaussian(&refs, 1, &cfg).unwrap();
    let mut fit_err = g.mu.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
    for i in 0..2 {
        for j in 0..2 {
            let want = if i == j { 4.0 / 3.0 + cfg.floor } else { 0.0 };
            fit_err = fit_err.max((g.sigma.get(i, j) - want).abs());
        }
    }
    // Anisotropic case computed term by term.
    let samples = [[1.0, 3.0, -1.0], [2.0, 1.0, 0.0], [4.0, 2.0, 1.0], [1.0, 2.0, 2.0], [2.0, 7.0, 0.5]];
    let refs: Vec<&[f64]> = samples.iter().map(|s| s.as_slice()).collect();
    let g = fit_gaussian(&refs, 2, &cfg).unwrap();
    let n = samples.len() as f64;
    let mu: Vec<f64> = (0..3).map(|k| samples.iter().map(|s| s[k]).sum::<f64>() / n).collect();
    let cov = |i: usize, j: usize| samples.iter().map(|s| (s[i] - mu[i]) * (s[j] - mu[j])).sum::<f64>() / (n - 1.0);
    let tr = (0..3).map(|i| cov(i, i)).sum::<f64>() / 3.0;
    for i in 0..3 {
        fit_err = fit_err.max((g.mu[i] - mu[i]).abs());
        for j in 0..3 {
            let shrink = if i == j { cfg.epsilon * tr + cfg.floor } else { 0.0 };
            let want = (1.0 - cfg.epsilon) * cov(i, j) + shrink;
            fit_err = fit_err.max((g.sigma.get(i, j) - want).abs());
        }
    }

    let mut runner = TestRunner::new(Config { cases: 256, failure_persistence: None, ..Config::default() });
    let strategy = proptest::collection::vec((proptest::option::weighted(0.85, 0.0..10.0f64), 1usize..4), 1..40)
        .prop_flat_map(|rows| {
            let present = rows.iter().filter(|r| r.0.is_some()).count();
            (Just(rows), 0..=present)
        });
    let constraint = runner
        .run(&strategy, |(rows, rho)| {
            let table = ScoreTable::new(
                rows.iter()
                    .enumerate()
                    .map(|(i, (s, j))| ScoreRow {
                        trajectory_id: format!("t{i:02}"),
                        subtask_index: *j,
                        mean_score: *s,
                    })
                    .collect(),
            )
            .unwrap();
            let mask = build_mask(&table, rho).unwrap();
            let kept = mask.entries().iter().filter(|e| e.beta).count();
            prop_assert_eq!(kept, mask.present_count() - rho);
            Ok(())
        })
        .is_ok();

    let ok = maha_err <= 1e-8 && lof_exact && fit_err <= 1e-12 && constraint;
    check(
        ok,
        format!(
            "Mahalanobis error {maha_err:.1e}, LOF exact {lof_exact}, Gaussian fit error {fit_err:.1e}, mask constraint {constraint}"
        ),
    )
}

fn run_pipeline(dir: &Path) -> gib_core::Result<()> {
    let g = generate(Scenario::Drawer3, 10, 4, "corrupt-subtask-1,corrupt-subtask-3", 5);
    g.save(dir)?;
    let cfg = CurationConfig {
        bed: BedConfig { m: 0.7, epochs: 80, seed: 5, ..BedConfig::default() },
        ..CurationConfig::default()
    };
    let data = g.data.data();
    let c = curate(data, &cfg, None)?;
    c.bed.params.save(dir.join("encoder.bin"))?;
    c.bed.weights.save(dir.join("weights.csv"))?;
    save_loss_log(&c.bed.log, dir.join("bed_loss.csv"))?;
    save_segmentations(&c.segs, dir.join("segs.csv"))?;
    c.scores.save(dir.join("scores.csv"))?;
    save_traces(&c.traces, dir.join("traces.csv"))?;
    fs::write(dir.join("trace.svg"), trace_svg(&c.traces[0], c.segs[0].boundaries())?).unwrap();
    let mask = c.mask(4)?;
    save_mask(&mask, dir.join("mask_gib.csv"))?;
    save_mask(&c.baseline_mask(Detector::Lof, 5, 4)?, dir.join("mask_lof.csv"))?;
    let policy = PolicyConfig { epochs: 10, seed: 5, ..PolicyConfig::default() };
    let weights = StepWeights::from_mask(data, &c.segs, &mask)?;
    let out = train_policy(data, &weights, &policy)?;
    out.params.save(dir.join("policy.bin"))?;
    save_policy_log(&out.log, dir.join("policy_loss.csv"))?;
    let rates = evaluate_policy(&as_controller(&out.params), Scenario::Drawer3, 4, DEFAULT_HORIZON, 5)?;
    save_eval_report(&[EvalRow { method: "gib".into(), rates, seed: 5 }], dir.join("eval_gib.csv"))?;
    let points = sweep_rho(data, &c, &[0, 4], &[5], &policy, Scenario::Drawer3, 3)?;
    save_sweep(&points, dir.join("sweep.csv"))?;
    let means = gib_core::pipeline::sweep_means(&points);
    fs::write(dir.join("sweep.svg"), sweep_svg(&means)?).unwrap();
    fs::write(dir.join("report.md"), gib_core::pipeline::markdown_report(dir)?).unwrap();
    Ok(())
}

fn listing(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        run_pipeline(d).map_err(|e| e.to_string())?;
    }
    let (fa, fb) = (listing(&a), listing(&b));
    let names = |v: &[PathBuf]| v.iter().map(|p| p.file_name().unwrap().to_owned()).collect::<Vec<_>>();
    if names(&fa) != names(&fb) {
        return Err("artifact listings differ".into());
    }
    let differing: Vec<String> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| fs::read(x).unwrap() != fs::read(y).unwrap())
        .map(|(x, _)| x.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    check(
        differing.is_empty(),
        format!("{} artifacts compared, differing: {differing:?}", fa.len()),
    )
}

fn report(n: usize, outcome: Outcome) -> bool {
    match outcome {
        Ok(d) => {
            println!("criterion {n}: PASS ({d})");
            true
        }
        Err(d) => {
            println!("criterion {n}: FAIL ({d})");
            false
        }
    }
}

fn main() {
    let mut ok = true;
    ok &= report(1, gradients());
    ok &= report(2, separation(Scenario::Drawer3, 24, 8, 0.75, false));
    ok &= report(3, separation(Scenario::Multimodal2, 24, 6, 0.8, true));
    let (runs, took) = corrupted_runs();
    ok &= report(4, detection(&runs, took));
    let (downstream, means) = downstream(&runs);
    ok &= report(5, downstream);
    ok &= report(6, sweep_shape(&means));
    ok &= report(7, recovery());
    ok &= report(8, oracles());
    ok &= report(9, determinism());
    if !ok {
        std::process::exit(1);
    }
}
