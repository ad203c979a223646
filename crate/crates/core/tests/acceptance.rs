//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines reach the terminal.
//! `ACCEPTANCE_ONLY=2,5` restricts the run to some criteria.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use delaynet::checkpoint::Checkpoint;
use delaynet::config::RunConfig;
use delaynet::datapipe::{
    average_triples, denormalize, make_windows, normalize_sample, prepare, STD_FLOOR,
};
use delaynet::eval::{ablation_grid, variant_name, AblationConfig};
use delaynet::gradsuite::{run_suite, GRAD_TOL, GRAD_TOL_GABOR};
use delaynet::kernels::KernelFamily;
use delaynet::layers::{CausalConv, FilterBank, FilterBankConfig};
use delaynet::model::{param_count, zero_predictor, DelayNet, DelayNetConfig, FilterPosition};
use delaynet::plantsim::{manifest, simulate, PlantConfig};
use delaynet::probe::{recover_delay, ProbeConfig};
use delaynet::train::{evaluate_mae, fit, forecaster_mae, TrainConfig};
use delaynet::Tensor;

// 1
const GRAD_POINTS: usize = 20;
const GRAD_SECONDS: f64 = 60.0;
// 2
const DELAYS: [usize; 3] = [3, 8, 15];
const PROBE_NOISE: f64 = 0.02;
const PROBE_EPOCHS: usize = 200;
const PROBE_SEEDS: u64 = 10;
const PROBE_MIN_HITS: usize = 8;
const PROBE_TOL_STEPS: f64 = 1.0;
const PROBE_SECONDS: f64 = 300.0;
// 3
const ABLATION_SEEDS: usize = 5;
const ABLATION_EPOCHS: usize = 60;
const ALL_IDENTITY_ZERO_MARGIN: f64 = 0.10;
const ABLATION_SECONDS: f64 = 1800.0;
// 4
const BEAT_ZERO_EPOCHS: usize = 200;
const BEAT_ZERO_RATIO: f64 = 0.5;
const BEAT_ZERO_SECONDS: f64 = 600.0;
// 5
const CAUSAL_TRIALS: usize = 100;
// 6
const ROUND_TRIP_TOL: f64 = 1e-10;
const PIPELINE_SAMPLES: usize = 1000;
// 7
const PARAM_RANGE: (usize, usize) = (8_000, 25_000);

const LR: f64 = 0.01;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn train_cfg(max_epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig { lr: LR, max_epochs, seed, ..Default::default() }
}

fn gradient_integrity() -> delaynet::Result<Outcome> {
    let t0 = Instant::now();
    let results = run_suite(0, GRAD_POINTS)?;
    let secs = t0.elapsed().as_secs_f64();
    let failed: Vec<String> = results.iter().filter(|r| !r.passed()).map(|r| format!("{} {:.2e}", r.name, r.max_rel_error)).collect();
    let worst = results.iter().filter(|r| r.tolerance == GRAD_TOL).map(|r| r.max_rel_error).fold(0.0, f64::max);
    let worst_gabor = results.iter().filter(|r| r.tolerance == GRAD_TOL_GABOR).map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(outcome(
        failed.is_empty() && secs < GRAD_SECONDS,
        format!(
            "{} cases x {GRAD_POINTS} points, max rel {worst:.2e} < {GRAD_TOL:.0e}, gabor {worst_gabor:.2e} < {GRAD_TOL_GABOR:.0e}, {secs:.1}s < {GRAD_SECONDS}s{}",
            results.len(),
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    ))
}

fn delay_recovery() -> delaynet::Result<Outcome> {
    let cfg = ProbeConfig { train: TrainConfig { max_epochs: PROBE_EPOCHS, patience: PROBE_EPOCHS, ..ProbeConfig::default().train }, ..Default::default() };
    let mut pass = true;
    let mut parts = Vec::new();
    for d in DELAYS {
        let plant = PlantConfig { dead_time_steps: d, noise_std: PROBE_NOISE, ..Default::default() };
        let t0 = Instant::now();
        let mut learned = Vec::new();
        for seed in 0..PROBE_SEEDS {
            learned.push(recover_delay(&plant, &cfg, seed)?);
        }
        let secs = t0.elapsed().as_secs_f64();
        let hits = learned.iter().filter(|r| r.within(PROBE_TOL_STEPS)).count();
        pass &= hits >= PROBE_MIN_HITS && secs < PROBE_SECONDS;
        let values: Vec<String> = learned.iter().map(|r| format!("{:.1}", r.learned_delay)).collect();
        parts.push(format!("d={d}: {hits}/{PROBE_SEEDS} within {PROBE_TOL_STEPS} [{}] {secs:.0}s", values.join(" ")));
    }
    Ok(outcome(pass, format!("{} (need >= {PROBE_MIN_HITS}, < {PROBE_SECONDS}s per d)", parts.join("; "))))
}

fn plant_dataset(cfg: &RunConfig) -> delaynet::Result<(delaynet::datapipe::Dataset, DelayNetConfig)> {
    let data = prepare(&simulate(&cfg.plant)?, &manifest(cfg.preprocess.clone()))?;
    let s = &data.train[0];
    let model = cfg.model.resolve(s.n_features(), s.past_steps, s.future_steps, s.n_commands(), s.n_targets())?;
    Ok((data, model))
}

fn ablation_ordering() -> delaynet::Result<Outcome> {
    let cfg = RunConfig::default();
    let (data, model) = plant_dataset(&cfg)?;
    let abl = AblationConfig { trials: ABLATION_SEEDS, exhaustive: false, ..Default::default() };
    let t0 = Instant::now();
    let report = ablation_grid(&model, &data, &abl, &train_cfg(ABLATION_EPOCHS, 0))?;
    let secs = t0.elapsed().as_secs_f64();
    let median = |ids: &[FilterPosition]| report.row(&variant_name(ids)).map(|r| r.stats.median).unwrap_or(f64::NAN);
    let full = median(&[]);
    let all = median(&FilterPosition::ALL);
    let singles: Vec<(FilterPosition, f64)> = FilterPosition::ALL.iter().map(|&p| (p, median(&[p]))).collect();
    let zero = report.zero_mae;
    let ordered = singles.iter().all(|&(_, m)| full < m && m < all);
    let near_zero = (all - zero).abs() <= ALL_IDENTITY_ZERO_MARGIN * zero;
    let singles_txt: Vec<String> = singles.iter().map(|(p, m)| format!("{} {:.3}", p.name(), m / zero)).collect();
    Ok(outcome(
        ordered && near_zero && secs < ABLATION_SECONDS,
        format!(
            "medians / zero over {ABLATION_SEEDS} seeds: full {:.3} < [{}] < all-identity {:.3}; all-identity within {ALL_IDENTITY_ZERO_MARGIN} of zero: {near_zero}; {secs:.0}s < {ABLATION_SECONDS}s",
            full / zero,
            singles_txt.join(", "),
            all / zero
        ),
    ))
}

fn beats_zero() -> delaynet::Result<Outcome> {
    let cfg = RunConfig::default();
    let (data, model) = plant_dataset(&cfg)?;
    let t0 = Instant::now();
    let net = DelayNet::build(&model, 0)?;
    let report = fit(&net, &data.train, &data.val, &train_cfg(BEAT_ZERO_EPOCHS, 0))?;
    let secs = t0.elapsed().as_secs_f64();
    let zero = forecaster_mae(&zero_predictor(&model), &data.val, 64)?;
    let ratio = report.best_val_mae / zero;
    Ok(outcome(
        ratio < BEAT_ZERO_RATIO && secs < BEAT_ZERO_SECONDS,
        format!(
            "best val {:.4} / zero {:.4} = {ratio:.3} < {BEAT_ZERO_RATIO} ({} epochs, best {}), {secs:.0}s < {BEAT_ZERO_SECONDS}s",
            report.best_val_mae,
            zero,
            report.epochs.len(),
            report.best_epoch
        ),
    ))
}

fn causality() -> delaynet::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    for _ in 0..CAUSAL_TRIALS {
        let (b, c, s) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(4..30));
        let conv = CausalConv::new(c, rng.gen_range(1..5), rng.gen_range(1..12), s, &mut rng)?;
        let x: Vec<f64> = (0..b * c * s).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = rng.gen_range(0..s - 1);
        let mut xp = x.clone();
        for (i, v) in xp.iter_mut().enumerate() {
            if i % s > t {
                *v += rng.gen_range(-10.0..10.0);
            }
        }
        let y = conv.forward(&Tensor::new(x, &[b, c, s])?)?.to_vec();
        let yp = conv.forward(&Tensor::new(xp, &[b, c, s])?)?.to_vec();
        let changed = y.iter().zip(&yp).enumerate().any(|(i, (a, b))| i % s <= t && a.to_bits() != b.to_bits());
        violations += usize::from(changed);
    }
    Ok(outcome(violations == 0, format!("{violations} of {CAUSAL_TRIALS} trials changed an output at or before the perturbation")))
}

fn pipeline() -> delaynet::Result<Outcome> {
    let plant = PlantConfig { n_minutes: 60 * 1440, seed: 11, ..Default::default() };
    let mut table = simulate(&plant)?;
    // short holes are interpolated, long ones must drop windows
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..80 {
        let col = rng.gen_range(0..table.columns.len());
        let len = if rng.gen_bool(0.5) { rng.gen_range(1..15) } else { rng.gen_range(30..120) };
        let at = rng.gen_range(1..table.len() - len - 1);
        table.columns[col][at..at + len].iter_mut().for_each(|v| *v = f64::NAN);
    }
    let man = manifest(Default::default());
    let pp = &man.preprocess;
    let data = prepare(&table, &man)?;
    let emitted: Vec<_> = data.train.iter().chain(&data.val).collect();
    let missing = emitted.iter().filter(|s| s.x1.iter().chain(&s.x2).chain(&s.y).any(|v| !v.is_finite())).count();

    let filled = table.interpolate(pp.max_gap_minutes)?;
    let inputs = man.input_columns();
    let names: Vec<&str> = inputs.iter().map(|c| c.name.as_str()).collect();
    let raws = make_windows(&filled, &names, pp.window_minutes, pp.stride_minutes)?;
    let target = inputs.iter().position(|c| c.name == "room_temp").expect("plant target");
    let s = pp.past_steps;
    let mut worst_trip = 0.0f64;
    let mut worst_stat = 0.0f64;
    let mut n = 0;
    for raw in raws.iter().take(PIPELINE_SAMPLES) {
        let sample = normalize_sample(raw, &man)?;
        let want = average_triples(&raw.values[target], pp.average)?;
        for (a, b) in denormalize(&sample.y, &sample)?.iter().zip(&want[s..]) {
            worst_trip = worst_trip.max((a - b).abs());
        }
        for stats in &sample.group_stats {
            let shift = if stats.group == pp.anchor_group { sample.anchor } else { 0.0 };
            let vals: Vec<f64> = inputs
                .iter()
                .enumerate()
                .filter(|(_, c)| c.group == stats.group)
                .flat_map(|(i, _)| sample.x1[i * s..(i + 1) * s].iter().map(move |v| v + shift))
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            worst_stat = worst_stat.max(m.abs());
            if stats.std > STD_FLOOR {
                worst_stat = worst_stat.max((sd - 1.0).abs());
            }
        }
        let k = pp.anchor_steps();
        let anchor = sample.x1[target * s + s - k..target * s + s].iter().map(|v| v + sample.anchor).sum::<f64>() / k as f64;
        worst_stat = worst_stat.max((anchor - sample.anchor).abs());
        n += 1;
    }
    Ok(outcome(
        n == PIPELINE_SAMPLES && missing == 0 && worst_trip < ROUND_TRIP_TOL && worst_stat < ROUND_TRIP_TOL,
        format!(
            "round trip {worst_trip:.1e} < {ROUND_TRIP_TOL:.0e}, group stats {worst_stat:.1e} on {n}/{PIPELINE_SAMPLES} samples, {missing} of {} emitted samples with missing values",
            emitted.len()
        ),
    ))
}

fn counts() -> delaynet::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let feature = FilterBank::new(FilterBankConfig::new(KernelFamily::Gauss, 2), 5, 100, 0, &mut rng)?;
    let y = feature.forward(&Tensor::zeros(&[2, 5, 100]), true)?;
    let per_feature = feature.params.count == 10 && y.shape() == [2, 10, 100];
    let cell_cfg = FilterBankConfig { n_filters: 2, ..FilterBankConfig::per_cell(KernelFamily::Gauss) };
    let cell = FilterBank::new(cell_cfg, 5, 100, 10, &mut rng)?;
    let y = cell.forward(&Tensor::zeros(&[2, 5, 100]), true)?;
    let per_cell = cell.params.count == 100 && y.shape() == [2, 10, 10];
    let params = param_count(&DelayNetConfig::d_aff_aff_gau(5, 100, 60, 1, 2))?;
    let in_range = (PARAM_RANGE.0..=PARAM_RANGE.1).contains(&params);
    Ok(outcome(
        per_feature && per_cell && in_range,
        format!(
            "per-feature {} kernels (5x2), per-cell {} kernels (5x2x10), D_AffAffGau {params} params in [{}, {}]",
            feature.params.count, cell.params.count, PARAM_RANGE.0, PARAM_RANGE.1
        ),
    ))
}

const CLI_CONFIG: &str = "[plant]\nn_minutes = 5760\n[train]\nlr = 0.01\nmax_epochs = 2\n[ablation]\ntrials = 1\nexhaustive = false\n";

fn run_cli(dir: &Path, args: &[&str]) -> delaynet::Result<()> {
    let status = Command::new(env!("CARGO_BIN_EXE_delaynet"))
        .args(args)
        .args(["--config", dir.join("run.toml").to_str().unwrap(), "--seed", "3", "--out", dir.join("out").to_str().unwrap()])
        .stderr(std::process::Stdio::null())
        .status()?;
    if status.success() {
        Ok(())
    } else {
        Err(delaynet::Error::data(format!("delaynet {} exited with {status}", args.join(" "))))
    }
}

fn determinism() -> delaynet::Result<Outcome> {
    let subcommands: [&[&str]; 6] = [&["simulate"], &["prepare"], &["train"], &["eval"], &["ablate"], &["gradcheck", "--points", "2"]];
    let dirs = [tempfile::tempdir()?, tempfile::tempdir()?];
    for d in &dirs {
        std::fs::write(d.path().join("run.toml"), CLI_CONFIG)?;
        for args in subcommands {
            run_cli(d.path(), args)?;
        }
    }
    let mut files: Vec<_> = std::fs::read_dir(dirs[0].path().join("out"))?.map(|e| e.map(|e| e.file_name())).collect::<Result<_, _>>()?;
    files.sort();
    let mut differ = Vec::new();
    for f in &files {
        let a = std::fs::read(dirs[0].path().join("out").join(f))?;
        let b = std::fs::read(dirs[1].path().join("out").join(f)).unwrap_or_default();
        if a != b {
            differ.push(f.to_string_lossy().into_owned());
        }
    }
    Ok(outcome(
        differ.is_empty() && files.len() >= 12,
        format!("{} files from {} subcommands, differing: [{}]", files.len(), subcommands.len(), differ.join(", ")),
    ))
}

fn checkpoint_fidelity() -> delaynet::Result<Outcome> {
    let cfg = RunConfig { plant: PlantConfig { n_minutes: 5 * 1440, ..Default::default() }, ..Default::default() };
    let (data, model) = plant_dataset(&cfg)?;
    let net = DelayNet::build(&model, 4)?;
    let train = train_cfg(3, 4);
    let report = fit(&net, &data.train, &data.val, &train)?;
    let before = evaluate_mae(&net, &data.val, 64)?;
    let text = Checkpoint::capture(&net, &train, &cfg.preprocess, report.best_val_mae, 4).to_text()?;
    let loaded = Checkpoint::from_text(&text)?;
    let after = evaluate_mae(&loaded.to_net()?, &data.val, 64)?;
    Ok(outcome(
        before.to_bits() == after.to_bits() && loaded.best_val_mae.to_bits() == report.best_val_mae.to_bits(),
        format!("val MAE {before:.12e} before, {after:.12e} after reload, recorded best {:.12e}", loaded.best_val_mae),
    ))
}

type Criterion = (u32, &'static str, fn() -> delaynet::Result<Outcome>);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (1, "gradient integrity", gradient_integrity),
        (2, "delay recovery", delay_recovery),
        (3, "ablation ordering", ablation_ordering),
        (4, "learning beats zero", beats_zero),
        (5, "causality", causality),
        (6, "pipeline round trip", pipeline),
        (7, "counts", counts),
        (8, "cli determinism", determinism),
        (9, "checkpoint fidelity", checkpoint_fidelity),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|p| p.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t0 = Instant::now();
        let res = run().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        failed += usize::from(!res.pass);
        println!("[{}] {id} {name}: {} ({:.1}s)", if res.pass { "PASS" } else { "FAIL" }, res.detail, t0.elapsed().as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
