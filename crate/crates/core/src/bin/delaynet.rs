use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use delaynet::checkpoint::Checkpoint;
use delaynet::config::RunConfig;
use delaynet::datapipe::{prepare, Dataset, Manifest, SeriesTable};
use delaynet::eval::{ablation_grid, box_row, box_stats, ema_rolling_eval, BOX_HEADER};
use delaynet::gradsuite::run_suite;
use delaynet::model::{zero_predictor, DelayNet};
use delaynet::plantsim::write_outputs;
use delaynet::train::{evaluate_mae, fit};
use delaynet::{Error, Result};

#[derive(Parser)]
#[command(name = "delaynet", version, about = "Delay-modeling forecaster: simulate, prepare, train, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML file with [plant] [model] [train] [preprocess] [eval] [ablation] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the simulator and training seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the plant: plant.csv, manifest.toml, truth.json.
    Simulate(Common),
    /// Window, normalize and split a CSV into samples.json.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// Input CSV [default: <out>/plant.csv].
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Column manifest [default: <out>/manifest.toml].
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train a model: checkpoint.txt, metrics.csv.
    Train {
        #[command(flatten)]
        common: Common,
        /// Prepared samples [default: <out>/samples.json].
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Rolling evaluation against the zero forecast: eval_metrics.csv,
    /// per_sample.csv, boxstats.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Checkpoint [default: <out>/checkpoint.txt].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Identity-replacement ablation: ablation_boxstats.csv, ablation_trials.csv.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Finite-difference check of every kernel, layer and a small network.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Random points per case.
        #[arg(long, default_value_t = 20)]
        points: usize,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(cfg.with_seed(common.seed))
}

fn out_dir(common: &Common) -> Result<&Path> {
    std::fs::create_dir_all(&common.out)?;
    Ok(&common.out)
}

fn or_default(p: &Option<PathBuf>, dir: &Path, name: &str) -> PathBuf {
    p.clone().unwrap_or_else(|| dir.join(name))
}

fn write(path: PathBuf, text: String) -> Result<()> {
    std::fs::write(&path, text)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(common) => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&common)?;
            write_outputs(&cfg.plant, cfg.preprocess.clone(), dir)?;
            eprintln!("simulated {} minutes into {}", cfg.plant.n_minutes, dir.display());
        }
        Command::Prepare { common, csv, manifest } => {
            load_config(&common)?;
            let dir = out_dir(&common)?;
            let manifest = Manifest::load(&or_default(&manifest, dir, "manifest.toml"))?;
            let table = SeriesTable::load_csv(&or_default(&csv, dir, "plant.csv"))?;
            let data = prepare(&table, &manifest)?;
            eprintln!("{} train / {} val samples", data.train.len(), data.val.len());
            data.save(&dir.join("samples.json"))?;
        }
        Command::Train { common, samples } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&common)?;
            let data = Dataset::load(&or_default(&samples, dir, "samples.json"))?;
            let first = data.train.first().ok_or_else(|| Error::data("no training samples"))?;
            let model = cfg.model.resolve(first.n_features(), first.past_steps, first.future_steps, first.n_commands(), first.n_targets())?;
            let net = DelayNet::build(&model, cfg.train.seed)?;
            let report = fit(&net, &data.train, &data.val, &cfg.train)?;
            eprintln!(
                "best val MAE {:.6} at epoch {} of {} ({:.1}s)",
                report.best_val_mae,
                report.best_epoch,
                report.epochs.len(),
                report.wall_time
            );
            let ck = Checkpoint::capture(&net, &cfg.train, &cfg.preprocess, report.best_val_mae, cfg.train.seed);
            ck.save(&dir.join("checkpoint.txt"))?;
            write(dir.join("metrics.csv"), report.metrics_csv())?;
        }
        Command::Eval { common, samples, checkpoint } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&common)?;
            let data = Dataset::load(&or_default(&samples, dir, "samples.json"))?;
            let ck = Checkpoint::load(&or_default(&checkpoint, dir, "checkpoint.txt"))?;
            let net = ck.to_net()?;
            let zero = zero_predictor(&net.config);
            let val_mae = evaluate_mae(&net, &data.val, cfg.eval.batch_size)?;
            let model_eval = ema_rolling_eval(&net, &data.val, &cfg.eval)?;
            let zero_eval = ema_rolling_eval(&zero, &data.val, &cfg.eval)?;
            let mut metrics = String::from("name,val_mae_normalized,ema_mae,points\n");
            metrics.push_str(&format!("model,{val_mae:.9},{:.9},{}\n", model_eval.mae, model_eval.points.len()));
            let zero_norm = delaynet::train::forecaster_mae(&zero, &data.val, cfg.eval.batch_size)?;
            metrics.push_str(&format!("zero,{zero_norm:.9},{:.9},{}\n", zero_eval.mae, zero_eval.points.len()));
            write(dir.join("eval_metrics.csv"), metrics)?;
            let mut per = String::from("start,model_mae,zero_mae\n");
            for (m, z) in model_eval.windows.iter().zip(&zero_eval.windows) {
                per.push_str(&format!("{},{:.9},{:.9}\n", delaynet::datapipe::format_minute(m.start), m.mae, z.mae));
            }
            write(dir.join("per_sample.csv"), per)?;
            let model_box = box_stats(&model_eval.windows.iter().map(|w| w.mae).collect::<Vec<_>>())?;
            let zero_box = box_stats(&zero_eval.windows.iter().map(|w| w.mae).collect::<Vec<_>>())?;
            write(dir.join("boxstats.csv"), format!("{BOX_HEADER}\n{}\n{}\n", box_row("model", &model_box), box_row("zero", &zero_box)))?;
            eprintln!("rolling MAE {:.4} (zero {:.4}), val MAE {:.6} (checkpoint {:.6})", model_eval.mae, zero_eval.mae, val_mae, ck.best_val_mae);
        }
        Command::Ablate { common, samples } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&common)?;
            let data = Dataset::load(&or_default(&samples, dir, "samples.json"))?;
            let first = data.train.first().ok_or_else(|| Error::data("no training samples"))?;
            let model = cfg.model.resolve(first.n_features(), first.past_steps, first.future_steps, first.n_commands(), first.n_targets())?;
            let report = ablation_grid(&model, &data, &cfg.ablation, &cfg.train)?;
            write(dir.join("ablation_boxstats.csv"), report.to_csv())?;
            write(dir.join("ablation_trials.csv"), report.trials_csv())?;
        }
        Command::Gradcheck { common, points } => {
            let seed = common.seed.unwrap_or(0);
            let results = run_suite(seed, points)?;
            let mut csv = String::from("case,points,redrawn,max_rel_error,tolerance,passed\n");
            for r in &results {
                csv.push_str(&format!("{},{},{},{:.3e},{:.0e},{}\n", r.name, r.points, r.redrawn, r.max_rel_error, r.tolerance, r.passed()));
            }
            write(out_dir(&common)?.join("gradcheck.csv"), csv)?;
            let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
            if !failed.is_empty() {
                return Err(Error::numeric(format!("gradient check failed for {}", failed.join(", "))));
            }
            eprintln!("all {} cases passed", results.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
