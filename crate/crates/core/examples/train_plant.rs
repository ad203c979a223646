//! Simulate the plant, train a delay network and compare it with the zero
//! forecast.
//!
//! cargo run --release --example train_plant -- [epochs] [days] [seed] [identity positions, e.g. low,high or -] [lr]

use std::time::Instant;

use delaynet::datapipe::{prepare, PreprocessConfig};
use delaynet::model::{zero_predictor, DelayNet, DelayNetConfig, FilterPosition};
use delaynet::plantsim::{manifest, simulate, PlantConfig};
use delaynet::train::{fit, forecaster_mae, TrainConfig};

fn main() -> delaynet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs: usize = args.first().map_or(60, |s| s.parse().expect("epochs"));
    let days: usize = args.get(1).map_or(30, |s| s.parse().expect("days"));
    let seed: u64 = args.get(2).map_or(0, |s| s.parse().expect("seed"));
    let identity: Vec<FilterPosition> = args
        .get(3)
        .filter(|s| s.as_str() != "-")
        .map(|s| {
            s.split(',')
                .map(|p| match p {
                    "low" => FilterPosition::Low,
                    "temporal" => FilterPosition::Temporal,
                    "high" => FilterPosition::High,
                    other => panic!("unknown position {other}"),
                })
                .collect()
        })
        .unwrap_or_default();
    let lr: f64 = args.get(4).map_or(1e-3, |s| s.parse().expect("lr"));

    let plant = PlantConfig { n_minutes: days * 1440, ..Default::default() };
    let data = prepare(&simulate(&plant)?, &manifest(PreprocessConfig::default()))?;
    println!("{} train / {} val samples", data.train.len(), data.val.len());

    let first = &data.train[0];
    let cfg = DelayNetConfig::d_aff_aff_gau(first.n_features(), first.past_steps, first.future_steps, first.n_commands(), first.n_targets())
        .with_identity(&identity);
    let net = DelayNet::build(&cfg, seed)?;
    let zero = forecaster_mae(&zero_predictor(&cfg), &data.val, 64)?;
    let started = Instant::now();
    let report = fit(&net, &data.train, &data.val, &TrainConfig { lr, max_epochs: epochs, seed, record_wall_time: true, ..Default::default() })?;
    for e in report.epochs.iter().filter(|e| e.epoch % 10 == 0 || e.epoch == 1) {
        println!("epoch {:4}  train {:.4}  val {:.4}  {:.1}s", e.epoch, e.train_mae, e.val_mae, e.wall_seconds);
    }
    println!(
        "best val MAE {:.4} at epoch {} | zero {:.4} | ratio {:.3} | {:.1}s",
        report.best_val_mae,
        report.best_epoch,
        zero,
        report.best_val_mae / zero,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}
