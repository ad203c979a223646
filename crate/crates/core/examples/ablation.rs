//! Replace filter stages by the identity and compare the trained variants
//! with each other and with the zero forecast.
//!
//! cargo run --release --example ablation -- [config.toml]

use std::time::Instant;

use delaynet::config::RunConfig;
use delaynet::datapipe::prepare;
use delaynet::eval::ablation_grid;
use delaynet::plantsim::{manifest, simulate};

fn main() -> delaynet::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => RunConfig::load(path.as_ref())?,
        None => RunConfig::default(),
    };
    let started = Instant::now();
    let data = prepare(&simulate(&cfg.plant)?, &manifest(cfg.preprocess.clone()))?;
    let s = &data.train[0];
    let model = cfg.model.resolve(s.n_features(), s.past_steps, s.future_steps, s.n_commands(), s.n_targets())?;
    println!("{} train / {} val samples, {} trials per variant", data.train.len(), data.val.len(), cfg.ablation.trials);

    let report = ablation_grid(&model, &data, &cfg.ablation, &cfg.train)?;
    println!("{:<28} {:>8} {:>8} {:>8}  ratio to zero", "variant", "p25", "median", "p75");
    for r in &report.rows {
        println!(
            "{:<28} {:>8.4} {:>8.4} {:>8.4}  {:.3}",
            r.name,
            r.stats.p25,
            r.stats.median,
            r.stats.p75,
            r.stats.median / report.zero_mae
        );
    }
    println!("{:<28} {:>17.4}", "zero", report.zero_mae);
    println!("{:.0}s", started.elapsed().as_secs_f64());
    Ok(())
}
