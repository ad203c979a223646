//! Fit a single Gaussian filter between command and room temperature and
//! read the plant's dead time off its centre.
//!
//! cargo run --release --example recover_delay -- [delay] [seeds]

use std::time::Instant;

use delaynet::plantsim::PlantConfig;
use delaynet::probe::{recover_delay, ProbeConfig};

fn main() -> delaynet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let d: usize = args.first().map_or(8, |s| s.parse().expect("delay"));
    let seeds: u64 = args.get(1).map_or(3, |s| s.parse().expect("seeds"));
    let plant = PlantConfig { dead_time_steps: d, ..Default::default() };
    let cfg = ProbeConfig::default();
    for seed in 0..seeds {
        let t0 = Instant::now();
        let r = recover_delay(&plant, &cfg, seed)?;
        println!(
            "seed {seed}: true {} learned {:.2} (val MAE {:.3}, {:.1}s)",
            r.true_delay,
            r.learned_delay,
            r.val_mae,
            t0.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
