//! Save a trained network as text, load it back and check that it scores
//! the same.
//!
//! cargo run --release --example checkpoint -- [path]

use delaynet::checkpoint::Checkpoint;
use delaynet::datapipe::{prepare, PreprocessConfig};
use delaynet::model::{DelayNet, DelayNetConfig};
use delaynet::plantsim::{manifest, simulate, PlantConfig};
use delaynet::train::{evaluate_mae, fit, TrainConfig};

fn main() -> delaynet::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "checkpoint.txt".into());
    let data = prepare(&simulate(&PlantConfig { n_minutes: 6 * 1440, ..Default::default() })?, &manifest(Default::default()))?;
    let s = &data.train[0];
    let net = DelayNet::build(&DelayNetConfig::d_aff_aff_gau(s.n_features(), s.past_steps, s.future_steps, s.n_commands(), s.n_targets()), 1)?;
    let train = TrainConfig { lr: 0.01, max_epochs: 5, ..Default::default() };
    let report = fit(&net, &data.train, &data.val, &train)?;
    Checkpoint::capture(&net, &train, &PreprocessConfig::default(), report.best_val_mae, 1).save(path.as_ref())?;

    let loaded = Checkpoint::load(path.as_ref())?.to_net()?;
    let before = evaluate_mae(&net, &data.val, 64)?;
    let after = evaluate_mae(&loaded, &data.val, 64)?;
    println!("val MAE {before:.15} before, {after:.15} after loading {path}");
    assert_eq!(before.to_bits(), after.to_bits());
    Ok(())
}
