//! Train briefly, then aggregate overlapping forecasts with the decaying
//! average and summarize the per-window errors against the zero forecast.
//!
//! cargo run --release --example rolling_eval -- [epochs]

use delaynet::datapipe::prepare;
use delaynet::eval::{box_row, box_stats, ema_rolling_eval, ema_weights, EvalConfig, BOX_HEADER};
use delaynet::model::{zero_predictor, DelayNet, DelayNetConfig};
use delaynet::plantsim::{manifest, simulate, PlantConfig};
use delaynet::train::{fit, TrainConfig};

fn main() -> delaynet::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(20, |s| s.parse().expect("epochs"));
    let data = prepare(&simulate(&PlantConfig { n_minutes: 12 * 1440, ..Default::default() })?, &manifest(Default::default()))?;
    let s = &data.train[0];
    let net = DelayNet::build(&DelayNetConfig::d_aff_aff_gau(s.n_features(), s.past_steps, s.future_steps, s.n_commands(), s.n_targets()), 0)?;
    fit(&net, &data.train, &data.val, &TrainConfig { lr: 0.01, max_epochs: epochs, ..Default::default() })?;

    let cfg = EvalConfig::default();
    let w: Vec<String> = ema_weights(10, cfg.alpha).iter().map(|v| format!("{v:.3}")).collect();
    println!("weights of 10 overlapping forecasts, oldest first: {}", w.join(" "));
    let model = ema_rolling_eval(&net, &data.val, &cfg)?;
    let zero = ema_rolling_eval(&zero_predictor(&net.config), &data.val, &cfg)?;
    println!("aggregated MAE: model {:.4}, zero {:.4} over {} points", model.mae, zero.mae, model.points.len());
    println!("{BOX_HEADER}");
    for (name, r) in [("model", &model), ("zero", &zero)] {
        println!("{}", box_row(name, &box_stats(&r.windows.iter().map(|w| w.mae).collect::<Vec<_>>())?));
    }
    Ok(())
}
