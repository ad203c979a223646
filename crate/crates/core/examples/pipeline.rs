//! Simulate the plant, write it as CSV, read it back with a few holes and
//! prepare normalized samples.
//!
//! cargo run --release --example pipeline -- [days]

use delaynet::datapipe::{format_minute, prepare, SeriesTable};
use delaynet::plantsim::{manifest, simulate, PlantConfig};

fn main() -> delaynet::Result<()> {
    let days: usize = std::env::args().nth(1).map_or(6, |s| s.parse().expect("days"));
    let plant = PlantConfig { n_minutes: days * 1440, ..Default::default() };
    let mut csv = Vec::new();
    simulate(&plant)?.write_csv(&mut csv)?;
    let mut table = SeriesTable::read_csv(csv.as_slice())?;
    println!("{} rows, columns {:?}", table.len(), table.names);

    // a 10 minute hole is filled, a 90 minute hole drops the windows over it
    let room = table.names.iter().position(|n| n == "room_temp").expect("room column");
    table.columns[room][600..610].iter_mut().for_each(|v| *v = f64::NAN);
    table.columns[room][3000..3090].iter_mut().for_each(|v| *v = f64::NAN);

    let man = manifest(Default::default());
    let data = prepare(&table, &man)?;
    println!("{} train / {} val samples, split at {}", data.train.len(), data.val.len(), format_minute(data.boundary));
    let s = &data.train[0];
    println!("first sample starts {}: x1 {}x{}, x2 {}x{}, y {}x{}", format_minute(s.start), s.n_features(), s.past_steps, s.n_commands(), s.future_steps, s.n_targets(), s.future_steps);
    for g in &s.group_stats {
        println!("  group {:<12} mean {:8.3} std {:6.3}", g.group, g.mean, g.std);
    }
    println!("  anchor {:.4}, first targets {:?}", s.anchor, &s.y_denormalized()?[..3]);
    Ok(())
}
