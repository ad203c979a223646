//! Finite-difference check of every differentiable component.
//!
//! `cargo run --example gradcheck -- [points] [seed]`

use std::time::Instant;

use delaynet::gradsuite::run_suite;

fn main() -> delaynet::Result<()> {
    let mut args = std::env::args().skip(1);
    let points = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);
    let start = Instant::now();
    let results = run_suite(seed, points)?;
    println!("{:<32} {:>6} {:>8} {:>12} {:>8}", "case", "points", "redrawn", "max rel err", "tol");
    for r in &results {
        println!(
            "{:<32} {:>6} {:>8} {:>12.3e} {:>8.0e} {}",
            r.name,
            r.points,
            r.redrawn,
            r.max_rel_error,
            r.tolerance,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
