//! Synthetic heated room with a known command-to-effect dead time.
//!
//! The plant runs at one-minute resolution. Model steps are
//! `minutes_per_step` minutes long, so a dead time of `d` steps is
//! `d * minutes_per_step` minutes and the time constant scales alike.
//!
//! Per minute `k`, with `m = minutes_per_step`:
//!
//! ```text
//! heat(k) = gain * u(k - d*m) / (tau*m)
//! loss(k) = (outside(k) - room(k)) / (tau*m)
//! vent(k) = v(k) * vent_coupling * (outside(k) - room(k)) / (tau*m)
//! room(k+1) = room(k) + heat(k) + loss(k) + vent(k)
//! ```
//!
//! `v(k)` is 1 while a venting event is active. Measurement noise is added
//! to the exported temperatures only.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datapipe::{ColumnSpec, Manifest, PreprocessConfig, Role, SeriesTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    /// Dead time `d` in model steps.
    pub dead_time_steps: usize,
    /// First-order time constant in model steps.
    pub inertia_tau: f64,
    /// Equilibrium rise above outside temperature at full duty.
    pub gain: f64,
    /// Period of the outside temperature cycle in model steps.
    pub outside_period_steps: usize,
    pub outside_mean: f64,
    pub outside_amplitude: f64,
    /// Measurement noise standard deviation.
    pub noise_std: f64,
    /// Venting events per 1000 model steps.
    pub disturbance_rate: f64,
    /// Extra outside coupling while venting, relative to the base loss.
    pub vent_coupling: f64,
    pub vent_minutes: (usize, usize),
    /// Range of lengths of constant-duty command segments.
    pub segment_minutes: (usize, usize),
    /// Each segment's duty is the current level plus uniform jitter of
    /// this half-width, clipped to [0, 1].
    pub duty_jitter: f64,
    /// Stationary spread of the slowly drifting duty level around 0.5.
    pub duty_level_std: f64,
    /// Correlation time of the duty level, in minutes.
    pub duty_level_minutes: f64,
    /// Time constant of the heating fluid, in minutes.
    pub fluid_tau_minutes: f64,
    pub fluid_gain: f64,
    pub minutes_per_step: usize,
    /// Number of simulated minutes.
    pub n_minutes: usize,
    /// Minute stamp of the first row.
    pub start_minute: i64,
    pub seed: u64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            dead_time_steps: 8,
            inertia_tau: 60.0,
            gain: 20.0,
            outside_period_steps: 480,
            outside_mean: 5.0,
            outside_amplitude: 1.0,
            noise_std: 0.02,
            disturbance_rate: 0.5,
            vent_coupling: 4.0,
            vent_minutes: (15, 60),
            segment_minutes: (15, 90),
            duty_jitter: 0.5,
            duty_level_std: 0.0,
            duty_level_minutes: 1440.0,
            fluid_tau_minutes: 4.0,
            fluid_gain: 40.0,
            minutes_per_step: 3,
            n_minutes: 30 * 1440,
            // 2024-01-01T00:00
            start_minute: 28_401_120,
            seed: 0,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inertia_tau > 0.0) || !(self.fluid_tau_minutes >= 1.0) {
            return Err(Error::config("plant time constants must be positive (fluid at least one minute)"));
        }
        if !(self.duty_jitter >= 0.0) || !(self.duty_level_std >= 0.0) || !(self.duty_level_minutes > 0.0) {
            return Err(Error::config("duty jitter and level spread must be non-negative, level time positive"));
        }
        if !(self.noise_std >= 0.0) || !(self.disturbance_rate >= 0.0) {
            return Err(Error::config("noise and disturbance rate must be non-negative"));
        }
        if self.minutes_per_step == 0 || self.outside_period_steps == 0 {
            return Err(Error::config("minutes per step and outside period must be positive"));
        }
        let ok_range = |r: (usize, usize)| r.0 >= 1 && r.0 <= r.1;
        if !ok_range(self.segment_minutes) || !ok_range(self.vent_minutes) {
            return Err(Error::config("segment and vent length ranges must satisfy 1 <= lo <= hi"));
        }
        Ok(())
    }

    pub fn dead_time_minutes(&self) -> usize {
        self.dead_time_steps * self.minutes_per_step
    }

    fn tau_minutes(&self) -> f64 {
        self.inertia_tau * self.minutes_per_step as f64
    }
}

/// Noise-free trajectories and fluxes of one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantTrace {
    pub room: Vec<f64>,
    pub fluid: Vec<f64>,
    pub outside: Vec<f64>,
    pub command: Vec<f64>,
    /// 1 while venting.
    pub venting: Vec<f64>,
    pub heat_flux: Vec<f64>,
    pub loss_flux: Vec<f64>,
    pub vent_flux: Vec<f64>,
    /// `(start, end)` minute offsets of venting events.
    pub events: Vec<(usize, usize)>,
}

/// Random piecewise-constant duty in [0, 1] around a level that follows an
/// Ornstein-Uhlenbeck process.
fn command_series(cfg: &PlantConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut u = Vec::with_capacity(cfg.n_minutes);
    let mut level = 0.5;
    while u.len() < cfg.n_minutes {
        let len = rng.gen_range(cfg.segment_minutes.0..=cfg.segment_minutes.1);
        if cfg.duty_level_std > 0.0 {
            let keep = (-(len as f64) / cfg.duty_level_minutes).exp();
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            level = 0.5 + (level - 0.5) * keep + cfg.duty_level_std * (1.0 - keep * keep).sqrt() * z;
        }
        let duty = (level + cfg.duty_jitter * rng.gen_range(-1.0..=1.0)).clamp(0.0, 1.0);
        u.extend(std::iter::repeat(duty).take(len));
    }
    u.truncate(cfg.n_minutes);
    u
}

fn vent_series(cfg: &PlantConfig, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<(usize, usize)>) {
    let n = cfg.n_minutes;
    let mut v = vec![0.0; n];
    let mut events = Vec::new();
    let per_minute = cfg.disturbance_rate / 1000.0 / cfg.minutes_per_step as f64;
    let mut k = 0;
    while k < n {
        if per_minute > 0.0 && rng.gen::<f64>() < per_minute {
            let len = rng.gen_range(cfg.vent_minutes.0..=cfg.vent_minutes.1);
            let end = (k + len).min(n);
            v[k..end].iter_mut().for_each(|x| *x = 1.0);
            events.push((k, end));
            k = end;
        } else {
            k += 1;
        }
    }
    (v, events)
}

/// Runs the plant without measurement noise.
pub fn simulate_trace(cfg: &PlantConfig) -> Result<PlantTrace> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_minutes;
    let command = command_series(cfg, &mut rng);
    let (venting, events) = vent_series(cfg, &mut rng);
    let period = (cfg.outside_period_steps * cfg.minutes_per_step) as f64;
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let outside: Vec<f64> = (0..n)
        .map(|k| cfg.outside_mean + cfg.outside_amplitude * (std::f64::consts::TAU * k as f64 / period + phase).sin())
        .collect();
    Ok(integrate(cfg, command, venting, outside, events))
}

/// Runs the plant on a given command with no venting and a constant outside
/// temperature of `cfg.outside_mean`.
pub fn simulate_with_command(cfg: &PlantConfig, command: &[f64]) -> Result<PlantTrace> {
    cfg.validate()?;
    let n = command.len();
    let cfg = PlantConfig { n_minutes: n, ..cfg.clone() };
    Ok(integrate(&cfg, command.to_vec(), vec![0.0; n], vec![cfg.outside_mean; n], vec![]))
}

fn integrate(
    cfg: &PlantConfig,
    command: Vec<f64>,
    venting: Vec<f64>,
    outside: Vec<f64>,
    events: Vec<(usize, usize)>,
) -> PlantTrace {
    let n = command.len();
    let tau = cfg.tau_minutes();
    let delay = cfg.dead_time_minutes();
    let mut room = Vec::with_capacity(n);
    let mut fluid = Vec::with_capacity(n);
    let (mut heat_flux, mut loss_flux, mut vent_flux) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let start_duty = command.first().copied().unwrap_or(0.0);
    // start at the equilibrium of the initial duty
    let mut r = outside.first().copied().unwrap_or(0.0) + cfg.gain * start_duty;
    let mut f = r;
    for k in 0..n {
        room.push(r);
        fluid.push(f);
        let delayed = if k >= delay { command[k - delay] } else { start_duty };
        heat_flux[k] = cfg.gain * delayed / tau;
        loss_flux[k] = (outside[k] - r) / tau;
        vent_flux[k] = venting[k] * cfg.vent_coupling * (outside[k] - r) / tau;
        r += heat_flux[k] + loss_flux[k] + vent_flux[k];
        f += (r + cfg.fluid_gain * command[k] - f) / cfg.fluid_tau_minutes;
    }
    PlantTrace { room, fluid, outside, command, venting, heat_flux, loss_flux, vent_flux, events }
}

/// Exported column names, in CSV order.
pub const COLUMNS: [&str; 4] = ["room_temp", "fluid_temp", "outside_temp", "heater_cmd"];

/// Simulates the plant and returns the observable table with measurement
/// noise on temperatures. The disturbance stays hidden.
pub fn simulate(cfg: &PlantConfig) -> Result<SeriesTable> {
    Ok(simulate_with_trace(cfg)?.0)
}

pub fn simulate_with_trace(cfg: &PlantConfig) -> Result<(SeriesTable, PlantTrace)> {
    let trace = simulate_trace(cfg)?;
    // a separate stream keeps the noise-free trace independent of noise_std
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let normal = Normal::new(0.0, cfg.noise_std.max(0.0)).map_err(|e| Error::config(e.to_string()))?;
    let mut noisy = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|x| if cfg.noise_std > 0.0 { x + normal.sample(&mut rng) } else { *x })
            .collect()
    };
    let columns = vec![noisy(&trace.room), noisy(&trace.fluid), noisy(&trace.outside), trace.command.clone()];
    let timestamps = (0..cfg.n_minutes as i64).map(|k| cfg.start_minute + k).collect();
    let table = SeriesTable { timestamps, names: COLUMNS.iter().map(|s| s.to_string()).collect(), columns };
    Ok((table, trace))
}

/// Manifest describing the simulated columns.
pub fn manifest(preprocess: PreprocessConfig) -> Manifest {
    let col = |name: &str, role, group: &str| ColumnSpec { name: name.into(), role, group: group.into() };
    Manifest {
        preprocess,
        columns: vec![
            col("room_temp", Role::Target, "temperature"),
            col("fluid_temp", Role::Feature, "temperature"),
            col("outside_temp", Role::Feature, "temperature"),
            col("heater_cmd", Role::Command, "command"),
        ],
    }
}

/// Ground truth written next to the simulated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub dead_time_steps: usize,
    pub dead_time_minutes: usize,
    pub minutes_per_step: usize,
    pub inertia_tau_steps: f64,
    /// `[start, end)` minute stamps of venting events.
    pub events: Vec<(i64, i64)>,
}

pub fn ground_truth(cfg: &PlantConfig, trace: &PlantTrace) -> GroundTruth {
    GroundTruth {
        dead_time_steps: cfg.dead_time_steps,
        dead_time_minutes: cfg.dead_time_minutes(),
        minutes_per_step: cfg.minutes_per_step,
        inertia_tau_steps: cfg.inertia_tau,
        events: trace
            .events
            .iter()
            .map(|&(a, b)| (cfg.start_minute + a as i64, cfg.start_minute + b as i64))
            .collect(),
    }
}

/// Writes `plant.csv`, `manifest.toml` and `truth.json` into `dir`.
pub fn write_outputs(cfg: &PlantConfig, preprocess: PreprocessConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (table, trace) = simulate_with_trace(cfg)?;
    table.save_csv(&dir.join("plant.csv"))?;
    std::fs::write(dir.join("manifest.toml"), manifest(preprocess).to_toml())?;
    let truth = serde_json::to_string_pretty(&ground_truth(cfg, &trace)).expect("serializes");
    std::fs::write(dir.join("truth.json"), truth + "\n")?;
    Ok(())
}
