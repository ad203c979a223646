//! Dead-time recovery: fit one Gaussian filter from the command to the room
//! temperature increments and read the delay off its centre.
//!
//! With cross-correlation, an effect lagging its cause by `d` steps pulls
//! the centre to `mu = -d`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::datapipe::{average_triples, SampleWindow, SeriesTable};
use crate::error::{Error, Result};
use crate::kernels::KernelFamily;
use crate::layers::{Aggregator, AggregatorConfig, FilterBank, FilterBankConfig, Module};
use crate::plantsim::{simulate, PlantConfig};
use crate::train::{fit, Batch, TrainConfig, Trainable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Steps per input window; the kernel spans the largest odd length below.
    pub window_steps: usize,
    pub stride_steps: usize,
    /// Initial kernel width as a fraction of the window, so that distant
    /// delays still receive gradient.
    pub initial_width: f64,
    pub days: usize,
    pub train: TrainConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            window_steps: 64,
            stride_steps: 16,
            initial_width: 0.25,
            days: 10,
            train: TrainConfig { lr: 0.05, max_epochs: 200, patience: 200, batch_size: 32, ..Default::default() },
        }
    }
}

/// One Gaussian filter on the command followed by a linear map.
pub struct DelayProbe {
    pub bank: FilterBank,
    pub head: Aggregator,
    /// Leading outputs dropped because their kernel reaches before the window.
    pub crop: usize,
}

impl DelayProbe {
    pub fn new(cfg: &ProbeConfig, seed: u64) -> Result<DelayProbe> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank_cfg = FilterBankConfig { batchnorm: false, ..FilterBankConfig::new(KernelFamily::Gauss, 1) };
        let bank = FilterBank::new(bank_cfg, 1, cfg.window_steps, 0, &mut rng)?;
        let width = (cfg.initial_width * cfg.window_steps as f64).max(1.0);
        bank.params.sigma.as_ref().expect("gauss has a width").set_data(&[width.ln()])?;
        let head = Aggregator::new(AggregatorConfig::new(0, 1.0), 1, 1, &mut rng)?;
        Ok(DelayProbe { crop: bank.support / 2, bank, head })
    }

    /// Learned delay in steps.
    pub fn delay(&self) -> f64 {
        -self.bank.params.mu.as_ref().expect("gauss has a centre").to_vec()[0]
    }
}

impl Trainable for DelayProbe {
    fn forward_batch(&self, batch: &Batch, training: bool) -> Result<Tensor> {
        let h = self.bank.forward(&batch.x1, training)?;
        let len = self.bank.in_len - self.crop;
        self.head.forward(&h.crop_time(self.crop, len)?)
    }

    fn trainable_parameters(&self) -> Vec<Tensor> {
        let mut v = Vec::new();
        self.bank.parameters("bank", &mut v);
        self.head.parameters("head", &mut v);
        v.into_iter().map(|(_, t)| t).collect()
    }

    fn state(&self) -> Vec<(String, Vec<f64>)> {
        let mut v = Vec::new();
        self.bank.parameters("bank", &mut v);
        self.head.parameters("head", &mut v);
        v.into_iter().map(|(n, t)| (n, t.to_vec())).collect()
    }

    fn load_state(&self, state: &[(String, Vec<f64>)]) -> Result<()> {
        let params = self.trainable_parameters();
        if params.len() != state.len() {
            return Err(Error::data("probe state does not match the model"));
        }
        params.iter().zip(state).try_for_each(|(p, (_, v))| p.set_data(v))
    }
}

fn standardize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    v.iter().map(|x| (x - mean) / std).collect()
}

/// Windows pairing the standardized command with the standardized forward
/// increments of the target, both averaged over `average` rows.
pub fn probe_windows(table: &SeriesTable, command: &str, target: &str, average: usize, cfg: &ProbeConfig) -> Result<Vec<SampleWindow>> {
    let u = standardize(&average_triples(table.column(command)?, average)?);
    let room = average_triples(table.column(target)?, average)?;
    let dy = standardize(&room.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>());
    let l = cfg.window_steps;
    let crop = crate::kernels::full_support(l) / 2;
    if dy.len() < l || cfg.stride_steps == 0 {
        return Err(Error::data(format!("probe needs at least {l} steps and a positive stride")));
    }
    let t0 = table.timestamps.first().copied().unwrap_or(0);
    Ok((0..=dy.len() - l)
        .step_by(cfg.stride_steps)
        .map(|s| SampleWindow {
            start: t0 + (s * average) as i64,
            end: t0 + ((s + l) * average) as i64 - 1,
            step_minutes: average as i64,
            past_steps: l,
            future_steps: l - crop,
            x1: u[s..s + l].to_vec(),
            x2: vec![0.0; l - crop],
            y: dy[s + crop..s + l].to_vec(),
            anchor: 0.0,
            group_stats: Vec::new(),
            target_groups: vec![0],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub seed: u64,
    pub true_delay: usize,
    pub learned_delay: f64,
    pub val_mae: f64,
}

impl ProbeResult {
    pub fn within(&self, tolerance: f64) -> bool {
        (self.learned_delay - self.true_delay as f64).abs() <= tolerance
    }
}

/// Simulates the plant with `seed`, trains a probe and reports the delay.
pub fn recover_delay(plant: &PlantConfig, cfg: &ProbeConfig, seed: u64) -> Result<ProbeResult> {
    let plant = PlantConfig { seed, n_minutes: cfg.days * 1440, ..plant.clone() };
    let table = simulate(&plant)?;
    let windows = probe_windows(&table, "heater_cmd", "room_temp", plant.minutes_per_step, cfg)?;
    let split = windows.len() * 4 / 5;
    let (train, val) = windows.split_at(split);
    let probe = DelayProbe::new(cfg, seed)?;
    let report = fit(&probe, train, val, &TrainConfig { seed, ..cfg.train.clone() })?;
    Ok(ProbeResult { seed, true_delay: plant.dead_time_steps, learned_delay: probe.delay(), val_mae: report.best_val_mae })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_align_inputs_and_targets() {
        let cfg = ProbeConfig { window_steps: 16, stride_steps: 4, ..Default::default() };
        let plant = PlantConfig { n_minutes: 600, ..Default::default() };
        let w = probe_windows(&simulate(&plant).unwrap(), "heater_cmd", "room_temp", 3, &cfg).unwrap();
        assert_eq!(w[0].x1.len(), 16);
        assert_eq!(w[0].y.len(), 16 - 7);
        assert_eq!(w[1].start - w[0].start, 12);
        assert!(w.iter().all(|s| s.x1.iter().chain(&s.y).all(|v| v.is_finite())));
    }

    #[test]
    fn recovers_a_short_delay() {
        let cfg = ProbeConfig { days: 4, train: TrainConfig { max_epochs: 60, ..ProbeConfig::default().train }, ..Default::default() };
        let plant = PlantConfig { dead_time_steps: 4, ..Default::default() };
        let r = recover_delay(&plant, &cfg, 1).unwrap();
        assert!(r.within(1.0), "{r:?}");
    }
}
