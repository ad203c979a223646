//! MAE loss, Adam with gradient clipping, and the epoch loop with early
//! stopping on validation MAE.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::datapipe::SampleWindow;
use crate::error::{Error, Result};
use crate::model::{DelayNet, Forecaster};

/// Mean absolute error; the subgradient at exact ties is 0.
pub fn mae(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::config(format!(
            "mae: prediction {:?} and target {:?} differ in shape",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.numel();
    if n == 0 {
        return Err(Error::config("mae of empty tensors"));
    }
    let d: Vec<f64> = pred.data().iter().zip(target.data().iter()).map(|(p, t)| p - t).collect();
    let value = d.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    Ok(Tensor::from_op(
        vec![value],
        vec![],
        vec![pred.clone(), target.clone()],
        Box::new(move |g| {
            let s: Vec<f64> = d.iter().map(|v| g[0] * sign(*v) / n as f64).collect();
            let neg = s.iter().map(|v| -v).collect();
            vec![Some(s), Some(neg)]
        }),
    ))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Adaptive moment estimation.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor]) -> Adam {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    /// Applies one update from the accumulated gradients; returns the
    /// gradient norm before clipping.
    pub fn step(&mut self, params: &[Tensor], lr: f64, clip: Option<f64>) -> Result<f64> {
        let grads: Vec<Vec<f64>> = params.iter().map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()])).collect();
        let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::numeric(format!("gradient norm is {norm}")));
        }
        let scale = match clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (pi, p) in params.iter().enumerate() {
            let (m, v) = (&mut self.m[pi], &mut self.v[pi]);
            let g = &grads[pi];
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            p.update_data(|x| {
                for i in 0..x.len() {
                    let gi = g[i] * scale;
                    m[i] = b1 * m[i] + (1.0 - b1) * gi;
                    v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                    x[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                }
            })?;
            if p.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::numeric("parameter became non-finite after an update"));
            }
        }
        Ok(norm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// Write measured seconds into the metrics file. Off by default so that
    /// repeated runs produce identical files.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            max_epochs: 500,
            patience: 20,
            batch_size: 64,
            grad_clip: Some(5.0),
            seed: 0,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::config("patience, batch size and max epochs must be positive"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::config(format!("gradient clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Stacked model inputs and targets.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x1: Tensor,
    pub x2: Tensor,
    pub y: Tensor,
}

impl Batch {
    pub fn from_samples(samples: &[&SampleWindow]) -> Result<Batch> {
        let first = samples.first().ok_or_else(|| Error::data("empty batch"))?;
        let (f, c, fy) = (first.n_features(), first.n_commands(), first.n_targets());
        let (s, t) = (first.past_steps, first.future_steps);
        let b = samples.len();
        let mut x1 = Vec::with_capacity(b * f * s);
        let mut x2 = Vec::with_capacity(b * c * t);
        let mut y = Vec::with_capacity(b * fy * t);
        for w in samples {
            if w.x1.len() != f * s || w.x2.len() != c * t || w.y.len() != fy * t {
                return Err(Error::data("samples in a batch differ in shape"));
            }
            x1.extend_from_slice(&w.x1);
            x2.extend_from_slice(&w.x2);
            y.extend_from_slice(&w.y);
        }
        Ok(Batch {
            x1: Tensor::new(x1, &[b, f, s])?,
            x2: Tensor::new(x2, &[b, c, t])?,
            y: Tensor::new(y, &[b, fy, t])?,
        })
    }
}

/// A model `fit` can optimize.
pub trait Trainable {
    fn forward_batch(&self, batch: &Batch, training: bool) -> Result<Tensor>;
    fn trainable_parameters(&self) -> Vec<Tensor>;
    /// Values of all parameters and state buffers.
    fn state(&self) -> Vec<(String, Vec<f64>)>;
    fn load_state(&self, state: &[(String, Vec<f64>)]) -> Result<()>;
}

impl Trainable for DelayNet {
    fn forward_batch(&self, batch: &Batch, training: bool) -> Result<Tensor> {
        self.forward(&batch.x1, &batch.x2, training)
    }

    fn trainable_parameters(&self) -> Vec<Tensor> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    fn state(&self) -> Vec<(String, Vec<f64>)> {
        self.snapshot()
    }

    fn load_state(&self, state: &[(String, Vec<f64>)]) -> Result<()> {
        self.restore(state)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    /// 1-based epoch of the lowest validation MAE.
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub wall_time: f64,
    /// Parameters and buffers at `best_epoch`.
    pub best_state: Vec<(String, Vec<f64>)>,
}

impl TrainReport {
    pub fn val_curve(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_mae).collect()
    }

    pub fn train_curve(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_mae).collect()
    }

    /// `epoch,train_mae,val_mae,wall_seconds` rows.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("epoch,train_mae,val_mae,wall_seconds\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{:.12e},{:.12e},{:.3}\n", e.epoch, e.train_mae, e.val_mae, e.wall_seconds));
        }
        s
    }
}

/// Mean absolute error of a model over samples, in eval mode.
pub fn evaluate_mae<M: Trainable + ?Sized>(model: &M, samples: &[SampleWindow], batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::data("no samples to evaluate"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&SampleWindow> = chunk.iter().collect();
        let batch = Batch::from_samples(&refs)?;
        let pred = model.forward_batch(&batch, false)?;
        let n = pred.numel();
        total += mae(&pred.detach(), &batch.y)?.item()? * n as f64;
        count += n;
    }
    Ok(total / count as f64)
}

/// MAE of any forecaster in normalized units.
pub fn forecaster_mae<F: Forecaster + ?Sized>(model: &F, samples: &[SampleWindow], batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::data("no samples to evaluate"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&SampleWindow> = chunk.iter().collect();
        let batch = Batch::from_samples(&refs)?;
        let pred = model.predict(&batch.x1, &batch.x2)?;
        let n = pred.numel();
        total += mae(&pred, &batch.y)?.item()? * n as f64;
        count += n;
    }
    Ok(total / count as f64)
}

/// Trains with shuffled mini-batches, evaluates on `val` after every
/// epoch, stops after `patience` epochs without improvement and leaves the
/// model holding its best-validation state.
pub fn fit<M: Trainable + ?Sized>(model: &M, train: &[SampleWindow], val: &[SampleWindow], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::data("training and validation sets must be non-empty"));
    }
    let params = model.trainable_parameters();
    let mut adam = Adam::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let started = Instant::now();
    let mut epochs = Vec::new();
    let mut best = (0usize, f64::INFINITY, model.state());
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            // batch statistics need at least two samples
            if chunk.len() < 2 {
                continue;
            }
            let refs: Vec<&SampleWindow> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = Batch::from_samples(&refs)?;
            let at = |e: Error| match e {
                Error::Numeric(m) => Error::numeric(format!("epoch {epoch}, batch {bi}: {m}")),
                other => other,
            };
            let pred = model.forward_batch(&batch, true).map_err(at)?;
            let loss = mae(&pred, &batch.y)?;
            let value = loss.item()?;
            if !value.is_finite() {
                return Err(Error::numeric(format!("non-finite loss {value} at epoch {epoch}, batch {bi}")));
            }
            params.iter().for_each(|p| p.zero_grad());
            loss.backward()?;
            adam.step(&params, cfg.lr, cfg.grad_clip).map_err(at)?;
            loss_sum += value * chunk.len() as f64;
            seen += chunk.len();
        }
        let val_mae = evaluate_mae(model, val, cfg.batch_size)?;
        if !val_mae.is_finite() {
            return Err(Error::numeric(format!("non-finite validation MAE at epoch {epoch}")));
        }
        let wall_seconds = if cfg.record_wall_time { started.elapsed().as_secs_f64() } else { 0.0 };
        let train_mae = if seen > 0 { loss_sum / seen as f64 } else { f64::NAN };
        epochs.push(EpochMetrics { epoch, train_mae, val_mae, wall_seconds });
        if val_mae < best.1 {
            best = (epoch, val_mae, model.state());
        } else if epoch - best.0 >= cfg.patience {
            break;
        }
    }
    model.load_state(&best.2)?;
    Ok(TrainReport {
        epochs,
        best_epoch: best.0,
        best_val_mae: best.1,
        wall_time: started.elapsed().as_secs_f64(),
        best_state: best.2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::Rng;

    #[test]
    fn mae_values_and_ties() {
        let p = Tensor::param(vec![1.0, 0.0], &[2]).unwrap();
        let t = Tensor::new(vec![0.0, 2.0], &[2]).unwrap();
        let l = mae(&p, &t).unwrap();
        assert_eq!(l.item().unwrap(), 1.5);
        l.backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![0.5, -0.5]);
        let q = Tensor::param(vec![3.0], &[1]).unwrap();
        let l = mae(&q, &Tensor::new(vec![3.0], &[1]).unwrap()).unwrap();
        assert_eq!(l.item().unwrap(), 0.0);
        l.backward().unwrap();
        assert_eq!(q.grad().unwrap(), vec![0.0]);
        assert!(matches!(mae(&p, &q), Err(Error::Config(_))));
    }

    #[test]
    fn mae_matches_loop_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pv: Vec<f64> = (0..40).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let tv: Vec<f64> = (0..40).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let want = pv.iter().zip(&tv).map(|(a, b)| (a - b).abs()).sum::<f64>() / 40.0;
        let p = Tensor::param(pv, &[4, 10]).unwrap();
        let t = Tensor::new(tv, &[4, 10]).unwrap();
        assert!((mae(&p, &t).unwrap().item().unwrap() - want).abs() < 1e-12);
        let err = grad_check(|| mae(&p, &t), &[p.clone()], 1e-6).unwrap().max_rel_error;
        assert!(err < 1e-6);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let p = Tensor::param(vec![1.0, -1.0], &[2]).unwrap();
        let mut opt = Adam::new(&[p.clone()]);
        p.square().unwrap().sum().backward().unwrap();
        opt.step(&[p.clone()], 0.1, None).unwrap();
        let v = p.to_vec();
        assert!((v[0] - 0.9).abs() < 1e-6 && (v[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn clipping_bounds_the_update_direction() {
        let p = Tensor::param(vec![100.0], &[1]).unwrap();
        let mut opt = Adam::new(&[p.clone()]);
        p.square().unwrap().sum().backward().unwrap();
        let norm = opt.step(&[p.clone()], 0.01, Some(5.0)).unwrap();
        assert!((norm - 200.0).abs() < 1e-9);
        assert!(p.to_vec()[0] < 100.0);
    }

    struct Linear {
        w: Tensor,
        b: Tensor,
    }

    impl Linear {
        fn new() -> Linear {
            Linear { w: Tensor::param(vec![0.3], &[1, 1]).unwrap(), b: Tensor::param(vec![-0.2], &[1]).unwrap() }
        }
    }

    impl Trainable for Linear {
        fn forward_batch(&self, batch: &Batch, _training: bool) -> Result<Tensor> {
            batch.x1.channel_linear(&self.w, &self.b)
        }
        fn trainable_parameters(&self) -> Vec<Tensor> {
            vec![self.w.clone(), self.b.clone()]
        }
        fn state(&self) -> Vec<(String, Vec<f64>)> {
            vec![("w".into(), self.w.to_vec()), ("b".into(), self.b.to_vec())]
        }
        fn load_state(&self, state: &[(String, Vec<f64>)]) -> Result<()> {
            self.w.set_data(&state[0].1)?;
            self.b.set_data(&state[1].1)
        }
    }

    fn point(x: f64, y: f64) -> SampleWindow {
        SampleWindow {
            start: 0,
            end: 0,
            step_minutes: 1,
            past_steps: 1,
            future_steps: 1,
            x1: vec![x],
            x2: vec![0.0],
            y: vec![y],
            anchor: 0.0,
            group_stats: vec![],
            target_groups: vec![0],
        }
    }

    fn line(n: usize, seed: u64) -> Vec<SampleWindow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x = rng.gen_range(-1.0..1.0);
                point(x, 2.0 * x + 1.0)
            })
            .collect()
    }

    #[test]
    fn recovers_slope_and_intercept() {
        let m = Linear::new();
        let cfg = TrainConfig { lr: 0.02, batch_size: 16, patience: 40, ..Default::default() };
        let r = fit(&m, &line(256, 1), &line(64, 2), &cfg).unwrap();
        assert!(r.epochs.len() <= 500);
        assert!((m.w.to_vec()[0] - 2.0).abs() < 1e-2, "w = {:?}", m.w.to_vec());
        assert!((m.b.to_vec()[0] - 1.0).abs() < 1e-2, "b = {:?}", m.b.to_vec());
        assert!(r.best_val_mae < 1e-2);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters_and_stops_on_patience() {
        let m = Linear::new();
        let cfg = TrainConfig { lr: 0.0, patience: 7, batch_size: 8, ..Default::default() };
        let r = fit(&m, &line(40, 1), &line(10, 2), &cfg).unwrap();
        assert_eq!(m.w.to_vec(), vec![0.3]);
        assert_eq!(m.b.to_vec(), vec![-0.2]);
        let curve = r.val_curve();
        assert!(curve.iter().all(|v| *v == curve[0]));
        assert_eq!(r.best_epoch, 1);
        assert_eq!(r.epochs.len(), 1 + 7);
    }

    #[test]
    fn restores_best_state() {
        let m = Linear::new();
        // validation data from a different line so training overshoots it
        let val: Vec<SampleWindow> = line(20, 5).into_iter().map(|w| point(w.x1[0], -w.x1[0])).collect();
        let cfg = TrainConfig { lr: 0.05, patience: 5, batch_size: 8, ..Default::default() };
        let r = fit(&m, &line(64, 1), &val, &cfg).unwrap();
        assert!(r.best_epoch < r.epochs.len());
        assert_eq!(r.epochs.len(), r.best_epoch + 5);
        assert_eq!(m.state(), r.best_state);
        assert_eq!(evaluate_mae(&m, &val, 8).unwrap(), r.best_val_mae);
    }

    #[test]
    fn same_seed_same_report() {
        let cfg = TrainConfig { lr: 0.01, max_epochs: 15, batch_size: 8, ..Default::default() };
        let a = fit(&Linear::new(), &line(50, 1), &line(10, 2), &cfg).unwrap();
        let b = fit(&Linear::new(), &line(50, 1), &line(10, 2), &cfg).unwrap();
        assert_eq!(a.metrics_csv(), b.metrics_csv());
        assert_eq!(a.best_state, b.best_state);
    }

    #[test]
    fn nan_input_is_a_numeric_error_naming_the_epoch() {
        let mut train = line(16, 1);
        train[3].x1[0] = f64::NAN;
        let cfg = TrainConfig { batch_size: 32, ..Default::default() };
        match fit(&Linear::new(), &train, &line(4, 2), &cfg) {
            Err(Error::Numeric(m)) => assert!(m.contains("epoch 1"), "{m}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn small_step_decreases_delaynet_loss() {
        use crate::model::DelayNetConfig;
        let cfg = DelayNetConfig::d_aff_aff_gau(2, 12, 6, 1, 1);
        let net = DelayNet::build(&cfg, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut gen = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let batch = Batch {
            x1: Tensor::new(gen(8 * 2 * 12), &[8, 2, 12]).unwrap(),
            x2: Tensor::new(gen(8 * 6), &[8, 1, 6]).unwrap(),
            y: Tensor::new(gen(8 * 6), &[8, 1, 6]).unwrap(),
        };
        let params = net.trainable_parameters();
        let mut opt = Adam::new(&params);
        let before = mae(&net.forward_batch(&batch, true).unwrap(), &batch.y).unwrap();
        before.backward().unwrap();
        opt.step(&params, 1e-6, Some(5.0)).unwrap();
        let after = mae(&net.forward_batch(&batch, true).unwrap(), &batch.y).unwrap();
        assert!(after.item().unwrap() < before.item().unwrap());
        assert!(params.iter().all(|p| p.data().iter().all(|v| v.is_finite())));
    }
}
