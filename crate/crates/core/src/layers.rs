//! Network building blocks: filter banks, batch norm, channel aggregators
//! and temporal aggregation.

use std::sync::Arc;

use parking_lot::RwLock;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NormAxis, Padding, Tensor};
use crate::error::{Error, Result};
use crate::kernels::{
    affine_coords, affine_warp, full_support, gabor_at, gabor_kernel, gabor_polar, gabor_response, gauss_at,
    gauss_kernel, lognormal_at, lognormal_kernel, KernelFamily, KernelParams, GABOR_BANDWIDTH, GABOR_EPS,
};

/// Shared handle to a non-learnable state vector (batch-norm running stats).
pub type Buffer = Arc<RwLock<Vec<f64>>>;

/// Anything holding named learnable tensors and state buffers.
pub trait Module {
    fn parameters(&self, prefix: &str, out: &mut Vec<(String, Tensor)>);

    fn buffers(&self, _prefix: &str, _out: &mut Vec<(String, Buffer)>) {}

    fn param_count(&self) -> usize {
        let mut v = Vec::new();
        self.parameters("", &mut v);
        v.iter().map(|(_, t)| t.numel()).sum()
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch normalization with learnable scale/shift and running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub axis: NormAxis,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Buffer,
    pub running_var: Buffer,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    /// `stats` values: one per channel, or one per (channel, time) cell.
    pub fn new(axis: NormAxis, stats: usize) -> BatchNorm {
        BatchNorm {
            axis,
            gamma: Tensor::param(vec![1.0; stats], &[stats]).expect("shape"),
            beta: Tensor::param(vec![0.0; stats], &[stats]).expect("shape"),
            running_mean: Arc::new(RwLock::new(vec![0.0; stats])),
            running_var: Arc::new(RwLock::new(vec![1.0; stats])),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    /// Training mode normalizes with batch statistics and updates the running
    /// averages; evaluation mode uses the running averages.
    pub fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        if training {
            let (y, stats) = x.batch_norm_train(&self.gamma, &self.beta, self.axis, self.eps)?;
            let m = self.momentum;
            for (r, v) in self.running_mean.write().iter_mut().zip(&stats.mean) {
                *r = (1.0 - m) * *r + m * v;
            }
            for (r, v) in self.running_var.write().iter_mut().zip(&stats.var) {
                *r = (1.0 - m) * *r + m * v;
            }
            Ok(y)
        } else {
            let mean = self.running_mean.read().clone();
            let var = self.running_var.read().clone();
            x.batch_norm_eval(&self.gamma, &self.beta, &mean, &var, self.axis, self.eps)
        }
    }
}

impl Module for BatchNorm {
    fn parameters(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "gamma"), self.gamma.clone()));
        out.push((join(prefix, "beta"), self.beta.clone()));
    }

    fn buffers(&self, prefix: &str, out: &mut Vec<(String, Buffer)>) {
        out.push((join(prefix, "running_mean"), self.running_mean.clone()));
        out.push((join(prefix, "running_var"), self.running_var.clone()));
    }
}

/// How a filter bank maps its input onto the time axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankMode {
    /// `n` filters per input channel, each slid across the whole input.
    PerFeature,
    /// One filter per (channel, output step), each looking at the whole input.
    PerCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterBankConfig {
    pub family: KernelFamily,
    #[serde(default = "one")]
    pub n_filters: usize,
    #[serde(default = "per_feature")]
    pub mode: BankMode,
    #[serde(default = "yes")]
    pub batchnorm: bool,
    /// Kernel length for per-feature banks; defaults to the largest odd
    /// length fitting the input.
    #[serde(default)]
    pub support: Option<usize>,
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn per_feature() -> BankMode {
    BankMode::PerFeature
}

impl FilterBankConfig {
    pub fn new(family: KernelFamily, n_filters: usize) -> FilterBankConfig {
        FilterBankConfig { family, n_filters, mode: BankMode::PerFeature, batchnorm: true, support: None }
    }

    pub fn per_cell(family: KernelFamily) -> FilterBankConfig {
        FilterBankConfig { family, n_filters: 1, mode: BankMode::PerCell, batchnorm: true, support: None }
    }
}

/// A bank of learnable filters of one family.
#[derive(Debug, Clone)]
pub struct FilterBank {
    pub config: FilterBankConfig,
    pub in_channels: usize,
    pub in_len: usize,
    pub out_len: usize,
    pub support: usize,
    pub params: KernelParams,
    pub bn: Option<BatchNorm>,
}

impl FilterBank {
    /// `out_len` is only used in per-cell mode; per-feature banks keep the
    /// input length.
    pub fn new<R: Rng + ?Sized>(
        config: FilterBankConfig,
        in_channels: usize,
        in_len: usize,
        out_len: usize,
        rng: &mut R,
    ) -> Result<FilterBank> {
        let family = config.family;
        if in_channels == 0 || in_len == 0 {
            return Err(Error::config("filter bank input must be non-empty"));
        }
        if config.n_filters == 0 {
            return Err(Error::config("filter bank needs at least one filter"));
        }
        if family == KernelFamily::Gabor && in_len < 5 {
            return Err(Error::config(format!("Gabor filters need input length >= 5, got {in_len}")));
        }
        let n = if family == KernelFamily::Identity { 1 } else { config.n_filters };
        let (count, out_len) = match config.mode {
            BankMode::PerFeature => (in_channels * n, in_len),
            BankMode::PerCell => {
                if out_len == 0 {
                    return Err(Error::config("per-cell bank needs a positive output length"));
                }
                if family == KernelFamily::Identity && out_len > in_len {
                    return Err(Error::config(format!(
                        "identity cannot stretch {in_len} steps to {out_len}"
                    )));
                }
                (in_channels * n * out_len, out_len)
            }
        };
        let support = config.support.unwrap_or_else(|| full_support(in_len));
        if support % 2 == 0 || support == 0 || support > 2 * in_len {
            return Err(Error::config(format!("invalid kernel support {support} for input length {in_len}")));
        }
        let params = KernelParams::init(family, count, in_len, rng);
        let out_channels = if family == KernelFamily::Identity {
            in_channels
        } else {
            in_channels * n * family.channel_multiplier()
        };
        let bn = (config.batchnorm && family != KernelFamily::Identity).then(|| match config.mode {
            BankMode::PerFeature => BatchNorm::new(NormAxis::PerChannel, out_channels),
            BankMode::PerCell => BatchNorm::new(NormAxis::PerCell, out_channels * out_len),
        });
        Ok(FilterBank { config, in_channels, in_len, out_len, support, params, bn })
    }

    fn n(&self) -> usize {
        if self.config.family == KernelFamily::Identity {
            1
        } else {
            self.config.n_filters
        }
    }

    pub fn out_channels(&self) -> usize {
        if self.config.family == KernelFamily::Identity {
            self.in_channels
        } else {
            self.in_channels * self.n() * self.config.family.channel_multiplier()
        }
    }

    pub fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        match x.shape() {
            &[_, c, s] if c == self.in_channels && s == self.in_len => {}
            other => {
                return Err(Error::config(format!(
                    "filter bank expects [B,{},{}], got {other:?}",
                    self.in_channels, self.in_len
                )))
            }
        }
        let y = match self.config.mode {
            BankMode::PerFeature => self.per_feature(x),
            BankMode::PerCell => self.per_cell(x),
        }
        .map_err(|e| self.annotate(e))?;
        match &self.bn {
            Some(bn) => bn.forward(&y, training),
            None => Ok(y),
        }
    }

    fn annotate(&self, e: Error) -> Error {
        match e {
            Error::Numeric(msg) => Error::numeric(format!("{msg} ({})", self.params.describe())),
            other => other,
        }
    }

    fn per_feature(&self, x: &Tensor) -> Result<Tensor> {
        let p = &self.params;
        let xr = x.repeat_channels(self.n())?;
        match self.config.family {
            KernelFamily::Identity => Ok(x.clone()),
            KernelFamily::Affine => affine_warp(&xr, p),
            KernelFamily::Gauss => xr.conv1d_depthwise(&gauss_kernel(p, self.support)?, Padding::SameZero),
            KernelFamily::LogNormal => {
                xr.conv1d_depthwise(&lognormal_kernel(p, self.support)?, Padding::SameZero)
            }
            KernelFamily::Gabor => {
                let (re, im) = gabor_kernel(p, self.in_len, GABOR_BANDWIDTH, self.support)?;
                let (mag, ang) = gabor_response(&xr, &re, &im, GABOR_EPS)?;
                Tensor::concat_channels(&[mag, ang])
            }
        }
    }

    /// Cell `tau` is anchored at input position `S - T + tau`, so neutral
    /// parameters reproduce the last `T` input steps.
    fn anchor(&self, tau: usize) -> f64 {
        self.in_len as f64 - self.out_len as f64 + tau as f64
    }

    fn per_cell(&self, x: &Tensor) -> Result<Tensor> {
        let (s, t) = (self.in_len, self.out_len);
        let family = self.config.family;
        if family == KernelFamily::Identity {
            return x.crop_time(s - t, t);
        }
        let p = &self.params;
        let xr = x.repeat_channels(self.n())?;
        let rows = self.in_channels * self.n();
        match family {
            KernelFamily::Identity => unreachable!(),
            // Scaling is anchored at the cell itself: src = u_tau + a * t.
            // A window-centred anchor sends most cells out of range at
            // init, where they read zeros and never get a gradient.
            KernelFamily::Affine => {
                let zero = Tensor::new(vec![0.0; rows * t], &[rows * t, 1])?;
                let anchors: Vec<f64> = (0..rows).flat_map(|_| (0..t).map(|tau| self.anchor(tau))).collect();
                let coords = affine_coords(p, &zero, 0.0)?.add(&Tensor::new(anchors, &[rows * t, 1])?)?.reshape(&[rows, t])?;
                xr.sample_linear(&coords)
            }
            _ => {
                let mut offsets = Vec::with_capacity(rows * t * s);
                for _ in 0..rows {
                    for tau in 0..t {
                        let u = self.anchor(tau);
                        offsets.extend((0..s).map(|i| i as f64 - u));
                    }
                }
                let offsets = Tensor::new(offsets, &[rows * t, s])?;
                match family {
                    KernelFamily::Gauss => xr.cell_dot(&gauss_at(p, &offsets)?.reshape(&[rows, t, s])?),
                    KernelFamily::LogNormal => xr.cell_dot(&lognormal_at(p, &offsets)?.reshape(&[rows, t, s])?),
                    KernelFamily::Gabor => {
                        let (re, im) = gabor_at(p, &offsets, s, GABOR_BANDWIDTH)?;
                        let o_re = xr.cell_dot(&re.reshape(&[rows, t, s])?)?;
                        let o_im = xr.cell_dot(&im.reshape(&[rows, t, s])?)?;
                        let (mag, ang) = gabor_polar(&o_re, &o_im, GABOR_EPS)?;
                        Tensor::concat_channels(&[mag, ang])
                    }
                    _ => unreachable!(),
                }
            }
        }
    }
}

impl Module for FilterBank {
    fn parameters(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (name, t) in self.params.tensors() {
            out.push((join(prefix, name), t));
        }
        if let Some(bn) = &self.bn {
            bn.parameters(&join(prefix, "bn"), out);
        }
    }

    fn buffers(&self, prefix: &str, out: &mut Vec<(String, Buffer)>) {
        if let Some(bn) = &self.bn {
            bn.buffers(&join(prefix, "bn"), out);
        }
    }
}

/// Glorot-uniform matrix `[fan_out, fan_in]`.
fn glorot<R: Rng + ?Sized>(fan_out: usize, fan_in: usize, rng: &mut R) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_out * fan_in).map(|_| rng.gen_range(-limit..limit)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorConfig {
    /// Hidden layers between input and output.
    pub n_intermediate: usize,
    /// Hidden width as a multiple of the input width.
    #[serde(default = "unit")]
    pub expansion: f64,
}

fn unit() -> f64 {
    1.0
}

impl AggregatorConfig {
    pub fn new(n_intermediate: usize, expansion: f64) -> AggregatorConfig {
        AggregatorConfig { n_intermediate, expansion }
    }
}

/// Per-time-step MLP over the channel axis: `[B,C,L] -> [B,O,L]`.
/// Hidden layers use LeakyReLU; the output layer is linear. Biases start at
/// zero.
#[derive(Debug, Clone)]
pub struct Aggregator {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl Aggregator {
    pub fn new<R: Rng + ?Sized>(
        config: AggregatorConfig,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Result<Aggregator> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::config("aggregator widths must be positive"));
        }
        if !(config.expansion > 0.0) || !config.expansion.is_finite() {
            return Err(Error::config(format!("aggregator expansion must be positive, got {}", config.expansion)));
        }
        let hidden = ((config.expansion * in_channels as f64).round() as usize).max(1);
        let mut widths = vec![in_channels];
        widths.extend(std::iter::repeat(hidden).take(config.n_intermediate));
        widths.push(out_channels);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in widths.windows(2) {
            weights.push(Tensor::param(glorot(w[1], w[0], rng), &[w[1], w[0]])?);
            biases.push(Tensor::param(vec![0.0; w[1]], &[w[1]])?);
        }
        Ok(Aggregator { weights, biases })
    }

    pub fn in_channels(&self) -> usize {
        self.weights[0].shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weights.last().expect("at least one layer").shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let last = self.weights.len() - 1;
        let mut h = x.clone();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.channel_linear(w, b)?;
            if i < last {
                h = h.leaky_relu()?;
            }
        }
        Ok(h)
    }
}

impl Module for Aggregator {
    fn parameters(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push((join(prefix, &format!("{i}.weight")), w.clone()));
            out.push((join(prefix, &format!("{i}.bias")), b.clone()));
        }
    }
}

/// Left-padded convolution followed by a crop of the last `out_len` steps.
#[derive(Debug, Clone)]
pub struct CausalConv {
    pub weight: Tensor,
    pub out_len: usize,
}

pub const CAUSAL_KERNEL: usize = 9;

impl CausalConv {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        out_len: usize,
        rng: &mut R,
    ) -> Result<CausalConv> {
        if kernel == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::config("causal conv dimensions must be positive"));
        }
        let limit = (6.0 / ((in_channels + out_channels) * kernel) as f64).sqrt();
        let w = (0..out_channels * in_channels * kernel).map(|_| rng.gen_range(-limit..limit)).collect();
        Ok(CausalConv { weight: Tensor::param(w, &[out_channels, in_channels, kernel])?, out_len })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape().get(2).copied().unwrap_or(0);
        if self.out_len > s {
            return Err(Error::config(format!("causal conv cannot produce {} steps from {s}", self.out_len)));
        }
        x.causal_conv(&self.weight)?.crop_time(s - self.out_len, self.out_len)
    }
}

impl Module for CausalConv {
    fn parameters(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
    }
}

/// Maps past features `[B,C,S]` onto the future horizon `[B,C',T]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalKind {
    Identity,
    Affine,
    Gauss,
    #[serde(alias = "loggauss")]
    LogNormal,
    Gabor,
    CausalConv,
}

impl TemporalKind {
    pub fn family(self) -> Option<KernelFamily> {
        match self {
            TemporalKind::Identity => Some(KernelFamily::Identity),
            TemporalKind::Affine => Some(KernelFamily::Affine),
            TemporalKind::Gauss => Some(KernelFamily::Gauss),
            TemporalKind::LogNormal => Some(KernelFamily::LogNormal),
            TemporalKind::Gabor => Some(KernelFamily::Gabor),
            TemporalKind::CausalConv => None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum TemporalAggregator {
    Cells(FilterBank),
    Conv(CausalConv),
}

impl TemporalAggregator {
    pub fn new<R: Rng + ?Sized>(
        kind: TemporalKind,
        channels: usize,
        in_len: usize,
        out_len: usize,
        rng: &mut R,
    ) -> Result<TemporalAggregator> {
        match kind.family() {
            Some(family) => Ok(TemporalAggregator::Cells(FilterBank::new(
                // One scalar filter per cell: batch statistics per cell are noisy
                // and the following aggregator already rescales.
                FilterBankConfig { batchnorm: false, ..FilterBankConfig::per_cell(family) },
                channels,
                in_len,
                out_len,
                rng,
            )?)),
            None => Ok(TemporalAggregator::Conv(CausalConv::new(channels, channels, CAUSAL_KERNEL, out_len, rng)?)),
        }
    }

    pub fn out_channels(&self, in_channels: usize) -> usize {
        match self {
            TemporalAggregator::Cells(b) => b.out_channels(),
            TemporalAggregator::Conv(_) => in_channels,
        }
    }

    pub fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        match self {
            TemporalAggregator::Cells(b) => b.forward(x, training),
            TemporalAggregator::Conv(c) => c.forward(x),
        }
    }
}

impl Module for TemporalAggregator {
    fn parameters(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        match self {
            TemporalAggregator::Cells(b) => b.parameters(prefix, out),
            TemporalAggregator::Conv(c) => c.parameters(prefix, out),
        }
    }

    fn buffers(&self, prefix: &str, out: &mut Vec<(String, Buffer)>) {
        if let TemporalAggregator::Cells(b) = self {
            b.buffers(prefix, out);
        }
    }
}

/// One-shot temporal aggregation with freshly initialized parameters.
pub fn temporal_aggregate<R: Rng + ?Sized>(
    kind: TemporalKind,
    x: &Tensor,
    out_len: usize,
    rng: &mut R,
) -> Result<Tensor> {
    let &[_, c, s] = x.shape() else {
        return Err(Error::config(format!("temporal_aggregate expects [B,C,S], got {:?}", x.shape())));
    };
    TemporalAggregator::new(kind, c, s, out_len, rng)?.forward(x, false)
}
