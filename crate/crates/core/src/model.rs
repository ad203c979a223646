//! The delay network: low filter bank, channel aggregation, temporal
//! aggregation onto the horizon, high filter bank and output aggregation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::kernels::KernelFamily;
use crate::layers::{
    Aggregator, AggregatorConfig, BankMode, Buffer, FilterBank, FilterBankConfig, Module, TemporalAggregator,
    TemporalKind,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayNetConfig {
    /// Channels of the past input `x1`.
    pub n_features: usize,
    /// Past window length `S`.
    pub past_steps: usize,
    /// Horizon `T`.
    pub future_steps: usize,
    /// Channels of the known future commands `x2`.
    pub n_commands: usize,
    /// Predicted channels.
    pub n_targets: usize,
    /// Width `Fc` of the low aggregator output.
    pub low_channels: usize,
    pub filter_low: FilterBankConfig,
    pub agg_low: AggregatorConfig,
    pub temporal: TemporalKind,
    pub filter_high: FilterBankConfig,
    pub agg_high: AggregatorConfig,
}

/// Places where a filter stage can be swapped for the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterPosition {
    Low,
    Temporal,
    High,
}

impl FilterPosition {
    pub const ALL: [FilterPosition; 3] = [FilterPosition::Low, FilterPosition::Temporal, FilterPosition::High];

    pub fn name(self) -> &'static str {
        match self {
            FilterPosition::Low => "low",
            FilterPosition::Temporal => "temporal",
            FilterPosition::High => "high",
        }
    }
}

impl DelayNetConfig {
    /// Affine low filters, affine temporal cells, Gaussian high filters.
    pub fn d_aff_aff_gau(n_features: usize, past: usize, future: usize, n_commands: usize, n_targets: usize) -> Self {
        DelayNetConfig {
            n_features,
            past_steps: past,
            future_steps: future,
            n_commands,
            n_targets,
            low_channels: 8,
            filter_low: FilterBankConfig::new(KernelFamily::Affine, 4),
            agg_low: AggregatorConfig::new(2, 1.0),
            temporal: TemporalKind::Affine,
            filter_high: FilterBankConfig::new(KernelFamily::Gauss, 8),
            agg_high: AggregatorConfig::new(2, 1.0),
        }
    }

    /// Log-normal low filters with a deeper low aggregator.
    pub fn d_log_aff_gau(n_features: usize, past: usize, future: usize, n_commands: usize, n_targets: usize) -> Self {
        DelayNetConfig {
            filter_low: FilterBankConfig::new(KernelFamily::LogNormal, 4),
            agg_low: AggregatorConfig::new(8, 1.0),
            ..Self::d_aff_aff_gau(n_features, past, future, n_commands, n_targets)
        }
    }

    /// Looks up a preset by name (`d_aff_aff_gau`, `d_log_aff_gau`).
    pub fn named(name: &str, n_features: usize, past: usize, future: usize, n_commands: usize, n_targets: usize) -> Result<Self> {
        match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "d_aff_aff_gau" | "d_affaffgau" => Ok(Self::d_aff_aff_gau(n_features, past, future, n_commands, n_targets)),
            "d_log_aff_gau" | "d_logaffgau" => Ok(Self::d_log_aff_gau(n_features, past, future, n_commands, n_targets)),
            other => Err(Error::config(format!("unknown model preset {other:?}"))),
        }
    }

    /// The same network with the given stages replaced by the identity.
    pub fn with_identity(&self, positions: &[FilterPosition]) -> Self {
        let mut c = self.clone();
        for p in positions {
            match p {
                FilterPosition::Low => c.filter_low.family = KernelFamily::Identity,
                FilterPosition::Temporal => c.temporal = TemporalKind::Identity,
                FilterPosition::High => c.filter_high.family = KernelFamily::Identity,
            }
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_features", self.n_features),
            ("past_steps", self.past_steps),
            ("future_steps", self.future_steps),
            ("n_targets", self.n_targets),
            ("low_channels", self.low_channels),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::config(format!("model {name} must be positive")));
            }
        }
        if self.filter_low.mode != BankMode::PerFeature || self.filter_high.mode != BankMode::PerFeature {
            return Err(Error::config("low and high filter banks must be per-feature"));
        }
        if self.temporal == TemporalKind::Identity && self.future_steps > self.past_steps {
            return Err(Error::config("identity temporal stage needs future_steps <= past_steps"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DelayNet {
    pub config: DelayNetConfig,
    pub filter_low: FilterBank,
    pub agg_low: Aggregator,
    pub temporal: TemporalAggregator,
    pub filter_high: FilterBank,
    pub agg_high: Aggregator,
}

impl DelayNet {
    /// Builds the network with parameters drawn from a seeded generator.
    pub fn build(config: &DelayNetConfig, seed: u64) -> Result<DelayNet> {
        config.validate()?;
        let c = config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let filter_low = FilterBank::new(c.filter_low.clone(), c.n_features, c.past_steps, 0, &mut rng)?;
        let agg_low = Aggregator::new(c.agg_low, filter_low.out_channels(), c.low_channels, &mut rng)?;
        let temporal = TemporalAggregator::new(c.temporal, c.low_channels, c.past_steps, c.future_steps, &mut rng)?;
        let high_in = temporal.out_channels(c.low_channels) + c.n_commands;
        let filter_high = FilterBank::new(c.filter_high.clone(), high_in, c.future_steps, 0, &mut rng)?;
        let agg_high = Aggregator::new(c.agg_high, filter_high.out_channels(), c.n_targets, &mut rng)?;
        Ok(DelayNet { config: c.clone(), filter_low, agg_low, temporal, filter_high, agg_high })
    }

    /// `x1 [B,F,S]`, `x2 [B,C,T]` -> `[B,Fy,T]`.
    pub fn forward(&self, x1: &Tensor, x2: &Tensor, training: bool) -> Result<Tensor> {
        let c = &self.config;
        match (x1.shape(), x2.shape()) {
            (&[b1, f, s], &[b2, cc, t])
                if b1 == b2 && f == c.n_features && s == c.past_steps && cc == c.n_commands && t == c.future_steps => {}
            (a, b) => {
                return Err(Error::config(format!(
                    "model expects x1 [B,{},{}] and x2 [B,{},{}], got {a:?} and {b:?}",
                    c.n_features, c.past_steps, c.n_commands, c.future_steps
                )))
            }
        }
        let h = self.filter_low.forward(x1, training)?;
        let h = self.agg_low.forward(&h)?.leaky_relu()?;
        let h = self.temporal.forward(&h, training)?.leaky_relu()?;
        let h = if c.n_commands > 0 { Tensor::concat_channels(&[h, x2.clone()])? } else { h };
        let h = self.filter_high.forward(&h, training)?.leaky_relu()?;
        let y = self.agg_high.forward(&h)?;
        y.ensure_finite("model output")?;
        Ok(y)
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut v = Vec::new();
        self.parameters("", &mut v);
        v
    }

    pub fn named_buffers(&self) -> Vec<(String, Buffer)> {
        let mut v = Vec::new();
        self.buffers("", &mut v);
        v
    }

    /// Copies every parameter and buffer value into a detached snapshot.
    pub fn snapshot(&self) -> Vec<(String, Vec<f64>)> {
        let mut out: Vec<(String, Vec<f64>)> =
            self.named_parameters().into_iter().map(|(n, t)| (n, t.to_vec())).collect();
        out.extend(self.named_buffers().into_iter().map(|(n, b)| (n, b.read().clone())));
        out
    }

    /// Restores values produced by [`DelayNet::snapshot`] (or a checkpoint).
    pub fn restore(&self, values: &[(String, Vec<f64>)]) -> Result<()> {
        let lookup: std::collections::HashMap<&str, &Vec<f64>> =
            values.iter().map(|(n, v)| (n.as_str(), v)).collect();
        for (name, t) in self.named_parameters() {
            let v = lookup.get(name.as_str()).ok_or_else(|| Error::data(format!("missing parameter {name}")))?;
            if v.len() != t.numel() {
                return Err(Error::data(format!("parameter {name}: {} values for {}", v.len(), t.numel())));
            }
            t.set_data(v)?;
        }
        for (name, b) in self.named_buffers() {
            let v = lookup.get(name.as_str()).ok_or_else(|| Error::data(format!("missing buffer {name}")))?;
            let mut w = b.write();
            if v.len() != w.len() {
                return Err(Error::data(format!("buffer {name}: {} values for {}", v.len(), w.len())));
            }
            w.copy_from_slice(v);
        }
        let expected = self.named_parameters().len() + self.named_buffers().len();
        if values.len() != expected {
            return Err(Error::data(format!("{} stored arrays, model has {expected}", values.len())));
        }
        Ok(())
    }
}

impl Module for DelayNet {
    fn parameters(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        let p = |s: &str| if prefix.is_empty() { s.to_string() } else { format!("{prefix}.{s}") };
        self.filter_low.parameters(&p("filter_low"), out);
        self.agg_low.parameters(&p("agg_low"), out);
        self.temporal.parameters(&p("temporal"), out);
        self.filter_high.parameters(&p("filter_high"), out);
        self.agg_high.parameters(&p("agg_high"), out);
    }

    fn buffers(&self, prefix: &str, out: &mut Vec<(String, Buffer)>) {
        let p = |s: &str| if prefix.is_empty() { s.to_string() } else { format!("{prefix}.{s}") };
        self.filter_low.buffers(&p("filter_low"), out);
        self.temporal.buffers(&p("temporal"), out);
        self.filter_high.buffers(&p("filter_high"), out);
    }
}

/// Number of learnable scalars of a configuration.
pub fn param_count(config: &DelayNetConfig) -> Result<usize> {
    Ok(DelayNet::build(config, 0)?.param_count())
}

/// Anything producing normalized forecasts `[B,Fy,T]` from a batch.
pub trait Forecaster: Sync {
    fn predict(&self, x1: &Tensor, x2: &Tensor) -> Result<Tensor>;
}

impl Forecaster for DelayNet {
    fn predict(&self, x1: &Tensor, x2: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x1, x2, false)?.detach())
    }
}

/// Predicts zero in normalized units: the anchor level persists.
#[derive(Debug, Clone, Copy)]
pub struct ZeroPredictor {
    pub n_targets: usize,
    pub future_steps: usize,
}

impl Forecaster for ZeroPredictor {
    fn predict(&self, x1: &Tensor, _x2: &Tensor) -> Result<Tensor> {
        let b = x1.shape().first().copied().unwrap_or(0);
        Ok(Tensor::zeros(&[b, self.n_targets, self.future_steps]))
    }
}

pub fn zero_predictor(config: &DelayNetConfig) -> ZeroPredictor {
    ZeroPredictor { n_targets: config.n_targets, future_steps: config.future_steps }
}
