//! Plain-text checkpoints. Values are written in hexadecimal float notation
//! so every `f64` survives the round trip exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datapipe::PreprocessConfig;
use crate::error::{Error, Result};
use crate::model::{DelayNet, DelayNetConfig};
use crate::train::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "delaynet-checkpoint";

/// One stored array.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Configuration echoed into every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigEcho {
    pub model: DelayNetConfig,
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ConfigEcho,
    /// Parameters followed by batch-norm running statistics.
    pub arrays: Vec<NamedArray>,
    pub best_val_mae: f64,
    pub seed: u64,
}

impl Checkpoint {
    /// Captures the current state of `net`.
    pub fn capture(net: &DelayNet, train: &TrainConfig, preprocess: &PreprocessConfig, best_val_mae: f64, seed: u64) -> Checkpoint {
        let mut arrays: Vec<NamedArray> = net
            .named_parameters()
            .into_iter()
            .map(|(name, t)| NamedArray { name, shape: t.shape().to_vec(), values: t.to_vec() })
            .collect();
        arrays.extend(net.named_buffers().into_iter().map(|(name, b)| {
            let values = b.read().clone();
            NamedArray { name, shape: vec![values.len()], values }
        }));
        Checkpoint {
            format_version: FORMAT_VERSION,
            config: ConfigEcho { model: net.config.clone(), train: train.clone(), preprocess: preprocess.clone() },
            arrays,
            best_val_mae,
            seed,
        }
    }

    /// Rebuilds the network and loads the stored values.
    pub fn to_net(&self) -> Result<DelayNet> {
        let net = DelayNet::build(&self.config.model, self.seed)?;
        for (a, (name, t)) in self.arrays.iter().zip(net.named_parameters()) {
            if a.name == name && a.shape != t.shape() {
                return Err(Error::data(format!("array {name}: stored shape {:?}, model {:?}", a.shape, t.shape())));
            }
        }
        let values: Vec<(String, Vec<f64>)> = self.arrays.iter().map(|a| (a.name.clone(), a.values.clone())).collect();
        net.restore(&values)?;
        Ok(net)
    }

    pub fn to_text(&self) -> Result<String> {
        let mut s = String::new();
        let config = toml::to_string(&self.config).map_err(|e| Error::config(format!("config echo: {e}")))?;
        writeln!(s, "{MAGIC} {}", self.format_version).unwrap();
        writeln!(s, "seed {}", self.seed).unwrap();
        writeln!(s, "best_val_mae {}", hex_f64(self.best_val_mae)).unwrap();
        writeln!(s, "config {}", config.lines().count()).unwrap();
        s.push_str(&config);
        if !config.ends_with('\n') {
            s.push('\n');
        }
        writeln!(s, "arrays {}", self.arrays.len()).unwrap();
        for a in &self.arrays {
            let dims: Vec<String> = a.shape.iter().map(|d| d.to_string()).collect();
            writeln!(s, "array {} {}", a.name, dims.join("x")).unwrap();
            for row in a.values.chunks(8) {
                let cells: Vec<String> = row.iter().map(|v| hex_f64(*v)).collect();
                writeln!(s, "{}", cells.join(" ")).unwrap();
            }
        }
        s.push_str("end\n");
        Ok(s)
    }

    pub fn from_text(text: &str) -> Result<Checkpoint> {
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::data(format!("checkpoint truncated before {what}")));
        let header = next("header")?;
        let version = header
            .strip_prefix(MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| Error::data("not a delaynet checkpoint"))?;
        if version != FORMAT_VERSION {
            return Err(Error::data(format!("unsupported checkpoint version {version}")));
        }
        let seed = field(next("seed")?, "seed")?.parse::<u64>().map_err(|e| Error::data(format!("seed: {e}")))?;
        let best_val_mae = parse_hex_f64(field(next("best_val_mae")?, "best_val_mae")?)?;
        let n_config = count(field(next("config")?, "config")?)?;
        let mut config = String::new();
        for _ in 0..n_config {
            config.push_str(next("config body")?);
            config.push('\n');
        }
        let config: ConfigEcho = toml::from_str(&config).map_err(|e| Error::data(format!("checkpoint config: {e}")))?;
        let n_arrays = count(field(next("arrays")?, "arrays")?)?;
        let mut arrays = Vec::with_capacity(n_arrays);
        for _ in 0..n_arrays {
            let head = field(next("array header")?, "array")?;
            let (name, dims) = head.split_once(' ').ok_or_else(|| Error::data(format!("bad array header {head:?}")))?;
            let shape = dims.split('x').map(count).collect::<Result<Vec<usize>>>()?;
            let n: usize = shape.iter().product();
            let mut values = Vec::with_capacity(n);
            while values.len() < n {
                for cell in next("array values")?.split_whitespace() {
                    values.push(parse_hex_f64(cell)?);
                }
            }
            if values.len() != n {
                return Err(Error::data(format!("array {name}: {} values for shape {shape:?}", values.len())));
            }
            arrays.push(NamedArray { name: name.to_string(), shape, values });
        }
        if next("end")? != "end" {
            return Err(Error::data("checkpoint has trailing content"));
        }
        Ok(Checkpoint { format_version: version, config, arrays, best_val_mae, seed })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_text(&std::fs::read_to_string(path)?)
    }
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::data(format!("expected {key:?} line, found {line:?}")))
}

fn count(s: &str) -> Result<usize> {
    s.trim().parse::<usize>().map_err(|e| Error::data(format!("bad count {s:?}: {e}")))
}

/// Formats a float as `[-]0x1.<13 hex digits>p<exp>` (subnormals use `0x0.`).
pub fn hex_f64(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    match (exp, frac) {
        (0, 0) => format!("{sign}0x0p+0"),
        (0, f) => format!("{sign}0x0.{f:013x}p-1022"),
        (e, f) => format!("{sign}0x1.{f:013x}p{:+}", e - 1023),
    }
}

/// Parses the output of [`hex_f64`].
pub fn parse_hex_f64(s: &str) -> Result<f64> {
    let bad = || Error::data(format!("bad hex float {s:?}"));
    match s {
        "nan" => return Ok(f64::NAN),
        "inf" => return Ok(f64::INFINITY),
        "-inf" => return Ok(f64::NEG_INFINITY),
        _ => {}
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s),
    };
    let body = body.strip_prefix("0x").ok_or_else(bad)?;
    let (mant, exp) = body.split_once('p').ok_or_else(bad)?;
    let exp: i64 = exp.parse().map_err(|_| bad())?;
    let (lead, frac) = match mant.split_once('.') {
        Some((l, f)) => (l, f),
        None => (mant, ""),
    };
    if frac.len() > 13 {
        return Err(bad());
    }
    let frac = if frac.is_empty() { 0 } else { u64::from_str_radix(frac, 16).map_err(|_| bad())? << (4 * (13 - frac.len())) };
    let bits = match lead {
        "1" => {
            let e = exp + 1023;
            if !(1..=2046).contains(&e) {
                return Err(bad());
            }
            ((e as u64) << 52) | frac
        }
        "0" if frac == 0 => 0,
        "0" if exp == -1022 => frac,
        _ => return Err(bad()),
    };
    let v = f64::from_bits(bits);
    Ok(if neg { -v } else { v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use proptest::prelude::*;

    #[test]
    fn hex_known_values() {
        assert_eq!(hex_f64(1.0), "0x1.0000000000000p+0");
        assert_eq!(hex_f64(-0.5), "-0x1.0000000000000p-1");
        assert_eq!(hex_f64(0.0), "0x0p+0");
        assert_eq!(parse_hex_f64("-0x0p+0").unwrap().to_bits(), (-0.0f64).to_bits());
        assert_eq!(parse_hex_f64(&hex_f64(f64::MIN_POSITIVE / 8.0)).unwrap(), f64::MIN_POSITIVE / 8.0);
        assert_eq!(parse_hex_f64("0x1.8p+1").unwrap(), 3.0);
        assert!(parse_hex_f64("0x2.0p+0").is_err());
        assert!(parse_hex_f64("1.5").is_err());
    }

    proptest! {
        #[test]
        fn hex_round_trips_every_finite_value(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            prop_assert_eq!(parse_hex_f64(&hex_f64(v)).unwrap().to_bits(), bits);
        }
    }

    #[test]
    fn round_trip_reproduces_forward_bit_exactly() {
        let cfg = DelayNetConfig::d_aff_aff_gau(2, 12, 6, 1, 1);
        let net = DelayNet::build(&cfg, 3).unwrap();
        let x1 = Tensor::new((0..48).map(|i| (i as f64 * 0.37).sin()).collect(), &[2, 2, 12]).unwrap();
        let x2 = Tensor::new((0..12).map(|i| (i as f64 * 0.11).cos()).collect(), &[2, 1, 6]).unwrap();
        // move the running statistics away from their initial values
        net.forward(&x1, &x2, true).unwrap();
        let ck = Checkpoint::capture(&net, &TrainConfig::default(), &PreprocessConfig::default(), 0.125, 3);
        let text = ck.to_text().unwrap();
        let back = Checkpoint::from_text(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_text().unwrap(), text);
        let net2 = back.to_net().unwrap();
        let a = net.forward(&x1, &x2, false).unwrap().to_vec();
        let b = net2.forward(&x1, &x2, false).unwrap().to_vec();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_damaged_files() {
        let cfg = DelayNetConfig::d_aff_aff_gau(2, 12, 6, 1, 1);
        let net = DelayNet::build(&cfg, 0).unwrap();
        let text = Checkpoint::capture(&net, &TrainConfig::default(), &PreprocessConfig::default(), 1.0, 0).to_text().unwrap();
        assert!(matches!(Checkpoint::from_text(&text.replace(" 1\nseed", " 9\nseed")), Err(Error::Data(_))));
        let cut = &text[..text.len() / 2];
        assert!(matches!(Checkpoint::from_text(cut), Err(Error::Data(_))));
        assert!(matches!(Checkpoint::from_text("hello"), Err(Error::Data(_))));
    }
}
