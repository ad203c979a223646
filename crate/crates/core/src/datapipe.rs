//! Ingestion, gap filling, windowing, averaging and per-sample
//! normalization of minute-resolution sensor tables.
//!
//! Missing values are `NaN` internally and empty fields in CSV files.
//! Timestamps are whole minutes since the Unix epoch.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Feature,
    Command,
    Target,
    /// Present in the file but not used by the model.
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub role: Role,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub window_minutes: usize,
    pub stride_minutes: usize,
    /// Consecutive raw rows averaged into one step.
    pub average: usize,
    pub past_steps: usize,
    pub future_steps: usize,
    pub anchor_fraction: f64,
    pub max_gap_minutes: i64,
    /// Group whose columns are shifted by the target anchor.
    pub anchor_group: String,
    /// Share of the time span, at the end, used for validation.
    pub val_fraction: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            window_minutes: 480,
            stride_minutes: 50,
            average: 3,
            past_steps: 100,
            future_steps: 60,
            anchor_fraction: 0.2,
            max_gap_minutes: 20,
            anchor_group: "temperature".into(),
            val_fraction: 0.2,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.average == 0 || self.window_minutes % self.average != 0 {
            return Err(Error::config(format!(
                "window of {} minutes is not divisible into groups of {}",
                self.window_minutes, self.average
            )));
        }
        if self.window_minutes / self.average != self.past_steps + self.future_steps {
            return Err(Error::config(format!(
                "{} averaged steps do not equal past {} + future {}",
                self.window_minutes / self.average,
                self.past_steps,
                self.future_steps
            )));
        }
        if self.stride_minutes == 0 || self.past_steps == 0 || self.future_steps == 0 {
            return Err(Error::config("stride, past and future lengths must be positive"));
        }
        if !(self.anchor_fraction > 0.0 && self.anchor_fraction <= 1.0) {
            return Err(Error::config(format!("anchor fraction {} outside (0, 1]", self.anchor_fraction)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config(format!("validation fraction {} outside [0, 1)", self.val_fraction)));
        }
        Ok(())
    }

    /// Number of trailing past steps averaged into the anchor.
    pub fn anchor_steps(&self) -> usize {
        ((self.anchor_fraction * self.past_steps as f64).round() as usize).clamp(1, self.past_steps)
    }
}

/// Column roles, groups and preprocessing constants of one data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    pub columns: Vec<ColumnSpec>,
}

impl Manifest {
    pub fn from_toml(text: &str) -> Result<Manifest> {
        let m: Manifest = toml::from_str(text).map_err(|e| Error::config(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        Manifest::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        let mut seen = std::collections::HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::config(format!("column {} listed twice", c.name)));
            }
            if c.role == Role::Target && c.group != self.preprocess.anchor_group {
                return Err(Error::config(format!(
                    "target {} must belong to the {} group",
                    c.name, self.preprocess.anchor_group
                )));
            }
        }
        if !self.columns.iter().any(|c| c.role == Role::Target) {
            return Err(Error::config("manifest declares no target column"));
        }
        Ok(())
    }

    /// Model input columns (everything not ignored), in manifest order.
    pub fn input_columns(&self) -> Vec<&ColumnSpec> {
        self.columns.iter().filter(|c| c.role != Role::Ignore).collect()
    }

    pub fn columns_with(&self, role: Role) -> Vec<&ColumnSpec> {
        self.columns.iter().filter(|c| c.role == role).collect()
    }

    /// Group names of model inputs, in first-appearance order.
    pub fn groups(&self) -> Vec<String> {
        let mut g: Vec<String> = Vec::new();
        for c in self.input_columns() {
            if !g.contains(&c.group) {
                g.push(c.group.clone());
            }
        }
        g
    }
}

/// Timestamped columns on a regular one-minute grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    pub timestamps: Vec<i64>,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

const TIME_FORMATS: [&str; 3] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S"];

pub fn parse_minute(s: &str) -> Result<i64> {
    let s = s.trim();
    for f in TIME_FORMATS {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, f) {
            return Ok(t.and_utc().timestamp().div_euclid(60));
        }
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.timestamp().div_euclid(60));
    }
    Err(Error::data(format!("unreadable timestamp {s:?}")))
}

pub fn format_minute(m: i64) -> String {
    DateTime::from_timestamp(m * 60, 0)
        .map(|t| t.naive_utc().format("%Y-%m-%dT%H:%M").to_string())
        .unwrap_or_else(|| m.to_string())
}

impl SeriesTable {
    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::data(format!("column {name} not in table")))
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Reads a CSV with a timestamp first column and reindexes it onto a
    /// one-minute grid; absent minutes become missing rows.
    pub fn read_csv<R: Read>(reader: R) -> Result<SeriesTable> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers().map_err(|e| Error::data(format!("csv header: {e}")))?.clone();
        if header.len() < 2 {
            return Err(Error::data("csv needs a timestamp column and at least one value column"));
        }
        let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
        let mut times = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::data(format!("csv row {}: {e}", line + 2)))?;
            let t = parse_minute(&rec[0])?;
            if let Some(&prev) = times.last() {
                if t <= prev {
                    return Err(Error::data(format!(
                        "timestamps not strictly increasing at row {} ({})",
                        line + 2,
                        &rec[0]
                    )));
                }
            }
            let mut row = Vec::with_capacity(names.len());
            for i in 1..=names.len() {
                let field = rec.get(i).unwrap_or("").trim();
                row.push(if field.is_empty() {
                    f64::NAN
                } else {
                    field
                        .parse::<f64>()
                        .map_err(|_| Error::data(format!("row {}: bad number {field:?}", line + 2)))?
                });
            }
            times.push(t);
            rows.push(row);
        }
        let Some((&first, &last)) = times.first().zip(times.last()) else {
            return Ok(SeriesTable { timestamps: vec![], names, columns: vec![vec![]; header.len() - 1] });
        };
        let n = (last - first + 1) as usize;
        let mut columns = vec![vec![f64::NAN; n]; names.len()];
        for (t, row) in times.iter().zip(rows) {
            let i = (t - first) as usize;
            for (c, v) in row.into_iter().enumerate() {
                columns[c][i] = v;
            }
        }
        Ok(SeriesTable { timestamps: (first..=last).collect(), names, columns })
    }

    pub fn load_csv(path: &Path) -> Result<SeriesTable> {
        SeriesTable::read_csv(std::fs::File::open(path)?)
    }

    /// Writes the table; values use the shortest round-tripping decimal
    /// form and missing values are empty fields.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.names.iter().cloned());
        let io = |e: csv::Error| Error::data(format!("csv write: {e}"));
        w.write_record(&header).map_err(io)?;
        for (i, t) in self.timestamps.iter().enumerate() {
            let mut rec = vec![format_minute(*t)];
            for c in &self.columns {
                let v = c[i];
                rec.push(if v.is_nan() { String::new() } else { format!("{v}") });
            }
            w.write_record(&rec).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    /// Applies [`interpolate_gaps`] to every column.
    pub fn interpolate(&self, max_gap_minutes: i64) -> Result<SeriesTable> {
        let columns = self
            .columns
            .iter()
            .map(|c| interpolate_gaps(&self.timestamps, c, max_gap_minutes))
            .collect::<Result<_>>()?;
        Ok(SeriesTable { timestamps: self.timestamps.clone(), names: self.names.clone(), columns })
    }
}

/// Linearly interpolates missing runs whose bracketing known samples are
/// less than `max_gap_minutes` apart. Longer runs and runs touching either
/// end of the series stay missing.
pub fn interpolate_gaps(timestamps: &[i64], values: &[f64], max_gap_minutes: i64) -> Result<Vec<f64>> {
    if timestamps.len() != values.len() {
        return Err(Error::data("timestamps and values differ in length"));
    }
    if timestamps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::data("timestamps are not strictly increasing"));
    }
    let mut out = values.to_vec();
    let mut last_known: Option<usize> = None;
    for j in 0..values.len() {
        if values[j].is_nan() {
            continue;
        }
        if let Some(i) = last_known {
            let gap = timestamps[j] - timestamps[i];
            if j > i + 1 && gap < max_gap_minutes {
                let (t0, v0, v1) = (timestamps[i] as f64, values[i], values[j]);
                for k in i + 1..j {
                    let w = (timestamps[k] as f64 - t0) / gap as f64;
                    out[k] = v0 + w * (v1 - v0);
                }
            }
        }
        last_known = Some(j);
    }
    Ok(out)
}

/// A missing-free stretch of `window_minutes` raw rows; `values` is
/// `[column][row]` over the manifest's input columns.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWindow {
    pub start: i64,
    pub values: Vec<Vec<f64>>,
}

/// Slides a window over the table and keeps windows without missing values
/// in any of the `columns`.
pub fn make_windows(table: &SeriesTable, columns: &[&str], window_minutes: usize, stride_minutes: usize) -> Result<Vec<RawWindow>> {
    if window_minutes == 0 || stride_minutes == 0 {
        return Err(Error::config("window and stride must be positive"));
    }
    let cols: Vec<&[f64]> = columns.iter().map(|c| table.column(c)).collect::<Result<_>>()?;
    let n = table.len();
    // prefix count of rows with any missing value
    let mut bad = vec![0usize; n + 1];
    for i in 0..n {
        bad[i + 1] = bad[i] + usize::from(cols.iter().any(|c| c[i].is_nan()));
    }
    let mut out = Vec::new();
    let mut off = 0;
    while off + window_minutes <= n {
        if bad[off + window_minutes] == bad[off] {
            out.push(RawWindow {
                start: table.timestamps[off],
                values: cols.iter().map(|c| c[off..off + window_minutes].to_vec()).collect(),
            });
        }
        off += stride_minutes;
    }
    Ok(out)
}

/// Non-overlapping means of `factor` consecutive values.
pub fn average_triples(values: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor == 0 || values.len() % factor != 0 {
        return Err(Error::config(format!(
            "length {} is not divisible by {factor}",
            values.len()
        )));
    }
    Ok(values.chunks(factor).map(|c| c.iter().sum::<f64>() / factor as f64).collect())
}

/// Mean and standard deviation used to normalize one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: String,
    pub mean: f64,
    pub std: f64,
}

pub const STD_FLOOR: f64 = 1e-6;

/// A normalized training sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWindow {
    /// Minute of the first raw row.
    pub start: i64,
    /// Minute of the last raw row.
    pub end: i64,
    /// Minutes per averaged step.
    pub step_minutes: i64,
    pub past_steps: usize,
    pub future_steps: usize,
    /// `[F, S]`: every input column over the known past.
    pub x1: Vec<f64>,
    /// `[C, T]`: commands over the horizon.
    pub x2: Vec<f64>,
    /// `[Fy, T]`: targets over the horizon.
    pub y: Vec<f64>,
    /// Normalized target level subtracted from every anchor-group column.
    pub anchor: f64,
    pub group_stats: Vec<GroupStats>,
    /// Index into `group_stats` for each target column.
    pub target_groups: Vec<usize>,
}

impl SampleWindow {
    pub fn n_features(&self) -> usize {
        self.x1.len() / self.past_steps
    }

    pub fn n_commands(&self) -> usize {
        self.x2.len() / self.future_steps
    }

    pub fn n_targets(&self) -> usize {
        self.y.len() / self.future_steps
    }

    /// Minute at which future step `tau` ends.
    pub fn future_minute(&self, tau: usize) -> i64 {
        self.start + ((self.past_steps + tau + 1) as i64) * self.step_minutes - 1
    }

    /// Target values in original units.
    pub fn y_denormalized(&self) -> Result<Vec<f64>> {
        denormalize(&self.y, self)
    }
}

/// Averages a raw window, normalizes every group with its statistics over
/// the known past, subtracts the target anchor and splits the result into
/// model inputs and targets.
pub fn normalize_sample(w: &RawWindow, manifest: &Manifest) -> Result<SampleWindow> {
    let pp = &manifest.preprocess;
    let inputs = manifest.input_columns();
    if w.values.len() != inputs.len() {
        return Err(Error::config("raw window does not match the manifest's input columns"));
    }
    let (s, t) = (pp.past_steps, pp.future_steps);
    let mut avg: Vec<Vec<f64>> = w.values.iter().map(|c| average_triples(c, pp.average)).collect::<Result<_>>()?;
    if avg.iter().any(|c| c.len() != s + t) {
        return Err(Error::config("averaged window length differs from past + future steps"));
    }
    if avg.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::data(format!("window at {} contains missing values", format_minute(w.start))));
    }
    let groups = manifest.groups();
    let mut group_stats = Vec::with_capacity(groups.len());
    for g in &groups {
        let members: Vec<usize> = (0..inputs.len()).filter(|&i| &inputs[i].group == g).collect();
        if members.is_empty() {
            return Err(Error::config(format!("group {g} is empty")));
        }
        let n = (members.len() * s) as f64;
        let mean = members.iter().flat_map(|&i| &avg[i][..s]).sum::<f64>() / n;
        let var = members.iter().flat_map(|&i| &avg[i][..s]).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt().max(STD_FLOOR);
        for &i in &members {
            avg[i].iter_mut().for_each(|v| *v = (*v - mean) / std);
        }
        group_stats.push(GroupStats { group: g.clone(), mean, std });
    }
    let targets: Vec<usize> = (0..inputs.len()).filter(|&i| inputs[i].role == Role::Target).collect();
    let k = pp.anchor_steps();
    let anchor = targets.iter().flat_map(|&i| &avg[i][s - k..s]).sum::<f64>() / (targets.len() * k) as f64;
    for (i, c) in inputs.iter().enumerate() {
        if c.group == pp.anchor_group {
            avg[i].iter_mut().for_each(|v| *v -= anchor);
        }
    }
    let x1 = avg.iter().flat_map(|c| c[..s].iter().copied()).collect();
    let x2 = (0..inputs.len())
        .filter(|&i| inputs[i].role == Role::Command)
        .flat_map(|i| avg[i][s..].iter().copied())
        .collect();
    let y = targets.iter().flat_map(|&i| avg[i][s..].iter().copied()).collect();
    let target_groups = targets
        .iter()
        .map(|&i| groups.iter().position(|g| g == &inputs[i].group).expect("group listed"))
        .collect();
    let raw_len = w.values.first().map_or(0, |c| c.len()) as i64;
    Ok(SampleWindow {
        start: w.start,
        end: w.start + raw_len - 1,
        step_minutes: pp.average as i64,
        past_steps: s,
        future_steps: t,
        x1,
        x2,
        y,
        anchor,
        group_stats,
        target_groups,
    })
}

/// Maps normalized predictions `[Fy, T]` back to original units.
pub fn denormalize(pred: &[f64], sample: &SampleWindow) -> Result<Vec<f64>> {
    let t = sample.future_steps;
    if sample.target_groups.is_empty() || sample.group_stats.is_empty() {
        return Err(Error::state("sample carries no normalization statistics"));
    }
    if pred.len() != sample.target_groups.len() * t {
        return Err(Error::config(format!(
            "prediction has {} values, expected {}",
            pred.len(),
            sample.target_groups.len() * t
        )));
    }
    let mut out = Vec::with_capacity(pred.len());
    for (j, &g) in sample.target_groups.iter().enumerate() {
        let st = sample.group_stats.get(g).ok_or_else(|| Error::state("target group statistics missing"))?;
        out.extend(pred[j * t..(j + 1) * t].iter().map(|p| (p + sample.anchor) * st.std + st.mean));
    }
    Ok(out)
}

/// Windows ending before `boundary` train, windows starting at or after it
/// validate, and windows straddling it are dropped.
pub fn split_train_val(windows: Vec<SampleWindow>, boundary: i64) -> (Vec<SampleWindow>, Vec<SampleWindow>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for w in windows {
        if w.end < boundary {
            train.push(w);
        } else if w.start >= boundary {
            val.push(w);
        }
    }
    (train, val)
}

/// Samples and the split boundary, as cached by `prepare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub boundary: i64,
    pub feature_names: Vec<String>,
    pub command_names: Vec<String>,
    pub target_names: Vec<String>,
    pub train: Vec<SampleWindow>,
    pub val: Vec<SampleWindow>,
}

impl Dataset {
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self).map_err(|e| Error::data(format!("sample cache: {e}")))
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        serde_json::from_reader(f).map_err(|e| Error::data(format!("sample cache {}: {e}", path.display())))
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }
}

/// Runs the whole pipeline: interpolation, windowing, averaging,
/// normalization and the chronological split at `val_fraction` of the span.
pub fn prepare(table: &SeriesTable, manifest: &Manifest) -> Result<Dataset> {
    manifest.validate()?;
    let pp = &manifest.preprocess;
    let filled = table.interpolate(pp.max_gap_minutes)?;
    let inputs = manifest.input_columns();
    let names: Vec<&str> = inputs.iter().map(|c| c.name.as_str()).collect();
    let raw = make_windows(&filled, &names, pp.window_minutes, pp.stride_minutes)?;
    let samples = raw.iter().map(|w| normalize_sample(w, manifest)).collect::<Result<Vec<_>>>()?;
    let (first, last) = match (table.timestamps.first(), table.timestamps.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::data("empty table")),
    };
    let boundary = first + ((last - first + 1) as f64 * (1.0 - pp.val_fraction)).round() as i64;
    let (train, val) = split_train_val(samples, boundary);
    let names_of = |role: Role| manifest.columns_with(role).iter().map(|c| c.name.clone()).collect();
    Ok(Dataset {
        boundary,
        feature_names: inputs.iter().map(|c| c.name.clone()).collect(),
        command_names: names_of(Role::Command),
        target_names: names_of(Role::Target),
        train,
        val,
    })
}

/// Per-group column lists of a manifest, for reporting.
pub fn group_members(manifest: &Manifest) -> BTreeMap<String, Vec<String>> {
    let mut m: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for c in manifest.input_columns() {
        m.entry(c.group.clone()).or_default().push(c.name.clone());
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> Manifest {
        let col = |name: &str, role, group: &str| ColumnSpec { name: name.into(), role, group: group.into() };
        Manifest {
            preprocess: PreprocessConfig { window_minutes: 24, stride_minutes: 6, past_steps: 5, future_steps: 3, ..Default::default() },
            columns: vec![
                col("room", Role::Target, "temperature"),
                col("outside", Role::Feature, "temperature"),
                col("cmd", Role::Command, "command"),
                col("junk", Role::Ignore, "other"),
            ],
        }
    }

    #[test]
    fn interpolation_rules() {
        let t: Vec<i64> = (0..3).collect();
        assert_eq!(interpolate_gaps(&t, &[1.0, f64::NAN, 3.0], 20).unwrap(), vec![1.0, 2.0, 3.0]);
        let t: Vec<i64> = (0..27).collect();
        let mut v = vec![1.0; 27];
        v[1..26].iter_mut().for_each(|x| *x = f64::NAN);
        let out = interpolate_gaps(&t, &v, 20).unwrap();
        assert!(out[1..26].iter().all(|x| x.is_nan()));
        let clean: Vec<f64> = (0..27).map(|i| i as f64 * 0.3).collect();
        assert_eq!(interpolate_gaps(&t, &clean, 20).unwrap(), clean);
        assert!(matches!(interpolate_gaps(&[0, 2, 1], &[1.0, 2.0, 3.0], 20), Err(Error::Data(_))));
        // edge runs stay missing
        let out = interpolate_gaps(&[0, 1, 2], &[f64::NAN, 1.0, f64::NAN], 20).unwrap();
        assert!(out[0].is_nan() && out[2].is_nan());
    }

    #[test]
    fn averaging() {
        assert_eq!(average_triples(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3).unwrap(), vec![2.0, 5.0]);
        assert!(matches!(average_triples(&[1.0; 7], 3), Err(Error::Config(_))));
    }

    #[test]
    fn windows_reject_missing_and_count() {
        let n = 480;
        let table = SeriesTable { timestamps: (0..n).collect(), names: vec!["a".into()], columns: vec![vec![0.5; n as usize]] };
        assert_eq!(make_windows(&table, &["a"], 480, 50).unwrap().len(), 1);
        let n = 5000;
        let mut col = vec![0.5; n as usize];
        col[1000..1025].iter_mut().for_each(|v| *v = f64::NAN);
        let table = SeriesTable { timestamps: (0..n).collect(), names: vec!["a".into()], columns: vec![col] };
        let w = make_windows(&table, &["a"], 480, 50).unwrap();
        for win in &w {
            assert!(win.start + 480 <= 1000 || win.start >= 1025);
        }
        let all = (5000 - 480) / 50 + 1;
        let overlapping = (0..all).filter(|k| k * 50 < 1025 && k * 50 + 480 > 1000).count();
        assert_eq!(w.len(), all - overlapping);
    }

    #[test]
    fn normalize_constant_temperature_gives_zero_target() {
        let m = manifest();
        let w = RawWindow { start: 0, values: vec![vec![21.0; 24], vec![21.0; 24], (0..24).map(|i| (i % 5) as f64).collect(), vec![0.0; 24]][..3].to_vec() };
        let s = normalize_sample(&w, &m).unwrap();
        assert!(s.y.iter().all(|v| v.abs() < 1e-12));
        let back = denormalize(&vec![0.0; 3], &s).unwrap();
        assert!(back.iter().all(|v| (v - 21.0).abs() < 1e-9));
    }

    #[test]
    fn csv_round_trip_and_reindex() {
        let text = "timestamp,a,b\n2024-01-01T00:00,1,2\n2024-01-01T00:01,,3\n2024-01-01T00:04,5,6\n";
        let t = SeriesTable::read_csv(text.as_bytes()).unwrap();
        assert_eq!(t.len(), 5);
        assert!(t.columns[0][1].is_nan() && t.columns[0][2].is_nan());
        assert_eq!(t.columns[1][4], 6.0);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let t2 = SeriesTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(t2.timestamps, t.timestamps);
        assert_eq!(format!("{:?}", t2.columns), format!("{:?}", t.columns));
        let bad = "timestamp,a\n2024-01-01T00:05,1\n2024-01-01T00:01,2\n";
        assert!(matches!(SeriesTable::read_csv(bad.as_bytes()), Err(Error::Data(_))));
    }

    #[test]
    fn manifest_toml_round_trip() {
        let m = manifest();
        assert_eq!(Manifest::from_toml(&m.to_toml()).unwrap(), m);
        let mut bad = m.clone();
        bad.columns[0].group = "command".into();
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
