//! Signal smoothing, humidity-class aggregation, correlation and dataset
//! construction (normalization, chronological split, lag features, windows).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::RecordSet;

/// Default trailing window for the long-term component: two hours of 5-minute samples.
pub const DEFAULT_FADING_WINDOW: usize = 24;
pub const DEFAULT_CLASS_WIDTH: f64 = 0.5;
pub const DEFAULT_STEPS: usize = 18;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

/// A signal split into a slow (trailing mean) and a fast (residual) component.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingDecomposition {
    pub raw: Vec<f64>,
    pub long_term: Vec<f64>,
    pub short_term: Vec<f64>,
    pub window_len: usize,
}

/// Finds `short` with `long + short == raw` exactly in floating point.
fn exact_residual(raw: f64, long: f64) -> (f64, f64) {
    let mut short = raw - long;
    for _ in 0..4 {
        let sum = long + short;
        if sum == raw {
            return (long, short);
        }
        short = if sum < raw { short.next_up() } else { short.next_down() };
    }
    // Nudging the residual failed (extreme magnitude gap); move the long term instead.
    let mut long = long;
    for _ in 0..64 {
        if long + short == raw {
            return (long, short);
        }
        long = raw - short;
        short = raw - long;
    }
    (raw, 0.0)
}

/// Causal decomposition: `long_term[t]` is the mean of the trailing window
/// ending at `t` (prefix windows use what is available), `short_term` is the
/// residual. `long_term + short_term` reproduces `raw` bit-exactly.
pub fn decompose_fading(raw: &[f64], window_len: usize) -> Result<FadingDecomposition> {
    if window_len == 0 {
        return Err(Error::arg("window_len must be >= 1"));
    }
    if raw.is_empty() {
        return Err(Error::arg("series is empty"));
    }
    let mut long_term = Vec::with_capacity(raw.len());
    let mut short_term = Vec::with_capacity(raw.len());
    for t in 0..raw.len() {
        let start = (t + 1).saturating_sub(window_len);
        let window = &raw[start..=t];
        let mean = window.iter().sum::<f64>() / window.len() as f64;
        let (l, s) = exact_residual(raw[t], mean);
        long_term.push(l);
        short_term.push(s);
    }
    Ok(FadingDecomposition { raw: raw.to_vec(), long_term, short_term, window_len })
}

/// Signal means over one humidity class `[class_low, class_high)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumidityClassRow {
    pub class_low: f64,
    pub class_high: f64,
    pub mean_rssi: f64,
    pub mean_snr: f64,
    pub count: usize,
}

/// Groups samples into equal-width humidity classes over `[low, high)` and
/// averages RSSI and SNR per class. Empty classes are omitted; samples
/// outside the range are ignored.
pub fn aggregate_classes(
    humidity: &[f64],
    rssi: &[f64],
    snr: &[f64],
    low: f64,
    high: f64,
    width: f64,
) -> Result<Vec<HumidityClassRow>> {
    if humidity.len() != rssi.len() || humidity.len() != snr.len() {
        return Err(Error::arg(format!(
            "series lengths differ: humidity {}, rssi {}, snr {}",
            humidity.len(),
            rssi.len(),
            snr.len()
        )));
    }
    if !(width > 0.0) {
        return Err(Error::arg("class width must be > 0"));
    }
    if !(low < high) {
        return Err(Error::arg("low must be below high"));
    }
    // class index -> (sum rssi, sum snr, count)
    let mut bins: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for ((&h, &r), &s) in humidity.iter().zip(rssi).zip(snr) {
        if !(h >= low && h < high) {
            continue;
        }
        let k = ((h - low) / width).floor() as u64;
        let e = bins.entry(k).or_insert((0.0, 0.0, 0));
        e.0 += r;
        e.1 += s;
        e.2 += 1;
    }
    Ok(bins
        .into_iter()
        .map(|(k, (sr, ss, n))| HumidityClassRow {
            class_low: low + k as f64 * width,
            class_high: low + (k + 1) as f64 * width,
            mean_rssi: sr / n as f64,
            mean_snr: ss / n as f64,
            count: n,
        })
        .collect())
}

pub fn classes_to_csv(rows: &[HumidityClassRow]) -> String {
    let mut out = String::from("class_low,class_high,mean_rssi,mean_snr,count\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.class_low, r.class_high, r.mean_rssi, r.mean_snr, r.count));
    }
    out
}

/// Sample Pearson correlation, computed in one pass with running co-moments.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::arg(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::arg("pearson needs at least 2 samples"));
    }
    let (mut mx, mut my) = (0.0, 0.0);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (k, (&a, &b)) in x.iter().zip(y).enumerate() {
        let n = (k + 1) as f64;
        let dx = a - mx;
        let dy = b - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (a - mx);
        syy += dy * (b - my);
        sxy += dx * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::Degenerate("zero variance in pearson input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pairwise Pearson matrix of labeled columns.
pub fn correlation_matrix(columns: &[(String, Vec<f64>)]) -> Result<Vec<Vec<f64>>> {
    let k = columns.len();
    let mut m = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let r = pearson(&columns[i].1, &columns[j].1)
                .map_err(|e| Error::Degenerate(format!("{} vs {}: {e}", columns[i].0, columns[j].0)))?;
            m[i][j] = r;
            m[j][i] = r;
        }
    }
    Ok(m)
}

/// Square labeled matrix: first row and column carry the labels.
pub fn correlation_to_csv(labels: &[String], m: &[Vec<f64>]) -> String {
    let mut out = String::from("label");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (l, row) in labels.iter().zip(m) {
        out.push_str(l);
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Feature rows and targets on their original scale, chronologically ordered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub feature_names: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl Table {
    pub fn new(feature_names: Vec<String>, features: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if features.len() != targets.len() {
            return Err(Error::arg(format!("{} feature rows but {} targets", features.len(), targets.len())));
        }
        if let Some(bad) = features.iter().position(|r| r.len() != feature_names.len()) {
            return Err(Error::arg(format!(
                "row {bad} has {} columns, expected {}",
                features[bad].len(),
                feature_names.len()
            )));
        }
        Ok(Table { feature_names, features, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.features.iter().map(move |r| r[j])
    }

    fn slice(&self, range: std::ops::Range<usize>) -> Table {
        Table {
            feature_names: self.feature_names.clone(),
            features: self.features[range.clone()].to_vec(),
            targets: self.targets[range].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    fn fit(values: impl Iterator<Item = f64>, name: &str) -> Result<Self> {
        let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !(max > min) {
            return Err(Error::Degenerate(format!("column `{name}` is constant or empty")));
        }
        Ok(MinMax { min, max })
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        self.min + v * (self.max - self.min)
    }
}

/// Maps a normalized value back to the original scale.
pub fn denormalize(value: f64, params: &MinMax) -> f64 {
    params.denormalize(value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub features: Vec<MinMax>,
    pub target: MinMax,
}

impl NormParams {
    pub fn fit(table: &Table) -> Result<Self> {
        let features = (0..table.width())
            .map(|j| MinMax::fit(table.column(j), &table.feature_names[j]))
            .collect::<Result<Vec<_>>>()?;
        let target = MinMax::fit(table.targets.iter().copied(), "target")?;
        Ok(NormParams { features, target })
    }

    pub fn apply(&self, table: &Table) -> Result<Dataset> {
        if table.width() != self.features.len() {
            return Err(Error::arg(format!(
                "table has {} columns, params cover {}",
                table.width(),
                self.features.len()
            )));
        }
        let features = table
            .features
            .iter()
            .map(|row| row.iter().zip(&self.features).map(|(&v, p)| p.normalize(v)).collect())
            .collect();
        let targets = table.targets.iter().map(|&v| self.target.normalize(v)).collect();
        Ok(Dataset { feature_names: table.feature_names.clone(), features, targets, norm: self.clone() })
    }
}

/// Normalized features and targets plus the parameters that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub norm: NormParams,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }
}

/// Min–max scales every column (and the target) of `table` to `[0, 1]`.
pub fn normalize_minmax(table: &Table) -> Result<Dataset> {
    NormParams::fit(table)?.apply(table)
}

/// `(train_rows, test_rows)` with the train count floored.
pub fn split_counts(n: usize, train_fraction: f64) -> Result<(usize, usize)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::arg(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    if n < 2 {
        return Err(Error::arg(format!("need at least 2 rows to split, got {n}")));
    }
    let train = (n as f64 * train_fraction).floor() as usize;
    Ok((train, n - train))
}

/// Splits without shuffling, fits normalization on the training part and
/// applies the same parameters to the test part.
pub fn chronological_split(table: &Table, train_fraction: f64) -> Result<(Dataset, Dataset)> {
    let (n_train, _) = split_counts(table.len(), train_fraction)?;
    let train = table.slice(0..n_train);
    let test = table.slice(n_train..table.len());
    let params = NormParams::fit(&train)?;
    Ok((params.apply(&train)?, params.apply(&test)?))
}

/// Row `t` becomes `features[t] ++ features[t-1]` with target `targets[t]`.
pub fn make_lag_features(table: &Table) -> Result<Table> {
    if table.len() < 2 {
        return Err(Error::arg("lag features need at least 2 rows"));
    }
    let mut names = table.feature_names.clone();
    names.extend(table.feature_names.iter().map(|n| format!("{n}_lag1")));
    let features = table
        .features
        .windows(2)
        .map(|pair| {
            let mut row = pair[1].clone();
            row.extend_from_slice(&pair[0]);
            row
        })
        .collect();
    Table::new(names, features, table.targets[1..].to_vec())
}

/// Stride-1 sliding windows, stored flat as `m × steps × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub steps: usize,
    pub width: usize,
    pub windows: Vec<f64>,
    pub targets: Vec<f64>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Window `k` as `steps` consecutive rows of `width` values.
    pub fn window(&self, k: usize) -> &[f64] {
        let size = self.steps * self.width;
        &self.windows[k * size..(k + 1) * size]
    }

    /// Windows `range` as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> WindowedDataset {
        let size = self.steps * self.width;
        WindowedDataset {
            steps: self.steps,
            width: self.width,
            windows: self.windows[range.start * size..range.end * size].to_vec(),
            targets: self.targets[range].to_vec(),
        }
    }
}

/// Window `k` covers rows `k..k+steps`; its target is the target of the last row.
pub fn make_windows(dataset: &Dataset, steps: usize) -> Result<WindowedDataset> {
    if steps == 0 {
        return Err(Error::arg("steps must be >= 1"));
    }
    let n = dataset.len();
    if n < steps {
        return Err(Error::arg(format!("{n} rows is fewer than {steps} steps")));
    }
    let width = dataset.width();
    let m = n - steps + 1;
    let mut windows = Vec::with_capacity(m * steps * width);
    for k in 0..m {
        for row in &dataset.features[k..k + steps] {
            windows.extend_from_slice(row);
        }
    }
    let targets = dataset.targets[steps - 1..].to_vec();
    Ok(WindowedDataset { steps, width, windows, targets })
}

/// Which gateway drives the row timeline in [`align_gateways`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignPolicy {
    /// Defaults to the gateway with the most records (ties: smallest id).
    pub primary: Option<String>,
}

/// One row per primary-gateway timestamp with `(rssi, snr)` per gateway.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedRows {
    pub gateways: Vec<String>,
    pub primary: String,
    pub ts: Vec<i64>,
    /// `rows[r][2g]` is RSSI and `rows[r][2g + 1]` SNR of gateway `g`.
    pub rows: Vec<Vec<f64>>,
    pub humidity: Vec<Option<f64>>,
}

impl AlignedRows {
    pub fn column_names(&self) -> Vec<String> {
        self.gateways.iter().flat_map(|g| [format!("rssi_{g}"), format!("snr_{g}")]).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// Converts to a [`Table`] with humidity as the target.
    pub fn to_table(&self, source: FeatureSource) -> Result<Table> {
        let targets = self
            .humidity
            .iter()
            .enumerate()
            .map(|(i, h)| h.ok_or_else(|| Error::arg(format!("row at ts {} has no humidity", self.ts[i]))))
            .collect::<Result<Vec<_>>>()?;
        match source {
            FeatureSource::Raw => Table::new(self.column_names(), self.rows.clone(), targets),
            FeatureSource::Decomposed { window_len } => {
                let names = self.column_names();
                let mut out_names = Vec::new();
                let mut cols = Vec::new();
                for (j, name) in names.iter().enumerate() {
                    let d = decompose_fading(&self.column(j), window_len)?;
                    out_names.push(format!("{name}_long"));
                    out_names.push(format!("{name}_short"));
                    cols.push(d.long_term);
                    cols.push(d.short_term);
                }
                let features = (0..self.rows.len()).map(|r| cols.iter().map(|c| c[r]).collect()).collect();
                Table::new(out_names, features, targets)
            }
        }
    }
}

/// Model inputs: raw signal values, or their long/short fading components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeatureSource {
    Raw,
    Decomposed { window_len: usize },
}

impl Default for FeatureSource {
    fn default() -> Self {
        FeatureSource::Raw
    }
}

/// Aligns gateways on the primary gateway's timeline. Gaps are filled with
/// the gateway's last observation; rows before a gateway's first observation
/// are dropped.
pub fn align_gateways(set: &RecordSet, policy: &AlignPolicy) -> Result<AlignedRows> {
    if set.is_empty() {
        return Err(Error::arg("record set is empty"));
    }
    let gateways = set.gateways().to_vec();
    let primary = match &policy.primary {
        Some(p) => {
            if !gateways.contains(p) {
                return Err(Error::Alignment(format!("primary gateway `{p}` not present")));
            }
            p.clone()
        }
        None => {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for r in set.records() {
                *counts.entry(&r.gateway_id).or_default() += 1;
            }
            // BTreeMap iterates ids ascending, so max_by_key's last-wins rule needs reversing.
            counts.iter().rev().max_by_key(|(_, &c)| c).map(|(g, _)| g.to_string()).expect("nonempty set")
        }
    };
    let index: BTreeMap<&str, usize> = gateways.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();

    let mut last: Vec<Option<(f64, f64)>> = vec![None; gateways.len()];
    let mut out = AlignedRows {
        gateways: gateways.clone(),
        primary: primary.clone(),
        ts: Vec::new(),
        rows: Vec::new(),
        humidity: Vec::new(),
    };
    let records = set.records();
    let mut i = 0;
    while i < records.len() {
        let ts = records[i].ts;
        let mut primary_here = false;
        let mut hum = None;
        let mut any_hum = None;
        while i < records.len() && records[i].ts == ts {
            let r = &records[i];
            last[index[r.gateway_id.as_str()]] = Some((r.rssi, r.snr));
            if r.gateway_id == primary {
                primary_here = true;
                hum = r.soil_humidity;
            }
            any_hum = any_hum.or(r.soil_humidity);
            i += 1;
        }
        if !primary_here || last.iter().any(Option::is_none) {
            continue;
        }
        out.ts.push(ts);
        out.rows.push(
            last.iter()
                .flat_map(|v| {
                    let (r, s) = v.expect("checked");
                    [r, s]
                })
                .collect(),
        );
        out.humidity.push(hum.or(any_hum));
    }
    if out.rows.is_empty() {
        return Err(Error::Alignment("gateways never overlap in time".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::UplinkRecord;

    #[test]
    fn constant_series_decomposes_trivially() {
        let d = decompose_fading(&[-95.0; 48], 24).unwrap();
        assert!(d.long_term.iter().all(|&v| v == -95.0));
        assert!(d.short_term.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_point_trailing_mean() {
        let d = decompose_fading(&[0.0, 2.0], 2).unwrap();
        assert_eq!(d.long_term, [0.0, 1.0]);
        assert_eq!(d.short_term, [0.0, 1.0]);
    }

    #[test]
    fn zero_window_rejected() {
        assert!(matches!(decompose_fading(&[1.0], 0), Err(Error::Argument(_))));
        assert!(matches!(decompose_fading(&[], 3), Err(Error::Argument(_))));
    }

    #[test]
    fn exact_residual_handles_awkward_magnitudes() {
        for (raw, long) in [(1e16, 0.3), (0.1, 1e17), (-95.123456789, -94.1), (1e-300, 1.0)] {
            let (l, s) = exact_residual(raw, long);
            assert_eq!(l + s, raw);
        }
    }

    #[test]
    fn single_class_mean() {
        let rows = aggregate_classes(&[29.1, 29.4], &[-90.0, -92.0], &[1.0, 3.0], 29.0, 40.0, 0.5).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].class_low, 29.0);
        assert_eq!(rows[0].class_high, 29.5);
        assert_eq!(rows[0].mean_rssi, -91.0);
        assert_eq!(rows[0].mean_snr, 2.0);
        assert_eq!(rows[0].count, 2);
    }

    #[test]
    fn class_boundary_assignment() {
        let rows = aggregate_classes(&[29.1, 29.6], &[-90.0, -92.0], &[0.0, 0.0], 29.0, 40.0, 0.5).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[1].class_low, rows[1].class_high), (29.5, 30.0));
        assert_eq!((rows[0].count, rows[1].count), (1, 1));
    }

    #[test]
    fn out_of_range_samples_ignored_and_lengths_checked() {
        let rows = aggregate_classes(&[10.0, 40.0, 30.0], &[0.0; 3], &[0.0; 3], 29.0, 40.0, 0.5).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(aggregate_classes(&[1.0], &[], &[], 0.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn pearson_perfect_negative() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[-2.0, -4.0, -6.0]).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pearson_zero_variance_is_error() {
        assert!(matches!(pearson(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), Err(Error::Degenerate(_))));
        assert!(matches!(pearson(&[1.0], &[1.0]), Err(Error::Argument(_))));
    }

    fn table(cols: Vec<Vec<f64>>, targets: Vec<f64>) -> Table {
        let names = (0..cols[0].len()).map(|j| format!("c{j}")).collect();
        Table::new(names, cols, targets).unwrap()
    }

    #[test]
    fn minmax_endpoints_and_midpoint() {
        let t = table(vec![vec![-100.0], vec![-90.0]], vec![0.0, 1.0]);
        let d = normalize_minmax(&t).unwrap();
        assert_eq!(d.features, vec![vec![0.0], vec![1.0]]);
        let p = MinMax { min: -100.0, max: -90.0 };
        assert_eq!(denormalize(0.5, &p), -95.0);
    }

    #[test]
    fn constant_column_named_in_error() {
        let t = table(vec![vec![1.0, 3.0], vec![2.0, 3.0]], vec![0.0, 1.0]);
        match normalize_minmax(&t).unwrap_err() {
            Error::Degenerate(msg) => assert!(msg.contains("c1"), "{msg}"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn split_floor_rule() {
        assert_eq!(split_counts(13900, 0.8).unwrap(), (11120, 2780));
        assert_eq!(split_counts(10, 0.8).unwrap(), (8, 2));
        assert_eq!(split_counts(5, 0.5).unwrap(), (2, 3));
        assert!(split_counts(1, 0.5).is_err());
        assert!(split_counts(10, 1.0).is_err());
    }

    #[test]
    fn split_uses_train_params_for_test() {
        let t = table((0..10).map(|i| vec![i as f64]).collect(), (0..10).map(|i| i as f64 * 2.0).collect());
        let (train, test) = chronological_split(&t, 0.8).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(test.len(), 2);
        assert_eq!(train.norm, test.norm);
        assert_eq!(train.norm.features[0], MinMax { min: 0.0, max: 7.0 });
        assert!(test.features[1][0] > 1.0);
    }

    #[test]
    fn lag_features_definition() {
        let t = table(vec![vec![1.0], vec![2.0], vec![3.0]], vec![10.0, 11.0, 12.0]);
        let lagged = make_lag_features(&t).unwrap();
        assert_eq!(lagged.features, vec![vec![2.0, 1.0], vec![3.0, 2.0]]);
        assert_eq!(lagged.targets, vec![11.0, 12.0]);
        assert_eq!(lagged.feature_names, ["c0", "c0_lag1"]);
        let one = table(vec![vec![1.0]], vec![0.0]);
        assert!(make_lag_features(&one).is_err());
    }

    fn dataset(n: usize) -> Dataset {
        let t = table((0..n).map(|i| vec![i as f64, (i * i) as f64]).collect(), (0..n).map(|i| i as f64).collect());
        let mut d = normalize_minmax(&t).unwrap();
        d.targets = (0..n).map(|i| i as f64).collect();
        d
    }

    #[test]
    fn window_counts_and_alignment() {
        assert_eq!(make_windows(&dataset(100), 18).unwrap().len(), 83);
        let one = make_windows(&dataset(18), 18).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.targets, vec![17.0]);
        let w = make_windows(&dataset(20), 18).unwrap();
        assert_eq!(w.targets, vec![17.0, 18.0, 19.0]);
        let d = dataset(20);
        assert_eq!(&w.window(2)[..2], d.features[2].as_slice());
        assert!(make_windows(&dataset(17), 18).is_err());
    }

    fn up(ts: i64, gw: &str, rssi: f64) -> UplinkRecord {
        UplinkRecord { ts, gateway_id: gw.into(), rssi, snr: 1.0, soil_humidity: Some(30.0), soil_temp: None }
    }

    #[test]
    fn align_full_overlap() {
        let recs = (1..=5).flat_map(|t| [up(t, "gw1", -90.0), up(t, "gw2", -80.0)]).collect();
        let a = align_gateways(&RecordSet::new(recs).unwrap(), &AlignPolicy::default()).unwrap();
        assert_eq!(a.ts, vec![1, 2, 3, 4, 5]);
        assert_eq!(a.rows[0], vec![-90.0, 1.0, -80.0, 1.0]);
    }

    #[test]
    fn align_locf_interior_gap() {
        let mut recs: Vec<_> = (1..=5).map(|t| up(t, "gw1", -90.0)).collect();
        recs.extend((1..=5).filter(|&t| t != 3).map(|t| up(t, "gw2", -80.0 - t as f64)));
        let a = align_gateways(&RecordSet::new(recs).unwrap(), &AlignPolicy::default()).unwrap();
        assert_eq!(a.primary, "gw1");
        assert_eq!(a.ts.len(), 5);
        assert_eq!(a.rows[2][2], -82.0);
    }

    #[test]
    fn align_leading_gap_dropped() {
        let mut recs: Vec<_> = (1..=10).map(|t| up(t, "gw1", -90.0)).collect();
        recs.extend((6..=10).map(|t| up(t, "gw2", -80.0)));
        let a = align_gateways(&RecordSet::new(recs).unwrap(), &AlignPolicy::default()).unwrap();
        assert_eq!(a.ts, vec![6, 7, 8, 9, 10]);
    }

    #[test]
    fn align_without_overlap_fails() {
        let recs = vec![up(1, "gw1", -90.0), up(2, "gw2", -80.0)];
        let set = RecordSet::new(recs).unwrap();
        let policy = AlignPolicy { primary: Some("gw2".into()) };
        // gw2's only timestamp comes after gw1, so it does align once.
        assert_eq!(align_gateways(&set, &policy).unwrap().ts, vec![2]);
        let policy = AlignPolicy { primary: Some("gw1".into()) };
        assert!(matches!(align_gateways(&set, &policy), Err(Error::Alignment(_))));
    }
}
