//! Metrics, evaluation, dataset pipelines and the LSTM hyperparameter sweep.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{self, LstmModel, LstmSpec, TrainConfig};
use crate::preprocess::{
    self, AlignPolicy, Dataset, FeatureSource, NormParams, WindowedDataset, DEFAULT_STEPS, DEFAULT_TRAIN_FRACTION,
};
use crate::rng::derive_seed;
use crate::svr::{self, SvrModel};
use crate::telemetry::RecordSet;

fn check_pair(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::arg(format!("length mismatch: {} predictions, {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::arg("metrics need at least one sample"));
    }
    Ok(())
}

/// `(1/2m) Σ (ŷ − y)²`.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    let sq: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sq / (2.0 * pred.len() as f64))
}

/// `(1/m) Σ (ŷ − y)²`, reported alongside [`mse`] for comparison.
pub fn mse_conventional(pred: &[f64], target: &[f64]) -> Result<f64> {
    Ok(2.0 * mse(pred, target)?)
}

/// `(1/m) Σ |ŷ − y|`.
pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    let abs: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
    Ok(abs / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// ½-convention MSE on the normalized scale.
    pub mse: f64,
    pub mae: f64,
    /// Plain mean squared error, normalized scale.
    pub mse_conventional: f64,
    pub n: usize,
    /// The same metrics in percent humidity, when normalization params are known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub denormalized: Option<ScaledMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledMetrics {
    pub mse: f64,
    pub mae: f64,
}

impl Metrics {
    pub fn compute(pred: &[f64], target: &[f64], norm: Option<&NormParams>) -> Result<Self> {
        let denormalized = match norm {
            Some(p) => {
                let dp: Vec<f64> = pred.iter().map(|&v| p.target.denormalize(v)).collect();
                let dt: Vec<f64> = target.iter().map(|&v| p.target.denormalize(v)).collect();
                Some(ScaledMetrics { mse: mse(&dp, &dt)?, mae: mae(&dp, &dt)? })
            }
            None => None,
        };
        Ok(Metrics {
            mse: mse(pred, target)?,
            mae: mae(pred, target)?,
            mse_conventional: mse_conventional(pred, target)?,
            n: pred.len(),
            denormalized,
        })
    }
}

/// Predictions and metrics of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub predictions: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Evaluation {
    /// `idx,prediction,target` dump.
    pub fn predictions_csv(&self) -> String {
        let mut out = String::from("idx,prediction,target\n");
        for (i, (p, t)) in self.predictions.iter().zip(&self.targets).enumerate() {
            out.push_str(&format!("{i},{p},{t}\n"));
        }
        out
    }
}

pub fn evaluate_svr(model: &SvrModel, test: &Dataset) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::arg("test set is empty"));
    }
    let predictions = svr::svr_predict_many(model, &test.features)?;
    Ok(Evaluation {
        metrics: Metrics::compute(&predictions, &test.targets, Some(&test.norm))?,
        predictions,
        targets: test.targets.clone(),
    })
}

/// Eval-mode (dropout off) evaluation over every window.
pub fn evaluate_lstm(model: &LstmModel, test: &WindowedDataset, norm: Option<&NormParams>) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::arg("test set is empty"));
    }
    let predictions = lstm::lstm_predict_all(model, test)?;
    Ok(Evaluation {
        metrics: Metrics::compute(&predictions, &test.targets, norm)?,
        predictions,
        targets: test.targets.clone(),
    })
}

/// Dataset construction shared by the SVR and LSTM paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub train_fraction: f64,
    /// LSTM window length.
    pub steps: usize,
    /// Trailing part of the training windows held out for validation loss.
    pub val_fraction: f64,
    pub source: FeatureSource,
    /// Timeline gateway; `None` picks the one with the most records.
    pub primary: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train_fraction: DEFAULT_TRAIN_FRACTION,
            steps: DEFAULT_STEPS,
            val_fraction: 0.1,
            source: FeatureSource::Raw,
            primary: None,
        }
    }
}

fn base_table(set: &RecordSet, cfg: &PipelineConfig) -> Result<preprocess::Table> {
    let aligned = preprocess::align_gateways(set, &AlignPolicy { primary: cfg.primary.clone() })?;
    aligned.to_table(cfg.source)
}

/// Lagged features (`t` and `t−1`), split chronologically, normalized on train.
pub fn build_svr_data(set: &RecordSet, cfg: &PipelineConfig) -> Result<(Dataset, Dataset)> {
    let table = preprocess::make_lag_features(&base_table(set, cfg)?)?;
    preprocess::chronological_split(&table, cfg.train_fraction)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmData {
    pub train: WindowedDataset,
    pub val: Option<WindowedDataset>,
    pub test: WindowedDataset,
    pub norm: NormParams,
}

/// Rows split chronologically and normalized on train, then windowed per split.
pub fn build_lstm_data(set: &RecordSet, cfg: &PipelineConfig) -> Result<LstmData> {
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::arg("val_fraction must lie in [0, 1)"));
    }
    let table = base_table(set, cfg)?;
    let (train_rows, test_rows) = preprocess::chronological_split(&table, cfg.train_fraction)?;
    let windows = preprocess::make_windows(&train_rows, cfg.steps)?;
    let test = preprocess::make_windows(&test_rows, cfg.steps)?;
    let n_val = (windows.len() as f64 * cfg.val_fraction).floor() as usize;
    let (train, val) = if n_val > 0 && n_val < windows.len() {
        let cut = windows.len() - n_val;
        (windows.slice(0..cut), Some(windows.slice(cut..windows.len())))
    } else {
        (windows, None)
    };
    Ok(LstmData { train, val, test, norm: train_rows.norm })
}

/// Either trained model, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Svr(SvrModel),
    Lstm { model: LstmModel, steps: Option<usize> },
}

impl AnyModel {
    pub fn from_json(text: &str) -> Result<Self> {
        let probe: serde_json::Value = serde_json::from_str(text)?;
        match probe.get("format").and_then(|v| v.as_str()) {
            Some(svr::MODEL_FORMAT) => Ok(AnyModel::Svr(SvrModel::from_json(text)?)),
            Some(lstm::MODEL_FORMAT) => {
                let (model, steps) = LstmModel::from_json(text)?;
                Ok(AnyModel::Lstm { model, steps })
            }
            other => Err(Error::Format(format!("unknown model format {other:?}"))),
        }
    }
}

/// Evaluates a stored model on the test split of `set` built with `cfg`.
pub fn evaluate_on_records(model: &AnyModel, set: &RecordSet, cfg: &PipelineConfig) -> Result<Evaluation> {
    match model {
        AnyModel::Svr(m) => {
            let (_, test) = build_svr_data(set, cfg)?;
            evaluate_svr(m, &test)
        }
        AnyModel::Lstm { model, steps } => {
            let cfg = PipelineConfig { steps: steps.unwrap_or(cfg.steps), ..cfg.clone() };
            let data = build_lstm_data(set, &cfg)?;
            evaluate_lstm(model, &data.test, Some(&data.norm))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub layer1: Vec<usize>,
    pub layer2: Vec<usize>,
    pub lr: Vec<f64>,
    pub epochs: Vec<usize>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            layer1: vec![32],
            layer2: vec![16, 32],
            lr: vec![0.0001, 0.001],
            epochs: vec![50, 100, 150, 200, 250],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub layer1: usize,
    pub layer2: usize,
    pub lr: f64,
    pub epochs: usize,
}

impl SweepGrid {
    /// Grid points with `epochs` varying fastest, then `lr`, `layer2`, `layer1`.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &layer1 in &self.layer1 {
            for &layer2 in &self.layer2 {
                for &lr in &self.lr {
                    for &epochs in &self.epochs {
                        out.push(SweepPoint { layer1, layer2, lr, epochs });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub layer1: usize,
    pub layer2: usize,
    pub lr: f64,
    /// Nominal grid value; the trained count is `effective_epochs`.
    pub epochs: usize,
    pub mse: f64,
    pub mae: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    /// Trained epochs are `max(1, round(epochs · epoch_scale))`.
    pub epoch_scale: f64,
    pub batch_size: usize,
    pub dropout_p: f64,
    /// Worker threads for rows; 0 uses the global pool.
    pub jobs: usize,
    /// Record wall-clock seconds per row; when off the column is 0 so output is reproducible.
    pub timing: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { epoch_scale: 1.0, batch_size: 32, dropout_p: 0.2, jobs: 0, timing: false }
    }
}

pub fn effective_epochs(epochs: usize, scale: f64) -> usize {
    ((epochs as f64 * scale).round() as usize).max(1)
}

/// Trains and evaluates one grid point with its derived seed `derive_seed(seed, index)`.
pub fn run_sweep_row(
    data: &LstmData,
    point: &SweepPoint,
    index: usize,
    seed: u64,
    opts: &SweepOptions,
) -> Result<SweepRow> {
    let start = Instant::now();
    let spec = LstmSpec {
        input_width: data.train.width,
        units1: point.layer1,
        units2: point.layer2,
        dropout_p: opts.dropout_p,
    };
    let cfg = TrainConfig {
        lr: point.lr,
        epochs: effective_epochs(point.epochs, opts.epoch_scale),
        batch_size: opts.batch_size,
        seed: derive_seed(seed, index as u64),
        ..TrainConfig::default()
    };
    let (model, _) = lstm::train_lstm(&data.train, data.val.as_ref(), &spec, &cfg)?;
    let eval = evaluate_lstm(&model, &data.test, Some(&data.norm))?;
    Ok(SweepRow {
        layer1: point.layer1,
        layer2: point.layer2,
        lr: point.lr,
        epochs: point.epochs,
        mse: eval.metrics.mse,
        mae: eval.metrics.mae,
        wall_seconds: if opts.timing { start.elapsed().as_secs_f64() } else { 0.0 },
    })
}

/// Runs every grid point; rows come back in grid order.
pub fn sweep_lstm(data: &LstmData, grid: &SweepGrid, seed: u64, opts: &SweepOptions) -> Result<Vec<SweepRow>> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::arg("sweep grid is empty"));
    }
    if !(opts.epoch_scale > 0.0) {
        return Err(Error::arg("epoch_scale must be > 0"));
    }
    let run = || {
        points.par_iter().enumerate().map(|(i, p)| run_sweep_row(data, p, i, seed, opts)).collect::<Result<Vec<_>>>()
    };
    if opts.jobs > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::arg(format!("thread pool: {e}")))?;
        pool.install(run)
    } else {
        run()
    }
}

/// Index of the lowest-MSE row; the first in grid order wins ties.
pub fn best_row(rows: &[SweepRow]) -> Option<usize> {
    rows.iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, r)| match best {
            Some((_, m)) if r.mse >= m => best,
            _ => Some((i, r.mse)),
        })
        .map(|(i, _)| i)
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("layer1,layer2,lr,epochs,mse,mae,wall_seconds\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.layer1, r.layer2, r.lr, r.epochs, r.mse, r.mae, r.wall_seconds
        ));
    }
    out
}
