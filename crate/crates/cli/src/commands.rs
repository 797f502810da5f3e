use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use soilwave_core::energy::{builtin_profiles, lifetime_report, BatterySpec, EnergyProfile};
use soilwave_core::harness::{
    best_row, build_lstm_data, build_svr_data, evaluate_lstm, evaluate_on_records, evaluate_svr, sweep_lstm, AnyModel,
    Evaluation, PipelineConfig, SweepGrid, SweepOptions,
};
use soilwave_core::lstm::{history_to_csv, train_lstm, LstmSpec, TrainConfig};
use soilwave_core::preprocess::{
    aggregate_classes, align_gateways, chronological_split, correlation_matrix, correlation_to_csv, decompose_fading,
    AlignPolicy, Dataset, DEFAULT_CLASS_WIDTH, DEFAULT_FADING_WINDOW,
};
use soilwave_core::simulator::{simulate, SimConfig};
use soilwave_core::svr::{grid_search_svr, grid_to_csv, svr_train, SvrHyper, SvrTrainOptions};
use soilwave_core::telemetry::{encode_store, encode_uplink_json, load_bytes, write_uplink_csv, RecordSet};

use crate::frame::{Cell, Frame};
use crate::manifest::{manifest_path, RunManifest};
use crate::{Command, Common, Format, PlotKind, Profile};

/// A missing or conflicting flag detected after parsing; reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

struct Io<'a> {
    stdin: &'a mut dyn Read,
    stdout: &'a mut dyn Write,
}

/// Bytes of an input file (or standard input for `-`), kept for the manifest digest.
struct Source {
    name: String,
    bytes: Vec<u8>,
}

impl Io<'_> {
    fn read(&mut self, name: &str) -> Result<Source> {
        let bytes = if name == "-" {
            let mut buf = Vec::new();
            self.stdin.read_to_end(&mut buf).context("reading standard input")?;
            buf
        } else {
            std::fs::read(name).with_context(|| format!("reading {name}"))?
        };
        Ok(Source { name: name.to_string(), bytes })
    }

    fn records(&mut self, name: &str) -> Result<(Source, RecordSet)> {
        let src = self.read(name)?;
        let set = load_bytes(&src.bytes).with_context(|| format!("loading records from {name}"))?;
        Ok((src, set))
    }
}

fn load_config<T: DeserializeOwned + Default>(io: &mut Io, path: Option<&Path>) -> Result<(T, Option<Source>)> {
    match path {
        None => Ok((T::default(), None)),
        Some(p) => {
            let src = io.read(&p.display().to_string())?;
            let text = std::str::from_utf8(&src.bytes).context("config is not UTF-8")?;
            let cfg = serde_json::from_str(text).with_context(|| format!("parsing config {}", p.display()))?;
            Ok((cfg, Some(src)))
        }
    }
}

/// Primary output plus any side files derived from `--out`.
struct Outputs {
    primary: Vec<u8>,
    extra: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn single(primary: impl Into<Vec<u8>>) -> Self {
        Outputs { primary: primary.into(), extra: Vec::new() }
    }
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn finish(
    io: &mut Io,
    out: Option<&Path>,
    mut manifest: RunManifest,
    sources: &[&Source],
    outputs: Outputs,
) -> Result<()> {
    for src in sources {
        manifest.input(&src.name, &src.bytes);
    }
    match out {
        Some(path) => {
            write_file(path, &outputs.primary)?;
            manifest.output(path);
            for (p, bytes) in &outputs.extra {
                write_file(p, bytes)?;
                manifest.output(p);
            }
            write_file(&manifest_path(path), manifest.to_json().as_bytes())
        }
        None => {
            for (p, bytes) in &outputs.extra {
                write_file(p, bytes)?;
            }
            match io.stdout.write_all(&outputs.primary).and_then(|_| io.stdout.flush()) {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                r => r.context("writing standard output"),
            }
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

/// Gateway with the most records, ties to the smallest id.
fn busiest_gateway(set: &RecordSet) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in set.records() {
        *counts.entry(&r.gateway_id).or_default() += 1;
    }
    let max = counts.values().copied().max()?;
    counts.into_iter().find(|&(_, c)| c == max).map(|(g, _)| g.to_string())
}

pub fn execute(command: Command, stdin: &mut dyn Read, stdout: &mut dyn Write) -> Result<()> {
    let mut io = Io { stdin, stdout };
    match command {
        Command::Simulate { common, samples } => simulate_cmd(&mut io, &common, samples),
        Command::Ingest { common, input } => ingest(&mut io, &common, &input.input),
        Command::Decompose { common, input, window } => decompose(&mut io, &common, &input.input, window),
        Command::Aggregate { common, input, gateway, low, high, width } => {
            aggregate(&mut io, &common, &input.input, AggregateFlags { gateway, low, high, width })
        }
        Command::Correlate { common, input } => correlate(&mut io, &common, &input.input),
        Command::Dataset { common, input, lags } => dataset(&mut io, &common, &input.input, lags),
        Command::TrainSvr { common, input, c, epsilon, gamma, grid } => {
            train_svr(&mut io, &common, &input.input, (c, epsilon, gamma), grid)
        }
        Command::TrainLstm { common, input, epochs, lr, batch_size } => {
            train_lstm_cmd(&mut io, &common, &input.input, epochs, lr, batch_size)
        }
        Command::Evaluate { common, input, model, predictions } => {
            evaluate(&mut io, &common, &input.input, &model, predictions.as_deref())
        }
        Command::Sweep { common, input, jobs, epoch_scale, timing } => {
            sweep(&mut io, &common, &input.input, jobs, epoch_scale, timing)
        }
        Command::Lifetime { common, profile } => lifetime(&mut io, &common, profile),
        Command::PlotData { common, input, kind, model } => {
            plot_data(&mut io, &common, &input.input, kind, model.as_deref())
        }
    }
}

fn simulate_cmd(io: &mut Io, common: &Common, samples: Option<usize>) -> Result<()> {
    let (mut cfg, cfg_src): (SimConfig, _) = load_config(io, common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = samples {
        cfg.samples = n;
    }
    cfg.validate()?;
    let set = simulate(&cfg)?;
    let text = match common.format.unwrap_or(Format::Csv) {
        Format::Csv => write_uplink_csv(&set),
        Format::Json => set.records().iter().map(|r| encode_uplink_json(r) + "\n").collect(),
    };
    let manifest = RunManifest::new("simulate", Some(cfg.seed), to_value(&cfg));
    let sources: Vec<&Source> = cfg_src.iter().collect();
    finish(io, common.out.as_deref(), manifest, &sources, Outputs::single(text))
}

fn ingest(io: &mut Io, common: &Common, input: &str) -> Result<()> {
    let out = common.out.as_deref().ok_or_else(|| usage("ingest writes a binary store and needs --out"))?;
    let (src, set) = io.records(input)?;
    let manifest = RunManifest::new("ingest", common.seed, serde_json::Value::Null);
    finish(io, Some(out), manifest, &[&src], Outputs::single(encode_store(&set)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DecomposeConfig {
    window_len: usize,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        DecomposeConfig { window_len: DEFAULT_FADING_WINDOW }
    }
}

fn decompose(io: &mut Io, common: &Common, input: &str, window: Option<usize>) -> Result<()> {
    let (mut cfg, cfg_src): (DecomposeConfig, _) = load_config(io, common.config.as_deref())?;
    if let Some(w) = window {
        cfg.window_len = w;
    }
    let (src, set) = io.records(input)?;
    let mut frame = Frame::new(["ts", "gateway_id", "rssi", "rssi_long", "rssi_short", "snr", "snr_long", "snr_short"]);
    for g in set.gateways() {
        let recs: Vec<_> = set.for_gateway(g).collect();
        let rssi: Vec<f64> = recs.iter().map(|r| r.rssi).collect();
        let snr: Vec<f64> = recs.iter().map(|r| r.snr).collect();
        let dr = decompose_fading(&rssi, cfg.window_len)?;
        let ds = decompose_fading(&snr, cfg.window_len)?;
        for (t, r) in recs.iter().enumerate() {
            frame.push(vec![
                r.ts.into(),
                g.as_str().into(),
                rssi[t].into(),
                dr.long_term[t].into(),
                dr.short_term[t].into(),
                snr[t].into(),
                ds.long_term[t].into(),
                ds.short_term[t].into(),
            ]);
        }
    }
    let text = render(&frame, common.format);
    let manifest = RunManifest::new("decompose", common.seed, to_value(&cfg));
    let sources: Vec<&Source> = cfg_src.iter().chain([&src]).collect();
    finish(io, common.out.as_deref(), manifest, &sources, Outputs::single(text))
}

fn render(frame: &Frame, format: Option<Format>) -> String {
    match format.unwrap_or(Format::Csv) {
        Format::Csv => frame.to_csv(),
        Format::Json => frame.to_json(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AggregateConfig {
    gateway: Option<String>,
    low: f64,
    high: f64,
    width: f64,
}

impl Default for AggregateConfig {
    fn default() -> Self {
        AggregateConfig { gateway: None, low: 0.0, high: 100.0, width: DEFAULT_CLASS_WIDTH }
    }
}

struct AggregateFlags {
    gateway: Option<String>,
    low: Option<f64>,
    high: Option<f64>,
    width: Option<f64>,
}

fn class_frame(set: &RecordSet, gateway: &str, cfg: &AggregateConfig, with_gateway: bool) -> Result<Frame> {
    let (mut h, mut rssi, mut snr) = (Vec::new(), Vec::new(), Vec::new());
    for r in set.for_gateway(gateway) {
        if let Some(v) = r.soil_humidity {
            h.push(v);
            rssi.push(r.rssi);
            snr.push(r.snr);
        }
    }
    let rows = aggregate_classes(&h, &rssi, &snr, cfg.low, cfg.high, cfg.width)?;
    let mut cols = vec!["class_low", "class_high", "mean_rssi", "mean_snr", "count"];
    if with_gateway {
        cols.insert(0, "gateway_id");
    }
    let mut frame = Frame::new(cols);
    for r in rows {
        let mut row: Vec<Cell> =
            vec![r.class_low.into(), r.class_high.into(), r.mean_rssi.into(), r.mean_snr.into(), r.count.into()];
        if with_gateway {
            row.insert(0, gateway.into());
        }
        frame.push(row);
    }
    Ok(frame)
}

fn aggregate(io: &mut Io, common: &Common, input: &str, flags: AggregateFlags) -> Result<()> {
    let (mut cfg, cfg_src): (AggregateConfig, _) = load_config(io, common.config.as_deref())?;
    cfg.gateway = flags.gateway.or(cfg.gateway);
    cfg.low = flags.low.unwrap_or(cfg.low);
    cfg.high = flags.high.unwrap_or(cfg.high);
    cfg.width = flags.width.unwrap_or(cfg.width);
    let (src, set) = io.records(input)?;
    let gateway = match &cfg.gateway {
        Some(g) if set.gateways().contains(g) => g.clone(),
        Some(g) => anyhow::bail!("gateway `{g}` not present in {input}"),
        None => busiest_gateway(&set).context("record set is empty")?,
    };
    cfg.gateway = Some(gateway.clone());
    let frame = class_frame(&set, &gateway, &cfg, false)?;
    let text = render(&frame, common.format);
    let manifest = RunManifest::new("aggregate", common.seed, to_value(&cfg));
    let sources: Vec<&Source> = cfg_src.iter().chain([&src]).collect();
    finish(io, common.out.as_deref(), manifest, &sources, Outputs::single(text))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CorrelateConfig {
    primary: Option<String>,
}

fn correlate(io: &mut Io, common: &Common, input: &str) -> Result<()> {
    let (cfg, cfg_src): (CorrelateConfig, _) = load_config(io, common.config.as_deref())?;
    let (src, set) = io.records(input)?;
    let rows = align_gateways(&set, &AlignPolicy { primary: cfg.primary.clone() })?;
    let humidity = rows
        .humidity
        .iter()
        .map(|h| h.context("correlation needs humidity on every aligned row"))
        .collect::<Result<Vec<f64>>>()?;
    let mut columns = vec![("humidity".to_string(), humidity)];
    for (j, name) in rows.column_names().into_iter().enumerate() {
        columns.push((name, rows.column(j)));
    }
    let m = correlation_matrix(&columns)?;
    let labels: Vec<String> = columns.into_iter().map(|(l, _)| l).collect();
    let text = match common.format.unwrap_or(Format::Csv) {
        Format::Csv => correlation_to_csv(&labels, &m),
        Format::Json => pretty(&json!({ "labels": labels, "matrix": m })),
    };
    let manifest = RunManifest::new("correlate", common.seed, to_value(&cfg));
    let sources: Vec<&Source> = cfg_src.iter().chain([&src]).collect();
    finish(io, common.out.as_deref(), manifest, &sources, Outputs::single(text))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DatasetConfig {
    pipeline: PipelineConfig,
    lags: bool,
}

fn dataset_frame(train: &Dataset, test: &Dataset) -> Frame {
    let mut cols = vec!["split".to_string()];
    cols.extend(train.feature_names.iter().cloned());
    cols.push("target".into());
    let mut frame = Frame::new(cols);
    for (name, ds) in [("train", train), ("test", test)] {
        for (row, &t) in ds.features.iter().zip(&ds.targets) {
            let mut cells: Vec<Cell> = vec![name.into()];
            cells.extend(row.iter().map(|&v| Cell::from(v)));
            cells.push(t.into());
            frame.push(cells);
        }
    }
    frame
}

fn dataset(io: &mut Io, common: &Common, input: &str, lags: bool) -> Result<()> {
    let (mut cfg, cfg_src): (DatasetConfig, _) = load_config(io, common.config.as_deref())?;
    cfg.lags |= lags;
    let (src, set) = io.records(input)?;
    let (train, test) = if cfg.lags {
        build_svr_data(&set, &cfg.pipeline)?
    } else {
        let rows = align_gateways(&set, &AlignPolicy { primary: cfg.pipeline.primary.clone() })?;
        chronological_split(&rows.to_table(cfg.pipeline.source)?, cfg.pipeline.train_fraction)?
    };
    let text = match common.format.unwrap_or(Format::Csv) {
        Format::Csv => dataset_frame(&train, &test).to_csv(),
        Format::Json => pretty(&json!({ "train": train, "test": test })),
    };
    let manifest = RunManifest::new("dataset", common.seed, to_value(&cfg));
    let sources: Vec<&Source> = cfg_src.iter().chain([&src]).collect();
    finish(io, common.out.as_deref(), manifest, &sources, Outputs::single(text))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SvrGridConfig {
    gamma: Vec<f64>,
    c: Vec<f64>,
    epsilon: Vec<f64>,
    folds: usize,
}

impl Default for SvrGridConfig {
    fn default() -> Self {
        SvrGridConfig { gamma: vec![1.0], c: vec![0.01, 0.1], epsilon: vec![0.1], folds: 5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SvrRunConfig {
    pipeline: PipelineConfig,
    hyper: SvrHyper,
    tol: f64,
    max_passes: usize,
    seed: u64,
    grid: Option<SvrGridConfig>,
}

impl Default for SvrRunConfig {
    fn default() -> Self {
        let opts = SvrTrainOptions::default();
        SvrRunConfig {
            pipeline: PipelineConfig::default(),
            hyper: SvrHyper::default(),
            tol: opts.tol,
            max_passes: opts.max_passes,
            seed: opts.seed,
            grid: None,
        }
    }
}

fn train_svr(
    io: &mut Io,
    common: &Common,
    input: &str,
    (c, epsilon, gamma): (Option<f64>, Option<f64>, Option<f64>),
    grid: bool,
) -> Result<()> {
    let (mut cfg, cfg_src): (SvrRunConfig, _) = load_config(io, common.config.as_deref())?;
    cfg.hyper.c = c.unwrap_or(cfg.hyper.c);
    cfg.hyper.epsilon = epsilon.unwrap_or(cfg.hyper.epsilon);
    cfg.hyper.gamma = gamma.unwrap_or(cfg.hyper.gamma);
    cfg.seed = common.seed.unwrap_or(cfg.seed);
    if grid && cfg.grid.is_none() {
        cfg.grid = Some(SvrGridConfig::default());
    }
    if cfg.grid.is_some() && common.out.is_none() {
        return Err(usage("train-svr with a grid writes a score table next to --out, which is required"));
    }
    let (src, set) = io.records(input)?;
    let (train, _) = build_svr_data(&set, &cfg.pipeline)?;
    let opts = SvrTrainOptions { tol: cfg.tol, max_passes: cfg.max_passes, seed: cfg.seed };
    let mut extra = Vec::new();
    let mut hyper = cfg.hyper;
    if let Some(g) = &cfg.grid {
        let res = grid_search_svr(&train.features, &train.targets, &g.gamma, &g.c, &g.epsilon, g.folds, &opts)?;
        hyper = res.best;
        let out = common.out.as_deref().expect("checked above");
        let table = match common.format.unwrap_or(Format::Csv) {
            Format::Csv => (sibling(out, ".grid.csv"), grid_to_csv(&res.table)),
            Format::Json => (sibling(out, ".grid.json"), pretty(&res.table)),
        };
        extra.push((table.0, table.1.into_bytes()));
    }
    let fit = svr_train(&train.features, &train.targets, &hyper, &opts)?;
    let mut resolved = to_value(&cfg);
    resolved["selected"] = to_value(&hyper);
    let manifest = RunManifest::new("train-svr", Some(cfg.seed), resolved);
    let sources: Vec<&Source> = cfg_src.iter().chain([&src]).collect();
    let model = fit.model.to_json() + "\n";
    finish(io, common.out.as_deref(), manifest, &sources, Outputs { primary: model.into_bytes(), extra })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct LstmRunConfig {
    pipeline: PipelineConfig,
    units1: usize,
    units2: usize,
    dropout_p: f64,
    train: TrainConfig,
}

impl Default for LstmRunConfig {
    fn default() -> Self {
        let spec = LstmSpec::new(1);
        LstmRunConfig {
            pipeline: PipelineConfig::default(),
            units1: spec.units1,
            units2: spec.units2,
            dropout_p: spec.dropout_p,
            train: TrainConfig::default(),
        }
    }
}

fn train_lstm_cmd(
    io: &mut Io,
    common: &Common,
    input: &str,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
) -> Result<()> {
    let out = common.out.as_deref().ok_or_else(|| usage("train-lstm writes a model and history and needs --out"))?;
    let (mut cfg, cfg_src): (LstmRunConfig, _) = load_config(io, common.config.as_deref())?;
    cfg.train.seed = common.seed.unwrap_or(cfg.train.seed);
    cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
    cfg.train.lr = lr.unwrap_or(cfg.train.lr);
    cfg.train.batch_size = batch_size.unwrap_or(cfg.train.batch_size);
    let (src, set) = io.records(input)?;
    let data = build_lstm_data(&set, &cfg.pipeline)?;
    let spec =
        LstmSpec { input_width: data.train.width, units1: cfg.units1, units2: cfg.units2, dropout_p: cfg.dropout_p };
    let (model, history) = train_lstm(&data.train, data.val.as_ref(), &spec, &cfg.train)?;
    let history_file = match common.format.unwrap_or(Format::Csv) {
        Format::Csv => (sibling(out, ".history.csv"), history_to_csv(&history)),
        Format::Json => (sibling(out, ".history.json"), pretty(&history)),
    };
    let manifest = RunManifest::new("train-lstm", Some(cfg.train.seed), to_value(&cfg));
    let sources: Vec<&Source> = cfg_src.iter().chain([&src]).collect();
    let text = model.to_json(Some(&cfg.train), Some(cfg.pipeline.steps)) + "\n";
    let outputs = Outputs { primary: text.into_bytes(), extra: vec![(history_file.0, history_file.1.into_bytes())] };
    finish(io, Some(out), manifest, &sources, outputs)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvaluateConfig {
    pipeline: PipelineConfig,
}

fn metrics_frame(eval: &Evaluation) -> Frame {
    let m = &eval.metrics;
    let mut frame = Frame::new(["n", "mse", "mae", "mse_conventional", "mse_pct", "mae_pct"]);
    let (dm, da) = m.denormalized.as_ref().map(|d| (d.mse, d.mae)).unwrap_or((f64::NAN, f64::NAN));
    frame.push(vec![m.n.into(), m.mse.into(), m.mae.into(), m.mse_conventional.into(), dm.into(), da.into()]);
    frame
}

fn evaluate(io: &mut Io, common: &Common, input: &str, model: &Path, predictions: Option<&Path>) -> Result<()> {
    let (cfg, cfg_src): (EvaluateConfig, _) = load_config(io, common.config.as_deref())?;
    let model_src = io.read(&model.display().to_string())?;
    let text = std::str::from_utf8(&model_src.bytes).context("model file is not UTF-8")?;
    let any = AnyModel::from_json(text).with_context(|| format!("loading model {}", model.display()))?;
    let (src, set) = io.records(input)?;
    let eval = evaluate_on_records(&any, &set, &cfg.pipeline)?;
    let text = match common.format.unwrap_or(Format::Json) {
        Format::Json => pretty(&eval.metrics),
        Format::Csv => metrics_frame(&eval).to_csv(),
    };
    let extra = predictions.map(|p| (p.to_path_buf(), eval.predictions_csv().into_bytes())).into_iter().collect();
    let manifest = RunManifest::new("evaluate", common.seed, to_value(&cfg));
    let sources: Vec<&Source> = cfg_src.iter().chain([&model_src, &src]).collect();
    finish(io, common.out.as_deref(), manifest, &sources, Outputs { primary: text.into_bytes(), extra })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SweepRunConfig {
    pipeline: PipelineConfig,
    grid: SweepGrid,
    options: SweepOptions,
    seed: u64,
}

impl Default for SweepRunConfig {
    fn default() -> Self {
        SweepRunConfig {
            pipeline: PipelineConfig::default(),
            grid: SweepGrid::default(),
            options: SweepOptions::default(),
            seed: TrainConfig::default().seed,
        }
    }
}

fn sweep(
    io: &mut Io,
    common: &Common,
    input: &str,
    jobs: Option<usize>,
    epoch_scale: Option<f64>,
    timing: bool,
) -> Result<()> {
    let (mut cfg, cfg_src): (SweepRunConfig, _) = load_config(io, common.config.as_deref())?;
    cfg.seed = common.seed.unwrap_or(cfg.seed);
    cfg.options.jobs = jobs.unwrap_or(cfg.options.jobs);
    cfg.options.epoch_scale = epoch_scale.unwrap_or(cfg.options.epoch_scale);
    cfg.options.timing |= timing;
    let (src, set) = io.records(input)?;
    let data = build_lstm_data(&set, &cfg.pipeline)?;
    let rows = sweep_lstm(&data, &cfg.grid, cfg.seed, &cfg.options)?;
    let mut frame = Frame::new(["layer1", "layer2", "lr", "epochs", "mse", "mae", "wall_seconds"]);
    for r in &rows {
        frame.push(vec![
            r.layer1.into(),
            r.layer2.into(),
            r.lr.into(),
            r.epochs.into(),
            r.mse.into(),
            r.mae.into(),
            r.wall_seconds.into(),
        ]);
    }
    let text = match common.format.unwrap_or(Format::Csv) {
        Format::Csv => frame.to_csv(),
        Format::Json => pretty(&json!({ "rows": rows, "best": best_row(&rows) })),
    };
    // Thread count never changes results, so it stays out of the hashed config.
    let mut resolved = to_value(&cfg);
    resolved["options"].as_object_mut().expect("options object").remove("jobs");
    let manifest = RunManifest::new("sweep", Some(cfg.seed), resolved);
    let sources: Vec<&Source> = cfg_src.iter().chain([&src]).collect();
    finish(io, common.out.as_deref(), manifest, &sources, Outputs::single(text))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct LifetimeConfig {
    profile: Option<EnergyProfile>,
    battery: Option<BatterySpec>,
}

fn lifetime(io: &mut Io, common: &Common, profile: Option<Profile>) -> Result<()> {
    let (cfg, cfg_src): (LifetimeConfig, _) = load_config(io, common.config.as_deref())?;
    let builtins = builtin_profiles();
    let preset = match profile.unwrap_or(Profile::Sensor) {
        Profile::Sensor => &builtins.sensor,
        Profile::Beacon => &builtins.beacon,
    };
    let resolved = LifetimeConfig {
        profile: Some(cfg.profile.unwrap_or_else(|| preset.clone())),
        battery: Some(cfg.battery.unwrap_or_else(|| builtins.battery.clone())),
    };
    let report = lifetime_report(resolved.profile.as_ref().unwrap(), resolved.battery.as_ref().unwrap())?;
    let text = match common.format.unwrap_or(Format::Json) {
        Format::Json => pretty(&report),
        Format::Csv => {
            let mut f = Frame::new(["profile", "avg_current_ma", "lifetime_days", "lifetime_years"]);
            f.push(vec![
                report.profile.clone().into(),
                report.avg_current_ma.into(),
                report.lifetime_days.into(),
                report.lifetime_years.into(),
            ]);
            f.to_csv()
        }
    };
    let manifest = RunManifest::new("lifetime", common.seed, to_value(&resolved));
    let sources: Vec<&Source> = cfg_src.iter().collect();
    finish(io, common.out.as_deref(), manifest, &sources, Outputs::single(text))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PlotConfig {
    pipeline: PipelineConfig,
    low: f64,
    high: f64,
    width: f64,
}

impl Default for PlotConfig {
    fn default() -> Self {
        let agg = AggregateConfig::default();
        PlotConfig { pipeline: PipelineConfig::default(), low: agg.low, high: agg.high, width: agg.width }
    }
}

fn predictions_frame(model: &AnyModel, set: &RecordSet, pipeline: &PipelineConfig) -> Result<Frame> {
    let (eval, target) = match model {
        AnyModel::Svr(m) => {
            let (_, test) = build_svr_data(set, pipeline)?;
            (evaluate_svr(m, &test)?, test.norm.target)
        }
        AnyModel::Lstm { model, steps } => {
            let cfg = PipelineConfig { steps: steps.unwrap_or(pipeline.steps), ..pipeline.clone() };
            let data = build_lstm_data(set, &cfg)?;
            (evaluate_lstm(model, &data.test, Some(&data.norm))?, data.norm.target)
        }
    };
    let mut frame = Frame::new(["idx", "prediction", "target"]);
    for (i, (p, t)) in eval.predictions.iter().zip(&eval.targets).enumerate() {
        frame.push(vec![i.into(), target.denormalize(*p).into(), target.denormalize(*t).into()]);
    }
    Ok(frame)
}

fn plot_data(io: &mut Io, common: &Common, input: &str, kind: PlotKind, model: Option<&Path>) -> Result<()> {
    let (cfg, cfg_src): (PlotConfig, _) = load_config(io, common.config.as_deref())?;
    let (src, set) = io.records(input)?;
    let mut sources: Vec<Source> = Vec::new();
    let frame = match kind {
        PlotKind::Classes => {
            let agg = AggregateConfig { gateway: None, low: cfg.low, high: cfg.high, width: cfg.width };
            let mut all = Frame::default();
            for g in set.gateways() {
                let f = class_frame(&set, g, &agg, true)?;
                all.columns = f.columns;
                all.rows.extend(f.rows);
            }
            all
        }
        PlotKind::Predictions => {
            let path = model.ok_or_else(|| usage("plot-data --kind predictions needs --model"))?;
            let model_src = io.read(&path.display().to_string())?;
            let text = std::str::from_utf8(&model_src.bytes).context("model file is not UTF-8")?;
            let any = AnyModel::from_json(text).with_context(|| format!("loading model {}", path.display()))?;
            sources.push(model_src);
            predictions_frame(&any, &set, &cfg.pipeline)?
        }
        PlotKind::Series => {
            let rows = align_gateways(&set, &AlignPolicy { primary: cfg.pipeline.primary.clone() })?;
            let mut cols = vec!["ts".to_string(), "humidity".to_string()];
            cols.extend(rows.column_names());
            let mut frame = Frame::new(cols);
            for (i, values) in rows.rows.iter().enumerate() {
                let mut cells: Vec<Cell> = vec![rows.ts[i].into(), rows.humidity[i].unwrap_or(f64::NAN).into()];
                cells.extend(values.iter().map(|&v| Cell::from(v)));
                frame.push(cells);
            }
            frame
        }
    };
    let text = render(&frame, common.format);
    let mut resolved = to_value(&cfg);
    resolved["kind"] = json!(format!("{kind:?}").to_lowercase());
    let manifest = RunManifest::new("plot-data", common.seed, resolved);
    let all: Vec<&Source> = cfg_src.iter().chain(sources.iter()).chain([&src]).collect();
    finish(io, common.out.as_deref(), manifest, &all, Outputs::single(text))
}
