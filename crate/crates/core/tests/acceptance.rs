//! Acceptance run: one PASS/FAIL line per criterion, then a single assertion.
//!
//! Tolerances and runtime budgets are pinned here.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use soilwave_core::energy::{builtin_profiles, lifetime_report};
use soilwave_core::harness::{
    build_lstm_data, build_svr_data, evaluate_lstm, evaluate_svr, mae, mse, run_sweep_row, sweep_lstm, PipelineConfig,
    SweepGrid, SweepOptions,
};
use soilwave_core::lstm::{lstm_cell_forward, train_lstm, LstmSpec, LstmState, TrainConfig};
use soilwave_core::preprocess::{chronological_split, decompose_fading, pearson, split_counts, Table};
use soilwave_core::rng::SeededRng;
use soilwave_core::simulator::{simulate, GatewayChannelConfig, GatewayEntry, SimConfig};
use soilwave_core::svr::{svr_train, SvrHyper, SvrTrainOptions};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(budget: Duration, start: Instant, detail: String) -> Outcome {
    let took = start.elapsed();
    check(took <= budget, format!("{detail}; {:.2}s of {}s budget", took.as_secs_f64(), budget.as_secs()))
}

fn energy() -> Outcome {
    let start = Instant::now();
    let b = builtin_profiles();
    let sensor = lifetime_report(&b.sensor, &b.battery).map_err(|e| e.to_string())?;
    let beacon = lifetime_report(&b.beacon, &b.battery).map_err(|e| e.to_string())?;
    let detail = format!("sensor {:.2} d, beacon {:.2} d", sensor.lifetime_days, beacon.lifetime_days);
    if (sensor.lifetime_days - 834.37).abs() > 0.5 || (beacon.lifetime_days - 1580.0).abs() > 1.0 {
        return Err(detail);
    }
    within(Duration::from_secs(1), start, detail)
}

fn gradient() -> Outcome {
    let start = Instant::now();
    let (worst, _, checked) = gradient_check(1, 1e-5);
    let detail = format!("max rel err {worst:.2e} over {checked} params");
    if worst >= 1e-5 {
        return Err(detail);
    }
    within(Duration::from_secs(30), start, detail)
}

fn cell() -> Outcome {
    let mut rng = SeededRng::new(100);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let u = 1 + rng.index(6);
        let d = 1 + rng.index(5);
        let p = random_layer(&mut rng, u, d, 1.5);
        let x: Vec<f64> = (0..d).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
        let prev = LstmState {
            h: (0..u).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
            c: (0..u).map(|_| rng.uniform_range(-3.0, 3.0)).collect(),
        };
        let (next, _) = lstm_cell_forward(&p, &x, &prev).map_err(|e| e.to_string())?;
        let (h, c) = cell_oracle(&p, &x, &prev.h, &prev.c);
        for k in 0..u {
            worst = worst.max((next.h[k] - h[k]).abs()).max((next.c[k] - c[k]).abs());
        }
    }
    check(worst <= 1e-12, format!("max abs diff {worst:.2e} over 100 cases"))
}

fn svr_oracle() -> Outcome {
    let start = Instant::now();
    let opts = SvrTrainOptions { tol: 1e-6, ..SvrTrainOptions::default() };
    let (mut gap, mut kkt): (f64, f64) = (0.0, 0.0);
    let sets = small_sets();
    for (x, y, h) in &sets {
        let fit = svr_train(x, y, h, &opts).map_err(|e| e.to_string())?;
        let psi = primal(x, y, &fit.duals, fit.model.bias, h);
        gap = gap.max((psi - dual_oracle(x, y, h)).abs());
        kkt = kkt.max(kkt_violation(x, y, &fit.duals, fit.model.bias, h));
    }
    let detail = format!("{} sets, max |primal - oracle| {gap:.2e}, max kkt {kkt:.2e}", sets.len());
    if gap > 1e-3 || kkt >= 1e-3 {
        return Err(detail);
    }
    within(Duration::from_secs(120), start, detail)
}

fn decomposition() -> Outcome {
    let mut rng = SeededRng::new(2024);
    let mut worst: f64 = 0.0;
    let mut inexact = 0usize;
    for _ in 0..1000 {
        let n = 1 + rng.index(200);
        let w = 1 + rng.index(30);
        let raw: Vec<f64> = (0..n).map(|_| -90.0 + 10.0 * rng.normal()).collect();
        let d = decompose_fading(&raw, w).map_err(|e| e.to_string())?;
        for t in 0..n {
            if d.long_term[t] + d.short_term[t] != raw[t] {
                inexact += 1;
            }
            let lo = t.saturating_sub(w - 1);
            let dev: f64 = raw[lo..=t].iter().map(|v| v - d.long_term[t]).sum::<f64>() / (t - lo + 1) as f64;
            worst = worst.max(dev.abs());
        }
    }
    check(inexact == 0 && worst <= 1e-9, format!("{inexact} inexact sums, max window mean {worst:.2e}"))
}

fn metrics() -> Outcome {
    let half = mse(&[1.0, 1.0], &[0.0, 0.0]).map_err(|e| e.to_string())?;
    let mut rng = SeededRng::new(6);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = 1 + rng.index(100);
        let a: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mut sum = 0.0;
        for i in 0..n {
            sum += (a[i] - b[i]).abs();
        }
        worst = worst.max((mae(&a, &b).map_err(|e| e.to_string())? - sum / n as f64).abs());
    }
    check(half == 0.5 && worst <= 1e-12, format!("mse([1,1],[0,0]) = {half}, mae max diff {worst:.2e}"))
}

fn split() -> Outcome {
    let counts = split_counts(13900, 0.8).map_err(|e| e.to_string())?;
    let table = Table::new(
        vec!["x".into()],
        (0..13900).map(|i| vec![i as f64]).collect(),
        (0..13900).map(|i| (i % 97) as f64).collect(),
    )
    .map_err(|e| e.to_string())?;
    let (train, test) = chronological_split(&table, 0.8).map_err(|e| e.to_string())?;
    let ok = counts == (11120, 2780) && train.len() == 11120 && test.len() == 2780;
    check(ok, format!("counts {counts:?}, datasets ({}, {})", train.len(), test.len()))
}

fn pipeline() -> Outcome {
    let start = Instant::now();
    let set = simulate(&SimConfig::default()).map_err(|e| e.to_string())?;
    let pipe = PipelineConfig::default();
    let (train, test) = build_svr_data(&set, &pipe).map_err(|e| e.to_string())?;
    let hyper = SvrHyper { c: 0.1, epsilon: 0.1, gamma: 1.0 };
    let fit =
        svr_train(&train.features, &train.targets, &hyper, &SvrTrainOptions::default()).map_err(|e| e.to_string())?;
    let svr = evaluate_svr(&fit.model, &test).map_err(|e| e.to_string())?.metrics.mse;

    let data = build_lstm_data(&set, &pipe).map_err(|e| e.to_string())?;
    let spec = LstmSpec::new(data.train.width);
    let cfg = TrainConfig { lr: 0.001, epochs: 50, batch_size: 32, ..TrainConfig::default() };
    let (model, _) = train_lstm(&data.train, data.val.as_ref(), &spec, &cfg).map_err(|e| e.to_string())?;
    let lstm = evaluate_lstm(&model, &data.test, Some(&data.norm)).map_err(|e| e.to_string())?.metrics.mse;
    let detail = format!("lstm mse {lstm:.5}, svr mse {svr:.5}");
    if !(lstm < 0.005 && svr < 0.05 && lstm < svr) {
        return Err(detail);
    }
    within(Duration::from_secs(600), start, detail)
}

fn sweep() -> Outcome {
    let cfg = SimConfig { samples: 300, ..SimConfig::default() };
    let set = simulate(&cfg).map_err(|e| e.to_string())?;
    let pipe = PipelineConfig { steps: 6, ..PipelineConfig::default() };
    let data = build_lstm_data(&set, &pipe).map_err(|e| e.to_string())?;
    let grid = SweepGrid::default();
    // Grid epochs 50..250 scaled to 1..5 so the whole grid trains quickly.
    let opts = SweepOptions { epoch_scale: 0.02, ..SweepOptions::default() };
    let rows = sweep_lstm(&data, &grid, 42, &opts).map_err(|e| e.to_string())?;
    let points = grid.points();
    let order_ok = rows.len() == 20
        && rows.iter().zip(&points).all(|(r, p)| {
            (r.layer1, r.layer2, r.lr.to_bits(), r.epochs) == (p.layer1, p.layer2, p.lr.to_bits(), p.epochs)
        });
    let mut mismatched = Vec::new();
    for i in [0, 7, 19] {
        let again = run_sweep_row(&data, &points[i], i, 42, &opts).map_err(|e| e.to_string())?;
        if again.mse.to_bits() != rows[i].mse.to_bits() || again.mae.to_bits() != rows[i].mae.to_bits() {
            mismatched.push(i);
        }
    }
    check(
        order_ok && mismatched.is_empty(),
        format!(
            "{} rows, grid order {order_ok}, standalone reruns of rows 0/7/19 differing: {mismatched:?}",
            rows.len()
        ),
    )
}

fn correlation() -> Outcome {
    let quiet = GatewayChannelConfig { noise_sigma: 0.0, snr_sigma: 0.0, ..GatewayChannelConfig::near() };
    let cfg = SimConfig { gateways: vec![GatewayEntry { id: "g".into(), channel: quiet }], ..SimConfig::default() };
    let set = simulate(&cfg).map_err(|e| e.to_string())?;
    let (h, rssi): (Vec<f64>, Vec<f64>) = set.records().iter().map(|r| (r.soil_humidity.unwrap(), r.rssi)).unzip();
    let r0 = pearson(&h, &rssi).map_err(|e| e.to_string())?;

    let set = simulate(&SimConfig::default()).map_err(|e| e.to_string())?;
    let mut noisy = BTreeMap::new();
    for g in set.gateways() {
        let (h, rssi): (Vec<f64>, Vec<f64>) = set.for_gateway(g).map(|r| (r.soil_humidity.unwrap(), r.rssi)).unzip();
        if h.len() < 2000 {
            return Err(format!("{g}: only {} samples", h.len()));
        }
        noisy.insert(g.clone(), pearson(&h, &rssi).map_err(|e| e.to_string())?);
    }
    let ok = (r0 + 1.0).abs() <= 1e-12 && noisy.values().all(|&r| r < -0.5);
    check(ok, format!("noiseless r = {r0}, default noise {noisy:?}"))
}

fn cli(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let mut argv = vec!["soilwave".to_string()];
    argv.extend(args.iter().map(|a| a.replace("{dir}", &dir.display().to_string())));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = soilwave_cli::run(argv, &mut std::io::empty(), &mut out, &mut err);
    if code != 0 {
        return Err(format!("{args:?} exited {code}: {}", String::from_utf8_lossy(&err).trim()));
    }
    Ok(out)
}

/// Every subcommand, run in a fresh directory; returns stdout per command and
/// every file written, with the directory prefix removed from file contents.
fn cli_session(dir: &Path) -> Result<(Vec<Vec<u8>>, BTreeMap<String, Vec<u8>>), String> {
    std::fs::write(
        dir.join("sweep.json"),
        r#"{"grid":{"layer1":[4],"layer2":[2,4],"lr":[0.01],"epochs":[1,2]},"pipeline":{"steps":4}}"#,
    )
    .map_err(|e| e.to_string())?;
    std::fs::write(dir.join("lstm.json"), r#"{"units1":4,"units2":4,"pipeline":{"steps":4}}"#)
        .map_err(|e| e.to_string())?;
    let commands: &[&[&str]] = &[
        &["simulate", "--samples", "240", "--seed", "9", "--out", "{dir}/sim.csv"],
        &["simulate", "--samples", "60", "--format", "json"],
        &["ingest", "-i", "{dir}/sim.csv", "--out", "{dir}/sim.bin"],
        &["decompose", "-i", "{dir}/sim.bin", "--out", "{dir}/dec.csv"],
        &["aggregate", "-i", "{dir}/sim.csv", "--width", "1", "--out", "{dir}/agg.csv"],
        &["correlate", "-i", "{dir}/sim.csv", "--out", "{dir}/cor.csv"],
        &["dataset", "-i", "{dir}/sim.csv", "--lags", "--format", "json", "--out", "{dir}/ds.json"],
        &["train-svr", "-i", "{dir}/sim.csv", "--grid", "--out", "{dir}/svr.json"],
        &[
            "train-lstm",
            "-i",
            "{dir}/sim.csv",
            "--config",
            "{dir}/lstm.json",
            "--epochs",
            "2",
            "--out",
            "{dir}/lstm.json.model",
        ],
        &["evaluate", "-i", "{dir}/sim.csv", "--model", "{dir}/svr.json", "--predictions", "{dir}/pred.csv"],
        &[
            "evaluate",
            "-i",
            "{dir}/sim.csv",
            "--model",
            "{dir}/lstm.json.model",
            "--format",
            "csv",
            "--out",
            "{dir}/eval.csv",
        ],
        &["sweep", "-i", "{dir}/sim.csv", "--config", "{dir}/sweep.json", "--out", "{dir}/sweep.csv"],
        &["lifetime", "--profile", "beacon", "--out", "{dir}/life.json"],
        &["lifetime", "--format", "csv"],
        &["plot-data", "-i", "{dir}/sim.csv", "--kind", "classes", "--out", "{dir}/pc.csv"],
        &["plot-data", "-i", "{dir}/sim.csv", "--kind", "series", "--out", "{dir}/ps.csv"],
        &[
            "plot-data",
            "-i",
            "{dir}/sim.csv",
            "--kind",
            "predictions",
            "--model",
            "{dir}/svr.json",
            "--out",
            "{dir}/pp.csv",
        ],
    ];
    let mut stdouts = Vec::new();
    for args in commands {
        stdouts.push(cli(dir, args)?);
    }
    let prefix = dir.display().to_string();
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        let bytes = match String::from_utf8(bytes) {
            Ok(text) => text.replace(&prefix, "{dir}").into_bytes(),
            Err(e) => e.into_bytes(),
        };
        files.insert(path.file_name().unwrap().to_string_lossy().into_owned(), bytes);
    }
    Ok((stdouts, files))
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let (out_a, files_a) = cli_session(a.path())?;
    let (out_b, files_b) = cli_session(b.path())?;
    let differing: Vec<&String> = files_a.keys().filter(|k| files_a.get(*k) != files_b.get(*k)).collect();
    let ok = out_a == out_b && files_a.len() == files_b.len() && differing.is_empty();
    check(ok, format!("{} stdout streams, {} files compared, differing: {differing:?}", out_a.len(), files_a.len()))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("energy lifetime presets", energy),
        ("lstm gradient check", gradient),
        ("lstm cell oracle", cell),
        ("svr dual oracle", svr_oracle),
        ("fading decomposition invariants", decomposition),
        ("metric convention", metrics),
        ("chronological split counts", split),
        ("seeded end-to-end pipeline", pipeline),
        ("sweep shape and reruns", sweep),
        ("correlation sign", correlation),
        ("cli determinism", determinism),
    ];
    // Written to the process stdout directly so the report shows without --nocapture.
    let mut report = std::io::stdout().lock();
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => {
                let _ = writeln!(report, "criterion {:>2} PASS {name}: {detail}", i + 1);
            }
            Err(detail) => {
                let _ = writeln!(report, "criterion {:>2} FAIL {name}: {detail}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
