//! Runs the seeded end-to-end pipeline and prints test metrics for both models.

use std::time::Instant;

use soilwave_core::harness::{build_lstm_data, build_svr_data, evaluate_lstm, evaluate_svr, PipelineConfig};
use soilwave_core::lstm::{train_lstm, LstmSpec, TrainConfig};
use soilwave_core::preprocess::pearson;
use soilwave_core::simulator::{simulate, simulate_humidity, SimConfig};
use soilwave_core::svr::{svr_train, SvrHyper, SvrTrainOptions};

fn main() -> soilwave_core::Result<()> {
    let epochs: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(50);
    let cfg = SimConfig::default();
    let hum = simulate_humidity(&cfg.humidity, cfg.samples, cfg.sample_period as f64, cfg.seed)?;
    let (lo, hi) = hum.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let cut = hum.len() * 8 / 10;
    let (tlo, thi) = hum[cut..].iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let (rlo, rhi) = hum[..cut].iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!("humidity range all [{lo:.2}, {hi:.2}] train [{rlo:.2}, {rhi:.2}] test [{tlo:.2}, {thi:.2}]");
    let set = simulate(&cfg)?;
    for g in set.gateways() {
        let rssi: Vec<f64> = set.for_gateway(g).map(|r| r.rssi).collect();
        println!("pearson(h, rssi_{g}) = {:.3}", pearson(&hum, &rssi)?);
    }
    let pipe = PipelineConfig::default();

    let t = Instant::now();
    let (train, test) = build_svr_data(&set, &pipe)?;
    let fit = svr_train(&train.features, &train.targets, &SvrHyper::default(), &SvrTrainOptions::default())?;
    let svr_eval = evaluate_svr(&fit.model, &test)?;
    println!(
        "svr: {:?} iters {} svs {} -> {:?} ({:.1}s)",
        fit.termination,
        fit.iterations,
        fit.model.coeffs.len(),
        svr_eval.metrics,
        t.elapsed().as_secs_f64()
    );

    let t = Instant::now();
    let data = build_lstm_data(&set, &pipe)?;
    let spec = LstmSpec::new(data.train.width);
    let tc = TrainConfig { epochs, ..TrainConfig::default() };
    let (model, hist) = train_lstm(&data.train, data.val.as_ref(), &spec, &tc)?;
    for h in hist.iter().step_by((epochs / 10).max(1)) {
        println!("  epoch {} train {:.5} val {:?}", h.epoch, h.train_loss, h.val_loss);
    }
    let ev = evaluate_lstm(&model, &data.test, Some(&data.norm))?;
    println!("lstm: {:?} ({:.1}s)", ev.metrics, t.elapsed().as_secs_f64());
    Ok(())
}
