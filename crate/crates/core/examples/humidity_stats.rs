//! Prints humidity range and per-gateway RSSI correlation for a simulator config.

use soilwave_core::preprocess::pearson;
use soilwave_core::simulator::{simulate_humidity, simulate_uplinks, SimConfig};

fn main() -> soilwave_core::Result<()> {
    let mut cfg = match std::env::args().nth(1) {
        Some(json) => SimConfig::from_json(&json)?,
        None => SimConfig::default(),
    };
    for seed in [42u64, 7, 1, 2, 3] {
        cfg.seed = seed;
        let hum = simulate_humidity(&cfg.humidity, cfg.samples, cfg.sample_period as f64, seed)?;
        let cut = hum.len() * 8 / 10;
        let range = |s: &[f64]| s.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let (rlo, rhi) = range(&hum[..cut]);
        let (tlo, thi) = range(&hum[cut..]);
        let set = simulate_uplinks(&hum, &cfg)?;
        let rs: Vec<String> = set
            .gateways()
            .iter()
            .map(|g| {
                let rssi: Vec<f64> = set.for_gateway(g).map(|r| r.rssi).collect();
                format!("{g}:{:.3}", pearson(&hum, &rssi).unwrap())
            })
            .collect();
        println!("seed {seed:>2}: train [{rlo:.1}, {rhi:.1}] test [{tlo:.1}, {thi:.1}] r {}", rs.join(" "));
    }
    Ok(())
}
