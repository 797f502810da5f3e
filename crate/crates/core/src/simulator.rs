//! Seeded synthetic humidity trajectories and per-gateway uplinks.
//!
//! The channel is linear in humidity: each gateway sees
//! `rssi0 + slope * (h - base)` plus Gaussian short-term noise, optionally
//! shifted by a fixed offset inside a daily window (the bi-modal "working
//! hours" mode of a far gateway). SNR follows the same form with its own
//! parameters. All randomness comes from [`SeededRng`] streams: the humidity
//! trajectory uses [`HUMIDITY_STREAM`], gateway `g` uses stream `g`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SeededRng, HUMIDITY_STREAM};
use crate::telemetry::{RecordSet, UplinkRecord};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HumidityModelConfig {
    /// Starting humidity and the reference point of the channel model, percent.
    pub base: f64,
    /// Expected rain events per day.
    pub event_rate: f64,
    /// Humidity added by one event, percent.
    pub event_gain: f64,
    /// Fraction of the excess over `clamp[0]` lost per sample.
    pub decay: f64,
    pub clamp: [f64; 2],
}

impl Default for HumidityModelConfig {
    fn default() -> Self {
        HumidityModelConfig { base: 35.0, event_rate: 1.2, event_gain: 8.0, decay: 0.003, clamp: [15.0, 55.0] }
    }
}

impl HumidityModelConfig {
    pub fn validate(&self) -> Result<()> {
        let [low, high] = self.clamp;
        if !(low < high) {
            return Err(Error::invalid("clamp", format!("low {low} must be below high {high}")));
        }
        if !(self.base >= low && self.base <= high) {
            return Err(Error::invalid("base", format!("{} outside clamp [{low}, {high}]", self.base)));
        }
        if !(self.event_rate >= 0.0 && self.event_rate.is_finite()) {
            return Err(Error::invalid("event_rate", "must be finite and >= 0"));
        }
        if !(self.event_gain > 0.0 && self.event_gain.is_finite()) {
            return Err(Error::invalid("event_gain", "must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.decay) {
            return Err(Error::invalid("decay", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayChannelConfig {
    pub rssi0: f64,
    /// dB per percent humidity; negative means wetter soil attenuates more.
    pub slope: f64,
    pub noise_sigma: f64,
    pub snr0: f64,
    pub snr_slope: f64,
    pub snr_sigma: f64,
    /// dB shift inside `bimodal_window`; 0 disables the mode.
    pub bimodal_offset: f64,
    /// `[start_hour, end_hour)` in local time.
    pub bimodal_window: [f64; 2],
}

impl Default for GatewayChannelConfig {
    fn default() -> Self {
        Self::near()
    }
}

impl GatewayChannelConfig {
    pub fn near() -> Self {
        GatewayChannelConfig {
            rssi0: -95.0,
            slope: -0.5,
            noise_sigma: 2.0,
            snr0: 6.0,
            snr_slope: -0.4,
            snr_sigma: 1.5,
            bimodal_offset: 0.0,
            bimodal_window: [8.0, 16.0],
        }
    }

    /// Same channel as [`near`](Self::near) with the working-hours offset enabled.
    pub fn far() -> Self {
        GatewayChannelConfig { bimodal_offset: -6.0, ..Self::near() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma", "must be >= 0"));
        }
        if !(self.snr_sigma >= 0.0) {
            return Err(Error::invalid("snr_sigma", "must be >= 0"));
        }
        let [start, end] = self.bimodal_window;
        if self.bimodal_offset != 0.0 && !(0.0 <= start && start < end && end <= 24.0) {
            return Err(Error::invalid(
                "bimodal_window",
                format!("[{start}, {end}) must satisfy 0 <= start < end <= 24"),
            ));
        }
        Ok(())
    }

    fn in_window(&self, local_hour: f64) -> bool {
        self.bimodal_offset != 0.0 && local_hour >= self.bimodal_window[0] && local_hour < self.bimodal_window[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayEntry {
    pub id: String,
    #[serde(default)]
    pub channel: GatewayChannelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Seconds between samples.
    pub sample_period: u32,
    /// Number of samples per gateway.
    pub samples: usize,
    /// Timestamp of the first sample, epoch seconds.
    pub start_ts: i64,
    /// Offset from UTC to local time in seconds, used for the bi-modal window.
    pub utc_offset_s: i64,
    pub humidity: HumidityModelConfig,
    pub gateways: Vec<GatewayEntry>,
    pub seed: u64,
}

impl Default for SimConfig {
    /// Ten days at a five-minute cadence, a far gateway `gw1` with the
    /// working-hours mode and a near gateway `gw2`.
    fn default() -> Self {
        SimConfig {
            sample_period: 300,
            samples: 2880,
            start_ts: 1_735_689_600,
            utc_offset_s: 0,
            humidity: HumidityModelConfig::default(),
            gateways: vec![
                GatewayEntry { id: "gw1".into(), channel: GatewayChannelConfig::far() },
                GatewayEntry { id: "gw2".into(), channel: GatewayChannelConfig::near() },
            ],
            seed: 42,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_period == 0 {
            return Err(Error::invalid("sample_period", "must be > 0"));
        }
        if self.gateways.is_empty() {
            return Err(Error::invalid("gateways", "at least one gateway is required"));
        }
        if self.start_ts <= 0 {
            return Err(Error::invalid("start_ts", "must be positive"));
        }
        self.humidity.validate()?;
        for g in &self.gateways {
            if g.id.is_empty() {
                return Err(Error::invalid("gateways.id", "must not be empty"));
            }
            g.channel.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-sample event probability for a Bernoulli process with the given daily rate.
pub fn event_probability(event_rate: f64, period_s: f64) -> f64 {
    (event_rate * period_s / SECONDS_PER_DAY).min(1.0)
}

/// Generates `n` humidity samples: exponential dry-down toward the lower
/// clamp, plus a seeded Bernoulli rain event per step.
pub fn simulate_humidity(cfg: &HumidityModelConfig, n: usize, period_s: f64, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::arg("humidity series length must be >= 1"));
    }
    if !(period_s > 0.0) {
        return Err(Error::arg("sample period must be > 0"));
    }
    cfg.validate()?;
    let [low, high] = cfg.clamp;
    let p_event = event_probability(cfg.event_rate, period_s);
    let mut rng = SeededRng::with_stream(seed, HUMIDITY_STREAM);

    let mut out = Vec::with_capacity(n);
    let mut h = cfg.base.clamp(low, high);
    out.push(h);
    for _ in 1..n {
        h = low + (h - low) * (1.0 - cfg.decay);
        if rng.bernoulli(p_event) {
            h += cfg.event_gain;
        }
        h = h.clamp(low, high);
        out.push(h);
    }
    Ok(out)
}

/// Local hour of day in `[0, 24)`.
pub fn local_hour(ts: i64, utc_offset_s: i64) -> f64 {
    (ts + utc_offset_s).rem_euclid(86_400) as f64 / 3600.0
}

/// Produces one uplink per (sample, gateway) carrying the ground-truth humidity.
pub fn simulate_uplinks(hum: &[f64], cfg: &SimConfig) -> Result<RecordSet> {
    if hum.is_empty() {
        return Err(Error::arg("humidity series is empty"));
    }
    cfg.validate()?;
    let base = cfg.humidity.base;
    let mut records = Vec::with_capacity(hum.len() * cfg.gateways.len());
    for (g, entry) in cfg.gateways.iter().enumerate() {
        let ch = &entry.channel;
        let mut rng = SeededRng::with_stream(cfg.seed, g as u64);
        for (t, &h) in hum.iter().enumerate() {
            let ts = cfg.start_ts + t as i64 * cfg.sample_period as i64;
            let offset = if ch.in_window(local_hour(ts, cfg.utc_offset_s)) { ch.bimodal_offset } else { 0.0 };
            // Both draws happen every sample so the stream position never
            // depends on the noise settings.
            let rssi_noise = rng.normal();
            let snr_noise = rng.normal();
            let rssi = ch.rssi0 + ch.slope * (h - base) + offset + ch.noise_sigma * rssi_noise;
            let snr = ch.snr0 + ch.snr_slope * (h - base) + offset + ch.snr_sigma * snr_noise;
            records.push(UplinkRecord {
                ts,
                gateway_id: entry.id.clone(),
                rssi: rssi.clamp(-200.0, 0.0),
                snr: snr.clamp(-30.0, 30.0),
                soil_humidity: Some(h),
                soil_temp: None,
            });
        }
    }
    RecordSet::new(records)
}

/// Humidity trajectory plus uplinks for a full configuration.
pub fn simulate(cfg: &SimConfig) -> Result<RecordSet> {
    let hum = simulate_humidity(&cfg.humidity, cfg.samples, cfg.sample_period as f64, cfg.seed)?;
    simulate_uplinks(&hum, cfg)
}
