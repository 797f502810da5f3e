//! Duty-cycle battery lifetime model.
//!
//! A device draws `i_active` for `t_active` seconds once per `period` and
//! `i_sleep` otherwise. Lifetime is the derated capacity divided by the
//! period-averaged current.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyProfile {
    pub label: String,
    /// Average current while awake, mA.
    pub i_active: f64,
    /// Awake time per period, s.
    pub t_active: f64,
    /// Sleep current, mA.
    pub i_sleep: f64,
    /// Wake-up period, s.
    pub period: f64,
}

impl EnergyProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::arg(format!("period must be > 0, got {}", self.period)));
        }
        if !(self.t_active >= 0.0 && self.t_active <= self.period) {
            return Err(Error::invalid("t_active", format!("{} outside [0, period]", self.t_active)));
        }
        if !(self.i_active >= 0.0 && self.i_sleep >= 0.0) {
            return Err(Error::invalid("current", "currents must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatterySpec {
    pub capacity_mah: f64,
    /// Fraction of capacity lost to self-discharge, in `[0, 1)`.
    pub derate: f64,
}

impl BatterySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity_mah > 0.0 && self.capacity_mah.is_finite()) {
            return Err(Error::invalid("capacity_mah", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.derate) {
            return Err(Error::invalid("derate", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn usable_mah(&self) -> f64 {
        self.capacity_mah * (1.0 - self.derate)
    }
}

/// Period-averaged current in mA.
pub fn average_current(p: &EnergyProfile) -> Result<f64> {
    p.validate()?;
    Ok((p.i_active * p.t_active + p.i_sleep * (p.period - p.t_active)) / p.period)
}

/// Battery lifetime in days.
pub fn estimate_lifetime(p: &EnergyProfile, b: &BatterySpec) -> Result<f64> {
    b.validate()?;
    let avg = average_current(p)?;
    if avg <= 0.0 {
        return Err(Error::Degenerate("average current is zero".into()));
    }
    Ok(b.usable_mah() / avg / 24.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifetimeReport {
    pub profile: String,
    pub avg_current_ma: f64,
    pub lifetime_days: f64,
    pub lifetime_years: f64,
}

pub fn lifetime_report(p: &EnergyProfile, b: &BatterySpec) -> Result<LifetimeReport> {
    let days = estimate_lifetime(p, b)?;
    Ok(LifetimeReport {
        profile: p.label.clone(),
        avg_current_ma: average_current(p)?,
        lifetime_days: days,
        lifetime_years: days / 365.0,
    })
}

/// Per-component currents of a device while active, mA. Documentation only;
/// lifetime uses the averaged active current.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentCurrents {
    pub lora_ic: f64,
    pub soil_sensor: f64,
    pub mcu: f64,
    pub ldo: f64,
    pub timer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McuCurrent {
    pub name: String,
    /// Active current at 3.3 V / 8 MHz, mA.
    pub active_ma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Builtins {
    pub sensor: EnergyProfile,
    pub beacon: EnergyProfile,
    pub battery: BatterySpec,
    pub sensor_components: ComponentCurrents,
    pub beacon_components: ComponentCurrents,
    pub mcus: Vec<McuCurrent>,
}

pub const SLEEP_MA: f64 = 0.004;
pub const KEEPALIVE_PERIOD_S: f64 = 600.0;

/// Measured presets: the buried soil-moisture sensor, the sensor-free beacon,
/// a 10.4 Ah Li-SOCl₂ cell derated 15%, and MCU active currents.
pub fn builtin_profiles() -> Builtins {
    Builtins {
        sensor: EnergyProfile {
            label: "sensor".into(),
            i_active: 35.0,
            t_active: 7.5,
            i_sleep: SLEEP_MA,
            period: KEEPALIVE_PERIOD_S,
        },
        beacon: EnergyProfile {
            label: "beacon".into(),
            i_active: 25.0,
            t_active: 5.5,
            i_sleep: SLEEP_MA,
            period: KEEPALIVE_PERIOD_S,
        },
        battery: BatterySpec { capacity_mah: 10_400.0, derate: 0.15 },
        sensor_components: ComponentCurrents {
            lora_ic: 116.1,
            soil_sensor: 9.34,
            mcu: 9.09,
            ldo: 0.00377,
            timer: 0.000310,
        },
        beacon_components: ComponentCurrents {
            lora_ic: 116.1,
            soil_sensor: 0.0,
            mcu: 4.0,
            ldo: 0.00377,
            timer: 0.000310,
        },
        mcus: [("ATmega328P", 3.9), ("ATtiny84", 3.0), ("ATtiny85", 3.0), ("STM32", 8.0)]
            .into_iter()
            .map(|(name, active_ma)| McuCurrent { name: name.into(), active_ma })
            .collect(),
    }
}

impl Builtins {
    pub fn profile(&self, name: &str) -> Option<&EnergyProfile> {
        match name {
            "sensor" => Some(&self.sensor),
            "beacon" => Some(&self.beacon),
            _ => None,
        }
    }

    pub fn mcu(&self, name: &str) -> Option<f64> {
        self.mcus.iter().find(|m| m.name.eq_ignore_ascii_case(name)).map(|m| m.active_ma)
    }
}
