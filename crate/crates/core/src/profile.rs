//! Synthetic exogenous time series: demands, renewable in-feed and price.
//!
//! Profiles start on a Monday at 00:00 and run at 15-minute resolution. The
//! generator is deterministic for a given seed and kind.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{STEPS_PER_DAY, STEPS_PER_HOUR};

pub const CSV_HEADER: &str = "step,thermal_demand_w,electrical_demand_w,wind_w,solar_w,price_per_mwh";

/// Lower clamp on thermal demand. Keeps the boiler above its minimum load when
/// it is the only unit the fallback policy runs.
pub const MIN_THERMAL_DEMAND_W: f64 = 0.25e6;
/// Upper clamp on thermal demand, below the boiler + CHP thermal rating.
pub const MAX_THERMAL_DEMAND_W: f64 = 2.8e6;

pub const PRICE_FLOOR: f64 = -50.0;
pub const PRICE_CAP: f64 = 350.0;

/// Day of year at which evaluation profiles start (early April).
pub const EVAL_START_DAY: usize = 91;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExogenousProfile {
    pub thermal_demand: Vec<f64>,
    pub electrical_demand: Vec<f64>,
    pub wind_infeed: Vec<f64>,
    pub solar_infeed: Vec<f64>,
    /// EUR per MWh; may be negative.
    pub elec_price: Vec<f64>,
    /// Day of year of step 0, used for seasonal plant inputs.
    pub start_day: usize,
}

impl ExogenousProfile {
    pub fn horizon(&self) -> usize {
        self.thermal_demand.len()
    }

    pub fn hour_of_day(t: usize) -> usize {
        (t % STEPS_PER_DAY) / STEPS_PER_HOUR
    }

    pub fn day_of_week(t: usize) -> usize {
        (t / STEPS_PER_DAY) % 7
    }

    /// Fractional day of year at step `t`.
    pub fn day_of_year(&self, t: usize) -> f64 {
        (self.start_day as f64 + t as f64 / STEPS_PER_DAY as f64) % 365.0
    }

    /// Fractional hour of day at step `t`.
    pub fn fractional_hour(t: usize) -> f64 {
        (t % STEPS_PER_DAY) as f64 / STEPS_PER_HOUR as f64
    }

    pub fn thermal_demand_range(&self) -> f64 {
        let (lo, hi) = min_max(&self.thermal_demand);
        hi - lo
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for t in 0..self.horizon() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                t,
                self.thermal_demand[t],
                self.electrical_demand[t],
                self.wind_infeed[t],
                self.solar_infeed[t],
                self.elec_price[t]
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, start_day: usize) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty profile file".into()))??;
        if header.trim() != CSV_HEADER {
            return Err(Error::Parse(format!("unexpected profile header {header:?}")));
        }
        let mut p = ExogenousProfile {
            thermal_demand: vec![],
            electrical_demand: vec![],
            wind_infeed: vec![],
            solar_infeed: vec![],
            elec_price: vec![],
            start_day,
        };
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::Parse(format!("line {}: expected 6 fields", i + 2)));
            }
            let step: usize = fields[0]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", i + 2)))?;
            if step != p.horizon() {
                return Err(Error::Parse(format!("line {}: step {step} out of order", i + 2)));
            }
            let mut vals = [0.0; 5];
            for (v, f) in vals.iter_mut().zip(&fields[1..]) {
                *v = f
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", i + 2)))?;
            }
            p.thermal_demand.push(vals[0]);
            p.electrical_demand.push(vals[1]);
            p.wind_infeed.push(vals[2]);
            p.solar_infeed.push(vals[3]);
            p.elec_price.push(vals[4]);
        }
        Ok(p)
    }
}

pub(crate) fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Annual heating-season factor: +1 in mid January, -1 in mid July.
fn heating_season(day: f64) -> f64 {
    (2.0 * PI * (day - 15.0) / 365.0).cos()
}

fn gaussian_bump(x: f64, centre: f64, width: f64) -> f64 {
    (-(x - centre) * (x - centre) / (2.0 * width * width)).exp()
}

/// Generates a deterministic profile. `Train` profiles start on day 0,
/// `Eval` profiles in early spring; both start on a Monday at midnight.
pub fn generate_profiles(seed: u64, horizon: usize, kind: ProfileKind) -> Result<ExogenousProfile> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("profile horizon must be at least 1".into()));
    }
    let salt = match kind {
        ProfileKind::Train => 0x7261_696e,
        ProfileKind::Eval => 0x6576_616c,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    let start_day = match kind {
        ProfileKind::Train => 0,
        ProfileKind::Eval => EVAL_START_DAY,
    };
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut p = ExogenousProfile {
        thermal_demand: Vec::with_capacity(horizon),
        electrical_demand: Vec::with_capacity(horizon),
        wind_infeed: Vec::with_capacity(horizon),
        solar_infeed: Vec::with_capacity(horizon),
        elec_price: Vec::with_capacity(horizon),
        start_day,
    };

    let mut demand_noise = 0.0;
    let mut elec_noise = 0.0;
    let mut wind_state: f64 = rng.random_range(-1.0..1.0);
    let mut cloud_state: f64 = 0.0;
    let mut price_noise = 0.0;

    for t in 0..horizon {
        let day = p.day_of_year(t);
        let hour = ExogenousProfile::fractional_hour(t);
        let weekend = ExogenousProfile::day_of_week(t) >= 5;
        let season = heating_season(day);

        // thermal demand: seasonal base, morning/evening peaks, night set-back
        demand_noise = 0.92 * demand_noise + 0.025 * unit.sample(&mut rng);
        let base = 1.15e6 + 0.65e6 * season;
        let shape = 1.0 + 0.20 * gaussian_bump(hour, 7.0, 1.5) + 0.15 * gaussian_bump(hour, 19.0, 2.0)
            - if !(5.0..23.0).contains(&hour) { 0.12 } else { 0.0 };
        let week = if weekend { 0.92 } else { 1.0 };
        let q = base * shape * week * (1.0 + demand_noise);
        p.thermal_demand.push(q.clamp(MIN_THERMAL_DEMAND_W, MAX_THERMAL_DEMAND_W));

        // electrical demand: office-hours profile
        elec_noise = 0.9 * elec_noise + 0.03 * unit.sample(&mut rng);
        let office = if (7.0..19.0).contains(&hour) && !weekend { 0.45e6 } else { 0.0 };
        let e = (0.75e6 + office + 0.1e6 * season) * (1.0 + elec_noise);
        p.electrical_demand.push(e.max(0.1e6));

        // wind: logistic transform of an AR(1) process
        wind_state = 0.985 * wind_state + 0.18 * unit.sample(&mut rng);
        let cf = 1.0 / (1.0 + (-(wind_state - 0.6)).exp());
        p.wind_infeed.push(0.8e6 * cf);

        // solar: seasonal day length, clouds
        cloud_state = 0.95 * cloud_state + 0.15 * unit.sample(&mut rng);
        let clear = 1.0 - 0.6 / (1.0 + (-cloud_state * 2.0).exp());
        let day_len = 12.0 - 4.0 * season;
        let sunrise = 12.0 - 0.5 * day_len;
        let solar = if hour > sunrise && hour < sunrise + day_len {
            let elev = (PI * (hour - sunrise) / day_len).sin();
            1.0e6 * elev * (0.55 - 0.3 * season) * clear
        } else {
            0.0
        };
        p.solar_infeed.push(solar.max(0.0));

        // price: day premium, evening peak, weekend discount
        price_noise = 0.9 * price_noise + 6.0 * unit.sample(&mut rng);
        let mut price = 95.0 + 30.0 * season;
        if (7.0..21.0).contains(&hour) {
            price += 55.0;
        }
        if (17.0..20.0).contains(&hour) {
            price += 35.0;
        }
        if weekend {
            price -= 25.0;
        }
        price += price_noise - 1.2e-5 * (p.solar_infeed[t] + p.wind_infeed[t]) * 2.0;
        p.elec_price.push(price.clamp(PRICE_FLOOR, PRICE_CAP));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_horizon_is_rejected() {
        assert!(matches!(
            generate_profiles(7, 0, ProfileKind::Eval),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn eval_week_is_deterministic() {
        let a = generate_profiles(7, 672, ProfileKind::Eval).unwrap();
        let b = generate_profiles(7, 672, ProfileKind::Eval).unwrap();
        assert_eq!(a.horizon(), 672);
        assert_eq!(a, b);
        let c = generate_profiles(8, 672, ProfileKind::Eval).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn year_profile_respects_fallback_capacity() {
        let p = generate_profiles(7, 35040, ProfileKind::Train).unwrap();
        let (lo, hi) = min_max(&p.thermal_demand);
        assert!(hi <= 3.0e6, "max demand {hi}");
        assert!(lo >= MIN_THERMAL_DEMAND_W);
        assert!(p.electrical_demand.iter().all(|&x| x >= 0.0));
        assert!(p.wind_infeed.iter().all(|&x| (0.0..=0.8e6).contains(&x)));
        assert!(p.solar_infeed.iter().all(|&x| (0.0..=1.0e6).contains(&x)));
    }

    #[test]
    fn no_sun_at_midnight() {
        for kind in [ProfileKind::Train, ProfileKind::Eval] {
            let p = generate_profiles(3, 35040, kind).unwrap();
            for t in (0..p.horizon()).filter(|t| ExogenousProfile::hour_of_day(*t) == 0) {
                assert_eq!(p.solar_infeed[t], 0.0);
            }
        }
    }

    #[test]
    fn demand_has_daily_structure() {
        let p = generate_profiles(11, 35040, ProfileKind::Train).unwrap();
        // mean at 07:00 above mean at 03:00
        let mean_at = |h: usize| {
            let v: Vec<f64> = (0..p.horizon())
                .filter(|t| ExogenousProfile::hour_of_day(*t) == h)
                .map(|t| p.thermal_demand[t])
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean_at(7) > 1.1 * mean_at(3));
    }

    #[test]
    fn csv_round_trip() {
        let p = generate_profiles(5, 200, ProfileKind::Eval).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        let q = ExogenousProfile::read_csv(std::io::Cursor::new(buf), p.start_day).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn csv_rejects_bad_header() {
        let r = ExogenousProfile::read_csv(std::io::Cursor::new("a,b\n0,1\n"), 0);
        assert!(matches!(r, Err(Error::Parse(_))));
    }
}
