//! The rule-based safe fallback policy: a CHP-priority cascade.
//!
//! Below the CHP's minimum output the boiler serves the demand alone; up to the
//! CHP's maximum the CHP serves it alone; above that the CHP runs flat out and
//! the boiler covers the remainder. Thermal set-points are turned into scaled
//! actions by inverting the nominal models. The heat pump stays off and both
//! storages idle.

use serde::{Deserialize, Serialize};

use crate::action::{scaled_from_fraction, Action, OFF_ACTION};
use crate::error::{Error, Result};
use crate::nominal::{NominalModel, NominalSet};
use crate::plant::PlantConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FallbackConfig {
    pub q_min_chp: f64,
    pub q_max_chp: f64,
    pub q_min_boil: f64,
    pub q_max_boil: f64,
}

impl FallbackConfig {
    /// Thresholds straight from the asset ratings.
    pub fn from_ratings(cfg: &PlantConfig) -> Self {
        FallbackConfig {
            q_min_chp: cfg.chp.q_min(),
            q_max_chp: cfg.chp.p_nom_th,
            q_min_boil: cfg.boiler.q_min(),
            q_max_boil: cfg.boiler.p_nom_th,
        }
    }

    /// Thresholds restricted to what the nominal models say each unit can
    /// deliver, so every set-point inverts exactly.
    pub fn from_models(cfg: &PlantConfig, models: &NominalSet) -> Self {
        let reach = |m: &NominalModel| (m.value_and_slope(m.min_frac, 0.0).0, m.value_and_slope(1.0, 0.0).0);
        let (chp_lo, chp_hi) = reach(&models.chp);
        let (boil_lo, boil_hi) = reach(&models.boiler);
        let r = FallbackConfig::from_ratings(cfg);
        FallbackConfig {
            q_min_chp: r.q_min_chp.max(chp_lo),
            q_max_chp: r.q_max_chp.min(chp_hi),
            q_min_boil: r.q_min_boil.max(boil_lo),
            q_max_boil: r.q_max_boil.min(boil_hi),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q_min_chp < self.q_max_chp) || !(self.q_min_boil < self.q_max_boil) {
            return Err(Error::InvalidArgument(format!("fallback thresholds out of order: {self:?}")));
        }
        Ok(())
    }

    pub fn capacity(&self) -> f64 {
        self.q_max_chp + self.q_max_boil
    }
}

/// Thermal set-points `(q_chp, q_boil)` chosen by the cascade.
///
/// A demand below the boiler's minimum is served at the minimum, and in the
/// top branch the CHP backs off when the remainder would fall below it.
pub fn fallback_dispatch(q_demand: f64, cfg: &FallbackConfig) -> Result<(f64, f64)> {
    if !(q_demand >= 0.0) {
        return Err(Error::InvalidArgument(format!("demand {q_demand} W must be non-negative")));
    }
    if q_demand > cfg.capacity() {
        return Err(Error::CapacityExceeded { demand_w: q_demand, capacity_w: cfg.capacity() });
    }
    if q_demand < cfg.q_min_chp {
        Ok((0.0, q_demand.max(cfg.q_min_boil)))
    } else if q_demand < cfg.q_max_chp {
        Ok((q_demand, 0.0))
    } else {
        let rest = q_demand - cfg.q_max_chp;
        if rest <= 0.0 {
            Ok((q_demand, 0.0))
        } else if rest < cfg.q_min_boil {
            Ok((q_demand - cfg.q_min_boil, cfg.q_min_boil))
        } else {
            Ok((cfg.q_max_chp, rest))
        }
    }
}

fn producer_action(model: &NominalModel, q: f64) -> Result<f64> {
    if q <= 0.0 {
        return Ok(OFF_ACTION);
    }
    let u = model
        .invert_linear(q)
        .ok_or_else(|| Error::DegenerateData(format!("{}: nominal model is not invertible", model.asset)))?;
    // guard against rounding just outside the on-range
    let u = if u > 1.0 && u < 1.0 + 1e-12 { 1.0 } else { u };
    if !(model.min_frac..=1.0).contains(&u) {
        return Err(Error::OutOfRange { what: "fallback load fraction", value: u, lo: model.min_frac, hi: 1.0 });
    }
    Ok(scaled_from_fraction(u))
}

/// Scaled action of the safe fallback policy for the given demand.
pub fn fallback_action(q_demand: f64, cfg: &FallbackConfig, models: &NominalSet) -> Result<Action> {
    let (q_chp, q_boil) = fallback_dispatch(q_demand, cfg)?;
    Ok(Action::new(
        producer_action(&models.boiler, q_boil)?,
        OFF_ACTION,
        producer_action(&models.chp, q_chp)?,
        0.0,
        0.0,
    ))
}

/// The fallback policy bundled with its models.
#[derive(Clone, Debug)]
pub struct SafePolicy {
    pub cfg: FallbackConfig,
    pub models: NominalSet,
}

impl SafePolicy {
    pub fn new(plant: &PlantConfig, models: NominalSet) -> Result<Self> {
        let cfg = FallbackConfig::from_models(plant, &models);
        cfg.validate()?;
        Ok(SafePolicy { cfg, models })
    }

    pub fn action(&self, q_demand: f64) -> Result<Action> {
        fallback_action(q_demand, &self.cfg, &self.models)
    }
}
