//! Dispatch actions in scaled and physical form.
//!
//! The agent works in the scaled box `[-1, 1]^5`. Producers (boiler, heat pump,
//! CHP) map the scaled value affinely onto a load fraction `u in [0, 1]`; any
//! fraction below the asset's minimum load decodes to "off" (`u = 0`). Storage
//! actions are signed: positive discharges into the network, negative charges.

use serde::{Deserialize, Serialize};

pub const ACTION_DIM: usize = 5;

pub const BOIL: usize = 0;
pub const HP: usize = 1;
pub const CHP: usize = 2;
pub const TESS: usize = 3;
pub const BESS: usize = 4;

/// Gap kept between the "off" box of a producer and its minimum-load point.
/// Decoding treats the minimum-load point itself as "on", so an "off" action
/// must stay strictly below it.
pub const OFF_MARGIN: f64 = 1e-9;

/// Scaled dispatch vector `(boiler, heat pump, CHP, TESS, BESS)` in `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action(pub [f64; ACTION_DIM]);

impl Action {
    pub const ZERO: Action = Action([0.0; ACTION_DIM]);

    pub fn new(boiler: f64, hp: f64, chp: f64, tess: f64, bess: f64) -> Self {
        Action([boiler, hp, chp, tess, bess])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn clipped(&self) -> Self {
        let mut a = self.0;
        for v in &mut a {
            *v = v.clamp(-1.0, 1.0);
        }
        Action(a)
    }

    pub fn is_within_bounds(&self) -> bool {
        self.0.iter().all(|v| (-1.0..=1.0).contains(v))
    }

    /// Half squared Euclidean distance, the safety-distance metric.
    pub fn half_sq_distance(&self, other: &Action) -> f64 {
        0.5 * self
            .0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    }

    /// Component-wise comparison at the given absolute tolerance.
    pub fn approx_eq(&self, other: &Action, tol: f64) -> bool {
        self.0
            .iter()
            .zip(other.0.iter())
            .all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// Load fraction (producers) or signed power fraction (storages) per asset.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PhysicalAction {
    pub boiler: f64,
    pub hp: f64,
    pub chp: f64,
    pub tess: f64,
    pub bess: f64,
}

/// Affine map from scaled `[-1, 1]` onto a load fraction in `[0, 1]`.
pub fn load_fraction(scaled: f64) -> f64 {
    0.5 * (scaled.clamp(-1.0, 1.0) + 1.0)
}

/// Inverse of [`load_fraction`].
pub fn scaled_from_fraction(u: f64) -> f64 {
    2.0 * u - 1.0
}

/// Decodes a scaled producer action; fractions below `min_frac` are off.
/// The comparison is made in scaled space so that [`on_interval`] decodes as
/// on even where `(2 p - 1 + 1) / 2` rounds below `p`.
pub fn decode_producer(scaled: f64, min_frac: f64) -> f64 {
    if scaled.clamp(-1.0, 1.0) < on_threshold(min_frac) {
        0.0
    } else {
        load_fraction(scaled)
    }
}

/// Scaled action at which a producer reaches its minimum load.
pub fn on_threshold(min_frac: f64) -> f64 {
    scaled_from_fraction(min_frac)
}

/// Scaled interval within which a producer decodes to "off".
pub fn off_interval(min_frac: f64) -> (f64, f64) {
    let hi = on_threshold(min_frac) - OFF_MARGIN;
    (-1.0, hi.max(-1.0))
}

/// Scaled interval within which a producer is on.
pub fn on_interval(min_frac: f64) -> (f64, f64) {
    (on_threshold(min_frac), 1.0)
}

/// Scaled action that decodes to "off" for a producer.
pub const OFF_ACTION: f64 = -1.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn producer_decoding_respects_minimum_load() {
        assert_eq!(decode_producer(-1.0, 0.1), 0.0);
        assert_eq!(decode_producer(1.0, 0.1), 1.0);
        // u = 0.5 exactly at the CHP minimum is on
        assert_eq!(decode_producer(0.0, 0.5), 0.5);
        assert_eq!(decode_producer(-1e-6, 0.5), 0.0);
        let (_, off_hi) = off_interval(0.25);
        assert_eq!(decode_producer(off_hi, 0.25), 0.0);
        let (on_lo, _) = on_interval(0.25);
        assert_eq!(decode_producer(on_lo, 0.25), 0.25);
        let (on_lo, _) = on_interval(0.1);
        assert!(decode_producer(on_lo, 0.1) > 0.0);
    }

    #[test]
    fn half_sq_distance_of_single_offset() {
        let a = Action::ZERO;
        let mut b = Action::ZERO;
        b.0[3] = 0.3;
        assert!((a.half_sq_distance(&b) - 0.045).abs() < 1e-15);
    }
}
