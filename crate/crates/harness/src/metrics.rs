//! Evaluation metrics: objective, constraint tolerance and run-time statistics.

use safe_ems_core::env::StepRecord;
use safe_ems_core::Error;

/// Thermal-balance tolerance of a trajectory, both in percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintTolerance {
    pub nmae: f64,
    pub nsum: f64,
}

/// NMAE divides the mean balance error by the demand range seen in the
/// trajectory; NSUM divides the summed error by the summed demand.
pub fn constraint_tolerance(records: &[StepRecord]) -> Result<ConstraintTolerance, Error> {
    if records.is_empty() {
        return Err(Error::UndefinedMetric("empty trajectory".into()));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut err, mut demand) = (0.0, 0.0);
    for r in records {
        lo = lo.min(r.q_demand);
        hi = hi.max(r.q_demand);
        err += (r.q_demand - r.q_production).abs();
        demand += r.q_demand;
    }
    let range = hi - lo;
    if !(range > 0.0) || !(demand > 0.0) {
        return Err(Error::UndefinedMetric("thermal demand range is zero".into()));
    }
    let n = records.len() as f64;
    Ok(ConstraintTolerance { nmae: 100.0 * err / n / range, nsum: 100.0 * err / demand })
}

/// Per-step wall-time summary in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RuntimeStats {
    pub steps: usize,
    pub min: f64,
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub total: f64,
}

/// The control horizon a step must never exceed, in seconds.
pub const CONTROL_HORIZON_S: f64 = 900.0;

pub fn runtime_stats(times: &[f64]) -> RuntimeStats {
    if times.is_empty() {
        return RuntimeStats::default();
    }
    let n = times.len() as f64;
    let total: f64 = times.iter().sum();
    let mean = total / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    RuntimeStats {
        steps: times.len(),
        min: times.iter().copied().fold(f64::INFINITY, f64::min),
        mean,
        std: var.sqrt(),
        max: times.iter().copied().fold(0.0, f64::max),
        total,
    }
}

/// Relative objective in percent: 100 means equal to the reference, larger is
/// better (objectives are negative costs).
pub fn relative_objective(objective: f64, reference: f64) -> Option<f64> {
    (objective != 0.0 && objective.is_finite() && reference.is_finite()).then(|| 100.0 * reference / objective)
}

/// One evaluation episode summarised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalPoint {
    /// Training steps taken before this evaluation.
    pub step: usize,
    pub objective: f64,
    pub energy_cost: f64,
    pub comfort_loss: f64,
    pub tolerance: ConstraintTolerance,
    pub corrected: usize,
    pub fallback: usize,
}

impl EvalPoint {
    pub fn from_records(step: usize, records: &[StepRecord]) -> Result<Self, Error> {
        Ok(EvalPoint {
            step,
            objective: records.iter().map(|r| r.reward).sum(),
            energy_cost: records.iter().map(|r| r.l_cost).sum(),
            comfort_loss: records.iter().map(|r| r.l_comfort).sum(),
            tolerance: constraint_tolerance(records)?,
            corrected: records.iter().filter(|r| r.corrected).count(),
            fallback: records.iter().filter(|r| r.used_fallback).count(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use safe_ems_core::Action;

    fn rec(q_demand: f64, q_production: f64) -> StepRecord {
        StepRecord {
            step: 0,
            a_tilde: Action::ZERO,
            a_safe: Action::ZERO,
            q_demand,
            q_production,
            l_cost: 0.0,
            l_comfort: 0.0,
            reward: 0.0,
            corrected: false,
            used_fallback: false,
            d_safe: None,
            subproblems_feasible: 0,
            slp_iters: 0,
            step_time_s: 0.0,
        }
    }

    #[test]
    fn perfect_balance_is_zero() {
        let r = [rec(1e6, 1e6), rec(2e6, 2e6)];
        assert_eq!(constraint_tolerance(&r).unwrap(), ConstraintTolerance { nmae: 0.0, nsum: 0.0 });
    }

    #[test]
    fn constant_error_of_one_percent_of_range() {
        // range 1 MW, error 10 kW on every step
        let r = [rec(1e6, 1.01e6), rec(2e6, 1.99e6), rec(1.5e6, 1.51e6)];
        let t = constraint_tolerance(&r).unwrap();
        assert!((t.nmae - 1.0).abs() < 1e-12);
        assert!((t.nsum - 100.0 * 3e4 / 4.5e6).abs() < 1e-12);
    }

    #[test]
    fn zero_range_is_undefined() {
        assert!(matches!(constraint_tolerance(&[rec(1e6, 0.0), rec(1e6, 1e6)]), Err(Error::UndefinedMetric(_))));
        assert!(constraint_tolerance(&[]).is_err());
    }

    #[test]
    fn runtime_summary() {
        let s = runtime_stats(&[1.0, 2.0, 3.0]);
        assert_eq!((s.min, s.mean, s.max, s.total, s.steps), (1.0, 2.0, 3.0, 6.0, 3));
        assert!((s.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(runtime_stats(&[]), RuntimeStats::default());
    }

    #[test]
    fn reference_is_one_hundred_percent() {
        assert_eq!(relative_objective(-50.0, -50.0), Some(100.0));
        assert_eq!(relative_objective(-25.0, -50.0), Some(200.0));
        assert_eq!(relative_objective(0.0, -50.0), None);
    }
}
