//! Brute-force projection oracle.
//!
//! Producers are searched on a 51-point grid per scaled axis (plus each
//! producer's exact "clip into the off box" point); the thermal store then has
//! to close the balance, which is a one-dimensional root problem solved on the
//! monotone pieces of its output curve. The battery is outside the balance and
//! is simply clipped.

use safe_ems_core::action::{off_interval, Action, ACTION_DIM};
use safe_ems_core::plant::Asset;
use safe_ems_core::safety::ConstraintSet;

pub const GRID: usize = 51;
pub const GRID_STEP: f64 = 2.0 / (GRID as f64 - 1.0);
const TESS_SAMPLES: usize = 20_001;
const TABLE: usize = 4001;
const REFINE: usize = 64;

pub struct OracleResult {
    pub d: f64,
    pub action: Action,
}

/// Monotone pieces of the sampled TESS curve as index ranges.
fn monotone_pieces(q: &[f64]) -> Vec<(usize, usize)> {
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut dir = 0i8;
    for i in 1..q.len() {
        let d = if q[i] > q[i - 1] {
            1
        } else if q[i] < q[i - 1] {
            -1
        } else {
            0
        };
        if d != 0 && dir != 0 && d != dir {
            pieces.push((start, i - 1));
            start = i - 1;
        }
        if d != 0 {
            dir = d;
        }
    }
    pieces.push((start, q.len() - 1));
    pieces
}

struct TessCurve<'a> {
    cs: &'a ConstraintSet<'a>,
    a: Vec<f64>,
    q: Vec<f64>,
    pieces: Vec<(usize, usize)>,
    lo: f64,
    hi: f64,
}

impl<'a> TessCurve<'a> {
    fn new(cs: &'a ConstraintSet<'a>) -> Self {
        let a: Vec<f64> = (0..TESS_SAMPLES).map(|i| -1.0 + 2.0 * i as f64 / (TESS_SAMPLES - 1) as f64).collect();
        let q: Vec<f64> = a.iter().map(|&x| cs.asset_output(Asset::Tess, x).0).collect();
        let lo = q.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pieces = monotone_pieces(&q);
        TessCurve { cs, a, q, pieces, lo, hi }
    }

    /// Every action on a monotone piece reaching output `r`, refined by
    /// bisection on the true curve when `exact`.
    fn roots(&self, r: f64, exact: bool) -> Vec<f64> {
        let mut out = Vec::new();
        for &(s, e) in &self.pieces {
            let (qs, qe) = (self.q[s], self.q[e]);
            let (lo, hi) = if qs <= qe { (qs, qe) } else { (qe, qs) };
            if r < lo || r > hi {
                continue;
            }
            let up = qe >= qs;
            // last index on the piece not past r
            let (mut i, mut j) = (s, e);
            while j - i > 1 {
                let m = (i + j) / 2;
                if (self.q[m] <= r) == up {
                    i = m;
                } else {
                    j = m;
                }
            }
            let (mut a0, mut a1) = (self.a[i], self.a[j]);
            if exact {
                let f = |x: f64| self.cs.asset_output(Asset::Tess, x).0 - r;
                let mut f0 = f(a0);
                for _ in 0..80 {
                    let m = 0.5 * (a0 + a1);
                    let fm = f(m);
                    if (fm <= 0.0) == (f0 <= 0.0) {
                        a0 = m;
                        f0 = fm;
                    } else {
                        a1 = m;
                    }
                }
                out.push(if f(a0).abs() <= f(a1).abs() { a0 } else { a1 });
            } else {
                let (q0, q1) = (self.q[i], self.q[j]);
                let t = if q1 != q0 { ((r - q0) / (q1 - q0)).clamp(0.0, 1.0) } else { 0.0 };
                out.push(a0 + t * (a1 - a0));
            }
        }
        out
    }
}

fn nearest(roots: &[f64], target: f64) -> Option<f64> {
    roots.iter().copied().min_by(|x, y| (x - target).abs().total_cmp(&(y - target).abs()))
}

/// Grid-search optimum of `min ½‖a − ã‖²` over the balance-feasible set.
pub fn grid_oracle(a_tilde: &Action, cs: &ConstraintSet<'_>) -> Option<OracleResult> {
    let t = a_tilde.clipped().0;
    let raw = a_tilde.0;
    let curve = TessCurve::new(cs);
    let producers = [Asset::Boiler, Asset::HeatPump, Asset::Chp];
    // candidate values and outputs per producer
    let cands: Vec<Vec<(f64, f64)>> = producers
        .iter()
        .enumerate()
        .map(|(k, &asset)| {
            let (_, off_hi) = off_interval(cs.nominal.get(asset).min_frac);
            let mut v: Vec<f64> = (0..GRID).map(|i| -1.0 + GRID_STEP * i as f64).collect();
            v.push(t[k].min(off_hi));
            v.iter().map(|&x| (x, cs.asset_output(asset, x).0)).collect()
        })
        .collect();

    // table of the closest TESS action per required output
    let span = curve.hi - curve.lo;
    let table: Vec<Option<f64>> = (0..TABLE)
        .map(|k| {
            let r = curve.lo + span * k as f64 / (TABLE - 1) as f64;
            nearest(&curve.roots(r, false), t[3])
        })
        .collect();
    let lookup = |r: f64| -> Option<f64> {
        if r < curve.lo || r > curve.hi || span <= 0.0 {
            return None;
        }
        let x = (r - curve.lo) / span * (TABLE - 1) as f64;
        let k = (x.floor() as usize).min(TABLE - 2);
        let w = x - k as f64;
        match (table[k], table[k + 1]) {
            (Some(a), Some(b)) => Some(a + w * (b - a)),
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(b),
            _ => None,
        }
    };

    let bess_d = 0.5 * (raw[4] - t[4]).powi(2);
    let demand = cs.ctx.q_demand;
    let mut scored: Vec<(f64, [usize; 3])> = Vec::new();
    for (i, &(b, qb)) in cands[0].iter().enumerate() {
        let db = (b - raw[0]).powi(2);
        for (j, &(h, qh)) in cands[1].iter().enumerate() {
            let dh = (h - raw[1]).powi(2);
            for (k, &(c, qc)) in cands[2].iter().enumerate() {
                let r = demand - qb - qh - qc;
                if let Some(a) = lookup(r) {
                    let d = 0.5 * (db + dh + (c - raw[2]).powi(2) + (a - raw[3]).powi(2)) + bess_d;
                    scored.push((d, [i, j, k]));
                }
            }
        }
    }
    scored.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut best: Option<OracleResult> = None;
    for &(_, [i, j, k]) in scored.iter().take(REFINE) {
        let (b, qb) = cands[0][i];
        let (h, qh) = cands[1][j];
        let (c, qc) = cands[2][k];
        let r = demand - qb - qh - qc;
        if let Some(a) = nearest(&curve.roots(r, true), raw[3]) {
            let mut x = [0.0; ACTION_DIM];
            x.copy_from_slice(&[b, h, c, a, t[4]]);
            let action = Action(x);
            let d = action.half_sq_distance(a_tilde);
            if best.as_ref().is_none_or(|o| d < o.d) {
                best = Some(OracleResult { d, action });
            }
        }
    }
    best
}
