//! Box-and-hyperplane projection against the exact multiplier oracle:
//! `x(λ) = clamp(y + λg, lo, hi)` and `gᵀx(λ)` is piecewise linear and
//! nondecreasing in λ, so the optimum sits on one segment between breakpoints.

use proptest::prelude::*;
use safe_ems_core::qp::{project_box_hyperplane, QpError};

fn x_of(lambda: f64, y: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    (0..y.len()).map(|i| (y[i] + lambda * g[i]).clamp(lo[i], hi[i])).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn breakpoint_oracle(y: &[f64], g: &[f64], c: f64, lo: &[f64], hi: &[f64]) -> Option<Vec<f64>> {
    let mut bp: Vec<f64> = Vec::new();
    for i in 0..y.len() {
        if g[i] != 0.0 {
            bp.push((lo[i] - y[i]) / g[i]);
            bp.push((hi[i] - y[i]) / g[i]);
        }
    }
    bp.sort_by(f64::total_cmp);
    let phi = |l: f64| dot(g, &x_of(l, y, g, lo, hi));
    let (first, last) = (*bp.first()?, *bp.last()?);
    if c < phi(first) - 1e-12 || c > phi(last) + 1e-12 {
        return None;
    }
    for w in bp.windows(2) {
        let (p0, p1) = (phi(w[0]), phi(w[1]));
        if c >= p0 && c <= p1 {
            let t = if p1 > p0 { (c - p0) / (p1 - p0) } else { 0.0 };
            return Some(x_of(w[0] + t * (w[1] - w[0]), y, g, lo, hi));
        }
    }
    Some(x_of(if c <= phi(first) { first } else { last }, y, g, lo, hi))
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    (1usize..=6).prop_flat_map(|n| {
        (
            prop::collection::vec(-3.0..3.0f64, n),
            prop::collection::vec(prop_oneof![Just(0.0), 0.05..2.0f64, -2.0..-0.05f64], n),
            prop::collection::vec((-1.5..0.0f64, 0.0..1.5f64), n),
            -4.0..4.0f64,
        )
            .prop_map(|(y, g, b, c)| {
                let (lo, hi) = b.into_iter().unzip();
                (y, g, lo, hi, c)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn matches_breakpoint_oracle((y, g, lo, hi, c) in instance()) {
        let oracle = breakpoint_oracle(&y, &g, c, &lo, &hi);
        match (project_box_hyperplane(&y, &g, c, &lo, &hi), oracle) {
            (Ok(sol), Some(x)) => {
                let d_sol: f64 = sol.x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
                let d_or: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
                prop_assert!((d_sol - d_or).abs() <= 1e-9 * (1.0 + d_or), "{d_sol} vs {d_or}");
                prop_assert!((dot(&g, &sol.x) - c).abs() <= 1e-9 * (1.0 + c.abs()));
                for i in 0..y.len() {
                    prop_assert!(sol.x[i] >= lo[i] && sol.x[i] <= hi[i]);
                    prop_assert!((sol.x[i] - x[i]).abs() <= 1e-6, "component {i}: {} vs {}", sol.x[i], x[i]);
                }
            }
            (Err(QpError::Infeasible), None) => {}
            (r, o) => prop_assert!(false, "solver {r:?} but oracle {o:?}"),
        }
    }

    #[test]
    fn feasible_point_is_a_fixed_point((y, g, lo, hi, _c) in instance()) {
        let x: Vec<f64> = (0..y.len()).map(|i| y[i].clamp(lo[i], hi[i])).collect();
        let c = dot(&g, &x);
        let sol = project_box_hyperplane(&x, &g, c, &lo, &hi).unwrap();
        for i in 0..x.len() {
            prop_assert!((sol.x[i] - x[i]).abs() <= 1e-9);
        }
    }
}

#[test]
fn two_dimensional_worked_case() {
    // project (2, 0) onto x1 + x2 = 1 within [0, 0.8]^2: x1 saturates at 0.8
    let sol = project_box_hyperplane(&[2.0, 0.0], &[1.0, 1.0], 1.0, &[0.0, 0.0], &[0.8, 0.8]).unwrap();
    assert!((sol.x[0] - 0.8).abs() < 1e-12 && (sol.x[1] - 0.2).abs() < 1e-12);
}
