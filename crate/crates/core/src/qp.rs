//! Primal active-set solver for the projection subproblem
//!
//! ```text
//! min ½‖x − y‖²   s.t.   gᵀx = c,   lo ≤ x ≤ hi
//! ```
//!
//! i.e. a Euclidean projection onto the intersection of a box and one
//! hyperplane. A feasible start is built greedily, then bounds enter and leave
//! the working set until the KKT conditions hold.

const TOL: f64 = 1e-12;
const MAX_ITERS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpError {
    /// The hyperplane does not meet the box.
    Infeasible,
    IterationLimit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Multiplier of the equality in `x − y + λ g + μ = 0` form.
    pub lambda: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

/// Range of `gᵀx` over the box.
pub fn hyperplane_range(g: &[f64], lo: &[f64], hi: &[f64]) -> (f64, f64) {
    g.iter().zip(lo.iter().zip(hi)).fold((0.0, 0.0), |(a, b), (&gi, (&l, &h))| {
        if gi >= 0.0 {
            (a + gi * l, b + gi * h)
        } else {
            (a + gi * h, b + gi * l)
        }
    })
}

fn feasible_start(y: &[f64], g: &[f64], c: f64, lo: &[f64], hi: &[f64]) -> Result<Vec<f64>, QpError> {
    let mut x: Vec<f64> = y.iter().zip(lo.iter().zip(hi)).map(|(&v, (&l, &h))| v.clamp(l, h)).collect();
    let scale = 1.0 + c.abs() + g.iter().zip(&x).map(|(a, b)| (a * b).abs()).sum::<f64>();
    let mut r = c - dot(g, &x);
    for i in 0..x.len() {
        if r.abs() <= TOL * scale {
            break;
        }
        if g[i] == 0.0 {
            continue;
        }
        let target = x[i] + r / g[i];
        let moved = target.clamp(lo[i], hi[i]);
        r -= g[i] * (moved - x[i]);
        x[i] = moved;
    }
    if r.abs() > 1e-9 * scale {
        return Err(QpError::Infeasible);
    }
    Ok(x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the box-and-hyperplane projection of `y`.
pub fn project_box_hyperplane(y: &[f64], g: &[f64], c: f64, lo: &[f64], hi: &[f64]) -> Result<QpSolution, QpError> {
    let n = y.len();
    assert!(g.len() == n && lo.len() == n && hi.len() == n, "dimension mismatch");
    let mut x = feasible_start(y, g, c, lo, hi)?;
    let mut state: Vec<Bound> = (0..n)
        .map(|i| {
            if hi[i] - lo[i] <= TOL {
                Bound::Lower
            } else if x[i] <= lo[i] {
                Bound::Lower
            } else if x[i] >= hi[i] {
                Bound::Upper
            } else {
                Bound::Free
            }
        })
        .collect();

    for it in 1..=MAX_ITERS {
        // equality-constrained step on the free variables
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == Bound::Free).collect();
        let gg: f64 = free.iter().map(|&i| g[i] * g[i]).sum();
        let gr: f64 = free.iter().map(|&i| g[i] * (x[i] - y[i])).sum();
        let nu = if gg > 0.0 { gr / gg } else { 0.0 };
        let mut p = vec![0.0; n];
        for &i in &free {
            p[i] = y[i] - x[i] + nu * g[i];
        }
        let p_norm = p.iter().map(|v| v.abs()).fold(0.0, f64::max);

        if p_norm <= TOL * (1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            let lambda = match equality_multiplier(&x, y, g, &state, gg, nu) {
                Some(l) => l,
                None => return Err(QpError::IterationLimit),
            };
            // bound multipliers; negative means the bound should be released
            let mut worst: Option<(usize, f64)> = None;
            for i in 0..n {
                if hi[i] - lo[i] <= TOL {
                    continue;
                }
                let grad = x[i] - y[i] + lambda * g[i];
                let mu = match state[i] {
                    Bound::Free => continue,
                    Bound::Lower => grad,
                    Bound::Upper => -grad,
                };
                if mu < -1e-12 && worst.is_none_or(|(_, w)| mu < w) {
                    worst = Some((i, mu));
                }
            }
            match worst {
                None => return Ok(QpSolution { x, lambda, iterations: it }),
                Some((i, _)) => state[i] = Bound::Free,
            }
            continue;
        }

        // largest step keeping the box, recording the blocking bound
        let mut alpha = 1.0;
        let mut block: Option<(usize, Bound)> = None;
        for &i in &free {
            if p[i] < 0.0 {
                let a = (lo[i] - x[i]) / p[i];
                if a < alpha {
                    alpha = a.max(0.0);
                    block = Some((i, Bound::Lower));
                }
            } else if p[i] > 0.0 {
                let a = (hi[i] - x[i]) / p[i];
                if a < alpha {
                    alpha = a.max(0.0);
                    block = Some((i, Bound::Upper));
                }
            }
        }
        for &i in &free {
            x[i] += alpha * p[i];
        }
        if let Some((i, b)) = block {
            x[i] = if b == Bound::Lower { lo[i] } else { hi[i] };
            state[i] = b;
        }
    }
    Err(QpError::IterationLimit)
}

/// Equality multiplier at a stationary point of the current working set. With
/// free variables that touch the hyperplane it is determined by them; otherwise
/// any value keeping all bound multipliers non-negative is chosen, falling back
/// to the least-violating one.
fn equality_multiplier(x: &[f64], y: &[f64], g: &[f64], state: &[Bound], gg: f64, nu: f64) -> Option<f64> {
    if gg > 0.0 {
        return Some(-nu);
    }
    // each active bound with g ≠ 0 restricts λ to a half-line
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for i in 0..x.len() {
        if g[i] == 0.0 || state[i] == Bound::Free {
            continue;
        }
        // Lower: x − y + λ g ≥ 0, Upper: x − y + λ g ≤ 0
        let pivot = (y[i] - x[i]) / g[i];
        let lower_side = (state[i] == Bound::Lower) == (g[i] > 0.0);
        if lower_side {
            lo = lo.max(pivot);
        } else {
            hi = hi.min(pivot);
        }
    }
    if lo <= hi {
        Some(if lo.is_finite() && hi.is_finite() {
            0.5 * (lo + hi)
        } else if lo.is_finite() {
            lo
        } else if hi.is_finite() {
            hi
        } else {
            0.0
        })
    } else {
        Some(0.5 * (lo + hi))
    }
}
