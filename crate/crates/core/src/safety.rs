//! The safety layer: projection of a proposed action onto the feasible set and
//! the shielding methods built on it.
//!
//! The feasible set has box bounds on every scaled action, on/off semantics for
//! the three producers and a single thermal-balance equality
//!
//! ```text
//! f_boil(a_boil) + f_hp(a_hp) + f_chp(a_chp) + f_tess(a_tess) = Q_demand
//! ```
//!
//! whose terms are the nominal models, optionally plus learned residuals. The
//! projection enumerates the eight on/off assignments and solves each
//! continuous subproblem by sequential linearization, with the linearized
//! subproblem handed to the active-set solver in [`crate::qp`].

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::action::{off_interval, on_interval, Action, ACTION_DIM, BESS};
use crate::env::{Experience, Observation};
use crate::error::{Error, Result};
use crate::fallback::SafePolicy;
use crate::nominal::NominalSet;
use crate::plant::{Asset, PlantConfig, PlantState};
use crate::profile::{MAX_THERMAL_DEMAND_W, MIN_THERMAL_DEMAND_W};
use crate::qp::{hyperplane_range, project_box_hyperplane, QpError};
use crate::surrogate::{features, SurrogateSet};

/// Balance residual accepted as satisfied, W.
pub const BALANCE_TOL_W: f64 = 0.1;
pub const SLP_MAX_ITERS: usize = 50;
pub const SLP_STEP_TOL: f64 = 1e-8;
/// Number of on/off assignments of (boiler, heat pump, CHP).
pub const ASSIGNMENTS: usize = 8;
/// Component-wise tolerance for "the action was changed".
pub const CORRECTION_TOL: f64 = 1e-9;

const MW: f64 = 1e6;
const PRODUCERS: [Asset; 3] = [Asset::Boiler, Asset::HeatPump, Asset::Chp];
const THERMAL: [Asset; 4] = [Asset::Boiler, Asset::HeatPump, Asset::Chp, Asset::Tess];
const RANGE_SAMPLES: usize = 41;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SafetyMethod {
    Unsafe,
    OptLayer,
    SafeFallback,
    OptLayerPolicy,
    GreyOptLayerPolicy,
}

impl SafetyMethod {
    pub const ALL: [SafetyMethod; 5] = [
        SafetyMethod::Unsafe,
        SafetyMethod::OptLayer,
        SafetyMethod::SafeFallback,
        SafetyMethod::OptLayerPolicy,
        SafetyMethod::GreyOptLayerPolicy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SafetyMethod::Unsafe => "unsafe",
            SafetyMethod::OptLayer => "optlayer",
            SafetyMethod::SafeFallback => "safefallback",
            SafetyMethod::OptLayerPolicy => "optlayerpolicy",
            SafetyMethod::GreyOptLayerPolicy => "greyoptlayerpolicy",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        SafetyMethod::ALL.into_iter().find(|m| m.name() == s.to_ascii_lowercase())
    }

    pub fn needs_fallback(self) -> bool {
        matches!(self, SafetyMethod::SafeFallback | SafetyMethod::OptLayerPolicy | SafetyMethod::GreyOptLayerPolicy)
    }

    pub fn uses_surrogates(self) -> bool {
        self == SafetyMethod::GreyOptLayerPolicy
    }
}

impl std::fmt::Display for SafetyMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyConfig {
    /// Largest safety distance still resolved by projection.
    pub h_safe: f64,
    /// SafeFallback's balance tolerance as a fraction of `demand_range`.
    pub eps_balance: f64,
    /// Thermal demand range, W.
    pub demand_range: f64,
    pub method: SafetyMethod,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        SafetyConfig {
            h_safe: 0.25,
            eps_balance: 0.10,
            demand_range: MAX_THERMAL_DEMAND_W - MIN_THERMAL_DEMAND_W,
            method: SafetyMethod::OptLayerPolicy,
        }
    }
}

impl SafetyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h_safe > 0.0) {
            return Err(Error::InvalidArgument("h_safe must be positive".into()));
        }
        if !(self.eps_balance > 0.0 && self.eps_balance < 1.0) {
            return Err(Error::InvalidArgument("eps_balance must lie in (0, 1)".into()));
        }
        if !(self.demand_range > 0.0) {
            return Err(Error::InvalidArgument("demand_range must be positive".into()));
        }
        Ok(())
    }
}

/// Measured quantities the constraints depend on at one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintContext {
    pub q_demand: f64,
    pub soc_tess: f64,
    pub q_hp_prev: f64,
    pub q_tess_prev: f64,
    pub q_demand_prev: f64,
}

impl ConstraintContext {
    pub fn new(state: &PlantState, q_demand: f64) -> Self {
        ConstraintContext {
            q_demand,
            soc_tess: state.soc_tess,
            q_hp_prev: state.q_hp_prev,
            q_tess_prev: state.q_tess_prev,
            q_demand_prev: state.q_demand_prev,
        }
    }

    fn as_state(&self) -> PlantState {
        PlantState {
            soc_tess: self.soc_tess,
            q_hp_prev: self.q_hp_prev,
            q_tess_prev: self.q_tess_prev,
            q_demand_prev: self.q_demand_prev,
            ..Default::default()
        }
    }
}

/// Box bounds and the thermal-balance equality at one step.
#[derive(Clone, Copy, Debug)]
pub struct ConstraintSet<'a> {
    pub nominal: &'a NominalSet,
    pub surrogates: Option<&'a SurrogateSet>,
    pub ctx: ConstraintContext,
}

/// Number of constraints: lower and upper box bounds per action plus the
/// balance equality.
pub const N_CONSTRAINTS: usize = 2 * ACTION_DIM + 1;

impl<'a> ConstraintSet<'a> {
    pub fn new(nominal: &'a NominalSet, surrogates: Option<&'a SurrogateSet>, ctx: ConstraintContext) -> Self {
        ConstraintSet { nominal, surrogates, ctx }
    }

    fn min_frac(&self, asset: Asset) -> f64 {
        self.nominal.get(asset).min_frac
    }

    /// Thermal output of `asset` at scaled action `a`, and its derivative with
    /// respect to `a`, both in W.
    pub fn asset_output(&self, asset: Asset, a: f64) -> (f64, f64) {
        let a = a.clamp(-1.0, 1.0);
        let model = self.nominal.get(asset);
        let (u, du_da) = match asset {
            Asset::Tess => (a, 1.0),
            _ => {
                if crate::action::decode_producer(a, model.min_frac) == 0.0 {
                    return (0.0, 0.0);
                }
                (0.5 * (a + 1.0), 0.5)
            }
        };
        let soc = if asset == Asset::Tess { self.ctx.soc_tess } else { 0.0 };
        let (mut q, mut dq) = model.value_and_slope(u, soc);
        if let Some(m) = self.surrogates.and_then(|s| s.get(asset)) {
            let f = features(asset, u, &self.ctx.as_state());
            let (slope, intercept) = m.affine_in_action(&f);
            q += slope * u + intercept;
            dq += slope;
        }
        (q, dq * du_da)
    }

    /// Modelled production at `a`, W.
    pub fn production(&self, a: &Action) -> f64 {
        THERMAL.iter().enumerate().map(|(i, &asset)| self.asset_output(asset, a.0[i]).0).sum()
    }

    /// `production − demand`, W.
    pub fn balance_residual(&self, a: &Action) -> f64 {
        self.production(a) - self.ctx.q_demand
    }

    /// Residuals `c(a)` of all constraints: `lo − a` and `a − hi` per action
    /// (feasible when ≤ 0) followed by the balance residual (feasible when 0).
    pub fn evaluate(&self, a: &Action) -> Vec<f64> {
        let mut out = Vec::with_capacity(N_CONSTRAINTS);
        for v in a.0 {
            out.push(-1.0 - v);
            out.push(v - 1.0);
        }
        out.push(self.balance_residual(a));
        out
    }

    pub fn is_feasible(&self, a: &Action) -> bool {
        a.is_within_bounds() && self.balance_residual(a).abs() <= BALANCE_TOL_W
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub slp_iterations: usize,
    pub subproblems_solved: usize,
    pub subproblems_feasible: usize,
    /// False when some subproblem hit the iteration limit; the best feasible
    /// point found is still returned.
    pub converged: bool,
    pub wall_time_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub a_safe: Action,
    pub d_safe: f64,
    /// On/off state of (boiler, heat pump, CHP).
    pub binary_assignment: [bool; 3],
    pub corrected: bool,
    pub used_fallback: bool,
    pub stats: SolveStats,
}

/// Bit `i` of `index` switches producer `i` on; index 0 is all off.
pub fn assignment_from_index(index: usize) -> [bool; 3] {
    [index & 4 != 0, index & 2 != 0, index & 1 != 0]
}

fn assignment_boxes(cs: &ConstraintSet<'_>, assignment: [bool; 3]) -> ([f64; ACTION_DIM], [f64; ACTION_DIM]) {
    let mut lo = [-1.0; ACTION_DIM];
    let mut hi = [1.0; ACTION_DIM];
    for (i, &asset) in PRODUCERS.iter().enumerate() {
        let p = cs.min_frac(asset);
        let (l, h) = if assignment[i] { on_interval(p) } else { off_interval(p) };
        lo[i] = l;
        hi[i] = h;
    }
    (lo, hi)
}

fn clamp_into(a: &[f64; ACTION_DIM], lo: &[f64; ACTION_DIM], hi: &[f64; ACTION_DIM]) -> [f64; ACTION_DIM] {
    let mut x = *a;
    for i in 0..ACTION_DIM {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
    x
}

fn half_sq(a: &[f64; ACTION_DIM], b: &[f64; ACTION_DIM]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}

/// Sampled range of an asset's output over `[lo, hi]`, W.
fn output_range(cs: &ConstraintSet<'_>, asset: Asset, lo: f64, hi: f64) -> (f64, f64) {
    let mut r = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..RANGE_SAMPLES {
        let a = lo + (hi - lo) * k as f64 / (RANGE_SAMPLES - 1) as f64;
        let q = cs.asset_output(asset, a).0;
        r = (r.0.min(q), r.1.max(q));
    }
    r
}

struct SlpOutcome {
    x: [f64; ACTION_DIM],
    iterations: usize,
    converged: bool,
}

/// Sequential linearization for one assignment from one start. Returns the
/// final iterate if it satisfies the balance.
fn slp(
    cs: &ConstraintSet<'_>,
    target: &[f64; ACTION_DIM],
    lo: &[f64; ACTION_DIM],
    hi: &[f64; ACTION_DIM],
    start: &[f64; ACTION_DIM],
) -> SlpOutcome {
    let demand = cs.ctx.q_demand / MW;
    let eval = |x: &[f64; ACTION_DIM]| -> (f64, [f64; ACTION_DIM]) {
        let mut q = 0.0;
        let mut g = [0.0; ACTION_DIM];
        for (i, &asset) in THERMAL.iter().enumerate() {
            let (qi, gi) = cs.asset_output(asset, x[i]);
            q += qi / MW;
            g[i] = gi / MW;
        }
        (q - demand, g)
    };
    let tol = BALANCE_TOL_W / MW;
    let mut x = clamp_into(start, lo, hi);
    let mut mu = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    let (mut h, mut g) = eval(&x);
    for _ in 0..SLP_MAX_ITERS {
        iterations += 1;
        let c: f64 = g.iter().zip(&x).map(|(gi, xi)| gi * xi).sum::<f64>() - h;
        let (step_target, lambda) = match project_box_hyperplane(target, &g, c, lo, hi) {
            Ok(s) => (s.x, s.lambda),
            Err(QpError::Infeasible) | Err(QpError::IterationLimit) => {
                // linearization out of reach: head for the box vertex closest to it
                let (_, rmax) = hyperplane_range(&g, lo, hi);
                let up = c > rmax;
                let v: Vec<f64> = (0..ACTION_DIM)
                    .map(|i| if (g[i] > 0.0) == up && g[i] != 0.0 { hi[i] } else if g[i] != 0.0 { lo[i] } else { x[i] })
                    .collect();
                (v, 0.0)
            }
        };
        let mut d = [0.0; ACTION_DIM];
        for i in 0..ACTION_DIM {
            d[i] = step_target[i] - x[i];
        }
        mu = f64::max(mu, 2.0 * lambda.abs() + 1.0);
        let merit = |x: &[f64; ACTION_DIM], h: f64| half_sq(x, target) + mu * h.abs();
        let phi0 = merit(&x, h);
        let mut alpha = 1.0;
        let (mut xn, mut hn, mut gn);
        loop {
            xn = x;
            for i in 0..ACTION_DIM {
                xn[i] = (x[i] + alpha * d[i]).clamp(lo[i], hi[i]);
            }
            let e = eval(&xn);
            hn = e.0;
            gn = e.1;
            if merit(&xn, hn) <= phi0 || alpha < 1e-6 {
                break;
            }
            alpha *= 0.5;
        }
        let step = (0..ACTION_DIM).map(|i| (xn[i] - x[i]).abs()).fold(0.0, f64::max);
        x = xn;
        h = hn;
        g = gn;
        if step <= SLP_STEP_TOL && h.abs() <= tol {
            converged = true;
            break;
        }
    }
    // restoration: minimum-change Newton steps onto the balance
    let mut polish = 0;
    while h.abs() > tol && polish < 20 {
        polish += 1;
        let c: f64 = g.iter().zip(&x).map(|(gi, xi)| gi * xi).sum::<f64>() - h;
        match project_box_hyperplane(&x, &g, c, lo, hi) {
            Ok(s) => {
                let mut xn = x;
                xn.copy_from_slice(&s.x);
                x = xn;
                let e = eval(&x);
                h = e.0;
                g = e.1;
            }
            Err(_) => break,
        }
    }
    SlpOutcome { x, iterations: iterations + polish, converged: converged && h.abs() <= tol }
}

/// Projects `a_tilde` onto the feasible set: enumerates on/off assignments,
/// solves each by sequential linearization from each start, and returns the
/// feasible point with least distance (ties broken by assignment order).
///
/// `extra_start` adds a start point (typically the fallback action) to the
/// ã and box-midpoint starts.
pub fn project(a_tilde: &Action, cs: &ConstraintSet<'_>, extra_start: Option<&Action>) -> Result<ProjectionResult> {
    let t0 = Instant::now();
    let mut stats = SolveStats { converged: true, ..Default::default() };
    if !a_tilde.0.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("proposed action is not finite".into()));
    }

    // identity case: ã is already feasible
    if cs.is_feasible(a_tilde) {
        let mut assignment = [false; 3];
        for (i, &asset) in PRODUCERS.iter().enumerate() {
            assignment[i] = crate::action::decode_producer(a_tilde.0[i], cs.min_frac(asset)) > 0.0;
        }
        stats.wall_time_s = t0.elapsed().as_secs_f64();
        return Ok(ProjectionResult {
            a_safe: *a_tilde,
            d_safe: 0.0,
            binary_assignment: assignment,
            corrected: false,
            used_fallback: false,
            stats,
        });
    }

    let target = a_tilde.0;
    let demand = cs.ctx.q_demand;
    let tess_range = output_range(cs, Asset::Tess, -1.0, 1.0);
    let on_ranges: Vec<(f64, f64)> = PRODUCERS
        .iter()
        .map(|&asset| {
            let (l, h) = on_interval(cs.min_frac(asset));
            output_range(cs, asset, l, h)
        })
        .collect();
    let margin = 0.05 * THERMAL.iter().map(|&a| cs.nominal.get(a).q_max).fold(0.0, f64::max);

    let mut best: Option<([f64; ACTION_DIM], f64, [bool; 3])> = None;
    for index in 0..ASSIGNMENTS {
        let assignment = assignment_from_index(index);
        let (lo, hi) = assignment_boxes(cs, assignment);
        let bess = target[BESS].clamp(-1.0, 1.0);

        // distance lower bound from the box alone
        let lb = half_sq(&clamp_into(&target, &lo, &hi), &target);
        if best.as_ref().is_some_and(|b| lb > b.1) {
            continue;
        }
        // interval precheck on the balance
        let (mut qmin, mut qmax) = tess_range;
        for i in 0..3 {
            if assignment[i] {
                qmin += on_ranges[i].0;
                qmax += on_ranges[i].1;
            }
        }
        if demand < qmin - margin || demand > qmax + margin {
            continue;
        }

        stats.subproblems_solved += 1;
        let mut starts: Vec<[f64; ACTION_DIM]> = vec![clamp_into(&target, &lo, &hi)];
        let mid: [f64; ACTION_DIM] = std::array::from_fn(|i| if i == BESS { bess } else { 0.5 * (lo[i] + hi[i]) });
        starts.push(mid);
        if let Some(e) = extra_start {
            let mut s = clamp_into(&e.0, &lo, &hi);
            s[BESS] = bess;
            starts.push(s);
        }
        let mut sub_best: Option<([f64; ACTION_DIM], f64)> = None;
        for (k, s) in starts.iter().enumerate() {
            if starts[..k].contains(s) {
                continue;
            }
            let out = slp(cs, &target, &lo, &hi, s);
            stats.slp_iterations += out.iterations;
            let mut x = out.x;
            x[BESS] = bess;
            let a = Action(x);
            if cs.balance_residual(&a).abs() > BALANCE_TOL_W {
                continue;
            }
            if !out.converged {
                stats.converged = false;
            }
            let d = half_sq(&x, &target);
            if sub_best.is_none_or(|b| d < b.1) {
                sub_best = Some((x, d));
            }
            if d <= lb + 1e-15 {
                break;
            }
        }
        if let Some((x, d)) = sub_best {
            stats.subproblems_feasible += 1;
            if best.as_ref().is_none_or(|b| d < b.1) {
                best = Some((x, d, assignment));
            }
        }
    }
    stats.wall_time_s = t0.elapsed().as_secs_f64();
    match best {
        Some((x, d, assignment)) => {
            let a_safe = Action(x);
            Ok(ProjectionResult {
                a_safe,
                d_safe: d,
                binary_assignment: assignment,
                corrected: !a_safe.approx_eq(a_tilde, CORRECTION_TOL),
                used_fallback: false,
                stats,
            })
        }
        None => Err(Error::NoFeasibleAction { subproblems: ASSIGNMENTS }),
    }
}

/// Safety distance `½‖a_safe − ã‖²`; `f64::MAX` when no feasible action exists.
pub fn safety_distance(a_tilde: &Action, cs: &ConstraintSet<'_>) -> f64 {
    match project(a_tilde, cs, None) {
        Ok(r) => r.d_safe,
        Err(_) => f64::MAX,
    }
}

/// Result of shielding one proposed action.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShieldOutcome {
    pub a_safe: Action,
    pub corrected: bool,
    pub used_fallback: bool,
    /// Safety distance when a projection was solved.
    pub d_safe: Option<f64>,
    pub stats: SolveStats,
}

/// A configured shield: method, nominal models and the fallback policy.
#[derive(Clone, Debug)]
pub struct Shield {
    pub cfg: SafetyConfig,
    pub nominal: NominalSet,
    pub fallback: Option<SafePolicy>,
}

impl Shield {
    pub fn new(cfg: SafetyConfig, plant: &PlantConfig, nominal: NominalSet) -> Result<Self> {
        cfg.validate()?;
        let fallback = if cfg.method.needs_fallback() { Some(SafePolicy::new(plant, nominal.clone())?) } else { None };
        Ok(Shield { cfg, nominal, fallback })
    }

    fn fallback_action(&self, q_demand: f64) -> Result<Action> {
        self.fallback
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{} requires a fallback policy", self.cfg.method)))?
            .action(q_demand)
    }

    fn substitute(&self, a_tilde: &Action, q_demand: f64, d_safe: Option<f64>, stats: SolveStats) -> Result<ShieldOutcome> {
        let a = self.fallback_action(q_demand)?;
        Ok(ShieldOutcome { a_safe: a, corrected: !a.approx_eq(a_tilde, CORRECTION_TOL), used_fallback: true, d_safe, stats })
    }

    /// Filters `a_tilde` according to the configured method. Depends only on
    /// its arguments and the shield's frozen models; `surrogates` is consulted
    /// by the grey method alone.
    pub fn shield(&self, a_tilde: &Action, ctx: &ConstraintContext, surrogates: Option<&SurrogateSet>) -> Result<ShieldOutcome> {
        let a_tilde = a_tilde.clipped_if_finite()?;
        let method = self.cfg.method;
        let grey = if method.uses_surrogates() { surrogates } else { None };
        let cs = ConstraintSet::new(&self.nominal, grey, *ctx);
        match method {
            SafetyMethod::Unsafe => {
                Ok(ShieldOutcome { a_safe: a_tilde, corrected: false, used_fallback: false, d_safe: None, stats: SolveStats::default() })
            }
            SafetyMethod::OptLayer => {
                let r = project(&a_tilde, &cs, None)?;
                Ok(ShieldOutcome { a_safe: r.a_safe, corrected: r.corrected, used_fallback: false, d_safe: Some(r.d_safe), stats: r.stats })
            }
            SafetyMethod::SafeFallback => {
                let tol = self.cfg.eps_balance * self.cfg.demand_range;
                if a_tilde.is_within_bounds() && cs.balance_residual(&a_tilde).abs() <= tol {
                    Ok(ShieldOutcome { a_safe: a_tilde, corrected: false, used_fallback: false, d_safe: None, stats: SolveStats::default() })
                } else {
                    self.substitute(&a_tilde, ctx.q_demand, None, SolveStats::default())
                }
            }
            SafetyMethod::OptLayerPolicy | SafetyMethod::GreyOptLayerPolicy => {
                let fb = self.fallback_action(ctx.q_demand)?;
                match project(&a_tilde, &cs, Some(&fb)) {
                    Ok(r) if r.d_safe <= self.cfg.h_safe => Ok(ShieldOutcome {
                        a_safe: r.a_safe,
                        corrected: r.corrected,
                        used_fallback: false,
                        d_safe: Some(r.d_safe),
                        stats: r.stats,
                    }),
                    Ok(r) => self.substitute(&a_tilde, ctx.q_demand, Some(r.d_safe), r.stats),
                    Err(Error::NoFeasibleAction { .. }) => self.substitute(&a_tilde, ctx.q_demand, None, SolveStats::default()),
                    Err(e) => Err(e),
                }
            }
        }
    }
}

impl Action {
    /// Clips to the action box; non-finite components are an error.
    pub fn clipped_if_finite(&self) -> Result<Action> {
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("action {:?} is not finite", self.0)));
        }
        Ok(self.clipped())
    }
}

/// Experience produced by one executed step: the executed tuple, plus the
/// proposed action with reward `r − z` when the shield changed it.
pub fn shaped_tuples(
    s: &Observation,
    a_tilde: &Action,
    a_safe: &Action,
    r: f64,
    s_next: &Observation,
    done: bool,
    z: f64,
) -> Vec<Experience> {
    let mut out = vec![Experience { obs: *s, action: *a_safe, reward: r, next_obs: *s_next, done }];
    if !a_safe.approx_eq(a_tilde, CORRECTION_TOL) {
        out.push(Experience { obs: *s, action: *a_tilde, reward: r - z, next_obs: *s_next, done });
    }
    out
}
