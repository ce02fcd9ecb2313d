//! The MDP: observations, reward and the shielded episode loop.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::error::{Error, Result};
use crate::fallback::SafePolicy;
use crate::plant::{Plant, PlantConfig, PlantState, StepOutcome};
use crate::profile::{ExogenousProfile, PRICE_CAP, PRICE_FLOOR};
use crate::safety::{ConstraintContext, SafetyMethod, Shield, shaped_tuples};
use crate::surrogate::SurrogateLearner;

pub const OBS_DIM: usize = 9;

/// Normalized state `(e_th, e_el, p_wind, p_solar, x_el, soc_tess, soc_bess,
/// hour_of_day, day_of_week)`, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Min-max ranges used for normalization, fixed from the plant configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsRanges {
    pub thermal_demand: (f64, f64),
    pub electrical_demand: (f64, f64),
    pub wind: (f64, f64),
    pub solar: (f64, f64),
    pub price: (f64, f64),
}

impl ObsRanges {
    pub fn from_config(cfg: &PlantConfig) -> Self {
        ObsRanges {
            thermal_demand: (0.0, cfg.boiler.p_nom_th + cfg.chp.p_nom_th),
            electrical_demand: (0.0, 2.0e6),
            wind: (0.0, cfg.wind_nom),
            solar: (0.0, cfg.solar_nom),
            price: (PRICE_FLOOR, PRICE_CAP),
        }
    }

    fn pairs(&self) -> [(f64, f64); 5] {
        [self.thermal_demand, self.electrical_demand, self.wind, self.solar, self.price]
    }

    /// Observation for plant state `state` (its `t` indexes the profile).
    pub fn observe(&self, state: &PlantState, profile: &ExogenousProfile) -> Result<Observation> {
        let t = state.t;
        if t >= profile.horizon() {
            return Err(Error::EpisodeEnded(t));
        }
        let raw = [
            profile.thermal_demand[t],
            profile.electrical_demand[t],
            profile.wind_infeed[t],
            profile.solar_infeed[t],
            profile.elec_price[t],
        ];
        let mut o = [0.0; OBS_DIM];
        for (k, (v, (lo, hi))) in raw.iter().zip(self.pairs()).enumerate() {
            o[k] = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        }
        o[5] = state.soc_tess;
        o[6] = state.soc_bess;
        o[7] = ExogenousProfile::hour_of_day(t) as f64 / 24.0;
        o[8] = ExogenousProfile::day_of_week(t) as f64 / 7.0;
        Ok(Observation(o))
    }

    /// Physical values of the five exogenous components.
    pub fn denormalize(&self, obs: &Observation) -> [f64; 5] {
        let mut out = [0.0; 5];
        for (k, (lo, hi)) in self.pairs().into_iter().enumerate() {
            out[k] = lo + obs.0[k] * (hi - lo);
        }
        out
    }
}

/// Scalarisation weights of the reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Weight on energy cost, 1/EUR.
    pub x: f64,
    /// Weight on comfort loss, 1/W.
    pub y: f64,
    /// Extra cost on actions the shield had to change.
    pub z: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { x: 0.1, y: 2e-6, z: 1.0 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.x < 0.0 || self.y < 0.0 || self.z < 0.0 {
            return Err(Error::InvalidArgument("reward weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// `−(x·l_cost + y·l_comfort) − z·[violated]`.
pub fn reward(l_cost: f64, l_comfort: f64, violated: bool, cfg: &RewardConfig) -> f64 {
    let r = -(cfg.x * l_cost + cfg.y * l_comfort);
    if violated {
        r - cfg.z
    } else {
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Observation,
    pub done: bool,
}

/// A (possibly learning) controller.
pub trait Policy {
    /// Proposed action for the observation; `ctx` carries the measurements
    /// a rule-based controller needs.
    fn act(&mut self, obs: &Observation, ctx: &ConstraintContext) -> Result<Action>;

    /// Experience from the step just executed, in order.
    fn observe(&mut self, _tuples: &[Experience]) -> Result<()> {
        Ok(())
    }
}

impl Policy for SafePolicy {
    fn act(&mut self, _obs: &Observation, ctx: &ConstraintContext) -> Result<Action> {
        self.action(ctx.q_demand)
    }
}

/// Result of one environment step.
#[derive(Clone, Copy, Debug)]
pub struct Transition {
    pub outcome: StepOutcome,
    /// Reward of the executed action (no shaping term).
    pub reward: f64,
    pub next_obs: Observation,
    pub done: bool,
}

/// Plant plus profile plus reward: the MDP.
#[derive(Clone, Debug)]
pub struct Environment {
    pub plant: Plant,
    pub profile: ExogenousProfile,
    pub ranges: ObsRanges,
    pub reward_cfg: RewardConfig,
    state: PlantState,
}

impl Environment {
    pub fn new(plant: Plant, profile: ExogenousProfile, reward_cfg: RewardConfig) -> Result<Self> {
        reward_cfg.validate()?;
        let ranges = ObsRanges::from_config(&plant.cfg);
        let state = plant.initial_state(&profile);
        Ok(Environment { plant, profile, ranges, reward_cfg, state })
    }

    pub fn reset(&mut self, noise_seed: u64) {
        self.plant.reseed(noise_seed);
        self.state = self.plant.initial_state(&self.profile);
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn horizon(&self) -> usize {
        self.profile.horizon()
    }

    pub fn is_done(&self) -> bool {
        self.state.t >= self.horizon()
    }

    pub fn observe(&self) -> Result<Observation> {
        self.ranges.observe(&self.state, &self.profile)
    }

    pub fn context(&self) -> Result<ConstraintContext> {
        let t = self.state.t;
        if t >= self.horizon() {
            return Err(Error::EpisodeEnded(t));
        }
        Ok(ConstraintContext::new(&self.state, self.profile.thermal_demand[t]))
    }

    pub fn step(&mut self, action: &Action) -> Result<Transition> {
        let (next, outcome) = self.plant.step(&self.state, action, &self.profile)?;
        let reward = reward(outcome.energy_cost, outcome.comfort_loss, false, &self.reward_cfg);
        let done = next.t >= self.horizon();
        // the terminal observation reuses the last exogenous sample
        let obs_state = PlantState { t: next.t.min(self.horizon() - 1), ..next };
        let next_obs = self.ranges.observe(&obs_state, &self.profile)?;
        self.state = next;
        Ok(Transition { outcome, reward, next_obs, done })
    }
}

/// One logged control step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub a_tilde: Action,
    pub a_safe: Action,
    pub q_demand: f64,
    pub q_production: f64,
    pub l_cost: f64,
    pub l_comfort: f64,
    pub reward: f64,
    pub corrected: bool,
    pub used_fallback: bool,
    pub d_safe: Option<f64>,
    pub subproblems_feasible: usize,
    pub slp_iters: usize,
    /// Wall time of the control step, s (not part of the CSV export).
    pub step_time_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog {
    pub method: SafetyMethod,
    pub records: Vec<StepRecord>,
    /// Experience tuples emitted, in order (only kept when requested).
    pub tuples: Vec<Experience>,
}

pub const TRAJECTORY_HEADER: &str = "step,a_boil,a_hp,a_chp,a_tess,a_bess,q_demand,q_production,l_cost,l_comfort,reward,corrected,method,d_safe,used_fallback,subproblems_feasible,slp_iters";

impl TrajectoryLog {
    pub fn new(method: SafetyMethod) -> Self {
        TrajectoryLog { method, records: Vec::new(), tuples: Vec::new() }
    }

    pub fn total_reward(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }

    /// Writes the trajectory as CSV; floats use the shortest exact
    /// representation so values read back bit-identically.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRAJECTORY_HEADER}")?;
        for r in &self.records {
            let a = r.a_safe.0;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.step,
                a[0],
                a[1],
                a[2],
                a[3],
                a[4],
                r.q_demand,
                r.q_production,
                r.l_cost,
                r.l_comfort,
                r.reward,
                u8::from(r.corrected),
                self.method,
                r.d_safe.map_or_else(|| "".to_string(), |d| d.to_string()),
                u8::from(r.used_fallback),
                r.subproblems_feasible,
                r.slp_iters
            )?;
        }
        Ok(())
    }
}

/// Options for [`episode_run`].
#[derive(Clone, Copy, Debug, Default)]
pub struct EpisodeOptions {
    /// Stop after this many steps (default: the profile horizon).
    pub max_steps: Option<usize>,
    /// Keep the emitted experience tuples in the log.
    pub keep_tuples: bool,
    /// First index of the global step counter (for the refit schedule).
    pub step_offset: usize,
    /// Use the learner's current models without recording data or refitting.
    pub frozen: bool,
}

/// Runs the shielded control loop: observe, propose, shield, execute, record.
/// Experience tuples go to the policy in order; the surrogate learner, if any,
/// sees every realized outcome and refits on its schedule. The shield always
/// uses the models accepted before the step started.
pub fn episode_run(
    env: &mut Environment,
    policy: &mut dyn Policy,
    shield: &Shield,
    mut learner: Option<&mut SurrogateLearner>,
    opts: EpisodeOptions,
) -> Result<TrajectoryLog> {
    let mut log = TrajectoryLog::new(shield.cfg.method);
    let steps = opts.max_steps.unwrap_or(usize::MAX).min(env.horizon().saturating_sub(env.state().t));
    for _ in 0..steps {
        let t0 = Instant::now();
        let state = *env.state();
        let obs = env.observe()?;
        let ctx = env.context()?;
        let a_tilde = policy.act(&obs, &ctx)?;
        let surrogates = learner.as_ref().map(|l| &l.models);
        let shielded = shield.shield(&a_tilde, &ctx, surrogates)?;
        let tr = env.step(&shielded.a_safe)?;
        let tuples = shaped_tuples(&obs, &a_tilde, &shielded.a_safe, tr.reward, &tr.next_obs, tr.done, env.reward_cfg.z);
        policy.observe(&tuples)?;
        if let Some(l) = learner.as_deref_mut().filter(|_| !opts.frozen) {
            let u = env.plant.cfg.decode(&shielded.a_safe);
            l.observe(opts.step_offset + state.t, &state, &u, &tr.outcome, &shield.nominal);
        }
        let step_time_s = t0.elapsed().as_secs_f64();
        log.records.push(StepRecord {
            step: state.t,
            a_tilde,
            a_safe: shielded.a_safe,
            q_demand: tr.outcome.q_demand,
            q_production: tr.outcome.q_production,
            l_cost: tr.outcome.energy_cost,
            l_comfort: tr.outcome.comfort_loss,
            reward: tr.reward,
            corrected: shielded.corrected,
            used_fallback: shielded.used_fallback,
            d_safe: shielded.d_safe,
            subproblems_feasible: shielded.stats.subproblems_feasible,
            slp_iters: shielded.stats.slp_iterations,
            step_time_s,
        });
        if opts.keep_tuples {
            log.tuples.extend(tuples);
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{generate_profiles, ProfileKind};

    #[test]
    fn reward_arithmetic() {
        let c = RewardConfig::default();
        assert_eq!(reward(10.0, 5e5, false, &c), -2.0);
        assert_eq!(reward(10.0, 5e5, true, &c), -3.0);
        assert_eq!(reward(0.0, 0.0, false, &c), 0.0);
    }

    #[test]
    fn observation_origin_and_identity() {
        let cfg = PlantConfig::default();
        let profile = generate_profiles(3, 96, ProfileKind::Eval).unwrap();
        let ranges = ObsRanges::from_config(&cfg);
        let mut s = PlantState::initial(&cfg, &profile);
        s.soc_tess = 0.5;
        let o = ranges.observe(&s, &profile).unwrap();
        assert_eq!((o.0[7], o.0[8]), (0.0, 0.0));
        assert_eq!(o.0[5], 0.5);
        assert!(o.0.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn max_demand_normalizes_to_one() {
        let cfg = PlantConfig::default();
        let mut profile = generate_profiles(3, 4, ProfileKind::Eval).unwrap();
        profile.thermal_demand[0] = 3.0e6;
        let ranges = ObsRanges::from_config(&cfg);
        let o = ranges.observe(&PlantState::initial(&cfg, &profile), &profile).unwrap();
        assert_eq!(o.0[0], 1.0);
    }

    #[test]
    fn observing_past_horizon_ends_episode() {
        let cfg = PlantConfig::default();
        let profile = generate_profiles(3, 4, ProfileKind::Eval).unwrap();
        let ranges = ObsRanges::from_config(&cfg);
        let s = PlantState { t: 4, ..PlantState::initial(&cfg, &profile) };
        assert!(matches!(ranges.observe(&s, &profile), Err(Error::EpisodeEnded(4))));
    }
}
