//! Closed-loop behaviour: energy bookkeeping, reward arithmetic, shaped
//! experience and exact replay.

use safe_ems_core::agent::RandomPolicy;
use safe_ems_core::env::{episode_run, reward, EpisodeOptions, Environment, Experience, Observation, Policy, RewardConfig};
use safe_ems_core::fallback::SafePolicy;
use safe_ems_core::nominal::commission;
use safe_ems_core::plant::{STEPS_PER_WEEK, STEP_HOURS};
use safe_ems_core::profile::{generate_profiles, ProfileKind};
use safe_ems_core::safety::{ConstraintContext, SafetyConfig, SafetyMethod, Shield};
use safe_ems_core::{Action, Plant, PlantConfig, Result};

fn week_env(noise_seed: u64) -> Environment {
    let profile = generate_profiles(5, STEPS_PER_WEEK, ProfileKind::Eval).unwrap();
    let mut env = Environment::new(Plant::new(PlantConfig::default()).unwrap(), profile, RewardConfig::default()).unwrap();
    env.reset(noise_seed);
    env
}

fn shield(method: SafetyMethod) -> Shield {
    let cfg = PlantConfig::default();
    let nominal = commission(&cfg, 4 * STEPS_PER_WEEK, 9).unwrap().0;
    Shield::new(SafetyConfig { method, ..SafetyConfig::default() }, &cfg, nominal).unwrap()
}

#[test]
fn storage_and_grid_energy_is_conserved() {
    let cfg = PlantConfig::default();
    let profile = generate_profiles(6, STEPS_PER_WEEK, ProfileKind::Train).unwrap();
    let mut plant = Plant::new(cfg.clone()).unwrap();
    let mut policy = RandomPolicy::new(6);
    let mut s = plant.initial_state(&profile);
    for _ in 0..STEPS_PER_WEEK {
        let (n, o) = plant.step(&s, &policy.sample(), &profile).unwrap();
        assert_eq!(o.q_production, o.q_boil + o.q_hp + o.q_chp + o.q_tess);
        assert!((o.p_grid - (o.p_demand + o.p_hp - o.p_bess - o.p_wind - o.p_solar - o.p_chp)).abs() <= 1e-6);
        assert_eq!(o.comfort_loss, (o.q_demand - o.q_production).abs());

        let tess_gap = cfg.tess.e_nom * (s.soc_tess - n.soc_tess) - (o.q_tess * STEP_HOURS + o.losses_tess_wh);
        assert!((tess_gap.abs() - o.spilled_tess_wh).abs() <= 1e-3, "thermal store gap {tess_gap} vs spill {}", o.spilled_tess_wh);
        let bess_gap = cfg.bess.e_nom * (s.soc_bess - n.soc_bess) - (o.p_bess * STEP_HOURS + o.losses_bess_wh);
        assert!(bess_gap.abs() <= o.spilled_bess_wh + 1e-3, "battery gap {bess_gap}");
        assert!((0.0..=1.0).contains(&n.soc_tess) && (0.0..=1.0).contains(&n.soc_bess));
        s = n;
    }
}

/// Keeps every tuple it is shown.
struct Recorder {
    inner: RandomPolicy,
    seen: Vec<Vec<Experience>>,
}

impl Policy for Recorder {
    fn act(&mut self, obs: &Observation, ctx: &ConstraintContext) -> Result<Action> {
        self.inner.act(obs, ctx)
    }

    fn observe(&mut self, tuples: &[Experience]) -> Result<()> {
        self.seen.push(tuples.to_vec());
        Ok(())
    }
}

#[test]
fn rewards_recompute_and_shaped_tuples_carry_the_penalty() {
    let sh = shield(SafetyMethod::OptLayerPolicy);
    let mut env = week_env(1);
    let mut rec = Recorder { inner: RandomPolicy::new(2), seen: Vec::new() };
    let log = episode_run(&mut env, &mut rec, &sh, None, EpisodeOptions { keep_tuples: true, ..Default::default() }).unwrap();
    let z = env.reward_cfg.z;
    assert_eq!(log.records.len(), STEPS_PER_WEEK);
    let mut shaped = 0;
    for (r, tuples) in log.records.iter().zip(&rec.seen) {
        let c = RewardConfig::default();
        assert!((r.reward - -(c.x * r.l_cost + c.y * r.l_comfort)).abs() <= 1e-12);
        assert_eq!(r.reward, reward(r.l_cost, r.l_comfort, false, &c));
        assert_eq!(tuples[0].action, r.a_safe);
        assert_eq!(tuples[0].reward, r.reward);
        if r.corrected {
            assert_eq!(tuples.len(), 2);
            assert_eq!(tuples[1].action, r.a_tilde);
            assert_eq!(tuples[1].reward, r.reward - z);
            shaped += 1;
        } else {
            assert_eq!(tuples.len(), 1);
        }
    }
    assert!(shaped > 0);
    assert_eq!(log.tuples.len(), STEPS_PER_WEEK + shaped);
    assert!(log.tuples.last().unwrap().done);
}

#[test]
fn identical_seeds_replay_exactly() {
    let sh = shield(SafetyMethod::OptLayer);
    let csv = |seed| {
        let mut env = week_env(seed);
        let mut p = RandomPolicy::new(seed);
        let log = episode_run(&mut env, &mut p, &sh, None, EpisodeOptions { max_steps: Some(96), ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        buf
    };
    assert_eq!(csv(4), csv(4));
    assert_ne!(csv(4), csv(5));
}

#[test]
fn fallback_rollout_keeps_the_balance() {
    let sh = shield(SafetyMethod::SafeFallback);
    let mut env = week_env(3);
    let mut p = SafePolicy::new(&env.plant.cfg.clone(), sh.nominal.clone()).unwrap();
    let log = episode_run(&mut env, &mut p, &sh, None, EpisodeOptions::default()).unwrap();
    let err: f64 = log.records.iter().map(|r| (r.q_demand - r.q_production).abs()).sum();
    let demand: f64 = log.records.iter().map(|r| r.q_demand).sum();
    assert!(100.0 * err / demand <= 10.0, "NSUM {}", 100.0 * err / demand);
}

#[test]
fn max_steps_and_horizon_bound_the_episode() {
    let sh = shield(SafetyMethod::Unsafe);
    let mut env = week_env(1);
    let mut p = RandomPolicy::new(1);
    let a = episode_run(&mut env, &mut p, &sh, None, EpisodeOptions { max_steps: Some(100), ..Default::default() }).unwrap();
    assert_eq!(a.records.len(), 100);
    let b = episode_run(&mut env, &mut p, &sh, None, EpisodeOptions { max_steps: Some(10_000), ..Default::default() }).unwrap();
    assert_eq!(b.records.len(), STEPS_PER_WEEK - 100);
    assert_eq!(b.records[0].step, 100);
    assert!(env.is_done());
}
