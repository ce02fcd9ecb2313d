//! Run configuration: one sectioned TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use safe_ems_core::agent::Td3Hyperparams;
use safe_ems_core::env::RewardConfig;
use safe_ems_core::nominal::COMMISSIONING_STEPS;
use safe_ems_core::plant::{STEPS_PER_WEEK, STEPS_PER_YEAR};
use safe_ems_core::safety::{SafetyConfig, SafetyMethod};
use safe_ems_core::surrogate::SurrogateConfig;
use safe_ems_core::PlantConfig;

use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Td3,
    Random,
    Fallback,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Td3 => "td3",
            AgentKind::Random => "random",
            AgentKind::Fallback => "fallback",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [AgentKind::Td3, AgentKind::Random, AgentKind::Fallback].into_iter().find(|a| a.name() == s)
    }
}

/// The `[run]` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub method: SafetyMethod,
    pub agent: AgentKind,
    pub seeds: Vec<u64>,
    pub training_steps: usize,
    /// Evaluate every this many training steps (0: only initial and final).
    pub eval_interval: usize,
    pub eval_horizon: usize,
    /// Length of the generated evaluation profile.
    pub eval_profile_steps: usize,
    /// Length of one training episode.
    pub train_horizon: usize,
    /// Fixes the evaluation profile and its plant noise for every method and seed.
    pub eval_seed: u64,
    pub commissioning_steps: usize,
    pub commissioning_seed: u64,
    /// Final mean objective of an unshielded TD3 run, for relative objectives.
    pub reference_objective: Option<f64>,
    /// Seeds trained concurrently.
    pub jobs: usize,
    /// Also write the per-step training log for every seed.
    pub write_training_log: bool,
    pub output: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            method: SafetyMethod::OptLayerPolicy,
            agent: AgentKind::Td3,
            seeds: vec![1, 2, 3, 4, 5],
            training_steps: 20_000,
            eval_interval: 2_000,
            eval_horizon: STEPS_PER_WEEK,
            eval_profile_steps: STEPS_PER_WEEK,
            train_horizon: STEPS_PER_YEAR,
            eval_seed: 0,
            commissioning_steps: COMMISSIONING_STEPS,
            commissioning_seed: 0,
            reference_objective: None,
            jobs: 1,
            write_training_log: true,
            output: PathBuf::from("runs/out"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run: RunSection,
    pub plant: PlantConfig,
    pub reward: RewardConfig,
    pub safety: SafetyConfig,
    pub surrogate: SurrogateConfig,
    /// TD3 settings; the method-appropriate preset when absent.
    pub td3: Option<Td3Hyperparams>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.safety.method = cfg.run.method;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always serializable")
    }

    /// Sets the method in both places it is recorded.
    pub fn set_method(&mut self, method: SafetyMethod) {
        self.run.method = method;
        self.safety.method = method;
    }

    pub fn td3_hyperparams(&self) -> Td3Hyperparams {
        match (&self.td3, self.run.method) {
            (Some(hp), _) => hp.clone(),
            (None, SafetyMethod::Unsafe) => Td3Hyperparams::unsafe_baseline(),
            (None, _) => Td3Hyperparams::safe(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let r = &self.run;
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if r.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        let mut sorted = r.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != r.seeds.len() {
            return bad("seeds must be distinct");
        }
        if r.eval_horizon == 0 || r.eval_horizon > r.eval_profile_steps {
            return bad("eval_horizon must lie in 1..=eval_profile_steps");
        }
        if r.train_horizon == 0 {
            return bad("train_horizon must be positive");
        }
        if r.jobs == 0 {
            return bad("jobs must be positive");
        }
        if self.safety.method != r.method {
            return bad("safety.method disagrees with run.method");
        }
        self.plant.validate()?;
        self.reward.validate()?;
        self.safety.validate()?;
        self.surrogate.schedule.validate()?;
        if r.agent == AgentKind::Td3 {
            self.td3_hyperparams().validate()?;
        }
        Ok(())
    }
}

/// Mixes a run seed with a stream label into an independent RNG seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = RunConfig::from_toml(
            "[run]\nmethod = \"unsafe\"\nagent = \"random\"\nseeds = [7]\n[reward]\nz = 2.0\n[safety]\nh_safe = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.run.method, SafetyMethod::Unsafe);
        assert_eq!(cfg.safety.method, SafetyMethod::Unsafe);
        assert_eq!(cfg.run.agent, AgentKind::Random);
        assert_eq!(cfg.reward.z, 2.0);
        assert_eq!(cfg.safety.h_safe, 0.5);
        assert_eq!(cfg.td3_hyperparams(), Td3Hyperparams::unsafe_baseline());
    }

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.run.reference_objective = Some(-123.5);
        cfg.td3 = Some(Td3Hyperparams::safe());
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_empty_seeds_and_long_eval() {
        let mut cfg = RunConfig::default();
        cfg.run.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.run.eval_horizon = cfg.run.eval_profile_steps + 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected_by_type() {
        assert!(RunConfig::from_toml("[run]\nseeds = \"x\"\n").is_err());
    }
}
