//! TD3 actor-critic, its replay buffer, and the uniform random baseline.

use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::action::{Action, ACTION_DIM};
use crate::env::{Experience, Observation, Policy, OBS_DIM};
use crate::error::{Error, Result};
use crate::mlp::{Adam, Grads, Mlp, OutputActivation};
use crate::safety::ConstraintContext;
use crate::textfmt::Lines;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Td3Hyperparams {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_size: usize,
    /// Environment steps between training phases.
    pub train_freq: usize,
    /// Gradient updates per training phase.
    pub gradient_steps: usize,
    /// Environment steps before training starts.
    pub learning_starts: usize,
    pub exploration_std: f64,
    pub target_noise_std: f64,
    pub target_noise_clip: f64,
    pub policy_delay: usize,
    /// Polyak factor: `θ_targ ← ρ θ_targ + (1 − ρ) θ`.
    pub rho: f64,
    pub hidden: Vec<usize>,
}

impl Default for Td3Hyperparams {
    fn default() -> Self {
        Td3Hyperparams::safe()
    }
}

impl Td3Hyperparams {
    /// Settings used with a safety layer.
    pub fn safe() -> Self {
        Td3Hyperparams {
            gamma: 0.7,
            learning_rate: 0.000583,
            batch_size: 16,
            buffer_size: 1_000_000,
            train_freq: 1,
            gradient_steps: 1,
            learning_starts: 100,
            exploration_std: 0.183,
            target_noise_std: 0.2,
            target_noise_clip: 0.5,
            policy_delay: 2,
            rho: 0.995,
            hidden: vec![256, 256],
        }
    }

    /// Settings of the unshielded baseline.
    pub fn unsafe_baseline() -> Self {
        Td3Hyperparams {
            gamma: 0.9,
            learning_rate: 0.0003833,
            batch_size: 100,
            buffer_size: 100_000,
            train_freq: 2000,
            gradient_steps: 2000,
            exploration_std: 0.329,
            ..Td3Hyperparams::safe()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidArgument("gamma must lie in (0, 1)".into()));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.train_freq == 0 || self.policy_delay == 0 {
            return Err(Error::InvalidArgument("rates, batch size, train_freq and policy_delay must be positive".into()));
        }
        if self.batch_size > self.buffer_size {
            return Err(Error::InvalidArgument("batch_size exceeds buffer_size".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidArgument("rho must lie in [0, 1)".into()));
        }
        if self.exploration_std < 0.0 || self.target_noise_std < 0.0 || self.target_noise_clip < 0.0 {
            return Err(Error::InvalidArgument("noise parameters must be non-negative".into()));
        }
        Ok(())
    }
}

/// Fixed-capacity FIFO experience store, sampled uniformly with replacement.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        ReplayBuffer { capacity, items: Vec::new(), next: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Items from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Experience> {
        (0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

/// Batched tuple arrays.
#[derive(Clone, Debug)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array2<f64>,
    pub next_obs: Array2<f64>,
    pub dones: Array2<f64>,
}

impl Batch {
    pub fn from_tuples(tuples: &[&Experience]) -> Self {
        let n = tuples.len();
        let mut b = Batch {
            obs: Array2::zeros((n, OBS_DIM)),
            actions: Array2::zeros((n, ACTION_DIM)),
            rewards: Array2::zeros((n, 1)),
            next_obs: Array2::zeros((n, OBS_DIM)),
            dones: Array2::zeros((n, 1)),
        };
        for (i, e) in tuples.iter().enumerate() {
            for j in 0..OBS_DIM {
                b.obs[[i, j]] = e.obs.0[j];
                b.next_obs[[i, j]] = e.next_obs.0[j];
            }
            for j in 0..ACTION_DIM {
                b.actions[[i, j]] = e.action.0[j];
            }
            b.rewards[[i, 0]] = e.reward;
            b.dones[[i, 0]] = if e.done { 1.0 } else { 0.0 };
        }
        b
    }
}

/// One row of training diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrainRecord {
    pub step: usize,
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub buffer_size: usize,
}

fn concat_cols(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("same row count")
}

/// TD3 with generic state and action dimensions (the MDP uses 9 and 5).
#[derive(Clone, Debug)]
pub struct Td3Agent {
    pub hp: Td3Hyperparams,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub actor: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub actor_target: Mlp,
    pub critic1_target: Mlp,
    pub critic2_target: Mlp,
    actor_opt: Adam,
    critic1_opt: Adam,
    critic2_opt: Adam,
    pub buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    /// Environment steps observed.
    pub env_steps: usize,
    /// Gradient updates performed.
    pub updates: usize,
    pub diagnostics: Vec<TrainRecord>,
    /// Exploration noise on; switch off for evaluation.
    pub explore: bool,
}

impl Td3Agent {
    pub fn new(hp: Td3Hyperparams, obs_dim: usize, act_dim: usize, seed: u64) -> Result<Self> {
        hp.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = |input: usize, output: usize| {
            let mut w = vec![input];
            w.extend_from_slice(&hp.hidden);
            w.push(output);
            w
        };
        let actor = Mlp::new(&widths(obs_dim, act_dim), OutputActivation::Tanh, &mut rng)?;
        let critic1 = Mlp::new(&widths(obs_dim + act_dim, 1), OutputActivation::Identity, &mut rng)?;
        let critic2 = Mlp::new(&widths(obs_dim + act_dim, 1), OutputActivation::Identity, &mut rng)?;
        Ok(Td3Agent {
            actor_opt: Adam::new(&actor, hp.learning_rate),
            critic1_opt: Adam::new(&critic1, hp.learning_rate),
            critic2_opt: Adam::new(&critic2, hp.learning_rate),
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            buffer: ReplayBuffer::new(hp.buffer_size),
            rng,
            env_steps: 0,
            updates: 0,
            diagnostics: Vec::new(),
            explore: true,
            obs_dim,
            act_dim,
            hp,
        })
    }

    /// MDP-shaped agent.
    pub fn for_mdp(hp: Td3Hyperparams, seed: u64) -> Result<Self> {
        Td3Agent::new(hp, OBS_DIM, ACTION_DIM, seed)
    }

    /// `clip(μ(s) + ε, −1, 1)` with `ε ~ N(0, noise_std²)`.
    pub fn act_raw(&mut self, obs: &[f64], noise_std: f64) -> Vec<f64> {
        let mut a = self.actor.forward_one(obs);
        if noise_std > 0.0 {
            let n = Normal::new(0.0, noise_std).expect("finite std");
            for v in &mut a {
                *v += n.sample(&mut self.rng);
            }
        }
        a.iter().map(|v| v.clamp(-1.0, 1.0)).collect()
    }

    /// Bootstrapped targets `r + γ (1 − d) min(Q1', Q2')(s', ã')` with
    /// clipped smoothing noise on the target action.
    pub fn critic_targets(&mut self, b: &Batch) -> Array2<f64> {
        let mut a_next = self.actor_target.forward(b.next_obs.view());
        if self.hp.target_noise_std > 0.0 {
            let n = Normal::new(0.0, self.hp.target_noise_std).expect("finite std");
            let c = self.hp.target_noise_clip;
            a_next.mapv_inplace(|v| (v + n.sample(&mut self.rng).clamp(-c, c)).clamp(-1.0, 1.0));
        }
        let x_next = concat_cols(&b.next_obs, &a_next);
        let q1 = self.critic1_target.forward(x_next.view());
        let q2 = self.critic2_target.forward(x_next.view());
        let mut y = b.rewards.clone();
        for i in 0..y.nrows() {
            y[[i, 0]] += self.hp.gamma * (1.0 - b.dones[[i, 0]]) * q1[[i, 0]].min(q2[[i, 0]]);
        }
        y
    }

    /// Mean squared Bellman error of `critic` on the batch and its gradients.
    pub fn critic_loss_and_grads(critic: &Mlp, b: &Batch, targets: &Array2<f64>) -> (f64, Grads) {
        let x = concat_cols(&b.obs, &b.actions);
        critic.mse_gradients(x.view(), targets.view())
    }

    /// Actor loss `−mean Q1(s, μ(s))` and its gradients with respect to the
    /// actor parameters.
    pub fn actor_loss_and_grads(&self, obs: &Array2<f64>) -> (f64, Grads) {
        let cache = self.actor.forward_cached(obs.view());
        let x = concat_cols(obs, &cache.output);
        let q_cache = self.critic1.forward_cached(x.view());
        let n = obs.nrows() as f64;
        let loss = -q_cache.output.sum() / n;
        let d_q = Array2::from_elem((obs.nrows(), 1), -1.0 / n);
        let (_, d_x) = self.critic1.backward(&q_cache, d_q.view());
        let d_a = d_x.slice(s![.., self.obs_dim..]).to_owned();
        let (g, _) = self.actor.backward(&cache, d_a.view());
        (loss, g)
    }

    /// One TD3 update from a sampled batch. No-op while the buffer holds
    /// fewer than `batch_size` tuples.
    pub fn update(&mut self) -> Option<(f64, Option<f64>)> {
        if self.buffer.len() < self.hp.batch_size {
            return None;
        }
        let sampled: Vec<Experience> = self.buffer.sample(self.hp.batch_size, &mut self.rng).into_iter().copied().collect();
        let refs: Vec<&Experience> = sampled.iter().collect();
        let b = Batch::from_tuples(&refs);
        Some(self.update_on(&b))
    }

    /// One TD3 update on a given batch.
    pub fn update_on(&mut self, b: &Batch) -> (f64, Option<f64>) {
        let y = self.critic_targets(b);
        let (l1, g1) = Td3Agent::critic_loss_and_grads(&self.critic1, b, &y);
        let (l2, g2) = Td3Agent::critic_loss_and_grads(&self.critic2, b, &y);
        self.critic1_opt.step(&mut self.critic1, &g1);
        self.critic2_opt.step(&mut self.critic2, &g2);
        self.updates += 1;
        let mut actor_loss = None;
        if self.updates % self.hp.policy_delay == 0 {
            let (la, ga) = self.actor_loss_and_grads(&b.obs);
            self.actor_opt.step(&mut self.actor, &ga);
            actor_loss = Some(la);
            let rho = self.hp.rho;
            self.actor_target.polyak_from(&self.actor, rho);
            self.critic1_target.polyak_from(&self.critic1, rho);
            self.critic2_target.polyak_from(&self.critic2, rho);
        }
        (0.5 * (l1 + l2), actor_loss)
    }

    /// Stores tuples and trains on the configured cadence; counts one
    /// environment step per call.
    pub fn observe_tuples(&mut self, tuples: &[Experience]) {
        for t in tuples {
            self.buffer.push(*t);
        }
        self.env_steps += 1;
        if self.env_steps >= self.hp.learning_starts && self.env_steps % self.hp.train_freq == 0 {
            let mut last: Option<(f64, Option<f64>)> = None;
            let mut actor = None;
            for _ in 0..self.hp.gradient_steps {
                if let Some(r) = self.update() {
                    actor = r.1.or(actor);
                    last = Some(r);
                }
            }
            if let Some((c, _)) = last {
                self.diagnostics.push(TrainRecord { step: self.env_steps, critic_loss: c, actor_loss: actor, buffer_size: self.buffer.len() });
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("td3 v1\nobs_dim {}\nact_dim {}\n", self.obs_dim, self.act_dim);
        for net in [&self.actor, &self.critic1, &self.critic2, &self.actor_target, &self.critic1_target, &self.critic2_target] {
            s.push_str(&net.to_text());
        }
        s
    }

    /// Restores network weights from [`Td3Agent::to_text`]; optimizer state
    /// and the buffer start fresh.
    pub fn load_text(&mut self, text: &str) -> Result<()> {
        let mut lines = Lines::new(text);
        let (_, header) = lines.next_line()?;
        if header != "td3 v1" {
            return Err(Error::Parse(format!("unsupported agent header {header:?}")));
        }
        let obs_dim: usize = lines.keyed_parse("obs_dim")?;
        let act_dim: usize = lines.keyed_parse("act_dim")?;
        if obs_dim != self.obs_dim || act_dim != self.act_dim {
            return Err(Error::Parse("agent dimensions do not match".into()));
        }
        let mut nets = Vec::new();
        for _ in 0..6 {
            nets.push(Mlp::read_text(&mut lines)?);
        }
        let mut it = nets.into_iter();
        self.actor = it.next().expect("six networks");
        self.critic1 = it.next().expect("six networks");
        self.critic2 = it.next().expect("six networks");
        self.actor_target = it.next().expect("six networks");
        self.critic1_target = it.next().expect("six networks");
        self.critic2_target = it.next().expect("six networks");
        Ok(())
    }
}

impl Policy for Td3Agent {
    fn act(&mut self, obs: &Observation, _ctx: &ConstraintContext) -> Result<Action> {
        let std = if self.explore { self.hp.exploration_std } else { 0.0 };
        let a = self.act_raw(obs.as_slice(), std);
        let mut out = [0.0; ACTION_DIM];
        out.copy_from_slice(&a);
        Ok(Action(out))
    }

    fn observe(&mut self, tuples: &[Experience]) -> Result<()> {
        if self.explore {
            self.observe_tuples(tuples);
        }
        Ok(())
    }
}

/// Uniform random actions on `[−1, 1]^5`.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn sample(&mut self) -> Action {
        random_policy(&mut self.rng)
    }
}

/// One uniform draw on the action box.
pub fn random_policy<R: Rng + ?Sized>(rng: &mut R) -> Action {
    Action(std::array::from_fn(|_| rng.random_range(-1.0..=1.0)))
}

impl Policy for RandomPolicy {
    fn act(&mut self, _obs: &Observation, _ctx: &ConstraintContext) -> Result<Action> {
        Ok(self.sample())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp(r: f64, done: bool) -> Experience {
        let o = Observation([0.1; OBS_DIM]);
        Experience { obs: o, action: Action::ZERO, reward: r, next_obs: o, done }
    }

    #[test]
    fn buffer_is_fifo() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(exp(i as f64, false));
        }
        let rewards: Vec<f64> = b.iter().map(|e| e.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn terminal_target_is_reward() {
        let mut hp = Td3Hyperparams::safe();
        hp.hidden = vec![8];
        let mut agent = Td3Agent::for_mdp(hp, 1).unwrap();
        let e = exp(-1.25, true);
        let b = Batch::from_tuples(&[&e, &e]);
        let y = agent.critic_targets(&b);
        assert!(y.iter().all(|v| *v == -1.25));
    }

    #[test]
    fn targets_start_equal_to_mains() {
        let agent = Td3Agent::for_mdp(Td3Hyperparams { hidden: vec![8], ..Td3Hyperparams::safe() }, 2).unwrap();
        assert_eq!(agent.actor, agent.actor_target);
        assert_eq!(agent.critic1, agent.critic1_target);
        assert_ne!(agent.critic1, agent.critic2);
    }

    #[test]
    fn evaluation_actions_are_repeatable() {
        let mut agent = Td3Agent::for_mdp(Td3Hyperparams { hidden: vec![8], ..Td3Hyperparams::safe() }, 3).unwrap();
        let o = [0.3; OBS_DIM];
        assert_eq!(agent.act_raw(&o, 0.0), agent.act_raw(&o, 0.0));
        assert!(agent.act_raw(&o, 50.0).iter().all(|v| v.abs() == 1.0 || v.abs() < 1.0));
    }

    #[test]
    fn random_policy_in_bounds() {
        let mut p = RandomPolicy::new(4);
        for _ in 0..1000 {
            assert!(p.sample().is_within_bounds());
        }
    }

    #[test]
    fn hyperparameter_variants_validate() {
        Td3Hyperparams::safe().validate().unwrap();
        Td3Hyperparams::unsafe_baseline().validate().unwrap();
        let bad = Td3Hyperparams { batch_size: 10, buffer_size: 5, ..Td3Hyperparams::safe() };
        assert!(bad.validate().is_err());
    }
}
