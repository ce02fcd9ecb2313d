//! Central finite-difference gradient checks for rectifier networks.
//!
//! Probes whose ±h perturbation changes any hidden unit's sign are skipped and
//! redrawn: the loss has a kink there and the finite difference is meaningless.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safe_ems_core::agent::{Batch, Td3Agent, Td3Hyperparams};
use safe_ems_core::mlp::{Mlp, OutputActivation};

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor so vanishing gradients are judged absolutely.
pub const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct CheckReport {
    pub probes: usize,
    pub skipped: usize,
    pub worst_rel: f64,
}

impl CheckReport {
    pub fn passed(&self, min_probes: usize) -> bool {
        self.probes >= min_probes && self.worst_rel <= REL_TOL
    }
}

pub fn signs(net: &Mlp, x: &Array2<f64>) -> Vec<bool> {
    let cache = net.forward_cached(x.view());
    let hidden = cache.pre.len() - 1;
    cache.pre[..hidden].iter().flat_map(|p| p.iter().map(|&v| v > 0.0).collect::<Vec<_>>()).collect()
}

/// `loss(θ)` returns the scalar loss and the kink pattern at θ.
pub fn check<F>(theta: &[f64], analytic: &[f64], probes: usize, seed: u64, loss: F) -> CheckReport
where
    F: Fn(&[f64]) -> (f64, Vec<bool>),
{
    assert_eq!(theta.len(), analytic.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, base) = loss(theta);
    let mut rep = CheckReport { probes: 0, skipped: 0, worst_rel: 0.0 };
    let mut p = theta.to_vec();
    while rep.probes < probes {
        assert!(rep.skipped < 50 * probes, "too many probes on kinks");
        let i = rng.random_range(0..theta.len());
        p[i] = theta[i] + STEP;
        let (lp, sp) = loss(&p);
        p[i] = theta[i] - STEP;
        let (lm, sm) = loss(&p);
        p[i] = theta[i];
        if sp != base || sm != base {
            rep.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * STEP);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(FLOOR);
        rep.worst_rel = rep.worst_rel.max(rel);
        rep.probes += 1;
    }
    rep
}

fn random_batch(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn with_params(net: &Mlp, p: &[f64]) -> Mlp {
    let mut n = net.clone();
    n.set_params_flat(p).unwrap();
    n
}

/// Mean squared error of a regression network (the surrogate training loss).
pub fn check_regression(widths: &[usize], probes: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Mlp::new(widths, OutputActivation::Identity, &mut rng).unwrap();
    let x = random_batch(8, widths[0], &mut rng);
    let y = random_batch(8, *widths.last().unwrap(), &mut rng);
    let (_, g) = net.mse_gradients(x.view(), y.view());
    check(&net.params_flat(), &g.flat(), probes, seed ^ 1, |p| {
        let n = with_params(&net, p);
        (n.mse_gradients(x.view(), y.view()).0, signs(&n, &x))
    })
}

fn td3_fixture(seed: u64) -> (Td3Agent, Batch) {
    let hp = Td3Hyperparams::safe();
    let agent = Td3Agent::for_mdp(hp, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
    let b = Batch {
        obs: random_batch(16, agent.obs_dim, &mut rng).mapv(|v| 0.5 * (v + 1.0)),
        actions: random_batch(16, agent.act_dim, &mut rng),
        rewards: random_batch(16, 1, &mut rng),
        next_obs: random_batch(16, agent.obs_dim, &mut rng).mapv(|v| 0.5 * (v + 1.0)),
        dones: Array2::zeros((16, 1)),
    };
    (agent, b)
}

fn concat(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate![ndarray::Axis(1), *a, *b]
}

/// Bellman regression loss of a TD3 critic against fixed targets.
pub fn check_critic(probes: usize, seed: u64) -> CheckReport {
    let (agent, b) = td3_fixture(seed);
    let targets = b.rewards.mapv(|r| 2.0 * r);
    let (_, g) = Td3Agent::critic_loss_and_grads(&agent.critic1, &b, &targets);
    let x = concat(&b.obs, &b.actions);
    check(&agent.critic1.params_flat(), &g.flat(), probes, seed ^ 2, |p| {
        let c = with_params(&agent.critic1, p);
        (Td3Agent::critic_loss_and_grads(&c, &b, &targets).0, signs(&c, &x))
    })
}

/// Deterministic policy-gradient loss `−mean Q1(s, μ(s))` in the actor
/// parameters, which back-propagates through the critic's input gradient.
pub fn check_actor(probes: usize, seed: u64) -> CheckReport {
    let (agent, b) = td3_fixture(seed);
    let (_, g) = agent.actor_loss_and_grads(&b.obs);
    check(&agent.actor.params_flat(), &g.flat(), probes, seed ^ 3, |p| {
        let mut a = agent.clone();
        a.actor.set_params_flat(p).unwrap();
        let (loss, _) = a.actor_loss_and_grads(&b.obs);
        let act = a.actor.forward(b.obs.view());
        let mut pattern = signs(&a.actor, &b.obs);
        pattern.extend(signs(&a.critic1, &concat(&b.obs, &act)));
        (loss, pattern)
    })
}

