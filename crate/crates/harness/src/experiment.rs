//! Multi-seed training and evaluation runs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::info;

use safe_ems_core::agent::{RandomPolicy, Td3Agent};
use safe_ems_core::env::{episode_run, EpisodeOptions, Environment, Experience, Observation, Policy, StepRecord, TrajectoryLog};
use safe_ems_core::fallback::SafePolicy;
use safe_ems_core::nominal::{commission, ModelMetrics, NominalSet};
use safe_ems_core::profile::{generate_profiles, ExogenousProfile, ProfileKind};
use safe_ems_core::safety::{ConstraintContext, Shield};
use safe_ems_core::surrogate::{FitRecord, SurrogateConfig, SurrogateLearner};
use safe_ems_core::{Action, Asset, Plant};

use crate::config::{derive_seed, AgentKind, RunConfig};
use crate::metrics::{relative_objective, runtime_stats, EvalPoint, RuntimeStats};
use crate::HarnessError;

const STREAM_AGENT: u64 = 1;
const STREAM_TRAIN_PROFILE: u64 = 2;
const STREAM_TRAIN_NOISE: u64 = 3;
const STREAM_EVAL_NOISE: u64 = 4;
const STREAM_EVAL_ACTIONS: u64 = 5;
const STREAM_SURROGATE: u64 = 6;

/// Plant models shared by every seed of a run.
#[derive(Clone, Debug)]
pub struct Commissioned {
    pub nominal: NominalSet,
    pub metrics: [ModelMetrics; 4],
}

pub fn commission_models(cfg: &RunConfig) -> Result<Commissioned, HarnessError> {
    let (nominal, metrics) = commission(&cfg.plant, cfg.run.commissioning_steps, cfg.run.commissioning_seed)?;
    Ok(Commissioned { nominal, metrics })
}

/// The controller being trained.
pub enum Agent {
    Td3(Box<Td3Agent>),
    Random(RandomPolicy),
    Fallback(SafePolicy),
}

impl Agent {
    pub fn build(cfg: &RunConfig, nominal: &NominalSet, seed: u64) -> Result<Self, HarnessError> {
        Ok(match cfg.run.agent {
            AgentKind::Td3 => Agent::Td3(Box::new(Td3Agent::for_mdp(cfg.td3_hyperparams(), derive_seed(seed, STREAM_AGENT))?)),
            AgentKind::Random => Agent::Random(RandomPolicy::new(derive_seed(seed, STREAM_AGENT))),
            AgentKind::Fallback => Agent::Fallback(SafePolicy::new(&cfg.plant, nominal.clone())?),
        })
    }

    fn policy(&mut self) -> &mut dyn Policy {
        match self {
            Agent::Td3(a) => a.as_mut(),
            Agent::Random(a) => a,
            Agent::Fallback(a) => a,
        }
    }
}

/// Acts through a policy but never lets it learn.
struct Frozen<'a>(&'a mut dyn Policy);

impl Policy for Frozen<'_> {
    fn act(&mut self, obs: &Observation, ctx: &ConstraintContext) -> safe_ems_core::Result<Action> {
        self.0.act(obs, ctx)
    }

    fn observe(&mut self, _tuples: &[Experience]) -> safe_ems_core::Result<()> {
        Ok(())
    }
}

/// Everything one seed produces.
#[derive(Debug)]
pub struct SeedResult {
    pub seed: u64,
    pub evals: Vec<EvalPoint>,
    /// Trajectory of the last evaluation.
    pub final_trajectory: TrajectoryLog,
    pub training: TrajectoryLog,
    pub fits: Vec<FitRecord>,
    pub train_runtime: RuntimeStats,
    pub eval_runtime: RuntimeStats,
}

impl SeedResult {
    pub fn initial(&self) -> &EvalPoint {
        &self.evals[0]
    }

    pub fn last(&self) -> &EvalPoint {
        self.evals.last().expect("at least the initial evaluation")
    }
}

/// Evaluation environment shared by all methods and seeds.
pub fn eval_profile(cfg: &RunConfig) -> Result<ExogenousProfile, HarnessError> {
    Ok(generate_profiles(cfg.run.eval_seed, cfg.run.eval_profile_steps, ProfileKind::Eval)?)
}

struct SeedRunner<'a> {
    cfg: &'a RunConfig,
    seed: u64,
    shield: Shield,
    eval_profile: &'a ExogenousProfile,
    eval_times: Vec<f64>,
}

impl SeedRunner<'_> {
    fn evaluate(&mut self, agent: &mut Agent, learner: Option<&mut SurrogateLearner>, step: usize) -> Result<(EvalPoint, TrajectoryLog), HarnessError> {
        let plant = Plant::new(self.cfg.plant.clone())?;
        let mut env = Environment::new(plant, self.eval_profile.clone(), self.cfg.reward)?;
        env.reset(derive_seed(self.cfg.run.eval_seed, STREAM_EVAL_NOISE));
        let opts = EpisodeOptions { max_steps: Some(self.cfg.run.eval_horizon), frozen: true, ..Default::default() };
        let log = match agent {
            Agent::Td3(a) => {
                a.explore = false;
                let log = episode_run(&mut env, &mut Frozen(a.as_mut()), &self.shield, learner, opts);
                a.explore = true;
                log?
            }
            Agent::Random(_) => {
                // fresh draws per evaluation so training randomness is untouched
                let mut p = RandomPolicy::new(derive_seed(derive_seed(self.seed, STREAM_EVAL_ACTIONS), step as u64));
                episode_run(&mut env, &mut p, &self.shield, learner, opts)?
            }
            Agent::Fallback(p) => episode_run(&mut env, &mut Frozen(p), &self.shield, learner, opts)?,
        };
        self.eval_times.extend(log.records.iter().map(|r| r.step_time_s));
        let point = EvalPoint::from_records(step, &log.records)?;
        info!(
            "seed {} step {}: objective {:.3}, nmae {:.3}%, nsum {:.3}%",
            self.seed, step, point.objective, point.tolerance.nmae, point.tolerance.nsum
        );
        Ok((point, log))
    }
}

/// Eval points at 0, every `eval_interval`, and at the end of training.
pub fn eval_steps(training_steps: usize, eval_interval: usize) -> Vec<usize> {
    let mut v = vec![0];
    if eval_interval > 0 {
        v.extend((1..).map(|i| i * eval_interval).take_while(|&s| s < training_steps));
    }
    if training_steps > 0 {
        v.push(training_steps);
    }
    v
}

/// Trains and evaluates one seed.
pub fn run_seed(cfg: &RunConfig, models: &Commissioned, eval_profile: &ExogenousProfile, seed: u64) -> Result<SeedResult, HarnessError> {
    let method = cfg.run.method;
    let shield = Shield::new(cfg.safety, &cfg.plant, models.nominal.clone())?;
    let mut agent = Agent::build(cfg, &models.nominal, seed)?;
    let mut learner = if method.uses_surrogates() {
        Some(SurrogateLearner::new(SurrogateConfig { seed: derive_seed(seed, STREAM_SURROGATE), ..cfg.surrogate.clone() })?)
    } else {
        None
    };
    let train_profile = generate_profiles(derive_seed(seed, STREAM_TRAIN_PROFILE), cfg.run.train_horizon, ProfileKind::Train)?;
    let mut env = Environment::new(Plant::new(cfg.plant.clone())?, train_profile, cfg.reward)?;
    let mut runner = SeedRunner { cfg, seed, shield, eval_profile, eval_times: Vec::new() };

    let schedule = eval_steps(cfg.run.training_steps, cfg.run.eval_interval);
    let mut evals = Vec::with_capacity(schedule.len());
    let mut training = TrajectoryLog::new(method);
    let mut train_times = Vec::with_capacity(cfg.run.training_steps);
    let (first, mut final_trajectory) = runner.evaluate(&mut agent, learner.as_mut(), 0)?;
    evals.push(first);

    let mut done = 0;
    let mut episode = 0u64;
    env.reset(derive_seed(derive_seed(seed, STREAM_TRAIN_NOISE), episode));
    for &target in &schedule[1..] {
        while done < target {
            if env.is_done() {
                episode += 1;
                env.reset(derive_seed(derive_seed(seed, STREAM_TRAIN_NOISE), episode));
            }
            let offset = episode as usize * env.horizon();
            let opts = EpisodeOptions { max_steps: Some(target - done), step_offset: offset, ..Default::default() };
            let log = episode_run(&mut env, agent.policy(), &runner.shield, learner.as_mut(), opts)?;
            done += log.records.len();
            train_times.extend(log.records.iter().map(|r| r.step_time_s));
            if cfg.run.write_training_log {
                training.records.extend(log.records.into_iter().map(|r| StepRecord { step: r.step + offset, ..r }));
            }
        }
        let (point, log) = runner.evaluate(&mut agent, learner.as_mut(), target)?;
        evals.push(point);
        final_trajectory = log;
    }
    Ok(SeedResult {
        seed,
        evals,
        final_trajectory,
        train_runtime: runtime_stats(&train_times),
        training,
        fits: learner.map(|l| l.history).unwrap_or_default(),
        eval_runtime: runtime_stats(&runner.eval_times),
    })
}

/// Output of [`run_experiment`].
#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub models: Commissioned,
    pub seeds: Vec<SeedResult>,
}

fn check_writable(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::Output(format!("{}: {e}", dir.display())))?;
    let probe = dir.join(".write-probe");
    File::create(&probe).and_then(|_| fs::remove_file(&probe)).map_err(|e| HarnessError::Output(format!("{}: {e}", dir.display())))
}

/// Runs every seed, then writes all CSVs and the config snapshot to the
/// configured output directory.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    let dir = cfg.run.output.clone();
    check_writable(&dir)?;
    info!("commissioning nominal models ({} steps)", cfg.run.commissioning_steps);
    let models = commission_models(cfg)?;
    let eval = eval_profile(cfg)?;

    let queue: Mutex<Vec<(usize, u64)>> = Mutex::new(cfg.run.seeds.iter().copied().enumerate().rev().collect());
    let results: Mutex<Vec<(usize, Result<SeedResult, HarnessError>)>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..cfg.run.jobs.min(cfg.run.seeds.len()) {
            s.spawn(|| loop {
                let Some((i, seed)) = queue.lock().unwrap().pop() else { break };
                info!("seed {seed}: {} with {} agent", cfg.run.method, cfg.run.agent.name());
                let r = run_seed(cfg, &models, &eval, seed);
                results.lock().unwrap().push((i, r));
            });
        }
    });
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(i, _)| *i);
    let seeds = results.into_iter().map(|(_, r)| r).collect::<Result<Vec<_>, _>>()?;
    let outcome = RunOutcome { dir, models, seeds };
    write_outputs(cfg, &outcome)?;
    Ok(outcome)
}

fn csv_writer(dir: &Path, name: &str) -> Result<csv::Writer<BufWriter<File>>, HarnessError> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(dir.join(name))?)))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const EVAL_REPORT_HEADER: [&str; 11] = [
    "seed",
    "phase",
    "step",
    "objective_absolute",
    "objective_relative",
    "energy_cost",
    "comfort_loss",
    "constraint_nmae",
    "constraint_nsum",
    "corrected_steps",
    "fallback_steps",
];

fn eval_row(seed: &str, phase: &str, p: &EvalPoint, reference: Option<f64>) -> Vec<String> {
    vec![
        seed.to_string(),
        phase.to_string(),
        p.step.to_string(),
        p.objective.to_string(),
        opt(reference.and_then(|r| relative_objective(p.objective, r))),
        p.energy_cost.to_string(),
        p.comfort_loss.to_string(),
        p.tolerance.nmae.to_string(),
        p.tolerance.nsum.to_string(),
        p.corrected.to_string(),
        p.fallback.to_string(),
    ]
}

/// Field-wise mean of evaluation points.
pub fn mean_point(points: &[&EvalPoint]) -> EvalPoint {
    let n = points.len() as f64;
    let mean = |f: &dyn Fn(&EvalPoint) -> f64| points.iter().map(|p| f(p)).sum::<f64>() / n;
    let mut m = *points[0];
    m.objective = mean(&|p| p.objective);
    m.energy_cost = mean(&|p| p.energy_cost);
    m.comfort_loss = mean(&|p| p.comfort_loss);
    m.tolerance.nmae = mean(&|p| p.tolerance.nmae);
    m.tolerance.nsum = mean(&|p| p.tolerance.nsum);
    m.corrected = mean(&|p| p.corrected as f64).round() as usize;
    m.fallback = mean(&|p| p.fallback as f64).round() as usize;
    m
}

fn write_outputs(cfg: &RunConfig, out: &RunOutcome) -> Result<(), HarnessError> {
    let dir = &out.dir;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    fs::write(dir.join("nominal_models.txt"), out.models.nominal.to_text())?;

    let mut w = csv_writer(dir, "learning_curve.csv")?;
    w.write_record(["seed", "step", "objective", "energy_cost", "comfort_loss"])?;
    for s in &out.seeds {
        for p in &s.evals {
            w.write_record([s.seed.to_string(), p.step.to_string(), p.objective.to_string(), p.energy_cost.to_string(), p.comfort_loss.to_string()])?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(dir, "cost_curve.csv")?;
    w.write_record(["seed", "step", "constraint_nmae", "constraint_nsum"])?;
    for s in &out.seeds {
        for p in &s.evals {
            w.write_record([s.seed.to_string(), p.step.to_string(), p.tolerance.nmae.to_string(), p.tolerance.nsum.to_string()])?;
        }
    }
    w.flush()?;

    let reference = cfg.run.reference_objective;
    let mut w = csv_writer(dir, "eval_report.csv")?;
    w.write_record(EVAL_REPORT_HEADER)?;
    for (phase, pick) in [("initial", SeedResult::initial as fn(&SeedResult) -> &EvalPoint), ("final", SeedResult::last)] {
        for s in &out.seeds {
            w.write_record(eval_row(&s.seed.to_string(), phase, pick(s), reference))?;
        }
        let pts: Vec<&EvalPoint> = out.seeds.iter().map(pick).collect();
        w.write_record(eval_row("mean", phase, &mean_point(&pts), reference))?;
    }
    w.flush()?;

    let mut w = csv_writer(dir, "surrogate_metrics.csv")?;
    w.write_record(["seed", "fit_index", "step", "asset", "r2", "mae", "nmae", "incumbent_nmae", "accepted", "epochs"])?;
    for (i, asset) in [Asset::Boiler, Asset::HeatPump, Asset::Chp, Asset::Tess].iter().enumerate() {
        let m = &out.models.metrics[i];
        w.write_record(["nominal".into(), "0".into(), "0".into(), asset.name().into(), m.r2.to_string(), m.mae.to_string(), m.nmae.to_string(), String::new(), "true".into(), "0".into()])?;
    }
    for s in &out.seeds {
        for f in &s.fits {
            w.write_record([
                s.seed.to_string(),
                f.fit_index.to_string(),
                f.step.to_string(),
                f.asset.name().to_string(),
                f.metrics.r2.to_string(),
                f.metrics.mae.to_string(),
                f.metrics.nmae.to_string(),
                f.incumbent_nmae.to_string(),
                f.accepted.to_string(),
                f.epochs.to_string(),
            ])?;
        }
    }
    w.flush()?;

    // wall-clock numbers: excluded from exact replay
    let mut w = csv_writer(dir, "runtime.csv")?;
    w.write_record(["seed", "method", "phase", "steps", "min_s", "mean_s", "std_s", "max_s", "total_s"])?;
    for s in &out.seeds {
        for (phase, r) in [("train", &s.train_runtime), ("eval", &s.eval_runtime)] {
            w.write_record([
                s.seed.to_string(),
                cfg.run.method.name().to_string(),
                phase.to_string(),
                r.steps.to_string(),
                r.min.to_string(),
                r.mean.to_string(),
                r.std.to_string(),
                r.max.to_string(),
                r.total.to_string(),
            ])?;
        }
    }
    w.flush()?;

    for s in &out.seeds {
        let mut f = BufWriter::new(File::create(dir.join(format!("trajectory_{}.csv", s.seed)))?);
        s.final_trajectory.write_csv(&mut f)?;
        f.flush()?;
        if cfg.run.write_training_log {
            let mut f = BufWriter::new(File::create(dir.join(format!("training_{}.csv", s.seed)))?);
            s.training.write_csv(&mut f)?;
            f.flush()?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_schedule() {
        assert_eq!(eval_steps(0, 100), vec![0]);
        assert_eq!(eval_steps(250, 100), vec![0, 100, 200, 250]);
        assert_eq!(eval_steps(200, 100), vec![0, 100, 200]);
        assert_eq!(eval_steps(50, 0), vec![0, 50]);
    }
}
