//! Learned residual models for the heat pump and the thermal store.
//!
//! Each surrogate predicts the gap between the realized thermal output and the
//! nominal polynomial, from the action and a few lagged measurements:
//!
//! - heat pump: `(u_hp, q_hp_prev)`
//! - TESS: `(u_tess, soc_tess, q_tess_prev, q_demand_prev)`
//!
//! Models are refitted on a fixed schedule from everything observed so far and
//! only replace the incumbent when they validate better.

use log::{debug, warn};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{Adam, Mlp, OutputActivation, PlateauSchedule};
use crate::nominal::{metrics, ModelMetrics, NominalModel, NominalSet};
use crate::plant::{Asset, PlantState, StepOutcome};
use crate::textfmt::{f17, join_f17, Lines};
use crate::PhysicalAction;

pub const FEATURE_SPEC_VERSION: u32 = 1;
pub const HP_FEATURES: [&str; 2] = ["a_hp", "q_hp_prev"];
pub const TESS_FEATURES: [&str; 4] = ["a_tess", "soc_tess", "q_tess_prev", "q_demand_prev"];

pub fn feature_names(asset: Asset) -> &'static [&'static str] {
    match asset {
        Asset::HeatPump => &HP_FEATURES,
        Asset::Tess => &TESS_FEATURES,
        _ => &[],
    }
}

/// Surrogate inputs for the given asset. The action feature is the load
/// fraction (heat pump) or signed power fraction (TESS).
pub fn features(asset: Asset, u: f64, state: &PlantState) -> Vec<f64> {
    match asset {
        Asset::HeatPump => vec![u, state.q_hp_prev],
        Asset::Tess => vec![u, state.soc_tess, state.q_tess_prev, state.q_demand_prev],
        _ => Vec::new(),
    }
}

fn nominal_of(nominal: &NominalModel, f: &[f64]) -> f64 {
    let soc = if nominal.asset == Asset::Tess { f[1] } else { 0.0 };
    nominal.value_and_slope(f[0], soc).0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub h_train_initial: usize,
    pub h_train_later: usize,
    /// Step from which the later interval applies.
    pub switch_step: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule { h_train_initial: 672, h_train_later: 2688, switch_step: 2688 }
    }
}

impl TrainSchedule {
    pub fn interval(&self, k: usize) -> usize {
        if k < self.switch_step {
            self.h_train_initial
        } else {
            self.h_train_later
        }
    }

    /// Refit trigger at the end of every interval (`k mod h = h − 1`).
    pub fn is_fit_step(&self, k: usize) -> bool {
        let h = self.interval(k);
        k % h == h - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.h_train_initial == 0 || self.h_train_later == 0 {
            return Err(Error::InvalidArgument("training intervals must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub hp_hidden: Vec<usize>,
    pub tess_hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub schedule: TrainSchedule,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            hp_hidden: vec![15, 10, 10, 10],
            tess_hidden: vec![25, 20, 20, 10],
            learning_rate: 1e-3,
            batch_size: 200,
            max_epochs: 500,
            patience: 10,
            schedule: TrainSchedule::default(),
            seed: 0,
        }
    }
}

impl SurrogateConfig {
    pub fn hidden(&self, asset: Asset) -> &[usize] {
        match asset {
            Asset::Tess => &self.tess_hidden,
            _ => &self.hp_hidden,
        }
    }
}

/// A residual network with input and target standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualModel {
    pub asset: Asset,
    pub net: Mlp,
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl ResidualModel {
    fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(self.x_mean.iter().zip(&self.x_std)).map(|(v, (m, s))| (v - m) / s).collect()
    }

    /// Residual prediction in W.
    pub fn predict(&self, f: &[f64]) -> f64 {
        self.y_mean + self.y_std * self.net.forward_one(&self.standardize(f))[0]
    }

    /// Exact local affine map of the residual in the action feature:
    /// `predict = slope * f[0] + intercept` on the activation region of `f`.
    pub fn affine_in_action(&self, f: &[f64]) -> (f64, f64) {
        let z = self.standardize(f);
        let (s, c) = self.net.local_affine(&z, 0).expect("single identity output");
        let slope = self.y_std * s / self.x_std[0];
        let value = self.y_mean + self.y_std * (s * z[0] + c);
        (slope, value - slope * f[0])
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("surrogate v{FEATURE_SPEC_VERSION}\nasset {}\n", self.asset);
        s.push_str(&format!("features {}\n", feature_names(self.asset).join(" ")));
        s.push_str(&format!("x_mean {}\nx_std {}\n", join_f17(&self.x_mean), join_f17(&self.x_std)));
        s.push_str(&format!("y_mean {}\ny_std {}\n", f17(self.y_mean), f17(self.y_std)));
        s.push_str(&self.net.to_text());
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let (_, header) = lines.next_line()?;
        if header != format!("surrogate v{FEATURE_SPEC_VERSION}") {
            return Err(Error::Parse(format!("unsupported surrogate header {header:?}")));
        }
        let name = lines.keyed("asset")?;
        let asset = Asset::from_name(name).ok_or_else(|| Error::Parse(format!("unknown asset {name:?}")))?;
        let names: Vec<&str> = lines.keyed("features")?.split_whitespace().collect();
        if names != feature_names(asset) {
            return Err(Error::Parse(format!("feature list {names:?} does not match {asset}")));
        }
        let x_mean = lines.floats("x_mean")?;
        let x_std = lines.floats("x_std")?;
        let y_mean = lines.keyed_parse("y_mean")?;
        let y_std = lines.keyed_parse("y_std")?;
        let net = Mlp::read_text(&mut lines)?;
        if x_mean.len() != names.len() || x_std.len() != names.len() || net.input_dim() != names.len() {
            return Err(Error::Parse("standardization does not match the feature list".into()));
        }
        Ok(ResidualModel { asset, net, x_mean, x_std, y_mean, y_std })
    }
}

/// The currently accepted surrogates. `version` increments on every swap.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurrogateSet {
    pub hp: Option<ResidualModel>,
    pub tess: Option<ResidualModel>,
    pub version: u64,
}

impl SurrogateSet {
    pub fn get(&self, asset: Asset) -> Option<&ResidualModel> {
        match asset {
            Asset::HeatPump => self.hp.as_ref(),
            Asset::Tess => self.tess.as_ref(),
            _ => None,
        }
    }

    fn slot(&mut self, asset: Asset) -> &mut Option<ResidualModel> {
        match asset {
            Asset::Tess => &mut self.tess,
            _ => &mut self.hp,
        }
    }
}

/// One observed realization.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateSample {
    pub features: Vec<f64>,
    pub realized: f64,
}

/// Outcome of one refit of one asset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FitRecord {
    pub fit_index: usize,
    pub step: usize,
    pub asset: Asset,
    /// Validation metrics of the model in service after this fit.
    pub metrics: ModelMetrics,
    /// Validation NMAE of the incumbent (nominal-only before the first model).
    pub incumbent_nmae: f64,
    pub accepted: bool,
    pub epochs: usize,
}

/// Combined (nominal + residual) metrics of `model` on `samples`; nominal-only
/// when `model` is `None`.
pub fn combined_metrics(nominal: &NominalModel, model: Option<&ResidualModel>, samples: &[SurrogateSample]) -> Result<ModelMetrics> {
    let preds: Vec<f64> = samples
        .iter()
        .map(|s| nominal_of(nominal, &s.features) + model.map_or(0.0, |m| m.predict(&s.features)))
        .collect();
    let actual: Vec<f64> = samples.iter().map(|s| s.realized).collect();
    metrics(&preds, &actual)
}

/// Trains a residual model on the first 80% of `samples` (chronological) and
/// reports validation metrics of the combined model on the last 20%. A
/// `warm` model seeds the weights and standardization.
pub fn train_residual(
    asset: Asset,
    nominal: &NominalModel,
    samples: &[SurrogateSample],
    warm: Option<&ResidualModel>,
    cfg: &SurrogateConfig,
    seed: u64,
) -> Result<(ResidualModel, ModelMetrics, usize)> {
    let n = samples.len();
    let split = n * 4 / 5;
    if split < 2 || n - split < 2 {
        return Err(Error::DegenerateData(format!("{asset}: {n} samples are too few to fit")));
    }
    let (train, val) = samples.split_at(split);
    let dim = feature_names(asset).len();
    let targets: Vec<f64> = train.iter().map(|s| s.realized - nominal_of(nominal, &s.features)).collect();

    let (action_mean, action_std) = mean_std(train.iter().map(|s| s.features[0]));
    if !(action_std > 1e-9 * (1.0 + action_mean.abs())) {
        return Err(Error::DegenerateData(format!("{asset}: constant action in training data")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = match warm {
        Some(m) => m.clone(),
        None => {
            let (x_mean, x_std): (Vec<f64>, Vec<f64>) = (0..dim)
                .map(|j| {
                    let (m, s) = mean_std(train.iter().map(|r| r.features[j]));
                    (m, if s > 0.0 { s } else { 1.0 })
                })
                .unzip();
            let (y_mean, y_std) = mean_std(targets.iter().copied());
            let mut widths = vec![dim];
            widths.extend_from_slice(cfg.hidden(asset));
            widths.push(1);
            let mut net = Mlp::new(&widths, OutputActivation::Identity, &mut rng)?;
            net.zero_output_layer();
            ResidualModel { asset, net, x_mean, x_std, y_mean, y_std: if y_std > 0.0 { y_std } else { 1.0 } }
        }
    };

    let xs: Vec<Vec<f64>> = train.iter().map(|s| model.standardize(&s.features)).collect();
    let ys: Vec<f64> = targets.iter().map(|t| (t - model.y_mean) / model.y_std).collect();
    let batch = cfg.batch_size.clamp(1, xs.len());
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut adam = Adam::new(&model.net, cfg.learning_rate);
    let mut plateau = PlateauSchedule::default();

    let mut best = (combined_metrics(nominal, Some(&model), val)?.mae, model.net.clone());
    let mut since_best = 0;
    let mut epochs = 0;
    let mut xb = Array2::zeros((batch, dim));
    let mut yb = Array2::zeros((batch, 1));
    for _ in 0..cfg.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch) {
            if chunk.len() != xb.nrows() {
                xb = Array2::zeros((chunk.len(), dim));
                yb = Array2::zeros((chunk.len(), 1));
            }
            for (r, &i) in chunk.iter().enumerate() {
                for j in 0..dim {
                    xb[[r, j]] = xs[i][j];
                }
                yb[[r, 0]] = ys[i];
            }
            let (loss, g) = model.net.mse_gradients(xb.view(), yb.view());
            adam.step(&mut model.net, &g);
            epoch_loss += loss;
            batches += 1;
        }
        plateau.observe(epoch_loss / batches as f64, &mut adam);
        let val_mae = combined_metrics(nominal, Some(&model), val)?.mae;
        if val_mae < best.0 {
            best = (val_mae, model.net.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    model.net = best.1;
    let m = combined_metrics(nominal, Some(&model), val)?;
    Ok((model, m, epochs))
}

/// Smallest buffer a refit is attempted on.
pub const MIN_FIT_SAMPLES: usize = 50;

/// Buffers realized outputs and refits the surrogates on schedule.
#[derive(Clone, Debug)]
pub struct SurrogateLearner {
    pub cfg: SurrogateConfig,
    pub models: SurrogateSet,
    pub history: Vec<FitRecord>,
    hp_buffer: Vec<SurrogateSample>,
    tess_buffer: Vec<SurrogateSample>,
    fits: usize,
}

impl SurrogateLearner {
    pub fn new(cfg: SurrogateConfig) -> Result<Self> {
        cfg.schedule.validate()?;
        Ok(SurrogateLearner {
            cfg,
            models: SurrogateSet::default(),
            history: Vec::new(),
            hp_buffer: Vec::new(),
            tess_buffer: Vec::new(),
            fits: 0,
        })
    }

    pub fn buffer(&self, asset: Asset) -> &[SurrogateSample] {
        match asset {
            Asset::Tess => &self.tess_buffer,
            _ => &self.hp_buffer,
        }
    }

    /// Records the realized outputs of step `k` (taken from `state` with
    /// decoded action `u`). Heat-pump samples are kept only while it runs.
    pub fn record(&mut self, state: &PlantState, u: &PhysicalAction, out: &StepOutcome) {
        if u.hp > 0.0 {
            self.hp_buffer.push(SurrogateSample { features: features(Asset::HeatPump, u.hp, state), realized: out.q_hp });
        }
        self.tess_buffer.push(SurrogateSample { features: features(Asset::Tess, u.tess, state), realized: out.q_tess });
    }

    /// Records step `k` and refits when the schedule fires. Returns whether
    /// any model was replaced.
    pub fn observe(&mut self, k: usize, state: &PlantState, u: &PhysicalAction, out: &StepOutcome, nominal: &NominalSet) -> bool {
        self.record(state, u, out);
        if self.cfg.schedule.is_fit_step(k) {
            self.fit(k, nominal)
        } else {
            false
        }
    }

    /// Refits both surrogates now.
    pub fn fit(&mut self, k: usize, nominal: &NominalSet) -> bool {
        let fit_index = self.fits;
        self.fits += 1;
        let mut swapped = false;
        for asset in [Asset::HeatPump, Asset::Tess] {
            let samples = self.buffer(asset);
            if samples.len() < MIN_FIT_SAMPLES {
                warn!("{asset} surrogate fit at step {k} skipped: {} samples", samples.len());
                continue;
            }
            let seed = self.cfg.seed ^ ((fit_index as u64) << 8) ^ asset_salt(asset);
            let nom = nominal.get(asset);
            let incumbent = self.models.get(asset);
            let result = train_residual(asset, nom, samples, incumbent, &self.cfg, seed);
            let (candidate, cand_metrics, epochs) = match result {
                Ok(r) => r,
                Err(e) => {
                    warn!("{asset} surrogate fit at step {k} skipped: {e}");
                    continue;
                }
            };
            let val = &samples[samples.len() * 4 / 5..];
            let incumbent_metrics = match combined_metrics(nom, incumbent, val) {
                Ok(m) => m,
                Err(e) => {
                    warn!("{asset} surrogate validation undefined at step {k}: {e}");
                    continue;
                }
            };
            let accepted = cand_metrics.nmae < incumbent_metrics.nmae;
            debug!(
                "{asset} fit {fit_index} at step {k}: candidate {:.4}% vs incumbent {:.4}% ({epochs} epochs)",
                cand_metrics.nmae * 100.0,
                incumbent_metrics.nmae * 100.0
            );
            if accepted {
                *self.models.slot(asset) = Some(candidate);
                swapped = true;
            }
            self.history.push(FitRecord {
                fit_index,
                step: k,
                asset,
                metrics: if accepted { cand_metrics } else { incumbent_metrics },
                incumbent_nmae: incumbent_metrics.nmae,
                accepted,
                epochs,
            });
        }
        if swapped {
            self.models.version += 1;
        }
        swapped
    }
}

fn asset_salt(asset: Asset) -> u64 {
    match asset {
        Asset::HeatPump => 0x4850,
        _ => 0x5445_5353,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::PlantConfig;

    #[test]
    fn schedule_triggers() {
        let s = TrainSchedule::default();
        let fits: Vec<usize> = (0..8064).filter(|&k| s.is_fit_step(k)).collect();
        assert_eq!(fits, vec![671, 1343, 2015, 2687, 5375, 8063]);
    }

    #[test]
    fn fresh_model_predicts_target_mean() {
        let nominal = NominalSet::ideal(&PlantConfig::default()).hp;
        let samples: Vec<SurrogateSample> = (0..100)
            .map(|i| {
                let u = 0.25 + 0.0075 * i as f64;
                SurrogateSample { features: vec![u, 5e5], realized: u * 1e6 - 1e4 }
            })
            .collect();
        let cfg = SurrogateConfig { max_epochs: 0, ..Default::default() };
        let (m, _, _) = train_residual(Asset::HeatPump, &nominal, &samples, None, &cfg, 1).unwrap();
        assert!((m.predict(&[0.5, 5e5]) - -1e4).abs() < 1e-6);
    }

    #[test]
    fn constant_actions_are_rejected() {
        let nominal = NominalSet::ideal(&PlantConfig::default()).hp;
        let samples: Vec<SurrogateSample> =
            (0..100).map(|i| SurrogateSample { features: vec![0.5, i as f64], realized: 4e5 }).collect();
        let r = train_residual(Asset::HeatPump, &nominal, &samples, None, &SurrogateConfig::default(), 1);
        assert!(matches!(r, Err(Error::DegenerateData(_))));
    }
}
