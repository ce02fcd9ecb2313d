//! Nominal (a priori) asset models and bounds.
//!
//! Each thermal asset gets a time-invariant polynomial in its action (and, for
//! the thermal store, its state of charge): linear for the boiler and CHP,
//! quadratic for the heat pump, cubic for the TESS. The models deliberately
//! ignore the temperature dependence of the true plant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{scaled_from_fraction, Action};
use crate::error::{Error, Result};
use crate::plant::{Asset, Plant, PlantConfig, PlantState};
use crate::profile::{generate_profiles, ProfileKind};
use crate::textfmt::{f17, join_f17, Lines};

/// Monomial `u^action_pow * soc^soc_pow`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub action_pow: u32,
    pub soc_pow: u32,
}

const fn term(action_pow: u32, soc_pow: u32) -> Term {
    Term { action_pow, soc_pow }
}

/// Polynomial degree assigned to each asset.
pub fn degree_of(asset: Asset) -> usize {
    match asset {
        Asset::Boiler | Asset::Chp => 1,
        Asset::HeatPump => 2,
        Asset::Tess => 3,
    }
}

/// Basis for each asset. Producers carry an intercept and are evaluated only
/// when on; the TESS basis vanishes at zero action so an idle store delivers
/// nothing.
pub fn basis(asset: Asset) -> Vec<Term> {
    match asset {
        Asset::Boiler | Asset::Chp => vec![term(0, 0), term(1, 0)],
        Asset::HeatPump => vec![term(0, 0), term(1, 0), term(2, 0)],
        Asset::Tess => vec![term(1, 0), term(1, 1), term(1, 2), term(2, 0), term(2, 1), term(3, 0)],
    }
}

/// Load fractions this far below the minimum still count as on; absorbs the
/// rounding of the scaled-to-fraction map.
const MIN_FRAC_SLACK: f64 = 1e-12;

fn is_producer(asset: Asset) -> bool {
    !matches!(asset, Asset::Tess)
}

/// One observation of realized thermal output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NominalSample {
    /// Load fraction for producers (0 when off), signed fraction for the TESS.
    pub u: f64,
    pub soc: f64,
    pub q: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub r2: f64,
    pub mae: f64,
    pub nmae: f64,
}

/// MAE, range-normalized MAE and R².
pub fn metrics(predictions: &[f64], actuals: &[f64]) -> Result<ModelMetrics> {
    if predictions.len() != actuals.len() {
        return Err(Error::InvalidArgument(format!(
            "metrics: {} predictions vs {} actuals",
            predictions.len(),
            actuals.len()
        )));
    }
    if actuals.is_empty() {
        return Err(Error::InvalidArgument("metrics: empty series".into()));
    }
    let n = actuals.len() as f64;
    let (lo, hi) = crate::profile::min_max(actuals);
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::UndefinedMetric("range of actual values is zero".into()));
    }
    let mae = predictions.iter().zip(actuals).map(|(p, a)| (p - a).abs()).sum::<f64>() / n;
    let mean = actuals.iter().sum::<f64>() / n;
    let ss_res: f64 = predictions.iter().zip(actuals).map(|(p, a)| (a - p) * (a - p)).sum();
    let ss_tot: f64 = actuals.iter().map(|a| (a - mean) * (a - mean)).sum();
    Ok(ModelMetrics { r2: 1.0 - ss_res / ss_tot, mae, nmae: mae / range })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NominalModel {
    pub asset: Asset,
    pub degree: usize,
    pub terms: Vec<Term>,
    pub coeffs: Vec<f64>,
    /// Minimum load fraction (producers); below it the asset is off.
    pub min_frac: f64,
    /// Output clamp: `[0, q_max]` for producers, `[-q_max, q_max]` for the TESS.
    pub q_max: f64,
}

impl NominalModel {
    /// Model with explicit coefficients over the asset's standard basis.
    pub fn with_coeffs(asset: Asset, coeffs: Vec<f64>, min_frac: f64, q_max: f64) -> Result<Self> {
        let terms = basis(asset);
        if coeffs.len() != terms.len() {
            return Err(Error::InvalidArgument(format!(
                "{asset}: expected {} coefficients, got {}",
                terms.len(),
                coeffs.len()
            )));
        }
        Ok(NominalModel { asset, degree: degree_of(asset), terms, coeffs, min_frac, q_max })
    }

    /// Ideal model `Q = u * q_max` for a producer, exactly on its rating.
    pub fn ideal_producer(asset: Asset, min_frac: f64, q_max: f64) -> Self {
        let mut coeffs = vec![0.0; basis(asset).len()];
        coeffs[1] = q_max;
        NominalModel::with_coeffs(asset, coeffs, min_frac, q_max).expect("producer basis")
    }

    fn raw(&self, u: f64, soc: f64) -> f64 {
        self.terms
            .iter()
            .zip(&self.coeffs)
            .map(|(t, c)| c * u.powi(t.action_pow as i32) * soc.powi(t.soc_pow as i32))
            .sum()
    }

    fn raw_du(&self, u: f64, soc: f64) -> f64 {
        self.terms
            .iter()
            .zip(&self.coeffs)
            .filter(|(t, _)| t.action_pow > 0)
            .map(|(t, c)| c * t.action_pow as f64 * u.powi(t.action_pow as i32 - 1) * soc.powi(t.soc_pow as i32))
            .sum()
    }

    fn clamp_bounds(&self) -> (f64, f64) {
        if is_producer(self.asset) {
            (0.0, self.q_max)
        } else {
            (-self.q_max, self.q_max)
        }
    }

    fn check_inputs(&self, u: f64, soc: f64) -> Result<()> {
        let lo = if is_producer(self.asset) { 0.0 } else { -1.0 };
        if !(lo..=1.0).contains(&u) {
            return Err(Error::OutOfRange { what: "action", value: u, lo, hi: 1.0 });
        }
        if !(0.0..=1.0).contains(&soc) {
            return Err(Error::OutOfRange { what: "soc", value: soc, lo: 0.0, hi: 1.0 });
        }
        Ok(())
    }

    /// Predicted thermal output at load fraction (or signed TESS fraction) `u`.
    pub fn predict(&self, u: f64, soc: f64) -> Result<f64> {
        self.check_inputs(u, soc)?;
        Ok(self.value_and_slope(u, soc).0)
    }

    /// Output and its derivative with respect to `u`; zero when a producer is
    /// off. The derivative is zero wherever the clamp is active.
    pub fn value_and_slope(&self, u: f64, soc: f64) -> (f64, f64) {
        if is_producer(self.asset) && u < self.min_frac - MIN_FRAC_SLACK {
            return (0.0, 0.0);
        }
        let v = self.raw(u, soc);
        let (lo, hi) = self.clamp_bounds();
        if v < lo {
            (lo, 0.0)
        } else if v > hi {
            (hi, 0.0)
        } else {
            (v, self.raw_du(u, soc))
        }
    }

    /// Load fraction at which a producer's unclamped output equals `q`, for
    /// monotone linear models.
    pub fn invert_linear(&self, q: f64) -> Option<f64> {
        if self.terms.len() != 2 || self.coeffs[1] == 0.0 {
            return None;
        }
        Some((q - self.coeffs[0]) / self.coeffs[1])
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("nominal-model v1\n");
        s.push_str(&format!("asset {}\n", self.asset));
        s.push_str(&format!("degree {}\n", self.degree));
        s.push_str(&format!("min_frac {}\n", f17(self.min_frac)));
        s.push_str(&format!("q_max {}\n", f17(self.q_max)));
        let terms: Vec<String> = self.terms.iter().map(|t| format!("{}:{}", t.action_pow, t.soc_pow)).collect();
        s.push_str(&format!("terms {}\n", terms.join(" ")));
        s.push_str(&format!("coeffs {}\n", join_f17(&self.coeffs)));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let (_, header) = lines.next_line()?;
        if header != "nominal-model v1" {
            return Err(Error::Parse(format!("unsupported model header {header:?}")));
        }
        let asset_name = lines.keyed("asset")?;
        let asset = Asset::from_name(asset_name).ok_or_else(|| Error::Parse(format!("unknown asset {asset_name:?}")))?;
        let degree: usize = lines.keyed_parse("degree")?;
        let min_frac: f64 = lines.keyed_parse("min_frac")?;
        let q_max: f64 = lines.keyed_parse("q_max")?;
        let terms = lines
            .keyed("terms")?
            .split_whitespace()
            .map(|t| {
                let (a, s) = t.split_once(':').ok_or_else(|| Error::Parse(format!("bad term {t:?}")))?;
                let p = |x: &str| x.parse::<u32>().map_err(|e| Error::Parse(e.to_string()));
                Ok(term(p(a)?, p(s)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let coeffs = lines.floats("coeffs")?;
        if terms != basis(asset) || degree != degree_of(asset) || coeffs.len() != terms.len() {
            return Err(Error::Parse(format!("{asset}: basis or degree mismatch")));
        }
        Ok(NominalModel { asset, degree, terms, coeffs, min_frac, q_max })
    }
}

/// Least squares by Householder QR; errors when the design is rank deficient.
pub fn least_squares(rows: &[Vec<f64>], targets: &[f64]) -> Result<Vec<f64>> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if m < n || n == 0 {
        return Err(Error::DegenerateData(format!("{m} samples for {n} coefficients")));
    }
    let mut a: Vec<Vec<f64>> = rows.to_vec();
    let mut b = targets.to_vec();
    // column scaling keeps the rank test meaningful across W-scale data
    let scale: Vec<f64> = (0..n)
        .map(|j| a.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt())
        .collect();
    if scale.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::DegenerateData("design matrix has an all-zero column".into()));
    }
    for r in &mut a {
        for j in 0..n {
            r[j] /= scale[j];
        }
    }
    let mut diag = vec![0.0; n];
    for k in 0..n {
        let norm = (k..m).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        if norm < 1e-10 {
            return Err(Error::DegenerateData("rank-deficient design matrix".into()));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| a[i][k]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for j in k..n {
                let dot: f64 = (k..m).map(|i| v[i - k] * a[i][j]).sum();
                let f = 2.0 * dot / vnorm2;
                for i in k..m {
                    a[i][j] -= f * v[i - k];
                }
            }
            let dot: f64 = (k..m).map(|i| v[i - k] * b[i]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..m {
                b[i] -= f * v[i - k];
            }
        }
        diag[k] = a[k][k];
        if diag[k].abs() < 1e-10 {
            return Err(Error::DegenerateData("rank-deficient design matrix".into()));
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = ((k + 1)..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    Ok(x.iter().zip(&scale).map(|(xi, s)| xi / s).collect())
}

fn design_row(terms: &[Term], u: f64, soc: f64) -> Vec<f64> {
    terms
        .iter()
        .map(|t| u.powi(t.action_pow as i32) * soc.powi(t.soc_pow as i32))
        .collect()
}

/// Fits the asset's polynomial by least squares on every fifth-excluded
/// sample and reports metrics on the held-out fifth (all samples, including
/// off ones). Producers are fitted on their on-samples only.
pub fn fit_nominal(samples: &[NominalSample], asset: Asset, min_frac: f64, q_max: f64) -> Result<(NominalModel, ModelMetrics)> {
    let terms = basis(asset);
    let degree = degree_of(asset);
    let (train, test): (Vec<_>, Vec<_>) = samples.iter().enumerate().partition(|(i, _)| i % 5 != 4);
    let fit_rows: Vec<&NominalSample> = train
        .iter()
        .map(|(_, s)| *s)
        .filter(|s| !is_producer(asset) || s.u >= min_frac)
        .collect();
    if fit_rows.len() < 10 * (degree + 1) {
        return Err(Error::DegenerateData(format!(
            "{asset}: {} usable samples, need at least {}",
            fit_rows.len(),
            10 * (degree + 1)
        )));
    }
    let rows: Vec<Vec<f64>> = fit_rows.iter().map(|s| design_row(&terms, s.u, s.soc)).collect();
    let y: Vec<f64> = fit_rows.iter().map(|s| s.q).collect();
    let coeffs = least_squares(&rows, &y)?;
    let model = NominalModel { asset, degree, terms, coeffs, min_frac, q_max };
    let preds: Vec<f64> = test.iter().map(|(_, s)| model.value_and_slope(s.u, s.soc).0).collect();
    let actual: Vec<f64> = test.iter().map(|(_, s)| s.q).collect();
    let m = metrics(&preds, &actual)?;
    Ok((model, m))
}

/// The four nominal asset models used by the safety layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NominalSet {
    pub boiler: NominalModel,
    pub hp: NominalModel,
    pub chp: NominalModel,
    pub tess: NominalModel,
}

impl NominalSet {
    pub fn get(&self, asset: Asset) -> &NominalModel {
        match asset {
            Asset::Boiler => &self.boiler,
            Asset::HeatPump => &self.hp,
            Asset::Chp => &self.chp,
            Asset::Tess => &self.tess,
        }
    }

    /// Rating-exact producers and a TESS that delivers `a * q_max`.
    pub fn ideal(cfg: &PlantConfig) -> Self {
        let tess_q = cfg.tess.p_nom_th;
        NominalSet {
            boiler: NominalModel::ideal_producer(Asset::Boiler, cfg.boiler.p_min_frac, cfg.boiler.p_nom_th),
            hp: NominalModel::ideal_producer(Asset::HeatPump, cfg.heat_pump.p_min_frac, cfg.heat_pump.p_nom_th),
            chp: NominalModel::ideal_producer(Asset::Chp, cfg.chp.p_min_frac, cfg.chp.p_nom_th),
            tess: NominalModel::with_coeffs(Asset::Tess, vec![tess_q, 0.0, 0.0, 0.0, 0.0, 0.0], 0.0, tess_q)
                .expect("tess basis"),
        }
    }

    pub fn to_text(&self) -> String {
        [&self.boiler, &self.hp, &self.chp, &self.tess]
            .iter()
            .map(|m| m.to_text())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Per-asset samples collected during commissioning.
#[derive(Clone, Debug, Default)]
pub struct CommissioningData {
    pub boiler: Vec<NominalSample>,
    pub hp: Vec<NominalSample>,
    pub chp: Vec<NominalSample>,
    pub tess: Vec<NominalSample>,
}

impl CommissioningData {
    pub fn get(&self, asset: Asset) -> &[NominalSample] {
        match asset {
            Asset::Boiler => &self.boiler,
            Asset::HeatPump => &self.hp,
            Asset::Chp => &self.chp,
            Asset::Tess => &self.tess,
        }
    }
}

/// Number of steps each random commissioning set-point is held.
pub const COMMISSIONING_HOLD: usize = 4;

/// Default commissioning length: one simulated year, so every season is seen.
pub const COMMISSIONING_STEPS: usize = crate::plant::STEPS_PER_YEAR;

/// Runs a commissioning sweep on the true plant: every asset is driven through
/// its range with random set-points held for a few steps, and realized outputs
/// are recorded.
pub fn commissioning_sweep(cfg: &PlantConfig, steps: usize, seed: u64) -> Result<CommissioningData> {
    let mut plant_cfg = cfg.clone();
    plant_cfg.noise.seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1);
    let mut plant = Plant::new(plant_cfg)?;
    let profile = generate_profiles(seed, steps.max(1), ProfileKind::Train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state: PlantState = plant.initial_state(&profile);
    let mut data = CommissioningData::default();
    let mut action = Action::ZERO;
    for k in 0..steps {
        if k % COMMISSIONING_HOLD == 0 {
            action = Action::new(
                scaled_from_fraction(rng.random_range(0.0..=1.0)),
                scaled_from_fraction(rng.random_range(0.0..=1.0)),
                scaled_from_fraction(rng.random_range(0.0..=1.0)),
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
            );
        }
        let u = plant.cfg.decode(&action);
        let (next, out) = plant.step(&state, &action, &profile)?;
        data.boiler.push(NominalSample { u: u.boiler, soc: state.soc_tess, q: out.q_boil });
        data.hp.push(NominalSample { u: u.hp, soc: state.soc_tess, q: out.q_hp });
        data.chp.push(NominalSample { u: u.chp, soc: state.soc_tess, q: out.q_chp });
        data.tess.push(NominalSample { u: u.tess, soc: state.soc_tess, q: out.q_tess });
        state = next;
    }
    Ok(data)
}

/// Fits all four nominal models from commissioning data.
pub fn fit_all(cfg: &PlantConfig, data: &CommissioningData) -> Result<(NominalSet, [ModelMetrics; 4])> {
    let (boiler, mb) = fit_nominal(&data.boiler, Asset::Boiler, cfg.boiler.p_min_frac, cfg.boiler.p_nom_th)?;
    let (hp, mh) = fit_nominal(&data.hp, Asset::HeatPump, cfg.heat_pump.p_min_frac, cfg.heat_pump.p_nom_th)?;
    let (chp, mc) = fit_nominal(&data.chp, Asset::Chp, cfg.chp.p_min_frac, cfg.chp.p_nom_th)?;
    let (tess, mt) = fit_nominal(&data.tess, Asset::Tess, 0.0, cfg.tess.p_nom_th)?;
    Ok((NominalSet { boiler, hp, chp, tess }, [mb, mh, mc, mt]))
}

/// Commissioning sweep followed by fitting.
pub fn commission(cfg: &PlantConfig, steps: usize, seed: u64) -> Result<(NominalSet, [ModelMetrics; 4])> {
    let data = commissioning_sweep(cfg, steps, seed)?;
    fit_all(cfg, &data)
}

/// Thermal bounds per asset for the mixed-integer program.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssetBounds {
    pub q_min: f64,
    pub q_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Whether the asset carries an on/off binary.
    pub binary: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSet {
    pub boiler: AssetBounds,
    pub hp: AssetBounds,
    pub chp: AssetBounds,
    pub tess: AssetBounds,
    pub bess: AssetBounds,
}

impl BoundSet {
    pub fn from_config(cfg: &PlantConfig) -> Self {
        let semi = |s: &crate::plant::AssetSpec, p_max: f64| AssetBounds {
            q_min: s.q_min(),
            q_max: s.p_nom_th,
            p_min: s.p_min_frac * p_max,
            p_max,
            binary: true,
        };
        BoundSet {
            boiler: semi(&cfg.boiler, 0.0),
            hp: semi(&cfg.heat_pump, cfg.heat_pump.p_nom_th / cfg.cop_max()),
            chp: semi(&cfg.chp, cfg.chp.p_nom_el),
            tess: AssetBounds { q_min: -cfg.tess.p_nom_th, q_max: cfg.tess.p_nom_th, p_min: 0.0, p_max: 0.0, binary: false },
            bess: AssetBounds { q_min: 0.0, q_max: 0.0, p_min: -cfg.bess.p_nom_el, p_max: cfg.bess.p_nom_el, binary: false },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("boiler", &self.boiler), ("hp", &self.hp), ("chp", &self.chp), ("tess", &self.tess), ("bess", &self.bess)] {
            if b.q_min > b.q_max || b.p_min > b.p_max {
                return Err(Error::InvalidArgument(format!("{name}: lower bound above upper bound")));
            }
            if b.binary && !(b.q_min > 0.0) {
                return Err(Error::InvalidArgument(format!("{name}: semi-continuous asset needs q_min > 0")));
            }
        }
        Ok(())
    }
}
