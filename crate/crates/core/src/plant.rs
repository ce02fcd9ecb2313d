//! Ground-truth discrete-time multi-energy plant.
//!
//! The plant holds the "true" asset behaviour the safety layer only knows
//! approximately: a boiler whose efficiency drifts with return temperature, a
//! heat pump with a Carnot-fraction COP, a CHP unit with a part-load curve and
//! ambient derating, a stratified thermal store whose deliverable power depends
//! on its average temperature, and a battery. Temperatures follow first-order
//! lags toward load-dependent set-points, and every thermal output carries a
//! truncated multiplicative Gaussian disturbance.
//!
//! The electrical grid is the slack: it closes the electrical balance exactly.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::action::{decode_producer, Action, PhysicalAction};
use crate::error::{Error, Result};
use crate::profile::ExogenousProfile;

pub const STEP_HOURS: f64 = 0.25;
pub const STEPS_PER_HOUR: usize = 4;
pub const STEPS_PER_DAY: usize = 96;
pub const STEPS_PER_WEEK: usize = 672;
pub const STEPS_PER_YEAR: usize = 35_040;

const KELVIN: f64 = 273.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Asset {
    Boiler,
    HeatPump,
    Chp,
    Tess,
}

impl Asset {
    pub const ALL: [Asset; 4] = [Asset::Boiler, Asset::HeatPump, Asset::Chp, Asset::Tess];

    pub fn name(self) -> &'static str {
        match self {
            Asset::Boiler => "boiler",
            Asset::HeatPump => "hp",
            Asset::Chp => "chp",
            Asset::Tess => "tess",
        }
    }

    pub fn from_name(s: &str) -> Option<Asset> {
        Asset::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl std::fmt::Display for Asset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Nameplate data of one asset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssetSpec {
    /// Thermal rating, W.
    pub p_nom_th: f64,
    /// Electrical rating, W.
    pub p_nom_el: f64,
    /// Minimum load as a fraction of the rating.
    pub p_min_frac: f64,
    /// Storage capacity, Wh (0 for non-storage assets).
    pub e_nom: f64,
}

impl AssetSpec {
    pub fn validate(&self, what: &str) -> Result<()> {
        if self.p_nom_th < 0.0 || self.p_nom_el < 0.0 || self.e_nom < 0.0 {
            return Err(Error::InvalidArgument(format!("{what}: ratings must be non-negative")));
        }
        if !(0.0..=1.0).contains(&self.p_min_frac) {
            return Err(Error::InvalidArgument(format!("{what}: p_min_frac must lie in [0, 1]")));
        }
        Ok(())
    }

    pub fn q_min(&self) -> f64 {
        self.p_min_frac * self.p_nom_th
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Standard deviation of the multiplicative output noise.
    pub sigma_mult: f64,
    /// Truncation bound in standard deviations.
    pub clip: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { sigma_mult: 0.015, clip: 3.0, seed: 0 }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_mult < 0.0 || !(self.clip > 0.0) {
            return Err(Error::InvalidArgument("noise: sigma_mult >= 0 and clip > 0 required".into()));
        }
        Ok(())
    }
}

/// Plant parameters. Ratings follow the case-study dimensions; the remaining
/// coefficients define the (undisclosed to the safety layer) true behaviour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    pub boiler: AssetSpec,
    pub heat_pump: AssetSpec,
    pub chp: AssetSpec,
    pub tess: AssetSpec,
    pub bess: AssetSpec,
    pub wind_nom: f64,
    pub solar_nom: f64,

    /// EUR per MWh of natural gas.
    pub gas_price: f64,
    pub boiler_fuel_eff: f64,
    /// (heat + power) / gas of the CHP.
    pub chp_fuel_eff: f64,

    /// Boiler relative efficiency loss per K of return temperature above the reference.
    pub boiler_eta_slope: f64,
    pub return_temp_ref: f64,
    /// Rise of the network return temperature from zero to full demand, K.
    pub return_temp_span: f64,
    pub demand_ref_max: f64,

    pub hp_carnot_fraction: f64,
    pub hp_evap_design: f64,
    pub hp_cond_design: f64,
    /// Evaporator temperature drop at full load, K.
    pub hp_evap_drop: f64,
    /// Condenser temperature rise at full load, K.
    pub hp_cond_rise: f64,
    /// Evaporator drop per K of ambient below `hp_env_ref`.
    pub hp_env_coupling: f64,
    pub hp_env_ref: f64,

    pub chp_part_load_curvature: f64,
    /// Relative thermal efficiency loss per K of ambient above `chp_env_ref`.
    pub chp_env_derate: f64,
    pub chp_env_ref: f64,
    /// Electrical-to-thermal output ratio.
    pub chp_power_to_heat: f64,

    pub tess_temp_low: f64,
    pub tess_temp_high: f64,
    /// Shift of the tank temperature target per K of network return temperature.
    pub tess_return_coupling: f64,
    pub tess_eff_charge: f64,
    pub tess_eff_discharge: f64,
    /// Fraction of stored energy lost per step.
    pub tess_standby_loss: f64,
    pub bess_eff_charge: f64,
    pub bess_eff_discharge: f64,

    /// First-order lag time constants in steps.
    pub tau_boiler: f64,
    pub tau_hp: f64,
    pub tau_tess: f64,

    pub initial_soc_tess: f64,
    pub initial_soc_bess: f64,

    pub noise: NoiseConfig,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            boiler: AssetSpec { p_nom_th: 2.0e6, p_nom_el: 0.0, p_min_frac: 0.10, e_nom: 0.0 },
            heat_pump: AssetSpec { p_nom_th: 1.0e6, p_nom_el: 0.0, p_min_frac: 0.25, e_nom: 0.0 },
            chp: AssetSpec { p_nom_th: 1.0e6, p_nom_el: 0.8e6, p_min_frac: 0.50, e_nom: 0.0 },
            tess: AssetSpec { p_nom_th: 0.5e6, p_nom_el: 0.0, p_min_frac: 0.0, e_nom: 3.5e6 },
            bess: AssetSpec { p_nom_th: 0.0, p_nom_el: 0.5e6, p_min_frac: 0.0, e_nom: 2.0e6 },
            wind_nom: 0.8e6,
            solar_nom: 1.0e6,
            gas_price: 30.0,
            boiler_fuel_eff: 0.92,
            chp_fuel_eff: 0.88,
            boiler_eta_slope: 0.002,
            return_temp_ref: KELVIN + 40.0,
            return_temp_span: 15.0,
            demand_ref_max: 3.0e6,
            hp_carnot_fraction: 0.45,
            hp_evap_design: KELVIN + 15.0,
            hp_cond_design: KELVIN + 55.0,
            hp_evap_drop: 2.0,
            hp_cond_rise: 2.0,
            hp_env_coupling: 0.6,
            hp_env_ref: KELVIN + 20.0,
            chp_part_load_curvature: 0.04,
            chp_env_derate: 0.0015,
            chp_env_ref: KELVIN + 0.0,
            chp_power_to_heat: 0.8,
            tess_temp_low: KELVIN + 40.0,
            tess_temp_high: KELVIN + 90.0,
            tess_return_coupling: 2.5,
            tess_eff_charge: 0.97,
            tess_eff_discharge: 0.97,
            tess_standby_loss: 0.0005,
            bess_eff_charge: 0.95,
            bess_eff_discharge: 0.95,
            tau_boiler: 2.0,
            tau_hp: 3.0,
            tau_tess: 8.0,
            initial_soc_tess: 0.5,
            initial_soc_bess: 0.5,
            noise: NoiseConfig::default(),
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        self.boiler.validate("boiler")?;
        self.heat_pump.validate("heat_pump")?;
        self.chp.validate("chp")?;
        self.tess.validate("tess")?;
        self.bess.validate("bess")?;
        self.noise.validate()?;
        for (name, eff) in [
            ("tess_eff_charge", self.tess_eff_charge),
            ("tess_eff_discharge", self.tess_eff_discharge),
            ("bess_eff_charge", self.bess_eff_charge),
            ("bess_eff_discharge", self.bess_eff_discharge),
        ] {
            if !(eff > 0.0 && eff <= 1.0) {
                return Err(Error::InvalidArgument(format!("{name} must lie in (0, 1]")));
            }
        }
        if self.tess.e_nom <= 0.0 || self.bess.e_nom <= 0.0 {
            return Err(Error::InvalidArgument("storage capacities must be positive".into()));
        }
        if self.tau_boiler < 1.0 || self.tau_hp < 1.0 || self.tau_tess < 1.0 {
            return Err(Error::InvalidArgument("time constants must be at least one step".into()));
        }
        if !(self.tess_temp_high > self.tess_temp_low) {
            return Err(Error::InvalidArgument("tess_temp_high must exceed tess_temp_low".into()));
        }
        Ok(())
    }

    pub fn spec(&self, asset: Asset) -> &AssetSpec {
        match asset {
            Asset::Boiler => &self.boiler,
            Asset::HeatPump => &self.heat_pump,
            Asset::Chp => &self.chp,
            Asset::Tess => &self.tess,
        }
    }

    /// Design-point COP; the heat pump reaches its rating here.
    pub fn cop_max(&self) -> f64 {
        carnot_cop(self.hp_carnot_fraction, self.hp_evap_design, self.hp_cond_design)
    }

    pub fn decode(&self, action: &Action) -> PhysicalAction {
        let a = action.clipped().0;
        PhysicalAction {
            boiler: decode_producer(a[0], self.boiler.p_min_frac),
            hp: decode_producer(a[1], self.heat_pump.p_min_frac),
            chp: decode_producer(a[2], self.chp.p_min_frac),
            tess: a[3],
            bess: a[4],
        }
    }

    /// Ambient temperature at a fractional day of year and hour, K.
    pub fn ambient_temperature(&self, day: f64, hour: f64) -> f64 {
        let seasonal = -9.0 * (2.0 * PI * (day - 15.0) / 365.0).cos();
        let diurnal = 3.0 * (2.0 * PI * (hour - 9.0) / 24.0).sin();
        KELVIN + 10.0 + seasonal + diurnal
    }

    fn return_temp_setpoint(&self, q_demand: f64) -> f64 {
        self.return_temp_ref + self.return_temp_span * (q_demand / self.demand_ref_max).clamp(0.0, 1.0)
    }

    fn evap_setpoint(&self, u_hp: f64, t_env: f64) -> f64 {
        self.hp_evap_design - self.hp_evap_drop * u_hp - self.hp_env_coupling * (self.hp_env_ref - t_env).max(0.0)
    }

    fn cond_setpoint(&self, u_hp: f64) -> f64 {
        self.hp_cond_design + self.hp_cond_rise * u_hp
    }

    fn tess_temp_setpoint(&self, soc: f64, t_return: f64) -> f64 {
        self.tess_temp_low
            + soc * (self.tess_temp_high - self.tess_temp_low)
            + self.tess_return_coupling * (t_return - self.return_temp_ref)
    }

    /// Physical temperature bounds used to check state validity.
    pub fn temperature_bounds(&self) -> (f64, f64) {
        (KELVIN - 30.0, KELVIN + 120.0)
    }
}

pub fn carnot_cop(fraction: f64, t_evap: f64, t_cond: f64) -> f64 {
    fraction * t_cond / (t_cond - t_evap)
}

/// Full physical state of the plant at the start of step `t`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    pub t: usize,
    pub soc_tess: f64,
    pub soc_bess: f64,
    pub temp_boiler_return: f64,
    pub temp_evap: f64,
    pub temp_cond: f64,
    pub temp_env: f64,
    pub temp_tess_avg: f64,
    pub q_boil_prev: f64,
    pub q_hp_prev: f64,
    pub q_chp_prev: f64,
    pub q_tess_prev: f64,
    pub q_demand_prev: f64,
}

impl PlantState {
    /// Steady initial state at step 0 of `profile`.
    pub fn initial(cfg: &PlantConfig, profile: &ExogenousProfile) -> Self {
        let q0 = profile.thermal_demand.first().copied().unwrap_or(0.0);
        let t_env = cfg.ambient_temperature(profile.day_of_year(0), 0.0);
        let t_ret = cfg.return_temp_setpoint(q0);
        PlantState {
            t: 0,
            soc_tess: cfg.initial_soc_tess,
            soc_bess: cfg.initial_soc_bess,
            temp_boiler_return: t_ret,
            temp_evap: cfg.evap_setpoint(0.0, t_env),
            temp_cond: cfg.cond_setpoint(0.0),
            temp_env: t_env,
            temp_tess_avg: cfg.tess_temp_setpoint(cfg.initial_soc_tess, t_ret),
            q_boil_prev: 0.0,
            q_hp_prev: 0.0,
            q_chp_prev: 0.0,
            q_tess_prev: 0.0,
            q_demand_prev: q0,
        }
    }

    pub fn is_valid(&self, cfg: &PlantConfig) -> bool {
        let (lo, hi) = cfg.temperature_bounds();
        let temps = [
            self.temp_boiler_return,
            self.temp_evap,
            self.temp_cond,
            self.temp_env,
            self.temp_tess_avg,
        ];
        (0.0..=1.0).contains(&self.soc_tess)
            && (0.0..=1.0).contains(&self.soc_bess)
            && temps.iter().all(|t| (lo..=hi).contains(t))
    }
}

/// Thermal (and for the CHP, electrical) output of one asset.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct AssetOutput {
    pub q: f64,
    pub p_el: f64,
}

/// Everything realized during one plant step.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct StepOutcome {
    pub q_boil: f64,
    pub q_hp: f64,
    pub q_chp: f64,
    /// Positive when discharging into the heat network.
    pub q_tess: f64,
    pub p_chp: f64,
    pub p_hp: f64,
    /// Positive when discharging into the electrical network.
    pub p_bess: f64,
    /// Positive for import.
    pub p_grid: f64,
    pub p_demand: f64,
    pub p_wind: f64,
    pub p_solar: f64,
    pub q_demand: f64,
    pub q_production: f64,
    pub gas_cost: f64,
    pub electricity_cost: f64,
    /// Total energy cost, EUR.
    pub energy_cost: f64,
    /// |Q_demand - Q_production|, W.
    pub comfort_loss: f64,
    /// Requested storage energy that could not be realized, Wh.
    pub spilled_tess_wh: f64,
    pub spilled_bess_wh: f64,
    /// Conversion and standby losses, Wh (non-negative).
    pub losses_tess_wh: f64,
    pub losses_bess_wh: f64,
}

fn lag(current: f64, target: f64, tau: f64) -> f64 {
    let alpha = 1.0 - (-1.0 / tau).exp();
    current + alpha * (target - current)
}

/// Deliverable-power factor of the stratified tank from its normalized average
/// temperature; cubic in temperature for both directions.
fn tess_capability(theta: f64, discharging: bool) -> f64 {
    let th = theta.clamp(0.0, 1.0);
    if discharging {
        1.0 - (1.0 - th).powi(3)
    } else {
        1.0 - th.powi(3)
    }
}

/// True thermal output for a decoded action component. `u` is a load fraction
/// for producers and a signed power fraction for the TESS; `w` is the
/// multiplicative disturbance draw.
pub fn true_asset_output(cfg: &PlantConfig, asset: Asset, u: f64, state: &PlantState, w: f64) -> AssetOutput {
    let noise = 1.0 + w;
    match asset {
        Asset::Boiler => {
            let eta = 1.0 - cfg.boiler_eta_slope * (state.temp_boiler_return - cfg.return_temp_ref).max(0.0);
            AssetOutput { q: u * eta * cfg.boiler.p_nom_th * noise, p_el: 0.0 }
        }
        Asset::HeatPump => {
            let cop = carnot_cop(cfg.hp_carnot_fraction, state.temp_evap, state.temp_cond);
            let q = u * (cop / cfg.cop_max()) * cfg.heat_pump.p_nom_th * noise;
            AssetOutput { q, p_el: if cop > 0.0 { q / cop } else { 0.0 } }
        }
        Asset::Chp => {
            let part_load = 1.0 - cfg.chp_part_load_curvature * (1.0 - u) * (1.0 - u);
            let ambient = 1.0 - cfg.chp_env_derate * (state.temp_env - cfg.chp_env_ref);
            let q = u * part_load * ambient * cfg.chp.p_nom_th * noise;
            AssetOutput { q, p_el: q * cfg.chp_power_to_heat }
        }
        Asset::Tess => {
            let theta = (state.temp_tess_avg - cfg.tess_temp_low) / (cfg.tess_temp_high - cfg.tess_temp_low);
            let discharging = u > 0.0;
            let mut q = u * tess_capability(theta, discharging) * cfg.tess.p_nom_th * noise;
            let e = cfg.tess.e_nom;
            if discharging {
                let max_q = state.soc_tess * e * cfg.tess_eff_discharge / STEP_HOURS;
                q = q.min(max_q);
            } else {
                let max_q = (1.0 - state.soc_tess) * e / (cfg.tess_eff_charge * STEP_HOURS);
                q = q.max(-max_q);
            }
            AssetOutput { q, p_el: 0.0 }
        }
    }
}

/// The stochastic plant. Owns the disturbance generator; the state is passed
/// explicitly so rollouts can be replayed from any point.
#[derive(Clone, Debug)]
pub struct Plant {
    pub cfg: PlantConfig,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

impl Plant {
    pub fn new(cfg: PlantConfig) -> Result<Self> {
        cfg.validate()?;
        let noise = if cfg.noise.sigma_mult > 0.0 {
            Some(Normal::new(0.0, cfg.noise.sigma_mult).map_err(|e| Error::InvalidArgument(e.to_string()))?)
        } else {
            None
        };
        let rng = ChaCha8Rng::seed_from_u64(cfg.noise.seed);
        Ok(Plant { cfg, rng, noise })
    }

    /// Restarts the disturbance sequence from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn initial_state(&self, profile: &ExogenousProfile) -> PlantState {
        PlantState::initial(&self.cfg, profile)
    }

    /// One truncated disturbance draw. Always consumes exactly one normal
    /// sample so trajectories stay aligned regardless of the action.
    fn draw(&mut self) -> f64 {
        match &self.noise {
            Some(n) => {
                let bound = self.cfg.noise.clip * self.cfg.noise.sigma_mult;
                // resample-free truncation: clamp keeps one draw per call
                n.sample(&mut self.rng).clamp(-bound, bound)
            }
            None => 0.0,
        }
    }

    pub fn step(&mut self, state: &PlantState, action: &Action, profile: &ExogenousProfile) -> Result<(PlantState, StepOutcome)> {
        let t = state.t;
        if t >= profile.horizon() {
            return Err(Error::EpisodeEnded(t));
        }
        if !action.is_within_bounds() || action.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("action {:?} outside [-1, 1]", action.0)));
        }
        let cfg = &self.cfg;
        let u = cfg.decode(action);
        let draws = [self.draw(), self.draw(), self.draw(), self.draw()];
        let cfg = &self.cfg;

        let boil = true_asset_output(cfg, Asset::Boiler, u.boiler, state, draws[0]);
        let hp = true_asset_output(cfg, Asset::HeatPump, u.hp, state, draws[1]);
        let chp = true_asset_output(cfg, Asset::Chp, u.chp, state, draws[2]);
        let tess = true_asset_output(cfg, Asset::Tess, u.tess, state, draws[3]);

        let mut out = StepOutcome {
            q_boil: boil.q,
            q_hp: hp.q,
            q_chp: chp.q,
            q_tess: tess.q,
            p_chp: chp.p_el,
            p_hp: hp.p_el,
            ..Default::default()
        };

        // thermal store
        let e_tess = cfg.tess.e_nom;
        let mut soc_tess = state.soc_tess;
        let delivered_wh = tess.q * STEP_HOURS;
        let internal_wh = if tess.q >= 0.0 {
            delivered_wh / cfg.tess_eff_discharge
        } else {
            delivered_wh * cfg.tess_eff_charge
        };
        soc_tess -= internal_wh / e_tess;
        let standby_wh = cfg.tess_standby_loss * soc_tess.max(0.0) * e_tess;
        soc_tess -= standby_wh / e_tess;
        let soc_tess_clamped = soc_tess.clamp(0.0, 1.0);
        out.spilled_tess_wh = (soc_tess - soc_tess_clamped).abs() * e_tess;
        soc_tess = soc_tess_clamped;
        out.losses_tess_wh = (internal_wh - delivered_wh).abs() + standby_wh;

        // battery: positive = discharge
        let e_bess = cfg.bess.e_nom;
        let requested_p = u.bess * cfg.bess.p_nom_el;
        let p_bess = if requested_p >= 0.0 {
            requested_p.min(state.soc_bess * e_bess * cfg.bess_eff_discharge / STEP_HOURS)
        } else {
            requested_p.max(-(1.0 - state.soc_bess) * e_bess / (cfg.bess_eff_charge * STEP_HOURS))
        };
        out.spilled_bess_wh = (requested_p - p_bess).abs() * STEP_HOURS;
        let bess_internal_wh = if p_bess >= 0.0 {
            p_bess * STEP_HOURS / cfg.bess_eff_discharge
        } else {
            p_bess * STEP_HOURS * cfg.bess_eff_charge
        };
        let soc_bess_raw = state.soc_bess - bess_internal_wh / e_bess;
        let soc_bess = soc_bess_raw.clamp(0.0, 1.0);
        out.spilled_bess_wh += (soc_bess_raw - soc_bess).abs() * e_bess;
        out.losses_bess_wh = (bess_internal_wh - p_bess * STEP_HOURS).abs();
        out.p_bess = p_bess;

        // electrical balance, grid is the slack
        out.p_demand = profile.electrical_demand[t];
        out.p_wind = profile.wind_infeed[t];
        out.p_solar = profile.solar_infeed[t];
        out.p_grid = out.p_demand + out.p_hp - out.p_bess - out.p_wind - out.p_solar - out.p_chp;

        // thermal balance
        out.q_demand = profile.thermal_demand[t];
        out.q_production = out.q_boil + out.q_hp + out.q_chp + out.q_tess;
        out.comfort_loss = (out.q_demand - out.q_production).abs();

        // costs in EUR; powers in W, prices per MWh
        let mwh = STEP_HOURS / 1e6;
        out.electricity_cost = out.p_grid * profile.elec_price[t] * mwh;
        let gas_w = out.q_boil.max(0.0) / cfg.boiler_fuel_eff + (out.q_chp.max(0.0) + out.p_chp.max(0.0)) / cfg.chp_fuel_eff;
        out.gas_cost = gas_w * cfg.gas_price * mwh;
        out.energy_cost = out.electricity_cost + out.gas_cost;

        // temperature dynamics toward load-dependent set-points
        let t_next = t + 1;
        let t_env_next = cfg.ambient_temperature(profile.day_of_year(t_next), ExogenousProfile::fractional_hour(t_next));
        let t_ret = lag(state.temp_boiler_return, cfg.return_temp_setpoint(out.q_demand), cfg.tau_boiler);
        let next = PlantState {
            t: t_next,
            soc_tess,
            soc_bess,
            temp_boiler_return: t_ret,
            temp_evap: lag(state.temp_evap, cfg.evap_setpoint(u.hp, state.temp_env), cfg.tau_hp),
            temp_cond: lag(state.temp_cond, cfg.cond_setpoint(u.hp), cfg.tau_hp),
            temp_env: t_env_next,
            temp_tess_avg: lag(state.temp_tess_avg, cfg.tess_temp_setpoint(soc_tess, t_ret), cfg.tau_tess),
            q_boil_prev: out.q_boil,
            q_hp_prev: out.q_hp,
            q_chp_prev: out.q_chp,
            q_tess_prev: out.q_tess,
            q_demand_prev: out.q_demand,
        };
        Ok((next, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{generate_profiles, ProfileKind};

    fn quiet() -> PlantConfig {
        let mut cfg = PlantConfig::default();
        cfg.noise.sigma_mult = 0.0;
        cfg
    }

    fn eval_week() -> ExogenousProfile {
        generate_profiles(7, STEPS_PER_WEEK, ProfileKind::Eval).unwrap()
    }

    #[test]
    fn zero_boiler_action_gives_zero_output() {
        let cfg = PlantConfig::default();
        let p = eval_week();
        let s = PlantState::initial(&cfg, &p);
        assert_eq!(true_asset_output(&cfg, Asset::Boiler, 0.0, &s, 0.02).q, 0.0);
    }

    #[test]
    fn heat_pump_reaches_rating_at_design_point() {
        let cfg = quiet();
        let p = eval_week();
        let mut s = PlantState::initial(&cfg, &p);
        s.temp_evap = cfg.hp_evap_design;
        s.temp_cond = cfg.hp_cond_design;
        let out = true_asset_output(&cfg, Asset::HeatPump, 1.0, &s, 0.0);
        assert!((out.q - 1.0e6).abs() < 1e-6);
        // with the disturbance the output stays within the truncation band
        let bound = cfg.noise.clip * 0.015;
        let noisy = true_asset_output(&cfg, Asset::HeatPump, 1.0, &s, bound);
        assert!((noisy.q - 1.0e6).abs() <= bound * 1.0e6 + 1e-6);
    }

    #[test]
    fn empty_store_cannot_discharge() {
        let cfg = PlantConfig::default();
        let p = eval_week();
        let mut s = PlantState::initial(&cfg, &p);
        s.soc_tess = 0.0;
        s.temp_tess_avg = cfg.tess_temp_low;
        assert_eq!(true_asset_output(&cfg, Asset::Tess, 1.0, &s, 0.01).q, 0.0);
        s.temp_tess_avg = cfg.tess_temp_high;
        assert_eq!(true_asset_output(&cfg, Asset::Tess, 1.0, &s, 0.01).q, 0.0);
    }

    #[test]
    fn all_off_gives_full_comfort_loss() {
        let p = eval_week();
        let mut plant = Plant::new(PlantConfig::default()).unwrap();
        let s = plant.initial_state(&p);
        let off = Action::new(-1.0, -1.0, -1.0, 0.0, 0.0);
        let (_, out) = plant.step(&s, &off, &p).unwrap();
        assert_eq!(out.q_production, 0.0);
        assert_eq!(out.comfort_loss, p.thermal_demand[0]);
        assert_eq!(out.gas_cost, 0.0);
        let expected = (p.electrical_demand[0] - p.wind_infeed[0] - p.solar_infeed[0]) * p.elec_price[0] * STEP_HOURS / 1e6;
        assert!((out.energy_cost - expected).abs() < 1e-9);
    }

    #[test]
    fn full_battery_spills_charge() {
        let p = eval_week();
        let mut plant = Plant::new(PlantConfig::default()).unwrap();
        let mut s = plant.initial_state(&p);
        s.soc_bess = 1.0;
        let a = Action::new(-1.0, -1.0, -1.0, 0.0, -1.0);
        let (next, out) = plant.step(&s, &a, &p).unwrap();
        assert_eq!(next.soc_bess, 1.0);
        assert_eq!(out.p_bess, 0.0);
        assert!((out.spilled_bess_wh - 0.5e6 * STEP_HOURS).abs() < 1e-6);
    }

    #[test]
    fn out_of_bounds_action_is_rejected() {
        let p = eval_week();
        let mut plant = Plant::new(PlantConfig::default()).unwrap();
        let s = plant.initial_state(&p);
        let a = Action::new(1.5, 0.0, 0.0, 0.0, 0.0);
        assert!(matches!(plant.step(&s, &a, &p), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn stepping_past_horizon_ends_episode() {
        let p = generate_profiles(1, 2, ProfileKind::Eval).unwrap();
        let mut plant = Plant::new(PlantConfig::default()).unwrap();
        let mut s = plant.initial_state(&p);
        for _ in 0..2 {
            s = plant.step(&s, &Action::ZERO, &p).unwrap().0;
        }
        assert!(matches!(plant.step(&s, &Action::ZERO, &p), Err(Error::EpisodeEnded(2))));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = PlantConfig::default();
        cfg.chp.p_min_frac = 1.5;
        assert!(Plant::new(cfg).is_err());
        let mut cfg = PlantConfig::default();
        cfg.noise.clip = 0.0;
        assert!(Plant::new(cfg).is_err());
    }
}
