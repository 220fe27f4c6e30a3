//! Phase-based injection-molding process model with injectable faults.
//!
//! A cycle runs dosing → injection → holding → cooling → ejection. The model
//! is lumped: the screw velocity follows a first-order lag toward its target,
//! the fill volume is the trapezoidal integral of `screw_area × velocity`, and
//! pressures and temperatures are driven by simple lags and exponential decays.
//! Quality indicators are computed from the noise-free state and then turned
//! into a label by [`label_cycle`].
//!
//! Model defaults: velocity lag 50 ms, cavity 50 cm³, screw area 2 cm²,
//! viscosity factor `exp(-(melt_temp - 230) / 40)`, cooling time constant 4 s.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, mix64, CounterRng};
use crate::types::{
    col, CycleRecord, Dataset, FeatureSchema, Label, ProcessSetpoints, QualityIndicators, Source,
    FEATURE_COUNT, SETPOINT_COUNT, SIGNAL_COUNT,
};

/// Velocity lag time constant, s.
pub const VELOCITY_TAU_S: f64 = 0.05;
/// Melt temperature at which the viscosity factor is 1, °C.
pub const VISCOSITY_REF_TEMP_C: f64 = 230.0;
/// Temperature scale of the viscosity factor, °C.
pub const VISCOSITY_TEMP_SCALE_C: f64 = 40.0;
/// Time constant of melt cooling toward the coolant temperature, s.
pub const COOLING_TAU_S: f64 = 4.0;
/// Rejection-sampling attempts per cycle in [`generate_dataset`].
pub const MAX_ATTEMPTS: usize = 1000;

const DOSING_RATE: f64 = 2.5; // cm³ per (s · 1/min)
const PRESSURE_TAU_S: f64 = 0.03;
const CAVITY_DECAY_TAU_S: f64 = 0.5;
const PACK_GAIN: f64 = 0.25; // mm/s per bar
const INJ_VISCOUS_GAIN: f64 = 0.5;
const CAV_VISCOUS_GAIN: f64 = 0.3;
const PRESSURE_TRANSFER: f64 = 0.8;
const MAX_INJECTION_S: f64 = 3.0;
const EJECTION_S: f64 = 0.1;
const EJECTOR_SPEED: f64 = 400.0;
const EJECTOR_STROKE: f64 = 40.0;
const COOLANT_TEMP_C: f64 = 25.0;
const COOLANT_FLOW: f64 = 12.0;
const CLAMP_BASE_KN: f64 = 800.0;
const SNAP_CM3: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulator input: {0}")]
    InvalidInput(String),
    #[error("non-finite state in {phase} phase at step {step}")]
    NonFinite { phase: Phase, step: usize },
    #[error("could not reach {target} for cycle {cycle} within {attempts} attempts")]
    MixUnattainable {
        cycle: usize,
        target: Label,
        attempts: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Dosing,
    Injection,
    Holding,
    Cooling,
    Ejection,
}

impl Phase {
    pub fn id(self) -> f64 {
        self as u8 as f64
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FaultMode {
    None,
    /// Underfed shot: 10–30 % less material reaches the screw front.
    ShortShot,
    /// Holding-phase pressures scaled by 0.5–0.8.
    PressureLoss,
    /// Melt 15–30 °C colder, raising viscosity and slowing the fill.
    ColdMelt,
}

/// Probability of each fault mode per drawn cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultMix {
    pub none: f64,
    pub short_shot: f64,
    pub pressure_loss: f64,
    pub cold_melt: f64,
}

impl Default for FaultMix {
    fn default() -> Self {
        Self {
            none: 0.5,
            short_shot: 0.2,
            pressure_loss: 0.15,
            cold_melt: 0.15,
        }
    }
}

impl FaultMix {
    pub fn only(mode: FaultMode) -> Self {
        let mut m = Self {
            none: 0.0,
            short_shot: 0.0,
            pressure_loss: 0.0,
            cold_melt: 0.0,
        };
        *m.weight_mut(mode) = 1.0;
        m
    }

    fn entries(&self) -> [(FaultMode, f64); 4] {
        [
            (FaultMode::None, self.none),
            (FaultMode::ShortShot, self.short_shot),
            (FaultMode::PressureLoss, self.pressure_loss),
            (FaultMode::ColdMelt, self.cold_melt),
        ]
    }

    fn weight_mut(&mut self, mode: FaultMode) -> &mut f64 {
        match mode {
            FaultMode::None => &mut self.none,
            FaultMode::ShortShot => &mut self.short_shot,
            FaultMode::PressureLoss => &mut self.pressure_loss,
            FaultMode::ColdMelt => &mut self.cold_melt,
        }
    }

    fn draw(&self, rng: &mut CounterRng) -> FaultMode {
        let u = rng.next_f64();
        let mut acc = 0.0;
        let mut last = FaultMode::None;
        for (mode, p) in self.entries() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = mode;
            if u < acc {
                return mode;
            }
        }
        last
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelThresholds {
    pub min_fill_fraction: f64,
    /// Accepted (low, high) range for the peak cavity pressure, bar.
    pub cavity_pressure_band: (f64, f64),
    pub min_cushion_mm: f64,
}

impl Default for LabelThresholds {
    fn default() -> Self {
        Self {
            min_fill_fraction: 0.98,
            cavity_pressure_band: (380.0, 700.0),
            min_cushion_mm: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatorConfig {
    pub sample_period_ms: u32,
    /// Gaussian sensor noise per signal channel (physical units). Missing channels are noise-free.
    pub noise_std: BTreeMap<String, f64>,
    /// Relative half-width of the uniform jitter applied to each nominal setpoint.
    pub jitter: BTreeMap<String, f64>,
    pub fault_mix: FaultMix,
    pub label_thresholds: LabelThresholds,
    /// cm³
    pub cavity_volume: f64,
    /// cm²
    pub screw_area: f64,
    /// Center of the setpoint jitter.
    pub nominal: ProcessSetpoints,
    pub rng_seed: u64,
}

const SETPOINT_NAMES: [&str; SETPOINT_COUNT] = [
    "injection_speed",
    "changeover_point",
    "holding_pressure",
    "holding_time",
    "back_pressure",
    "screw_rpm",
    "injection_volume",
    "piston_stroke",
    "mold_temp",
    "melt_temp",
    "cooling_time",
];

/// Default noise standard deviations, roughly 1 % of each channel's range.
pub fn default_noise_std() -> BTreeMap<String, f64> {
    [
        ("screw_position_mm", 2.5),
        ("screw_velocity_mm_s", 6.0),
        ("injection_pressure_bar", 5.0),
        ("cavity_pressure_bar", 5.0),
        ("holding_pressure_actual_bar", 5.0),
        ("back_pressure_actual_bar", 1.0),
        ("melt_temp_C", 1.0),
        ("mold_temp_C", 0.5),
        ("barrel_zone1_C", 1.0),
        ("barrel_zone2_C", 1.0),
        ("barrel_zone3_C", 1.0),
        ("nozzle_temp_C", 1.0),
        ("screw_rpm_actual", 2.0),
        ("fill_volume_cm3", 0.5),
        ("flow_rate_cm3_s", 1.2),
        ("clamp_force_kN", 10.0),
        ("ejector_position_mm", 0.4),
        ("ejector_speed_mm_s", 4.0),
        ("coolant_temp_C", 0.2),
        ("coolant_flow_l_min", 0.1),
        ("cushion_mm", 0.2),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            sample_period_ms: 10,
            noise_std: default_noise_std(),
            jitter: SETPOINT_NAMES
                .iter()
                .map(|&n| {
                    // Shot volume is metered tightly; wider jitter would blur the short-shot boundary.
                    let j = if n == "injection_volume" { 0.02 } else { 0.05 };
                    (n.to_string(), j)
                })
                .collect(),
            fault_mix: FaultMix::default(),
            label_thresholds: LabelThresholds::default(),
            cavity_volume: 50.0,
            screw_area: 2.0,
            nominal: ProcessSetpoints::nominal(),
            rng_seed: 0,
        }
    }
}

impl SimulatorConfig {
    pub fn zero_noise(mut self) -> Self {
        self.noise_std.values_mut().for_each(|v| *v = 0.0);
        self
    }

    pub fn scale_noise(mut self, factor: f64) -> Self {
        self.noise_std.values_mut().for_each(|v| *v *= factor);
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidInput(m));
        if self.sample_period_ms == 0 {
            return bad("sample_period_ms must be positive".into());
        }
        let schema = FeatureSchema::canonical();
        for (name, std) in &self.noise_std {
            match schema.index_of(name) {
                Some(i) if i < SIGNAL_COUNT => {}
                _ => return bad(format!("noise_std: unknown signal channel {name:?}")),
            }
            if !(std.is_finite() && *std >= 0.0) {
                return bad(format!("noise_std[{name}] must be finite and >= 0"));
            }
        }
        for (name, j) in &self.jitter {
            if !SETPOINT_NAMES.contains(&name.as_str()) {
                return bad(format!("jitter: unknown setpoint {name:?}"));
            }
            if !(j.is_finite() && (0.0..1.0).contains(j)) {
                return bad(format!("jitter[{name}] must lie in [0, 1)"));
            }
        }
        let weights = self.fault_mix.entries();
        if weights.iter().any(|(_, p)| !(p.is_finite() && *p >= 0.0)) {
            return bad("fault_mix probabilities must be non-negative".into());
        }
        let total: f64 = weights.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return bad(format!("fault_mix must sum to 1, sums to {total}"));
        }
        let t = &self.label_thresholds;
        let (low, high) = t.cavity_pressure_band;
        if !(t.min_fill_fraction > 0.0 && t.min_cushion_mm > 0.0 && low > 0.0 && low < high) {
            return bad("label thresholds must be positive with band low < high".into());
        }
        if !(self.cavity_volume > 0.0 && self.screw_area > 0.0) {
            return bad("cavity_volume and screw_area must be positive".into());
        }
        self.nominal
            .validate()
            .map_err(|e| SimError::InvalidInput(e.to_string()))
    }

    /// Draw setpoints uniformly within the configured jitter around `nominal`.
    pub fn jittered_setpoints(&self, rng: &mut CounterRng) -> ProcessSetpoints {
        let mut v = self.nominal.to_array();
        for (value, name) in v.iter_mut().zip(SETPOINT_NAMES) {
            let j = self.jitter.get(name).copied().unwrap_or(0.0);
            let u = rng.uniform(-1.0, 1.0);
            *value *= 1.0 + j * u;
        }
        ProcessSetpoints::from_array(v)
    }
}

/// Output of one simulated cycle before labeling.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCycle {
    pub samples: Array2<f64>,
    pub setpoints: ProcessSetpoints,
    pub sample_period_ms: u32,
    pub fault: FaultMode,
}

impl SimulatedCycle {
    pub fn into_record(
        self,
        cycle_id: String,
        source: Source,
        label: Label,
        quality: QualityIndicators,
    ) -> CycleRecord {
        CycleRecord {
            cycle_id,
            source,
            label,
            sample_period_ms: self.sample_period_ms,
            samples: self.samples,
            setpoints: self.setpoints,
            quality: Some(quality),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Row {
    position: f64,
    velocity: f64,
    inj_pressure: f64,
    cav_pressure: f64,
    hold_pressure: f64,
    back_pressure: f64,
    melt: f64,
    mold: f64,
    rpm: f64,
    fill: f64,
    flow: f64,
    clamp: f64,
    ejector_pos: f64,
    ejector_speed: f64,
    coolant: f64,
    cushion: f64,
}

struct FaultEffects {
    material: f64,
    hold_pressure: f64,
    melt_temp: f64,
    heater_offset: f64,
}

fn fault_effects(setpoints: &ProcessSetpoints, fault: FaultMode, rng: &mut CounterRng) -> FaultEffects {
    let mut fx = FaultEffects {
        material: setpoints.injection_volume,
        hold_pressure: setpoints.holding_pressure,
        melt_temp: setpoints.melt_temp,
        heater_offset: 0.0,
    };
    match fault {
        FaultMode::None => {}
        FaultMode::ShortShot => fx.material *= 1.0 - rng.uniform(0.10, 0.30),
        FaultMode::PressureLoss => fx.hold_pressure *= rng.uniform(0.5, 0.8),
        FaultMode::ColdMelt => {
            let drop = rng.uniform(15.0, 30.0);
            fx.melt_temp -= drop;
            fx.heater_offset = -drop;
        }
    }
    fx
}

fn lag(current: f64, target: f64, dt: f64, tau: f64) -> f64 {
    current + (target - current) * (1.0 - (-dt / tau).exp())
}

/// Forward screw motion limited so the screw can always stop exactly at `capacity`.
struct Screw {
    velocity: f64,
    position: f64,
    fill: f64,
    capacity: f64,
    cm3_per_mm: f64,
    cavity: f64,
}

impl Screw {
    /// Advance one sample toward `target` velocity; returns false once the screw is stalled at capacity.
    fn step(&mut self, target: f64, dt: f64) -> bool {
        let remaining_mm = ((self.capacity - self.fill) / self.cm3_per_mm).max(0.0);
        let lagged = lag(self.velocity, target, dt, VELOCITY_TAU_S);
        let stoppable = (remaining_mm / dt - self.velocity / 2.0).max(0.0);
        let v_new = lagged.min(stoppable).max(0.0);
        let travel = dt * (self.velocity + v_new) / 2.0;
        let mut fill = self.fill + self.cm3_per_mm * travel;
        if (self.capacity - fill).abs() < SNAP_CM3 {
            fill = self.capacity;
        }
        self.fill = fill.min(self.cavity);
        self.position -= travel;
        self.velocity = v_new;
        !(v_new == 0.0 && self.fill >= self.capacity)
    }
}

/// Simulate one cycle. Returns the unlabeled cycle and its noise-free quality indicators.
pub fn simulate_cycle(
    setpoints: &ProcessSetpoints,
    fault: FaultMode,
    config: &SimulatorConfig,
    seed: u64,
) -> Result<(SimulatedCycle, QualityIndicators), SimError> {
    setpoints
        .validate()
        .map_err(|e| SimError::InvalidInput(e.to_string()))?;
    config.validate()?;

    let mut fault_rng = CounterRng::new(derive_seed(seed, &[1]));
    let mut noise_rng = CounterRng::new(derive_seed(seed, &[2]));
    let fx = fault_effects(setpoints, fault, &mut fault_rng);

    let dt = config.sample_period_ms as f64 / 1000.0;
    let cm3_per_mm = config.screw_area / 10.0;
    let cavity = config.cavity_volume;
    let visc = (-(fx.melt_temp - VISCOSITY_REF_TEMP_C) / VISCOSITY_TEMP_SCALE_C).exp();
    let transfer = PRESSURE_TRANSFER / visc.powf(0.7);

    let mut rows: Vec<(Phase, Row)> = Vec::new();
    let base = Row {
        melt: fx.melt_temp,
        mold: setpoints.mold_temp,
        coolant: COOLANT_TEMP_C,
        clamp: CLAMP_BASE_KN,
        ..Row::default()
    };

    // Dosing: the screw retracts to the piston stroke while metering the next shot.
    let p_start = (setpoints.piston_stroke - setpoints.injection_volume / cm3_per_mm).max(0.0);
    let dosing_time = setpoints.injection_volume / (setpoints.screw_rpm * DOSING_RATE);
    let n_dose = ((dosing_time / dt).ceil() as usize).max(2);
    let retract_speed = (setpoints.piston_stroke - p_start) / (n_dose as f64 * dt);
    for k in 0..n_dose {
        let frac = (k + 1) as f64 / n_dose as f64;
        rows.push((
            Phase::Dosing,
            Row {
                position: p_start + (setpoints.piston_stroke - p_start) * frac,
                velocity: -retract_speed,
                inj_pressure: setpoints.back_pressure,
                back_pressure: setpoints.back_pressure,
                rpm: setpoints.screw_rpm,
                ..base
            },
        ));
    }

    let mut screw = Screw {
        velocity: 0.0,
        position: setpoints.piston_stroke,
        fill: 0.0,
        capacity: cavity.min(fx.material),
        cm3_per_mm,
        cavity,
    };
    let cushion = |fill: f64| ((fx.material - fill) / cm3_per_mm).max(0.0);
    let mut p_inj;
    let mut p_cav: f64;
    let mut mold;

    // Injection: velocity-controlled filling until the changeover point.
    let max_steps = (MAX_INJECTION_S / dt).ceil() as usize;
    let mut step = 0usize;
    loop {
        let fill_frac = screw.fill / cavity;
        p_inj = INJ_VISCOUS_GAIN * visc * screw.velocity + 250.0 * fill_frac.powi(2);
        p_cav = CAV_VISCOUS_GAIN * visc * screw.velocity * fill_frac + 150.0 * fill_frac.powi(4);
        mold = setpoints.mold_temp + 4.0 * fill_frac;
        rows.push((
            Phase::Injection,
            Row {
                position: screw.position,
                velocity: screw.velocity,
                inj_pressure: p_inj,
                cav_pressure: p_cav,
                mold,
                fill: screw.fill,
                flow: cm3_per_mm * screw.velocity,
                clamp: CLAMP_BASE_KN + 0.4 * p_cav,
                cushion: cushion(screw.fill),
                ..base
            },
        ));
        if screw.position <= setpoints.changeover_point || step >= max_steps {
            break;
        }
        let moving = screw.step(setpoints.injection_speed / visc, dt);
        step += 1;
        if !moving {
            break;
        }
    }

    // Holding: pressure-controlled packing.
    let n_hold = ((setpoints.holding_time / dt).round() as usize).max(1);
    let mut p_hold = p_inj;
    for _ in 0..n_hold {
        screw.step(PACK_GAIN * fx.hold_pressure / visc, dt);
        let fill_frac = screw.fill / cavity;
        p_hold = lag(p_hold, fx.hold_pressure, dt, PRESSURE_TAU_S);
        p_cav = lag(p_cav, transfer * p_hold * fill_frac.powi(8), dt, PRESSURE_TAU_S);
        mold = setpoints.mold_temp + 4.0 * fill_frac;
        rows.push((
            Phase::Holding,
            Row {
                position: screw.position,
                velocity: screw.velocity,
                inj_pressure: p_hold,
                cav_pressure: p_cav,
                hold_pressure: p_hold,
                mold,
                fill: screw.fill,
                flow: cm3_per_mm * screw.velocity,
                clamp: CLAMP_BASE_KN + 0.4 * p_cav,
                cushion: cushion(screw.fill),
                ..base
            },
        ));
    }

    // Cooling: the screw stops and the part cools toward the coolant temperature.
    let n_cool = ((setpoints.cooling_time / dt).round() as usize).max(1);
    let mut melt = fx.melt_temp;
    let mut p_inj_c = p_hold;
    for k in 0..n_cool {
        screw.step(0.0, dt);
        let t = (k + 1) as f64 * dt;
        p_inj_c = lag(p_inj_c, 0.0, dt, PRESSURE_TAU_S);
        p_hold = lag(p_hold, 0.0, dt, PRESSURE_TAU_S);
        p_cav = lag(p_cav, 0.0, dt, CAVITY_DECAY_TAU_S);
        melt = COOLANT_TEMP_C + (melt - COOLANT_TEMP_C) * (-dt / COOLING_TAU_S).exp();
        mold = lag(mold, setpoints.mold_temp, dt, 1.0);
        rows.push((
            Phase::Cooling,
            Row {
                position: screw.position,
                velocity: screw.velocity,
                inj_pressure: p_inj_c,
                cav_pressure: p_cav,
                hold_pressure: p_hold,
                melt,
                mold,
                fill: screw.fill,
                flow: cm3_per_mm * screw.velocity,
                clamp: CLAMP_BASE_KN + 0.4 * p_cav,
                coolant: COOLANT_TEMP_C + 1.5 * (1.0 - (-t / 0.5).exp()),
                cushion: cushion(screw.fill),
                ..base
            },
        ));
    }

    // Ejection: mold opens and the ejector pushes the part out.
    let n_eject = ((EJECTION_S / dt).round() as usize).max(2);
    let coolant_end = rows.last().map(|(_, r)| r.coolant).unwrap_or(COOLANT_TEMP_C);
    for k in 0..n_eject {
        screw.step(0.0, dt);
        let t = (k + 1) as f64 * dt;
        let ejector_pos = (EJECTOR_SPEED * t).min(EJECTOR_STROKE);
        let progress = (k + 1) as f64 / n_eject as f64;
        p_cav = lag(p_cav, 0.0, dt, PRESSURE_TAU_S);
        melt = COOLANT_TEMP_C + (melt - COOLANT_TEMP_C) * (-dt / COOLING_TAU_S).exp();
        mold = lag(mold, setpoints.mold_temp, dt, 1.0);
        rows.push((
            Phase::Ejection,
            Row {
                position: screw.position,
                velocity: screw.velocity,
                cav_pressure: p_cav,
                melt,
                mold,
                fill: screw.fill,
                flow: cm3_per_mm * screw.velocity,
                clamp: CLAMP_BASE_KN * (1.0 - progress),
                ejector_pos,
                ejector_speed: if ejector_pos < EJECTOR_STROKE { EJECTOR_SPEED } else { 0.0 },
                coolant: coolant_end,
                cushion: cushion(screw.fill),
                ..base
            },
        ));
    }

    let quality = QualityIndicators {
        fill_fraction: (screw.fill / cavity).clamp(0.0, 1.0),
        peak_cavity_pressure: rows.iter().map(|(_, r)| r.cav_pressure).fold(0.0, f64::max),
        min_cushion: rows
            .iter()
            .filter(|(p, _)| *p != Phase::Dosing)
            .map(|(_, r)| r.cushion)
            .fold(f64::INFINITY, f64::min),
    };

    let schema = FeatureSchema::canonical();
    let noise: Vec<f64> = schema
        .features()
        .iter()
        .take(SIGNAL_COUNT)
        .map(|f| config.noise_std.get(&f.name).copied().unwrap_or(0.0))
        .collect();
    let sp = setpoints.to_array();
    let mut samples = Array2::zeros((rows.len(), FEATURE_COUNT));
    for (k, (phase, r)) in rows.iter().enumerate() {
        let signals = [
            r.position,
            r.velocity,
            r.inj_pressure,
            r.cav_pressure,
            r.hold_pressure,
            r.back_pressure,
            r.melt,
            r.mold,
            setpoints.melt_temp - 25.0,
            setpoints.melt_temp - 12.0,
            setpoints.melt_temp - 4.0 + fx.heater_offset,
            setpoints.melt_temp + 2.0 + fx.heater_offset,
            r.rpm,
            r.fill,
            r.flow,
            r.clamp,
            r.ejector_pos,
            r.ejector_speed,
            r.coolant,
            COOLANT_FLOW,
            r.cushion,
            phase.id(),
            k as f64 * config.sample_period_ms as f64 / 1000.0,
        ];
        let mut row = samples.row_mut(k);
        for (c, value) in signals.iter().enumerate() {
            let std = noise[c];
            let noisy = if std > 0.0 && c != col::PHASE_ID && c != col::ELAPSED_TIME {
                value + std * noise_rng.normal()
            } else {
                *value
            };
            if !noisy.is_finite() {
                return Err(SimError::NonFinite {
                    phase: *phase,
                    step: k,
                });
            }
            row[c] = noisy;
        }
        for (i, v) in sp.iter().enumerate() {
            row[col::SETPOINTS + i] = *v;
        }
    }
    if !(quality.fill_fraction.is_finite()
        && quality.peak_cavity_pressure.is_finite()
        && quality.min_cushion.is_finite())
    {
        return Err(SimError::NonFinite {
            phase: Phase::Ejection,
            step: rows.len(),
        });
    }

    Ok((
        SimulatedCycle {
            samples,
            setpoints: *setpoints,
            sample_period_ms: config.sample_period_ms,
            fault,
        },
        quality,
    ))
}

/// Good iff the cavity is filled, the peak cavity pressure is in band and the cushion is kept.
pub fn label_cycle(q: &QualityIndicators, thresholds: &LabelThresholds) -> Label {
    let (low, high) = thresholds.cavity_pressure_band;
    let good = q.fill_fraction >= thresholds.min_fill_fraction
        && q.peak_cavity_pressure >= low
        && q.peak_cavity_pressure <= high
        && q.min_cushion >= thresholds.min_cushion_mm;
    if good {
        Label::Good
    } else {
        Label::NotGood
    }
}

/// Generate `n` labeled synthetic cycles with exactly `round(n * good_fraction)` Good ones.
///
/// Each cycle `i` draws a fault and jittered setpoints from seed `base_seed ^ i`
/// and retries until its pre-assigned class comes out.
pub fn generate_dataset(
    config: &SimulatorConfig,
    n: usize,
    target_mix: (f64, f64),
    base_seed: u64,
) -> Result<Dataset, SimError> {
    config.validate()?;
    let (good_frac, bad_frac) = target_mix;
    if n == 0 {
        return Err(SimError::InvalidInput("n must be at least 1".into()));
    }
    if !(good_frac >= 0.0 && bad_frac >= 0.0 && (good_frac + bad_frac - 1.0).abs() <= 1e-9) {
        return Err(SimError::InvalidInput(format!(
            "class mix ({good_frac}, {bad_frac}) must be non-negative and sum to 1"
        )));
    }
    let n_good = ((n as f64) * good_frac).round() as usize;
    let mut targets: Vec<Label> = (0..n)
        .map(|i| if i < n_good { Label::Good } else { Label::NotGood })
        .collect();
    CounterRng::new(derive_seed(base_seed, &[0xC1A5])).shuffle(&mut targets);

    let tag = (mix64(base_seed) >> 32) as u32;
    let records = targets
        .par_iter()
        .enumerate()
        .map(|(i, &target)| {
            let cycle_seed = base_seed ^ i as u64;
            for attempt in 0..MAX_ATTEMPTS {
                let seed = derive_seed(cycle_seed, &[attempt as u64]);
                let mut rng = CounterRng::new(seed);
                let fault = config.fault_mix.draw(&mut rng);
                let setpoints = config.jittered_setpoints(&mut rng);
                if setpoints.validate().is_err() {
                    continue;
                }
                let (cycle, q) = simulate_cycle(&setpoints, fault, config, derive_seed(seed, &[7]))?;
                let label = label_cycle(&q, &config.label_thresholds);
                if label == target {
                    return Ok(cycle.into_record(
                        format!("c{tag:08x}-{i:05}"),
                        Source::Synthetic,
                        label,
                        q,
                    ));
                }
            }
            Err(SimError::MixUnattainable {
                cycle: i,
                target,
                attempts: MAX_ATTEMPTS,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::new("synthetic", records))
}
