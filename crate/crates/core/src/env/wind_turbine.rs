//! Two-mass drivetrain: rotor and generator inertias joined by a flexible
//! low-speed shaft through a gearbox of ratio `n` (generator side fast).

use std::f64::consts::PI;

use super::{get_f64, positive, EnvError, Environment, StepResult, VariableDesc};
use crate::params::{Block, ParamSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct WindTurbineConfig {
    pub air_density: f64,
    pub rotor_radius: f64,
    /// Rotor inertia [kg m^2].
    pub rotor_inertia: f64,
    /// Generator inertia [kg m^2].
    pub generator_inertia: f64,
    pub gearbox_ratio: f64,
    /// Shaft stiffness [N m / rad].
    pub shaft_stiffness: f64,
    /// Shaft damping [N m s / rad].
    pub shaft_damping: f64,
    pub max_generator_torque: f64,
    pub power_setpoint: f64,
    pub max_rotor_speed: f64,
    pub initial_rotor_speed: f64,
    pub dt: f64,
    /// Piecewise-constant wind speeds [m/s], cycled every `wind_segment_s`.
    pub wind_speeds: [f64; 4],
    pub wind_segment_s: f64,
}

impl Default for WindTurbineConfig {
    fn default() -> Self {
        WindTurbineConfig {
            air_density: 1.225,
            rotor_radius: 5.0,
            rotor_inertia: 2000.0,
            generator_inertia: 2.0,
            gearbox_ratio: 20.0,
            shaft_stiffness: 2.0e5,
            shaft_damping: 1.0e3,
            max_generator_torque: 150.0,
            power_setpoint: 20_000.0,
            max_rotor_speed: 30.0,
            initial_rotor_speed: 12.0,
            dt: 0.01,
            wind_speeds: [10.0, 11.0, 9.0, 10.5],
            wind_segment_s: 5.0,
        }
    }
}

impl WindTurbineConfig {
    pub fn params() -> Vec<ParamSpec> {
        let d = Self::default();
        let wind = (0..4)
            .map(|i| ParamSpec::float(&format!("v{i}"), d.wind_speeds[i], "Wind speed of segment [m/s]").range(0.0, 40.0))
            .chain(std::iter::once(
                ParamSpec::float("segment_s", d.wind_segment_s, "Segment duration [s]").at_least(0.0),
            ))
            .collect();
        vec![
            ParamSpec::float("air_density", d.air_density, "Air density [kg/m^3]").at_least(0.0),
            ParamSpec::float("rotor_radius", d.rotor_radius, "Blade length [m]").at_least(0.0),
            ParamSpec::float("rotor_inertia", d.rotor_inertia, "Rotor inertia [kg m^2]").at_least(0.0),
            ParamSpec::float("generator_inertia", d.generator_inertia, "Generator inertia [kg m^2]").at_least(0.0),
            ParamSpec::float("gearbox_ratio", d.gearbox_ratio, "Generator/rotor speed ratio").at_least(0.0),
            ParamSpec::float("shaft_stiffness", d.shaft_stiffness, "Shaft stiffness [N m/rad]").at_least(0.0),
            ParamSpec::float("shaft_damping", d.shaft_damping, "Shaft damping [N m s/rad]").at_least(0.0),
            ParamSpec::float("max_generator_torque", d.max_generator_torque, "Generator torque bound [N m]").at_least(0.0),
            ParamSpec::float("power_setpoint", d.power_setpoint, "Electrical power target [W]").at_least(0.0),
            ParamSpec::float("max_rotor_speed", d.max_rotor_speed, "Overspeed limit [rad/s]").at_least(0.0),
            ParamSpec::float("initial_rotor_speed", d.initial_rotor_speed, "Rotor speed at reset [rad/s]").at_least(0.0),
            ParamSpec::float("dt", d.dt, "Integration step [s]").at_least(0.0),
            ParamSpec::child("wind", wind, "Piecewise-constant wind profile"),
        ]
    }

    pub fn from_block(b: &Block) -> Result<Self, EnvError> {
        let d = Self::default();
        let f = |k: &str, def: f64| get_f64(b, k, def);
        let mut wind_speeds = d.wind_speeds;
        let mut wind_segment_s = d.wind_segment_s;
        if let Some(w) = b.get("wind") {
            let w = w
                .as_block()
                .ok_or_else(|| EnvError::InvalidConfig("'wind' must be a block".into()))?;
            for (i, slot) in wind_speeds.iter_mut().enumerate() {
                *slot = get_f64(w, &format!("v{i}"), *slot)?;
            }
            wind_segment_s = get_f64(w, "segment_s", wind_segment_s)?;
        }
        let cfg = WindTurbineConfig {
            air_density: positive("air_density", f("air_density", d.air_density)?)?,
            rotor_radius: positive("rotor_radius", f("rotor_radius", d.rotor_radius)?)?,
            rotor_inertia: positive("rotor_inertia", f("rotor_inertia", d.rotor_inertia)?)?,
            generator_inertia: positive("generator_inertia", f("generator_inertia", d.generator_inertia)?)?,
            gearbox_ratio: positive("gearbox_ratio", f("gearbox_ratio", d.gearbox_ratio)?)?,
            shaft_stiffness: positive("shaft_stiffness", f("shaft_stiffness", d.shaft_stiffness)?)?,
            shaft_damping: f("shaft_damping", d.shaft_damping)?,
            max_generator_torque: positive("max_generator_torque", f("max_generator_torque", d.max_generator_torque)?)?,
            power_setpoint: positive("power_setpoint", f("power_setpoint", d.power_setpoint)?)?,
            max_rotor_speed: positive("max_rotor_speed", f("max_rotor_speed", d.max_rotor_speed)?)?,
            initial_rotor_speed: f("initial_rotor_speed", d.initial_rotor_speed)?,
            dt: positive("dt", f("dt", d.dt)?)?,
            wind_speeds,
            wind_segment_s: positive("wind/segment_s", wind_segment_s)?,
        };
        if cfg.shaft_damping < 0.0 || cfg.wind_speeds.iter().any(|v| *v < 0.0) {
            return Err(EnvError::InvalidConfig("damping and wind speeds must be non-negative".into()));
        }
        Ok(cfg)
    }

    pub fn wind_at(&self, t: f64) -> f64 {
        let segment = (t / self.wind_segment_s).floor() as usize % self.wind_speeds.len();
        self.wind_speeds[segment]
    }

    /// Angular frequency of the undamped torsional mode [rad/s].
    pub fn torsional_frequency(&self) -> f64 {
        let n = self.gearbox_ratio;
        (self.shaft_stiffness * (1.0 / self.rotor_inertia + 1.0 / (n * n * self.generator_inertia))).sqrt()
    }
}

/// Power coefficient of a pitch-zero rotor as a function of tip-speed ratio.
pub fn power_coefficient(tsr: f64) -> f64 {
    if tsr <= 0.0 {
        return 0.0;
    }
    let inv = 1.0 / tsr - 0.035;
    if inv <= 0.0 {
        return 0.0;
    }
    (0.5176 * (116.0 * inv - 5.0) * (-21.0 * inv).exp() + 0.0068 * tsr).clamp(0.0, 16.0 / 27.0)
}

/// Aerodynamic torque on the rotor [N m].
pub fn aero_torque(rotor_speed: f64, wind: f64, cfg: &WindTurbineConfig) -> f64 {
    if wind <= 0.0 {
        return 0.0;
    }
    let r = cfg.rotor_radius;
    let tsr = rotor_speed.max(0.0) * r / wind;
    // Cp/tsr tends to 0.0068 as the rotor stalls
    let cq = if tsr < 1e-6 { 0.0068 } else { power_coefficient(tsr) / tsr };
    0.5 * cfg.air_density * PI * r * r * r * wind * wind * cq
}

/// Time derivatives `(d omega_r, d omega_g, d torsion)` of the drivetrain state
/// `[omega_r, omega_g, torsion]` under the given aerodynamic and generator torques.
pub fn drivetrain_rates(s: &[f64], aero: f64, generator: f64, cfg: &WindTurbineConfig) -> (f64, f64, f64) {
    let n = cfg.gearbox_ratio;
    let slip = s[0] - s[1] / n;
    let shaft = cfg.shaft_stiffness * s[2] + cfg.shaft_damping * slip;
    (
        (aero - shaft) / cfg.rotor_inertia,
        (shaft / n - generator) / cfg.generator_inertia,
        slip,
    )
}

fn bounds(cfg: &WindTurbineConfig) -> [(f64, f64); 3] {
    [
        (0.0, 2.0 * cfg.max_rotor_speed),
        (0.0, 2.0 * cfg.gearbox_ratio * cfg.max_rotor_speed),
        (-0.5, 0.5),
    ]
}

pub fn windturbine_step(s: &[f64], a: &[f64], cfg: &WindTurbineConfig, wind: f64) -> StepResult {
    let tg = a[0].clamp(0.0, cfg.max_generator_torque);
    let ta = aero_torque(s[0], wind, cfg);
    let (dwr, dwg, _) = drivetrain_rates(s, ta, tg, cfg);
    let b = bounds(cfg);
    let wr = (s[0] + cfg.dt * dwr).clamp(b[0].0, b[0].1);
    let wg = (s[1] + cfg.dt * dwg).clamp(b[1].0, b[1].1);
    let torsion = (s[2] + cfg.dt * (wr - wg / cfg.gearbox_ratio)).clamp(b[2].0, b[2].1);
    let power = tg * wg;
    let err = (power - cfg.power_setpoint) / cfg.power_setpoint;
    StepResult {
        next_state: vec![wr, wg, torsion],
        reward: -(err * err),
        terminal: wr > cfg.max_rotor_speed,
    }
}

pub struct WindTurbine {
    cfg: WindTurbineConfig,
    state: Vec<f64>,
    time: f64,
    steps: u64,
    done: bool,
}

impl WindTurbine {
    pub fn new(cfg: WindTurbineConfig) -> Self {
        let state = vec![cfg.initial_rotor_speed, cfg.initial_rotor_speed * cfg.gearbox_ratio, 0.0];
        WindTurbine { cfg, state, time: 0.0, steps: 0, done: false }
    }
}

impl Environment for WindTurbine {
    fn class_name(&self) -> &'static str {
        "wind-turbine"
    }

    fn state_vars(&self) -> Vec<VariableDesc> {
        let b = bounds(&self.cfg);
        vec![
            VariableDesc::new("omega_r", "rad/s", b[0].0, b[0].1),
            VariableDesc::new("omega_g", "rad/s", b[1].0, b[1].1),
            VariableDesc::new("torsion", "rad", b[2].0, b[2].1),
        ]
    }

    fn action_vars(&self) -> Vec<VariableDesc> {
        vec![VariableDesc::new("generator_torque", "N m", 0.0, self.cfg.max_generator_torque)]
    }

    fn dt(&self) -> f64 {
        self.cfg.dt
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        let w = self.cfg.initial_rotor_speed;
        self.state = vec![w, w * self.cfg.gearbox_ratio, 0.0];
        self.time = 0.0;
        self.steps = 0;
        self.done = false;
        self.state.clone()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::StepAfterTerminal);
        }
        let wind = self.cfg.wind_at(self.time);
        let r = windturbine_step(&self.state, action, &self.cfg, wind);
        self.steps += 1;
        self.time = self.steps as f64 * self.cfg.dt;
        self.state.clone_from(&r.next_state);
        self.done = r.terminal;
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torque_balance_is_steady() {
        let cfg = WindTurbineConfig::default();
        let s = [2.0, 40.0, 0.01];
        let shaft = cfg.shaft_stiffness * s[2];
        let (dwr, dwg, dth) = drivetrain_rates(&s, shaft, shaft / cfg.gearbox_ratio, &cfg);
        assert_eq!((dwr, dwg, dth), (0.0, 0.0, 0.0));
    }

    #[test]
    fn rest_with_no_wind_is_unchanged() {
        let cfg = WindTurbineConfig::default();
        let r = windturbine_step(&[0.0, 0.0, 0.0], &[0.0], &cfg, 0.0);
        assert_eq!(r.next_state, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn torsional_resonance_matches_two_mass_formula() {
        let cfg = WindTurbineConfig { shaft_damping: 0.0, dt: 1e-4, ..Default::default() };
        let expected_hz = cfg.torsional_frequency() / (2.0 * PI);
        // speeds are clamped at zero from below, so oscillate around a spinning train
        let base = 10.0;
        let mut s = vec![base, base * cfg.gearbox_ratio, 1e-3];
        let mut prev = s[2];
        let mut crossings = vec![];
        for k in 1..=20_000 {
            s = windturbine_step(&s, &[0.0], &cfg, 0.0).next_state;
            if prev > 0.0 && s[2] <= 0.0 {
                crossings.push(k as f64 * cfg.dt);
            }
            prev = s[2];
        }
        assert!(crossings.len() > 5);
        let periods = crossings.len() - 1;
        let measured_hz = periods as f64 / (crossings[periods] - crossings[0]);
        assert!((measured_hz - expected_hz).abs() / expected_hz < 0.01, "{measured_hz} vs {expected_hz}");
    }

    #[test]
    fn power_coefficient_peak() {
        let best = (1..200).map(|i| power_coefficient(i as f64 * 0.1)).fold(0.0, f64::max);
        assert!(best > 0.45 && best < 0.5);
        assert_eq!(power_coefficient(0.0), 0.0);
        assert_eq!(power_coefficient(40.0), 0.0);
    }

    #[test]
    fn overspeed_terminates() {
        let cfg = WindTurbineConfig::default();
        let r = windturbine_step(&[cfg.max_rotor_speed + 0.5, 600.0, 0.0], &[0.0], &cfg, 20.0);
        assert!(r.terminal);
    }

    #[test]
    fn wind_profile_cycles() {
        let cfg = WindTurbineConfig::default();
        assert_eq!(cfg.wind_at(0.0), 10.0);
        assert_eq!(cfg.wind_at(5.0), 11.0);
        assert_eq!(cfg.wind_at(20.0), 10.0);
    }
}
