use std::f64::consts::PI;

use super::{get_f64, positive, EnvError, Environment, StepResult, VariableDesc};
use crate::params::{Block, ParamSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct PendulumConfig {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub max_torque: f64,
    /// Viscous friction coefficient.
    pub friction: f64,
    pub dt: f64,
    pub max_speed: f64,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        PendulumConfig {
            mass: 1.0,
            length: 1.0,
            gravity: 9.8,
            max_torque: 2.0,
            friction: 0.01,
            dt: 0.01,
            max_speed: 4.0 * PI,
        }
    }
}

impl PendulumConfig {
    pub fn params() -> Vec<ParamSpec> {
        let d = Self::default();
        vec![
            ParamSpec::float("mass", d.mass, "Bob mass [kg]").at_least(0.0),
            ParamSpec::float("length", d.length, "Rod length [m]").at_least(0.0),
            ParamSpec::float("gravity", d.gravity, "Gravitational acceleration [m/s^2]").at_least(0.0),
            ParamSpec::float("max_torque", d.max_torque, "Torque bound [N m]").at_least(0.0),
            ParamSpec::float("friction", d.friction, "Viscous friction [1/s]").at_least(0.0),
            ParamSpec::float("dt", d.dt, "Integration step [s]").at_least(0.0),
            ParamSpec::float("max_speed", d.max_speed, "Angular speed bound [rad/s]").at_least(0.0),
        ]
    }

    pub fn from_block(b: &Block) -> Result<Self, EnvError> {
        let d = Self::default();
        Ok(PendulumConfig {
            mass: positive("mass", get_f64(b, "mass", d.mass)?)?,
            length: positive("length", get_f64(b, "length", d.length)?)?,
            gravity: get_f64(b, "gravity", d.gravity)?,
            max_torque: positive("max_torque", get_f64(b, "max_torque", d.max_torque)?)?,
            friction: get_f64(b, "friction", d.friction)?,
            dt: positive("dt", get_f64(b, "dt", d.dt)?)?,
            max_speed: positive("max_speed", get_f64(b, "max_speed", d.max_speed)?)?,
        })
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t - 2.0 * PI
    } else {
        t
    }
}

/// `sin(theta)` evaluated through `sin(pi - theta)` on the lower half circle,
/// which makes the hanging position an exact zero.
fn reduced_sin(theta: f64) -> f64 {
    if theta > PI / 2.0 {
        (PI - theta).sin()
    } else if theta < -PI / 2.0 {
        (-PI - theta).sin()
    } else {
        theta.sin()
    }
}

/// Angular acceleration with `theta = 0` upright.
pub fn pendulum_acceleration(theta: f64, omega: f64, torque: f64, cfg: &PendulumConfig) -> f64 {
    cfg.gravity / cfg.length * reduced_sin(theta) + torque / (cfg.mass * cfg.length * cfg.length)
        - cfg.friction * omega
}

/// Kinetic plus potential energy, zero potential at the pivot height.
pub fn pendulum_energy(theta: f64, omega: f64, cfg: &PendulumConfig) -> f64 {
    let (m, l) = (cfg.mass, cfg.length);
    0.5 * m * l * l * omega * omega + m * cfg.gravity * l * theta.cos()
}

/// One velocity-Verlet step: half kick, drift, half kick.
pub fn pendulum_step(s: &[f64], a: &[f64], cfg: &PendulumConfig) -> StepResult {
    let torque = a[0].clamp(-cfg.max_torque, cfg.max_torque);
    let half = 0.5 * cfg.dt;
    let w_half = (s[1] + half * pendulum_acceleration(s[0], s[1], torque, cfg)).clamp(-cfg.max_speed, cfg.max_speed);
    let theta_raw = s[0] + cfg.dt * w_half;
    let omega = (w_half + half * pendulum_acceleration(theta_raw, w_half, torque, cfg)).clamp(-cfg.max_speed, cfg.max_speed);
    let theta = wrap_angle(theta_raw);
    let reward = -(theta * theta + 0.1 * omega * omega + 0.001 * torque * torque);
    StepResult { next_state: vec![theta, omega], reward, terminal: false }
}

pub struct Pendulum {
    cfg: PendulumConfig,
    state: Vec<f64>,
}

impl Pendulum {
    pub fn new(cfg: PendulumConfig) -> Self {
        Pendulum { cfg, state: vec![PI, 0.0] }
    }
}

impl Environment for Pendulum {
    fn class_name(&self) -> &'static str {
        "pendulum"
    }

    fn state_vars(&self) -> Vec<VariableDesc> {
        vec![
            VariableDesc::new("theta", "rad", -PI, PI),
            VariableDesc::new("omega", "rad/s", -self.cfg.max_speed, self.cfg.max_speed),
        ]
    }

    fn action_vars(&self) -> Vec<VariableDesc> {
        vec![VariableDesc::new("torque", "N m", -self.cfg.max_torque, self.cfg.max_torque)]
    }

    fn dt(&self) -> f64 {
        self.cfg.dt
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.state = vec![PI, 0.0];
        self.state.clone()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        let r = pendulum_step(&self.state, action, &self.cfg);
        self.state.clone_from(&r.next_state);
        Ok(r)
    }
}
