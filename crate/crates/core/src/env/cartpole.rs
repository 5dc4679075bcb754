use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{get_f64, positive, EnvError, Environment, StepResult, VariableDesc};
use crate::params::{Block, ParamSpec};

const X_BOUND: f64 = 4.8;
const V_BOUND: f64 = 10.0;
const OMEGA_BOUND: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CartPoleConfig {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length, measured from the pivot to the centre of mass.
    pub pole_half_length: f64,
    pub max_force: f64,
    pub dt: f64,
    pub theta_fail_deg: f64,
    pub x_fail: f64,
}

impl Default for CartPoleConfig {
    fn default() -> Self {
        CartPoleConfig {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            max_force: 10.0,
            dt: 0.02,
            theta_fail_deg: 12.0,
            x_fail: 2.4,
        }
    }
}

impl CartPoleConfig {
    pub fn params() -> Vec<ParamSpec> {
        let d = Self::default();
        vec![
            ParamSpec::float("gravity", d.gravity, "Gravitational acceleration [m/s^2]").at_least(0.0),
            ParamSpec::float("cart_mass", d.cart_mass, "Cart mass [kg]").at_least(0.0),
            ParamSpec::float("pole_mass", d.pole_mass, "Pole mass [kg]").at_least(0.0),
            ParamSpec::float("pole_half_length", d.pole_half_length, "Pivot to pole centre of mass [m]").at_least(0.0),
            ParamSpec::float("max_force", d.max_force, "Force bound [N]").at_least(0.0),
            ParamSpec::float("dt", d.dt, "Integration step [s]").at_least(0.0),
            ParamSpec::float("theta_fail_deg", d.theta_fail_deg, "Failure angle [deg]").range(0.0, 90.0),
            ParamSpec::float("x_fail", d.x_fail, "Failure cart position [m]").range(0.0, X_BOUND),
        ]
    }

    pub fn from_block(b: &Block) -> Result<Self, EnvError> {
        let d = Self::default();
        Ok(CartPoleConfig {
            gravity: get_f64(b, "gravity", d.gravity)?,
            cart_mass: positive("cart_mass", get_f64(b, "cart_mass", d.cart_mass)?)?,
            pole_mass: positive("pole_mass", get_f64(b, "pole_mass", d.pole_mass)?)?,
            pole_half_length: positive("pole_half_length", get_f64(b, "pole_half_length", d.pole_half_length)?)?,
            max_force: positive("max_force", get_f64(b, "max_force", d.max_force)?)?,
            dt: positive("dt", get_f64(b, "dt", d.dt)?)?,
            theta_fail_deg: positive("theta_fail_deg", get_f64(b, "theta_fail_deg", d.theta_fail_deg)?)?,
            x_fail: positive("x_fail", get_f64(b, "x_fail", d.x_fail)?)?,
        })
    }

    fn theta_fail(&self) -> f64 {
        self.theta_fail_deg.to_radians()
    }
}

/// Cart and pole accelerations `(x_acc, theta_acc)` for state `[x, v, theta, omega]`.
pub fn cartpole_accelerations(s: &[f64], force: f64, cfg: &CartPoleConfig) -> (f64, f64) {
    let (theta, omega) = (s[2], s[3]);
    let total = cfg.cart_mass + cfg.pole_mass;
    let ml = cfg.pole_mass * cfg.pole_half_length;
    let (sin, cos) = (theta.sin(), theta.cos());
    let temp = (force + ml * omega * omega * sin) / total;
    let theta_acc = (cfg.gravity * sin - cos * temp)
        / (cfg.pole_half_length * (4.0 / 3.0 - cfg.pole_mass * cos * cos / total));
    let x_acc = temp - ml * theta_acc * cos / total;
    (x_acc, theta_acc)
}

pub fn cartpole_step(s: &[f64], a: &[f64], cfg: &CartPoleConfig) -> StepResult {
    let force = a[0].clamp(-cfg.max_force, cfg.max_force);
    let (x_acc, theta_acc) = cartpole_accelerations(s, force, cfg);
    let v1 = (s[1] + cfg.dt * x_acc).clamp(-V_BOUND, V_BOUND);
    let x1 = (s[0] + cfg.dt * v1).clamp(-X_BOUND, X_BOUND);
    let omega1 = (s[3] + cfg.dt * theta_acc).clamp(-OMEGA_BOUND, OMEGA_BOUND);
    let theta1 = (s[2] + cfg.dt * omega1).clamp(-std::f64::consts::PI, std::f64::consts::PI);
    let terminal = theta1.abs() > cfg.theta_fail() || x1.abs() > cfg.x_fail;
    StepResult { next_state: vec![x1, v1, theta1, omega1], reward: 1.0, terminal }
}

pub struct CartPole {
    cfg: CartPoleConfig,
    state: Vec<f64>,
    done: bool,
}

impl CartPole {
    pub fn new(cfg: CartPoleConfig) -> Self {
        CartPole { cfg, state: vec![0.0; 4], done: false }
    }
}

impl Environment for CartPole {
    fn class_name(&self) -> &'static str {
        "cart-pole"
    }

    fn state_vars(&self) -> Vec<VariableDesc> {
        vec![
            VariableDesc::new("x", "m", -X_BOUND, X_BOUND),
            VariableDesc::new("v", "m/s", -V_BOUND, V_BOUND),
            VariableDesc::new("theta", "rad", -std::f64::consts::PI, std::f64::consts::PI),
            VariableDesc::new("omega", "rad/s", -OMEGA_BOUND, OMEGA_BOUND),
        ]
    }

    fn action_vars(&self) -> Vec<VariableDesc> {
        vec![VariableDesc::new("force", "N", -self.cfg.max_force, self.cfg.max_force)]
    }

    fn dt(&self) -> f64 {
        self.cfg.dt
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = (0..4).map(|_| rng.random_range(-0.05..0.05)).collect();
        self.done = false;
        self.state.clone()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::StepAfterTerminal);
        }
        let r = cartpole_step(&self.state, action, &self.cfg);
        self.state.clone_from(&r.next_state);
        self.done = r.terminal;
        Ok(r)
    }
}
