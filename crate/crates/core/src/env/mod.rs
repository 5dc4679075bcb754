//! Discrete-time simulations of the built-in control tasks.
//!
//! Every task is split into a plain configuration struct, a pure step
//! function and a small stateful wrapper implementing [`Environment`] that
//! tracks the terminal flag and simulation time.

mod cartpole;
mod mountain_car;
mod pendulum;
mod wind_turbine;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{Block, ParamSpec};

pub use cartpole::{cartpole_accelerations, cartpole_step, CartPole, CartPoleConfig};
pub use mountain_car::{mountain_car_step, MountainCar, MountainCarConfig};
pub use pendulum::{pendulum_acceleration, pendulum_energy, pendulum_step, wrap_angle, Pendulum, PendulumConfig};
pub use wind_turbine::{
    aero_torque, drivetrain_rates, power_coefficient, windturbine_step, WindTurbine, WindTurbineConfig,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),
    #[error("step called on a terminal state; reset first")]
    StepAfterTerminal,
    #[error("unknown environment class '{0}'")]
    UnknownClass(String),
}

/// A loggable variable: name, units and closed bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableDesc {
    pub name: String,
    pub units: String,
    #[serde(with = "lower_bound")]
    pub min: f64,
    #[serde(with = "upper_bound")]
    pub max: f64,
}

/// Unbounded ends are written as `null`.
macro_rules! bound_serde {
    ($name:ident, $inf:expr) => {
        mod $name {
            use serde::{Deserialize, Deserializer, Serializer};

            pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
                if x.is_finite() {
                    s.serialize_f64(*x)
                } else {
                    s.serialize_none()
                }
            }

            pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
                Ok(Option::<f64>::deserialize(d)?.unwrap_or($inf))
            }
        }
    };
}
bound_serde!(lower_bound, f64::NEG_INFINITY);
bound_serde!(upper_bound, f64::INFINITY);

impl VariableDesc {
    pub fn new(name: &str, units: &str, min: f64, max: f64) -> Self {
        VariableDesc { name: name.into(), units: units.into(), min, max }
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

pub trait Environment: Send {
    fn class_name(&self) -> &'static str;
    fn state_vars(&self) -> Vec<VariableDesc>;
    fn action_vars(&self) -> Vec<VariableDesc>;
    /// Integration step in seconds.
    fn dt(&self) -> f64;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError>;
}

pub const CLASSES: [&str; 4] = ["cart-pole", "mountain-car", "pendulum", "wind-turbine"];

pub(crate) fn class_doc(class: &str) -> &'static str {
    match class {
        "mountain-car" => "Under-powered car that must rock back and forth to climb a hill",
        "cart-pole" => "Pole balanced on a cart pushed by a bounded horizontal force",
        "pendulum" => "Torque-limited pendulum that must be swung up and held upright",
        "wind-turbine" => "Two-mass variable-speed wind turbine drivetrain tracking a power setpoint",
        _ => "",
    }
}

/// Parameter declarations of an environment class.
pub fn class_params(class: &str) -> Result<Vec<ParamSpec>, EnvError> {
    match class {
        "mountain-car" => Ok(MountainCarConfig::params()),
        "cart-pole" => Ok(CartPoleConfig::params()),
        "pendulum" => Ok(PendulumConfig::params()),
        "wind-turbine" => Ok(WindTurbineConfig::params()),
        other => Err(EnvError::UnknownClass(other.to_string())),
    }
}

/// Builds an environment from its class name and a parameter block.
pub fn build(class: &str, block: &Block) -> Result<Box<dyn Environment>, EnvError> {
    Ok(match class {
        "mountain-car" => Box::new(MountainCar::new(MountainCarConfig::from_block(block)?)),
        "cart-pole" => Box::new(CartPole::new(CartPoleConfig::from_block(block)?)),
        "pendulum" => Box::new(Pendulum::new(PendulumConfig::from_block(block)?)),
        "wind-turbine" => Box::new(WindTurbine::new(WindTurbineConfig::from_block(block)?)),
        other => return Err(EnvError::UnknownClass(other.to_string())),
    })
}

/// Ordered loggable variables: state components, action components, reward.
pub fn env_variables(class: &str) -> Result<Vec<VariableDesc>, EnvError> {
    let params = class_params(class)?;
    let env = build(class, &crate::params::defaults(&params))?;
    let mut vars = env.state_vars();
    vars.extend(env.action_vars());
    vars.push(VariableDesc::new("reward", "", f64::NEG_INFINITY, f64::INFINITY));
    Ok(vars)
}

pub(crate) fn get_f64(block: &Block, key: &str, default: f64) -> Result<f64, EnvError> {
    match block.get(key) {
        None => Ok(default),
        Some(v) => v
            .as_f64()
            .ok_or_else(|| EnvError::InvalidConfig(format!("'{key}' must be a number"))),
    }
}

pub(crate) fn positive(name: &str, x: f64) -> Result<f64, EnvError> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(EnvError::InvalidConfig(format!("'{name}' must be positive, got {x}")))
    }
}
