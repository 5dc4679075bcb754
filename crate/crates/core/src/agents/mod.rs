//! Controllers and learning agents over tile-coded linear approximators.
//!
//! The update rules live in small pure-ish functions ([`qlearn`], [`critic`],
//! [`actor`], [`controller`]); [`runtime`] wires them into stateful agents
//! that a runner can drive episode by episode.

pub mod actor;
pub mod controller;
pub mod critic;
pub mod features;
pub mod qlearn;
pub mod runtime;
pub mod vfa;

use thiserror::Error;

use crate::params::{Block, ParamSpec, ParamValue};
use crate::schema::Category;

pub use features::{Features, TileCoder};
pub use runtime::{build, Agent, Mode};
pub use vfa::{EligibilityTrace, LinearVfa, TraceKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("non-finite value produced: {0}")]
    NonFinite(String),
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("unknown agent class '{0}'")]
    UnknownClass(String),
}

/// Hyperparameters shared by the update rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub sigma: f64,
    pub beta: f64,
    pub trace: TraceKind,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            alpha: 0.1,
            gamma: 0.99,
            lambda: 0.0,
            epsilon: 0.0,
            sigma: 0.1,
            beta: 0.01,
            trace: TraceKind::Accumulating,
        }
    }
}

impl LearnerConfig {
    pub fn check(&self) -> Result<(), AgentError> {
        let unit = [("alpha", self.alpha), ("gamma", self.gamma), ("lambda", self.lambda), ("epsilon", self.epsilon)];
        for (name, x) in unit {
            if !(0.0..=1.0).contains(&x) {
                return Err(AgentError::Config(format!("{name} must lie in [0, 1], got {x}")));
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(AgentError::Config(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(AgentError::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        Ok(())
    }
}

pub const AGENT_CLASSES: [&str; 4] = ["actor-critic", "double-q-learning", "q-learning", "sarsa"];
pub const CONTROLLER_CLASSES: [&str; 2] = ["lqr", "pid"];
pub const CRITIC_CLASSES: [&str; 3] = ["tdc", "td-lambda", "true-online-td"];
pub const ACTOR_CLASSES: [&str; 2] = ["cacla", "regular-gradient"];

/// Classes that may appear as the `class` of a descriptor's agent block.
pub fn runnable_classes() -> impl Iterator<Item = &'static str> {
    AGENT_CLASSES.into_iter().chain(CONTROLLER_CLASSES)
}

fn tile_coding() -> ParamSpec {
    ParamSpec::child(
        "tile_coding",
        vec![
            ParamSpec::int("num_tilings", 8, "Number of offset tilings").at_least(1.0),
            ParamSpec::int("tiles_per_dim", 8, "Tiles along each state dimension").at_least(1.0),
        ],
        "Tile-coding feature map over the state bounds",
    )
}

fn alpha(name: &str, default: f64) -> ParamSpec {
    ParamSpec::float(name, default, "Step size, divided by the number of tilings").range(0.0, 1.0)
}

fn gamma() -> ParamSpec {
    ParamSpec::float("gamma", 0.99, "Discount factor").range(0.0, 1.0)
}

fn lambda(default: f64) -> ParamSpec {
    ParamSpec::float("lambda", default, "Trace decay").range(0.0, 1.0)
}

fn trace() -> ParamSpec {
    ParamSpec::choice("trace", "accumulating", &["accumulating", "replacing"], "Eligibility trace kind")
}

fn epsilon() -> ParamSpec {
    ParamSpec::float("epsilon", 0.05, "Exploration rate of the epsilon-greedy policy").range(0.0, 1.0)
}

fn action_points() -> ParamSpec {
    ParamSpec::int("action_points", 11, "Grid points per action dimension").at_least(2.0)
}

/// Parameters of a critic, as they appear in an actor-critic block.
pub fn critic_params(class: &str) -> Result<Vec<ParamSpec>, AgentError> {
    let base = vec![alpha("critic_alpha", 0.1), lambda(0.0)];
    Ok(match class {
        "td-lambda" => [base, vec![trace()]].concat(),
        "true-online-td" => base,
        "tdc" => [
            base,
            vec![ParamSpec::float("beta", 0.01, "Step size of the auxiliary weights").at_least(0.0)],
        ]
        .concat(),
        other => return Err(AgentError::UnknownClass(other.into())),
    })
}

pub fn actor_params(class: &str) -> Result<Vec<ParamSpec>, AgentError> {
    match class {
        "cacla" | "regular-gradient" => Ok(vec![alpha("actor_alpha", 0.01)]),
        other => Err(AgentError::UnknownClass(other.into())),
    }
}

/// Parameter declarations of an agent, controller, critic or actor class.
pub fn class_params(class: &str) -> Result<Vec<ParamSpec>, AgentError> {
    Ok(match class {
        "sarsa" | "q-learning" => vec![
            tile_coding(),
            action_points(),
            alpha("alpha", 0.5),
            gamma(),
            epsilon(),
            lambda(0.9),
            trace(),
        ],
        "double-q-learning" => vec![tile_coding(), action_points(), alpha("alpha", 0.5), gamma(), epsilon()],
        "actor-critic" => {
            let mut critic = ParamSpec::choice("critic", "td-lambda", &CRITIC_CLASSES, "State-value critic");
            for c in CRITIC_CLASSES {
                critic = critic.with_children(c, critic_params(c)?);
            }
            let mut actor = ParamSpec::choice("actor", "cacla", &ACTOR_CLASSES, "Policy update rule");
            for a in ACTOR_CLASSES {
                actor = actor.with_children(a, actor_params(a)?);
            }
            vec![
                tile_coding(),
                gamma(),
                ParamSpec::float("sigma", 0.1, "Std of the Gaussian exploration noise").at_least(0.0),
                critic,
                actor,
            ]
        }
        "pid" => vec![
            ParamSpec::float("kp", 1.0, "Proportional gain"),
            ParamSpec::float("ki", 0.0, "Integral gain"),
            ParamSpec::float("kd", 0.0, "Derivative gain"),
            ParamSpec::float("setpoint", 0.0, "Target of the controlled state component"),
            ParamSpec::int("input_index", 0, "Index of the controlled state component").at_least(0.0),
        ],
        "lqr" => vec![ParamSpec::child(
            "gains",
            (0..4).map(|i| ParamSpec::float(&format!("k{i}"), 0.0, "Gain on state component")).collect(),
            "Row of K in u = -K s",
        )],
        other => return critic_params(other).or_else(|_| actor_params(other)),
    })
}

pub fn class_doc(class: &str) -> &'static str {
    match class {
        "sarsa" => "On-policy TD control with eligibility traces",
        "q-learning" => "Off-policy TD control with Watkins traces",
        "double-q-learning" => "Q-learning with two decoupled value tables",
        "actor-critic" => "Linear Gaussian actor trained from a state-value critic",
        "pid" => "Proportional-integral-derivative controller on one state component",
        "lqr" => "Linear state-feedback controller",
        "td-lambda" => "Linear TD(lambda)",
        "true-online-td" => "True online TD(lambda) with dutch traces",
        "tdc" => "TD with gradient correction",
        "cacla" => "Moves the policy toward actions that beat the critic's estimate",
        "regular-gradient" => "Likelihood-ratio gradient ascent on a Gaussian policy",
        _ => "",
    }
}

pub fn category(class: &str) -> Option<Category> {
    if AGENT_CLASSES.contains(&class) {
        Some(Category::Agent)
    } else if CONTROLLER_CLASSES.contains(&class) {
        Some(Category::Controller)
    } else if CRITIC_CLASSES.contains(&class) {
        Some(Category::Critic)
    } else if ACTOR_CLASSES.contains(&class) {
        Some(Category::Actor)
    } else {
        None
    }
}

pub(crate) fn get<'a>(b: &'a Block, key: &str) -> Result<&'a ParamValue, AgentError> {
    b.get(key).ok_or_else(|| AgentError::Config(format!("missing parameter '{key}'")))
}

pub(crate) fn get_f64(b: &Block, key: &str) -> Result<f64, AgentError> {
    get(b, key)?.as_f64().ok_or_else(|| AgentError::Config(format!("'{key}' must be a number")))
}

pub(crate) fn get_usize(b: &Block, key: &str) -> Result<usize, AgentError> {
    get(b, key)?
        .as_i64()
        .filter(|&i| i >= 0)
        .map(|i| i as usize)
        .ok_or_else(|| AgentError::Config(format!("'{key}' must be a non-negative integer")))
}

pub(crate) fn get_str<'a>(b: &'a Block, key: &str) -> Result<&'a str, AgentError> {
    get(b, key)?.as_str().ok_or_else(|| AgentError::Config(format!("'{key}' must be a choice")))
}

pub(crate) fn get_block<'a>(b: &'a Block, key: &str) -> Result<&'a Block, AgentError> {
    get(b, key)?.as_block().ok_or_else(|| AgentError::Config(format!("'{key}' must be a block")))
}

pub(crate) fn trace_kind(name: &str) -> Result<TraceKind, AgentError> {
    match name {
        "accumulating" => Ok(TraceKind::Accumulating),
        "replacing" => Ok(TraceKind::Replacing),
        other => Err(AgentError::Config(format!("unknown trace kind '{other}'"))),
    }
}
