use super::{get_f64, positive, EnvError, Environment, StepResult, VariableDesc};
use crate::params::{Block, ParamSpec};

pub const X_MIN: f64 = -1.2;
pub const X_MAX: f64 = 0.5;
pub const V_MAX: f64 = 0.07;

#[derive(Debug, Clone, PartialEq)]
pub struct MountainCarConfig {
    pub force: f64,
    pub gravity: f64,
}

impl Default for MountainCarConfig {
    fn default() -> Self {
        MountainCarConfig { force: 0.001, gravity: 0.0025 }
    }
}

impl MountainCarConfig {
    pub fn params() -> Vec<ParamSpec> {
        let d = Self::default();
        vec![
            ParamSpec::float("force", d.force, "Throttle gain per step").at_least(0.0),
            ParamSpec::float("gravity", d.gravity, "Hill slope gain per step").at_least(0.0),
        ]
    }

    pub fn from_block(b: &Block) -> Result<Self, EnvError> {
        let d = Self::default();
        Ok(MountainCarConfig {
            force: positive("force", get_f64(b, "force", d.force)?)?,
            gravity: get_f64(b, "gravity", d.gravity)?,
        })
    }
}

/// One step of the classic mountain-car dynamics. State is `[x, v]`, the
/// action is a throttle in `[-1, 1]`.
pub fn mountain_car_step(s: &[f64], a: &[f64], cfg: &MountainCarConfig) -> StepResult {
    let (x, v) = (s[0], s[1]);
    let throttle = a[0].clamp(-1.0, 1.0);
    let mut v1 = (v + cfg.force * throttle - cfg.gravity * (3.0 * x).cos()).clamp(-V_MAX, V_MAX);
    let x1 = (x + v1).clamp(X_MIN, X_MAX);
    if x1 <= X_MIN {
        v1 = 0.0;
    }
    let terminal = x1 >= X_MAX;
    StepResult {
        next_state: vec![x1, v1],
        reward: if terminal { 0.0 } else { -1.0 },
        terminal,
    }
}

pub struct MountainCar {
    cfg: MountainCarConfig,
    state: Vec<f64>,
    done: bool,
}

impl MountainCar {
    pub fn new(cfg: MountainCarConfig) -> Self {
        MountainCar { cfg, state: vec![-0.5, 0.0], done: false }
    }
}

impl Environment for MountainCar {
    fn class_name(&self) -> &'static str {
        "mountain-car"
    }

    fn state_vars(&self) -> Vec<VariableDesc> {
        vec![
            VariableDesc::new("x", "m", X_MIN, X_MAX),
            VariableDesc::new("v", "m/step", -V_MAX, V_MAX),
        ]
    }

    fn action_vars(&self) -> Vec<VariableDesc> {
        vec![VariableDesc::new("action", "", -1.0, 1.0)]
    }

    fn dt(&self) -> f64 {
        1.0
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.state = vec![-0.5, 0.0];
        self.done = false;
        self.state.clone()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::StepAfterTerminal);
        }
        let r = mountain_car_step(&self.state, action, &self.cfg);
        self.state.clone_from(&r.next_state);
        self.done = r.terminal;
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Expected values computed independently with Python's math module.
    #[test]
    fn single_step_from_rest() {
        let r = mountain_car_step(&[-0.5, 0.0], &[1.0], &MountainCarConfig::default());
        assert!((r.next_state[1] - 0.0008231569958307428).abs() < 1e-12);
        assert!((r.next_state[0] - -0.49917684300416926).abs() < 1e-12);
        assert_eq!(r.reward, -1.0);
        assert!(!r.terminal);
    }

    #[test]
    fn reaching_goal_is_terminal() {
        let r = mountain_car_step(&[0.49, 0.07], &[0.0], &MountainCarConfig::default());
        assert!(r.terminal);
        assert_eq!(r.reward, 0.0);
        assert_eq!(r.next_state[0], X_MAX);
    }

    #[test]
    fn stationary_point() {
        let x = -std::f64::consts::PI / 6.0;
        let r = mountain_car_step(&[x, 0.0], &[0.0], &MountainCarConfig::default());
        assert!(r.next_state[1].abs() < 1e-18);
    }

    #[test]
    fn left_wall_stops_car() {
        let r = mountain_car_step(&[-1.19, -0.07], &[-1.0], &MountainCarConfig::default());
        assert_eq!(r.next_state, vec![X_MIN, 0.0]);
    }

    #[test]
    fn reset_is_fixed() {
        let mut env = MountainCar::new(MountainCarConfig::default());
        assert_eq!(env.reset(1), vec![-0.5, 0.0]);
        assert_eq!(env.reset(99), vec![-0.5, 0.0]);
    }
}
