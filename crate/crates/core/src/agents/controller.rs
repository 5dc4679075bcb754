//! Fixed feedback controllers.

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

/// `u = Kp e + Ki int(e) + Kd de`, clamped to `bounds`.
pub fn pid_action(error: f64, integral: f64, derivative: f64, gains: &PidGains, bounds: (f64, f64)) -> f64 {
    (gains.kp * error + gains.ki * integral + gains.kd * derivative).clamp(bounds.0, bounds.1)
}

/// `u = -K s`, one row of `K` per action dimension, each clamped to its bounds.
pub fn lqr_action(state: &[f64], gain_rows: &[Vec<f64>], bounds: &[(f64, f64)]) -> Vec<f64> {
    gain_rows
        .iter()
        .zip(bounds)
        .map(|(row, &(lo, hi))| {
            let u: f64 = row.iter().zip(state).map(|(k, s)| k * s).sum();
            (-u).clamp(lo, hi)
        })
        .collect()
}

/// Error integrator/differentiator for one PID loop, per control step.
#[derive(Debug, Clone, Default)]
pub struct PidState {
    integral: f64,
    previous: Option<f64>,
}

impl PidState {
    /// Returns `(error, integral, derivative)` after observing `error`.
    pub fn observe(&mut self, error: f64) -> (f64, f64, f64) {
        self.integral += error;
        let derivative = self.previous.map_or(0.0, |p| error - p);
        self.previous = Some(error);
        (error, self.integral, derivative)
    }

    pub fn reset(&mut self) {
        *self = PidState::default();
    }
}
