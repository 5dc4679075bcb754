//! Linear deterministic-mean policies and their actor updates.

use rand::Rng;
use rand_distr::StandardNormal;

use super::features::Features;
use super::{AgentError, LearnerConfig};

/// `pi(s)_k = theta_k . phi(s)` for every action dimension `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    pub weights: Vec<Vec<f64>>,
}

impl LinearPolicy {
    pub fn zeros(action_dims: usize, num_features: usize) -> Self {
        LinearPolicy { weights: vec![vec![0.0; num_features]; action_dims] }
    }

    pub fn mean(&self, phi: &Features) -> Vec<f64> {
        self.weights.iter().map(|w| phi.dot(w)).collect()
    }

    fn step_toward(&mut self, phi: &Features, scale: &[f64]) -> Result<(), AgentError> {
        for (w, &s) in self.weights.iter_mut().zip(scale) {
            for (i, x) in phi.iter() {
                w[i] += s * x;
                if !w[i].is_finite() {
                    return Err(AgentError::NonFinite(format!("actor weight {i}")));
                }
            }
        }
        Ok(())
    }
}

/// CACLA: only when the critic's TD error is positive, move `pi(s)` toward
/// the executed action. Depends on `delta` only through its sign.
pub fn cacla_update(
    actor: &mut LinearPolicy,
    delta: f64,
    phi: &Features,
    executed: &[f64],
    cfg: &LearnerConfig,
) -> Result<(), AgentError> {
    if delta <= 0.0 {
        return Ok(());
    }
    let mean = actor.mean(phi);
    let scale: Vec<f64> = executed.iter().zip(&mean).map(|(a, m)| cfg.alpha * (a - m)).collect();
    actor.step_toward(phi, &scale)
}

/// Likelihood-ratio policy gradient for a Gaussian policy with fixed `sigma`:
/// `theta += alpha delta (a - pi(s)) / sigma^2 phi(s)`.
pub fn gradient_actor_update(
    actor: &mut LinearPolicy,
    delta: f64,
    phi: &Features,
    executed: &[f64],
    cfg: &LearnerConfig,
) -> Result<(), AgentError> {
    let var = cfg.sigma * cfg.sigma;
    if var <= 0.0 {
        return Err(AgentError::Config("gradient actor needs sigma > 0".into()));
    }
    let mean = actor.mean(phi);
    let scale: Vec<f64> = executed
        .iter()
        .zip(&mean)
        .map(|(a, m)| cfg.alpha * delta * (a - m) / var)
        .collect();
    actor.step_toward(phi, &scale)
}

/// `mean + sigma z` per dimension with standard normal `z`, clamped into `bounds`.
pub fn gaussian_explore<R: Rng + ?Sized>(mean: &[f64], sigma: f64, rng: &mut R, bounds: &[(f64, f64)]) -> Vec<f64> {
    mean.iter()
        .zip(bounds)
        .map(|(&m, &(lo, hi))| {
            let z: f64 = rng.sample(StandardNormal);
            (m + sigma * z).clamp(lo, hi)
        })
        .collect()
}
