//! Action-value learners: SARSA, Q-learning (Watkins traces) and Double Q-learning.

use rand::Rng;

use super::features::Features;
use super::vfa::{EligibilityTrace, LinearVfa, TraceKind};
use super::{AgentError, LearnerConfig};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// With probability `1 - epsilon` the greedy action, otherwise uniform.
pub fn epsilon_greedy<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}

fn apply_trace_update(
    vfa: &mut LinearVfa,
    trace: &EligibilityTrace,
    alpha: f64,
    delta: f64,
) -> Result<(), AgentError> {
    vfa.add_trace(trace, alpha * delta);
    vfa.check_finite(trace.active().iter().copied())
}

/// On-policy TD update. `next` is `None` when `s'` is terminal.
/// Returns the TD error.
pub fn sarsa_update(
    vfa: &mut LinearVfa,
    phi: &Features,
    action: usize,
    reward: f64,
    next: Option<(&Features, usize)>,
    cfg: &LearnerConfig,
    trace: &mut EligibilityTrace,
) -> Result<f64, AgentError> {
    let bootstrap = next.map_or(0.0, |(phi1, a1)| vfa.value(phi1, a1));
    let delta = reward + cfg.gamma * bootstrap - vfa.value(phi, action);
    trace.decay(cfg.gamma * cfg.lambda);
    trace.add_features(vfa, phi, action, 1.0, cfg.trace);
    apply_trace_update(vfa, trace, cfg.alpha, delta)?;
    Ok(delta)
}

/// Off-policy Q-learning with Watkins traces: when `taken_greedy` is false
/// the action at `s` was exploratory and older credit is cut before accumulating.
#[allow(clippy::too_many_arguments)]
pub fn qlearning_update(
    vfa: &mut LinearVfa,
    phi: &Features,
    action: usize,
    reward: f64,
    next: Option<&Features>,
    cfg: &LearnerConfig,
    trace: &mut EligibilityTrace,
    taken_greedy: bool,
) -> Result<f64, AgentError> {
    let bootstrap = next.map_or(0.0, |phi1| vfa.max_value(phi1));
    let delta = reward + cfg.gamma * bootstrap - vfa.value(phi, action);
    if taken_greedy {
        trace.decay(cfg.gamma * cfg.lambda);
    } else {
        trace.clear();
    }
    trace.add_features(vfa, phi, action, 1.0, cfg.trace);
    apply_trace_update(vfa, trace, cfg.alpha, delta)?;
    Ok(delta)
}

/// Double Q-learning: a fair coin picks the table to update; its greedy
/// action at `s'` is evaluated with the other table.
#[allow(clippy::too_many_arguments)]
pub fn double_q_update<R: Rng + ?Sized>(
    table_a: &mut LinearVfa,
    table_b: &mut LinearVfa,
    phi: &Features,
    action: usize,
    reward: f64,
    next: Option<&Features>,
    cfg: &LearnerConfig,
    rng: &mut R,
) -> Result<f64, AgentError> {
    let (update, other) = if rng.random_bool(0.5) { (table_a, table_b) } else { (table_b, table_a) };
    let bootstrap = next.map_or(0.0, |phi1| other.value(phi1, argmax(&update.values(phi1))));
    let delta = reward + cfg.gamma * bootstrap - update.value(phi, action);
    update.add_features(phi, action, cfg.alpha * delta);
    update.check_finite(phi.iter().map(|(i, _)| update.index(i, action)))?;
    Ok(delta)
}

pub fn trace_kind_name(kind: TraceKind) -> &'static str {
    match kind {
        TraceKind::Accumulating => "accumulating",
        TraceKind::Replacing => "replacing",
    }
}
