//! State-value critics: TD(lambda), true online TD(lambda) and TDC(lambda).
//!
//! All three share one transition type. `rho` is the importance-sampling
//! ratio of the behaviour action; on-policy learning uses 1.

use super::features::Features;
use super::vfa::{EligibilityTrace, LinearVfa, TraceKind};
use super::{AgentError, LearnerConfig};

#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub phi: &'a Features,
    pub reward: f64,
    /// `None` when the next state is terminal.
    pub next: Option<&'a Features>,
    pub rho: f64,
}

impl<'a> Transition<'a> {
    pub fn on_policy(phi: &'a Features, reward: f64, next: Option<&'a Features>) -> Self {
        Transition { phi, reward, next, rho: 1.0 }
    }
}

fn next_value(v: &LinearVfa, t: &Transition) -> f64 {
    t.next.map_or(0.0, |phi1| v.value(phi1, 0))
}

fn td_error(v: &LinearVfa, t: &Transition, gamma: f64) -> f64 {
    t.reward + gamma * next_value(v, t) - v.value(t.phi, 0)
}

/// `e <- rho (gamma lambda e + phi)`, the shared trace recursion of TD and TDC.
fn importance_trace(v: &LinearVfa, t: &Transition, cfg: &LearnerConfig, trace: &mut EligibilityTrace) {
    trace.decay(cfg.gamma * cfg.lambda);
    trace.add_features(v, t.phi, 0, 1.0, cfg.trace);
    if t.rho != 1.0 {
        trace.scale(t.rho);
    }
}

/// Linear TD(lambda): `theta += alpha delta e`.
pub fn td_lambda_update(
    v: &mut LinearVfa,
    t: &Transition,
    cfg: &LearnerConfig,
    trace: &mut EligibilityTrace,
) -> Result<f64, AgentError> {
    let delta = td_error(v, t, cfg.gamma);
    importance_trace(v, t, cfg, trace);
    v.add_trace(trace, cfg.alpha * delta);
    v.check_finite(trace.active().iter().copied())?;
    Ok(delta)
}

/// True online TD(lambda) with dutch traces. `v_old` carries the value of the
/// current state computed at the previous step and must be reset to 0 at the
/// start of each episode, together with the trace.
pub fn true_online_td_update(
    v: &mut LinearVfa,
    t: &Transition,
    cfg: &LearnerConfig,
    trace: &mut EligibilityTrace,
    v_old: &mut f64,
) -> Result<f64, AgentError> {
    let (alpha, gamma, lambda) = (cfg.alpha, cfg.gamma, cfg.lambda);
    let value = v.value(t.phi, 0);
    let value_next = next_value(v, t);
    let delta = t.reward + gamma * value_next - value;
    let e_phi = trace.dot(v, t.phi, 0);
    trace.decay(gamma * lambda);
    trace.add_features(v, t.phi, 0, 1.0 - alpha * gamma * lambda * e_phi, TraceKind::Accumulating);
    v.add_trace(trace, alpha * (delta + value - *v_old));
    v.add_features(t.phi, 0, -alpha * (value - *v_old));
    *v_old = value_next;
    v.check_finite(trace.active().iter().copied())?;
    Ok(delta)
}

/// TDC(lambda) with gradient-correction weights `aux`:
/// `theta += alpha [delta e - gamma (1 - lambda) (e.aux) phi']`,
/// `aux += beta [delta e - (aux.phi) phi]`.
/// With `lambda = 0` and `rho = 1` this is the classic
/// `theta += alpha [delta phi - gamma phi' (phi.aux)]`, `aux += beta (delta - phi.aux) phi`.
pub fn tdc_update(
    v: &mut LinearVfa,
    aux: &mut [f64],
    t: &Transition,
    cfg: &LearnerConfig,
    trace: &mut EligibilityTrace,
) -> Result<f64, AgentError> {
    let delta = td_error(v, t, cfg.gamma);
    importance_trace(v, t, cfg, trace);
    let e_aux: f64 = trace.active().iter().map(|&i| trace.get(i) * aux[i]).sum();
    let aux_phi = t.phi.dot(aux);
    v.add_trace(trace, cfg.alpha * delta);
    if let Some(phi1) = t.next {
        v.add_features(phi1, 0, -cfg.alpha * cfg.gamma * (1.0 - cfg.lambda) * e_aux);
    }
    for &i in trace.active() {
        aux[i] += cfg.beta * delta * trace.get(i);
    }
    for (i, x) in t.phi.iter() {
        aux[i] -= cfg.beta * aux_phi * x;
    }
    v.check_finite(trace.active().iter().copied())?;
    if let Some(phi1) = t.next {
        v.check_finite(phi1.iter().map(|(i, _)| i))?;
    }
    if aux.iter().any(|x| !x.is_finite()) {
        return Err(AgentError::NonFinite("TDC auxiliary weights".into()));
    }
    Ok(delta)
}
