//! Stateful agents driven by the runner, one instance per unit.

use rand_chacha::ChaCha8Rng;

use super::actor::{cacla_update, gaussian_explore, gradient_actor_update, LinearPolicy};
use super::controller::{lqr_action, pid_action, PidGains, PidState};
use super::critic::{td_lambda_update, tdc_update, true_online_td_update, Transition};
use super::features::{Features, TileCoder};
use super::qlearn::{argmax, double_q_update, epsilon_greedy, qlearning_update, sarsa_update};
use super::vfa::{digest_bits, EligibilityTrace, LinearVfa, TraceKind};
use super::{get_block, get_f64, get_str, get_usize, trace_kind, AgentError, LearnerConfig};
use crate::env::VariableDesc;
use crate::params::Block;

/// Training explores and learns; evaluation acts greedily and learns nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub trait Agent: Send {
    /// Resets per-episode state and returns the first action.
    fn begin_episode(&mut self, s: &[f64], mode: Mode, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, AgentError>;

    /// Consumes the outcome of the last action. Returns the next action, or
    /// an empty vector when `terminal`.
    fn step(
        &mut self,
        reward: f64,
        s1: &[f64],
        terminal: bool,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>, AgentError>;

    /// Hash of every learned weight.
    fn digest(&self) -> u64;
}

fn coder_from(block: &Block, states: &[VariableDesc]) -> Result<TileCoder, AgentError> {
    let tc = get_block(block, "tile_coding")?;
    let tilings = get_usize(tc, "num_tilings")?;
    let tiles = get_usize(tc, "tiles_per_dim")?;
    if tilings == 0 || tiles == 0 {
        return Err(AgentError::Config("tile coding needs at least one tiling and one tile".into()));
    }
    let bounds: Vec<(f64, f64)> = states.iter().map(|v| (v.min, v.max)).collect();
    if bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && hi > lo)) {
        return Err(AgentError::Config("tile coding needs finite state bounds".into()));
    }
    Ok(TileCoder::new(tilings, vec![tiles; states.len()], bounds))
}

/// Cartesian grid of `points` evenly spaced values per action dimension.
pub fn action_grid(actions: &[VariableDesc], points: usize) -> Vec<Vec<f64>> {
    let mut grid = vec![Vec::new()];
    for a in actions {
        let axis: Vec<f64> = (0..points)
            .map(|i| a.min + (a.max - a.min) * i as f64 / (points - 1) as f64)
            .collect();
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&x| {
                    let mut p = prefix.clone();
                    p.push(x);
                    p
                })
            })
            .collect();
    }
    grid
}

/// Builds the agent named by `block["class"]` for an environment with the
/// given state and action variables. `block` must be schema-complete.
pub fn build(block: &Block, states: &[VariableDesc], actions: &[VariableDesc]) -> Result<Box<dyn Agent>, AgentError> {
    let class = get_str(block, "class")?;
    match class {
        "sarsa" | "q-learning" | "double-q-learning" => {
            let coder = coder_from(block, states)?;
            let points = get_usize(block, "action_points")?;
            if points < 2 {
                return Err(AgentError::Config("action_points must be at least 2".into()));
            }
            let mut cfg = LearnerConfig {
                alpha: get_f64(block, "alpha")? / coder.num_tilings as f64,
                gamma: get_f64(block, "gamma")?,
                epsilon: get_f64(block, "epsilon")?,
                ..LearnerConfig::default()
            };
            let kind = match class {
                "sarsa" => QKind::Sarsa,
                "q-learning" => QKind::QLearning,
                _ => QKind::Double,
            };
            if kind != QKind::Double {
                cfg.lambda = get_f64(block, "lambda")?;
                cfg.trace = trace_kind(get_str(block, "trace")?)?;
            }
            cfg.check()?;
            Ok(Box::new(QAgent::new(kind, coder, action_grid(actions, points), cfg)))
        }
        "actor-critic" => {
            let coder = coder_from(block, states)?;
            let n = coder.num_tilings as f64;
            let critic = match get_str(block, "critic")? {
                "td-lambda" => CriticKind::TdLambda,
                "true-online-td" => CriticKind::TrueOnline,
                "tdc" => CriticKind::Tdc,
                other => return Err(AgentError::UnknownClass(other.into())),
            };
            let actor = match get_str(block, "actor")? {
                "cacla" => ActorKind::Cacla,
                "regular-gradient" => ActorKind::Gradient,
                other => return Err(AgentError::UnknownClass(other.into())),
            };
            let critic_cfg = LearnerConfig {
                alpha: get_f64(block, "critic_alpha")? / n,
                gamma: get_f64(block, "gamma")?,
                lambda: get_f64(block, "lambda")?,
                beta: if critic == CriticKind::Tdc { get_f64(block, "beta")? / n } else { 0.0 },
                trace: if critic == CriticKind::TdLambda {
                    trace_kind(get_str(block, "trace")?)?
                } else {
                    TraceKind::Accumulating
                },
                ..LearnerConfig::default()
            };
            let actor_cfg = LearnerConfig {
                alpha: get_f64(block, "actor_alpha")? / n,
                sigma: get_f64(block, "sigma")?,
                ..LearnerConfig::default()
            };
            critic_cfg.check()?;
            actor_cfg.check()?;
            if actor == ActorKind::Gradient && actor_cfg.sigma <= 0.0 {
                return Err(AgentError::Config("regular-gradient actor needs sigma > 0".into()));
            }
            Ok(Box::new(ActorCritic::new(coder, actions, critic, actor, critic_cfg, actor_cfg)))
        }
        "pid" => {
            let input = get_usize(block, "input_index")?;
            if input >= states.len() {
                return Err(AgentError::Config(format!("input_index {input} out of range")));
            }
            Ok(Box::new(Pid {
                gains: PidGains { kp: get_f64(block, "kp")?, ki: get_f64(block, "ki")?, kd: get_f64(block, "kd")? },
                setpoint: get_f64(block, "setpoint")?,
                input,
                bounds: actions.iter().map(|a| (a.min, a.max)).collect(),
                state: PidState::default(),
            }))
        }
        "lqr" => {
            let g = get_block(block, "gains")?;
            let row = (0..states.len())
                .map(|i| get_f64(g, &format!("k{i}")))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Box::new(Lqr {
                rows: vec![row; actions.len()],
                bounds: actions.iter().map(|a| (a.min, a.max)).collect(),
            }))
        }
        other => Err(AgentError::UnknownClass(other.into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum QKind {
    Sarsa,
    QLearning,
    Double,
}

struct QAgent {
    kind: QKind,
    coder: TileCoder,
    grid: Vec<Vec<f64>>,
    cfg: LearnerConfig,
    q: LinearVfa,
    q_b: LinearVfa,
    trace: EligibilityTrace,
    last: Option<(Features, usize)>,
    last_greedy: bool,
}

impl QAgent {
    fn new(kind: QKind, coder: TileCoder, grid: Vec<Vec<f64>>, cfg: LearnerConfig) -> Self {
        let nf = coder.num_features();
        let q = LinearVfa::zeros(nf, grid.len());
        let q_b = if kind == QKind::Double { q.clone() } else { LinearVfa::zeros(0, 0) };
        let trace = EligibilityTrace::new(q.weights.len());
        QAgent { kind, coder, grid, cfg, q, q_b, trace, last: None, last_greedy: true }
    }

    fn action_values(&self, phi: &Features) -> Vec<f64> {
        let mut q = self.q.values(phi);
        if self.kind == QKind::Double {
            for (x, y) in q.iter_mut().zip(self.q_b.values(phi)) {
                *x += y;
            }
        }
        q
    }

    fn choose(&self, phi: &Features, mode: Mode, rng: &mut ChaCha8Rng) -> (usize, bool) {
        let q = self.action_values(phi);
        let eps = if mode == Mode::Train { self.cfg.epsilon } else { 0.0 };
        let a = epsilon_greedy(&q, eps, rng);
        (a, q[a] >= q[argmax(&q)])
    }

    fn act(&mut self, phi: Features, a: usize, greedy: bool) -> Vec<f64> {
        self.last = Some((phi, a));
        self.last_greedy = greedy;
        self.grid[a].clone()
    }
}

impl Agent for QAgent {
    fn begin_episode(&mut self, s: &[f64], mode: Mode, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, AgentError> {
        self.trace.clear();
        let phi = self.coder.features(s);
        let (a, greedy) = self.choose(&phi, mode, rng);
        Ok(self.act(phi, a, greedy))
    }

    fn step(
        &mut self,
        reward: f64,
        s1: &[f64],
        terminal: bool,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>, AgentError> {
        let (phi, a) = self.last.take().ok_or_else(|| AgentError::Config("step before begin_episode".into()))?;
        let phi1 = (!terminal).then(|| self.coder.features(s1));
        if mode == Mode::Eval {
            return Ok(match phi1 {
                Some(p) => {
                    let (a1, g) = self.choose(&p, mode, rng);
                    self.act(p, a1, g)
                }
                None => Vec::new(),
            });
        }
        match self.kind {
            QKind::Sarsa => {
                let next = phi1.map(|p| {
                    let (a1, g) = self.choose(&p, mode, rng);
                    (p, a1, g)
                });
                let bootstrap = next.as_ref().map(|(p, a1, _)| (p, *a1));
                sarsa_update(&mut self.q, &phi, a, reward, bootstrap, &self.cfg, &mut self.trace)?;
                Ok(match next {
                    Some((p, a1, g)) => self.act(p, a1, g),
                    None => Vec::new(),
                })
            }
            QKind::QLearning => {
                let greedy = self.last_greedy;
                qlearning_update(&mut self.q, &phi, a, reward, phi1.as_ref(), &self.cfg, &mut self.trace, greedy)?;
                Ok(match phi1 {
                    Some(p) => {
                        let (a1, g) = self.choose(&p, mode, rng);
                        self.act(p, a1, g)
                    }
                    None => Vec::new(),
                })
            }
            QKind::Double => {
                double_q_update(&mut self.q, &mut self.q_b, &phi, a, reward, phi1.as_ref(), &self.cfg, rng)?;
                Ok(match phi1 {
                    Some(p) => {
                        let (a1, g) = self.choose(&p, mode, rng);
                        self.act(p, a1, g)
                    }
                    None => Vec::new(),
                })
            }
        }
    }

    fn digest(&self) -> u64 {
        self.q.digest() ^ self.q_b.digest().rotate_left(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CriticKind {
    TdLambda,
    TrueOnline,
    Tdc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ActorKind {
    Cacla,
    Gradient,
}

struct ActorCritic {
    coder: TileCoder,
    bounds: Vec<(f64, f64)>,
    critic_kind: CriticKind,
    actor_kind: ActorKind,
    critic_cfg: LearnerConfig,
    actor_cfg: LearnerConfig,
    v: LinearVfa,
    aux: Vec<f64>,
    trace: EligibilityTrace,
    v_old: f64,
    policy: LinearPolicy,
    last: Option<(Features, Vec<f64>)>,
}

impl ActorCritic {
    fn new(
        coder: TileCoder,
        actions: &[VariableDesc],
        critic_kind: CriticKind,
        actor_kind: ActorKind,
        critic_cfg: LearnerConfig,
        actor_cfg: LearnerConfig,
    ) -> Self {
        let nf = coder.num_features();
        ActorCritic {
            bounds: actions.iter().map(|a| (a.min, a.max)).collect(),
            critic_kind,
            actor_kind,
            critic_cfg,
            actor_cfg,
            v: LinearVfa::zeros(nf, 1),
            aux: vec![0.0; nf],
            trace: EligibilityTrace::new(nf),
            v_old: 0.0,
            policy: LinearPolicy::zeros(actions.len(), nf),
            last: None,
            coder,
        }
    }

    fn act(&mut self, phi: Features, mode: Mode, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mean = self.policy.mean(&phi);
        let sigma = if mode == Mode::Train { self.actor_cfg.sigma } else { 0.0 };
        let a = gaussian_explore(&mean, sigma, rng, &self.bounds);
        self.last = Some((phi, a.clone()));
        a
    }
}

impl Agent for ActorCritic {
    fn begin_episode(&mut self, s: &[f64], mode: Mode, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, AgentError> {
        self.trace.clear();
        self.v_old = 0.0;
        let phi = self.coder.features(s);
        Ok(self.act(phi, mode, rng))
    }

    fn step(
        &mut self,
        reward: f64,
        s1: &[f64],
        terminal: bool,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>, AgentError> {
        let (phi, executed) = self.last.take().ok_or_else(|| AgentError::Config("step before begin_episode".into()))?;
        let phi1 = (!terminal).then(|| self.coder.features(s1));
        if mode == Mode::Train {
            let t = Transition::on_policy(&phi, reward, phi1.as_ref());
            let delta = match self.critic_kind {
                CriticKind::TdLambda => td_lambda_update(&mut self.v, &t, &self.critic_cfg, &mut self.trace)?,
                CriticKind::TrueOnline => {
                    true_online_td_update(&mut self.v, &t, &self.critic_cfg, &mut self.trace, &mut self.v_old)?
                }
                CriticKind::Tdc => tdc_update(&mut self.v, &mut self.aux, &t, &self.critic_cfg, &mut self.trace)?,
            };
            match self.actor_kind {
                ActorKind::Cacla => cacla_update(&mut self.policy, delta, &phi, &executed, &self.actor_cfg)?,
                ActorKind::Gradient => gradient_actor_update(&mut self.policy, delta, &phi, &executed, &self.actor_cfg)?,
            }
        }
        Ok(match phi1 {
            Some(p) => self.act(p, mode, rng),
            None => Vec::new(),
        })
    }

    fn digest(&self) -> u64 {
        let mut h = self.v.digest();
        for row in &self.policy.weights {
            h = h.rotate_left(7) ^ digest_bits(row);
        }
        h
    }
}

struct Pid {
    gains: PidGains,
    setpoint: f64,
    input: usize,
    bounds: Vec<(f64, f64)>,
    state: PidState,
}

impl Pid {
    fn act(&mut self, s: &[f64]) -> Vec<f64> {
        let (e, i, d) = self.state.observe(self.setpoint - s[self.input]);
        self.bounds.iter().map(|&b| pid_action(e, i, d, &self.gains, b)).collect()
    }
}

impl Agent for Pid {
    fn begin_episode(&mut self, s: &[f64], _: Mode, _: &mut ChaCha8Rng) -> Result<Vec<f64>, AgentError> {
        self.state.reset();
        Ok(self.act(s))
    }

    fn step(&mut self, _: f64, s1: &[f64], terminal: bool, _: Mode, _: &mut ChaCha8Rng) -> Result<Vec<f64>, AgentError> {
        Ok(if terminal { Vec::new() } else { self.act(s1) })
    }

    fn digest(&self) -> u64 {
        0
    }
}

struct Lqr {
    rows: Vec<Vec<f64>>,
    bounds: Vec<(f64, f64)>,
}

impl Agent for Lqr {
    fn begin_episode(&mut self, s: &[f64], _: Mode, _: &mut ChaCha8Rng) -> Result<Vec<f64>, AgentError> {
        Ok(lqr_action(s, &self.rows, &self.bounds))
    }

    fn step(&mut self, _: f64, s1: &[f64], terminal: bool, _: Mode, _: &mut ChaCha8Rng) -> Result<Vec<f64>, AgentError> {
        Ok(if terminal { Vec::new() } else { lqr_action(s1, &self.rows, &self.bounds) })
    }

    fn digest(&self) -> u64 {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::class_params;
    use crate::params::{defaults, ParamValue};
    use rand::SeedableRng;

    fn block(class: &str) -> Block {
        let mut b = defaults(&class_params(class).unwrap());
        b.insert("class".into(), ParamValue::Enum(class.into()));
        b
    }

    fn vars() -> (Vec<VariableDesc>, Vec<VariableDesc>) {
        (
            vec![VariableDesc::new("x", "", -1.0, 1.0), VariableDesc::new("v", "", -2.0, 2.0)],
            vec![VariableDesc::new("u", "", -1.0, 1.0)],
        )
    }

    #[test]
    fn grid_spans_bounds() {
        let (_, a) = vars();
        assert_eq!(action_grid(&a, 3), vec![vec![-1.0], vec![0.0], vec![1.0]]);
        let two = [a[0].clone(), VariableDesc::new("w", "", 0.0, 1.0)];
        assert_eq!(action_grid(&two, 2).len(), 4);
    }

    #[test]
    fn every_runnable_class_builds_and_acts() {
        let (s, a) = vars();
        for class in crate::agents::runnable_classes() {
            let mut agent = build(&block(class), &s, &a).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let u = agent.begin_episode(&[0.1, 0.2], Mode::Train, &mut rng).unwrap();
            assert_eq!(u.len(), 1, "{class}");
            let u = agent.step(-1.0, &[0.2, 0.1], false, Mode::Train, &mut rng).unwrap();
            assert!(u[0].abs() <= 1.0);
            assert!(agent.step(-1.0, &[0.3, 0.1], true, Mode::Train, &mut rng).unwrap().is_empty());
        }
    }

    #[test]
    fn evaluation_leaves_weights_alone() {
        let (s, a) = vars();
        for class in ["sarsa", "q-learning", "double-q-learning", "actor-critic"] {
            let mut agent = build(&block(class), &s, &a).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            agent.begin_episode(&[0.0, 0.0], Mode::Train, &mut rng).unwrap();
            for k in 0..20 {
                agent.step(1.0 - k as f64 * 0.1, &[k as f64 / 40.0, 0.1], false, Mode::Train, &mut rng).unwrap();
            }
            let before = agent.digest();
            agent.begin_episode(&[0.0, 0.0], Mode::Eval, &mut rng).unwrap();
            for k in 0..20 {
                agent.step(3.0, &[-(k as f64) / 40.0, 0.0], false, Mode::Eval, &mut rng).unwrap();
            }
            assert_eq!(agent.digest(), before, "{class}");
        }
    }

    #[test]
    fn unknown_class_rejected() {
        let (s, a) = vars();
        let mut b = block("sarsa");
        b.insert("class".into(), ParamValue::Enum("foo".into()));
        assert!(matches!(build(&b, &s, &a), Err(AgentError::UnknownClass(_))));
    }
}
