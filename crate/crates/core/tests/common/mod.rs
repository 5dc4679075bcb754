//! Reference implementations written directly from the textbook definitions.
//! Nothing outside `scenarios` touches the crate.
#![allow(dead_code, clippy::needless_range_loop, clippy::type_complexity)]

pub mod codec;
pub mod herd;
pub mod reports;
pub mod scenarios;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Deterministic 5-state chain. Action 0 moves left (state 0 stays put),
/// action 1 moves right; moving right from the last state ends the episode
/// with reward 1, every other step costs 0.05.
pub struct Chain;

impl Chain {
    pub const STATES: usize = 5;
    pub const ACTIONS: usize = 2;

    /// `(reward, next state or None when terminal)`.
    pub fn step(s: usize, a: usize) -> (f64, Option<usize>) {
        match a {
            0 => (-0.05, Some(s.saturating_sub(1))),
            _ if s + 1 == Self::STATES => (1.0, None),
            _ => (-0.05, Some(s + 1)),
        }
    }
}

/// Optimal action values by value iteration, iterated to a fixed point.
pub fn chain_q_star(gamma: f64) -> [[f64; 2]; 5] {
    let mut q = [[0.0f64; 2]; 5];
    loop {
        let mut next = q;
        for (s, row) in next.iter_mut().enumerate() {
            for (a, slot) in row.iter_mut().enumerate() {
                let (r, s1) = Chain::step(s, a);
                *slot = r + s1.map_or(0.0, |s1| gamma * q[s1][0].max(q[s1][1]));
            }
        }
        let change = (0..5).flat_map(|s| (0..2).map(move |a| (s, a))).map(|(s, a)| (next[s][a] - q[s][a]).abs()).fold(0.0, f64::max);
        q = next;
        if change == 0.0 {
            return q;
        }
    }
}

/// A random episode of dense features and rewards. `phis` has one more entry
/// than `rewards`; the last is all zeros when the episode terminates.
pub struct Trajectory {
    pub phis: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// Indices `t` after which an episode boundary occurs.
    pub terminal_after: Vec<usize>,
}

pub fn random_trajectory(seed: u64, steps: usize, features: usize, terminal_prob: f64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phis = Vec::with_capacity(steps + 1);
    let mut rewards = Vec::with_capacity(steps);
    let mut terminal_after = Vec::new();
    for t in 0..=steps {
        phis.push((0..features).map(|_| if rng.random_bool(0.7) { rng.random_range(-1.0..1.0) } else { 0.0 }).collect());
        if t < steps {
            rewards.push(rng.random_range(-1.0..1.0));
            if rng.random_bool(terminal_prob) {
                terminal_after.push(t);
            }
        }
    }
    Trajectory { phis, rewards, terminal_after }
}

/// Linear TD(0): `theta += alpha (r + gamma theta.phi' - theta.phi) phi`,
/// with `phi' = 0` at episode ends. Returns theta after every step.
pub fn td0_reference(traj: &Trajectory, alpha: f64, gamma: f64) -> Vec<Vec<f64>> {
    let mut theta = vec![0.0; traj.phis[0].len()];
    let mut out = Vec::new();
    for t in 0..traj.rewards.len() {
        let phi = &traj.phis[t];
        let next = if traj.terminal_after.contains(&t) { 0.0 } else { dot(&theta, &traj.phis[t + 1]) };
        let delta = traj.rewards[t] + gamma * next - dot(&theta, phi);
        for (w, x) in theta.iter_mut().zip(phi) {
            *w += alpha * delta * x;
        }
        out.push(theta.clone());
    }
    out
}

/// The online lambda-return algorithm by brute force: for each horizon `h`
/// the weights are recomputed from `theta0` with truncated lambda-returns
/// that bootstrap from the final weights of earlier horizons. `phis` holds
/// `T + 1` vectors, the last being the terminal (all zero) one. Returns the
/// final weights of every horizon `0..=T`.
pub fn online_lambda_return(phis: &[Vec<f64>], rewards: &[f64], theta0: &[f64], alpha: f64, gamma: f64, lambda: f64) -> Vec<Vec<f64>> {
    let big_t = rewards.len();
    let mut finals: Vec<Vec<f64>> = vec![theta0.to_vec()];
    for h in 1..=big_t {
        let n_step = |t: usize, n: usize, finals: &[Vec<f64>]| -> f64 {
            let mut g = 0.0;
            for k in 0..n {
                g += gamma.powi(k as i32) * rewards[t + k];
            }
            if t + n < big_t {
                g += gamma.powi(n as i32) * dot(&finals[t + n - 1], &phis[t + n]);
            }
            g
        };
        let mut theta = theta0.to_vec();
        for t in 0..h {
            let span = h - t;
            let mut g = 0.0;
            for n in 1..span {
                g += (1.0 - lambda) * lambda.powi(n as i32 - 1) * n_step(t, n, &finals);
            }
            g += lambda.powi(span as i32 - 1) * n_step(t, span, &finals);
            let err = g - dot(&theta, &phis[t]);
            for (w, x) in theta.iter_mut().zip(&phis[t]) {
                *w += alpha * err * x;
            }
        }
        finals.push(theta);
    }
    finals
}

/// Seven-state star counterexample with eight weights. States 0..6 use
/// `2 e_i + e_7`; state 6 uses `e_6 + 2 e_7`. All rewards are zero.
pub struct Star;

impl Star {
    pub const STATES: usize = 7;
    pub const WEIGHTS: usize = 8;

    pub fn features(s: usize) -> Vec<f64> {
        let mut phi = vec![0.0; Self::WEIGHTS];
        if s < 6 {
            phi[s] = 2.0;
            phi[7] = 1.0;
        } else {
            phi[6] = 1.0;
            phi[7] = 2.0;
        }
        phi
    }

    pub fn initial_weights() -> Vec<f64> {
        vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 10.0, 1.0]
    }

    /// Behaviour takes the dashed action (uniform over states 0..5) with
    /// probability 6/7 and the solid action (state 6) otherwise; the target
    /// policy always takes solid. Returns `(next state, importance ratio)`.
    pub fn behave<R: Rng>(rng: &mut R) -> (usize, f64) {
        if rng.random_range(0..7) < 6 {
            (rng.random_range(0..6), 0.0)
        } else {
            (6, 7.0)
        }
    }
}
