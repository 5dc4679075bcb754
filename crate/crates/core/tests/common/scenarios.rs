//! Drivers that run the crate's learners and runner on the oracle problems.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sweepherd::agents::critic::{td_lambda_update, tdc_update, true_online_td_update, Transition};
use sweepherd::agents::qlearn::{argmax, epsilon_greedy, qlearning_update};
use sweepherd::agents::{EligibilityTrace, Features, LearnerConfig, LinearVfa, TileCoder, TraceKind};
use sweepherd::experiment::{expand_forks, parse_descriptor};
use sweepherd::runner::log::EpisodeKind;
use sweepherd::runner::{read_log, run_local, unit_dir, CancelRegistry, RunState};

use super::*;

pub struct ChainOutcome {
    pub q: [[f64; 2]; 5],
    pub max_error: f64,
    pub same_policy: bool,
    /// Steps taken before both conditions first held, checked every 100 steps.
    pub steps: usize,
}

/// Q-learning with a uniformly random behaviour policy through a one-tiling
/// coder with one tile per chain state.
pub fn chain_q_learning(seed: u64, budget: usize, gamma: f64) -> ChainOutcome {
    let coder = TileCoder::new(1, vec![Chain::STATES], vec![(0.0, Chain::STATES as f64)]);
    let phi = |s: usize| coder.features(&[s as f64 + 0.5]);
    let mut vfa = LinearVfa::zeros(coder.num_features(), Chain::ACTIONS);
    let mut trace = EligibilityTrace::new(vfa.weights.len());
    let cfg = LearnerConfig { alpha: 0.5, gamma, lambda: 0.0, ..LearnerConfig::default() };
    let q_star = chain_q_star(gamma);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = |vfa: &LinearVfa| {
        let mut q = [[0.0; 2]; 5];
        for (s, row) in q.iter_mut().enumerate() {
            let v = vfa.values(&phi(s));
            *row = [v[0], v[1]];
        }
        q
    };
    let judge = |q: &[[f64; 2]; 5]| {
        let err = (0..5).flat_map(|s| (0..2).map(move |a| (s, a))).map(|(s, a)| (q[s][a] - q_star[s][a]).abs()).fold(0.0, f64::max);
        let same = (0..5).all(|s| argmax(&q[s]) == argmax(&q_star[s]));
        (err, same)
    };

    let mut s = 0;
    let mut steps = 0;
    while steps < budget {
        let f = phi(s);
        let q = vfa.values(&f);
        let a = epsilon_greedy(&q, 1.0, &mut rng);
        let (r, next) = Chain::step(s, a);
        let f1 = next.map(phi);
        qlearning_update(&mut vfa, &f, a, r, f1.as_ref(), &cfg, &mut trace, a == argmax(&q)).unwrap();
        steps += 1;
        s = match next {
            Some(s1) => s1,
            None => {
                trace.clear();
                steps % Chain::STATES
            }
        };
        if steps % 100 == 0 {
            let (err, same) = judge(&table(&vfa));
            if err <= 0.01 && same {
                break;
            }
        }
    }
    let q = table(&vfa);
    let (max_error, same_policy) = judge(&q);
    ChainOutcome { q, max_error, same_policy, steps }
}

fn on_trajectory<F>(traj: &Trajectory, mut update: F) -> Vec<Vec<f64>>
where
    F: FnMut(&Transition, bool) -> Vec<f64>,
{
    let phis: Vec<Features> = traj.phis.iter().map(|p| Features::dense(p)).collect();
    let mut out = Vec::new();
    let mut episode_start = true;
    for t in 0..traj.rewards.len() {
        let end = traj.terminal_after.contains(&t);
        let next = if end { None } else { Some(&phis[t + 1]) };
        out.push(update(&Transition::on_policy(&phis[t], traj.rewards[t], next), episode_start));
        episode_start = end;
    }
    out
}

/// Largest deviation from the reference TD(0) weights over a shared random
/// trajectory, for TD(lambda=0), true online TD(lambda=0) and TDC(beta=0).
pub fn td_equivalence(seed: u64, steps: usize) -> [f64; 3] {
    let traj = random_trajectory(seed, steps, 6, 0.1);
    let n = traj.phis[0].len();
    let (alpha, gamma) = (0.05, 0.9);
    let reference = td0_reference(&traj, alpha, gamma);
    let cfg = LearnerConfig { alpha, gamma, lambda: 0.0, beta: 0.0, trace: TraceKind::Accumulating, ..LearnerConfig::default() };

    let mut v = LinearVfa::zeros(n, 1);
    let mut e = EligibilityTrace::new(n);
    let td = on_trajectory(&traj, |t, start| {
        if start {
            e.clear();
        }
        td_lambda_update(&mut v, t, &cfg, &mut e).unwrap();
        v.weights.clone()
    });

    let mut v = LinearVfa::zeros(n, 1);
    let mut e = EligibilityTrace::new(n);
    let mut v_old = 0.0;
    let online = on_trajectory(&traj, |t, start| {
        if start {
            e.clear();
            v_old = 0.0;
        }
        true_online_td_update(&mut v, t, &cfg, &mut e, &mut v_old).unwrap();
        v.weights.clone()
    });

    let mut v = LinearVfa::zeros(n, 1);
    let mut e = EligibilityTrace::new(n);
    let mut aux = vec![0.0; n];
    let tdc = on_trajectory(&traj, |t, start| {
        if start {
            e.clear();
        }
        tdc_update(&mut v, &mut aux, t, &cfg, &mut e).unwrap();
        v.weights.clone()
    });

    let dev = |xs: &[Vec<f64>]| {
        xs.iter().zip(&reference).flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs())).fold(0.0, f64::max)
    };
    [dev(&td), dev(&online), dev(&tdc)]
}

/// Largest deviation between true online TD(lambda) and the brute-force
/// online lambda-return weights over one terminating episode.
pub fn true_online_vs_lambda_return(seed: u64, steps: usize, lambda: f64) -> f64 {
    let mut traj = random_trajectory(seed, steps, 4, 0.0);
    *traj.phis.last_mut().unwrap() = vec![0.0; 4];
    let (alpha, gamma) = (0.1, 0.9);
    let theta0: Vec<f64> = vec![0.3, -0.2, 0.5, 0.1];
    let oracle = online_lambda_return(&traj.phis, &traj.rewards, &theta0, alpha, gamma, lambda);

    let phis: Vec<Features> = traj.phis.iter().map(|p| Features::dense(p)).collect();
    let mut v = LinearVfa::zeros(4, 1);
    v.weights = theta0;
    let mut e = EligibilityTrace::new(4);
    let mut v_old = 0.0;
    let cfg = LearnerConfig { alpha, gamma, lambda, ..LearnerConfig::default() };
    let mut worst: f64 = 0.0;
    for t in 0..steps {
        let next = if t + 1 < steps { Some(&phis[t + 1]) } else { None };
        true_online_td_update(&mut v, &Transition::on_policy(&phis[t], traj.rewards[t], next), &cfg, &mut e, &mut v_old).unwrap();
        for (x, y) in v.weights.iter().zip(&oracle[t + 1]) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StarLearner {
    Td,
    Tdc,
}

/// Largest weight norm seen while learning off-policy on the star problem,
/// or infinity once the weights overflow.
pub fn star_max_norm(learner: StarLearner, steps: usize, seed: u64) -> f64 {
    let phis: Vec<Features> = (0..Star::STATES).map(|s| Features::dense(&Star::features(s))).collect();
    let mut v = LinearVfa::zeros(Star::WEIGHTS, 1);
    v.weights = Star::initial_weights();
    let mut aux = vec![0.0; Star::WEIGHTS];
    let mut e = EligibilityTrace::new(Star::WEIGHTS);
    let cfg = LearnerConfig { alpha: 0.005, beta: 0.05, gamma: 0.99, lambda: 0.0, ..LearnerConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = rng.random_range(0..Star::STATES);
    let mut worst = norm(&v.weights);
    for _ in 0..steps {
        let (s1, rho) = Star::behave(&mut rng);
        let t = Transition { phi: &phis[s], reward: 0.0, next: Some(&phis[s1]), rho };
        let ok = match learner {
            StarLearner::Td => td_lambda_update(&mut v, &t, &cfg, &mut e).is_ok(),
            StarLearner::Tdc => tdc_update(&mut v, &mut aux, &t, &cfg, &mut e).is_ok(),
        };
        let n = norm(&v.weights);
        if !ok || !n.is_finite() {
            return f64::INFINITY;
        }
        worst = worst.max(n);
        s = s1;
    }
    worst
}

/// Mean training-episode length over the last `tail` episodes of each seed.
pub fn mountain_car_sarsa(root: &Path, seeds: &[u64], episodes: u64, tail: usize) -> Vec<f64> {
    let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
    let text = format!(
        r#"{{"name": "mc-sarsa", "environment": {{"class": "mountain-car"}},
            "agent": {{"class": "sarsa", "tile_coding": {{"num_tilings": 8, "tiles_per_dim": 8}}, "action_points": 3,
                       "alpha": 0.3, "gamma": 1.0, "epsilon": 0.01, "lambda": 0.9, "trace": "replacing"}},
            "run": {{"num_episodes": {episodes}, "eval_every": {episodes}, "episode_max_steps": 1000,
                     "log_every": 1000, "seed": {{"$fork": [{}]}}}}}}"#,
        list.join(", ")
    );
    let d = parse_descriptor(&text).unwrap();
    let statuses = run_local(&d, root, seeds.len(), &|_| {}, &CancelRegistry::new()).unwrap();
    assert!(statuses.values().all(|s| s.state == RunState::Finished), "{statuses:?}");
    expand_forks(&d)
        .unwrap()
        .iter()
        .map(|u| {
            let log = read_log(&unit_dir(root, &u.unit_id)).unwrap();
            let train: Vec<u64> = log.episodes.iter().filter(|e| e.summary.kind == EpisodeKind::Train).map(|e| e.summary.steps).collect();
            let last = &train[train.len() - tail..];
            last.iter().sum::<u64>() as f64 / tail as f64
        })
        .collect()
}

/// Largest absolute acceleration or state change at the cart-pole upright,
/// the pendulum hang and the drivetrain torque balance.
pub fn equilibrium_residuals() -> [f64; 3] {
    use sweepherd::env::*;
    let cp = CartPoleConfig::default();
    let rest = [0.0, 0.0, 0.0, 0.0];
    let (xa, ta) = cartpole_accelerations(&rest, 0.0, &cp);
    let next = cartpole_step(&rest, &[0.0], &cp).next_state;
    let cart = next.iter().chain([xa, ta].iter()).fold(0.0f64, |m, x| m.max(x.abs()));

    let pc = PendulumConfig::default();
    let hang = [std::f64::consts::PI, 0.0];
    let acc = pendulum_acceleration(hang[0], hang[1], 0.0, &pc);
    let next = pendulum_step(&hang, &[0.0], &pc).next_state;
    let pend = acc.abs().max((next[0] - hang[0]).abs()).max(next[1].abs());

    // torsion 2^-10 rad keeps the shaft torque exactly representable
    let wc = WindTurbineConfig::default();
    let n = wc.gearbox_ratio;
    let s = [12.0, 12.0 * n, 0.0009765625];
    let shaft = wc.shaft_stiffness * s[2];
    let (dr, dg, dt) = drivetrain_rates(&s, shaft, shaft / n, &wc);
    let turb = dr.abs().max(dg.abs()).max(dt.abs());
    [cart, pend, turb]
}

/// Relative change of total energy of a frictionless, unforced pendulum.
pub fn pendulum_energy_drift(theta0: f64, steps: usize) -> f64 {
    use sweepherd::env::*;
    let cfg = PendulumConfig { friction: 0.0, ..PendulumConfig::default() };
    let e0 = pendulum_energy(theta0, 0.0, &cfg);
    let mut s = vec![theta0, 0.0];
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        s = pendulum_step(&s, &[0.0], &cfg).next_state;
        worst = worst.max(((pendulum_energy(s[0], s[1], &cfg) - e0) / e0).abs());
    }
    worst
}

/// Largest deviation of mountain-car single steps from values computed
/// independently with a desk calculator and frozen here.
pub fn mountain_car_step_error() -> f64 {
    use sweepherd::env::*;
    let cfg = MountainCarConfig::default();
    let cases: [([f64; 2], f64, [f64; 2], f64, bool); 4] = [
        ([-0.5, 0.0], 1.0, [-0.49917684300416926, 0.0008231569958307428], -1.0, false),
        ([-1.0, 0.0], -1.0, [-0.9985250187584989, 0.0014749812415011136], -1.0, false),
        ([0.49, 0.07], 0.0, [0.5, 0.06974843566653267], 0.0, true),
        ([-1.19, -0.069], -1.0, [-1.2, 0.0], -1.0, false),
    ];
    let mut worst: f64 = 0.0;
    for (s, a, want, reward, terminal) in cases {
        let r = mountain_car_step(&s, &[a], &cfg);
        if r.terminal != terminal || r.reward != reward {
            return f64::INFINITY;
        }
        for (x, y) in r.next_state.iter().zip(want) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

/// Expands a 2x3x4 fork product; returns `(unit count, distinct assignment tuples)`.
pub fn fork_product_2_3_4() -> (usize, usize) {
    let text = r#"{"name": "grid", "environment": {"class": "mountain-car"},
        "agent": {"class": "q-learning", "alpha": {"$fork": [0.1, 0.2]}, "gamma": {"$fork": [0.9, 0.95, 0.99]},
                  "epsilon": {"$fork": [0.0, 0.01, 0.05, 0.1]}},
        "run": {"num_episodes": 5, "seed": 1}}"#;
    let d = parse_descriptor(text).unwrap();
    let units = expand_forks(&d).unwrap();
    let distinct: std::collections::BTreeSet<Vec<String>> =
        units.iter().map(|u| u.assignments.values().map(|v| v.canonical()).collect()).collect();
    (units.len(), distinct.len())
}

/// `(alpha, gamma)` of every unit of the 2x2 sample, in unit order.
pub fn fork_2x2_order() -> Vec<(f64, f64)> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../samples/fork_2x2.simx.json");
    let d = parse_descriptor(&std::fs::read_to_string(path).unwrap()).unwrap();
    expand_forks(&d)
        .unwrap()
        .iter()
        .map(|u| (u.assignments["agent/alpha"].as_f64().unwrap(), u.assignments["agent/gamma"].as_f64().unwrap()))
        .collect()
}
