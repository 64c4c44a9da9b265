//! Independent ground truth: Monte-Carlo estimates, exact finite-horizon
//! enumeration on deterministic systems, and closed forms for loops and
//! cycles. Nothing here goes through the dynamic-programming solvers, so the
//! two routes can be compared against each other.

use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{Policy, TabularMdp};
use crate::reward::{pow_visits, RewardScheme, RewardSpec};

/// Micro-MDPs used as analytic test beds.
pub mod micro {
    use ndarray::{Array1, Array3};

    use crate::mdp::{Policy, TabularMdp};

    /// Single state, single action, self transition.
    pub fn self_loop(gamma: f64) -> (TabularMdp, Policy) {
        let mut t = Array3::zeros((1, 1, 1));
        t[[0, 0, 0]] = 1.0;
        let mdp = TabularMdp::new(t, gamma, Array1::from(vec![1.0])).unwrap();
        (mdp, Policy::deterministic(1, &[0]).unwrap())
    }

    /// Two states swapping deterministically.
    pub fn two_cycle(gamma: f64) -> (TabularMdp, Policy) {
        let mut t = Array3::zeros((2, 1, 2));
        t[[0, 0, 1]] = 1.0;
        t[[1, 0, 0]] = 1.0;
        let mdp = TabularMdp::new(t, gamma, Array1::from(vec![1.0, 0.0])).unwrap();
        (mdp, Policy::deterministic(1, &[0, 0]).unwrap())
    }

    /// s0 -> s1 -> s2 -> s2.
    pub fn chain3(gamma: f64) -> (TabularMdp, Policy) {
        let mut t = Array3::zeros((3, 1, 3));
        t[[0, 0, 1]] = 1.0;
        t[[1, 0, 2]] = 1.0;
        t[[2, 0, 2]] = 1.0;
        let mdp = TabularMdp::new(t, gamma, Array1::from(vec![1.0, 0.0, 0.0])).unwrap();
        (mdp, Policy::deterministic(1, &[0, 0, 0]).unwrap())
    }

    /// s0 -> s1, s1 -> s1.
    pub fn one_step_reach(gamma: f64) -> (TabularMdp, Policy) {
        let mut t = Array3::zeros((2, 1, 2));
        t[[0, 0, 1]] = 1.0;
        t[[1, 0, 1]] = 1.0;
        let mdp = TabularMdp::new(t, gamma, Array1::from(vec![1.0, 0.0])).unwrap();
        (mdp, Policy::deterministic(1, &[0, 0]).unwrap())
    }
}

/// Analytic representation values on the micro-MDPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosedFormCase {
    SelfLoop,
    TwoCycleDiag,
    TwoCycleOff,
    OneStepReach,
}

impl FromStr for ClosedFormCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self_loop" => Ok(Self::SelfLoop),
            "two_cycle_diag" => Ok(Self::TwoCycleDiag),
            "two_cycle_off" => Ok(Self::TwoCycleOff),
            "one_step_reach" => Ok(Self::OneStepReach),
            other => Err(Error::Config(format!("unknown closed-form case '{other}'"))),
        }
    }
}

/// Geometric-series values: loops accumulate (lambda gamma)^k, cycles
/// (lambda gamma^2)^k.
pub fn closed_form(case: ClosedFormCase, gamma: f64, lambda: f64) -> f64 {
    match case {
        ClosedFormCase::SelfLoop => 1.0 / (1.0 - lambda * gamma),
        ClosedFormCase::TwoCycleDiag => 1.0 / (1.0 - lambda * gamma * gamma),
        ClosedFormCase::TwoCycleOff => gamma / (1.0 - lambda * gamma * gamma),
        ClosedFormCase::OneStepReach => gamma / (1.0 - lambda * gamma),
    }
}

/// (I - gamma P)^-1 by Gauss-Jordan elimination with partial pivoting.
pub fn sr_closed_form(p: &Array2<f64>, gamma: f64) -> Result<Array2<f64>> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(Error::Structural("P must be square".into()));
    }
    let mut a: Array2<f64> = Array2::eye(n) - &p.mapv(|v| gamma * v);
    let mut inv: Array2<f64> = Array2::eye(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[[i, col]].abs().partial_cmp(&a[[j, col]].abs()).unwrap())
            .unwrap();
        if a[[pivot, col]].abs() < 1e-14 {
            return Err(Error::Numeric("singular matrix in SR closed form".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap([pivot, k], [col, k]);
                inv.swap([pivot, k], [col, k]);
            }
        }
        let d = a[[col, col]];
        for k in 0..n {
            a[[col, k]] /= d;
            inv[[col, k]] /= d;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = a[[row, col]];
            if f == 0.0 {
                continue;
            }
            for k in 0..n {
                a[[row, k]] -= f * a[[col, k]];
                inv[[row, k]] -= f * inv[[col, k]];
            }
        }
    }
    Ok(inv)
}

/// Stationary state values (I - gamma P)^-1 r.
pub fn stationary_values(p: &Array2<f64>, gamma: f64, r: &Array1<f64>) -> Result<Array1<f64>> {
    Ok(sr_closed_form(p, gamma)?.dot(r))
}

/// Smallest horizon H with gamma^(H+1) / (1 - lambda_max gamma) < target.
pub fn truncation_horizon(gamma: f64, lambda_max: f64, target: f64) -> usize {
    let denom = 1.0 - lambda_max * gamma;
    let mut h = 0usize;
    let mut tail = gamma / denom;
    while tail >= target && h < 1_000_000 {
        tail *= gamma;
        h += 1;
    }
    h
}

/// Monte-Carlo estimate of one row of the representation.
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub mean: Array1<f64>,
    pub se: Array1<f64>,
    pub n_rollouts: usize,
    pub horizon: usize,
    /// Truncation bias bound per entry.
    pub bias_bound: f64,
}

/// Simulates `Phi(start, .)` by direct rollouts of the defining sum, with a
/// per-rollout deterministic RNG substream.
pub fn mc_lambda_r(
    mdp: &TabularMdp,
    pi: &Policy,
    lambda: &Array1<f64>,
    start: usize,
    n_rollouts: usize,
    horizon: usize,
    seed: u64,
) -> McEstimate {
    let n = mdp.n_states;
    let rollouts: Vec<Array1<f64>> = (0..n_rollouts)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let mut contrib = Array1::zeros(n);
            let mut counts = vec![0u32; n];
            let mut s = start;
            let mut discount = 1.0;
            for _ in 0..=horizon {
                contrib[s] += pow_visits(lambda[s], counts[s]) * discount;
                counts[s] += 1;
                discount *= mdp.gamma;
                let a = pi.sample_action(s, &mut rng);
                s = mdp.sample_next(s, a, &mut rng);
            }
            contrib
        })
        .collect();

    let mut mean = Array1::zeros(n);
    for r in &rollouts {
        mean += r;
    }
    mean /= n_rollouts as f64;
    let mut var = Array1::zeros(n);
    for r in &rollouts {
        let d = r - &mean;
        var += &(&d * &d);
    }
    let denom = (n_rollouts.max(2) - 1) as f64;
    let se = var.mapv(|v| (v / denom / n_rollouts as f64).sqrt());
    let lambda_max = lambda.iter().cloned().fold(0.0, f64::max);
    let bias_bound = mdp.gamma.powi(horizon as i32 + 1) / (1.0 - lambda_max * mdp.gamma);
    McEstimate {
        mean,
        se,
        n_rollouts,
        horizon,
        bias_bound,
    }
}

/// Monte-Carlo estimate of the diminished discounted return from `start`.
pub fn mc_diminished_value(
    mdp: &TabularMdp,
    pi: &Policy,
    spec: &RewardSpec,
    start: usize,
    n_rollouts: usize,
    horizon: usize,
    seed: u64,
) -> (f64, f64) {
    let returns: Vec<f64> = (0..n_rollouts)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let mut counts = vec![0u32; mdp.n_states];
            let mut s = start;
            let mut discount = 1.0;
            let mut total = 0.0;
            for _ in 0..horizon {
                total += pow_visits(spec.lambda[s], counts[s]) * spec.r_bar[s] * discount;
                counts[s] += 1;
                discount *= mdp.gamma;
                let a = pi.sample_action(s, &mut rng);
                s = mdp.sample_next(s, a, &mut rng);
            }
            total
        })
        .collect();
    let mean = returns.iter().sum::<f64>() / n_rollouts as f64;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
        / (n_rollouts.max(2) - 1) as f64;
    (mean, (var / n_rollouts as f64).sqrt())
}

/// Exact truncated diminished return along the unique trajectory of a
/// deterministic system: sum of gamma^k lambda(s_k)^n(s_k) rbar(s_k) over the
/// first `horizon` occupancies (k = 0 is the start state).
pub fn exact_diminished_value(
    mdp: &TabularMdp,
    pi: &Policy,
    spec: &RewardSpec,
    start: usize,
    horizon: usize,
) -> Result<f64> {
    if !mdp.is_deterministic() {
        return Err(Error::Unsupported(
            "exact enumeration needs a deterministic MDP".into(),
        ));
    }
    if !matches!(spec.scheme, RewardScheme::PureDiminish) {
        return Err(Error::Unsupported(
            "exact enumeration covers the pure scheme only".into(),
        ));
    }
    let mut counts = vec![0u32; mdp.n_states];
    let mut s = start;
    let mut discount = 1.0;
    let mut total = 0.0;
    for _ in 0..horizon {
        total += pow_visits(spec.lambda[s], counts[s]) * spec.r_bar[s] * discount;
        counts[s] += 1;
        discount *= mdp.gamma;
        s = mdp.deterministic_next(s, pi.action(s))?;
    }
    Ok(total)
}

/// Exact truncated diminished action values on a deterministic system:
/// occupy `s`, execute `a`, then follow `pi` for the remaining occupancies.
pub fn exact_diminished_q(
    mdp: &TabularMdp,
    pi: &Policy,
    spec: &RewardSpec,
    horizon: usize,
) -> Result<Array2<f64>> {
    if !mdp.is_deterministic() {
        return Err(Error::Unsupported(
            "exact enumeration needs a deterministic MDP".into(),
        ));
    }
    let n = mdp.n_states;
    let na = mdp.n_actions;
    let mut q = Array2::zeros((n, na));
    for s in 0..n {
        for a in 0..na {
            let mut counts = vec![0u32; n];
            let mut total = pow_visits(spec.lambda[s], 0) * spec.r_bar[s];
            counts[s] = 1;
            let mut cur = mdp.deterministic_next(s, a)?;
            let mut discount = mdp.gamma;
            for _ in 1..horizon {
                total += pow_visits(spec.lambda[cur], counts[cur]) * spec.r_bar[cur] * discount;
                counts[cur] += 1;
                discount *= mdp.gamma;
                cur = mdp.deterministic_next(cur, pi.action(cur))?;
            }
            q[[s, a]] = total;
        }
    }
    Ok(q)
}

/// Exact truncated row of the representation along a deterministic
/// trajectory (the same sum as [`exact_diminished_value`] without reward
/// weighting).
pub fn exact_lambda_r_row(
    mdp: &TabularMdp,
    pi: &Policy,
    lambda: &Array1<f64>,
    start: usize,
    horizon: usize,
) -> Result<Array1<f64>> {
    if !mdp.is_deterministic() {
        return Err(Error::Unsupported(
            "exact enumeration needs a deterministic MDP".into(),
        ));
    }
    let mut counts = vec![0u32; mdp.n_states];
    let mut row = Array1::zeros(mdp.n_states);
    let mut s = start;
    let mut discount = 1.0;
    for _ in 0..horizon {
        row[s] += pow_visits(lambda[s], counts[s]) * discount;
        counts[s] += 1;
        discount *= mdp.gamma;
        s = mdp.deterministic_next(s, pi.action(s))?;
    }
    Ok(row)
}
