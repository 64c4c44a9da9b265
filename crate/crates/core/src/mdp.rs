//! Finite MDPs, stochastic policies and the induced per-policy transition
//! matrix P^pi.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// How far a probability row may deviate from summing to one.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// A finite MDP: transition tensor p(s'|s,a), discount and start distribution.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// Indexed `[s, a, s']`.
    pub transitions: Array3<f64>,
    pub gamma: f64,
    pub start_distribution: Array1<f64>,
}

impl TabularMdp {
    pub fn new(
        transitions: Array3<f64>,
        gamma: f64,
        start_distribution: Array1<f64>,
    ) -> Result<Self> {
        let (n_states, n_actions, n_next) = transitions.dim();
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Structural("empty state or action set".into()));
        }
        if n_next != n_states {
            return Err(Error::Structural(format!(
                "transition tensor is {n_states}x{n_actions}x{n_next}, expected last axis {n_states}"
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!("gamma {gamma} not in [0, 1)")));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = transitions.slice(ndarray::s![s, a, ..]);
                let sum: f64 = row.sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::Config(format!(
                        "p(.|s={s}, a={a}) sums to {sum}, expected 1"
                    )));
                }
                if row.iter().any(|&p| p < 0.0) {
                    return Err(Error::Config(format!(
                        "negative probability at (s={s}, a={a})"
                    )));
                }
            }
        }
        if start_distribution.len() != n_states {
            return Err(Error::Structural(
                "start distribution length mismatch".into(),
            ));
        }
        let start_sum: f64 = start_distribution.sum();
        if (start_sum - 1.0).abs() > STOCHASTIC_TOL || start_distribution.iter().any(|&p| p < 0.0) {
            return Err(Error::Config(
                "start distribution is not a probability vector".into(),
            ));
        }
        Ok(Self {
            n_states,
            n_actions,
            transitions,
            gamma,
            start_distribution,
        })
    }

    /// True when every `(s, a)` row is a point mass.
    pub fn is_deterministic(&self) -> bool {
        self.transitions.iter().all(|&p| p == 0.0 || p == 1.0)
    }

    pub fn sample_start<R: Rng>(&self, rng: &mut R) -> usize {
        sample_categorical(rng, self.start_distribution.as_slice().unwrap())
    }

    pub fn sample_next<R: Rng>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        let row = self.transitions.slice(ndarray::s![s, a, ..]);
        sample_categorical(rng, row.as_slice().unwrap())
    }

    /// Successor of `(s, a)` in a deterministic MDP.
    pub fn deterministic_next(&self, s: usize, a: usize) -> Result<usize> {
        let row = self.transitions.slice(ndarray::s![s, a, ..]);
        for (s2, &p) in row.iter().enumerate() {
            if p == 1.0 {
                return Ok(s2);
            }
        }
        Err(Error::Unsupported(format!(
            "transition (s={s}, a={a}) is stochastic"
        )))
    }
}

/// Draws an index from an unnormalized-but-valid probability slice.
pub fn sample_categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the final cumulative sum; return the last
    // positive-probability index.
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// A stationary stochastic policy pi(a|s).
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub probs: Array2<f64>,
}

impl Policy {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (s, row) in probs.axis_iter(Axis(0)).enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Config(format!(
                    "pi(.|s={s}) sums to {sum}, expected 1"
                )));
            }
            if row.iter().any(|&p| p < 0.0) {
                return Err(Error::Config(format!(
                    "negative policy probability at s={s}"
                )));
            }
        }
        Ok(Self { probs })
    }

    /// Deterministic policy from an action per state.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = Array2::zeros((actions.len(), n_actions));
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::Config(format!("action {a} out of range at s={s}")));
            }
            probs[[s, a]] = 1.0;
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64),
        }
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn sample_action<R: Rng>(&self, s: usize, rng: &mut R) -> usize {
        let row = self.probs.row(s);
        sample_categorical(rng, row.as_slice().unwrap())
    }

    /// Action of a deterministic policy at `s`.
    pub fn action(&self, s: usize) -> usize {
        let row = self.probs.row(s);
        let mut best = 0;
        let mut best_p = f64::NEG_INFINITY;
        for (a, &p) in row.iter().enumerate() {
            if p > best_p {
                best = a;
                best_p = p;
            }
        }
        best
    }

    /// Parses the policy file format: a JSON map from state index to an
    /// action-probability row.
    pub fn from_json(text: &str) -> Result<Self> {
        let map: std::collections::BTreeMap<String, Vec<f64>> = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("bad policy file: {e}")))?;
        if map.is_empty() {
            return Err(Error::Config("policy file has no states".into()));
        }
        let n_states = map.len();
        let n_actions = map.values().next().unwrap().len();
        let mut probs = Array2::zeros((n_states, n_actions));
        for (key, row) in &map {
            let s: usize = key
                .parse()
                .map_err(|_| Error::Config(format!("bad state index '{key}'")))?;
            if s >= n_states {
                return Err(Error::Config(format!(
                    "state index {s} out of range for {n_states} states"
                )));
            }
            if row.len() != n_actions {
                return Err(Error::Config(format!("ragged action row at state {s}")));
            }
            for (a, &p) in row.iter().enumerate() {
                probs[[s, a]] = p;
            }
        }
        Policy::new(probs)
    }

    pub fn to_json(&self) -> String {
        let map: std::collections::BTreeMap<String, Vec<f64>> = self
            .probs
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(s, row)| (s.to_string(), row.to_vec()))
            .collect();
        serde_json::to_string_pretty(&map).expect("policy serializes")
    }
}

/// P^pi with entries P(s, s') = sum_a pi(a|s) p(s'|s,a).
pub fn policy_transition_matrix(mdp: &TabularMdp, pi: &Policy) -> Result<Array2<f64>> {
    if pi.n_states() != mdp.n_states || pi.n_actions() != mdp.n_actions {
        return Err(Error::Structural(format!(
            "policy is {}x{}, mdp expects {}x{}",
            pi.n_states(),
            pi.n_actions(),
            mdp.n_states,
            mdp.n_actions
        )));
    }
    let mut p = Array2::zeros((mdp.n_states, mdp.n_states));
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let w = pi.probs[[s, a]];
            if w == 0.0 {
                continue;
            }
            for s2 in 0..mdp.n_states {
                p[[s, s2]] += w * mdp.transitions[[s, a, s2]];
            }
        }
    }
    Ok(p)
}

/// Greedy deterministic policy from a Q table, ties broken toward the lowest
/// action index.
pub fn greedy_policy(q: &Array2<f64>) -> Result<Policy> {
    if q.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN entry in Q table".into()));
    }
    let actions: Vec<usize> = q
        .axis_iter(Axis(0))
        .map(|row| argmax(row.iter().copied()))
        .collect();
    Policy::deterministic(q.ncols(), &actions)
}

/// First index attaining the maximum (lowest-index tie break).
pub fn argmax<I: IntoIterator<Item = f64>>(values: I) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}
