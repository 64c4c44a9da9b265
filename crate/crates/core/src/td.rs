//! Sample-based learners: tabular TD on the action-conditioned
//! representation, online Q-learning driven by the current reward vector,
//! linear feature TD, the corrected value TD target, and closed-form
//! decay-rate estimation.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::episode::{Dynamics, EpisodeState, TERMINATION_THRESHOLD};
use crate::error::{Error, Result};
use crate::mdp::argmax;
use crate::reward::RewardSpec;

/// Shared learner configuration.
#[derive(Debug, Clone)]
pub struct LearnerConfig {
    pub alpha: f64,
    pub lambda: f64,
    /// Per-state decay rates; overrides the scalar when set.
    pub lambda_vector: Option<Array1<f64>>,
    pub episodes: usize,
    pub horizon: usize,
    /// Exploration at episode 0; annealed linearly to `epsilon_final` over
    /// the first half of training, then held.
    pub epsilon_start: f64,
    pub epsilon_final: f64,
    pub seed: u64,
}

impl LearnerConfig {
    pub fn new(lambda: f64, episodes: usize, horizon: usize, seed: u64) -> Self {
        Self {
            alpha: 0.1,
            lambda,
            lambda_vector: None,
            episodes,
            horizon,
            epsilon_start: 1.0,
            epsilon_final: 0.05,
            seed,
        }
    }

    pub fn with_lambda_vector(mut self, lambda: Array1<f64>) -> Self {
        self.lambda_vector = Some(lambda);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || self.alpha == 0.0 {
            return Err(Error::Config(format!("alpha {} not in (0,1]", self.alpha)));
        }
        for (name, eps) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_final", self.epsilon_final),
        ] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::Config(format!("{name} {eps} not in [0,1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda {} not in [0,1]",
                self.lambda
            )));
        }
        Ok(())
    }

    fn epsilon_at(&self, episode: usize) -> f64 {
        let half = (self.episodes / 2).max(1);
        if episode >= half {
            self.epsilon_final
        } else {
            let frac = episode as f64 / half as f64;
            self.epsilon_start + frac * (self.epsilon_final - self.epsilon_start)
        }
    }
}

/// One tabular TD update of row `(s_t, a_t)` toward the representation
/// target; returns the TD error vector.
///
/// delta = 1(s_t) .* (1 + gamma lambda Phi(s_{t+1}, a_{t+1}))
///       + gamma (1 - 1(s_t)) .* Phi(s_{t+1}, a_{t+1}) - Phi(s_t, a_t)
pub fn td_update_lambda_r(
    phi: &mut Array3<f64>,
    transition: (usize, usize, usize, usize),
    alpha: f64,
    gamma: f64,
    lambda: &Array1<f64>,
) -> Array1<f64> {
    let (s, a, s2, a2) = transition;
    let n = phi.dim().2;
    let mut delta = Array1::zeros(n);
    for sp in 0..n {
        let next = phi[[s2, a2, sp]];
        let target = if sp == s {
            1.0 + gamma * lambda[sp] * next
        } else {
            gamma * next
        };
        delta[sp] = target - phi[[s, a, sp]];
    }
    for sp in 0..n {
        phi[[s, a, sp]] += alpha * delta[sp];
    }
    delta
}

/// Result of online Q-learning on the representation.
#[derive(Debug, Clone)]
pub struct QLambdaResult {
    pub phi: Array3<f64>,
    /// Undiscounted return per episode.
    pub returns: Vec<f64>,
    pub discounted_returns: Vec<f64>,
}

/// Online Q-learning: at each step the representation is contracted with the
/// environment's current reward vector, the update bootstraps through the
/// greedy next action, and behavior is epsilon-greedy with a linear anneal.
pub fn q_lambda_learning<D: Dynamics>(
    dynamics: &D,
    spec: &RewardSpec,
    config: &LearnerConfig,
) -> Result<QLambdaResult> {
    config.validate()?;
    let n = dynamics.n_states();
    let na = dynamics.n_actions();
    let gamma = dynamics.gamma();
    let lambda = match &config.lambda_vector {
        Some(v) => {
            if v.len() != n {
                return Err(Error::Structural("lambda vector length mismatch".into()));
            }
            if v.iter().any(|&l| !(0.0..=1.0).contains(&l)) {
                return Err(Error::Config("lambda entries must lie in [0,1]".into()));
            }
            v.clone()
        }
        None => Array1::from_elem(n, config.lambda),
    };
    let mut phi = Array3::zeros((n, na, n));
    let mut returns = Vec::with_capacity(config.episodes);
    let mut discounted = Vec::with_capacity(config.episodes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    for episode in 0..config.episodes {
        let eps = config.epsilon_at(episode);
        let start = dynamics.sample_start(&mut rng);
        let mut ep =
            EpisodeState::begin(spec, start, config.horizon).with_threshold(TERMINATION_THRESHOLD);
        let q_row = |phi: &Array3<f64>, s: usize, r: &Array1<f64>| -> Vec<f64> {
            (0..na)
                .map(|a| phi.slice(ndarray::s![s, a, ..]).dot(r))
                .collect()
        };
        let mut action = {
            let q = q_row(&phi, ep.current, &ep.reward_vector);
            if rng.gen::<f64>() < eps {
                rng.gen_range(0..na)
            } else {
                argmax(q.iter().copied())
            }
        };
        while !ep.terminated {
            let s = ep.current;
            crate::episode::step(dynamics, spec, &mut ep, action, &mut rng)?;
            let s2 = ep.current;
            // Greedy bootstrap action under the post-step reward vector.
            let q_next = q_row(&phi, s2, &ep.reward_vector);
            let greedy = argmax(q_next.iter().copied());
            td_update_lambda_r(
                &mut phi,
                (s, action, s2, greedy),
                config.alpha,
                gamma,
                &lambda,
            );
            action = if rng.gen::<f64>() < eps {
                rng.gen_range(0..na)
            } else {
                greedy
            };
        }
        returns.push(ep.undiscounted_return);
        discounted.push(ep.discounted_return);
    }
    Ok(QLambdaResult {
        phi,
        returns,
        discounted_returns: discounted,
    })
}

/// On-policy tabular TD policy evaluation of the representation. Episodes
/// start from every state in turn; behavior and bootstrap actions are both
/// drawn from `pi`.
pub fn td_policy_evaluation<D: Dynamics>(
    dynamics: &D,
    pi: &crate::mdp::Policy,
    lambda: &Array1<f64>,
    episodes: usize,
    horizon: usize,
    alpha: f64,
    seed: u64,
) -> Array3<f64> {
    td_policy_evaluation_logged(dynamics, pi, lambda, episodes, horizon, alpha, seed).0
}

/// As [`td_policy_evaluation`], also returning the mean absolute TD error
/// per episode.
pub fn td_policy_evaluation_logged<D: Dynamics>(
    dynamics: &D,
    pi: &crate::mdp::Policy,
    lambda: &Array1<f64>,
    episodes: usize,
    horizon: usize,
    alpha: f64,
    seed: u64,
) -> (Array3<f64>, Vec<f64>) {
    let n = dynamics.n_states();
    let na = dynamics.n_actions();
    let gamma = dynamics.gamma();
    let mut phi = Array3::zeros((n, na, n));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut s = e % n;
        let mut a = pi.sample_action(s, &mut rng);
        let mut total_err = 0.0;
        let mut updates = 0usize;
        for _ in 0..horizon {
            let (s2, _) = dynamics.sample_step(s, a, &mut rng);
            let a2 = pi.sample_action(s2, &mut rng);
            let delta = td_update_lambda_r(&mut phi, (s, a, s2, a2), alpha, gamma, lambda);
            total_err += delta.iter().map(|d| d.abs()).sum::<f64>() / n as f64;
            updates += 1;
            s = s2;
            a = a2;
        }
        log.push(total_err / updates.max(1) as f64);
    }
    (phi, log)
}

/// Same evaluation loop through the feature-space learner; returns the mean
/// absolute TD error per episode.
pub fn lambda_f_policy_evaluation<D: Dynamics>(
    dynamics: &D,
    pi: &crate::mdp::Policy,
    model: &mut LinearLambdaF,
    lambda: f64,
    episodes: usize,
    horizon: usize,
    alpha: f64,
    seed: u64,
) -> Vec<f64> {
    let n = dynamics.n_states();
    let d = model.base.ncols();
    let gamma = dynamics.gamma();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut s = e % n;
        let mut a = pi.sample_action(s, &mut rng);
        let mut total_err = 0.0;
        let mut updates = 0usize;
        for _ in 0..horizon {
            let (s2, _) = dynamics.sample_step(s, a, &mut rng);
            let a2 = pi.sample_action(s2, &mut rng);
            let delta = lambda_f_td_update(model, (s, a, s2, a2), alpha, gamma, lambda);
            total_err += delta.iter().map(|v| v.abs()).sum::<f64>() / d as f64;
            updates += 1;
            s = s2;
            a = a2;
        }
        log.push(total_err / updates.max(1) as f64);
    }
    log
}

/// Linear representation over bounded base features in [0, 1]^D.
#[derive(Debug, Clone)]
pub struct LinearLambdaF {
    /// Base features, row per state.
    pub base: Array2<f64>,
    /// Learned representation per (state, action), D columns.
    pub table: Array3<f64>,
    /// Reward weights with r(s) = w . base(s).
    pub reward_weights: Array1<f64>,
}

impl LinearLambdaF {
    pub fn new(base: Array2<f64>, n_actions: usize, reward_weights: Array1<f64>) -> Result<Self> {
        if base.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Config("base features must lie in [0,1]".into()));
        }
        if reward_weights.len() != base.ncols() {
            return Err(Error::Structural("reward weight dimension mismatch".into()));
        }
        let table = Array3::zeros((base.nrows(), n_actions, base.ncols()));
        Ok(Self {
            base,
            table,
            reward_weights,
        })
    }

    /// One-hot base features of an n-state space.
    pub fn one_hot(n_states: usize, n_actions: usize, rewards: Array1<f64>) -> Result<Self> {
        Self::new(Array2::eye(n_states), n_actions, rewards)
    }

    /// Feature-space TD backup for a sampled transition:
    /// base(s) .* (1 + gamma lambda f(s', a')) + gamma (1 - base(s)) .* f(s', a').
    pub fn target(&self, s: usize, s2: usize, a2: usize, gamma: f64, lambda: f64) -> Array1<f64> {
        let phi_s = self.base.row(s);
        let next = self.table.slice(ndarray::s![s2, a2, ..]);
        let d = self.base.ncols();
        let mut out = Array1::zeros(d);
        for k in 0..d {
            out[k] =
                phi_s[k] * (1.0 + gamma * lambda * next[k]) + gamma * (1.0 - phi_s[k]) * next[k];
        }
        out
    }

    pub fn q_value(&self, s: usize, a: usize) -> f64 {
        self.table
            .slice(ndarray::s![s, a, ..])
            .dot(&self.reward_weights)
    }
}

/// TD step toward the feature-space target; with one-hot base features the
/// fixed point is the tabular representation.
pub fn lambda_f_td_update(
    model: &mut LinearLambdaF,
    transition: (usize, usize, usize, usize),
    alpha: f64,
    gamma: f64,
    lambda: f64,
) -> Array1<f64> {
    let (s, a, s2, a2) = transition;
    let target = model.target(s, s2, a2, gamma, lambda);
    let d = model.base.ncols();
    let mut delta = Array1::zeros(d);
    for k in 0..d {
        delta[k] = target[k] - model.table[[s, a, k]];
        model.table[[s, a, k]] += alpha * delta[k];
    }
    delta
}

/// Corrected value TD target:
/// r(s_t) + gamma (V(s_{t+1}) + (lambda - 1) w . (base(s_t) .* f(s_{t+1}))).
pub fn lambda_value_td_target(
    v_next: f64,
    varphi_next: &Array1<f64>,
    reward_weights: &Array1<f64>,
    base_t: &Array1<f64>,
    reward_t: f64,
    gamma: f64,
    lambda: f64,
) -> f64 {
    let correction: f64 = reward_weights
        .iter()
        .zip(base_t.iter().zip(varphi_next.iter()))
        .map(|(w, (b, f))| w * b * f)
        .sum();
    reward_t + gamma * (v_next + (lambda - 1.0) * correction)
}

/// Closed-form least-squares decay estimate from self-transition reward
/// pairs, clamped to [0, 1].
pub fn estimate_lambda(pairs: &[(f64, f64)]) -> Result<f64> {
    let denom: f64 = pairs.iter().map(|(r, _)| r * r).sum();
    if denom == 0.0 {
        return Err(Error::UndefinedEstimate(
            "all self-transition rewards are zero".into(),
        ));
    }
    let numer: f64 = pairs.iter().map(|(r, r2)| r * r2).sum();
    Ok((numer / denom).clamp(0.0, 1.0))
}

/// Incremental gradient variant with the same fixed point as
/// [`estimate_lambda`]: one step of descent on (r' - lambda r)^2 / 2.
pub fn estimate_lambda_step(lambda: f64, pair: (f64, f64), step_size: f64) -> f64 {
    let (r, r2) = pair;
    (lambda + step_size * r * (r2 - lambda * r)).clamp(0.0, 1.0)
}

/// Online accumulator for the closed-form estimator.
#[derive(Debug, Clone, Copy, Default)]
pub struct LambdaEstimator {
    sum_rr2: f64,
    sum_rr: f64,
    pub n_pairs: usize,
}

impl LambdaEstimator {
    pub fn observe(&mut self, r: f64, r2: f64) {
        if r != 0.0 {
            self.sum_rr2 += r * r2;
            self.sum_rr += r * r;
            self.n_pairs += 1;
        }
    }

    pub fn estimate(&self) -> Option<f64> {
        (self.sum_rr > 0.0).then(|| (self.sum_rr2 / self.sum_rr).clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::micro;
    use crate::rep::solve_lambda_r_actions;
    use ndarray::arr1;

    #[test]
    fn update_of_zero_table_is_a_scaled_indicator() {
        let mut phi = Array3::zeros((3, 2, 3));
        let lambda = arr1(&[0.5, 0.5, 0.5]);
        td_update_lambda_r(&mut phi, (1, 0, 2, 1), 0.1, 0.9, &lambda);
        for sp in 0..3 {
            let expect = if sp == 1 { 0.1 } else { 0.0 };
            assert_eq!(phi[[1, 0, sp]], expect);
        }
    }

    #[test]
    fn expected_update_vanishes_at_the_dp_fixed_point() {
        let (mdp, pi) = micro::two_cycle(0.9);
        let lambda = arr1(&[0.5, 0.5]);
        let (rep, _) = solve_lambda_r_actions(&mdp, &pi, &lambda, 1e-13, 100_000).unwrap();
        // Deterministic system: the expected update is the single-sample one.
        for s in 0..2 {
            let a = pi.action(s);
            let s2 = mdp.deterministic_next(s, a).unwrap();
            let a2 = pi.action(s2);
            let mut phi = rep.phi.clone();
            let delta = td_update_lambda_r(&mut phi, (s, a, s2, a2), 1.0, 0.9, &lambda);
            assert!(delta.iter().all(|d| d.abs() < 1e-9));
        }
    }

    #[test]
    fn self_loop_updates_converge_to_the_geometric_value() {
        let lambda = arr1(&[0.5]);
        let mut phi = Array3::zeros((1, 1, 1));
        for _ in 0..200 {
            td_update_lambda_r(&mut phi, (0, 0, 0, 0), 1.0, 0.9, &lambda);
        }
        assert!((phi[[0, 0, 0]] - 1.0 / (1.0 - 0.45)).abs() < 1e-9);
    }

    #[test]
    fn one_hot_feature_update_matches_tabular_update() {
        let lambda = arr1(&[0.3, 0.3, 0.3]);
        let mut tab = Array3::zeros((3, 2, 3));
        let mut lin = LinearLambdaF::one_hot(3, 2, arr1(&[1.0, 0.0, 2.0])).unwrap();
        for (t, tr) in [(0, (0, 0, 1, 1)), (1, (1, 1, 2, 0)), (2, (2, 0, 0, 0))] {
            let _ = t;
            td_update_lambda_r(&mut tab, tr, 0.2, 0.9, &lambda);
            lambda_f_td_update(&mut lin, tr, 0.2, 0.9, 0.3);
        }
        for (a, b) in tab.iter().zip(lin.table.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_features_propagate_without_source() {
        let base = Array2::zeros((2, 2));
        let mut model = LinearLambdaF::new(base, 1, arr1(&[0.0, 0.0])).unwrap();
        model.table[[1, 0, 0]] = 2.0;
        let target = model.target(0, 1, 0, 0.9, 0.5);
        assert_eq!(target[0], 0.9 * 2.0);
        assert_eq!(target[1], 0.0);
    }

    #[test]
    fn constant_features_reach_the_geometric_fixed_point() {
        let base = Array2::from_elem((1, 2), 1.0);
        let mut model = LinearLambdaF::new(base, 1, arr1(&[0.0, 0.0])).unwrap();
        for _ in 0..200 {
            lambda_f_td_update(&mut model, (0, 0, 0, 0), 1.0, 0.9, 0.5);
        }
        for k in 0..2 {
            assert!((model.table[[0, 0, k]] - 1.0 / (1.0 - 0.45)).abs() < 1e-9);
        }
    }

    #[test]
    fn features_outside_unit_interval_are_rejected() {
        let base = Array2::from_elem((1, 1), 1.5);
        assert!(LinearLambdaF::new(base, 1, arr1(&[0.0])).is_err());
    }

    #[test]
    fn value_target_reduces_to_plain_td_at_lambda_one() {
        let varphi = arr1(&[0.4, 0.2]);
        let w = arr1(&[1.0, 2.0]);
        let base = arr1(&[1.0, 0.0]);
        let t = lambda_value_td_target(3.0, &varphi, &w, &base, 0.5, 0.9, 1.0);
        assert!((t - (0.5 + 0.9 * 3.0)).abs() < 1e-15);
    }

    #[test]
    fn value_target_reduces_to_plain_td_when_no_return_is_possible() {
        let varphi = arr1(&[0.0, 0.7]);
        let w = arr1(&[1.0, 2.0]);
        let base = arr1(&[1.0, 0.0]); // base(s_t) .* varphi(s_{t+1}) = 0
        let t = lambda_value_td_target(3.0, &varphi, &w, &base, 0.5, 0.9, 0.2);
        assert!((t - (0.5 + 0.9 * 3.0)).abs() < 1e-15);
    }

    #[test]
    fn estimator_recovers_exact_ratio() {
        assert_eq!(estimate_lambda(&[(10.0, 5.0)]).unwrap(), 0.5);
        assert_eq!(
            estimate_lambda(&[(10.0, 5.0), (5.0, 2.5), (8.0, 4.0)]).unwrap(),
            0.5
        );
    }

    #[test]
    fn estimator_rejects_all_zero_rewards() {
        assert!(matches!(
            estimate_lambda(&[(0.0, 0.0), (0.0, 0.0)]),
            Err(Error::UndefinedEstimate(_))
        ));
    }

    #[test]
    fn incremental_step_shares_the_closed_form_fixed_point() {
        let mut lambda = 0.9;
        for _ in 0..2000 {
            lambda = estimate_lambda_step(lambda, (4.0, 2.0), 0.01);
        }
        assert!((lambda - 0.5).abs() < 1e-9);
    }

    #[test]
    fn estimator_concentrates_under_observation_noise() {
        // Pairs follow r' = 0.7 r + noise with sigma = 0.01.
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pairs: Vec<(f64, f64)> = (0..1000)
            .map(|_| {
                let r: f64 = rng.gen_range(0.5..2.0);
                // Sum of 12 uniforms, shifted: zero mean, unit variance.
                let gauss: f64 = (0..12).map(|_| rng.gen::<f64>()).sum::<f64>() - 6.0;
                (r, 0.7 * r + 0.01 * gauss)
            })
            .collect();
        let est = estimate_lambda(&pairs).unwrap();
        assert!((0.69..=0.71).contains(&est), "estimate {est}");
    }

    #[test]
    fn single_state_learner_reaches_the_geometric_value() {
        // One state, one action: the learned entry approaches 1/(1 - l g)
        // no matter what rewards are emitted.
        let (mdp, _) = micro::self_loop(0.9);
        let spec = crate::reward::RewardSpec::pure(arr1(&[3.0]), arr1(&[0.5])).unwrap();
        let mut config = LearnerConfig::new(0.5, 30, 40, 5);
        config.alpha = 0.2;
        let run = q_lambda_learning(&mdp, &spec, &config).unwrap();
        assert!((run.phi[[0, 0, 0]] - 1.0 / (1.0 - 0.45)).abs() < 1e-3);
    }
}
