//! Policy composition: generalized policy evaluation over a library of
//! solved representations, improvement by argmax over actions and policies,
//! episode execution with per-step reward refresh, and the composition
//! bound checker.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::episode::{run_episode_with_rng, Dynamics, EpisodeOptions, EpisodeTrace};
use crate::error::{Error, Result};
use crate::mdp::{argmax, greedy_policy, Policy, TabularMdp};
use crate::rep::{solve_lambda_r_actions, ActionLambdaR};
use crate::reward::RewardSpec;

/// Named policies with their solved action-conditioned representations
/// (shared state/action spaces, decay vector and discount).
#[derive(Debug, Clone)]
pub struct PolicySet {
    pub names: Vec<String>,
    pub policies: Vec<Policy>,
    pub reps: Vec<ActionLambdaR>,
    pub lambda: Array1<f64>,
    pub gamma: f64,
}

impl PolicySet {
    pub fn build(
        mdp: &TabularMdp,
        members: Vec<(String, Policy)>,
        lambda: &Array1<f64>,
        tol: f64,
    ) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Config("policy set is empty".into()));
        }
        let mut names = Vec::new();
        let mut policies = Vec::new();
        let mut reps = Vec::new();
        for (name, pi) in members {
            let (rep, _) = solve_lambda_r_actions(mdp, &pi, lambda, tol, 1_000_000)?;
            names.push(name);
            policies.push(pi);
            reps.push(rep);
        }
        Ok(Self {
            names,
            policies,
            reps,
            lambda: lambda.clone(),
            gamma: mdp.gamma,
        })
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }
}

/// Per-policy Q values at (s, a): Q_j = r . Phi_j(s, a, .).
pub fn gpe(set: &PolicySet, s: usize, a: usize, r: &Array1<f64>) -> Vec<f64> {
    set.reps
        .iter()
        .map(|rep| rep.phi.slice(ndarray::s![s, a, ..]).dot(r))
        .collect()
}

/// max over policies of the GPE value, per action.
pub fn gpe_max_per_action(set: &PolicySet, s: usize, r: &Array1<f64>) -> Vec<f64> {
    let na = set.reps[0].phi.dim().1;
    (0..na)
        .map(|a| {
            gpe(set, s, a, r)
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Composition action: argmax over actions of max over policies, ties broken
/// toward the lowest action index (and lowest policy index for the source).
pub fn gpi_action(set: &PolicySet, s: usize, r: &Array1<f64>) -> usize {
    argmax(gpe_max_per_action(set, s, r))
}

/// As [`gpi_action`], also reporting which policy attains the max.
pub fn gpi_action_with_source(set: &PolicySet, s: usize, r: &Array1<f64>) -> (usize, usize) {
    let action = gpi_action(set, s, r);
    let q = gpe(set, s, action, r);
    (action, argmax(q))
}

/// Stationary policy obtained by applying the composition rule at the fixed
/// reward vector `r` in every state.
pub fn gpi_policy(set: &PolicySet, r: &Array1<f64>) -> Result<Policy> {
    let ns = set.reps[0].phi.dim().0;
    let na = set.reps[0].phi.dim().1;
    let actions: Vec<usize> = (0..ns).map(|s| gpi_action(set, s, r)).collect();
    let _ = ns;
    Policy::deterministic(na, &actions)
}

#[derive(Debug, Clone, Copy)]
pub struct EpisodeStats {
    pub undiscounted: f64,
    pub discounted: f64,
    pub steps: usize,
}

/// Result of running the composition agent for a batch of episodes.
#[derive(Debug, Clone)]
pub struct GpiRun {
    pub episodes: Vec<EpisodeStats>,
    pub traces: Vec<EpisodeTrace>,
    pub mean_undiscounted: f64,
    pub se_undiscounted: f64,
    pub mean_discounted: f64,
    pub se_discounted: f64,
}

pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs the composition agent: at every step the current environment reward
/// vector is re-read and the argmax-over-policies action applied. Episodes
/// use independent RNG substreams of `seed`.
pub fn run_gpe_gpi<D: Dynamics + Sync>(
    dynamics: &D,
    spec: &RewardSpec,
    set: &PolicySet,
    episodes: usize,
    options: &EpisodeOptions,
) -> Result<GpiRun> {
    let results: Vec<Result<EpisodeTrace>> = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            rng.set_stream(e as u64 + 1);
            let mut agent = |s: usize, r: &Array1<f64>| gpi_action(set, s, r);
            run_episode_with_rng(dynamics, spec, &mut agent, options, &mut rng)
        })
        .collect();
    let mut traces = Vec::with_capacity(episodes);
    for r in results {
        traces.push(r?);
    }
    let stats: Vec<EpisodeStats> = traces
        .iter()
        .map(|t| EpisodeStats {
            undiscounted: t.undiscounted_return,
            discounted: t.discounted_return,
            steps: t.len(),
        })
        .collect();
    let (mean_u, se_u) = mean_and_se(&stats.iter().map(|s| s.undiscounted).collect::<Vec<_>>());
    let (mean_d, se_d) = mean_and_se(&stats.iter().map(|s| s.discounted).collect::<Vec<_>>());
    Ok(GpiRun {
        episodes: stats,
        traces,
        mean_undiscounted: mean_u,
        se_undiscounted: se_u,
        mean_discounted: mean_d,
        se_discounted: se_d,
    })
}

/// Optimal stationary policy for per-state rewards (plus optional per-action
/// penalties) by Q-value iteration; ties break toward the lowest action.
pub fn optimal_stationary_policy(
    mdp: &TabularMdp,
    r_state: &Array1<f64>,
    action_penalty: Option<&Array2<f64>>,
    tol: f64,
) -> Result<Policy> {
    let n = mdp.n_states;
    let na = mdp.n_actions;
    let mut v = Array1::zeros(n);
    for _ in 0..1_000_000 {
        let mut v_next = Array1::zeros(n);
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..na {
                let cont: f64 = (0..n).map(|s2| mdp.transitions[[s, a, s2]] * v[s2]).sum();
                let pen = action_penalty.map_or(0.0, |p| p[[s, a]]);
                best = best.max(r_state[s] + pen + mdp.gamma * cont);
            }
            v_next[s] = best;
        }
        let diff: f64 = v
            .iter()
            .zip(v_next.iter())
            .map(|(a, b): (&f64, &f64)| (a - b).abs())
            .fold(0.0, f64::max);
        v = v_next;
        if diff < tol {
            let mut q = Array2::zeros((n, na));
            for s in 0..n {
                for a in 0..na {
                    let cont: f64 = (0..n).map(|s2| mdp.transitions[[s, a, s2]] * v[s2]).sum();
                    let pen = action_penalty.map_or(0.0, |p| p[[s, a]]);
                    q[[s, a]] = r_state[s] + pen + mdp.gamma * cont;
                }
            }
            return greedy_policy(&q);
        }
    }
    Err(Error::NoConvergence {
        iterations: 1_000_000,
        residual: f64::NAN,
    })
}

/// One (s, a) entry of the composition bound report.
#[derive(Debug, Clone, Copy)]
pub struct BoundEntry {
    pub state: usize,
    pub action: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

/// Composition bound report: for every checked pair,
/// Q^pi(s,a) >= max_j Q^{pi_j}(s,a)
///   - (2 eps + |l - l_hat| max|r| + gamma (1-l) r(s) / (1 - l gamma)) / (1 - gamma).
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub epsilon: f64,
    pub mismatch_term: f64,
    pub min_slack: f64,
    pub violations: Vec<BoundEntry>,
    pub entries: usize,
}

/// Checks the composition bound with exact DP quantities at the initial
/// reward vector. `policies` are the library members; the improvement policy
/// is derived from their lambda_hat evaluations.
pub fn gpi_bound_check(
    mdp: &TabularMdp,
    r_bar: &Array1<f64>,
    policies: &[Policy],
    lambda_true: f64,
    lambda_hat: f64,
    tol: f64,
) -> Result<BoundReport> {
    if policies.is_empty() {
        return Err(Error::Config(
            "bound check needs at least one policy".into(),
        ));
    }
    let n = mdp.n_states;
    let na = mdp.n_actions;
    let l_true = Array1::from_elem(n, lambda_true);
    let l_hat = Array1::from_elem(n, lambda_hat);

    let mut q_true: Vec<Array2<f64>> = Vec::new();
    let mut q_hat: Vec<Array2<f64>> = Vec::new();
    for pi in policies {
        let (rep_t, _) = solve_lambda_r_actions(mdp, pi, &l_true, tol, 1_000_000)?;
        let (rep_h, _) = solve_lambda_r_actions(mdp, pi, &l_hat, tol, 1_000_000)?;
        q_true.push(rep_t.q_values(r_bar));
        q_hat.push(rep_h.q_values(r_bar));
    }

    // Realized estimate error (the premise's epsilon), padded by the DP
    // tolerance propagated through the value contraction.
    let mut epsilon = 0.0_f64;
    for (qt, qh) in q_true.iter().zip(q_hat.iter()) {
        for (a, b) in qt.iter().zip(qh.iter()) {
            epsilon = epsilon.max((a - b).abs());
        }
    }
    let r_inf = r_bar.iter().fold(0.0_f64, |m, &r| m.max(r.abs()));
    let dp_pad = tol * r_inf * n as f64 / (1.0 - mdp.gamma);
    epsilon += dp_pad;

    // Improvement policy from the lambda_hat estimates.
    let mut q_max_hat = Array2::from_elem((n, na), f64::NEG_INFINITY);
    for qh in &q_hat {
        for (dst, src) in q_max_hat.iter_mut().zip(qh.iter()) {
            *dst = dst.max(*src);
        }
    }
    let pi_improved = greedy_policy(&q_max_hat)?;
    let (rep_pi, _) = solve_lambda_r_actions(mdp, &pi_improved, &l_true, tol, 1_000_000)?;
    let q_pi = rep_pi.q_values(r_bar);

    let gamma = mdp.gamma;
    let mismatch_term = (lambda_true - lambda_hat).abs() * r_inf;
    let mut min_slack = f64::INFINITY;
    let mut violations = Vec::new();
    for s in 0..n {
        for a in 0..na {
            let best_true = q_true
                .iter()
                .map(|q| q[[s, a]])
                .fold(f64::NEG_INFINITY, f64::max);
            let diminish_term =
                gamma * (1.0 - lambda_true) * r_bar[s] / (1.0 - lambda_true * gamma);
            let rhs = best_true - (2.0 * epsilon + mismatch_term + diminish_term) / (1.0 - gamma);
            let lhs = q_pi[[s, a]];
            let slack = lhs - rhs;
            min_slack = min_slack.min(slack);
            if slack < -1e-9 {
                violations.push(BoundEntry {
                    state: s,
                    action: a,
                    lhs,
                    rhs,
                    slack,
                });
            }
        }
    }
    Ok(BoundReport {
        epsilon,
        mismatch_term,
        min_slack,
        violations,
        entries: n * na,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::EnvConfig;
    use crate::oracle::micro;
    use ndarray::arr1;

    fn toy_world() -> crate::grid::GridWorld {
        let text = r#"{
            "grid": ["G.G"],
            "goals": {"0,0": {"reward": 10.0, "lambda": 0.0},
                      "0,2": {"reward": 6.0, "lambda": 1.0}},
            "gamma": 0.99, "noise_prob": 0.0, "wall_penalty": 0.0, "start": [0, 1]
        }"#;
        EnvConfig::from_json(text).unwrap().build().unwrap()
    }

    fn toy_policy_set(world: &crate::grid::GridWorld, lambda: &Array1<f64>) -> PolicySet {
        use crate::grid::{LEFT, RIGHT, STAY};
        // Go-left-and-hold vs go-right-and-hold.
        let left = Policy::deterministic(5, &[STAY, LEFT, LEFT]).unwrap();
        let right = Policy::deterministic(5, &[RIGHT, RIGHT, STAY]).unwrap();
        PolicySet::build(
            &world.mdp,
            vec![("left".into(), left), ("right".into(), right)],
            lambda,
            1e-10,
        )
        .unwrap()
    }

    #[test]
    fn zero_reward_vector_gives_zero_q_everywhere() {
        let world = toy_world();
        let set = toy_policy_set(&world, &world.lambda_vector_with(0.5));
        let r = Array1::zeros(3);
        for a in 0..5 {
            assert!(gpe(&set, 1, a, &r).iter().all(|&q| q == 0.0));
        }
    }

    #[test]
    fn correct_decay_rates_send_the_agent_right() {
        let world = toy_world();
        // True rates: left goal vanishes after one visit, right goal persists.
        let mut lambda = Array1::from_elem(3, 1.0);
        lambda[0] = 0.0;
        lambda[2] = 1.0;
        let set = toy_policy_set(&world, &lambda);
        let r = arr1(&[10.0, 0.0, 6.0]);
        let q_left = gpe_max_per_action(&set, 1, &r)[crate::grid::LEFT];
        let q_right = gpe_max_per_action(&set, 1, &r)[crate::grid::RIGHT];
        assert!(
            q_right > q_left,
            "right {q_right} should beat left {q_left}"
        );
        assert_eq!(gpi_action(&set, 1, &r), crate::grid::RIGHT);
    }

    #[test]
    fn stationarity_assumption_sends_the_agent_left() {
        let world = toy_world();
        let set = toy_policy_set(&world, &Array1::from_elem(3, 1.0));
        let r = arr1(&[10.0, 0.0, 6.0]);
        assert_eq!(gpi_action(&set, 1, &r), crate::grid::LEFT);
    }

    #[test]
    fn single_policy_set_reduces_to_greedy_on_its_gpe() {
        let (mdp, pi) = micro::two_cycle(0.9);
        let lambda = arr1(&[0.5, 0.5]);
        let set = PolicySet::build(&mdp, vec![("only".into(), pi)], &lambda, 1e-10).unwrap();
        let r = arr1(&[1.0, 2.0]);
        for s in 0..2 {
            let q = gpe(&set, s, 0, &r);
            assert_eq!(gpi_action(&set, s, &r), 0);
            assert_eq!(q.len(), 1);
        }
    }

    #[test]
    fn adding_a_policy_never_lowers_the_per_action_max() {
        let world = toy_world();
        let lambda = world.lambda_vector_with(0.5);
        use crate::grid::{LEFT, RIGHT, STAY};
        let left = Policy::deterministic(5, &[STAY, LEFT, LEFT]).unwrap();
        let right = Policy::deterministic(5, &[RIGHT, RIGHT, STAY]).unwrap();
        let small = PolicySet::build(
            &world.mdp,
            vec![("left".into(), left.clone())],
            &lambda,
            1e-10,
        )
        .unwrap();
        let big = PolicySet::build(
            &world.mdp,
            vec![("left".into(), left), ("right".into(), right)],
            &lambda,
            1e-10,
        )
        .unwrap();
        let r = arr1(&[10.0, 0.0, 6.0]);
        for s in 0..3 {
            let small_max = gpe_max_per_action(&small, s, &r);
            let big_max = gpe_max_per_action(&big, s, &r);
            for a in 0..5 {
                assert!(big_max[a] >= small_max[a] - 1e-12);
            }
        }
    }

    #[test]
    fn source_policy_ties_break_toward_the_lowest_index() {
        let (mdp, pi) = micro::two_cycle(0.9);
        let lambda = arr1(&[0.5, 0.5]);
        // Two copies of the same policy: identical Q values everywhere, so
        // the reported source must be policy 0.
        let set = PolicySet::build(
            &mdp,
            vec![("a".into(), pi.clone()), ("b".into(), pi)],
            &lambda,
            1e-10,
        )
        .unwrap();
        let r = arr1(&[1.0, 2.0]);
        let (action, source) = gpi_action_with_source(&set, 0, &r);
        assert_eq!(action, 0);
        assert_eq!(source, 0);
    }

    #[test]
    fn stationary_gpi_policy_matches_per_state_actions() {
        let world = toy_world();
        let set = toy_policy_set(&world, &world.lambda_vector_with(0.5));
        let r = arr1(&[10.0, 0.0, 6.0]);
        let pi = gpi_policy(&set, &r).unwrap();
        for s in 0..3 {
            assert_eq!(pi.action(s), gpi_action(&set, s, &r));
        }
    }

    #[test]
    fn gpe_is_linear_in_the_reward_vector() {
        let world = toy_world();
        let set = toy_policy_set(&world, &world.lambda_vector_with(0.5));
        let r1 = arr1(&[1.0, 2.0, 3.0]);
        let r2 = arr1(&[0.5, 0.0, 4.0]);
        let sum = &r1 + &r2;
        for s in 0..3 {
            for a in 0..5 {
                let lhs = gpe(&set, s, a, &sum);
                let q1 = gpe(&set, s, a, &r1);
                let q2 = gpe(&set, s, a, &r2);
                for j in 0..2 {
                    assert!((lhs[j] - (q1[j] + q2[j])).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn gpi_action_is_invariant_under_positive_reward_rescaling() {
        let world = toy_world();
        let set = toy_policy_set(&world, &world.lambda_vector_with(0.5));
        let r = arr1(&[10.0, 0.0, 6.0]);
        let scaled = r.mapv(|v| 3.5 * v);
        for s in 0..3 {
            assert_eq!(gpi_action(&set, s, &r), gpi_action(&set, s, &scaled));
        }
    }

    #[test]
    fn exact_single_policy_bound_has_nonnegative_slack_and_tight_max() {
        let (mdp, _) = micro::two_cycle(0.9);
        let r = arr1(&[1.0, 0.3]);
        // Optimal policy for the stationary task is in the set.
        let pi = optimal_stationary_policy(&mdp, &r, None, 1e-12).unwrap();
        let report = gpi_bound_check(&mdp, &r, &[pi], 1.0, 1.0, 1e-12).unwrap();
        assert!(report.violations.is_empty());
        assert!(report.min_slack >= -1e-9);
        assert_eq!(report.mismatch_term, 0.0);
    }

    #[test]
    fn matched_rates_on_a_deterministic_grid_beat_the_library() {
        // Composition return should never fall below the best single policy
        // when rates match and the world is deterministic.
        let text = r#"{
            "grid": ["....G"],
            "goals": {"0,4": {"reward": 5.0, "lambda": 0.6}},
            "gamma": 0.95, "noise_prob": 0.0, "wall_penalty": 0.0, "start": [0, 0]
        }"#;
        let world = EnvConfig::from_json(text).unwrap().build().unwrap();
        let spec = world.reward_spec(crate::reward::RewardScheme::PureDiminish);
        let lambda = world.lambda_vector_with(0.6);
        let goal = world.goal_states[0];
        let mut r_target = Array1::zeros(world.mdp.n_states);
        r_target[goal] = 1.0;
        let pi = optimal_stationary_policy(
            &world.mdp,
            &r_target,
            Some(&world.bump_prob.mapv(|b| b * world.spec.wall_penalty)),
            1e-12,
        )
        .unwrap();
        let set = PolicySet::build(
            &world.mdp,
            vec![("to_goal".into(), pi.clone())],
            &lambda,
            1e-10,
        )
        .unwrap();
        let options = EpisodeOptions::new(20, 5);
        let gpi = run_gpe_gpi(&world, &spec, &set, 8, &options).unwrap();
        // Baseline: follow the library policy itself.
        for (e, stats) in gpi.episodes.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            rng.set_stream(e as u64 + 1);
            let mut agent = |s: usize, _: &Array1<f64>| pi.action(s);
            let base = run_episode_with_rng(&world, &spec, &mut agent, &options, &mut rng).unwrap();
            assert!(stats.undiscounted >= base.undiscounted_return - 1e-9);
        }
    }
}
