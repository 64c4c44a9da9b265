//! Criterion implementations. Each function checks one contract end to end
//! and reports pass/fail with a short numeric summary.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CriterionResult;
use crate::compose::{
    gpi_action, gpi_bound_check, mean_and_se, optimal_stationary_policy, run_gpe_gpi, PolicySet,
};
use crate::episode::EpisodeOptions;
use crate::export;
use crate::forage::{base_policy_library, run_foraging_agent, LambdaMode};
use crate::grid::{EnvConfig, GridWorld, LEFT, RIGHT, STAY};
use crate::mdp::{policy_transition_matrix, Policy, TabularMdp};
use crate::oracle::{self, micro};
use crate::rep::{
    apply_g_lambda, convergence_bound, default_init, lambda_set_operator, max_abs_diff,
    max_entry_bound, solve_lambda_r, solve_lambda_r_actions, solve_nth_occupancy,
};
use crate::reward::RewardScheme;
use crate::td::{
    estimate_lambda, lambda_f_policy_evaluation, lambda_value_td_target, q_lambda_learning,
    td_policy_evaluation, LearnerConfig, LinearLambdaF,
};

pub const CRITERION_COUNT: usize = 14;

pub const FOURROOMS_JSON: &str = include_str!("../../../../configs/fourrooms.json");
pub const TWOROOMS_JSON: &str = include_str!("../../../../configs/tworooms.json");
pub const TOY3_JSON: &str = include_str!("../../../../configs/toy3.json");
pub const GRIDWORLD6_JSON: &str = include_str!("../../../../configs/gridworld6.json");
pub const EVAL_POLICY_JSON: &str = include_str!("../../../../configs/policy_eval_policy.json");

pub fn run_criterion(id: usize) -> CriterionResult {
    match id {
        1 => toy_mdp_advantage(),
        2 => convergence_envelope(),
        3 => contraction(),
        4 => limit_identities(),
        5 => max_value_bound(),
        6 => oracle_agreement(),
        7 => policy_evaluation_ordering(),
        8 => composition_ordering(),
        9 => composition_bound(),
        10 => lambda_estimation(),
        11 => subadditivity(),
        12 => q_learning_ordering(),
        13 => td_target_identity(),
        14 => determinism(),
        other => panic!("unknown criterion {other}"),
    }
}

pub fn all_criteria() -> Vec<CriterionResult> {
    (1..=CRITERION_COUNT).map(run_criterion).collect()
}

fn result(id: usize, name: &'static str, passed: bool, details: String) -> CriterionResult {
    CriterionResult {
        id,
        name,
        passed,
        details,
    }
}

fn toy_world() -> GridWorld {
    EnvConfig::from_json(TOY3_JSON).unwrap().build().unwrap()
}

/// States of the 1x3 toy corridor: 0 = left goal, 1 = middle, 2 = right goal.
fn toy_policies() -> (Policy, Policy) {
    let go_left = Policy::deterministic(5, &[STAY, LEFT, LEFT]).unwrap();
    let go_right = Policy::deterministic(5, &[RIGHT, RIGHT, STAY]).unwrap();
    (go_left, go_right)
}

/// 1. Two-step returns 11.94 vs 10.0 on the toy corridor, and the
///    composition agent's first move under correct vs stationary rates.
fn toy_mdp_advantage() -> CriterionResult {
    let world = toy_world();
    let spec = world.reward_spec(RewardScheme::PureDiminish);

    // Hold at the persistent right goal: 6 + 0.99 * 6.
    let hold_right = Policy::deterministic(5, &[STAY, RIGHT, STAY]).unwrap();
    let v_right = oracle::exact_diminished_value(&world.mdp, &hold_right, &spec, 2, 2).unwrap();
    // The stationarity-driven agent grabs the vanishing left goal, then its
    // second step earns nothing: 10 + 0.
    let leave_left = Policy::deterministic(5, &[RIGHT, RIGHT, STAY]).unwrap();
    let v_left = oracle::exact_diminished_value(&world.mdp, &leave_left, &spec, 0, 2).unwrap();
    let values_ok = (v_right - 11.94).abs() < 1e-9 && (v_left - 10.0).abs() < 1e-9;

    let (go_left, go_right) = toy_policies();
    let members = vec![
        ("left".to_string(), go_left),
        ("right".to_string(), go_right),
    ];
    let correct = PolicySet::build(&world.mdp, members.clone(), &spec.lambda, 1e-10).unwrap();
    let stationary =
        PolicySet::build(&world.mdp, members, &world.lambda_vector_with(1.0), 1e-10).unwrap();
    let r0 = spec.r_bar.clone();
    let correct_action = gpi_action(&correct, 1, &r0);
    let stationary_action = gpi_action(&stationary, 1, &r0);
    let actions_ok = correct_action == RIGHT && stationary_action == LEFT;

    result(
        1,
        "toy-corridor advantage",
        values_ok && actions_ok,
        format!(
            "hold-right 2-step value {v_right:.6} (want 11.94), grab-left {v_left:.6} (want 10.0); \
             correct-rate action {correct_action}, stationary action {stationary_action}"
        ),
    )
}

/// Random dense MDP via exponential row weights.
pub fn random_mdp<R: Rng>(rng: &mut R, n: usize, na: usize, gamma: f64) -> TabularMdp {
    let mut t = Array3::zeros((n, na, n));
    for s in 0..n {
        for a in 0..na {
            let mut row: Vec<f64> = (0..n)
                .map(|_| -(rng.gen::<f64>().max(1e-12)).ln())
                .collect();
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= sum);
            for (s2, v) in row.into_iter().enumerate() {
                t[[s, a, s2]] = v;
            }
        }
    }
    let start = Array1::from_elem(n, 1.0 / n as f64);
    TabularMdp::new(t, gamma, start).unwrap()
}

pub fn random_policy<R: Rng>(rng: &mut R, n: usize, na: usize) -> Policy {
    let mut probs = Array2::zeros((n, na));
    for s in 0..n {
        let mut row: Vec<f64> = (0..na)
            .map(|_| -(rng.gen::<f64>().max(1e-12)).ln())
            .collect();
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= sum);
        for (a, v) in row.into_iter().enumerate() {
            probs[[s, a]] = v;
        }
    }
    Policy::new(probs).unwrap()
}

/// 2. Every DP iterate stays inside gamma^(k+1) / (1 - lambda gamma) of the
///    converged solution on 100 random 8-state MDPs.
fn convergence_envelope() -> CriterionResult {
    let gamma = 0.9;
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let mut violations = 0usize;
    let mut worst_margin = f64::INFINITY;
    for _ in 0..100 {
        let mdp = random_mdp(&mut rng, 8, 3, gamma);
        let pi = random_policy(&mut rng, 8, 3);
        let p = policy_transition_matrix(&mdp, &pi).unwrap();
        for lam in [0.0, 0.3, 0.7, 1.0] {
            let lambda = Array1::from_elem(8, lam);
            let (solved, _) = solve_lambda_r(&mdp, &pi, &lambda, 1e-12, 100_000).unwrap();
            let mut phi = default_init(&lambda);
            for k in 1..=60 {
                phi = apply_g_lambda(&phi, &p, gamma, &lambda).unwrap();
                let err = max_abs_diff(&phi, &solved.phi);
                let bound = convergence_bound(k, gamma, lam);
                worst_margin = worst_margin.min(bound - err);
                if err > bound + 1e-12 {
                    violations += 1;
                }
            }
        }
    }
    result(
        2,
        "convergence envelope",
        violations == 0,
        format!("{violations} violations over 100 MDPs x 4 rates x 60 sweeps; tightest margin {worst_margin:.3e}"),
    )
}

/// 3. Backup contraction in the max-entry norm over 1000 random matrix pairs.
fn contraction() -> CriterionResult {
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let mut violations = 0usize;
    let mut worst_ratio = 0.0_f64;
    for _ in 0..1000 {
        let n = rng.gen_range(2..7);
        let na = rng.gen_range(1..4);
        let gamma = rng.gen_range(0.2..0.99);
        let mdp = random_mdp(&mut rng, n, na, gamma);
        let pi = random_policy(&mut rng, n, na);
        let p = policy_transition_matrix(&mdp, &pi).unwrap();
        let lambda = Array1::from_shape_fn(n, |_| rng.gen::<f64>());
        let phi_a = Array2::from_shape_fn((n, n), |_| rng.gen_range(-5.0..5.0));
        let phi_b = Array2::from_shape_fn((n, n), |_| rng.gen_range(-5.0..5.0));
        let ga = apply_g_lambda(&phi_a, &p, gamma, &lambda).unwrap();
        let gb = apply_g_lambda(&phi_b, &p, gamma, &lambda).unwrap();
        let num = max_abs_diff(&ga, &gb);
        let den = max_abs_diff(&phi_a, &phi_b);
        if den > 0.0 {
            worst_ratio = worst_ratio.max(num / den);
            if num > gamma * den + 1e-12 {
                violations += 1;
            }
        }
    }
    result(
        3,
        "operator contraction",
        violations == 0,
        format!(
            "{violations} violations over 1000 pairs; worst ratio/gamma observed {worst_ratio:.4}"
        ),
    )
}

/// 4. Limit identities: lambda 1 = matrix-inverse SR, lambda 0 = analytic
///    first-occupancy values, occupancy stack endpoints.
fn limit_identities() -> CriterionResult {
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let mdp = random_mdp(&mut rng, 8, 3, 0.9);
    let pi = random_policy(&mut rng, 8, 3);
    let p = policy_transition_matrix(&mdp, &pi).unwrap();
    let sr = oracle::sr_closed_form(&p, 0.9).unwrap();
    let (rep1, _) = solve_lambda_r(&mdp, &pi, &Array1::from_elem(8, 1.0), 1e-10, 100_000).unwrap();
    let sr_gap = max_abs_diff(&rep1.phi, &sr);

    let (chain, chain_pi) = micro::chain3(0.9);
    let (fr, _) = solve_lambda_r(
        &chain,
        &chain_pi,
        &Array1::from_elem(3, 0.0),
        1e-12,
        100_000,
    )
    .unwrap();
    let g = 0.9;
    let fr_expect = ndarray::arr2(&[[1.0, g, g * g], [0.0, 1.0, g], [0.0, 0.0, 1.0]]);
    let fr_exact = fr.phi == fr_expect;

    let levels = solve_nth_occupancy(&chain, &chain_pi, 1, 1e-12, 100_000).unwrap();
    let nr1_exact = levels[0] == fr_expect;

    let (cycle, cycle_pi) = micro::two_cycle(0.9);
    let cp = policy_transition_matrix(&cycle, &cycle_pi).unwrap();
    let cycle_sr = oracle::sr_closed_form(&cp, 0.9).unwrap();
    let stack = solve_nth_occupancy(&cycle, &cycle_pi, 200, 1e-10, 100_000).unwrap();
    let nr_gap = max_abs_diff(stack.last().unwrap(), &cycle_sr);

    let passed = sr_gap < 1e-6 && fr_exact && nr1_exact && nr_gap < 1e-6;
    result(
        4,
        "limit identities",
        passed,
        format!(
            "lambda-1 vs inverse gap {sr_gap:.2e}; lambda-0 chain exact {fr_exact}; \
             level-1 stack exact {nr1_exact}; level-200 vs SR gap {nr_gap:.2e}"
        ),
    )
}

/// 5. Every converged entry respects the analytic maximum, attained on the
///    self loop.
fn max_value_bound() -> CriterionResult {
    let mut worst_excess = f64::NEG_INFINITY;
    let mut check = |mdp: &TabularMdp, pi: &Policy, lambda: &Array1<f64>| {
        let (rep, _) = solve_lambda_r(mdp, pi, lambda, 1e-12, 200_000).unwrap();
        for ((s, s2), &v) in rep.phi.indexed_iter() {
            let bound = max_entry_bound(mdp.gamma, lambda[s2], s == s2);
            worst_excess = worst_excess.max(v - bound);
        }
    };
    for lam in [0.0, 0.5, 1.0] {
        let world = EnvConfig::from_json(FOURROOMS_JSON)
            .unwrap()
            .build()
            .unwrap();
        check(
            &world.mdp,
            &Policy::uniform(world.mdp.n_states, 5),
            &world.lambda_vector_with(lam),
        );
        let world = EnvConfig::from_json(TWOROOMS_JSON)
            .unwrap()
            .build()
            .unwrap();
        check(
            &world.mdp,
            &Policy::uniform(world.mdp.n_states, 5),
            &world.lambda_vector_with(lam),
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1005);
    for _ in 0..20 {
        let mdp = random_mdp(&mut rng, 6, 2, 0.93);
        let pi = random_policy(&mut rng, 6, 2);
        let lambda = Array1::from_shape_fn(6, |_| rng.gen::<f64>());
        check(&mdp, &pi, &lambda);
    }

    let (loop_mdp, loop_pi) = micro::self_loop(0.9);
    let (rep, _) = solve_lambda_r(
        &loop_mdp,
        &loop_pi,
        &Array1::from_elem(1, 0.5),
        1e-12,
        100_000,
    )
    .unwrap();
    let equality_gap = (rep.phi[[0, 0]] - 1.0 / (1.0 - 0.45)).abs();

    let passed = worst_excess <= 1e-9 && equality_gap < 1e-9;
    result(
        5,
        "max-value bound",
        passed,
        format!("worst excess over bound {worst_excess:.2e}; self-loop equality gap {equality_gap:.2e} (value 1.81818...)"),
    )
}

/// 6. Dynamic programming agrees with 10^4-rollout Monte-Carlo within three
///    standard errors plus the truncation bias on every shipped environment.
fn oracle_agreement() -> CriterionResult {
    let mut worst_z = 0.0_f64;
    let mut violations = 0usize;
    let mut checked = 0usize;
    for (name, json) in [
        ("fourrooms", FOURROOMS_JSON),
        ("tworooms", TWOROOMS_JSON),
        ("toy3", TOY3_JSON),
    ] {
        let world = EnvConfig::from_json(json).unwrap().build().unwrap();
        let n = world.mdp.n_states;
        let pi = Policy::uniform(n, 5);
        for lam in [0.0, 0.5, 1.0] {
            let lambda = world.lambda_vector_with(lam);
            let (rep, _) = solve_lambda_r(&world.mdp, &pi, &lambda, 1e-10, 1_000_000).unwrap();
            let lambda_max = lambda.iter().cloned().fold(0.0, f64::max);
            let horizon = oracle::truncation_horizon(world.mdp.gamma, lambda_max, 1e-7);
            let start = n / 2;
            let est = oracle::mc_lambda_r(&world.mdp, &pi, &lambda, start, 10_000, horizon, 61);
            for s2 in 0..n {
                let diff = (rep.phi[[start, s2]] - est.mean[s2]).abs();
                let allow = 3.0 * est.se[s2] + est.bias_bound + 1e-9;
                checked += 1;
                if est.se[s2] > 0.0 {
                    worst_z = worst_z.max((diff - est.bias_bound).max(0.0) / est.se[s2]);
                }
                if diff > allow {
                    violations += 1;
                }
            }
        }
        let _ = name;
    }
    result(
        6,
        "oracle agreement",
        violations == 0,
        format!("{violations} of {checked} entries outside 3 SE + bias; worst z {worst_z:.2}"),
    )
}

/// Mean squared error between two Q tables.
fn q_mse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        total += (x - y) * (x - y);
    }
    total / a.len() as f64
}

/// 7. Evaluating with the true decay rate beats the stationarity assumption
///    for DP, tabular TD and linear-feature TD (ordering only).
fn policy_evaluation_ordering() -> CriterionResult {
    let world = EnvConfig::from_json(GRIDWORLD6_JSON)
        .unwrap()
        .build()
        .unwrap();
    let spec = world.reward_spec(RewardScheme::PureDiminish);
    let pi = Policy::from_json(EVAL_POLICY_JSON).unwrap();
    let horizon = oracle::truncation_horizon(world.mdp.gamma, 1.0, 1e-10);
    let q_true = oracle::exact_diminished_q(&world.mdp, &pi, &spec, horizon).unwrap();

    let q_from_lambda = |lam: f64| -> Array2<f64> {
        let lambda = world.lambda_vector_with(lam);
        let (rep, _) = solve_lambda_r_actions(&world.mdp, &pi, &lambda, 1e-10, 1_000_000).unwrap();
        rep.q_values(&spec.r_bar)
    };
    let dp_good = q_mse(&q_from_lambda(0.5), &q_true);
    let dp_bad = q_mse(&q_from_lambda(1.0), &q_true);

    let mut td_good = 0.0;
    let mut td_bad = 0.0;
    let mut lf_good = 0.0;
    let mut lf_bad = 0.0;
    for seed in 0..3u64 {
        for (lam, td_acc, lf_acc) in [
            (0.5, &mut td_good, &mut lf_good),
            (1.0, &mut td_bad, &mut lf_bad),
        ] {
            let lambda = world.lambda_vector_with(lam);
            let phi = td_policy_evaluation(&world, &pi, &lambda, 1500, 10, 0.1, 700 + seed);
            let mut q = Array2::zeros(q_true.dim());
            for s in 0..world.mdp.n_states {
                for a in 0..5 {
                    q[[s, a]] = phi.slice(ndarray::s![s, a, ..]).dot(&spec.r_bar);
                }
            }
            *td_acc += q_mse(&q, &q_true) / 3.0;

            // One-hot linear features; the goal column carries the decay.
            let mut model =
                LinearLambdaF::one_hot(world.mdp.n_states, 5, spec.r_bar.clone()).unwrap();
            let _ =
                lambda_f_policy_evaluation(&world, &pi, &mut model, lam, 1500, 10, 0.1, 900 + seed);
            let mut q = Array2::zeros(q_true.dim());
            for s in 0..world.mdp.n_states {
                for a in 0..5 {
                    q[[s, a]] = model.q_value(s, a);
                }
            }
            *lf_acc += q_mse(&q, &q_true) / 3.0;
        }
    }
    let passed = dp_good < dp_bad && td_good < td_bad && lf_good < lf_bad;
    result(
        7,
        "policy-evaluation ordering",
        passed,
        format!(
            "Q-MSE true-rate vs stationary: dp {dp_good:.4}<{dp_bad:.4}, td {td_good:.4}<{td_bad:.4}, lf {lf_good:.4}<{lf_bad:.4}"
        ),
    )
}

struct GpiOutcome {
    mean: f64,
    se: f64,
}

fn fourrooms_gpi(noise: f64, lambda_hat: f64, seeds: &[u64]) -> GpiOutcome {
    let mut cfg = EnvConfig::from_json(FOURROOMS_JSON).unwrap();
    cfg.noise_prob = noise;
    let world = cfg.build().unwrap();
    let spec = world.reward_spec(RewardScheme::PureDiminish);
    let library = base_policy_library(&world).unwrap();
    let set = PolicySet::build(
        &world.mdp,
        library,
        &world.lambda_vector_with(lambda_hat),
        1e-8,
    )
    .unwrap();
    let mut returns = Vec::new();
    for &seed in seeds {
        let options = EpisodeOptions::new(40, seed);
        let run = run_gpe_gpi(&world, &spec, &set, 50, &options).unwrap();
        returns.extend(run.episodes.iter().map(|e| e.undiscounted));
    }
    let (mean, se) = mean_and_se(&returns);
    GpiOutcome { mean, se }
}

/// 8. Composition with the true decay rate earns more than both mismatched
///    rates, by over one joint standard error, with and without move noise.
fn composition_ordering() -> CriterionResult {
    let seeds = [11u64, 12, 13];
    let mut passed = true;
    let mut detail = String::new();
    for noise in [0.0, 0.2] {
        let low = fourrooms_gpi(noise, 0.0, &seeds);
        let mid = fourrooms_gpi(noise, 0.5, &seeds);
        let high = fourrooms_gpi(noise, 1.0, &seeds);
        let beats_low = mid.mean - low.mean > (mid.se * mid.se + low.se * low.se).sqrt();
        let beats_high = mid.mean - high.mean > (mid.se * mid.se + high.se * high.se).sqrt();
        passed &= beats_low && beats_high;
        detail.push_str(&format!(
            "noise {noise}: mean return rate0 {:.2}, rate0.5 {:.2}, rate1 {:.2} (se {:.2}); ",
            low.mean, mid.mean, high.mean, mid.se
        ));
    }
    result(8, "composition ordering", passed, detail)
}

/// 9. The composition bound holds with exact DP quantities over 500
///    randomized trials.
fn composition_bound() -> CriterionResult {
    let mut rng = ChaCha8Rng::seed_from_u64(1009);
    let rates = [0.0, 0.3, 0.5, 0.7, 1.0];
    let mut violations = 0usize;
    let mut min_slack = f64::INFINITY;
    for _ in 0..500 {
        let n = 6;
        let na = 3;
        let gamma = [0.8, 0.9, 0.95][rng.gen_range(0..3)];
        let mdp = random_mdp(&mut rng, n, na, gamma);
        let r_bar = Array1::from_shape_fn(n, |_| rng.gen::<f64>());
        let mut policies = Vec::new();
        for _ in 0..3 {
            let r_src = Array1::from_shape_fn(n, |_| rng.gen::<f64>());
            policies.push(optimal_stationary_policy(&mdp, &r_src, None, 1e-12).unwrap());
        }
        let lambda_true = rates[rng.gen_range(0..rates.len())];
        let lambda_hat = rates[rng.gen_range(0..rates.len())];
        let report =
            gpi_bound_check(&mdp, &r_bar, &policies, lambda_true, lambda_hat, 1e-11).unwrap();
        violations += report.violations.len();
        min_slack = min_slack.min(report.min_slack);
    }
    result(
        9,
        "composition bound",
        violations == 0,
        format!("{violations} violations over 500 trials; minimum slack {min_slack:.3e}"),
    )
}

/// 10. Closed-form decay estimation is exact on noiseless sequences, and the
///     learning forager converges to the true rate without losing return.
fn lambda_estimation() -> CriterionResult {
    let mut exact_ok = true;
    for i in 0..=10 {
        let lam = i as f64 / 10.0;
        let mut r = 7.0;
        let mut pairs = Vec::new();
        for _ in 0..30 {
            let next = lam * r;
            pairs.push((r, next));
            r = next;
        }
        let est = estimate_lambda(&pairs).unwrap();
        if (est - lam).abs() > 1e-12 {
            exact_ok = false;
        }
    }

    let world = EnvConfig::from_json(FOURROOMS_JSON)
        .unwrap()
        .build()
        .unwrap();
    let spec = world.reward_spec(RewardScheme::PureDiminish);
    let library = base_policy_library(&world).unwrap();
    let mut learner_returns = Vec::new();
    let mut baseline_returns = Vec::new();
    let mut final_lambdas = Vec::new();
    for seed in [21u64, 22, 23] {
        let options = EpisodeOptions::new(40, seed);
        let learn =
            run_foraging_agent(&world, &spec, &library, LambdaMode::Learn, 50, &options).unwrap();
        let fixed = run_foraging_agent(
            &world,
            &spec,
            &library,
            LambdaMode::Fixed(1.0),
            50,
            &options,
        )
        .unwrap();
        final_lambdas.push(learn.final_lambda);
        learner_returns.extend(learn.episodes.iter().map(|e| e.undiscounted));
        baseline_returns.extend(fixed.episodes.iter().map(|e| e.undiscounted));
    }
    let lambda_ok = final_lambdas.iter().all(|l| (l - 0.5).abs() < 0.05);
    let (learn_mean, _) = mean_and_se(&learner_returns);
    let (base_mean, _) = mean_and_se(&baseline_returns);
    let return_ok = learn_mean >= base_mean;

    result(
        10,
        "decay-rate estimation",
        exact_ok && lambda_ok && return_ok,
        format!(
            "noiseless recovery exact {exact_ok}; final estimates {final_lambdas:?}; \
             learner mean return {learn_mean:.2} vs fixed-1.0 baseline {base_mean:.2}"
        ),
    )
}

/// 11. Set values are strictly subadditive below rate one and exactly
///     additive at rate one.
fn subadditivity() -> CriterionResult {
    let (mdp, pi) = micro::two_cycle(0.9);
    let h = 600;
    let ab = |lam: f64| {
        lambda_set_operator(&mdp, &pi, 0, &[0, 1], lam, h)
            .unwrap()
            .value
    };
    let a = |lam: f64| {
        lambda_set_operator(&mdp, &pi, 0, &[0], lam, h)
            .unwrap()
            .value
    };
    let b = |lam: f64| {
        lambda_set_operator(&mdp, &pi, 0, &[1], lam, h)
            .unwrap()
            .value
    };
    let strict_gap = a(0.5) + b(0.5) - ab(0.5);
    let additive_gap = (ab(1.0) - (a(1.0) + b(1.0))).abs();
    let passed = strict_gap > 1e-6 && additive_gap < 1e-12;
    result(
        11,
        "set subadditivity",
        passed,
        format!(
            "strict gap at rate 0.5: {strict_gap:.4}; additivity gap at rate 1: {additive_gap:.2e}"
        ),
    )
}

/// 12. Online Q-learning with the true decay rate out-earns the stationary
///     learner on the two-room task over the final 100 episodes.
fn q_learning_ordering() -> CriterionResult {
    let world = EnvConfig::from_json(TWOROOMS_JSON)
        .unwrap()
        .build()
        .unwrap();
    let spec = world.reward_spec(RewardScheme::PureDiminish);
    let final_mean = |lambda_agent: f64| -> f64 {
        let mut totals = Vec::new();
        for seed in [31u64, 32, 33] {
            let mut config = LearnerConfig::new(lambda_agent, 500, 100, seed);
            config.alpha = 0.1;
            config.epsilon_final = 0.2;
            let run = q_lambda_learning(&world, &spec, &config).unwrap();
            totals.extend(run.returns[400..].iter().copied());
        }
        mean_and_se(&totals).0
    };
    let good = final_mean(0.5);
    let bad = final_mean(1.0);
    result(
        12,
        "q-learning ordering",
        good > bad,
        format!("final-100 mean return: rate 0.5 {good:.2} vs rate 1.0 {bad:.2}"),
    )
}

/// 13. The corrected value target equals the reward-weighted feature backup
///     on every transition of 20 random MDPs with one-hot features.
fn td_target_identity() -> CriterionResult {
    let mut rng = ChaCha8Rng::seed_from_u64(1013);
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let n = rng.gen_range(2..6);
        let na = rng.gen_range(1..4);
        let gamma = rng.gen_range(0.3..0.99);
        let lambda = rng.gen::<f64>();
        let w = Array1::from_shape_fn(n, |_| rng.gen_range(-2.0..2.0));
        let mut model = LinearLambdaF::one_hot(n, na, w.clone()).unwrap();
        for v in model.table.iter_mut() {
            *v = rng.gen_range(-3.0..3.0);
        }
        for s in 0..n {
            for s2 in 0..n {
                for a2 in 0..na {
                    let backup = model.target(s, s2, a2, gamma, lambda);
                    let expect = backup.dot(&w);
                    let varphi_next = model.table.slice(ndarray::s![s2, a2, ..]).to_owned();
                    let v_next = varphi_next.dot(&w);
                    let base_t = model.base.row(s).to_owned();
                    let got = lambda_value_td_target(
                        v_next,
                        &varphi_next,
                        &w,
                        &base_t,
                        w[s],
                        gamma,
                        lambda,
                    );
                    worst = worst.max((got - expect).abs());
                }
            }
        }
    }
    result(
        13,
        "value-target identity",
        worst < 1e-12,
        format!("max |target - weighted backup| = {worst:.2e} over 20 MDPs"),
    )
}

/// Representative artifact bundle used for the byte-determinism check.
pub fn artifact_bundle(seed: u64) -> String {
    let cfg = r#"{
        "grid": ["G..", "...", "..G"],
        "goals": {"0,0": {"reward": 6.0, "lambda": 0.5},
                  "2,2": {"reward": 4.0, "lambda": 0.5}},
        "gamma": 0.95, "noise_prob": 0.2, "wall_penalty": -1.0, "start": "uniform"
    }"#;
    let world = EnvConfig::from_json(cfg).unwrap().build().unwrap();
    let spec = world.reward_spec(RewardScheme::PureDiminish);
    let library = base_policy_library(&world).unwrap();
    let set = PolicySet::build(&world.mdp, library, &spec.lambda, 1e-10).unwrap();
    let run = run_gpe_gpi(&world, &spec, &set, 10, &EpisodeOptions::new(15, seed)).unwrap();
    let rows: Vec<String> = run
        .episodes
        .iter()
        .enumerate()
        .map(|(e, st)| format!("{e},{},{},{}", st.undiscounted, st.discounted, st.steps))
        .collect();
    let mut bundle = export::rows_csv("episode,return_undiscounted,return_discounted,steps", &rows);
    let (rep, log) =
        solve_lambda_r(&world.mdp, &set.policies[1], &spec.lambda, 1e-10, 100_000).unwrap();
    bundle.push_str(&export::matrix_csv(&rep.phi));
    bundle.push_str(&export::iteration_log_csv(&log.residuals));
    bundle.push_str(&export::trace_csv(&run.traces[0], &world.goal_states));
    bundle
}

/// 14. Same seed, same bytes.
fn determinism() -> CriterionResult {
    let a = artifact_bundle(5);
    let b = artifact_bundle(5);
    let c = artifact_bundle(6);
    let passed = a == b && a != c;
    result(
        14,
        "byte determinism",
        passed,
        format!(
            "rerun identical: {}; different seed differs: {}",
            a == b,
            a != c
        ),
    )
}
