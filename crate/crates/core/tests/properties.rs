//! Property tests for the representation algebra and its learners.

use lambdar::acceptance::{random_mdp, random_policy};
use lambdar::compose::{gpe, gpi_action, PolicySet};
use lambdar::grid::{EnvConfig, GridWorld};
use lambdar::mdp::{greedy_policy, policy_transition_matrix, Policy};
use lambdar::oracle;
use lambdar::rep::{
    apply_g_lambda, default_init, max_abs_diff, max_entry_bound, solve_lambda_r,
    solve_lambda_r_actions, solve_nth_occupancy,
};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn seeded_case(seed: u64) -> (lambdar::mdp::TabularMdp, Policy) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 + (seed % 5) as usize;
    let na = 1 + (seed % 3) as usize;
    let gamma = 0.4 + 0.5 * ((seed % 7) as f64 / 7.0);
    (
        random_mdp(&mut rng, n, na, gamma),
        random_policy(&mut rng, n, na),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn policy_transition_matrix_is_row_stochastic(seed in 0u64..10_000) {
        let (mdp, pi) = seeded_case(seed);
        let p = policy_transition_matrix(&mdp, &pi).unwrap();
        for row in p.rows() {
            let sum: f64 = row.sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn greedy_policy_ignores_row_constant_shifts(seed in 0u64..10_000, shift in -10.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = Array2::from_shape_fn((4, 5), |_| rand::Rng::gen_range(&mut rng, -3.0..3.0));
        let shifted = &q + shift;
        let a = greedy_policy(&q).unwrap();
        let b = greedy_policy(&shifted).unwrap();
        prop_assert_eq!(a.probs, b.probs);
    }

    #[test]
    fn backup_is_an_entrywise_gamma_contraction(seed in 0u64..10_000) {
        let (mdp, pi) = seeded_case(seed);
        let n = mdp.n_states;
        let p = policy_transition_matrix(&mdp, &pi).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let lambda = Array1::from_shape_fn(n, |_| rand::Rng::gen::<f64>(&mut rng));
        let phi_a = Array2::from_shape_fn((n, n), |_| rand::Rng::gen_range(&mut rng, -4.0..4.0));
        let phi_b = Array2::from_shape_fn((n, n), |_| rand::Rng::gen_range(&mut rng, -4.0..4.0));
        let ga = apply_g_lambda(&phi_a, &p, mdp.gamma, &lambda).unwrap();
        let gb = apply_g_lambda(&phi_b, &p, mdp.gamma, &lambda).unwrap();
        for ((i, j), &va) in ga.indexed_iter() {
            let lhs = (va - gb[[i, j]]).abs();
            let rhs = mdp.gamma * (phi_a[[i, j]] - phi_b[[i, j]]).abs();
            // Entrywise contraction: each entry contracts against the same
            // entry of the difference... the operator mixes rows, so compare
            // against the max-norm bound.
            let _ = rhs;
            prop_assert!(lhs <= mdp.gamma * max_abs_diff(&phi_a, &phi_b) + 1e-12);
        }
    }

    #[test]
    fn iterates_contract_column_wise_toward_the_fixed_point(seed in 0u64..5_000) {
        // The backup acts on each column independently, so from the standard
        // initialization the distance to the fixed point shrinks by gamma
        // per sweep in each column's max norm.
        let (mdp, pi) = seeded_case(seed);
        let n = mdp.n_states;
        let p = policy_transition_matrix(&mdp, &pi).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77);
        let lam: f64 = rand::Rng::gen(&mut rng);
        let lambda = Array1::from_elem(n, lam);
        let (solved, _) = solve_lambda_r(&mdp, &pi, &lambda, 1e-12, 200_000).unwrap();
        let init = default_init(&lambda);
        let col_err = |m: &Array2<f64>, j: usize| -> f64 {
            (0..n).map(|i| (m[[i, j]] - solved.phi[[i, j]]).abs()).fold(0.0, f64::max)
        };
        let init_cols: Vec<f64> = (0..n).map(|j| col_err(&init, j)).collect();
        let mut phi = init;
        for k in 1..=40 {
            phi = apply_g_lambda(&phi, &p, mdp.gamma, &lambda).unwrap();
            for (j, &c0) in init_cols.iter().enumerate() {
                prop_assert!(col_err(&phi, j) <= mdp.gamma.powi(k) * c0 + 1e-9);
            }
        }
    }

    #[test]
    fn converged_entries_respect_the_max_value_bound(seed in 0u64..5_000) {
        let (mdp, pi) = seeded_case(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x31);
        let lambda = Array1::from_shape_fn(mdp.n_states, |_| rand::Rng::gen::<f64>(&mut rng));
        let (rep, _) = solve_lambda_r(&mdp, &pi, &lambda, 1e-11, 200_000).unwrap();
        for ((i, j), &v) in rep.phi.indexed_iter() {
            prop_assert!(v >= -1e-9);
            prop_assert!(v <= max_entry_bound(mdp.gamma, lambda[j], i == j) + 1e-9);
        }
    }

    #[test]
    fn representation_is_monotone_in_the_decay_rate(seed in 0u64..5_000) {
        let (mdp, pi) = seeded_case(seed);
        let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
        let mut last: Option<Array2<f64>> = None;
        for lam in grid {
            let lambda = Array1::from_elem(mdp.n_states, lam);
            let (rep, _) = solve_lambda_r(&mdp, &pi, &lambda, 1e-11, 200_000).unwrap();
            if let Some(prev) = &last {
                for (a, b) in prev.iter().zip(rep.phi.iter()) {
                    prop_assert!(*b >= *a - 1e-8);
                }
            }
            last = Some(rep.phi);
        }
    }

    #[test]
    fn occupancy_stack_is_sandwiched_between_fr_and_sr(seed in 0u64..5_000) {
        let (mdp, pi) = seeded_case(seed);
        let n = mdp.n_states;
        let (fr, _) = solve_lambda_r(&mdp, &pi, &Array1::zeros(n), 1e-11, 200_000).unwrap();
        let p = policy_transition_matrix(&mdp, &pi).unwrap();
        let sr = oracle::sr_closed_form(&p, mdp.gamma).unwrap();
        let levels = solve_nth_occupancy(&mdp, &pi, 8, 1e-11, 200_000).unwrap();
        let mut prev = fr.phi.clone();
        for level in &levels {
            for ((i, j), &v) in level.indexed_iter() {
                prop_assert!(v >= prev[[i, j]] - 1e-8);
                prop_assert!(v <= sr[[i, j]] + 1e-8);
            }
            prev = level.clone();
        }
        // Level 1 is the first-occupancy representation itself.
        prop_assert!(max_abs_diff(&levels[0], &fr.phi) < 1e-8);
    }

    #[test]
    fn expected_td_update_vanishes_at_the_fixed_point(seed in 0u64..5_000) {
        let (mdp, pi) = seeded_case(seed);
        let n = mdp.n_states;
        let na = mdp.n_actions;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
        let lam: f64 = rand::Rng::gen(&mut rng);
        let lambda = Array1::from_elem(n, lam);
        let (rep, _) = solve_lambda_r_actions(&mdp, &pi, &lambda, 1e-12, 200_000).unwrap();
        for s in 0..n {
            for a in 0..na {
                for sp in 0..n {
                    // E[target] - current, expectation over s2 ~ p, a2 ~ pi.
                    let mut expect = 0.0;
                    for s2 in 0..n {
                        let pr = mdp.transitions[[s, a, s2]];
                        if pr == 0.0 {
                            continue;
                        }
                        for a2 in 0..na {
                            let w = pr * pi.probs[[s2, a2]];
                            if w == 0.0 {
                                continue;
                            }
                            let next = rep.phi[[s2, a2, sp]];
                            let target = if sp == s {
                                1.0 + mdp.gamma * lambda[sp] * next
                            } else {
                                mdp.gamma * next
                            };
                            expect += w * target;
                        }
                    }
                    prop_assert!((expect - rep.phi[[s, a, sp]]).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn composition_bound_holds_on_random_instances(seed in 0u64..3_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = random_mdp(&mut rng, 5, 2, 0.9);
        let r_bar = Array1::from_shape_fn(5, |_| rand::Rng::gen::<f64>(&mut rng));
        let policies: Vec<Policy> =
            (0..2).map(|_| random_deterministic(&mut rng, 5, 2)).collect();
        let rates = [0.0, 0.5, 1.0];
        let lt = rates[rand::Rng::gen_range(&mut rng, 0..3)];
        let lh = rates[rand::Rng::gen_range(&mut rng, 0..3)];
        let report =
            lambdar::compose::gpi_bound_check(&mdp, &r_bar, &policies, lt, lh, 1e-11).unwrap();
        prop_assert!(report.violations.is_empty(), "min slack {}", report.min_slack);
    }

    #[test]
    fn noise_free_grids_compile_to_one_hot_rows(rows in 1usize..4, cols in 1usize..5) {
        let grid: Vec<String> = (0..rows).map(|_| ".".repeat(cols)).collect();
        let cfg = format!(
            r#"{{"grid": {:?}, "goals": {{}}, "gamma": 0.9, "noise_prob": 0.0,
                "wall_penalty": -1.0, "start": "uniform"}}"#,
            grid
        );
        let world = EnvConfig::from_json(&cfg).unwrap().build().unwrap();
        prop_assert!(world.mdp.is_deterministic());
    }
}

fn random_deterministic<R: rand::Rng>(rng: &mut R, n: usize, na: usize) -> Policy {
    let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..na)).collect();
    Policy::deterministic(na, &actions).unwrap()
}

/// Value decomposition: the reward-weighted representation row equals the
/// simulated diminished return within Monte-Carlo tolerance.
#[test]
fn value_decomposition_matches_simulation() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let n = 4;
        let mdp = random_mdp(&mut rng, n, 2, 0.9);
        let pi = random_policy(&mut rng, n, 2);
        let lam = 0.25 * (seed % 5) as f64;
        let lambda = Array1::from_elem(n, lam);
        let r_bar = Array1::from_shape_fn(n, |_| rand::Rng::gen::<f64>(&mut rng));
        let spec = lambdar::reward::RewardSpec::pure(r_bar.clone(), lambda.clone()).unwrap();
        let (rep, _) = solve_lambda_r(&mdp, &pi, &lambda, 1e-11, 200_000).unwrap();
        let dp_value = rep.phi.row(0).dot(&r_bar);
        let horizon = oracle::truncation_horizon(mdp.gamma, lam, 1e-8);
        let (mc, se) =
            oracle::mc_diminished_value(&mdp, &pi, &spec, 0, 20_000, horizon + 1, 42 + seed);
        assert!(
            (dp_value - mc).abs() <= 3.0 * se + 1e-4,
            "seed {seed}: dp {dp_value} vs mc {mc} (se {se})"
        );
    }
}

/// The composition agent in a stationary world replays a plain
/// successor-feature composition loop action for action.
#[test]
fn stationary_composition_replays_classic_gpi() {
    let cfg = r#"{
        "grid": ["G....", ".....", "....G"],
        "goals": {"0,0": {"reward": 3.0, "lambda": 1.0},
                  "2,4": {"reward": 7.0, "lambda": 1.0}},
        "gamma": 0.9, "noise_prob": 0.15, "wall_penalty": -1.0, "start": "uniform"
    }"#;
    let world: GridWorld = EnvConfig::from_json(cfg).unwrap().build().unwrap();
    let spec = world.reward_spec(lambdar::reward::RewardScheme::PureDiminish);
    let library = lambdar::forage::base_policy_library(&world).unwrap();
    let set = PolicySet::build(&world.mdp, library, &spec.lambda, 1e-10).unwrap();

    for seed in [3u64, 4, 5] {
        let options = lambdar::episode::EpisodeOptions::new(25, seed);
        let run = lambdar::compose::run_gpe_gpi(&world, &spec, &set, 4, &options).unwrap();

        // Classic loop: fixed reward vector (stationary world), same RNG
        // protocol, argmax over actions of max over policies.
        for (e, trace) in run.traces.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(e as u64 + 1);
            let mut s = lambdar::episode::Dynamics::sample_start(&world, &mut rng);
            for rec in &trace.steps {
                assert_eq!(rec.state, s);
                let a = gpi_action(&set, s, &spec.r_bar);
                assert_eq!(rec.action, a, "episode {e} diverged at t={}", rec.t);
                let (next, _) = lambdar::episode::Dynamics::sample_step(&world, s, a, &mut rng);
                s = next;
            }
        }
    }
}

/// Per-policy composition values coincide with direct stationary evaluation
/// when nothing diminishes.
#[test]
fn stationary_gpe_matches_direct_policy_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mdp = random_mdp(&mut rng, 5, 3, 0.85);
    let pi = random_policy(&mut rng, 5, 3);
    let r = Array1::from_shape_fn(5, |_| rand::Rng::gen::<f64>(&mut rng));
    let lambda = Array1::from_elem(5, 1.0);
    let set = PolicySet::build(&mdp, vec![("pi".into(), pi.clone())], &lambda, 1e-11).unwrap();
    let p = policy_transition_matrix(&mdp, &pi).unwrap();
    let v = oracle::stationary_values(&p, mdp.gamma, &r).unwrap();
    for s in 0..5 {
        for a in 0..3 {
            let q = gpe(&set, s, a, &r)[0];
            // Q(s,a) = r(s) + gamma * E V(s') under stationary rewards.
            let mut expect = r[s];
            for s2 in 0..5 {
                expect += mdp.gamma * mdp.transitions[[s, a, s2]] * v[s2];
            }
            assert!((q - expect).abs() < 1e-6, "s={s} a={a}: {q} vs {expect}");
        }
    }
}

/// Replenishing schemes agree with a brute-force evaluation of their
/// defining sums on a deterministic cycle.
#[test]
fn eligibility_recursion_matches_brute_force_on_cycles() {
    let (mdp, pi) = oracle::micro::two_cycle(0.9);
    let (ld, lr) = (0.4, 0.6);
    let omega =
        lambdar::rep::solve_eligibility_trace_rep(&mdp, &pi, ld, lr, 1e-13, 500_000).unwrap();
    // Brute force: occupancy weight at step k is
    // 1 - (1 - ld) * sum_{j=0..k, s_j = s'} lr^(k-j), inner sum inclusive.
    for start in 0..2usize {
        for target in 0..2usize {
            let mut value = 0.0;
            let mut s = start;
            let mut visits: Vec<usize> = Vec::new();
            for k in 0..2000usize {
                if s == target {
                    visits.push(k);
                    let trace: f64 = visits.iter().map(|&j| lr.powi((k - j) as i32)).sum();
                    value += 0.9f64.powi(k as i32) * (1.0 - (1.0 - ld) * trace);
                }
                s = 1 - s;
            }
            assert!(
                (omega[[start, target]] - value).abs() < 1e-8,
                "({start},{target}): {} vs {value}",
                omega[[start, target]]
            );
        }
    }
}

#[test]
fn total_time_recursion_matches_brute_force_on_cycles() {
    let (mdp, pi) = oracle::micro::two_cycle(0.9);
    let (ld, lr) = (0.5, 0.8);
    let rep = lambdar::rep::solve_total_time_rep(&mdp, &pi, ld, lr, 1e9, 1e-13, 500_000).unwrap();
    assert!(rep.clamped.is_empty());
    for start in 0..2usize {
        for target in 0..2usize {
            let mut value = 0.0;
            let mut s = start;
            let mut n = 0u32;
            for k in 0..2000usize {
                if s == target {
                    let w = lambdar::reward::pow_visits(ld, n) * lr.powi(k as i32 - n as i32);
                    value += 0.9f64.powi(k as i32) * w;
                    n += 1;
                }
                s = 1 - s;
            }
            assert!(
                (rep.rep[[start, target]] - value).abs() < 1e-8,
                "({start},{target}): {} vs {value}",
                rep.rep[[start, target]]
            );
        }
    }
}
