//! Foraging analytics and the decay-rate-learning agent.
//!
//! A patch is a maximal run of consecutive steps at the same rewarded state.
//! The patch-leaving rule compares the reward the agent would get by staying
//! one more step, lambda * r(s_t), against the environment's average
//! per-step reward (R - R_t) / T; the discounted variant weights both R and
//! the running total R_t by powers of gamma.

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::compose::{gpi_action, mean_and_se, PolicySet};
use crate::episode::{run_episode_with_rng, EpisodeOptions, EpisodeTrace};
use crate::error::{Error, Result};
use crate::grid::GridWorld;
use crate::mdp::Policy;
use crate::reward::RewardSpec;
use crate::td::LambdaEstimator;

/// One patch visit: the agent entered at `enter_t`, left at `leave_t`
/// (exclusive), and the rule says it should have left at `rule_leave_t`.
#[derive(Debug, Clone, Copy)]
pub struct PatchVisit {
    pub state: usize,
    pub enter_t: usize,
    pub leave_t: usize,
    pub rule_leave_t: usize,
}

/// Patch analysis of one trace.
#[derive(Debug, Clone)]
pub struct PatchReport {
    pub patches: Vec<PatchVisit>,
    /// Mean per-episode reward used as the opportunity cost.
    pub mean_episode_reward: f64,
    pub episode_length: usize,
}

/// Applies the leave rule to every patch of `trace`. `mean_reward` is the
/// calibration average R, `episode_length` is T. With `discounted`, R is
/// assumed discounted and the running total weights rewards by gamma^t.
pub fn mvt_leave_times(
    trace: &EpisodeTrace,
    spec: &RewardSpec,
    mean_reward: f64,
    episode_length: usize,
    discounted: bool,
    gamma: f64,
) -> Result<PatchReport> {
    if trace.is_empty() {
        return Err(Error::Config("empty trace".into()));
    }
    let t_len = episode_length.max(1) as f64;

    // Running reward total R_t, inclusive of step t.
    let mut running = 0.0;
    let running_totals: Vec<f64> = trace
        .steps
        .iter()
        .map(|rec| {
            running += if discounted {
                gamma.powi(rec.t as i32) * rec.reward
            } else {
                rec.reward
            };
            running
        })
        .collect();

    let mut patches: Vec<PatchVisit> = Vec::new();
    let mut open: Option<(PatchVisit, bool)> = None; // (patch, rule fired)
    for (i, rec) in trace.steps.iter().enumerate() {
        let rewarded = spec.r_bar[rec.state] > 0.0;
        let continues = rewarded && open.as_ref().is_some_and(|(p, _)| p.state == rec.state);
        if !continues {
            if let Some((mut p, fired)) = open.take() {
                if !fired {
                    p.rule_leave_t = p.leave_t;
                }
                patches.push(p);
            }
            if !rewarded {
                continue;
            }
            open = Some((
                PatchVisit {
                    state: rec.state,
                    enter_t: rec.t,
                    leave_t: rec.t + 1,
                    rule_leave_t: rec.t + 1,
                },
                false,
            ));
        }
        let (patch, fired) = open.as_mut().unwrap();
        patch.leave_t = rec.t + 1;
        if !*fired {
            let threshold = (mean_reward - running_totals[i]) / t_len;
            let stay_reward = spec.lambda[rec.state] * rec.occupancy_reward;
            if stay_reward < threshold {
                patch.rule_leave_t = rec.t + 1;
                *fired = true;
            }
        }
    }
    if let Some((mut p, fired)) = open.take() {
        if !fired {
            p.rule_leave_t = p.leave_t;
        }
        patches.push(p);
    }
    Ok(PatchReport {
        patches,
        mean_episode_reward: mean_reward,
        episode_length,
    })
}

/// Summary of agent-vs-rule leave-time differences for one environment.
#[derive(Debug, Clone, Copy)]
pub struct LeaveTimeSummary {
    pub mean_diff: f64,
    pub se: f64,
    pub n_patches: usize,
}

/// Mean signed difference (agent leave - rule leave) with its standard
/// error, pooled over the given traces.
pub fn agent_vs_mvt(
    traces: &[EpisodeTrace],
    spec: &RewardSpec,
    mean_reward: f64,
    episode_length: usize,
    discounted: bool,
    gamma: f64,
) -> Result<LeaveTimeSummary> {
    let mut diffs = Vec::new();
    for trace in traces {
        let report = mvt_leave_times(trace, spec, mean_reward, episode_length, discounted, gamma)?;
        for p in report.patches {
            diffs.push(p.leave_t as f64 - p.rule_leave_t as f64);
        }
    }
    let (mean_diff, se) = mean_and_se(&diffs);
    Ok(LeaveTimeSummary {
        mean_diff,
        se,
        n_patches: diffs.len(),
    })
}

/// How the foraging agent treats the decay rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaMode {
    Fixed(f64),
    /// Closed-form estimation from observed self-transition rewards,
    /// starting from the stationarity prior (lambda = 1).
    Learn,
}

/// Per-episode record of the foraging run.
#[derive(Debug, Clone, Copy)]
pub struct ForageEpisode {
    pub episode: usize,
    pub lambda_hat: f64,
    pub undiscounted: f64,
    pub discounted: f64,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct ForageRun {
    pub episodes: Vec<ForageEpisode>,
    pub traces: Vec<EpisodeTrace>,
    pub final_lambda: f64,
}

/// Runs the composition agent while estimating the decay rate online.
/// The policy-library representations are re-solved whenever the estimate
/// moves more than `resolve_step` since the last solve.
pub fn run_foraging_agent(
    world: &GridWorld,
    spec: &RewardSpec,
    base_policies: &[(String, Policy)],
    mode: LambdaMode,
    episodes: usize,
    options: &EpisodeOptions,
) -> Result<ForageRun> {
    let resolve_step = 0.005;
    let mut lambda_hat = match mode {
        LambdaMode::Fixed(l) => l,
        LambdaMode::Learn => 1.0,
    };
    let mut estimator = LambdaEstimator::default();
    let mut solved_at = lambda_hat;
    let mut set = build_set(world, base_policies, lambda_hat)?;
    let mut out = Vec::with_capacity(episodes);
    let mut traces = Vec::with_capacity(episodes);

    for e in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        rng.set_stream(e as u64 + 1);
        let mut agent = |s: usize, r: &Array1<f64>| gpi_action(&set, s, r);
        let trace = run_episode_with_rng(world, spec, &mut agent, options, &mut rng)?;

        if mode == LambdaMode::Learn {
            for w in trace.steps.windows(2) {
                if w[1].state == w[0].state && w[0].occupancy_reward != 0.0 {
                    estimator.observe(w[0].occupancy_reward, w[1].occupancy_reward);
                }
            }
            if let Some(est) = estimator.estimate() {
                lambda_hat = est;
            }
            if (lambda_hat - solved_at).abs() > resolve_step {
                set = build_set(world, base_policies, lambda_hat)?;
                solved_at = lambda_hat;
            }
        }
        out.push(ForageEpisode {
            episode: e,
            lambda_hat,
            undiscounted: trace.undiscounted_return,
            discounted: trace.discounted_return,
            steps: trace.len(),
        });
        traces.push(trace);
    }
    Ok(ForageRun {
        episodes: out,
        traces,
        final_lambda: lambda_hat,
    })
}

fn build_set(
    world: &GridWorld,
    base_policies: &[(String, Policy)],
    lambda_hat: f64,
) -> Result<PolicySet> {
    PolicySet::build(
        &world.mdp,
        base_policies.to_vec(),
        &world.lambda_vector_with(lambda_hat),
        1e-8,
    )
}

/// Shortest-path-style base policies: one stationary-optimal policy per goal
/// and per configured waypoint, rewarding 1 at the target and charging the
/// expected bump penalty.
pub fn base_policy_library(world: &GridWorld) -> Result<Vec<(String, Policy)>> {
    let mut targets: Vec<(String, usize)> = world
        .goal_states
        .iter()
        .map(|&s| {
            let (r, c) = world.coords(s);
            (format!("goal_{r}_{c}"), s)
        })
        .collect();
    for wp in &world.spec.waypoints {
        let (r, c) = (wp[0], wp[1]);
        let s = world
            .state_at(r, c)
            .ok_or_else(|| Error::Config(format!("waypoint ({r},{c}) is not walkable")))?;
        targets.push((format!("waypoint_{r}_{c}"), s));
    }
    let penalty = world.bump_prob.mapv(|b| b * world.spec.wall_penalty);
    let mut out = Vec::new();
    for (name, target) in targets {
        let mut r = Array1::zeros(world.mdp.n_states);
        r[target] = 1.0;
        let pi = crate::compose::optimal_stationary_policy(&world.mdp, &r, Some(&penalty), 1e-10)?;
        out.push((name, pi));
    }
    Ok(out)
}
