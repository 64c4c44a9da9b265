//! The episode engine: visit counting, reward emission, termination and
//! seeded rollouts.
//!
//! Reward is granted on occupying a state (including the start state at
//! t = 0) using visit counts that exclude the current occupancy, so the
//! first arrival always pays the full initial reward. An episode ends when
//! every consumable goal has dropped below the termination threshold, or at
//! the horizon.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{GridWorld, DOWN, LEFT, RIGHT, STAY, UP};
use crate::mdp::TabularMdp;
use crate::reward::{reward_at, RewardSpec, VisitHistory};

/// Default depletion threshold for early termination.
pub const TERMINATION_THRESHOLD: f64 = 0.1;

/// Environment dynamics an episode can run on. Grids add bump penalties;
/// bare MDPs have none.
pub trait Dynamics {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn gamma(&self) -> f64;
    fn sample_start<R: Rng>(&self, rng: &mut R) -> usize;
    /// Samples the next state; returns `(next, extra_reward)` where the extra
    /// reward is charged for the action itself (wall bumps).
    fn sample_step<R: Rng>(&self, s: usize, a: usize, rng: &mut R) -> (usize, f64);
}

impl Dynamics for TabularMdp {
    fn n_states(&self) -> usize {
        self.n_states
    }
    fn n_actions(&self) -> usize {
        self.n_actions
    }
    fn gamma(&self) -> f64 {
        self.gamma
    }
    fn sample_start<R: Rng>(&self, rng: &mut R) -> usize {
        TabularMdp::sample_start(self, rng)
    }
    fn sample_step<R: Rng>(&self, s: usize, a: usize, rng: &mut R) -> (usize, f64) {
        (self.sample_next(s, a, rng), 0.0)
    }
}

impl Dynamics for GridWorld {
    fn n_states(&self) -> usize {
        self.mdp.n_states
    }
    fn n_actions(&self) -> usize {
        self.mdp.n_actions
    }
    fn gamma(&self) -> f64 {
        self.mdp.gamma
    }
    fn sample_start<R: Rng>(&self, rng: &mut R) -> usize {
        self.mdp.sample_start(rng)
    }
    fn sample_step<R: Rng>(&self, s: usize, a: usize, rng: &mut R) -> (usize, f64) {
        // Sample the executed move so bump events stay observable; the
        // induced next-state distribution equals the compiled tensor.
        let u: f64 = rng.gen();
        let executed = if u < self.spec.noise_prob {
            [UP, RIGHT, DOWN, LEFT][rng.gen_range(0..4)]
        } else {
            a
        };
        let (r, c) = self.coords(s);
        let (dr, dc) = match executed {
            UP => (-1, 0),
            RIGHT => (0, 1),
            DOWN => (1, 0),
            LEFT => (0, -1),
            _ => (0, 0),
        };
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        let target = if nr < 0 || nc < 0 {
            None
        } else {
            self.state_at(nr as usize, nc as usize)
        };
        match target {
            Some(next) => (next, 0.0),
            None if executed == STAY => (s, 0.0),
            None => (s, self.spec.wall_penalty),
        }
    }
}

/// Mutable per-episode state.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub t: usize,
    pub current: usize,
    /// Prior visit times per state, ascending.
    visit_times: Vec<Vec<usize>>,
    /// Reward each state would pay if occupied at the current step.
    pub reward_vector: Array1<f64>,
    pub undiscounted_return: f64,
    pub discounted_return: f64,
    pub terminated: bool,
    pub horizon: usize,
    pub threshold: f64,
}

impl VisitHistory for EpisodeState {
    fn time(&self) -> usize {
        self.t
    }
    fn visits(&self, state: usize) -> u32 {
        self.visit_times[state].len() as u32
    }
    fn last_visit(&self, state: usize) -> Option<usize> {
        self.visit_times[state].last().copied()
    }
    fn visit_times(&self, state: usize) -> &[usize] {
        &self.visit_times[state]
    }
}

impl EpisodeState {
    pub fn begin(spec: &RewardSpec, start: usize, horizon: usize) -> Self {
        let mut ep = Self {
            t: 0,
            current: start,
            visit_times: vec![Vec::new(); spec.n_states()],
            reward_vector: Array1::zeros(spec.n_states()),
            undiscounted_return: 0.0,
            discounted_return: 0.0,
            terminated: horizon == 0,
            horizon,
            threshold: TERMINATION_THRESHOLD,
        };
        ep.refresh_reward_vector(spec);
        ep
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn visit_counts(&self) -> Vec<u32> {
        self.visit_times.iter().map(|v| v.len() as u32).collect()
    }

    fn refresh_reward_vector(&mut self, spec: &RewardSpec) {
        for s in 0..spec.n_states() {
            self.reward_vector[s] = reward_at(spec, s, self);
        }
    }

    fn depleted(&self, spec: &RewardSpec) -> bool {
        if !spec.any_goal_diminishes() {
            return false;
        }
        spec.goal_states()
            .iter()
            .all(|&g| self.reward_vector[g] < self.threshold)
    }
}

/// What a single engine step produced.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    /// Occupancy reward plus any bump penalty.
    pub reward: f64,
    pub occupancy_reward: f64,
    pub bumped: bool,
    pub terminated: bool,
}

/// Advances the episode by one step: pays the current state's reward,
/// registers the visit, executes `action` and re-evaluates termination.
pub fn step<D: Dynamics, R: Rng>(
    dynamics: &D,
    spec: &RewardSpec,
    ep: &mut EpisodeState,
    action: usize,
    rng: &mut R,
) -> Result<StepOutcome> {
    if ep.terminated {
        return Err(Error::EpisodeTerminated { t: ep.t });
    }
    if action >= dynamics.n_actions() {
        return Err(Error::InvalidAction { step: ep.t, action });
    }
    let s = ep.current;
    let occupancy_reward = ep.reward_vector[s];
    let (next, extra) = dynamics.sample_step(s, action, rng);
    let reward = occupancy_reward + extra;

    ep.visit_times[s].push(ep.t);
    ep.undiscounted_return += reward;
    ep.discounted_return += dynamics.gamma().powi(ep.t as i32) * reward;
    ep.t += 1;
    ep.current = next;
    ep.refresh_reward_vector(spec);
    ep.terminated = ep.t >= ep.horizon || ep.depleted(spec);

    Ok(StepOutcome {
        reward,
        occupancy_reward,
        bumped: extra != 0.0,
        terminated: ep.terminated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub t: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub occupancy_reward: f64,
    pub bumped: bool,
}

/// Record of one rollout.
#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
    pub undiscounted_return: f64,
    pub discounted_return: f64,
    /// Reward-vector snapshots taken before each step, when requested.
    pub reward_snapshots: Option<Vec<Array1<f64>>>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpisodeOptions {
    pub horizon: usize,
    pub seed: u64,
    pub threshold: f64,
    pub record_vectors: bool,
}

impl EpisodeOptions {
    pub fn new(horizon: usize, seed: u64) -> Self {
        Self {
            horizon,
            seed,
            threshold: TERMINATION_THRESHOLD,
            record_vectors: false,
        }
    }
}

/// Runs one seeded episode driving actions from `agent(state, reward_vector)`.
pub fn run_episode<D, F>(
    dynamics: &D,
    spec: &RewardSpec,
    mut agent: F,
    options: &EpisodeOptions,
) -> Result<EpisodeTrace>
where
    D: Dynamics,
    F: FnMut(usize, &Array1<f64>) -> usize,
{
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    run_episode_with_rng(dynamics, spec, &mut agent, options, &mut rng)
}

/// Same as [`run_episode`] with an externally managed RNG stream.
pub fn run_episode_with_rng<D, F, R>(
    dynamics: &D,
    spec: &RewardSpec,
    agent: &mut F,
    options: &EpisodeOptions,
    rng: &mut R,
) -> Result<EpisodeTrace>
where
    D: Dynamics,
    F: FnMut(usize, &Array1<f64>) -> usize,
    R: Rng,
{
    let start = dynamics.sample_start(rng);
    let mut ep =
        EpisodeState::begin(spec, start, options.horizon).with_threshold(options.threshold);
    let mut steps = Vec::new();
    let mut snapshots = options.record_vectors.then(Vec::new);

    while !ep.terminated {
        let t = ep.t;
        let state = ep.current;
        if let Some(snaps) = snapshots.as_mut() {
            snaps.push(ep.reward_vector.clone());
        }
        let action = agent(state, &ep.reward_vector);
        if action >= dynamics.n_actions() {
            return Err(Error::InvalidAction { step: t, action });
        }
        let out = step(dynamics, spec, &mut ep, action, rng)?;
        steps.push(TraceStep {
            t,
            state,
            action,
            reward: out.reward,
            occupancy_reward: out.occupancy_reward,
            bumped: out.bumped,
        });
    }

    Ok(EpisodeTrace {
        steps,
        undiscounted_return: ep.undiscounted_return,
        discounted_return: ep.discounted_return,
        reward_snapshots: snapshots,
    })
}
