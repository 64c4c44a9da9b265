//! Text-grid environments: parsing, the five-action move model and the
//! JSON environment config format.
//!
//! Cells are `#` (wall), `.` (empty), `S` (candidate start) or `G` (goal).
//! Walls are never occupied; moving into one (or off-grid) keeps the agent in
//! place and is reported as a bump so the engine can charge `wall_penalty`.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::reward::{RewardScheme, RewardSpec};

pub const N_ACTIONS: usize = 5;

/// Up, right, down, left, stay.
pub const ACTION_NAMES: [&str; N_ACTIONS] = ["up", "right", "down", "left", "stay"];
pub const UP: usize = 0;
pub const RIGHT: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;
pub const STAY: usize = 4;

const MOVES: [(isize, isize); N_ACTIONS] = [(-1, 0), (0, 1), (1, 0), (0, -1), (0, 0)];

/// Per-goal annotation: initial reward and decay rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalAnnotation {
    pub reward: f64,
    pub lambda: f64,
}

/// Start state selection.
#[derive(Debug, Clone, PartialEq)]
pub enum StartSpec {
    /// Uniform over every walkable cell.
    Uniform,
    /// Fixed cell (row, col).
    Fixed(usize, usize),
}

/// Parsed grid layout plus move-model parameters.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Row-major cells over {'#', '.', 'S', 'G'}.
    pub cells: Vec<char>,
    /// Goal cell index (row-major) -> annotation.
    pub goal_annotations: BTreeMap<usize, GoalAnnotation>,
    pub noise_prob: f64,
    pub wall_penalty: f64,
    pub gamma: f64,
    pub start: StartSpec,
    /// Extra base-policy targets beyond the goals.
    pub waypoints: Vec<[usize; 2]>,
}

impl GridSpec {
    pub fn from_rows(
        rows: &[String],
        goal_annotations: BTreeMap<usize, GoalAnnotation>,
        noise_prob: f64,
        wall_penalty: f64,
        gamma: f64,
        start: StartSpec,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Config("grid has no rows".into()));
        }
        let cols = rows[0].chars().count();
        if cols == 0 {
            return Err(Error::Config("grid has empty rows".into()));
        }
        let mut cells = Vec::with_capacity(rows.len() * cols);
        for (r, row) in rows.iter().enumerate() {
            let chars: Vec<char> = row.chars().collect();
            if chars.len() != cols {
                return Err(Error::Config(format!(
                    "ragged grid: row {r} has {} cells, expected {cols}",
                    chars.len()
                )));
            }
            for (c, ch) in chars.into_iter().enumerate() {
                if !matches!(ch, '#' | '.' | 'S' | 'G') {
                    return Err(Error::Config(format!("unknown cell '{ch}' at ({r},{c})")));
                }
                cells.push(ch);
            }
        }
        let spec = Self {
            rows: rows.len(),
            cols,
            cells,
            goal_annotations,
            noise_prob,
            wall_penalty,
            gamma,
            start,
            waypoints: Vec::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_waypoints(mut self, waypoints: Vec<[usize; 2]>) -> Result<Self> {
        for wp in &waypoints {
            let (r, c) = (wp[0], wp[1]);
            if r >= self.rows || c >= self.cols || self.cells[r * self.cols + c] == '#' {
                return Err(Error::Config(format!("waypoint ({r},{c}) is not walkable")));
            }
        }
        self.waypoints = waypoints;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_prob) {
            return Err(Error::Config(format!(
                "noise_prob {} not in [0,1]",
                self.noise_prob
            )));
        }
        if !self.cells.iter().any(|&c| c != '#') {
            return Err(Error::Config("grid has no walkable cell".into()));
        }
        for (r, c) in self
            .cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 'G')
            .map(|(i, _)| (i / self.cols, i % self.cols))
        {
            let idx = r * self.cols + c;
            if !self.goal_annotations.contains_key(&idx) {
                return Err(Error::Config(format!(
                    "goal cell ({r},{c}) has no annotation"
                )));
            }
        }
        for (&idx, ann) in &self.goal_annotations {
            let (r, c) = (idx / self.cols, idx % self.cols);
            if idx >= self.cells.len() || self.cells[idx] != 'G' {
                return Err(Error::Config(format!(
                    "annotation at ({r},{c}) does not reference a goal cell"
                )));
            }
            if !(0.0..=1.0).contains(&ann.lambda) {
                return Err(Error::Config(format!(
                    "lambda {} at ({r},{c}) not in [0,1]",
                    ann.lambda
                )));
            }
        }
        if let StartSpec::Fixed(r, c) = self.start {
            if r >= self.rows || c >= self.cols || self.cells[r * self.cols + c] == '#' {
                return Err(Error::Config(format!(
                    "start ({r},{c}) is not a walkable cell"
                )));
            }
        }
        Ok(())
    }

    fn is_wall(&self, r: isize, c: isize) -> bool {
        if r < 0 || c < 0 || r as usize >= self.rows || c as usize >= self.cols {
            return true;
        }
        self.cells[r as usize * self.cols + c as usize] == '#'
    }
}

/// A grid compiled to a tabular MDP over walkable cells.
///
/// Wall cells are not states: bumping keeps the agent in place and only the
/// bump penalty is observable.
#[derive(Debug, Clone)]
pub struct GridWorld {
    pub spec: GridSpec,
    pub mdp: TabularMdp,
    /// State index -> row-major cell index.
    pub cell_of_state: Vec<usize>,
    /// Row-major cell index -> state index (walls have none).
    pub state_of_cell: Vec<Option<usize>>,
    /// State indices of annotated goal cells, ascending.
    pub goal_states: Vec<usize>,
    /// Penalty collected when taking `a` from `s` bumps a wall or the edge,
    /// weighted by the probability of bumping under the noise model.
    pub bump_prob: Array2<f64>,
}

impl GridWorld {
    /// Builds the MDP: five actions, wall/edge moves keep the agent in place,
    /// and with probability `noise_prob` the executed move is a uniformly
    /// random one of the four directional moves.
    pub fn build(spec: GridSpec) -> Result<Self> {
        let mut state_of_cell = vec![None; spec.cells.len()];
        let mut cell_of_state = Vec::new();
        for (idx, &ch) in spec.cells.iter().enumerate() {
            if ch != '#' {
                state_of_cell[idx] = Some(cell_of_state.len());
                cell_of_state.push(idx);
            }
        }
        let n = cell_of_state.len();
        let mut transitions = Array3::zeros((n, N_ACTIONS, n));
        let mut bump_prob = Array2::zeros((n, N_ACTIONS));

        for (s, &cell) in cell_of_state.iter().enumerate() {
            let (r, c) = ((cell / spec.cols) as isize, (cell % spec.cols) as isize);
            // Outcome of executing directional-or-stay move `m` from (r, c).
            let outcome = |m: usize| -> (usize, bool) {
                let (dr, dc) = MOVES[m];
                let (nr, nc) = (r + dr, c + dc);
                if spec.is_wall(nr, nc) {
                    (s, m != STAY)
                } else {
                    (
                        state_of_cell[nr as usize * spec.cols + nc as usize].unwrap(),
                        false,
                    )
                }
            };
            for a in 0..N_ACTIONS {
                let (s2, bumped) = outcome(a);
                transitions[[s, a, s2]] += 1.0 - spec.noise_prob;
                if bumped {
                    bump_prob[[s, a]] += 1.0 - spec.noise_prob;
                }
                for m in [UP, RIGHT, DOWN, LEFT] {
                    let (s2, bumped) = outcome(m);
                    transitions[[s, a, s2]] += spec.noise_prob / 4.0;
                    if bumped {
                        bump_prob[[s, a]] += spec.noise_prob / 4.0;
                    }
                }
            }
        }

        let start_distribution = match spec.start {
            StartSpec::Uniform => Array1::from_elem(n, 1.0 / n as f64),
            StartSpec::Fixed(r, c) => {
                let mut d = Array1::zeros(n);
                let s = state_of_cell[r * spec.cols + c]
                    .ok_or_else(|| Error::Config(format!("start ({r},{c}) is a wall")))?;
                d[s] = 1.0;
                d
            }
        };

        let goal_states: Vec<usize> = spec
            .goal_annotations
            .keys()
            .map(|&cell| state_of_cell[cell].expect("goal on wall rejected by validate"))
            .collect();

        let mdp = TabularMdp::new(transitions, spec.gamma, start_distribution)?;
        Ok(Self {
            spec,
            mdp,
            cell_of_state,
            state_of_cell,
            goal_states,
            bump_prob,
        })
    }

    /// Reward spec for the grid: goals carry their annotated initial reward
    /// and decay rate, every other state is stationary (lambda = 1, reward 0).
    pub fn reward_spec(&self, scheme: RewardScheme) -> RewardSpec {
        let n = self.mdp.n_states;
        let mut r_bar = Array1::zeros(n);
        let mut lambda = Array1::from_elem(n, 1.0);
        for (&cell, ann) in &self.spec.goal_annotations {
            let s = self.state_of_cell[cell].unwrap();
            r_bar[s] = ann.reward;
            lambda[s] = ann.lambda;
        }
        RewardSpec::new(r_bar, lambda, scheme).expect("grid annotations validated")
    }

    /// Replaces each goal's decay rate with `lambda_hat` (the non-goal states
    /// keep lambda = 1). Used for representation/agent mismatch experiments.
    pub fn lambda_vector_with(&self, lambda_hat: f64) -> Array1<f64> {
        let mut lambda = Array1::from_elem(self.mdp.n_states, 1.0);
        for &s in &self.goal_states {
            lambda[s] = lambda_hat;
        }
        lambda
    }

    pub fn state_at(&self, r: usize, c: usize) -> Option<usize> {
        if r >= self.spec.rows || c >= self.spec.cols {
            return None;
        }
        self.state_of_cell[r * self.spec.cols + c]
    }

    pub fn coords(&self, s: usize) -> (usize, usize) {
        let cell = self.cell_of_state[s];
        (cell / self.spec.cols, cell % self.spec.cols)
    }
}

/// JSON environment config:
/// `{ "grid": [...], "goals": {"r,c": {"reward": x, "lambda": y}},
///    "gamma": g, "noise_prob": p, "wall_penalty": w,
///    "start": "uniform" | [r, c], "waypoints": [[r, c], ...] }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvConfig {
    pub grid: Vec<String>,
    pub goals: BTreeMap<String, GoalAnnotation>,
    pub gamma: f64,
    #[serde(default)]
    pub noise_prob: f64,
    #[serde(default = "default_wall_penalty")]
    pub wall_penalty: f64,
    #[serde(default)]
    pub start: StartConfig,
    /// Extra policy targets (cells) for environments where the base policy
    /// library should cover more locations than the goals.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub waypoints: Vec<[usize; 2]>,
}

fn default_wall_penalty() -> f64 {
    -1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StartConfig {
    Keyword(String),
    Cell([usize; 2]),
}

impl Default for StartConfig {
    fn default() -> Self {
        StartConfig::Keyword("uniform".into())
    }
}

impl EnvConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad env config: {e}")))
    }

    pub fn to_spec(&self) -> Result<GridSpec> {
        let cols = self.grid.first().map(|r| r.chars().count()).unwrap_or(0);
        let mut annotations = BTreeMap::new();
        for (key, ann) in &self.goals {
            let (r, c) = parse_cell_key(key)?;
            annotations.insert(r * cols + c, *ann);
        }
        let start = match &self.start {
            StartConfig::Keyword(k) if k == "uniform" => StartSpec::Uniform,
            StartConfig::Keyword(k) => {
                return Err(Error::Config(format!("unknown start keyword '{k}'")))
            }
            StartConfig::Cell([r, c]) => StartSpec::Fixed(*r, *c),
        };
        GridSpec::from_rows(
            &self.grid,
            annotations,
            self.noise_prob,
            self.wall_penalty,
            self.gamma,
            start,
        )?
        .with_waypoints(self.waypoints.clone())
    }

    pub fn build(&self) -> Result<GridWorld> {
        GridWorld::build(self.to_spec()?)
    }
}

fn parse_cell_key(key: &str) -> Result<(usize, usize)> {
    let mut it = key.split(',');
    let bad = || Error::Config(format!("bad goal key '{key}', expected \"r,c\""));
    let r = it
        .next()
        .ok_or_else(bad)?
        .trim()
        .parse::<usize>()
        .map_err(|_| bad())?;
    let c = it
        .next()
        .ok_or_else(bad)?
        .trim()
        .parse::<usize>()
        .map_err(|_| bad())?;
    if it.next().is_some() {
        return Err(bad());
    }
    Ok((r, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_grid(rows: &[&str]) -> GridSpec {
        GridSpec::from_rows(
            &rows.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
            BTreeMap::new(),
            0.0,
            -1.0,
            0.9,
            StartSpec::Uniform,
        )
        .unwrap()
    }

    #[test]
    fn corridor_right_move_is_deterministic() {
        let world = GridWorld::build(open_grid(&["..."])).unwrap();
        assert_eq!(world.mdp.transitions[[0, RIGHT, 1]], 1.0);
        assert!(world.mdp.is_deterministic());
    }

    #[test]
    fn single_cell_self_transitions_under_every_action() {
        let world = GridWorld::build(open_grid(&["."])).unwrap();
        for a in 0..N_ACTIONS {
            assert_eq!(world.mdp.transitions[[0, a, 0]], 1.0);
        }
        // Stay never bumps; directional moves off a 1x1 grid always do.
        assert_eq!(world.bump_prob[[0, STAY]], 0.0);
        assert_eq!(world.bump_prob[[0, UP]], 1.0);
    }

    #[test]
    fn noise_mixes_intended_and_random_moves() {
        let mut spec = open_grid(&["...", "...", "..."]);
        spec.noise_prob = 0.2;
        let world = GridWorld::build(spec).unwrap();
        let s = world.state_at(1, 1).unwrap();
        // All four moves open: intended gets 0.8 + 0.2/4, others 0.05 each.
        assert!(
            (world.mdp.transitions[[s, UP, world.state_at(0, 1).unwrap()]] - 0.85).abs() < 1e-12
        );
        for (a, (r, c)) in [(RIGHT, (1, 2)), (DOWN, (2, 1)), (LEFT, (1, 0))] {
            assert!(
                (world.mdp.transitions[[s, UP, world.state_at(r, c).unwrap()]] - 0.05).abs()
                    < 1e-12,
                "action {a}"
            );
        }
    }

    #[test]
    fn uniform_policy_on_corridor_collapses_blocked_moves_onto_self() {
        use crate::mdp::{policy_transition_matrix, Policy};
        let world = GridWorld::build(open_grid(&["..."])).unwrap();
        let pi = Policy::uniform(3, N_ACTIONS);
        let p = policy_transition_matrix(&world.mdp, &pi).unwrap();
        // Middle cell: 1/5 left, 1/5 right, stay + two blocked moves = 3/5.
        assert!((p[[1, 0]] - 0.2).abs() < 1e-12);
        assert!((p[[1, 2]] - 0.2).abs() < 1e-12);
        assert!((p[[1, 1]] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn ragged_grid_is_rejected() {
        let rows = vec!["...".to_string(), "..".to_string()];
        let err = GridSpec::from_rows(&rows, BTreeMap::new(), 0.0, -1.0, 0.9, StartSpec::Uniform);
        assert!(matches!(err, Err(Error::Config(msg)) if msg.contains("row 1")));
    }

    #[test]
    fn unannotated_goal_is_rejected() {
        let rows = vec![".G.".to_string()];
        let err = GridSpec::from_rows(&rows, BTreeMap::new(), 0.0, -1.0, 0.9, StartSpec::Uniform);
        assert!(matches!(err, Err(Error::Config(msg)) if msg.contains("(0,1)")));
    }

    #[test]
    fn annotation_on_non_goal_cell_is_rejected() {
        let rows = vec!["...".to_string()];
        let mut ann = BTreeMap::new();
        ann.insert(
            1,
            GoalAnnotation {
                reward: 1.0,
                lambda: 0.5,
            },
        );
        let err = GridSpec::from_rows(&rows, ann, 0.0, -1.0, 0.9, StartSpec::Uniform);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn env_config_round_trips() {
        let text = r#"{
            "grid": ["G.G"],
            "goals": {"0,0": {"reward": 10.0, "lambda": 0.0},
                      "0,2": {"reward": 6.0, "lambda": 1.0}},
            "gamma": 0.99,
            "noise_prob": 0.0,
            "wall_penalty": 0.0,
            "start": [0, 1]
        }"#;
        let cfg = EnvConfig::from_json(text).unwrap();
        let world = cfg.build().unwrap();
        assert_eq!(world.mdp.n_states, 3);
        assert_eq!(world.goal_states, vec![0, 2]);
        assert_eq!(world.mdp.start_distribution[1], 1.0);
        let spec = world.reward_spec(RewardScheme::PureDiminish);
        assert_eq!(spec.r_bar.to_vec(), vec![10.0, 0.0, 6.0]);
        assert_eq!(spec.lambda.to_vec(), vec![0.0, 1.0, 1.0]);
    }
}
