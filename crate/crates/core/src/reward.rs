//! Diminishing and replenishing reward schemes.
//!
//! The base scheme pays lambda(s)^n(s,t) * rbar(s), where n(s,t) counts
//! visits strictly before the current occupancy and 0^0 = 1. The three
//! replenishing variants recover reward with elapsed time in different ways.

use ndarray::Array1;

use crate::error::{Error, Result};

/// Reward scheme selector with its scheme-specific constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardScheme {
    /// lambda(s)^n(s,t) * rbar(s).
    PureDiminish,
    /// lambda^(n(s,t) / (rate_scale * m(s,t))) * rbar(s), with m(s,t) the time
    /// since the last visit. No closed-form representation; simulation only.
    TimeElapsed { lambda: f64, rate_scale: f64 },
    /// (1 - (1 - lambda_d) * sum_j lambda_r^(t-j) 1(s_j = s)) * rbar(s) over
    /// prior visit times j < t.
    EligibilityTrace { lambda_d: f64, lambda_r: f64 },
    /// lambda_d^n(s,t) * lambda_r^(n(s,t)-t) * rbar(s); unbounded as t grows,
    /// so values are capped (see `RewardSpec::total_time_cap`).
    TotalTime { lambda_d: f64, lambda_r: f64 },
}

impl RewardScheme {
    pub fn time_elapsed(lambda: f64) -> Self {
        RewardScheme::TimeElapsed {
            lambda,
            rate_scale: 0.1,
        }
    }
}

/// Per-state initial rewards and decay rates plus the scheme in force.
#[derive(Debug, Clone)]
pub struct RewardSpec {
    pub r_bar: Array1<f64>,
    pub lambda: Array1<f64>,
    pub scheme: RewardScheme,
}

impl RewardSpec {
    pub fn new(r_bar: Array1<f64>, lambda: Array1<f64>, scheme: RewardScheme) -> Result<Self> {
        if r_bar.len() != lambda.len() {
            return Err(Error::Structural("r_bar and lambda length mismatch".into()));
        }
        if lambda.iter().any(|&l| !(0.0..=1.0).contains(&l)) {
            return Err(Error::Config("lambda entries must lie in [0,1]".into()));
        }
        let in_unit = |v: f64, name: &str| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} not in [0,1]")))
            }
        };
        match scheme {
            RewardScheme::PureDiminish => {}
            RewardScheme::TimeElapsed { lambda, rate_scale } => {
                in_unit(lambda, "time_elapsed lambda")?;
                if rate_scale <= 0.0 {
                    return Err(Error::Config("rate_scale must be positive".into()));
                }
            }
            RewardScheme::EligibilityTrace { lambda_d, lambda_r } => {
                in_unit(lambda_d, "lambda_d")?;
                in_unit(lambda_r, "lambda_r")?;
            }
            RewardScheme::TotalTime { lambda_d, lambda_r } => {
                in_unit(lambda_d, "lambda_d")?;
                in_unit(lambda_r, "lambda_r")?;
            }
        }
        Ok(Self {
            r_bar,
            lambda,
            scheme,
        })
    }

    pub fn pure(r_bar: Array1<f64>, lambda: Array1<f64>) -> Result<Self> {
        Self::new(r_bar, lambda, RewardScheme::PureDiminish)
    }

    pub fn n_states(&self) -> usize {
        self.r_bar.len()
    }

    /// Cap applied to total-time rewards: ten times the largest initial
    /// reward magnitude.
    pub fn total_time_cap(&self) -> f64 {
        10.0 * self.r_bar.iter().fold(0.0_f64, |m, &r| m.max(r.abs()))
    }

    /// States that carry consumable reward; episode termination watches these.
    pub fn goal_states(&self) -> Vec<usize> {
        (0..self.n_states())
            .filter(|&s| self.r_bar[s] > 0.0)
            .collect()
    }

    /// True when early termination by depletion can ever fire.
    pub fn any_goal_diminishes(&self) -> bool {
        self.goal_states().iter().any(|&s| self.lambda[s] < 1.0)
    }
}

/// Visit bookkeeping needed to evaluate any scheme at the current step.
pub trait VisitHistory {
    /// Current time step.
    fn time(&self) -> usize;
    /// Visits to `state` strictly before the current occupancy.
    fn visits(&self, state: usize) -> u32;
    /// Time of the most recent prior visit, if any.
    fn last_visit(&self, state: usize) -> Option<usize>;
    /// All prior visit times, ascending.
    fn visit_times(&self, state: usize) -> &[usize];
}

/// Reward paid for occupying `state` now, given the visit history so far.
pub fn reward_at<H: VisitHistory>(spec: &RewardSpec, state: usize, history: &H) -> f64 {
    let r_bar = spec.r_bar[state];
    if r_bar == 0.0 {
        return 0.0;
    }
    let n = history.visits(state);
    match spec.scheme {
        RewardScheme::PureDiminish => pow_visits(spec.lambda[state], n) * r_bar,
        RewardScheme::TimeElapsed { lambda, rate_scale } => {
            if n == 0 {
                return r_bar;
            }
            let m = history.time().saturating_sub(
                history
                    .last_visit(state)
                    .expect("n > 0 implies a prior visit"),
            );
            lambda.powf(n as f64 / (rate_scale * m as f64)) * r_bar
        }
        RewardScheme::EligibilityTrace { lambda_d, lambda_r } => {
            let t = history.time();
            let trace: f64 = history
                .visit_times(state)
                .iter()
                .map(|&j| lambda_r.powi((t - j) as i32))
                .sum();
            (1.0 - (1.0 - lambda_d) * trace) * r_bar
        }
        RewardScheme::TotalTime { lambda_d, lambda_r } => {
            let t = history.time() as i32;
            let raw = pow_visits(lambda_d, n) * lambda_r.powi(n as i32 - t) * r_bar;
            let cap = spec.total_time_cap();
            raw.clamp(-cap, cap)
        }
    }
}

/// lambda^n with the 0^0 = 1 convention.
pub fn pow_visits(lambda: f64, n: u32) -> f64 {
    if n == 0 {
        1.0
    } else {
        lambda.powi(n as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    struct Hist {
        t: usize,
        times: Vec<Vec<usize>>,
    }

    impl VisitHistory for Hist {
        fn time(&self) -> usize {
            self.t
        }
        fn visits(&self, state: usize) -> u32 {
            self.times[state].len() as u32
        }
        fn last_visit(&self, state: usize) -> Option<usize> {
            self.times[state].last().copied()
        }
        fn visit_times(&self, state: usize) -> &[usize] {
            &self.times[state]
        }
    }

    fn spec(scheme: RewardScheme) -> RewardSpec {
        RewardSpec::new(arr1(&[10.0]), arr1(&[0.5]), scheme).unwrap()
    }

    #[test]
    fn first_visit_pays_initial_reward() {
        let h = Hist {
            t: 3,
            times: vec![vec![]],
        };
        assert_eq!(reward_at(&spec(RewardScheme::PureDiminish), 0, &h), 10.0);
    }

    #[test]
    fn two_prior_visits_pay_quarter() {
        let h = Hist {
            t: 5,
            times: vec![vec![0, 2]],
        };
        assert_eq!(reward_at(&spec(RewardScheme::PureDiminish), 0, &h), 2.5);
    }

    #[test]
    fn zero_to_the_zero_is_one() {
        let s = RewardSpec::pure(arr1(&[4.0]), arr1(&[0.0])).unwrap();
        let h = Hist {
            t: 0,
            times: vec![vec![]],
        };
        assert_eq!(reward_at(&s, 0, &h), 4.0);
        let h = Hist {
            t: 1,
            times: vec![vec![0]],
        };
        assert_eq!(reward_at(&s, 0, &h), 0.0);
    }

    #[test]
    fn eligibility_trace_sums_prior_visits() {
        // rbar = 1, lambda_d = lambda_r = 0.5, prior visit at t=2, queried at
        // t=5: 1 - 0.5 * 0.5^3 = 0.9375.
        let s = RewardSpec::new(
            arr1(&[1.0]),
            arr1(&[1.0]),
            RewardScheme::EligibilityTrace {
                lambda_d: 0.5,
                lambda_r: 0.5,
            },
        )
        .unwrap();
        let h = Hist {
            t: 5,
            times: vec![vec![2]],
        };
        assert!((reward_at(&s, 0, &h) - 0.9375).abs() < 1e-15);
    }

    #[test]
    fn time_elapsed_first_visit_is_undiminished() {
        let s =
            RewardSpec::new(arr1(&[10.0]), arr1(&[0.5]), RewardScheme::time_elapsed(0.5)).unwrap();
        let h = Hist {
            t: 7,
            times: vec![vec![]],
        };
        assert_eq!(reward_at(&s, 0, &h), 10.0);
        // One prior visit at t=2 queried at t=5: exponent 1 / (0.1 * 3).
        let h = Hist {
            t: 5,
            times: vec![vec![2]],
        };
        let expect = 0.5_f64.powf(1.0 / 0.3) * 10.0;
        assert!((reward_at(&s, 0, &h) - expect).abs() < 1e-12);
    }

    #[test]
    fn total_time_reward_is_capped() {
        // n = 0 while t grows: lambda_r^(0 - t) explodes, cap = 10 * rbar.
        let s = RewardSpec::new(
            arr1(&[10.0]),
            arr1(&[1.0]),
            RewardScheme::TotalTime {
                lambda_d: 0.5,
                lambda_r: 0.5,
            },
        )
        .unwrap();
        let h = Hist {
            t: 30,
            times: vec![vec![]],
        };
        assert_eq!(reward_at(&s, 0, &h), 100.0);
    }

    #[test]
    fn rejects_lambda_outside_unit_interval() {
        assert!(RewardSpec::pure(arr1(&[1.0]), arr1(&[1.5])).is_err());
    }
}
