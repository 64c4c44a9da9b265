//! Exact dynamic programming for visit-discounted occupancy representations.
//!
//! The representation Phi(s, s') accumulates gamma^k * lambda(s')^n at every
//! occupancy of s', where n counts prior visits of s' since the start state.
//! lambda = 1 recovers the successor representation, lambda = 0 the
//! first-occupancy representation. The Bellman backup is
//!
//!   G(Phi) = I .* (1 + gamma * lambda(s') * P Phi) + gamma * (1 - I) .* P Phi
//!
//! with the decay rate applied per column, and is a gamma-contraction.

use ndarray::{Array1, Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::mdp::{policy_transition_matrix, Policy, TabularMdp};

/// Converged representation with the decay vector and discount it was
/// solved for.
#[derive(Debug, Clone)]
pub struct LambdaR {
    pub phi: Array2<f64>,
    pub lambda: Array1<f64>,
    pub gamma: f64,
}

/// Action-conditioned variant, indexed `[s, a, s']`.
#[derive(Debug, Clone)]
pub struct ActionLambdaR {
    pub phi: Array3<f64>,
    pub lambda: Array1<f64>,
    pub gamma: f64,
}

impl ActionLambdaR {
    /// Q-values for a reward vector: Q(s, a) = r^T Phi(s, a, .).
    pub fn q_values(&self, r: &Array1<f64>) -> Array2<f64> {
        let (ns, na, _) = self.phi.dim();
        let mut q = Array2::zeros((ns, na));
        for s in 0..ns {
            for a in 0..na {
                q[[s, a]] = self.phi.slice(ndarray::s![s, a, ..]).dot(r);
            }
        }
        q
    }
}

/// Per-sweep max-entry Bellman residuals.
#[derive(Debug, Clone)]
pub struct SolveLog {
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Worst-case distance to the fixed point implied by the final sweep
    /// count: gamma^(k+1) / (1 - max(lambda) * gamma). Conservative for
    /// state-dependent lambda.
    pub error_bound: f64,
}

fn check_lambda(lambda: &Array1<f64>, n_states: usize) -> Result<()> {
    if lambda.len() != n_states {
        return Err(Error::Structural(format!(
            "lambda has length {}, expected {n_states}",
            lambda.len()
        )));
    }
    if lambda.iter().any(|&l| !(0.0..=1.0).contains(&l)) {
        return Err(Error::Config("lambda entries must lie in [0,1]".into()));
    }
    Ok(())
}

/// One synchronous Bellman backup of the representation.
pub fn apply_g_lambda(
    phi: &Array2<f64>,
    p: &Array2<f64>,
    gamma: f64,
    lambda: &Array1<f64>,
) -> Result<Array2<f64>> {
    let n = p.nrows();
    if p.ncols() != n || phi.dim() != (n, n) {
        return Err(Error::Structural(format!(
            "shape mismatch: P is {:?}, Phi is {:?}",
            p.dim(),
            phi.dim()
        )));
    }
    check_lambda(lambda, n)?;
    let pphi = p.dot(phi);
    let mut out = pphi.mapv(|v| v * gamma);
    for s in 0..n {
        out[[s, s]] = 1.0 + gamma * lambda[s] * pphi[[s, s]];
    }
    Ok(out)
}

/// Standard initialization (1 - lambda(s)) on the diagonal.
pub fn default_init(lambda: &Array1<f64>) -> Array2<f64> {
    let n = lambda.len();
    let mut phi = Array2::zeros((n, n));
    for s in 0..n {
        phi[[s, s]] = 1.0 - lambda[s];
    }
    phi
}

/// Prop-style convergence envelope after k sweeps.
pub fn convergence_bound(k: usize, gamma: f64, lambda_max: f64) -> f64 {
    gamma.powi(k as i32 + 1) / (1.0 - lambda_max * gamma)
}

/// Largest value an entry can take: 1/(1 - lambda(s') gamma) on the diagonal
/// and gamma/(1 - lambda(s') gamma) off it.
pub fn max_entry_bound(gamma: f64, lambda_sprime: f64, diagonal: bool) -> f64 {
    let base = 1.0 / (1.0 - lambda_sprime * gamma);
    if diagonal {
        base
    } else {
        gamma * base
    }
}

/// Solves the representation to `tol` max-entry Bellman residual, starting
/// from the standard initialization.
pub fn solve_lambda_r(
    mdp: &TabularMdp,
    pi: &Policy,
    lambda: &Array1<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<(LambdaR, SolveLog)> {
    let p = policy_transition_matrix(mdp, pi)?;
    solve_lambda_r_from(default_init(lambda), &p, mdp.gamma, lambda, tol, max_iters)
}

/// Solver core accepting an arbitrary initial matrix (e.g. zeros; the
/// standard error envelope is only guaranteed from the default init).
pub fn solve_lambda_r_from(
    init: Array2<f64>,
    p: &Array2<f64>,
    gamma: f64,
    lambda: &Array1<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<(LambdaR, SolveLog)> {
    if tol <= 0.0 {
        return Err(Error::Config("tol must be positive".into()));
    }
    let mut phi = init;
    let mut residuals = Vec::new();
    for k in 0..max_iters {
        let next = apply_g_lambda(&phi, p, gamma, lambda)?;
        let residual = max_abs_diff(&next, &phi);
        residuals.push(residual);
        phi = next;
        if residual < tol {
            let lambda_max = lambda.iter().cloned().fold(0.0, f64::max);
            let log = SolveLog {
                iterations: k + 1,
                converged: true,
                error_bound: convergence_bound(k + 1, gamma, lambda_max),
                residuals,
            };
            return Ok((
                LambdaR {
                    phi,
                    lambda: lambda.clone(),
                    gamma,
                },
                log,
            ));
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iters,
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
    })
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Action-conditioned representation. The state-conditioned fixed point is
/// solved first; one exact backup through each action then yields
/// Phi(s, a, s'') = d(s,s'')(1 + gamma lambda(s'') E Phi(s', s'')) +
/// gamma (1 - d(s,s'')) E Phi(s', s'') with s' ~ p(.|s, a).
pub fn solve_lambda_r_actions(
    mdp: &TabularMdp,
    pi: &Policy,
    lambda: &Array1<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<(ActionLambdaR, SolveLog)> {
    let (state_rep, log) = solve_lambda_r(mdp, pi, lambda, tol, max_iters)?;
    let phi = assemble_action_conditioned(mdp, &state_rep.phi, lambda)?;
    Ok((
        ActionLambdaR {
            phi,
            lambda: lambda.clone(),
            gamma: mdp.gamma,
        },
        log,
    ))
}

/// One action-resolved backup of a state-conditioned matrix.
pub fn assemble_action_conditioned(
    mdp: &TabularMdp,
    phi_state: &Array2<f64>,
    lambda: &Array1<f64>,
) -> Result<Array3<f64>> {
    let n = mdp.n_states;
    if phi_state.dim() != (n, n) {
        return Err(Error::Structural("state matrix shape mismatch".into()));
    }
    check_lambda(lambda, n)?;
    let na = mdp.n_actions;
    let mut out = Array3::zeros((n, na, n));
    for a in 0..na {
        let p_a = mdp.transitions.index_axis(Axis(1), a);
        let expect = p_a.dot(phi_state); // E[Phi(s', s'')] given action a
        for s in 0..n {
            for s2 in 0..n {
                out[[s, a, s2]] = if s == s2 {
                    1.0 + mdp.gamma * lambda[s2] * expect[[s, s2]]
                } else {
                    mdp.gamma * expect[[s, s2]]
                };
            }
        }
    }
    Ok(out)
}

/// One backup of an action-conditioned table (used by learners' expected
/// updates and for residual checks).
pub fn apply_g_lambda_actions(
    phi: &Array3<f64>,
    mdp: &TabularMdp,
    pi: &Policy,
    lambda: &Array1<f64>,
) -> Result<Array3<f64>> {
    let (n, na, n2) = phi.dim();
    if n != mdp.n_states || na != mdp.n_actions || n2 != mdp.n_states {
        return Err(Error::Structural("action tensor shape mismatch".into()));
    }
    check_lambda(lambda, n)?;
    // Mix actions into a state-conditioned view, then back up per action.
    let mut mixed = Array2::zeros((n, n));
    for s in 0..n {
        for a in 0..na {
            let w = pi.probs[[s, a]];
            if w == 0.0 {
                continue;
            }
            for s2 in 0..n {
                mixed[[s, s2]] += w * phi[[s, a, s2]];
            }
        }
    }
    assemble_action_conditioned(mdp, &mixed, lambda)
}

/// Occupancy credited only for the first N visits, solved level by level
/// (level N backs up on level N-1).
pub fn solve_nth_occupancy(
    mdp: &TabularMdp,
    pi: &Policy,
    n_occ: usize,
    tol: f64,
    max_iters: usize,
) -> Result<Vec<Array2<f64>>> {
    let p = policy_transition_matrix(mdp, pi)?;
    let n = mdp.n_states;
    let gamma = mdp.gamma;
    let mut levels: Vec<Array2<f64>> = Vec::with_capacity(n_occ + 1);
    levels.push(Array2::zeros((n, n)));
    for _ in 1..=n_occ {
        let prev = levels.last().unwrap();
        let p_prev = p.dot(prev);
        let mut phi = prev.clone();
        let mut converged = false;
        let mut residual = f64::INFINITY;
        for _ in 0..max_iters {
            let p_phi = p.dot(&phi);
            let mut next = p_phi.mapv(|v| v * gamma);
            for s in 0..n {
                next[[s, s]] = 1.0 + gamma * p_prev[[s, s]];
            }
            residual = max_abs_diff(&next, &phi);
            phi = next;
            if residual < tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence {
                iterations: max_iters,
                residual,
            });
        }
        levels.push(phi);
    }
    Ok(levels.split_off(1))
}

/// Representation of eligibility-trace replenishing rewards. Solves the
/// plain successor representation at discount gamma*lambda_r first, then the
/// outer recursion whose diagonal source couples to it.
pub fn solve_eligibility_trace_rep(
    mdp: &TabularMdp,
    pi: &Policy,
    lambda_d: f64,
    lambda_r: f64,
    tol: f64,
    max_iters: usize,
) -> Result<Array2<f64>> {
    if !(0.0..=1.0).contains(&lambda_d) || !(0.0..=1.0).contains(&lambda_r) {
        return Err(Error::Config(
            "lambda_d and lambda_r must lie in [0,1]".into(),
        ));
    }
    let p = policy_transition_matrix(mdp, pi)?;
    let n = mdp.n_states;
    let gamma = mdp.gamma;

    // Inner SR at discount gamma * lambda_r: M = I + (gamma lambda_r) P M.
    let inner_discount = gamma * lambda_r;
    let mut m: Array2<f64> = Array2::eye(n);
    let mut converged = false;
    for _ in 0..max_iters {
        let next = Array2::eye(n) + &p.dot(&m).mapv(|v| v * inner_discount);
        let residual = max_abs_diff(&next, &m);
        m = next;
        if residual < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations: max_iters,
            residual: f64::NAN,
        });
    }

    // Diagonal source: lambda_d - gamma lambda_r (1 - lambda_d) (P M)(s, s).
    let pm = p.dot(&m);
    let mut source = Array2::zeros((n, n));
    for s in 0..n {
        source[[s, s]] = lambda_d - gamma * lambda_r * (1.0 - lambda_d) * pm[[s, s]];
    }
    let mut omega = source.clone();
    for _ in 0..max_iters {
        let next = &source + &p.dot(&omega).mapv(|v| v * gamma);
        let residual = max_abs_diff(&next, &omega);
        omega = next;
        if residual < tol {
            return Ok(omega);
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iters,
        residual: f64::NAN,
    })
}

/// Result of the total-time solve; `clamped` lists entries pinned at the cap.
#[derive(Debug, Clone)]
pub struct TotalTimeRep {
    pub rep: Array2<f64>,
    pub clamped: Vec<(usize, usize)>,
}

/// Representation of total-time replenishing rewards:
/// P(s,s') = d(s,s') + gamma (lambda_d d + lambda_r (1-d)) E P(s_{t+1}, s').
/// The off-diagonal growth factor gamma*lambda_r can exceed one around short
/// cycles, so iterates are clamped to [0, cap] and clamping is reported.
pub fn solve_total_time_rep(
    mdp: &TabularMdp,
    pi: &Policy,
    lambda_d: f64,
    lambda_r: f64,
    cap: f64,
    tol: f64,
    max_iters: usize,
) -> Result<TotalTimeRep> {
    if cap <= 0.0 {
        return Err(Error::Config("cap must be positive".into()));
    }
    if lambda_d < 0.0 || lambda_r < 0.0 {
        return Err(Error::Config(
            "lambda_d and lambda_r must be nonnegative".into(),
        ));
    }
    let p = policy_transition_matrix(mdp, pi)?;
    let n = mdp.n_states;
    let gamma = mdp.gamma;
    let mut rep: Array2<f64> = Array2::eye(n);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let prep = p.dot(&rep);
        let mut next = Array2::zeros((n, n));
        for s in 0..n {
            for s2 in 0..n {
                let coeff = if s == s2 {
                    gamma * lambda_d
                } else {
                    gamma * lambda_r
                };
                let v = if s == s2 { 1.0 } else { 0.0 } + coeff * prep[[s, s2]];
                next[[s, s2]] = v.clamp(0.0, cap);
            }
        }
        residual = max_abs_diff(&next, &rep);
        rep = next;
        if residual < tol {
            let clamped = clamped_entries(&rep, &p, gamma, lambda_d, lambda_r, cap);
            return Ok(TotalTimeRep { rep, clamped });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iters,
        residual,
    })
}

fn clamped_entries(
    rep: &Array2<f64>,
    p: &Array2<f64>,
    gamma: f64,
    lambda_d: f64,
    lambda_r: f64,
    cap: f64,
) -> Vec<(usize, usize)> {
    let n = rep.nrows();
    let prep = p.dot(rep);
    let mut out = Vec::new();
    for s in 0..n {
        for s2 in 0..n {
            let coeff = if s == s2 {
                gamma * lambda_d
            } else {
                gamma * lambda_r
            };
            let raw = if s == s2 { 1.0 } else { 0.0 } + coeff * prep[[s, s2]];
            if raw > cap {
                out.push((s, s2));
            }
        }
    }
    out
}

/// Discrete Bellman loss for the density-normalized representation
/// phi(s, s') = Phi(s, s') / mu(s'), evaluated exactly (expectations as
/// weighted sums, target equal to the current matrix):
///
///   E_{s~rho, s2~P, s'~mu} (phi(s,s') - gamma phi(s2,s'))^2
///     - 2 E_{s~rho} phi(s,s)
///     + 2 gamma (1-lambda) E_{s~rho, s2~P} mu(s) phi(s,s) phi(s2,s)
pub fn lambda_o_bellman_loss(
    phi: &Array2<f64>,
    p: &Array2<f64>,
    gamma: f64,
    lambda: f64,
    mu: &Array1<f64>,
    rho: &Array1<f64>,
) -> Result<f64> {
    let n = p.nrows();
    if phi.dim() != (n, n) || mu.len() != n || rho.len() != n {
        return Err(Error::Structural("loss input shape mismatch".into()));
    }
    if mu.iter().any(|&m| m <= 0.0) {
        return Err(Error::Config("mu must be strictly positive".into()));
    }
    let mut loss = 0.0;
    for s in 0..n {
        let w_s = rho[s];
        if w_s == 0.0 {
            continue;
        }
        loss -= 2.0 * w_s * phi[[s, s]];
        for s2 in 0..n {
            let w = w_s * p[[s, s2]];
            if w == 0.0 {
                continue;
            }
            let mut sq = 0.0;
            for sp in 0..n {
                let d = phi[[s, sp]] - gamma * phi[[s2, sp]];
                sq += mu[sp] * d * d;
            }
            loss += w * sq;
            loss += w * 2.0 * gamma * (1.0 - lambda) * mu[s] * phi[[s, s]] * phi[[s2, s]];
        }
    }
    Ok(loss)
}

/// Truncated set-indexed value along the unique trajectory of a
/// deterministic system, plus the geometric tail bound of the truncation.
#[derive(Debug, Clone, Copy)]
pub struct SetValue {
    pub value: f64,
    pub tail_bound: f64,
}

/// Evaluates sum_k lambda^(visits of X before k) gamma^k 1(s_k in X) exactly
/// over `horizon + 1` occupancies of the single trajectory from `start`.
pub fn lambda_set_operator(
    mdp: &TabularMdp,
    pi: &Policy,
    start: usize,
    set: &[usize],
    lambda: f64,
    horizon: usize,
) -> Result<SetValue> {
    if !mdp.is_deterministic() {
        return Err(Error::Unsupported(
            "set operator needs a deterministic MDP; use Monte-Carlo estimation otherwise".into(),
        ));
    }
    for (s, row) in pi.probs.axis_iter(Axis(0)).enumerate() {
        if row.iter().any(|&p| p != 0.0 && p != 1.0) {
            return Err(Error::Unsupported(format!("policy is stochastic at s={s}")));
        }
    }
    let member = {
        let mut m = vec![false; mdp.n_states];
        for &s in set {
            m[s] = true;
        }
        m
    };
    let gamma = mdp.gamma;
    let mut s = start;
    let mut visits = 0u32;
    let mut discount = 1.0;
    let mut value = 0.0;
    for _ in 0..=horizon {
        if member[s] {
            value += crate::reward::pow_visits(lambda, visits) * discount;
            visits += 1;
        }
        discount *= gamma;
        s = mdp.deterministic_next(s, pi.action(s))?;
    }
    let tail_bound = gamma.powi(horizon as i32 + 1) / (1.0 - gamma);
    Ok(SetValue { value, tail_bound })
}
