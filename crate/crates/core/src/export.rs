//! CSV and run-manifest serialization. All writers are deterministic:
//! fixed column orders, shortest-roundtrip float formatting, `\n` endings.

use ndarray::{Array1, Array2};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::episode::EpisodeTrace;

/// Matrix dump with a header row of state indices and a leading row-state
/// column.
pub fn matrix_csv(m: &Array2<f64>) -> String {
    let mut out = String::from("s");
    for j in 0..m.ncols() {
        out.push_str(&format!(",{j}"));
    }
    out.push('\n');
    for i in 0..m.nrows() {
        out.push_str(&format!("{i}"));
        for j in 0..m.ncols() {
            out.push_str(&format!(",{}", m[[i, j]]));
        }
        out.push('\n');
    }
    out
}

pub fn vector_csv(header: &str, v: &Array1<f64>) -> String {
    let mut out = format!("s,{header}\n");
    for (i, x) in v.iter().enumerate() {
        out.push_str(&format!("{i},{x}\n"));
    }
    out
}

/// Per-sweep residual log.
pub fn iteration_log_csv(residuals: &[f64]) -> String {
    let mut out = String::from("iter,max_residual\n");
    for (i, r) in residuals.iter().enumerate() {
        out.push_str(&format!("{i},{r}\n"));
    }
    out
}

/// Trace export: step, state, action, reward, plus one column per tracked
/// goal state when snapshots were recorded.
pub fn trace_csv(trace: &EpisodeTrace, goal_states: &[usize]) -> String {
    let mut out = String::from("t,state,action,reward");
    let with_goals = trace.reward_snapshots.is_some();
    if with_goals {
        for g in goal_states {
            out.push_str(&format!(",r_goal_{g}"));
        }
    }
    out.push('\n');
    for (i, s) in trace.steps.iter().enumerate() {
        out.push_str(&format!("{},{},{},{}", s.t, s.state, s.action, s.reward));
        if let Some(snaps) = &trace.reward_snapshots {
            for g in goal_states {
                out.push_str(&format!(",{}", snaps[i][*g]));
            }
        }
        out.push('\n');
    }
    out
}

/// Generic row-wise CSV from a header and preformatted rows.
pub fn rows_csv(header: &str, rows: &[String]) -> String {
    let mut out =
        String::with_capacity(header.len() + 1 + rows.iter().map(|r| r.len() + 1).sum::<usize>());
    out.push_str(header);
    out.push('\n');
    for r in rows {
        out.push_str(r);
        out.push('\n');
    }
    out
}

/// Provenance record written next to every artifact set.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>, seed: u64, config_text: &str) -> Self {
        Self {
            command: command.to_string(),
            argv,
            seed,
            config_hash: sha256_hex(config_text),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

pub fn sha256_hex(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn matrix_csv_has_state_header() {
        let m = arr2(&[[1.0, 0.5], [0.0, 2.0]]);
        let csv = matrix_csv(&m);
        assert_eq!(csv, "s,0,1\n0,1,0.5\n1,0,2\n");
    }

    #[test]
    fn manifest_hash_is_stable() {
        let a = RunManifest::new("eval", vec!["--x".into()], 7, "{}");
        let b = RunManifest::new("eval", vec!["--x".into()], 7, "{}");
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.config_hash.len(), 64);
    }
}
