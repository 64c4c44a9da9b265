//! The acceptance suite: one function per criterion, each returning a
//! pass/fail report. The `check` CLI subcommand and the `acceptance`
//! integration test both run these.

/// Outcome of one criterion.
#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub details: String,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] criterion {:2} {} — {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.details
        )
    }
}

mod criteria;

pub use criteria::{
    all_criteria, artifact_bundle, random_mdp, random_policy, run_criterion, CRITERION_COUNT,
};

/// Runs the whole suite in order.
pub fn run_all() -> Vec<CriterionResult> {
    (1..=CRITERION_COUNT).map(run_criterion).collect()
}
