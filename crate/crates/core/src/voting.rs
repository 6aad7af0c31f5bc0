//! Strict-majority voting over round averages.
//!
//! A case is diagnosed over n independent sampling rounds; each round's
//! batch average contributes its sign. The case is positive iff strictly
//! more than half of the averages are plus — an average of exactly zero is
//! not plus, and an exact half split is negative.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Positive,
    Negative,
}

#[derive(Debug, Clone)]
pub struct VotingConfig {
    pub rounds: usize,
}

impl VotingConfig {
    pub fn new(rounds: usize) -> Result<VotingConfig> {
        if rounds == 0 {
            return Err(Error::Config("voting needs at least one round".into()));
        }
        Ok(VotingConfig { rounds })
    }
}

impl Default for VotingConfig {
    fn default() -> Self {
        VotingConfig { rounds: 10 }
    }
}

/// Outcome of voting on one case.
#[derive(Debug, Clone, Serialize)]
pub struct CaseVerdict {
    pub case_id: String,
    pub round_averages: Vec<f64>,
    pub positive_rounds: usize,
    pub n: usize,
    pub label: Verdict,
}

impl CaseVerdict {
    /// Per-round vote signs: true where the round's average was plus.
    pub fn round_signs(&self) -> Vec<bool> {
        self.round_averages.iter().map(|&a| a > 0.0).collect()
    }

    /// One-line JSON form, stable field order.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("verdict serializes")
    }
}

/// Apply the strict-majority rule to one case's round averages.
pub fn vote(case_id: &str, round_averages: &[f64], config: &VotingConfig) -> Result<CaseVerdict> {
    if round_averages.len() != config.rounds {
        return Err(Error::Config(format!(
            "expected {} round averages, got {}",
            config.rounds,
            round_averages.len()
        )));
    }
    let positive_rounds = round_averages.iter().filter(|&&a| a > 0.0).count();
    let label = if 2 * positive_rounds > config.rounds {
        Verdict::Positive
    } else {
        Verdict::Negative
    };
    Ok(CaseVerdict {
        case_id: case_id.to_string(),
        round_averages: round_averages.to_vec(),
        positive_rounds,
        n: config.rounds,
        label,
    })
}
