//! End-of-epoch reliability settlement for validators and users.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::{TxId, ValidatorId, Verdict};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityParams {
    /// Validator forgetting factor.
    pub zeta1: f64,
    /// User forgetting factor.
    pub zeta2: f64,
}

impl Default for ReliabilityParams {
    fn default() -> Self {
        Self { zeta1: 0.98, zeta2: 0.9 }
    }
}

impl ReliabilityParams {
    pub fn validate(&self) -> Result<()> {
        for (name, z) in [("zeta1", self.zeta1), ("zeta2", self.zeta2)] {
            if !(z > 0.0 && z < 1.0) {
                return Err(Error::config(format!("{name} must lie strictly between 0 and 1")));
            }
        }
        Ok(())
    }
}

/// How a validator's perception is scored against the pair majority.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementRule {
    /// Credit 1 when the perception matches the majority.
    #[default]
    Agreement,
    /// Credit 1 when it differs (XOR), kept for comparison runs.
    LiteralXor,
}

/// Every perception sent during an epoch, grouped by (subject, witness).
#[derive(Clone, Debug, Default)]
pub struct PairVerdictBook {
    pairs: BTreeMap<(TxId, TxId), Vec<(ValidatorId, Verdict)>>,
}

impl PairVerdictBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, subject: TxId, witness: TxId, validator: ValidatorId, verdict: Verdict) {
        self.pairs.entry((subject, witness)).or_default().push((validator, verdict));
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn majority(&self, subject: TxId, witness: TxId) -> Option<Verdict> {
        self.pairs.get(&(subject, witness)).and_then(|entries| {
            let verdicts: Vec<Verdict> = entries.iter().map(|&(_, v)| v).collect();
            majority_perception(&verdicts)
        })
    }

    /// Per validator, the (own verdict, pair majority) of every perception it
    /// sent. Pairs without a strict majority are left out.
    pub fn settle(&self) -> BTreeMap<ValidatorId, Vec<(Verdict, Verdict)>> {
        let mut out: BTreeMap<ValidatorId, Vec<(Verdict, Verdict)>> = BTreeMap::new();
        for entries in self.pairs.values() {
            let verdicts: Vec<Verdict> = entries.iter().map(|&(_, v)| v).collect();
            let Some(majority) = majority_perception(&verdicts) else {
                continue;
            };
            for &(validator, verdict) in entries {
                out.entry(validator).or_default().push((verdict, majority));
            }
        }
        out
    }
}

/// Strict-majority verdict; ties (and empty input) give `None`.
pub fn majority_perception(verdicts: &[Verdict]) -> Option<Verdict> {
    let clear = verdicts.iter().filter(|&&v| v == Verdict::Clear).count();
    let conflict = verdicts.len() - clear;
    match clear.cmp(&conflict) {
        std::cmp::Ordering::Greater => Some(Verdict::Clear),
        std::cmp::Ordering::Less => Some(Verdict::Conflict),
        std::cmp::Ordering::Equal => None,
    }
}

/// Exponential-forgetting update of a validator's reliability from the
/// (own, majority) pairs of the perceptions it sent this epoch.
pub fn update_validator_reliability(
    rho_prev: f64,
    sent: &[(Verdict, Verdict)],
    params: &ReliabilityParams,
    rule: AgreementRule,
) -> f64 {
    if sent.is_empty() {
        return rho_prev;
    }
    let credited = sent
        .iter()
        .filter(|(own, majority)| match rule {
            AgreementRule::Agreement => own == majority,
            AgreementRule::LiteralXor => own != majority,
        })
        .count();
    let fraction = credited as f64 / sent.len() as f64;
    params.zeta1 * rho_prev + (1.0 - params.zeta1) * fraction
}

/// Exponential-forgetting update of a user's reliability from the final
/// decisions on the transactions they submitted this epoch.
pub fn update_user_reliability(rho_prev: f64, outcomes: &[bool], params: &ReliabilityParams) -> f64 {
    if outcomes.is_empty() {
        return rho_prev;
    }
    let confirmed = outcomes.iter().filter(|&&v| v).count() as f64 / outcomes.len() as f64;
    params.zeta2 * rho_prev + (1.0 - params.zeta2) * confirmed
}
