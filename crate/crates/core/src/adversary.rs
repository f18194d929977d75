//! Byzantine validator behaviors and attack scenarios.
//!
//! Dishonest validators stay protocol-conformant on the wire: they invert
//! what they report, or go silent, but never send malformed messages.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::Decision;
use crate::error::{Error, Result};
use crate::ledger::{honest_perceive, Ledger, Origin, Perception, Transaction, TxId, ValidatorId};
use crate::net::Message;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    /// Report inverted perceptions, vote against the truth and broadcast
    /// skewed beliefs.
    #[default]
    Invert,
    /// Send nothing at all.
    Withhold,
    /// Dishonest validators invert, and an outside attacker re-submits
    /// confirmed transactions.
    ReplayInjector,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeliefPolicy {
    /// 0 for valid transactions, 1 for invalid ones.
    #[default]
    Extreme,
    /// Uniform in [0, 1].
    Random,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryConfig {
    /// Fraction of dishonest validators.
    #[serde(default)]
    pub tau: f64,
    #[serde(default)]
    pub behavior: Behavior,
    #[serde(default)]
    pub belief_policy: BeliefPolicy,
    /// Replayed transactions to inject (replay-injector only).
    #[serde(default)]
    pub replays: usize,
    /// Explicit dishonest validator indices; overrides the random draw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<u32>>,
}

impl AdversaryConfig {
    pub fn validate(&self, validators: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config("adversary.tau must lie in [0, 1]"));
        }
        if let Some(targets) = &self.targets {
            if let Some(bad) = targets.iter().find(|&&t| t as usize >= validators) {
                return Err(Error::config(format!("adversary target {bad} is not a validator")));
            }
        }
        Ok(())
    }

    pub fn dishonest_count(&self, validators: usize) -> usize {
        match &self.targets {
            Some(t) => {
                let mut t = t.clone();
                t.sort_unstable();
                t.dedup();
                t.len()
            }
            None => (self.tau * validators as f64).round() as usize,
        }
    }

    /// Honesty flag per validator.
    pub fn assign_honesty<R: Rng + ?Sized>(&self, validators: usize, rng: &mut R) -> Vec<bool> {
        let mut honest = vec![true; validators];
        match &self.targets {
            Some(targets) => {
                for &t in targets {
                    honest[t as usize] = false;
                }
            }
            None => {
                let k = self.dishonest_count(validators).min(validators);
                for i in index::sample(rng, validators, k) {
                    honest[i] = false;
                }
            }
        }
        honest
    }

    pub fn withholds(&self) -> bool {
        self.behavior == Behavior::Withhold
    }
}

/// The inverted perception a dishonest custodian of `j` reports.
pub fn adversary_perceive(
    ledger: &Ledger,
    validator: ValidatorId,
    ell: TxId,
    j: TxId,
    round: u32,
) -> Result<Perception> {
    let mut p = honest_perceive(ledger, validator, ell, j, round)?;
    p.verdict = p.verdict.inverted();
    Ok(p)
}

/// Vote and broadcast belief of a dishonest community member.
pub fn adversary_vote_and_belief<R: Rng + ?Sized>(
    truth_valid: bool,
    policy: BeliefPolicy,
    rng: &mut R,
) -> (Decision, f64) {
    let vote = Decision::from_validity(!truth_valid);
    let belief = match policy {
        BeliefPolicy::Extreme => {
            if truth_valid {
                0.0
            } else {
                1.0
            }
        }
        BeliefPolicy::Random => rng.random::<f64>(),
    };
    (vote, belief)
}

/// Drops every message sent by a dishonest validator. Returns the kept
/// messages and the number dropped.
pub fn withhold_filter(messages: Vec<Message>, honest: &[bool]) -> (Vec<Message>, usize) {
    let before = messages.len();
    let kept: Vec<Message> = messages
        .into_iter()
        .filter(|m| honest.get(m.sender.index()).copied().unwrap_or(true))
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

/// Clones a confirmed transaction under a fresh id. Witnesses it shares
/// with the spent set are marked as conflicting.
pub fn replay_inject(ledger: &Ledger, target: TxId, submit_time: u64) -> Result<Transaction> {
    let original = ledger.get(target)?;
    if !ledger.is_confirmed(target) || original.is_genesis() {
        return Err(Error::NotConfirmed(target));
    }
    let spent = ledger.spent();
    let conflict_bits: Vec<bool> = original.witness_ids.iter().map(|w| spent.contains(w)).collect();
    Ok(Transaction {
        id: ledger.next_id(),
        submitter: original.submitter,
        witness_ids: original.witness_ids.clone(),
        attributes: original.attributes,
        truth_valid: !conflict_bits.iter().any(|&b| b),
        conflict_bits,
        value: original.value,
        fee: original.fee,
        submit_time,
        origin: Origin::Replay { of: target },
    })
}
