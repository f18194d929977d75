//! Belief updates for a single validator and transaction.
//!
//! A validator keeps two numbers per transaction it judges: the intermediate
//! belief `psi`, a Bayesian posterior over validity given the perceptions it
//! has received, and the actual belief `p`, which is what it shares with its
//! community and compares against its thresholds. `p` only ever moves down:
//! each round it becomes the minimum of its previous value, `psi`, and the
//! peer beliefs that survive trimming the `f` highest and `f` lowest.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::classifier::Thresholds;
use crate::error::{Error, Result};
use crate::ledger::{TxId, ValidatorId, Verdict};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
    Undecided,
}

impl Decision {
    pub fn is_decided(self) -> bool {
        !matches!(self, Decision::Undecided)
    }

    pub fn opposite(self) -> Self {
        match self {
            Decision::Accept => Decision::Reject,
            Decision::Reject => Decision::Accept,
            Decision::Undecided => Decision::Undecided,
        }
    }

    pub fn from_validity(valid: bool) -> Self {
        if valid {
            Decision::Accept
        } else {
            Decision::Reject
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub psi: f64,
    pub p: f64,
    pub decision: Decision,
    pub hard_zero: bool,
    pub round_of_decision: Option<u32>,
}

impl BeliefState {
    /// Both beliefs start at the submitter's reliability.
    pub fn new(prior: f64) -> Self {
        let prior = prior.clamp(0.0, 1.0);
        Self {
            psi: prior,
            p: prior,
            decision: Decision::Undecided,
            hard_zero: false,
            round_of_decision: None,
        }
    }

    /// Records the first decision; later calls are ignored.
    pub fn decide(&mut self, decision: Decision, round: u32) {
        if !self.decision.is_decided() && decision.is_decided() {
            self.decision = decision;
            self.round_of_decision = Some(round);
        }
    }
}

/// Perceptions received about one transaction in one round, paired with
/// the tracked reliability of their senders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptionBatch {
    pub subject: TxId,
    pub round: u32,
    pub entries: Vec<(Verdict, f64)>,
}

impl PerceptionBatch {
    pub fn update(&self, psi_prev: f64, beta: f64) -> f64 {
        update_intermediate(psi_prev, &self.entries, beta)
    }
}

/// Peer actual beliefs from the previous round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrimSet {
    pub received: Vec<(ValidatorId, f64)>,
    pub f: usize,
}

/// Probability that an invalid transaction conflicts with a given one of
/// its `w` witnesses: `2^(w-1) / (2^w - 1)`.
pub fn beta(witness_size: usize) -> Result<f64> {
    if witness_size < 1 {
        return Err(Error::EmptyWitnessSet);
    }
    // 2^(w-1) / (2^w - 1) == 1 / (2 - 2^(1-w)); the second form does not
    // overflow for large w.
    let w = i32::try_from(witness_size).unwrap_or(i32::MAX);
    Ok(1.0 / (2.0 - 2f64.powi(1 - w.min(1100))))
}

fn likelihood_valid(verdict: Verdict, rho: f64) -> f64 {
    match verdict {
        Verdict::Clear => rho,
        Verdict::Conflict => 1.0 - rho,
    }
}

fn likelihood_invalid(verdict: Verdict, rho: f64, beta: f64) -> f64 {
    match verdict {
        Verdict::Clear => (1.0 - beta) * rho + beta * (1.0 - rho),
        Verdict::Conflict => beta * rho + (1.0 - beta) * (1.0 - rho),
    }
}

/// Log-likelihoods of a perception batch under validity and invalidity.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LogLikelihood {
    pub valid: f64,
    pub invalid: f64,
    pub count: usize,
}

impl LogLikelihood {
    pub fn from_entries(entries: &[(Verdict, f64)], beta: f64) -> Self {
        let mut acc = Self::default();
        for &(verdict, rho) in entries {
            acc.push(verdict, rho, beta);
        }
        acc
    }

    pub fn push(&mut self, verdict: Verdict, rho: f64, beta: f64) {
        let rho = rho.clamp(0.0, 1.0);
        self.valid += likelihood_valid(verdict, rho).ln();
        self.invalid += likelihood_invalid(verdict, rho, beta).ln();
        self.count += 1;
    }

    /// Posterior validity given prior `psi_prev`. Priors of exactly 0 or 1
    /// are absorbing, and so is an empty batch.
    pub fn posterior(&self, psi_prev: f64) -> f64 {
        if self.count == 0 || psi_prev <= 0.0 || psi_prev >= 1.0 {
            return psi_prev.clamp(0.0, 1.0);
        }
        match (self.valid == f64::NEG_INFINITY, self.invalid == f64::NEG_INFINITY) {
            (true, true) => psi_prev,
            (true, false) => 0.0,
            (false, true) => 1.0,
            (false, false) => {
                let z = (self.invalid + (1.0 - psi_prev).ln()) - (self.valid + psi_prev.ln());
                crate::classifier::sigmoid(-z)
            }
        }
    }
}

/// Bayesian update of the intermediate belief, evaluated in log space.
pub fn update_intermediate(psi_prev: f64, entries: &[(Verdict, f64)], beta: f64) -> f64 {
    LogLikelihood::from_entries(entries, beta).posterior(psi_prev)
}

fn by_value_then_source(a: &(ValidatorId, f64), b: &(ValidatorId, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

/// Trimmed-min update of the actual belief.
pub fn update_actual(own_p_prev: f64, trims: &TrimSet, psi_now: f64) -> Result<f64> {
    let needed = 2 * trims.f + 1;
    if trims.received.len() < needed {
        return Err(Error::TooFewBeliefs { needed, got: trims.received.len() });
    }
    let mut sorted = trims.received.clone();
    sorted.sort_by(by_value_then_source);
    let survivors = &sorted[trims.f..sorted.len() - trims.f];
    Ok(survivors
        .iter()
        .map(|&(_, p)| p)
        .fold(own_p_prev.min(psi_now), f64::min))
}

/// The `k`-th smallest (0-based) value among `sorted` without the entry of
/// `skip`, plus `pad_count` extra copies of `pad`. With `k = f` this is the
/// smallest belief surviving the trim in [`update_actual`], computed without
/// re-sorting per receiver.
pub fn kth_with_padding(
    sorted: &[(ValidatorId, f64)],
    skip: ValidatorId,
    pad: f64,
    pad_count: usize,
    k: usize,
) -> Option<f64> {
    let mut remaining = k;
    let mut pads = pad_count;
    for &(id, v) in sorted {
        if id == skip {
            continue;
        }
        while pads > 0 && pad <= v {
            if remaining == 0 {
                return Some(pad);
            }
            remaining -= 1;
            pads -= 1;
        }
        if remaining == 0 {
            return Some(v);
        }
        remaining -= 1;
    }
    (remaining < pads).then_some(pad)
}

/// Pins the actual belief to zero when the validator saw the conflict itself.
pub fn apply_hard_zero(mut state: BeliefState, own_verdict: Option<Verdict>) -> BeliefState {
    if own_verdict == Some(Verdict::Conflict) {
        state.p = 0.0;
        state.hard_zero = true;
    }
    state
}

pub fn local_decision(p: f64, t: &Thresholds) -> Decision {
    if p >= t.accept {
        Decision::Accept
    } else if p <= t.reject {
        Decision::Reject
    } else {
        Decision::Undecided
    }
}

/// Decides for whichever threshold `p` is closer to; an exact tie rejects.
pub fn forced_decision(p: f64, t: &Thresholds) -> Decision {
    if t.accept - p < p - t.reject {
        Decision::Accept
    } else {
        Decision::Reject
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const T: Thresholds = Thresholds { accept: 0.75, reject: 0.25 };

    fn trims(values: &[f64], f: usize) -> TrimSet {
        TrimSet {
            received: values.iter().enumerate().map(|(i, &p)| (ValidatorId(i as u32), p)).collect(),
            f,
        }
    }

    #[test]
    fn beta_small_values() {
        assert_eq!(beta(1).unwrap(), 1.0);
        assert_eq!(beta(2).unwrap(), 2.0 / 3.0);
        assert_eq!(beta(3).unwrap(), 4.0 / 7.0);
        assert!(beta(0).is_err());
        assert_eq!(beta(5000).unwrap(), 0.5);
    }

    #[test]
    fn single_clear_perception() {
        let psi = update_intermediate(0.5, &[(Verdict::Clear, 0.8)], 0.5);
        assert!((psi - 0.4 / 0.65).abs() < 1e-15, "{psi}");
    }

    #[test]
    fn extremes_are_absorbing() {
        let batch = [(Verdict::Conflict, 0.9), (Verdict::Clear, 0.2)];
        assert_eq!(update_intermediate(1.0, &batch, 0.6), 1.0);
        assert_eq!(update_intermediate(0.0, &batch, 0.6), 0.0);
    }

    #[test]
    fn empty_batch_is_identity() {
        for psi in [0.0, 0.13, 0.5, 0.99, 1.0] {
            assert_eq!(update_intermediate(psi, &[], 0.7), psi);
        }
    }

    #[test]
    fn certain_conflict_from_certain_source() {
        let psi = update_intermediate(0.8, &[(Verdict::Conflict, 1.0)], beta(1).unwrap());
        assert_eq!(psi, 0.0);
    }

    #[test]
    fn long_batches_do_not_underflow() {
        let batch = vec![(Verdict::Clear, 0.9); 5000];
        let psi = update_intermediate(0.3, &batch, 0.6);
        assert!(psi > 0.99 && psi <= 1.0);
        let batch = vec![(Verdict::Conflict, 0.9); 5000];
        assert!(update_intermediate(0.7, &batch, 0.6) < 1e-6);
    }

    #[test]
    fn trimmed_min_hand_trace() {
        let p = update_actual(0.5, &trims(&[0.9, 0.2, 0.6], 1), 0.7).unwrap();
        assert_eq!(p, 0.5);
        let p = update_actual(0.9, &trims(&[0.4], 0), 0.9).unwrap();
        assert_eq!(p, 0.4);
    }

    #[test]
    fn padded_order_statistic() {
        let sorted: Vec<(ValidatorId, f64)> =
            [(3, 0.1), (0, 0.4), (2, 0.4), (1, 0.9)].iter().map(|&(i, v)| (ValidatorId(i), v)).collect();
        // without validator 2, plus two copies of 0.5: [0.1, 0.4, 0.5, 0.5, 0.9]
        let got: Vec<f64> = (0..5)
            .map(|k| kth_with_padding(&sorted, ValidatorId(2), 0.5, 2, k).unwrap())
            .collect();
        assert_eq!(got, vec![0.1, 0.4, 0.5, 0.5, 0.9]);
        assert_eq!(kth_with_padding(&sorted, ValidatorId(2), 0.5, 2, 5), None);
        assert_eq!(kth_with_padding(&sorted, ValidatorId(9), 0.0, 0, 3), Some(0.9));
    }

    #[test]
    fn trimming_needs_enough_values() {
        assert!(matches!(
            update_actual(0.5, &trims(&[0.1, 0.2], 1), 0.5),
            Err(Error::TooFewBeliefs { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn extreme_liars_are_trimmed() {
        // 2 liars broadcasting 0 in a 6-member community with f = 2
        let p = update_actual(0.6, &trims(&[0.0, 0.0, 0.6, 0.6, 0.6], 2), 0.9).unwrap();
        assert_eq!(p, 0.6);
    }

    #[test]
    fn hard_zero_latches() {
        let s = apply_hard_zero(BeliefState::new(0.7), Some(Verdict::Conflict));
        assert_eq!(s.p, 0.0);
        assert!(s.hard_zero);
        let untouched = BeliefState::new(0.7);
        assert_eq!(apply_hard_zero(untouched, Some(Verdict::Clear)), untouched);
        assert_eq!(apply_hard_zero(untouched, None), untouched);

        let mut s = s;
        for r in 0..5 {
            s.psi = update_intermediate(s.psi, &[(Verdict::Clear, 0.95)], 0.6);
            s.p = update_actual(s.p, &trims(&[0.9, 0.8, 1.0], 1), s.psi).unwrap();
            assert_eq!(s.p, 0.0, "round {r}");
        }
    }

    #[test]
    fn local_decisions() {
        assert_eq!(local_decision(0.8, &T), Decision::Accept);
        assert_eq!(local_decision(0.75, &T), Decision::Accept);
        assert_eq!(local_decision(0.25, &T), Decision::Reject);
        assert_eq!(local_decision(0.5, &T), Decision::Undecided);
    }

    #[test]
    fn forced_decisions() {
        assert_eq!(forced_decision(0.6, &T), Decision::Accept);
        assert_eq!(forced_decision(0.3, &T), Decision::Reject);
        assert_eq!(forced_decision(0.5, &T), Decision::Reject);
    }

    #[test]
    fn decisions_are_immutable() {
        let mut s = BeliefState::new(0.5);
        s.decide(Decision::Undecided, 1);
        assert_eq!(s.round_of_decision, None);
        s.decide(Decision::Accept, 2);
        s.decide(Decision::Reject, 3);
        assert_eq!(s.decision, Decision::Accept);
        assert_eq!(s.round_of_decision, Some(2));
    }
}
