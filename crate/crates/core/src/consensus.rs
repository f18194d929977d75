//! Epoch orchestration: community assignment, the four-stage round, the
//! collective decision and end-of-epoch settlement.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{adversary_perceive, adversary_vote_and_belief, withhold_filter, AdversaryConfig};
use crate::belief::{
    apply_hard_zero, beta, forced_decision, kth_with_padding, local_decision, BeliefState, Decision, LogLikelihood,
};
use crate::classifier::{retrain_epoch_hook, thresholds, ThresholdParams, Thresholds, TrainOptions, TrainingExample, WeightVector};
use crate::error::{Error, Result};
use crate::ledger::{honest_perceive, Ledger, Origin, TxId, UserId, ValidatorId};
use crate::net::{deliver, Clock, NetConfig, Outbox, Payload};
use crate::reliability::{
    update_user_reliability, update_validator_reliability, AgreementRule, PairVerdictBook, ReliabilityParams,
};
use crate::workload::UserProfile;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Number of validators.
    pub m: usize,
    /// Byzantine bound; also the trim count.
    pub f: usize,
    pub thresholds: ThresholdParams,
    pub reliability: ReliabilityParams,
    /// Retraining cadence in epochs.
    pub cadence: u64,
    pub agreement: AgreementRule,
    pub train: TrainOptions,
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::config("protocol.m must be >= 2"));
        }
        if self.f > self.m / 2 - 1 {
            return Err(Error::config(format!(
                "protocol.f = {} exceeds floor(M/2) - 1 = {} for M = {}",
                self.f,
                self.m / 2 - 1,
                self.m
            )));
        }
        if self.cadence < 1 {
            return Err(Error::config("protocol.cadence must be >= 1"));
        }
        self.thresholds.validate()?;
        self.reliability.validate()
    }

    pub fn lambda(&self) -> usize {
        lambda(self.m, self.f)
    }
}

/// Number of communities per epoch, `floor(M / (2f + 2))`.
pub fn lambda(m: usize, f: usize) -> usize {
    m / (2 * f + 2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochPlan {
    /// 1-based epoch number.
    pub epoch_index: u64,
    pub batch: Vec<TxId>,
    /// Community of `batch[i]`.
    pub communities: Vec<Vec<ValidatorId>>,
    pub lambda: usize,
    pub f: usize,
    pub max_rounds: u32,
}

impl EpochPlan {
    /// Validators that sit in no community this epoch.
    pub fn idle(&self, m: usize) -> Vec<ValidatorId> {
        let mut busy = vec![false; m];
        for c in &self.communities {
            for v in c {
                busy[v.index()] = true;
            }
        }
        (0..m as u32).map(ValidatorId).filter(|v| !busy[v.index()]).collect()
    }
}

/// Shuffles the validators and deals them into one community per batch
/// transaction. A full batch partitions the whole validator set, with the
/// remainder dealt round-robin; a partial batch uses the full-batch
/// community size and leaves the rest idle.
pub fn assign_communities<R: Rng + ?Sized>(
    m: usize,
    f: usize,
    batch: Vec<TxId>,
    ledger: &Ledger,
    epoch_index: u64,
    rng: &mut R,
) -> Result<EpochPlan> {
    if m < 2 * f + 2 {
        return Err(Error::config(format!("{m} validators cannot form a community of 2f + 2 = {}", 2 * f + 2)));
    }
    let lambda = lambda(m, f);
    if batch.len() > lambda {
        return Err(Error::invariant(format!("batch of {} exceeds lambda = {lambda}", batch.len())));
    }
    let mut max_rounds = 0u32;
    for &id in &batch {
        max_rounds = max_rounds.max(ledger.get(id)?.witness_size() as u32);
    }

    let mut order: Vec<ValidatorId> = (0..m as u32).map(ValidatorId).collect();
    order.shuffle(rng);
    let size = m / lambda;
    let k = batch.len();
    let mut communities: Vec<Vec<ValidatorId>> = (0..k).map(|i| order[i * size..(i + 1) * size].to_vec()).collect();
    if k == lambda {
        for (j, &v) in order[k * size..].iter().enumerate() {
            communities[j % k].push(v);
        }
    }
    for c in &mut communities {
        c.sort_unstable();
    }
    Ok(EpochPlan { epoch_index, batch, communities, lambda, f, max_rounds })
}

/// A side wins with strictly more than half the community.
pub fn collective_decision(votes: &[Decision], community_size: usize) -> Option<bool> {
    let (accepts, rejects) = tally(votes);
    let half = community_size / 2;
    if accepts > half {
        Some(true)
    } else if rejects > half {
        Some(false)
    } else {
        None
    }
}

fn tally(votes: &[Decision]) -> (usize, usize) {
    let accepts = votes.iter().filter(|&&v| v == Decision::Accept).count();
    let rejects = votes.iter().filter(|&&v| v == Decision::Reject).count();
    (accepts, rejects)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidatorState {
    pub index: ValidatorId,
    pub honest: bool,
    pub reliability: f64,
    pub weights: WeightVector,
    /// Private witness orderings for the current batch, by batch position.
    #[serde(skip)]
    pub permutations: Vec<Vec<TxId>>,
    /// Decided transactions this validator judged since its last retrain.
    #[serde(skip)]
    pub window: Vec<TrainingExample>,
}

impl ValidatorState {
    pub fn new(index: ValidatorId, honest: bool, reliability: f64, weights: WeightVector) -> Self {
        Self { index, honest, reliability, weights, permutations: Vec::new(), window: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusOutcome {
    pub tx: TxId,
    pub accepted: bool,
    pub deciding_round: u32,
    pub accepts: u32,
    pub rejects: u32,
    pub community_size: u32,
    pub decided_by_force: bool,
    /// No strict majority even after forcing; resolved by plurality.
    pub fallback: bool,
    pub truth_valid: bool,
    pub replay: bool,
    pub witness_size: u32,
    /// Submitter reliability used as the initial belief.
    pub prior: f64,
    pub submit_time: u64,
    pub epoch_start: u64,
    pub decided_at: u64,
    pub latency_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: u64,
    pub start_ms: u64,
    pub end_ms: u64,
    pub rounds: u32,
    pub batch: usize,
    pub withheld_messages: usize,
    pub retrained: usize,
    pub outcomes: Vec<ConsensusOutcome>,
}

/// Per-transaction working state inside an epoch.
struct Slot {
    id: TxId,
    truth_valid: bool,
    replay: bool,
    submitter: UserId,
    submit_time: u64,
    prior: f64,
    attributes: crate::ledger::AttributeVector,
    w: usize,
    beta: f64,
    members: Vec<ValidatorId>,
    states: Vec<BeliefState>,
    thresholds: Vec<Thresholds>,
    outcome: Option<ConsensusOutcome>,
}

impl Slot {
    fn active(&self) -> bool {
        self.outcome.is_none()
    }
}

/// Whole-network simulation state.
#[derive(Clone, Debug)]
pub struct Network {
    pub params: ProtocolParams,
    pub net: NetConfig,
    pub adversary: AdversaryConfig,
    pub validators: Vec<ValidatorState>,
    pub users: Vec<UserProfile>,
    pub ledger: Ledger,
    pub clock: Clock,
    /// Epochs completed so far.
    pub epoch: u64,
}

impl Network {
    fn is_liar(&self, v: ValidatorId) -> bool {
        !self.validators[v.index()].honest && !self.adversary.withholds()
    }

    /// Runs one epoch over up to lambda transactions taken from the front of
    /// `queue`.
    pub fn run_epoch<R: Rng + ?Sized>(&mut self, queue: &mut std::collections::VecDeque<TxId>, rng: &mut R) -> Result<EpochReport> {
        let epoch_index = self.epoch + 1;
        let start = self.clock.now();
        let take = queue.len().min(self.params.lambda());
        let batch: Vec<TxId> = queue.drain(..take).collect();
        let plan = assign_communities(self.params.m, self.params.f, batch, &self.ledger, epoch_index, rng)?;

        if plan.batch.is_empty() {
            self.clock.advance_by(self.net.round_time_ms + self.net.settlement_ms);
            self.epoch = epoch_index;
            return Ok(EpochReport {
                epoch: epoch_index,
                start_ms: start,
                end_ms: self.clock.now(),
                rounds: 0,
                batch: 0,
                withheld_messages: 0,
                retrained: 0,
                outcomes: Vec::new(),
            });
        }

        let mut slots = self.build_slots(&plan)?;
        for v in &mut self.validators {
            v.permutations = slots
                .iter()
                .map(|s| {
                    let mut p = self.ledger.get(s.id).map(|t| t.witness_ids.clone()).unwrap_or_default();
                    p.shuffle(rng);
                    p
                })
                .collect();
        }

        let mut book = PairVerdictBook::new();
        let mut withheld = 0usize;
        let mut rounds = 0u32;
        for r in 1..=plan.max_rounds {
            rounds = r;
            withheld += self.run_round(&mut slots, &mut book, r, start, rng)?;
            if slots.iter().all(|s| !s.active()) {
                break;
            }
        }
        if let Some(s) = slots.iter().find(|s| s.active()) {
            return Err(Error::invariant(format!("{} undecided after round {}", s.id, s.w)));
        }

        let retrained = self.settle(&slots, &book, epoch_index);
        self.clock.advance_to(start + rounds as u64 * self.net.round_time_ms);
        self.clock.advance_by(self.net.settlement_ms);
        self.epoch = epoch_index;
        for v in &mut self.validators {
            v.permutations.clear();
        }
        Ok(EpochReport {
            epoch: epoch_index,
            start_ms: start,
            end_ms: self.clock.now(),
            rounds,
            batch: slots.len(),
            withheld_messages: withheld,
            retrained,
            outcomes: slots.into_iter().filter_map(|s| s.outcome).collect(),
        })
    }

    fn build_slots(&self, plan: &EpochPlan) -> Result<Vec<Slot>> {
        plan.batch
            .iter()
            .zip(&plan.communities)
            .map(|(&id, members)| {
                let tx = self.ledger.get(id)?;
                let prior = self.users.get(tx.submitter.index()).map_or(0.5, |u| u.reliability);
                let thresholds = members
                    .iter()
                    .map(|v| thresholds(&tx.attributes, &self.validators[v.index()].weights, &self.params.thresholds))
                    .collect();
                Ok(Slot {
                    id,
                    truth_valid: tx.truth_valid,
                    replay: matches!(tx.origin, Origin::Replay { .. }),
                    submitter: tx.submitter,
                    submit_time: tx.submit_time,
                    prior,
                    attributes: tx.attributes,
                    w: tx.witness_size(),
                    beta: beta(tx.witness_size())?,
                    members: members.clone(),
                    states: vec![BeliefState::new(prior); members.len()],
                    thresholds,
                    outcome: None,
                })
            })
            .collect()
    }

    /// Stages 1 to 4 of round `r`. Returns the number of withheld messages.
    fn run_round<R: Rng + ?Sized>(
        &mut self,
        slots: &mut [Slot],
        book: &mut PairVerdictBook,
        r: u32,
        epoch_start: u64,
        rng: &mut R,
    ) -> Result<usize> {
        let t0 = epoch_start + (r as u64 - 1) * self.net.round_time_ms;
        let latency = self.net.link_latency_ms;
        let honest: Vec<bool> = self.validators.iter().map(|v| v.honest).collect();
        let index_of: BTreeMap<TxId, usize> = slots.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
        let mut withheld = 0usize;

        // Stage 1: perceptions to every community, actual beliefs inside each.
        let mut out = Outbox::new();
        for v in 0..self.validators.len() {
            let vid = ValidatorId(v as u32);
            for (b, slot) in slots.iter().enumerate() {
                if r as usize > slot.w {
                    continue;
                }
                let witness = self.validators[v].permutations[b][r as usize - 1];
                if !self.ledger.is_custodian(vid, witness) {
                    continue;
                }
                let perception = if self.is_liar(vid) {
                    adversary_perceive(&self.ledger, vid, slot.id, witness, r)?
                } else {
                    honest_perceive(&self.ledger, vid, slot.id, witness, r)?
                };
                out.send(t0, vid, Payload::Perception(perception));
            }
        }
        for slot in slots.iter().filter(|s| s.active()) {
            for (i, &k) in slot.members.iter().enumerate() {
                let p = if self.is_liar(k) {
                    adversary_vote_and_belief(slot.truth_valid, self.adversary.belief_policy, rng).1
                } else {
                    slot.states[i].p
                };
                out.send(t0, k, Payload::Belief { subject: slot.id, p });
            }
        }
        let mut messages = out.take();
        if self.adversary.withholds() {
            let (kept, dropped) = withhold_filter(messages, &honest);
            messages = kept;
            withheld += dropped;
        }
        let (delivered, clock) = deliver(messages, &self.net, self.clock);
        self.clock = clock;

        let mut likelihoods = vec![LogLikelihood::default(); slots.len()];
        let mut beliefs: Vec<Vec<(ValidatorId, f64)>> = vec![Vec::new(); slots.len()];
        for d in &delivered {
            match d.message.payload {
                Payload::Perception(q) => {
                    book.record(q.subject, q.witness, q.source, q.verdict);
                    let b = index_of[&q.subject];
                    let rho = self.validators[q.source.index()].reliability;
                    likelihoods[b].push(q.verdict, rho, slots[b].beta);
                }
                Payload::Belief { subject, p } => beliefs[index_of[&subject]].push((d.message.sender, p)),
                _ => {}
            }
        }

        // Stage 2: belief updates and local decisions.
        let f = self.params.f;
        for (b, slot) in slots.iter_mut().enumerate().filter(|(_, s)| s.active()) {
            let mut received = std::mem::take(&mut beliefs[b]);
            received.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let peers = slot.members.len() - 1;
            for i in 0..slot.members.len() {
                let k = slot.members[i];
                if !self.validators[k.index()].honest {
                    if self.is_liar(k) {
                        slot.states[i].decide(Decision::from_validity(!slot.truth_valid), r);
                    }
                    continue;
                }
                let state = &mut slot.states[i];
                let heard = received.iter().filter(|(s, _)| *s != k).count();
                let floor = kth_with_padding(&received, k, state.p, peers - heard, f)
                    .ok_or_else(|| Error::invariant(format!("{k} heard too few beliefs on {}", slot.id)))?;
                state.psi = likelihoods[b].posterior(state.psi);
                state.p = state.p.min(state.psi).min(floor);
                let own_witness = self.validators[k.index()].permutations[b][r as usize - 1];
                let own = self
                    .ledger
                    .is_custodian(k, own_witness)
                    .then(|| honest_perceive(&self.ledger, k, slot.id, own_witness, r).map(|q| q.verdict))
                    .transpose()?;
                *state = apply_hard_zero(*state, own);
                if !state.decision.is_decided() {
                    let d = local_decision(state.p, &slot.thresholds[i]);
                    state.decide(d, r);
                }
            }
        }

        // Stage 3: votes, collective decision, forcing at the last round.
        let t_vote = t0 + latency;
        let mut decided_now: Vec<usize> = Vec::new();
        for (b, slot) in slots.iter_mut().enumerate().filter(|(_, s)| s.active()) {
            let votes = self.cast_votes(slot, t_vote, &honest, &mut withheld);
            let mut verdict = collective_decision(&votes, slot.members.len()).map(|a| (a, false, false));
            let mut votes = votes;
            if verdict.is_none() && r as usize == slot.w {
                for i in 0..slot.members.len() {
                    let k = slot.members[i];
                    if self.validators[k.index()].honest && !slot.states[i].decision.is_decided() {
                        let d = forced_decision(slot.states[i].p, &slot.thresholds[i]);
                        slot.states[i].decide(d, r);
                    }
                }
                votes = self.cast_votes(slot, t_vote, &honest, &mut withheld);
                verdict = Some(match collective_decision(&votes, slot.members.len()) {
                    Some(a) => (a, true, false),
                    None => {
                        let (acc, rej) = tally(&votes);
                        (acc > rej, true, true)
                    }
                });
            }
            if let Some((accepted, forced, fallback)) = verdict {
                let (accepts, rejects) = tally(&votes);
                let decided_at = t0 + self.net.round_time_ms;
                slot.outcome = Some(ConsensusOutcome {
                    tx: slot.id,
                    accepted,
                    deciding_round: r,
                    accepts: accepts as u32,
                    rejects: rejects as u32,
                    community_size: slot.members.len() as u32,
                    decided_by_force: forced,
                    fallback,
                    truth_valid: slot.truth_valid,
                    replay: slot.replay,
                    witness_size: slot.w as u32,
                    prior: slot.prior,
                    submit_time: slot.submit_time,
                    epoch_start,
                    decided_at,
                    latency_ms: decided_at.saturating_sub(slot.submit_time),
                });
                decided_now.push(b);
            }
        }

        // Stage 4: broadcast and commit.
        let mut out = Outbox::new();
        for &b in &decided_now {
            let slot = &slots[b];
            let accepted = slot.outcome.as_ref().is_some_and(|o| o.accepted);
            for &k in &slot.members {
                out.send(t0 + 2 * latency, k, Payload::Final { subject: slot.id, accepted });
            }
        }
        let mut finals = out.take();
        if self.adversary.withholds() {
            let (kept, dropped) = withhold_filter(finals, &honest);
            finals = kept;
            withheld += dropped;
        }
        let (_, clock) = deliver(finals, &self.net, self.clock);
        self.clock = clock;
        for &b in &decided_now {
            let slot = &slots[b];
            if slot.outcome.as_ref().is_some_and(|o| o.accepted) {
                self.ledger.confirm(slot.id, slot.members.clone())?;
            }
        }
        self.clock.advance_to(t0 + self.net.round_time_ms);
        Ok(withheld)
    }

    /// Votes of the decided members that actually reach the community.
    fn cast_votes(&self, slot: &Slot, t: u64, honest: &[bool], withheld: &mut usize) -> Vec<Decision> {
        let mut out = Outbox::new();
        for (i, &k) in slot.members.iter().enumerate() {
            let d = slot.states[i].decision;
            if d.is_decided() {
                out.send(t, k, Payload::Vote { subject: slot.id, decision: d });
            }
        }
        let mut messages = out.take();
        if self.adversary.withholds() {
            let (kept, dropped) = withhold_filter(messages, honest);
            messages = kept;
            *withheld += dropped;
        }
        messages
            .into_iter()
            .filter_map(|m| match m.payload {
                Payload::Vote { decision, .. } => Some(decision),
                _ => None,
            })
            .collect()
    }

    /// Reliability settlement, training windows and retraining. Returns the
    /// number of validators whose weights were refit.
    fn settle(&mut self, slots: &[Slot], book: &PairVerdictBook, epoch_index: u64) -> usize {
        for (v, sent) in book.settle() {
            let state = &mut self.validators[v.index()];
            state.reliability =
                update_validator_reliability(state.reliability, &sent, &self.params.reliability, self.params.agreement);
        }

        let mut by_user: BTreeMap<UserId, Vec<bool>> = BTreeMap::new();
        for slot in slots {
            let accepted = slot.outcome.as_ref().is_some_and(|o| o.accepted);
            by_user.entry(slot.submitter).or_default().push(accepted);
            for &k in &slot.members {
                self.validators[k.index()]
                    .window
                    .push(TrainingExample { attributes: slot.attributes, label: accepted });
            }
        }
        for (u, outcomes) in by_user {
            if let Some(user) = self.users.get_mut(u.index()) {
                user.reliability = update_user_reliability(user.reliability, &outcomes, &self.params.reliability);
            }
        }

        if !epoch_index.is_multiple_of(self.params.cadence) {
            return 0;
        }
        let cadence = self.params.cadence;
        let opts = self.params.train;
        self.validators
            .par_iter_mut()
            .map(|v| {
                let refit = if v.honest { retrain_epoch_hook(&v.window, epoch_index, cadence, &opts) } else { None };
                v.window.clear();
                match refit {
                    Some(w) => {
                        v.weights = w;
                        1
                    }
                    None => 0,
                }
            })
            .sum()
    }
}
