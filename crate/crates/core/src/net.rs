//! Simulated message layer: a millisecond clock and constant-latency,
//! deterministically ordered delivery.

use serde::{Deserialize, Serialize};

use crate::belief::Decision;
use crate::error::{Error, Result};
use crate::ledger::{Perception, TxId, ValidatorId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub link_latency_ms: u64,
    pub round_time_ms: u64,
    /// Clock advance for end-of-epoch settlement.
    #[serde(default = "default_settlement")]
    pub settlement_ms: u64,
    /// Informational only; messages always fit in the round budget.
    #[serde(default = "default_bandwidth")]
    pub bandwidth_mbps: f64,
}

fn default_settlement() -> u64 {
    100
}

fn default_bandwidth() -> f64 {
    20.0
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            link_latency_ms: 100,
            round_time_ms: 500,
            settlement_ms: default_settlement(),
            bandwidth_mbps: default_bandwidth(),
        }
    }
}

impl NetConfig {
    /// Number of message hops inside one round: perceptions and beliefs,
    /// votes, final broadcast.
    pub const HOPS_PER_ROUND: u64 = 3;

    pub fn validate(&self) -> Result<()> {
        if self.round_time_ms == 0 {
            return Err(Error::config("net.round_time_ms must be > 0"));
        }
        if self.link_latency_ms * Self::HOPS_PER_ROUND > self.round_time_ms {
            return Err(Error::config(format!(
                "net.link_latency_ms must leave room for {} hops inside net.round_time_ms",
                Self::HOPS_PER_ROUND
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Clock {
    now_ms: u64,
}

impl Clock {
    pub fn at(now_ms: u64) -> Self {
        Self { now_ms }
    }

    pub fn now(&self) -> u64 {
        self.now_ms
    }

    /// Moves forward to `t`; never moves backwards.
    pub fn advance_to(&mut self, t: u64) {
        self.now_ms = self.now_ms.max(t);
    }

    pub fn advance_by(&mut self, dt: u64) {
        self.now_ms += dt;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Perception(Perception),
    Belief { subject: TxId, p: f64 },
    Vote { subject: TxId, decision: Decision },
    Final { subject: TxId, accepted: bool },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub send_time: u64,
    pub sender: ValidatorId,
    pub seq: u64,
    pub payload: Payload,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Delivered {
    pub deliver_time: u64,
    pub message: Message,
}

/// Stamps each message with `send_time + link_latency` and orders the batch
/// by (send time, sender, sequence number). Returns the clock advanced to
/// the last delivery.
pub fn deliver(mut messages: Vec<Message>, config: &NetConfig, clock: Clock) -> (Vec<Delivered>, Clock) {
    messages.sort_by_key(|m| (m.send_time, m.sender, m.seq));
    let mut clock = clock;
    let delivered = messages
        .into_iter()
        .map(|message| {
            let deliver_time = message.send_time + config.link_latency_ms;
            clock.advance_to(deliver_time);
            Delivered { deliver_time, message }
        })
        .collect();
    (delivered, clock)
}

/// Outbox for one hop: collects messages with increasing sequence numbers.
#[derive(Debug, Default)]
pub struct Outbox {
    next_seq: u64,
    pending: Vec<Message>,
}

impl Outbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(&mut self, send_time: u64, sender: ValidatorId, payload: Payload) {
        self.pending.push(Message { send_time, sender, seq: self.next_seq, payload });
        self.next_seq += 1;
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn take(&mut self) -> Vec<Message> {
        std::mem::take(&mut self.pending)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vote(sender: u32, seq: u64, t: u64) -> Message {
        Message {
            send_time: t,
            sender: ValidatorId(sender),
            seq,
            payload: Payload::Vote { subject: TxId(1), decision: Decision::Accept },
        }
    }

    #[test]
    fn constant_latency() {
        let cfg = NetConfig::default();
        let msgs = vec![vote(2, 0, 0), vote(0, 1, 0), vote(1, 2, 0)];
        let (out, clock) = deliver(msgs, &cfg, Clock::at(0));
        assert!(out.iter().all(|d| d.deliver_time == 100));
        assert_eq!(clock.now(), 100);
        let senders: Vec<u32> = out.iter().map(|d| d.message.sender.0).collect();
        assert_eq!(senders, vec![0, 1, 2]);
    }

    #[test]
    fn ordering_is_independent_of_input_order() {
        let cfg = NetConfig::default();
        let a = vec![vote(3, 5, 10), vote(1, 2, 0), vote(1, 1, 0), vote(0, 9, 10)];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(deliver(a, &cfg, Clock::at(0)).0, deliver(b, &cfg, Clock::at(0)).0);
    }

    #[test]
    fn clock_is_monotone() {
        let mut c = Clock::at(500);
        c.advance_to(100);
        assert_eq!(c.now(), 500);
        c.advance_by(500);
        assert_eq!(c.now(), 1000);
        let (_, c2) = deliver(vec![], &NetConfig::default(), c);
        assert_eq!(c2, c);
    }

    #[test]
    fn validation() {
        assert!(NetConfig::default().validate().is_ok());
        let slow = NetConfig { link_latency_ms: 200, ..Default::default() };
        assert!(slow.validate().is_err());
    }
}
