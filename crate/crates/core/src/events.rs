//! Line-delimited JSON event log written by a run and read back by the
//! metrics module.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::consensus::{ConsensusOutcome, EpochReport};
use crate::error::{Error, Result};
use crate::ledger::{TxId, UserId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Start {
        seed: u64,
        validators: usize,
        f: usize,
        lambda: usize,
        dishonest: usize,
        round_time_ms: u64,
        link_latency_ms: u64,
        settlement_ms: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        heldout_accuracy: Option<f64>,
    },
    Submit {
        tx: TxId,
        time_ms: u64,
        user: UserId,
        valid: bool,
        witness_size: u32,
        replay: bool,
    },
    Attack {
        tx: TxId,
        replay_of: TxId,
        time_ms: u64,
    },
    Decision(ConsensusOutcome),
    Epoch {
        epoch: u64,
        start_ms: u64,
        end_ms: u64,
        rounds: u32,
        batch: usize,
        withheld_messages: usize,
        retrained: usize,
    },
    End {
        time_ms: u64,
        epochs: u64,
        submitted: usize,
        decided: usize,
        backlog: usize,
    },
}

impl Event {
    pub fn epoch(report: &EpochReport) -> Self {
        Event::Epoch {
            epoch: report.epoch,
            start_ms: report.start_ms,
            end_ms: report.end_ms,
            rounds: report.rounds,
            batch: report.batch,
            withheld_messages: report.withheld_messages,
            retrained: report.retrained,
        }
    }
}

pub fn write_events<W: Write>(mut out: W, events: &[Event]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn events_to_string(events: &[Event]) -> Result<String> {
    let mut buf = Vec::new();
    write_events(&mut buf, events)?;
    String::from_utf8(buf).map_err(|e| Error::invariant(e.to_string()))
}

/// Parses a log; blank lines are skipped, anything else must be an event.
pub fn read_events<R: BufRead>(input: R) -> Result<Vec<Event>> {
    let mut events = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        events.push(event);
    }
    Ok(events)
}
