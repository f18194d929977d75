//! Transactions, witness sets and the UTXO-style conflict ground truth.
//!
//! Every submitted transaction consumes one or more earlier transactions
//! (its witness set). Whether it conflicts with each witness is fixed when
//! the transaction is generated and stored as an explicit bit per witness;
//! the transaction is valid exactly when none of those bits is set.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TxId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValidatorId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u32);

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

impl fmt::Display for ValidatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

impl TxId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ValidatorId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl UserId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A single validator's verdict on one (transaction, witness) pair.
///
/// On the wire this is the bit `q`: 0 means the pair conflicts, 1 means it
/// does not.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Verdict {
    Conflict,
    Clear,
}

impl Verdict {
    pub fn from_conflict(conflict: bool) -> Self {
        if conflict {
            Verdict::Conflict
        } else {
            Verdict::Clear
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Verdict::Conflict => 0,
            Verdict::Clear => 1,
        }
    }

    pub fn inverted(self) -> Self {
        match self {
            Verdict::Conflict => Verdict::Clear,
            Verdict::Clear => Verdict::Conflict,
        }
    }
}

impl From<Verdict> for u8 {
    fn from(v: Verdict) -> u8 {
        v.bit()
    }
}

impl TryFrom<u8> for Verdict {
    type Error = String;

    fn try_from(bit: u8) -> std::result::Result<Self, String> {
        match bit {
            0 => Ok(Verdict::Conflict),
            1 => Ok(Verdict::Clear),
            other => Err(format!("verdict bit must be 0 or 1, got {other}")),
        }
    }
}

/// The five transaction attributes fed to each validator's classifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeVector {
    /// Inverse of the transferred value, in (0, 10].
    pub inverse_value: f64,
    /// Fee paid to validators, > 0.
    pub fee: f64,
    /// Rounds elapsed since the submitter's previous transaction, 0..=50.
    pub elapsed_rounds: u32,
    /// Inverse of the witness set size.
    pub inverse_witness_size: f64,
    /// Value-weighted reliability of the witness owners, in (0, 1].
    pub sender_reliability: f64,
}

impl AttributeVector {
    pub const DIM: usize = 5;

    pub fn to_array(&self) -> [f64; 5] {
        [
            self.inverse_value,
            self.fee,
            f64::from(self.elapsed_rounds),
            self.inverse_witness_size,
            self.sender_reliability,
        ]
    }

    /// Witness set size implied by `inverse_witness_size`.
    pub fn witness_size(&self) -> usize {
        (1.0 / self.inverse_witness_size).round().max(1.0) as usize
    }

    pub fn in_range(&self) -> bool {
        self.inverse_value > 0.0
            && self.inverse_value <= 10.0
            && self.fee > 0.0
            && self.elapsed_rounds <= 50
            && self.inverse_witness_size > 0.0
            && self.inverse_witness_size <= 1.0
            && self.sender_reliability > 0.0
            && self.sender_reliability <= 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Origin {
    /// Initial ledger content; has no witnesses.
    Genesis,
    Submitted,
    /// Re-submission of an already confirmed transaction.
    Replay { of: TxId },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxId,
    pub submitter: UserId,
    pub witness_ids: Vec<TxId>,
    pub attributes: AttributeVector,
    pub truth_valid: bool,
    pub conflict_bits: Vec<bool>,
    pub value: f64,
    pub fee: f64,
    /// Simulated milliseconds.
    pub submit_time: u64,
    pub origin: Origin,
}

impl Transaction {
    pub fn witness_size(&self) -> usize {
        self.witness_ids.len()
    }

    pub fn is_genesis(&self) -> bool {
        matches!(self.origin, Origin::Genesis)
    }

    pub fn witness_position(&self, witness: TxId) -> Option<usize> {
        self.witness_ids.iter().position(|&w| w == witness)
    }

    /// Checks the structural invariants of a submitted transaction.
    pub fn check(&self) -> Result<()> {
        if self.is_genesis() {
            return Ok(());
        }
        if self.witness_ids.is_empty() {
            return Err(Error::invariant(format!("{} has no witnesses", self.id)));
        }
        if self.witness_ids.len() != self.conflict_bits.len() {
            return Err(Error::invariant(format!(
                "{} has {} witnesses but {} conflict bits",
                self.id,
                self.witness_ids.len(),
                self.conflict_bits.len()
            )));
        }
        if let Some(w) = self.witness_ids.iter().find(|w| **w >= self.id) {
            return Err(Error::invariant(format!("{} references later transaction {w}", self.id)));
        }
        let any_conflict = self.conflict_bits.iter().any(|&b| b);
        if self.truth_valid == any_conflict {
            return Err(Error::invariant(format!(
                "{} validity bit disagrees with its conflict bits",
                self.id
            )));
        }
        Ok(())
    }
}

/// One validator's perception of a (subject, witness) pair in a round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perception {
    pub source: ValidatorId,
    pub subject: TxId,
    pub witness: TxId,
    pub verdict: Verdict,
    pub round: u32,
}

/// Transaction store indexed by id, plus custody and confirmation state.
#[derive(Clone, Debug, Default)]
pub struct Ledger {
    txs: Vec<Transaction>,
    custodians: Vec<Vec<ValidatorId>>,
    confirmed: Vec<bool>,
    confirmed_order: Vec<TxId>,
    spent: BTreeSet<TxId>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }

    pub fn next_id(&self) -> TxId {
        TxId(self.txs.len() as u32)
    }

    /// Adds a witness-less, already confirmed transaction stored by `custodians`.
    pub fn push_genesis(
        &mut self,
        owner: UserId,
        value: f64,
        attributes: AttributeVector,
        mut custodians: Vec<ValidatorId>,
    ) -> TxId {
        let id = self.next_id();
        custodians.sort_unstable();
        custodians.dedup();
        self.txs.push(Transaction {
            id,
            submitter: owner,
            witness_ids: Vec::new(),
            attributes,
            truth_valid: true,
            conflict_bits: Vec::new(),
            value,
            fee: attributes.fee,
            submit_time: 0,
            origin: Origin::Genesis,
        });
        self.custodians.push(custodians);
        self.confirmed.push(true);
        self.confirmed_order.push(id);
        id
    }

    /// Appends a submitted transaction. Its id must be the next free id and
    /// every witness must already be in the store.
    pub fn submit(&mut self, tx: Transaction) -> Result<TxId> {
        if tx.id != self.next_id() {
            return Err(Error::invariant(format!(
                "expected id {}, got {}",
                self.next_id(),
                tx.id
            )));
        }
        tx.check()?;
        if tx.is_genesis() {
            return Err(Error::invariant("genesis entries go through push_genesis"));
        }
        let id = tx.id;
        self.txs.push(tx);
        self.custodians.push(Vec::new());
        self.confirmed.push(false);
        Ok(id)
    }

    pub fn get(&self, id: TxId) -> Result<&Transaction> {
        self.txs.get(id.index()).ok_or(Error::UnknownTransaction(id))
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.txs
    }

    pub fn is_confirmed(&self, id: TxId) -> bool {
        self.confirmed.get(id.index()).copied().unwrap_or(false)
    }

    /// Confirmed transactions in the order they were committed.
    pub fn confirmed_pool(&self) -> &[TxId] {
        &self.confirmed_order
    }

    /// Validators that store `id` (empty until it is confirmed).
    pub fn custodians(&self, id: TxId) -> &[ValidatorId] {
        self.custodians.get(id.index()).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_custodian(&self, validator: ValidatorId, id: TxId) -> bool {
        self.custodians(id).binary_search(&validator).is_ok()
    }

    /// Commits `id` and records the community that now stores it.
    pub fn confirm(&mut self, id: TxId, mut custodians: Vec<ValidatorId>) -> Result<()> {
        let tx = self.get(id)?;
        if self.confirmed[id.index()] {
            return Err(Error::invariant(format!("{id} confirmed twice")));
        }
        let witnesses = tx.witness_ids.clone();
        custodians.sort_unstable();
        custodians.dedup();
        self.custodians[id.index()] = custodians;
        self.confirmed[id.index()] = true;
        self.confirmed_order.push(id);
        self.spent.extend(witnesses);
        Ok(())
    }

    pub fn spent(&self) -> &BTreeSet<TxId> {
        &self.spent
    }
}

/// Whether `ell` conflicts with its witness `j`.
pub fn ground_truth_conflict(ledger: &Ledger, ell: TxId, j: TxId) -> Result<bool> {
    let tx = ledger.get(ell)?;
    let pos = tx
        .witness_position(j)
        .ok_or(Error::NotAWitness { subject: ell, witness: j })?;
    Ok(tx.conflict_bits[pos])
}

/// The truthful perception of a custodian of `j` about the pair (`ell`, `j`).
pub fn honest_perceive(
    ledger: &Ledger,
    validator: ValidatorId,
    ell: TxId,
    j: TxId,
    round: u32,
) -> Result<Perception> {
    let conflict = ground_truth_conflict(ledger, ell, j)?;
    if !ledger.is_custodian(validator, j) {
        return Err(Error::NotACustodian { validator, witness: j });
    }
    Ok(Perception {
        source: validator,
        subject: ell,
        witness: j,
        verdict: Verdict::from_conflict(conflict),
        round,
    })
}

/// Witnesses consumed by confirmed transactions, recomputed from the store.
pub fn spent_set(ledger: &Ledger) -> BTreeSet<TxId> {
    ledger
        .transactions()
        .iter()
        .filter(|tx| ledger.is_confirmed(tx.id))
        .flat_map(|tx| tx.witness_ids.iter().copied())
        .collect()
}

/// Writes one JSON record per line.
pub fn write_records<'a, W: Write>(
    mut out: W,
    txs: impl IntoIterator<Item = &'a Transaction>,
) -> Result<()> {
    for tx in txs {
        serde_json::to_writer(&mut out, tx)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<Transaction>> {
    let mut txs = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tx: Transaction = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        tx.check().map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        txs.push(tx);
    }
    Ok(txs)
}
