use thiserror::Error;

use crate::ledger::{TxId, ValidatorId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown transaction {0}")]
    UnknownTransaction(TxId),

    #[error("transaction {witness} is not a witness of {subject}")]
    NotAWitness { subject: TxId, witness: TxId },

    #[error("validator {validator} does not custody witness {witness}")]
    NotACustodian { validator: ValidatorId, witness: TxId },

    #[error("transaction {0} is not confirmed")]
    NotConfirmed(TxId),

    #[error("witness set size must be at least 1")]
    EmptyWitnessSet,

    #[error("trimming needs at least {needed} received beliefs, got {got}")]
    TooFewBeliefs { needed: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("malformed record at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }

    /// Process exit code for this error: 2 for internal invariant
    /// violations, 1 for everything a user can fix.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) => 2,
            _ => 1,
        }
    }
}
