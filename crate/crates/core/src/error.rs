use std::io;

use thiserror::Error;

use crate::key::PartitionLabel;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("slot {index} out of range for a table of {slots} slots")]
    SlotOutOfRange { index: u64, slots: u64 },

    #[error("unbalanced begin_op/end_op")]
    UnbalancedOp,

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("store is not empty")]
    StoreNotEmpty,

    #[error("label {0} is already stored")]
    DuplicateLabel(PartitionLabel),

    #[error("label {0} is not stored")]
    LabelNotFound(PartitionLabel),

    #[error("table overloaded: {needed} occupied slots would exceed the limit of {limit}")]
    Overload { needed: u64, limit: u64 },

    #[error("capacity of {capacity} elements exceeded")]
    CapacityExceeded { capacity: u64 },

    #[error("key 0 is reserved for the front sentinel")]
    ReservedKey,

    #[error("invalid range [{lo}, {hi}]")]
    InvalidRange { lo: u64, hi: u64 },

    #[error("bad string payload: {0}")]
    BadPayload(String),

    #[error("bad file header: {0}")]
    BadHeader(String),

    #[error("seed mismatch: file was created with seed {stored}, opened with {given}")]
    SeedMismatch { stored: u64, given: u64 },

    #[error("corrupt structure: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
