//! A uniquely represented ordered set over block-accounted external memory.
//!
//! [`BSkipList`] stores a skip list whose level lists are cut into
//! partitions; each partition lives as one contiguous string in a
//! linear-probing slot table ([`allocator`]). With fixed parameters and
//! seeds, the slot image depends only on the current element set, never on
//! the order of the operations that produced it.

pub mod allocator;
pub mod blockstore;
pub mod error;
pub mod hashing;
pub mod key;
pub mod skiplist;

pub use allocator::{rebuild_canonical, Allocator, Lookup, Priority, StoredString};
pub use blockstore::{BlockStore, Digest, FileStore, IoStats, MemStore, SlotRecord};
pub use error::{Error, Result};
pub use hashing::{HashFamily, HashSeeds, LabelHasher, LoadFactor, Params};
pub use key::{ElementKey, Level, PartitionLabel, SlotIndex};
pub use skiplist::{BSkipList, InvariantReport, LookupResult, RangeResult, SearchPath, Violation};
