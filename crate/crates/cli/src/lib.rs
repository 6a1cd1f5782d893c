//! Harness around the `bskiplist` crate: random workloads, unique
//! representation and oracle checks, and Monte Carlo statistics, all
//! reported as CSV.

pub mod app;
pub mod backend;
pub mod error;
pub mod oracle;
pub mod report;
pub mod stats;
pub mod verify;
pub mod workload;

pub use backend::Backend;
pub use error::{CliError, CliResult};
pub use report::CsvRow;
pub use workload::{OpMix, WorkloadSpec};
