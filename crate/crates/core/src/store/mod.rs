//! Persistence and harness: the turk event log, snapshots, replay, workload
//! generation and benchmarking.

pub mod bench;
mod db;
mod log;
mod snapshot;
pub mod workload;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::index::IndexError;
use crate::model::ModelError;
use crate::recommender::RecommenderError;

pub use db::TurkDb;
pub use log::{parse_log, read_log, read_log_prefix, repair_log, EventLog, LogRead};
pub use snapshot::{Snapshot, SNAPSHOT_VERSION};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt log at byte {offset}: {reason}")]
    CorruptLog { offset: u64, reason: String },
    #[error("event for {id} at {at} precedes its last update at {last}")]
    OutOfOrder { id: String, at: i64, last: i64 },
    #[error("bad snapshot: {0}")]
    BadSnapshot(String),
    #[error("bad spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rating(#[from] RecommenderError),
}

impl StoreError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> StoreError {
        let path = path.into();
        move |source| StoreError::Io { path, source }
    }
}
