//! Versioned JSON snapshot of a [`TurkDb`], optionally carrying a trained
//! recommender dump.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{StoreError, TurkDb};
use crate::index::{BigIndex, IndexConfig};
use crate::model::{SpatialTextualObject, Timestamp, TurkEvent};
use crate::recommender::{CarsModel, RatingRecord};

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u32,
    pub captured_at: Timestamp,
    pub config: IndexConfig,
    /// Sorted by id.
    pub objects: Vec<SpatialTextualObject>,
    pub ratings: Vec<RatingRecord>,
    pub responses: Vec<TurkEvent>,
    pub last_at: BTreeMap<String, Timestamp>,
    /// Count of log events folded into this snapshot; replay resumes here.
    pub events_applied: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

impl Snapshot {
    pub fn capture(db: &TurkDb, captured_at: Timestamp, model: Option<&CarsModel>) -> Self {
        Snapshot {
            version: SNAPSHOT_VERSION,
            captured_at,
            config: *db.index.config(),
            objects: db.index.sorted_objects(),
            ratings: db.ratings.clone(),
            responses: db.responses.clone(),
            last_at: db.last_at.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            events_applied: db.applied,
            model: model.map(CarsModel::to_dump),
        }
    }

    pub fn restore(&self) -> Result<TurkDb, StoreError> {
        if self.version != SNAPSHOT_VERSION {
            return Err(StoreError::BadSnapshot(format!(
                "unsupported version {}",
                self.version
            )));
        }
        Ok(TurkDb {
            index: BigIndex::bulk_load(self.config, self.objects.iter().cloned())?,
            ratings: self.ratings.clone(),
            responses: self.responses.clone(),
            last_at: self.last_at.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            applied: self.events_applied,
        })
    }

    pub fn model(&self) -> Result<Option<CarsModel>, StoreError> {
        self.model
            .as_deref()
            .map(CarsModel::from_dump)
            .transpose()
            .map_err(|e| StoreError::BadSnapshot(e.to_string()))
    }

    /// Writes via a temporary file and rename, so a crash never leaves a
    /// half-written snapshot at `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        let file = File::create(&tmp).map_err(StoreError::io(&tmp))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self).map_err(|e| StoreError::BadSnapshot(e.to_string()))?;
        w.write_all(b"\n").map_err(StoreError::io(&tmp))?;
        let file = w
            .into_inner()
            .map_err(|e| StoreError::io(&tmp)(e.into_error()))?;
        file.sync_all().map_err(StoreError::io(&tmp))?;
        fs::rename(&tmp, path).map_err(StoreError::io(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(StoreError::io(path))?;
        let snap: Snapshot = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| StoreError::BadSnapshot(e.to_string()))?;
        if snap.version != SNAPSHOT_VERSION {
            return Err(StoreError::BadSnapshot(format!(
                "unsupported version {}",
                snap.version
            )));
        }
        Ok(snap)
    }
}

impl TurkDb {
    /// Restores a snapshot and replays the log events it does not cover.
    pub fn from_snapshot_and_log(
        snapshot: &Snapshot,
        events: &[TurkEvent],
    ) -> Result<TurkDb, StoreError> {
        let mut db = snapshot.restore()?;
        let skip = usize::try_from(snapshot.events_applied).unwrap_or(usize::MAX);
        if skip > events.len() {
            return Err(StoreError::BadSnapshot(format!(
                "snapshot covers {skip} events but the log has {}",
                events.len()
            )));
        }
        db.apply_all(&events[skip..])?;
        Ok(db)
    }
}
