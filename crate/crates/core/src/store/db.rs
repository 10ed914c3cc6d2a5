//! TurkDB: the live state built by applying turk events in log order.

use std::collections::HashMap;
use std::path::Path;

use super::log::{read_log, EventLog};
use super::StoreError;
use crate::index::{BigIndex, IndexConfig, IndexError};
use crate::model::{
    canonical_tokens, EventPayload, GeoPoint, ModelError, SpatialTextualObject, Timestamp,
    TurkEvent,
};
use crate::recommender::RatingRecord;

#[derive(Debug, Clone)]
pub struct TurkDb {
    pub(super) index: BigIndex,
    pub(super) ratings: Vec<RatingRecord>,
    pub(super) responses: Vec<TurkEvent>,
    /// Time of the latest profile or location event per turk.
    pub(super) last_at: HashMap<String, Timestamp>,
    pub(super) applied: u64,
}

impl TurkDb {
    pub fn new(config: IndexConfig) -> Result<Self, StoreError> {
        Ok(TurkDb {
            index: BigIndex::new(config)?,
            ratings: Vec::new(),
            responses: Vec::new(),
            last_at: HashMap::new(),
            applied: 0,
        })
    }

    /// Applies `events` in order to an empty database.
    pub fn replay<'a, I>(config: IndexConfig, events: I) -> Result<Self, StoreError>
    where
        I: IntoIterator<Item = &'a TurkEvent>,
    {
        let mut db = TurkDb::new(config)?;
        db.apply_all(events)?;
        Ok(db)
    }

    /// Replays a whole log file; a corrupt line is an error.
    pub fn from_log(config: IndexConfig, path: impl AsRef<Path>) -> Result<Self, StoreError> {
        TurkDb::replay(config, &read_log(path)?)
    }

    pub fn index(&self) -> &BigIndex {
        &self.index
    }

    pub fn ratings(&self) -> &[RatingRecord] {
        &self.ratings
    }

    pub fn responses(&self) -> &[TurkEvent] {
        &self.responses
    }

    /// Number of events applied since the empty state.
    pub fn applied(&self) -> u64 {
        self.applied
    }

    pub fn apply_all<'a, I>(&mut self, events: I) -> Result<(), StoreError>
    where
        I: IntoIterator<Item = &'a TurkEvent>,
    {
        for e in events {
            self.apply(e)?;
        }
        Ok(())
    }

    /// Validates `event` against the current state without changing it.
    pub fn check(&self, event: &TurkEvent) -> Result<(), StoreError> {
        let id = event.object_id.as_str();
        if id.is_empty() {
            return Err(ModelError::EmptyId.into());
        }
        if event.at < 0 {
            return Err(ModelError::BadTimestamp(event.at).into());
        }
        let in_bounds = |lat: f64, lon: f64| -> Result<(), StoreError> {
            let p = GeoPoint::new(lat, lon)?;
            if !self.index.config().bounds.contains(p) {
                return Err(IndexError::OutsideBounds(p).into());
            }
            Ok(())
        };
        let ordered = || -> Result<(), StoreError> {
            match self.last_at.get(id) {
                Some(&last) if event.at < last => Err(StoreError::OutOfOrder {
                    id: id.to_string(),
                    at: event.at,
                    last,
                }),
                _ => Ok(()),
            }
        };
        match &event.payload {
            EventPayload::Register { skills, lat, lon } => {
                if self.index.contains(id) {
                    return Err(IndexError::DuplicateId(id.to_string()).into());
                }
                SpatialTextualObject::new(id, skills, GeoPoint::new(*lat, *lon)?, event.at)?;
                in_bounds(*lat, *lon)
            }
            EventPayload::ProfileUpdate { add, remove } => {
                let obj = self
                    .index
                    .get(id)
                    .ok_or_else(|| IndexError::NotFound(id.to_string()))?;
                ordered()?;
                if merged_skills(obj, add, remove).is_empty() {
                    return Err(ModelError::EmptySkills.into());
                }
                Ok(())
            }
            EventPayload::LocationUpdate { lat, lon } => {
                let obj = self
                    .index
                    .get(id)
                    .ok_or_else(|| IndexError::NotFound(id.to_string()))?;
                ordered()?;
                if event.at < obj.positioned_at {
                    return Err(IndexError::StaleUpdate {
                        id: id.to_string(),
                        current: obj.positioned_at,
                        new: event.at,
                    }
                    .into());
                }
                in_bounds(*lat, *lon)
            }
            EventPayload::Rating { .. } => {
                rating_of(event).expect("rating payload").validate()?;
                Ok(())
            }
            EventPayload::Response { .. } => Ok(()),
        }
    }

    /// Applies one event. On error the state is unchanged.
    pub fn apply(&mut self, event: &TurkEvent) -> Result<(), StoreError> {
        self.check(event)?;
        let id = event.object_id.as_str();
        match &event.payload {
            EventPayload::Register { skills, lat, lon } => {
                let obj =
                    SpatialTextualObject::new(id, skills, GeoPoint::new(*lat, *lon)?, event.at)?;
                self.index.insert(obj)?;
                self.last_at.insert(id.to_string(), event.at);
            }
            EventPayload::ProfileUpdate { add, remove } => {
                let skills = merged_skills(self.index.get(id).expect("checked"), add, remove);
                self.index.update_skills(id, skills)?;
                self.last_at.insert(id.to_string(), event.at);
            }
            EventPayload::LocationUpdate { lat, lon } => {
                self.index
                    .update_location(id, GeoPoint::new(*lat, *lon)?, event.at)?;
                self.last_at.insert(id.to_string(), event.at);
            }
            EventPayload::Rating { .. } => {
                self.ratings.push(rating_of(event).expect("rating payload"))
            }
            EventPayload::Response { .. } => self.responses.push(event.clone()),
        }
        self.applied += 1;
        Ok(())
    }

    /// Validates, durably appends, then applies.
    pub fn record(&mut self, log: &mut EventLog, event: &TurkEvent) -> Result<(), StoreError> {
        self.check(event)?;
        log.append(event)?;
        self.apply(event)
    }
}

fn merged_skills(
    obj: &SpatialTextualObject,
    add: &[String],
    remove: &[String],
) -> std::collections::BTreeSet<String> {
    let add = canonical_tokens(add);
    let remove = canonical_tokens(remove);
    obj.skills
        .iter()
        .chain(&add)
        .filter(|s| !remove.contains(*s))
        .cloned()
        .collect()
}

fn rating_of(event: &TurkEvent) -> Option<RatingRecord> {
    match &event.payload {
        EventPayload::Rating {
            user_id,
            rating,
            context,
        } => Some(RatingRecord {
            user_id: user_id.clone(),
            turk_id: event.object_id.clone(),
            context: context.clone(),
            rating: *rating,
            at: event.at,
        }),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ResponseVerdict;
    use crate::recommender::{ContextVector, TimeBucket};

    fn p(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn single_register() {
        let db = TurkDb::replay(
            IndexConfig::default(),
            &[TurkEvent::register("a", 0, &["Repair"], p(1.0, 2.0))],
        )
        .unwrap();
        assert_eq!(db.index().len(), 1);
        assert_eq!(
            db.index().get("a").unwrap().skills.iter().next().unwrap(),
            "repair"
        );
        assert_eq!(db.applied(), 1);
    }

    #[test]
    fn profile_location_rating_response() {
        let mut db = TurkDb::new(IndexConfig::default()).unwrap();
        db.apply(&TurkEvent::register(
            "a",
            0,
            &["repair", "cooking"],
            p(0.0, 0.0),
        ))
        .unwrap();
        db.apply(&TurkEvent::new(
            "a",
            5,
            EventPayload::ProfileUpdate {
                add: vec!["Tutoring".into()],
                remove: vec!["cooking".into()],
            },
        ))
        .unwrap();
        let skills: Vec<_> = db
            .index()
            .get("a")
            .unwrap()
            .skills
            .iter()
            .cloned()
            .collect();
        assert_eq!(skills, ["repair", "tutoring"]);
        db.apply(&TurkEvent::location("a", 7, p(0.5, 0.5))).unwrap();
        assert_eq!(db.index().get("a").unwrap().positioned_at, 7);
        db.apply(&TurkEvent::new(
            "a",
            8,
            EventPayload::Rating {
                user_id: "u".into(),
                rating: 4.0,
                context: ContextVector {
                    time_bucket: TimeBucket::Morning,
                    location_cell: 0,
                    skill_domain: "repair".into(),
                },
            },
        ))
        .unwrap();
        db.apply(&TurkEvent::new(
            "a",
            9,
            EventPayload::Response {
                session_id: "s".into(),
                verdict: ResponseVerdict::Refuse,
            },
        ))
        .unwrap();
        assert_eq!(db.ratings().len(), 1);
        assert_eq!(db.ratings()[0].turk_id, "a");
        assert_eq!(db.responses().len(), 1);
        assert_eq!(db.applied(), 5);
        db.index().audit().unwrap();
    }

    #[test]
    fn rejects_invalid_events_without_change() {
        let mut db = TurkDb::new(IndexConfig::default()).unwrap();
        db.apply(&TurkEvent::register("a", 10, &["x"], p(0.0, 0.0)))
            .unwrap();
        let before = db.index().generation();
        let bad = [
            TurkEvent::register("a", 11, &["y"], p(0.0, 0.0)),
            TurkEvent::location("b", 11, p(0.0, 0.0)),
            TurkEvent::location("a", 9, p(0.0, 0.0)),
            TurkEvent::register("", 1, &["y"], p(0.0, 0.0)),
            TurkEvent::new(
                "a",
                12,
                EventPayload::ProfileUpdate {
                    add: vec![],
                    remove: vec!["x".into()],
                },
            ),
            TurkEvent::new(
                "a",
                12,
                EventPayload::LocationUpdate {
                    lat: 91.0,
                    lon: 0.0,
                },
            ),
        ];
        for e in &bad {
            assert!(db.apply(e).is_err(), "{e:?}");
        }
        assert_eq!(db.index().generation(), before);
        assert_eq!(db.applied(), 1);
        db.apply(&TurkEvent::new(
            "a",
            20,
            EventPayload::ProfileUpdate {
                add: vec!["z".into()],
                remove: vec![],
            },
        ))
        .unwrap();
        assert!(matches!(
            db.apply(&TurkEvent::location("a", 15, p(0.0, 0.0))),
            Err(StoreError::OutOfOrder { .. })
        ));
    }

    #[test]
    fn record_appends_only_valid_events() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut log = EventLog::open(&path).unwrap();
        let mut db = TurkDb::new(IndexConfig::default()).unwrap();
        db.record(&mut log, &TurkEvent::register("a", 0, &["x"], p(0.0, 0.0)))
            .unwrap();
        assert!(db
            .record(&mut log, &TurkEvent::register("a", 0, &["x"], p(0.0, 0.0)))
            .is_err());
        db.record(&mut log, &TurkEvent::location("a", 3, p(1.0, 1.0)))
            .unwrap();
        let back = TurkDb::from_log(IndexConfig::default(), &path).unwrap();
        assert_eq!(back.index().sorted_objects(), db.index().sorted_objects());
        assert_eq!(back.applied(), 2);
    }
}
