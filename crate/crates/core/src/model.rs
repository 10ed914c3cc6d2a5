//! Domain types shared by the index, the query processor, the recommender
//! and the dispatch loop.
//!
//! Everything here is an immutable value once constructed. Objects and
//! queries are canonicalized on construction: skill and keyword tokens are
//! trimmed, lowercased and deduplicated.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seconds since the Unix epoch.
pub type Timestamp = i64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("skill set is empty")]
    EmptySkills,
    #[error("coordinate out of range: lat {lat}, lon {lon}")]
    OutOfRangeCoord { lat: f64, lon: f64 },
    #[error("bad timestamp {0}")]
    BadTimestamp(Timestamp),
    #[error("object id is empty")]
    EmptyId,
    #[error("query keyword set is empty")]
    EmptyQuery,
    #[error("invalid query parameter: {0}")]
    BadQueryParam(&'static str),
}

/// A point on the globe in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, ModelError> {
        let p = GeoPoint { lat, lon };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(ModelError::OutOfRangeCoord { lat, lon })
        }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lat, self.lon)
    }
}

/// Trims, lowercases and deduplicates a token list, dropping blanks.
pub fn canonical_tokens<I, S>(tokens: I) -> BTreeSet<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    tokens
        .into_iter()
        .map(|t| t.as_ref().trim().to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Untyped object record as it arrives from ingestion or a log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawObject {
    pub id: String,
    pub skills: Vec<String>,
    pub lat: f64,
    pub lon: f64,
    pub t: Timestamp,
}

/// A volunteer: the skills they offer, where they were last seen, and when.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawObject", into = "RawObject")]
pub struct SpatialTextualObject {
    pub id: String,
    pub skills: BTreeSet<String>,
    pub position: GeoPoint,
    pub positioned_at: Timestamp,
}

impl SpatialTextualObject {
    pub fn new<I, S>(
        id: impl Into<String>,
        skills: I,
        position: GeoPoint,
        positioned_at: Timestamp,
    ) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let id = id.into();
        if id.is_empty() {
            return Err(ModelError::EmptyId);
        }
        let skills = canonical_tokens(skills);
        if skills.is_empty() {
            return Err(ModelError::EmptySkills);
        }
        if !position.is_valid() {
            return Err(ModelError::OutOfRangeCoord {
                lat: position.lat,
                lon: position.lon,
            });
        }
        if positioned_at < 0 {
            return Err(ModelError::BadTimestamp(positioned_at));
        }
        Ok(SpatialTextualObject {
            id,
            skills,
            position,
            positioned_at,
        })
    }
}

/// Validates and canonicalizes an untyped record.
pub fn validate_object(raw: &RawObject) -> Result<SpatialTextualObject, ModelError> {
    SpatialTextualObject::new(
        raw.id.clone(),
        &raw.skills,
        GeoPoint {
            lat: raw.lat,
            lon: raw.lon,
        },
        raw.t,
    )
}

impl TryFrom<RawObject> for SpatialTextualObject {
    type Error = ModelError;

    fn try_from(raw: RawObject) -> Result<Self, Self::Error> {
        validate_object(&raw)
    }
}

impl From<SpatialTextualObject> for RawObject {
    fn from(o: SpatialTextualObject) -> Self {
        RawObject {
            id: o.id,
            skills: o.skills.into_iter().collect(),
            lat: o.position.lat,
            lon: o.position.lon,
            t: o.positioned_at,
        }
    }
}

impl From<&SpatialTextualObject> for RawObject {
    fn from(o: &SpatialTextualObject) -> Self {
        o.clone().into()
    }
}

/// A temporal spatial-keyword query.
///
/// The weighting fields (`alpha`, `lambda_base`, `max_distance_m`) are the
/// caller's knobs; [`crate::scoring::ScoringParams::for_query`] turns them
/// into the parameter set the scorer actually reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceQuery {
    pub keywords: BTreeSet<String>,
    pub location: GeoPoint,
    pub issued_at: Timestamp,
    pub k: usize,
    pub alpha: f64,
    pub lambda_base: f64,
    pub max_distance_m: f64,
}

impl ServiceQuery {
    pub const DEFAULT_ALPHA: f64 = 0.5;
    pub const DEFAULT_LAMBDA: f64 = 2.0;
    pub const DEFAULT_MAX_DISTANCE_M: f64 = 10_000.0;

    /// Builds a query with default weighting (α = 0.5, λ = 2, 10 km).
    pub fn new<I, S>(
        keywords: I,
        location: GeoPoint,
        issued_at: Timestamp,
        k: usize,
    ) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let q = ServiceQuery {
            keywords: canonical_tokens(keywords),
            location,
            issued_at,
            k,
            alpha: Self::DEFAULT_ALPHA,
            lambda_base: Self::DEFAULT_LAMBDA,
            max_distance_m: Self::DEFAULT_MAX_DISTANCE_M,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn with_weights(
        mut self,
        alpha: f64,
        lambda_base: f64,
        max_distance_m: f64,
    ) -> Result<Self, ModelError> {
        self.alpha = alpha;
        self.lambda_base = lambda_base;
        self.max_distance_m = max_distance_m;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.keywords.is_empty() {
            return Err(ModelError::EmptyQuery);
        }
        if !self.location.is_valid() {
            return Err(ModelError::OutOfRangeCoord {
                lat: self.location.lat,
                lon: self.location.lon,
            });
        }
        if self.k == 0 {
            return Err(ModelError::BadQueryParam("k must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ModelError::BadQueryParam("alpha must lie in [0, 1]"));
        }
        if !(self.lambda_base > 1.0) || !self.lambda_base.is_finite() {
            return Err(ModelError::BadQueryParam("lambda must be > 1"));
        }
        if !(self.max_distance_m > 0.0) || !self.max_distance_m.is_finite() {
            return Err(ModelError::BadQueryParam("max distance must be > 0"));
        }
        Ok(())
    }
}

/// Components of the temporal spatial-keyword score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub spatial: f64,
    pub textual: f64,
    pub recency: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Register,
    ProfileUpdate,
    LocationUpdate,
    Rating,
    Response,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResponseVerdict {
    Accept,
    Refuse,
    Ignore,
}

/// Kind-specific event body. Serialized adjacently as `kind` + `payload`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventPayload {
    Register {
        skills: Vec<String>,
        lat: f64,
        lon: f64,
    },
    ProfileUpdate {
        #[serde(default)]
        add: Vec<String>,
        #[serde(default)]
        remove: Vec<String>,
    },
    LocationUpdate {
        lat: f64,
        lon: f64,
    },
    /// A user's rating of the turk named by the event's `object_id`.
    Rating {
        user_id: String,
        rating: f64,
        context: crate::recommender::ContextVector,
    },
    Response {
        session_id: String,
        verdict: ResponseVerdict,
    },
}

impl EventPayload {
    pub fn kind(&self) -> EventKind {
        match self {
            EventPayload::Register { .. } => EventKind::Register,
            EventPayload::ProfileUpdate { .. } => EventKind::ProfileUpdate,
            EventPayload::LocationUpdate { .. } => EventKind::LocationUpdate,
            EventPayload::Rating { .. } => EventKind::Rating,
            EventPayload::Response { .. } => EventKind::Response,
        }
    }
}

/// One line of the turk action log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurkEvent {
    pub object_id: String,
    pub at: Timestamp,
    #[serde(flatten)]
    pub payload: EventPayload,
}

impl TurkEvent {
    pub fn new(object_id: impl Into<String>, at: Timestamp, payload: EventPayload) -> Self {
        TurkEvent {
            object_id: object_id.into(),
            at,
            payload,
        }
    }

    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }

    pub fn register(
        object_id: impl Into<String>,
        at: Timestamp,
        skills: &[&str],
        pos: GeoPoint,
    ) -> Self {
        TurkEvent::new(
            object_id,
            at,
            EventPayload::Register {
                skills: skills.iter().map(|s| s.to_string()).collect(),
                lat: pos.lat,
                lon: pos.lon,
            },
        )
    }

    pub fn location(object_id: impl Into<String>, at: Timestamp, pos: GeoPoint) -> Self {
        TurkEvent::new(
            object_id,
            at,
            EventPayload::LocationUpdate {
                lat: pos.lat,
                lon: pos.lon,
            },
        )
    }
}
