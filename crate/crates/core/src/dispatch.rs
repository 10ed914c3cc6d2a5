//! Candidate dispatch: a session pushes a task to matcher and recommender
//! candidates and reacts to accept, refuse and ignore responses.
//!
//! Matcher and recommender candidates live in separate slot pools. A refused
//! or ignored slot is back-filled from its own source; an accepted slot is
//! frozen. A turk appears in a session at most once, under one source, so
//! the two pools are always disjoint: the matcher skips turks already held
//! by a recommender entry and the recommender skips anything already present.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::BigIndex;
use crate::model::{ResponseVerdict, ServiceQuery, Timestamp};
use crate::recommender::{recommend, CarsModel, Taxonomy};
use crate::scoring::ScoringParams;
use crate::topk::{open_cursor, QueryCursor, QueryError};

pub const DEFAULT_TIMEOUT_S: i64 = 120;

#[derive(Debug, Error, PartialEq)]
pub enum DispatchError {
    #[error("turk {0} is not a candidate in this session")]
    UnknownCandidate(String),
    #[error("turk {0} already reached a terminal state")]
    AlreadyTerminal(String),
    #[error("bad session config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Query(#[from] QueryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CandidateSource {
    Matcher,
    Recommender,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CandidateState {
    Pending,
    Notified,
    Accepted,
    Refused,
    Ignored,
}

impl CandidateState {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Accepted | Self::Refused | Self::Ignored)
    }

    fn can_become(self, next: CandidateState) -> bool {
        match self {
            Self::Pending => next == Self::Notified,
            Self::Notified => next.is_terminal(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub turk_id: String,
    pub source: CandidateSource,
    /// Matcher: combined score. Recommender: predicted rating.
    pub score: f64,
    pub state: CandidateState,
    pub notified_at: Timestamp,
}

/// One row of the session log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchEvent {
    pub session_id: String,
    pub at: Timestamp,
    pub turk_id: String,
    pub transition: CandidateState,
    pub source: CandidateSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub session_id: String,
    pub matcher_slots: usize,
    pub recommender_slots: usize,
    pub timeout_s: i64,
}

impl SessionConfig {
    pub fn new(
        session_id: impl Into<String>,
        matcher_slots: usize,
        recommender_slots: usize,
    ) -> Self {
        Self {
            session_id: session_id.into(),
            matcher_slots,
            recommender_slots,
            timeout_s: DEFAULT_TIMEOUT_S,
        }
    }

    fn validate(&self) -> Result<(), DispatchError> {
        if self.matcher_slots == 0 {
            return Err(DispatchError::BadConfig(
                "matcher slots must be at least 1".into(),
            ));
        }
        if self.timeout_s < 0 {
            return Err(DispatchError::BadConfig(
                "timeout must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Recommender side of a session. Without it, recommender slots stay empty.
#[derive(Debug, Clone, Copy)]
pub struct RecommenderInput<'a> {
    pub model: &'a CarsModel,
    pub user_id: &'a str,
    pub taxonomy: &'a Taxonomy,
    pub pool: &'a [String],
}

/// A live dispatch session. Borrows the index so it cannot change underneath
/// the matcher cursor.
#[derive(Debug)]
pub struct DispatchSession<'a> {
    index: &'a BigIndex,
    config: SessionConfig,
    cursor: QueryCursor,
    recommendations: VecDeque<(String, f64)>,
    entries: Vec<CandidateEntry>,
    position: BTreeMap<String, usize>,
    log: Vec<DispatchEvent>,
}

pub fn open_session<'a>(
    index: &'a BigIndex,
    query: &ServiceQuery,
    params: &ScoringParams,
    config: SessionConfig,
    recommender: Option<RecommenderInput<'_>>,
) -> Result<DispatchSession<'a>, DispatchError> {
    config.validate()?;
    let cursor = open_cursor(index, query, params)?;
    let mut s = DispatchSession {
        index,
        config,
        cursor,
        recommendations: VecDeque::new(),
        entries: Vec::new(),
        position: BTreeMap::new(),
        log: Vec::new(),
    };
    let at = query.issued_at;
    for _ in 0..s.config.matcher_slots {
        if !s.fill_matcher(at)? {
            break;
        }
    }
    if let (Some(r), true) = (recommender, s.config.recommender_slots > 0) {
        let picked: BTreeSet<String> = s.position.keys().cloned().collect();
        s.recommendations = recommend(
            r.model,
            r.user_id,
            query,
            r.taxonomy,
            r.pool,
            &picked,
            r.pool.len(),
        )
        .into();
        for _ in 0..s.config.recommender_slots {
            if !s.fill_recommender(at) {
                break;
            }
        }
    }
    Ok(s)
}

impl<'a> DispatchSession<'a> {
    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn entries(&self) -> &[CandidateEntry] {
        &self.entries
    }

    pub fn entry(&self, turk_id: &str) -> Option<&CandidateEntry> {
        self.position.get(turk_id).map(|&i| &self.entries[i])
    }

    pub fn log(&self) -> &[DispatchEvent] {
        &self.log
    }

    /// Non-terminal entries from `source`, in the order they entered.
    pub fn active(&self, source: CandidateSource) -> Vec<&CandidateEntry> {
        self.entries
            .iter()
            .filter(|e| e.source == source && !e.state.is_terminal())
            .collect()
    }

    pub fn accepted(&self) -> Vec<&CandidateEntry> {
        self.entries
            .iter()
            .filter(|e| e.state == CandidateState::Accepted)
            .collect()
    }

    /// True once no entry is waiting for a response.
    pub fn is_settled(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.state != CandidateState::Notified)
    }

    /// Turks held by recommender entries in any state. The matcher never
    /// picks these.
    pub fn recommender_held(&self) -> BTreeSet<&str> {
        self.entries
            .iter()
            .filter(|e| e.source == CandidateSource::Recommender)
            .map(|e| e.turk_id.as_str())
            .collect()
    }

    /// Earliest time at which some entry would be ignored.
    pub fn next_deadline(&self) -> Option<Timestamp> {
        self.entries
            .iter()
            .filter(|e| e.state == CandidateState::Notified)
            .map(|e| {
                e.notified_at
                    .saturating_add(self.config.timeout_s)
                    .saturating_add(1)
            })
            .min()
    }

    pub fn respond(
        &mut self,
        turk_id: &str,
        verdict: ResponseVerdict,
        at: Timestamp,
    ) -> Result<(), DispatchError> {
        let &i = self
            .position
            .get(turk_id)
            .ok_or_else(|| DispatchError::UnknownCandidate(turk_id.to_string()))?;
        if self.entries[i].state.is_terminal() {
            return Err(DispatchError::AlreadyTerminal(turk_id.to_string()));
        }
        let next = match verdict {
            ResponseVerdict::Accept => CandidateState::Accepted,
            ResponseVerdict::Refuse => CandidateState::Refused,
            ResponseVerdict::Ignore => CandidateState::Ignored,
        };
        self.transition(i, next, at);
        if next != CandidateState::Accepted {
            self.backfill(self.entries[i].source, at)?;
        }
        Ok(())
    }

    /// Entries notified more than `timeout_s` before `now` become IGNORED and
    /// are back-filled; replacements are notified at `now`.
    pub fn tick(&mut self, now: Timestamp) -> Result<Vec<String>, DispatchError> {
        let expired: Vec<usize> = (0..self.entries.len())
            .filter(|&i| {
                let e = &self.entries[i];
                e.state == CandidateState::Notified
                    && now.saturating_sub(e.notified_at) > self.config.timeout_s
            })
            .collect();
        let mut ids = Vec::with_capacity(expired.len());
        for i in expired {
            self.transition(i, CandidateState::Ignored, now);
            ids.push(self.entries[i].turk_id.clone());
            self.backfill(self.entries[i].source, now)?;
        }
        Ok(ids)
    }

    fn backfill(&mut self, source: CandidateSource, at: Timestamp) -> Result<bool, DispatchError> {
        match source {
            CandidateSource::Matcher => self.fill_matcher(at),
            CandidateSource::Recommender => Ok(self.fill_recommender(at)),
        }
    }

    fn fill_matcher(&mut self, at: Timestamp) -> Result<bool, DispatchError> {
        while let Some(c) = self.cursor.next(self.index)? {
            if self.position.contains_key(&c.object_id) {
                continue;
            }
            self.push(c.object_id, CandidateSource::Matcher, c.score.total, at);
            return Ok(true);
        }
        Ok(false)
    }

    fn fill_recommender(&mut self, at: Timestamp) -> bool {
        while let Some((id, rating)) = self.recommendations.pop_front() {
            if self.position.contains_key(&id) {
                continue;
            }
            self.push(id, CandidateSource::Recommender, rating, at);
            return true;
        }
        false
    }

    fn push(&mut self, turk_id: String, source: CandidateSource, score: f64, at: Timestamp) {
        let i = self.entries.len();
        self.position.insert(turk_id.clone(), i);
        self.entries.push(CandidateEntry {
            turk_id,
            source,
            score,
            state: CandidateState::Pending,
            notified_at: at,
        });
        self.record(i, at);
        self.transition(i, CandidateState::Notified, at);
    }

    fn transition(&mut self, i: usize, next: CandidateState, at: Timestamp) {
        let e = &mut self.entries[i];
        debug_assert!(e.state.can_become(next), "{:?} -> {next:?}", e.state);
        e.state = next;
        if next == CandidateState::Notified {
            e.notified_at = at;
        }
        self.record(i, at);
    }

    fn record(&mut self, i: usize, at: Timestamp) {
        let e = &self.entries[i];
        self.log.push(DispatchEvent {
            session_id: self.config.session_id.clone(),
            at,
            turk_id: e.turk_id.clone(),
            transition: e.state,
            source: e.source,
        });
    }
}

/// Per-turk state reconstructed from log rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayedEntry {
    pub source: CandidateSource,
    pub state: CandidateState,
    pub notified_at: Timestamp,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("row {row}: {reason}")]
pub struct ReplayError {
    pub row: usize,
    pub reason: String,
}

/// Rebuilds entry states from a session log, checking every transition.
pub fn replay_session(
    rows: &[DispatchEvent],
) -> Result<BTreeMap<String, ReplayedEntry>, ReplayError> {
    let mut out: BTreeMap<String, ReplayedEntry> = BTreeMap::new();
    for (row, ev) in rows.iter().enumerate() {
        let fail = |reason: String| ReplayError { row, reason };
        match out.get_mut(&ev.turk_id) {
            None if ev.transition == CandidateState::Pending => {
                out.insert(
                    ev.turk_id.clone(),
                    ReplayedEntry {
                        source: ev.source,
                        state: CandidateState::Pending,
                        notified_at: ev.at,
                    },
                );
            }
            None => {
                return Err(fail(format!(
                    "{} appears first as {:?}",
                    ev.turk_id, ev.transition
                )))
            }
            Some(e) => {
                if e.source != ev.source {
                    return Err(fail(format!("{} changed source", ev.turk_id)));
                }
                if !e.state.can_become(ev.transition) {
                    return Err(fail(format!(
                        "{:?} -> {:?} for {}",
                        e.state, ev.transition, ev.turk_id
                    )));
                }
                e.state = ev.transition;
                if ev.transition == CandidateState::Notified {
                    e.notified_at = ev.at;
                }
            }
        }
    }
    Ok(out)
}

impl DispatchSession<'_> {
    /// The session's entries in the same shape [`replay_session`] returns.
    pub fn snapshot_states(&self) -> BTreeMap<String, ReplayedEntry> {
        self.entries
            .iter()
            .map(|e| {
                (
                    e.turk_id.clone(),
                    ReplayedEntry {
                        source: e.source,
                        state: e.state,
                        notified_at: e.notified_at,
                    },
                )
            })
            .collect()
    }
}
