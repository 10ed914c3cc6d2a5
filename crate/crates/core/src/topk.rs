//! Top-k query processing over [`BigIndex`].
//!
//! The traversal is best-first over a single max-heap holding three kinds of
//! items, each keyed by an upper bound on the scores it can still produce:
//!
//! - index nodes, keyed by [`node_upper_bound`];
//! - *lazy* objects read from a leaf's posting lists, whose textual and
//!   recency parts are exact but whose spatial part is still the leaf's
//!   optimistic value (the haversine distance has not been computed yet);
//! - *exact* objects with a fully computed score.
//!
//! An exact item at the top of the heap is final: nothing else left in the
//! heap can beat it. At equal keys, bounds are expanded before exact items
//! and exact items leave in ascending id order, which reproduces the oracle
//! tie-break.
//!
//! With a result limit `k`, the k-th best exact score seen so far (θ)
//! additionally prunes: nodes and postings whose bound falls strictly below
//! θ are dropped, and a recency-ordered posting list is abandoned as soon as
//! its running bound drops below θ.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{node_upper_bound, BigIndex, NodeId};
use crate::model::{GeoPoint, ModelError, ScoreBreakdown, ServiceQuery, SpatialTextualObject};
use crate::scoring::{
    combine, combined_score, coverage, recency_score, spatial_from_distance, spatial_score,
    ScoringError, ScoringParams,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("query keyword set is empty")]
    EmptyQuery,
    #[error("invalid query: {0}")]
    InvalidQuery(ModelError),
    #[error("invalid scoring parameters: {0}")]
    BadParams(ScoringError),
    #[error("index changed since the cursor was opened")]
    CursorInvalidated,
}

impl From<ScoringError> for QueryError {
    fn from(e: ScoringError) -> Self {
        match e {
            ScoringError::EmptyQuery => QueryError::EmptyQuery,
            other => QueryError::BadParams(other),
        }
    }
}

fn check(query: &ServiceQuery, params: &ScoringParams) -> Result<(), QueryError> {
    match query.validate() {
        Ok(()) => {}
        Err(ModelError::EmptyQuery) => return Err(QueryError::EmptyQuery),
        Err(e) => return Err(QueryError::InvalidQuery(e)),
    }
    params.validate()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub object_id: String,
    pub score: ScoreBreakdown,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryStats {
    pub nodes_visited: u64,
    pub postings_scanned: u64,
    pub distance_computations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopK {
    pub candidates: Vec<RankedCandidate>,
    pub stats: QueryStats,
}

#[derive(Debug, Clone)]
enum Item {
    Node(NodeId),
    Lazy {
        id: String,
        position: GeoPoint,
        textual: f64,
        recency: f64,
    },
    Exact {
        id: String,
        score: ScoreBreakdown,
    },
}

#[derive(Debug, Clone)]
struct Entry {
    key: f64,
    item: Item,
}

impl Entry {
    // Higher pops first on key ties.
    fn class(&self) -> u8 {
        match self.item {
            Item::Node(_) => 2,
            Item::Lazy { .. } => 1,
            Item::Exact { .. } => 0,
        }
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .total_cmp(&other.key)
            .then_with(|| self.class().cmp(&other.class()))
            .then_with(|| match (&self.item, &other.item) {
                (Item::Node(a), Item::Node(b)) => b.cmp(a),
                (Item::Lazy { id: a, .. }, Item::Lazy { id: b, .. })
                | (Item::Exact { id: a, .. }, Item::Exact { id: b, .. }) => b.cmp(a),
                _ => Ordering::Equal,
            })
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdScore(f64);

impl Eq for OrdScore {}

impl PartialOrd for OrdScore {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdScore {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone)]
struct Traversal {
    query: ServiceQuery,
    params: ScoringParams,
    heap: BinaryHeap<Entry>,
    limit: Option<usize>,
    best: BinaryHeap<Reverse<OrdScore>>,
    emitted: usize,
    stats: QueryStats,
}

impl Traversal {
    fn new(
        index: &BigIndex,
        query: &ServiceQuery,
        params: &ScoringParams,
        limit: Option<usize>,
    ) -> Result<Self, QueryError> {
        check(query, params)?;
        let mut t = Traversal {
            query: query.clone(),
            params: *params,
            heap: BinaryHeap::new(),
            limit,
            best: BinaryHeap::new(),
            emitted: 0,
            stats: QueryStats::default(),
        };
        let root = index.root();
        let key = node_upper_bound(index.node(root), query, params);
        t.push(key, Item::Node(root));
        Ok(t)
    }

    fn theta(&self) -> f64 {
        match self.limit {
            Some(k) if self.best.len() >= k => self.best.peek().map_or(0.0, |r| r.0 .0),
            _ => 0.0,
        }
    }

    fn admits(&self, key: f64) -> bool {
        key > 0.0 && key >= self.theta()
    }

    fn push(&mut self, key: f64, item: Item) {
        if !self.admits(key) {
            return;
        }
        if let (Item::Exact { .. }, Some(k)) = (&item, self.limit) {
            self.best.push(Reverse(OrdScore(key)));
            if self.best.len() > k {
                self.best.pop();
            }
        }
        self.heap.push(Entry { key, item });
    }

    fn frontier_bound(&self) -> f64 {
        self.heap.peek().map_or(0.0, |e| e.key)
    }

    fn done(&self) -> bool {
        self.limit.is_some_and(|k| self.emitted >= k)
    }

    /// Next result in rank order, or `None` once nothing with a positive
    /// score remains (or the limit is reached).
    fn next(&mut self, index: &BigIndex) -> Option<(String, ScoreBreakdown)> {
        if self.done() {
            return None;
        }
        while let Some(Entry { key, item }) = self.heap.pop() {
            if !self.admits(key) {
                continue;
            }
            match item {
                Item::Exact { id, score } => {
                    self.emitted += 1;
                    return Some((id, score));
                }
                Item::Lazy {
                    id,
                    position,
                    textual,
                    recency,
                } => {
                    self.stats.distance_computations += 1;
                    let spatial =
                        spatial_score(self.query.location, position, self.params.max_distance_m);
                    let total = combine(self.params.alpha, spatial, textual, recency);
                    let score = ScoreBreakdown {
                        spatial,
                        textual,
                        recency,
                        total,
                    };
                    self.push(total, Item::Exact { id, score });
                }
                Item::Node(n) => self.expand(index, n, key),
            }
        }
        None
    }

    fn expand(&mut self, index: &BigIndex, id: NodeId, node_key: f64) {
        self.stats.nodes_visited += 1;
        let node = index.node(id);
        if let Some(kids) = node.children() {
            for k in kids {
                let child = index.node(k);
                if child.is_empty() {
                    continue;
                }
                // A child can never beat its parent; clamping keeps popped
                // keys non-increasing under float rounding.
                let key = node_upper_bound(child, &self.query, &self.params).min(node_key);
                self.push(key, Item::Node(k));
            }
            return;
        }

        let q = &self.query;
        let p = self.params;
        let limited = self.limit.is_some();
        let spatial_max = spatial_from_distance(
            node.bounds().min_distance_lower_bound_m(q.location),
            p.max_distance_m,
        );
        let present = q
            .keywords
            .iter()
            .filter(|k| !node.postings(k).is_empty())
            .count();
        let coverage_max = coverage(present, q.keywords.len());
        let mut seen: HashSet<&str> = HashSet::new();
        let mut pending = Vec::new();
        let mut scanned = 0u64;

        let lists = q
            .keywords
            .iter()
            .map(|kw| (node.postings(kw), coverage_max))
            .chain((p.alpha > 0.0).then(|| (node.recency_list(), 0.0)));
        for (list, list_coverage) in lists {
            for e in list {
                scanned += 1;
                let recency = recency_score(
                    q.issued_at,
                    e.positioned_at,
                    p.lambda_base,
                    p.recency_unit_s,
                );
                // Lists run newest-first, so once the best this list could
                // still offer falls below θ, so does everything after it.
                if limited && combine(p.alpha, spatial_max, list_coverage, recency) < self.theta() {
                    break;
                }
                if !seen.insert(e.object_id.as_str()) {
                    continue;
                }
                let obj = index
                    .get(&e.object_id)
                    .expect("posting refers to live object");
                let textual = coverage(
                    q.keywords
                        .iter()
                        .filter(|k| obj.skills.contains(*k))
                        .count(),
                    q.keywords.len(),
                );
                let key = combine(p.alpha, spatial_max, textual, recency).min(node_key);
                if self.admits(key) {
                    pending.push(Entry {
                        key,
                        item: Item::Lazy {
                            id: e.object_id.clone(),
                            position: e.position,
                            textual,
                            recency,
                        },
                    });
                }
            }
        }
        self.stats.postings_scanned += scanned;
        for e in pending {
            self.push(e.key, e.item);
        }
    }
}

/// Exact top-k by best-first traversal of the index.
pub fn top_k(
    index: &BigIndex,
    query: &ServiceQuery,
    params: &ScoringParams,
) -> Result<TopK, QueryError> {
    let mut t = Traversal::new(index, query, params, Some(query.k))?;
    let mut candidates = Vec::with_capacity(query.k);
    while let Some((object_id, score)) = t.next(index) {
        candidates.push(RankedCandidate {
            object_id,
            score,
            rank: candidates.len() + 1,
        });
    }
    Ok(TopK {
        candidates,
        stats: t.stats,
    })
}

/// Every positive-score object, best first, ties by id ascending.
pub fn oracle_ranking<'a, I>(
    objects: I,
    query: &ServiceQuery,
    params: &ScoringParams,
) -> Result<TopK, QueryError>
where
    I: IntoIterator<Item = &'a SpatialTextualObject>,
{
    check(query, params)?;
    let mut stats = QueryStats::default();
    let mut scored = Vec::new();
    for o in objects {
        stats.distance_computations += 1;
        stats.postings_scanned += 1;
        let s = combined_score(query, o, params)?;
        if s.total > 0.0 {
            scored.push((o.id.clone(), s));
        }
    }
    scored.sort_by(|a, b| b.1.total.total_cmp(&a.1.total).then_with(|| a.0.cmp(&b.0)));
    let candidates = scored
        .into_iter()
        .enumerate()
        .map(|(i, (object_id, score))| RankedCandidate {
            object_id,
            score,
            rank: i + 1,
        })
        .collect();
    Ok(TopK { candidates, stats })
}

/// Brute-force reference: score everything, sort, truncate to `query.k`.
pub fn top_k_oracle<'a, I>(
    objects: I,
    query: &ServiceQuery,
    params: &ScoringParams,
) -> Result<TopK, QueryError>
where
    I: IntoIterator<Item = &'a SpatialTextualObject>,
{
    let mut r = oracle_ranking(objects, query, params)?;
    r.candidates.truncate(query.k);
    Ok(r)
}

/// Resumable ranking: yields candidates one at a time in exact rank order
/// with no fixed k. Bound to the index generation it was opened at.
#[derive(Debug, Clone)]
pub struct QueryCursor {
    traversal: Traversal,
    generation: u64,
    buffer: VecDeque<RankedCandidate>,
    batch: usize,
    next_rank: usize,
    exhausted: bool,
}

pub fn open_cursor(
    index: &BigIndex,
    query: &ServiceQuery,
    params: &ScoringParams,
) -> Result<QueryCursor, QueryError> {
    Ok(QueryCursor {
        traversal: Traversal::new(index, query, params, None)?,
        generation: index.generation(),
        buffer: VecDeque::new(),
        batch: (2 * query.k).max(16),
        next_rank: 1,
        exhausted: false,
    })
}

impl QueryCursor {
    /// `Ok(None)` means exhausted; it stays exhausted.
    pub fn next(&mut self, index: &BigIndex) -> Result<Option<RankedCandidate>, QueryError> {
        if index.generation() != self.generation {
            return Err(QueryError::CursorInvalidated);
        }
        if self.buffer.is_empty() && !self.exhausted {
            while self.buffer.len() < self.batch {
                match self.traversal.next(index) {
                    Some((object_id, score)) => {
                        self.buffer.push_back(RankedCandidate {
                            object_id,
                            score,
                            rank: self.next_rank,
                        });
                        self.next_rank += 1;
                    }
                    None => {
                        self.exhausted = true;
                        break;
                    }
                }
            }
        }
        Ok(self.buffer.pop_front())
    }

    /// Upper bound on the score of anything this cursor has not emitted yet.
    pub fn threshold(&self) -> f64 {
        self.buffer
            .front()
            .map_or(self.traversal.frontier_bound(), |c| c.score.total)
    }

    pub fn stats(&self) -> QueryStats {
        self.traversal.stats
    }

    pub fn query(&self) -> &ServiceQuery {
        &self.traversal.query
    }

    pub fn params(&self) -> &ScoringParams {
        &self.traversal.params
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }
}
