//! Hybrid spatial-textual index over moving volunteers.
//!
//! A region quadtree over a fixed rectangle. Leaves keep one posting list
//! per skill keyword plus one list of every resident object, each sorted by
//! `positioned_at` descending (ties by id). Every node, internal or leaf,
//! carries a summary of its subtree: object count, newest timestamp, and a
//! per-keyword `(count, newest timestamp)` map. The query processor derives
//! score upper bounds from these summaries and the node rectangle.
//!
//! Mutations take `&mut self` and bump a generation counter so that open
//! query cursors can detect that the index moved under them.

mod audit;
mod bound;

use std::cmp::Reverse;
use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::geo::GeoRect;
use crate::model::{GeoPoint, SpatialTextualObject, Timestamp};
use crate::scoring::{recency_score, ScoringParams};

pub use audit::AuditError;
pub use bound::node_upper_bound;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("object {0} is already indexed")]
    DuplicateId(String),
    #[error("object {0} not found")]
    NotFound(String),
    #[error("stale update for {id}: {new} is older than {current}")]
    StaleUpdate {
        id: String,
        current: Timestamp,
        new: Timestamp,
    },
    #[error("position {0} lies outside the indexed region")]
    OutsideBounds(GeoPoint),
    #[error("invalid index configuration: {0}")]
    BadConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IndexConfig {
    pub bounds: GeoRect,
    pub leaf_capacity: usize,
    pub max_depth: u32,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            bounds: GeoRect::WORLD,
            leaf_capacity: 64,
            max_depth: 16,
        }
    }
}

impl IndexConfig {
    fn validate(&self) -> Result<(), IndexError> {
        if !self.bounds.is_valid() {
            return Err(IndexError::BadConfig(
                "bounds must be a non-empty lat/lon rectangle",
            ));
        }
        if self.leaf_capacity < 2 {
            return Err(IndexError::BadConfig("leaf capacity must be at least 2"));
        }
        if self.max_depth > 40 {
            return Err(IndexError::BadConfig("max depth must be at most 40"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeywordSummary {
    pub count: usize,
    pub max_positioned_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostingEntry {
    pub object_id: String,
    pub positioned_at: Timestamp,
    pub position: GeoPoint,
}

impl PostingEntry {
    fn of(o: &SpatialTextualObject) -> Self {
        PostingEntry {
            object_id: o.id.clone(),
            positioned_at: o.positioned_at,
            position: o.position,
        }
    }

    fn sort_key(&self) -> (Reverse<Timestamp>, &str) {
        (Reverse(self.positioned_at), self.object_id.as_str())
    }
}

fn insert_sorted(list: &mut Vec<PostingEntry>, entry: PostingEntry) {
    let at = list
        .binary_search_by(|e| e.sort_key().cmp(&entry.sort_key()))
        .unwrap_or_else(|i| i);
    list.insert(at, entry);
}

fn remove_sorted(list: &mut Vec<PostingEntry>, id: &str, ts: Timestamp) -> Option<PostingEntry> {
    let key = (Reverse(ts), id);
    list.binary_search_by(|e| e.sort_key().cmp(&key))
        .ok()
        .map(|i| list.remove(i))
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Leaf {
    postings: HashMap<String, Vec<PostingEntry>>,
    recency: Vec<PostingEntry>,
}

#[derive(Debug, Clone)]
enum NodeBody {
    Internal([NodeId; 4]),
    Leaf(Leaf),
}

/// A quadtree cell and the summary of everything below it.
#[derive(Debug, Clone)]
pub struct BigTreeNode {
    bounds: GeoRect,
    depth: u32,
    parent: Option<NodeId>,
    count: usize,
    max_positioned_at: Timestamp,
    keyword_summary: HashMap<String, KeywordSummary>,
    body: NodeBody,
}

impl BigTreeNode {
    fn new_leaf(bounds: GeoRect, depth: u32, parent: Option<NodeId>) -> Self {
        BigTreeNode {
            bounds,
            depth,
            parent,
            count: 0,
            max_positioned_at: Timestamp::MIN,
            keyword_summary: HashMap::new(),
            body: NodeBody::Leaf(Leaf::default()),
        }
    }

    pub fn bounds(&self) -> GeoRect {
        self.bounds
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Newest `positioned_at` in the subtree, `Timestamp::MIN` when empty.
    pub fn max_positioned_at(&self) -> Timestamp {
        self.max_positioned_at
    }

    pub fn keyword_summary(&self) -> &HashMap<String, KeywordSummary> {
        &self.keyword_summary
    }

    pub fn children(&self) -> Option<[NodeId; 4]> {
        match self.body {
            NodeBody::Internal(c) => Some(c),
            NodeBody::Leaf(_) => None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.body, NodeBody::Leaf(_))
    }

    /// Posting list for `keyword` (empty on internal nodes).
    pub fn postings(&self, keyword: &str) -> &[PostingEntry] {
        match &self.body {
            NodeBody::Leaf(l) => l.postings.get(keyword).map(Vec::as_slice).unwrap_or(&[]),
            NodeBody::Internal(_) => &[],
        }
    }

    /// Every object stored in this leaf, newest first (empty on internal nodes).
    pub fn recency_list(&self) -> &[PostingEntry] {
        match &self.body {
            NodeBody::Leaf(l) => &l.recency,
            NodeBody::Internal(_) => &[],
        }
    }

    fn note_added(&mut self, obj: &SpatialTextualObject) {
        self.count += 1;
        self.max_positioned_at = self.max_positioned_at.max(obj.positioned_at);
        for s in &obj.skills {
            let e = self
                .keyword_summary
                .entry(s.clone())
                .or_insert(KeywordSummary {
                    count: 0,
                    max_positioned_at: Timestamp::MIN,
                });
            e.count += 1;
            e.max_positioned_at = e.max_positioned_at.max(obj.positioned_at);
        }
    }

    fn leaf_add(&mut self, obj: &SpatialTextualObject) {
        self.note_added(obj);
        let NodeBody::Leaf(leaf) = &mut self.body else {
            unreachable!("leaf_add on internal node")
        };
        let entry = PostingEntry::of(obj);
        for s in &obj.skills {
            insert_sorted(leaf.postings.entry(s.clone()).or_default(), entry.clone());
        }
        insert_sorted(&mut leaf.recency, entry);
    }
}

/// The index. See the module docs for layout.
#[derive(Debug, Clone)]
pub struct BigIndex {
    config: IndexConfig,
    nodes: Vec<Option<BigTreeNode>>,
    free: Vec<NodeId>,
    root: NodeId,
    objects: HashMap<String, SpatialTextualObject>,
    locator: HashMap<String, NodeId>,
    generation: u64,
}

impl Default for BigIndex {
    fn default() -> Self {
        Self::new(IndexConfig::default()).expect("default config is valid")
    }
}

impl BigIndex {
    pub fn new(config: IndexConfig) -> Result<Self, IndexError> {
        config.validate()?;
        Ok(BigIndex {
            config,
            nodes: vec![Some(BigTreeNode::new_leaf(config.bounds, 0, None))],
            free: Vec::new(),
            root: 0,
            objects: HashMap::new(),
            locator: HashMap::new(),
            generation: 0,
        })
    }

    /// Builds an index by inserting `objects` in id order.
    pub fn bulk_load<I>(config: IndexConfig, objects: I) -> Result<Self, IndexError>
    where
        I: IntoIterator<Item = SpatialTextualObject>,
    {
        let mut all: Vec<_> = objects.into_iter().collect();
        all.sort_by(|a, b| a.id.cmp(&b.id));
        let mut index = Self::new(config)?;
        for o in all {
            index.insert(o)?;
        }
        Ok(index)
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SpatialTextualObject> {
        self.objects.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.objects.contains_key(id)
    }

    pub fn objects(&self) -> impl Iterator<Item = &SpatialTextualObject> {
        self.objects.values()
    }

    /// Objects sorted by id.
    pub fn sorted_objects(&self) -> Vec<SpatialTextualObject> {
        let mut v: Vec<_> = self.objects.values().cloned().collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }

    /// Incremented by every successful mutation.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &BigTreeNode {
        self.nodes[id].as_ref().expect("live node id")
    }

    fn node_mut(&mut self, id: NodeId) -> &mut BigTreeNode {
        self.nodes[id].as_mut().expect("live node id")
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.as_ref().map(|_| i))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len() - self.free.len()
    }

    /// Leaf currently holding `id`.
    pub fn leaf_of(&self, id: &str) -> Option<NodeId> {
        self.locator.get(id).copied()
    }

    /// Ids of all objects stored under `node`.
    pub fn subtree_object_ids(&self, node: NodeId) -> Vec<String> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            let n = self.node(n);
            match &n.body {
                NodeBody::Internal(c) => stack.extend_from_slice(c),
                NodeBody::Leaf(l) => out.extend(l.recency.iter().map(|e| e.object_id.clone())),
            }
        }
        out
    }

    fn alloc(&mut self, node: BigTreeNode) -> NodeId {
        if let Some(id) = self.free.pop() {
            self.nodes[id] = Some(node);
            id
        } else {
            self.nodes.push(Some(node));
            self.nodes.len() - 1
        }
    }

    /// Leaf whose cell `p` descends into.
    pub fn locate_leaf(&self, p: GeoPoint) -> NodeId {
        let mut cur = self.root;
        loop {
            let n = self.node(cur);
            match n.body {
                NodeBody::Internal(c) => cur = c[n.bounds.quadrant_of(p)],
                NodeBody::Leaf(_) => return cur,
            }
        }
    }

    pub fn insert(&mut self, obj: SpatialTextualObject) -> Result<(), IndexError> {
        if self.objects.contains_key(&obj.id) {
            return Err(IndexError::DuplicateId(obj.id));
        }
        if !self.config.bounds.contains(obj.position) {
            return Err(IndexError::OutsideBounds(obj.position));
        }
        let mut cur = self.root;
        loop {
            let node = self.node_mut(cur);
            match node.body {
                NodeBody::Internal(c) => {
                    node.note_added(&obj);
                    cur = c[node.bounds.quadrant_of(obj.position)];
                }
                NodeBody::Leaf(_) => {
                    node.leaf_add(&obj);
                    break;
                }
            }
        }
        self.locator.insert(obj.id.clone(), cur);
        self.objects.insert(obj.id.clone(), obj);
        self.maybe_split(cur);
        self.generation += 1;
        Ok(())
    }

    fn maybe_split(&mut self, leaf_id: NodeId) {
        let (count, depth) = {
            let n = self.node(leaf_id);
            (n.count, n.depth)
        };
        if count <= self.config.leaf_capacity || depth >= self.config.max_depth {
            return;
        }
        let node = self.node_mut(leaf_id);
        let bounds = node.bounds;
        let NodeBody::Leaf(leaf) = std::mem::replace(&mut node.body, NodeBody::Internal([0; 4]))
        else {
            unreachable!()
        };
        let mut kids = [0; 4];
        for (q, kid) in kids.iter_mut().enumerate() {
            *kid = self.alloc(BigTreeNode::new_leaf(
                bounds.quadrant(q),
                depth + 1,
                Some(leaf_id),
            ));
        }
        self.node_mut(leaf_id).body = NodeBody::Internal(kids);
        for e in leaf.recency {
            let child = kids[bounds.quadrant_of(e.position)];
            let obj = &self.objects[&e.object_id];
            let n = self.nodes[child].as_mut().expect("fresh child");
            n.leaf_add(obj);
            self.locator.insert(e.object_id, child);
        }
        for kid in kids {
            self.maybe_split(kid);
        }
    }

    pub fn remove(&mut self, id: &str) -> Result<SpatialTextualObject, IndexError> {
        let leaf_id = self
            .locator
            .remove(id)
            .ok_or_else(|| IndexError::NotFound(id.to_string()))?;
        let obj = self.objects.remove(id).expect("locator and objects agree");

        {
            let node = self.node_mut(leaf_id);
            let NodeBody::Leaf(leaf) = &mut node.body else {
                unreachable!("locator points at a leaf")
            };
            remove_sorted(&mut leaf.recency, id, obj.positioned_at);
            for s in &obj.skills {
                let list = leaf.postings.get_mut(s).expect("posting list for skill");
                remove_sorted(list, id, obj.positioned_at);
                if list.is_empty() {
                    leaf.postings.remove(s);
                }
            }
            let newest = leaf
                .recency
                .first()
                .map_or(Timestamp::MIN, |e| e.positioned_at);
            let per_kw: Vec<_> = obj
                .skills
                .iter()
                .map(|s| {
                    (
                        s.clone(),
                        leaf.postings.get(s).map(|l| (l.len(), l[0].positioned_at)),
                    )
                })
                .collect();
            node.count -= 1;
            node.max_positioned_at = newest;
            for (s, v) in per_kw {
                match v {
                    Some((count, max_positioned_at)) => {
                        node.keyword_summary.insert(
                            s,
                            KeywordSummary {
                                count,
                                max_positioned_at,
                            },
                        );
                    }
                    None => {
                        node.keyword_summary.remove(&s);
                    }
                }
            }
        }

        let mut cur = self.node(leaf_id).parent;
        while let Some(p) = cur {
            self.refresh_internal_after_removal(p, &obj.skills);
            cur = self.node(p).parent;
        }

        let mut cur = self.node(leaf_id).parent;
        while let Some(p) = cur {
            if !self.try_merge(p) {
                break;
            }
            cur = self.node(p).parent;
        }
        self.generation += 1;
        Ok(obj)
    }

    fn refresh_internal_after_removal(&mut self, id: NodeId, skills: &BTreeSet<String>) {
        let kids = self.node(id).children().expect("ancestor is internal");
        let newest = kids
            .iter()
            .map(|&k| self.node(k).max_positioned_at)
            .max()
            .unwrap_or(Timestamp::MIN);
        let per_kw: Vec<(String, Option<Timestamp>)> = skills
            .iter()
            .map(|s| {
                let m = kids
                    .iter()
                    .filter_map(|&k| self.node(k).keyword_summary.get(s))
                    .map(|ks| ks.max_positioned_at)
                    .max();
                (s.clone(), m)
            })
            .collect();
        let node = self.node_mut(id);
        node.count -= 1;
        node.max_positioned_at = newest;
        for (s, m) in per_kw {
            let entry = node.keyword_summary.get_mut(&s).expect("summary for skill");
            entry.count -= 1;
            match m {
                Some(ts) if entry.count > 0 => entry.max_positioned_at = ts,
                _ => {
                    debug_assert_eq!(entry.count, 0);
                    node.keyword_summary.remove(&s);
                }
            }
        }
    }

    /// Collapses `id`'s four leaf children into `id` when they jointly hold
    /// at most half a leaf's capacity.
    fn try_merge(&mut self, id: NodeId) -> bool {
        let node = self.node(id);
        let Some(kids) = node.children() else {
            return false;
        };
        if node.count > self.config.leaf_capacity / 2
            || !kids.iter().all(|&k| self.node(k).is_leaf())
        {
            return false;
        }
        let mut merged = Leaf::default();
        for &k in &kids {
            let child = self.nodes[k].take().expect("live child");
            self.free.push(k);
            let NodeBody::Leaf(l) = child.body else {
                unreachable!()
            };
            for (kw, list) in l.postings {
                merged.postings.entry(kw).or_default().extend(list);
            }
            merged.recency.extend(l.recency);
        }
        for list in merged.postings.values_mut() {
            list.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        }
        merged
            .recency
            .sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        for e in &merged.recency {
            self.locator.insert(e.object_id.clone(), id);
        }
        self.node_mut(id).body = NodeBody::Leaf(merged);
        true
    }

    /// Moves an object. Stays in place when the new position falls in the
    /// same leaf; otherwise the object is re-inserted.
    pub fn update_location(
        &mut self,
        id: &str,
        position: GeoPoint,
        positioned_at: Timestamp,
    ) -> Result<(), IndexError> {
        let current = self
            .objects
            .get(id)
            .ok_or_else(|| IndexError::NotFound(id.to_string()))?;
        if positioned_at < current.positioned_at {
            return Err(IndexError::StaleUpdate {
                id: id.to_string(),
                current: current.positioned_at,
                new: positioned_at,
            });
        }
        if !position.is_valid() || !self.config.bounds.contains(position) {
            return Err(IndexError::OutsideBounds(position));
        }
        let leaf_id = self.locator[id];
        if self.locate_leaf(position) != leaf_id {
            let mut obj = self.remove(id)?;
            obj.position = position;
            obj.positioned_at = positioned_at;
            return self.insert(obj);
        }

        let obj = self.objects.get_mut(id).expect("checked above");
        let old_ts = obj.positioned_at;
        obj.position = position;
        obj.positioned_at = positioned_at;
        let obj = obj.clone();
        let entry = PostingEntry::of(&obj);

        let node = self.node_mut(leaf_id);
        let NodeBody::Leaf(leaf) = &mut node.body else {
            unreachable!()
        };
        remove_sorted(&mut leaf.recency, id, old_ts).expect("entry present");
        insert_sorted(&mut leaf.recency, entry.clone());
        for s in &obj.skills {
            let list = leaf.postings.get_mut(s).expect("posting list for skill");
            remove_sorted(list, id, old_ts).expect("entry present");
            insert_sorted(list, entry.clone());
        }

        // Timestamps only move forward, so ancestor maxima can only grow.
        let mut cur = Some(leaf_id);
        while let Some(n) = cur {
            let node = self.node_mut(n);
            node.max_positioned_at = node.max_positioned_at.max(positioned_at);
            for s in &obj.skills {
                let ks = node.keyword_summary.get_mut(s).expect("summary for skill");
                ks.max_positioned_at = ks.max_positioned_at.max(positioned_at);
            }
            cur = node.parent;
        }
        self.generation += 1;
        Ok(())
    }

    /// Replaces an object's skill set, keeping its position and timestamp.
    pub fn update_skills(&mut self, id: &str, skills: BTreeSet<String>) -> Result<(), IndexError> {
        if !self.objects.contains_key(id) {
            return Err(IndexError::NotFound(id.to_string()));
        }
        let mut obj = self.remove(id)?;
        obj.skills = skills;
        self.insert(obj)
    }

    /// Drops objects whose recency factor at `now` has fallen below
    /// `threshold`. Returns the removed ids in ascending order.
    pub fn compact(
        &mut self,
        now: Timestamp,
        params: &ScoringParams,
        threshold: f64,
    ) -> Vec<String> {
        let mut stale: Vec<String> = self
            .objects
            .values()
            .filter(|o| {
                recency_score(
                    now,
                    o.positioned_at,
                    params.lambda_base,
                    params.recency_unit_s,
                ) < threshold
            })
            .map(|o| o.id.clone())
            .collect();
        stale.sort();
        for id in &stale {
            self.remove(id).expect("listed from live objects");
        }
        stale
    }
}

/// Recency threshold used by [`BigIndex::compact`] callers.
pub const COMPACT_RECENCY_THRESHOLD: f64 = 1e-4;
