//! Full-tree consistency check: recomputes every summary from the stored
//! objects and compares it with what the tree holds.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::{BigIndex, KeywordSummary, NodeBody, NodeId};
use crate::model::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("index audit failed at node {node}: {reason}")]
pub struct AuditError {
    pub node: NodeId,
    pub reason: String,
}

struct Recomputed {
    count: usize,
    max_ts: Timestamp,
    keywords: HashMap<String, KeywordSummary>,
}

impl BigIndex {
    pub fn audit(&self) -> Result<(), AuditError> {
        let mut seen = HashSet::new();
        let root = self.walk(self.root, None, &mut seen)?;
        let fail = |reason: String| AuditError {
            node: self.root,
            reason,
        };
        if root.count != self.objects.len() || seen.len() != self.objects.len() {
            return Err(fail(format!(
                "tree holds {} objects, {} distinct, map holds {}",
                root.count,
                seen.len(),
                self.objects.len()
            )));
        }
        if self.locator.len() != self.objects.len() {
            return Err(fail("locator size differs from object map".into()));
        }
        let live = self.node_ids().count();
        if live != self.node_count() {
            return Err(fail("free list out of sync".into()));
        }
        Ok(())
    }

    fn walk(
        &self,
        id: NodeId,
        parent: Option<NodeId>,
        seen: &mut HashSet<String>,
    ) -> Result<Recomputed, AuditError> {
        let node = self.node(id);
        let fail = |reason: String| AuditError { node: id, reason };
        if node.parent != parent {
            return Err(fail(format!(
                "parent link {:?}, expected {:?}",
                node.parent, parent
            )));
        }
        let mut acc = Recomputed {
            count: 0,
            max_ts: Timestamp::MIN,
            keywords: HashMap::new(),
        };
        match &node.body {
            NodeBody::Internal(kids) => {
                if node.depth >= self.config.max_depth {
                    return Err(fail("internal node at max depth".into()));
                }
                for (q, &k) in kids.iter().enumerate() {
                    let child = self.node(k);
                    if child.bounds != node.bounds.quadrant(q) || child.depth != node.depth + 1 {
                        return Err(fail(format!("child {k} has wrong geometry")));
                    }
                    let sub = self.walk(k, Some(id), seen)?;
                    acc.count += sub.count;
                    acc.max_ts = acc.max_ts.max(sub.max_ts);
                    for (kw, s) in sub.keywords {
                        let e = acc.keywords.entry(kw).or_insert(KeywordSummary {
                            count: 0,
                            max_positioned_at: Timestamp::MIN,
                        });
                        e.count += s.count;
                        e.max_positioned_at = e.max_positioned_at.max(s.max_positioned_at);
                    }
                }
            }
            NodeBody::Leaf(leaf) => {
                let sorted = |l: &[super::PostingEntry]| {
                    l.windows(2).all(|w| w[0].sort_key() < w[1].sort_key())
                };
                if !sorted(&leaf.recency) {
                    return Err(fail("recency list out of order".into()));
                }
                for e in &leaf.recency {
                    let obj = self
                        .objects
                        .get(&e.object_id)
                        .ok_or_else(|| fail(format!("unknown object {}", e.object_id)))?;
                    if !seen.insert(e.object_id.clone()) {
                        return Err(fail(format!("object {} stored twice", e.object_id)));
                    }
                    if self.locator.get(&e.object_id) != Some(&id) {
                        return Err(fail(format!("locator disagrees for {}", e.object_id)));
                    }
                    if e.positioned_at != obj.positioned_at || e.position != obj.position {
                        return Err(fail(format!("stale posting for {}", e.object_id)));
                    }
                    if !node.bounds.contains(obj.position) {
                        return Err(fail(format!("{} lies outside the cell", e.object_id)));
                    }
                    acc.count += 1;
                    acc.max_ts = acc.max_ts.max(obj.positioned_at);
                    for s in &obj.skills {
                        let e = acc.keywords.entry(s.clone()).or_insert(KeywordSummary {
                            count: 0,
                            max_positioned_at: Timestamp::MIN,
                        });
                        e.count += 1;
                        e.max_positioned_at = e.max_positioned_at.max(obj.positioned_at);
                    }
                }
                if node.count > self.config.leaf_capacity && node.depth < self.config.max_depth {
                    return Err(fail("leaf over capacity above max depth".into()));
                }
                let mut lists = 0usize;
                for (kw, list) in &leaf.postings {
                    if list.is_empty() || !sorted(list) {
                        return Err(fail(format!("posting list {kw} empty or out of order")));
                    }
                    for e in list {
                        let holds = self
                            .objects
                            .get(&e.object_id)
                            .is_some_and(|o| o.skills.contains(kw));
                        if !holds || self.locator.get(&e.object_id) != Some(&id) {
                            return Err(fail(format!("bad posting {} under {kw}", e.object_id)));
                        }
                    }
                    lists += list.len();
                }
                let expected: usize = acc.keywords.values().map(|s| s.count).sum();
                if lists != expected {
                    return Err(fail("posting lists miss objects".into()));
                }
            }
        }
        if acc.count != node.count {
            return Err(fail(format!(
                "count {} but recomputed {}",
                node.count, acc.count
            )));
        }
        if acc.max_ts != node.max_positioned_at {
            return Err(fail("max timestamp mismatch".into()));
        }
        if acc.keywords != node.keyword_summary {
            return Err(fail("keyword summary mismatch".into()));
        }
        Ok(acc)
    }
}
