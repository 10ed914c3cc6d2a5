use super::BigTreeNode;
use crate::model::ServiceQuery;
use crate::scoring::{combine, coverage, recency_score, spatial_from_distance, ScoringParams};

/// Upper bound on the score of any object stored under `node`.
///
/// Uses the minimum distance from the query point to the cell, the
/// fraction of query keywords that occur anywhere in the subtree, and the
/// newest timestamp in the subtree. Returns 0 for an empty node.
pub fn node_upper_bound(node: &BigTreeNode, query: &ServiceQuery, params: &ScoringParams) -> f64 {
    if node.is_empty() || query.keywords.is_empty() {
        return 0.0;
    }
    let spatial = spatial_from_distance(
        node.bounds().min_distance_lower_bound_m(query.location),
        params.max_distance_m,
    );
    let present = query
        .keywords
        .iter()
        .filter(|k| node.keyword_summary().contains_key(*k))
        .count();
    let textual = coverage(present, query.keywords.len());
    let recency = recency_score(
        query.issued_at,
        node.max_positioned_at(),
        params.lambda_base,
        params.recency_unit_s,
    );
    combine(params.alpha, spatial, textual, recency)
}
