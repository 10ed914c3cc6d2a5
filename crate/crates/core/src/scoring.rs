//! Temporal spatial-keyword scoring.
//!
//! A volunteer's score for a query is
//!
//! ```text
//! S = [α·S_l + (1 − α)·S_ψ] · S_t
//! ```
//!
//! where `S_l` is linear distance decay clamped at `max_distance_m`, `S_ψ`
//! is the fraction of query keywords the volunteer offers, and
//! `S_t = λ^(−Δ)` discounts stale position reports, with `Δ` counted in
//! `recency_unit_s`-second units.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::haversine_m;
use crate::model::{GeoPoint, ScoreBreakdown, ServiceQuery, SpatialTextualObject, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoringError {
    #[error("query keyword set is empty")]
    EmptyQuery,
    #[error("invalid scoring parameter: {0}")]
    BadParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringParams {
    pub alpha: f64,
    pub lambda_base: f64,
    pub max_distance_m: f64,
    pub recency_unit_s: f64,
}

impl Default for ScoringParams {
    fn default() -> Self {
        ScoringParams {
            alpha: ServiceQuery::DEFAULT_ALPHA,
            lambda_base: ServiceQuery::DEFAULT_LAMBDA,
            max_distance_m: ServiceQuery::DEFAULT_MAX_DISTANCE_M,
            recency_unit_s: Self::DEFAULT_RECENCY_UNIT_S,
        }
    }
}

impl ScoringParams {
    /// One hour per decay unit.
    pub const DEFAULT_RECENCY_UNIT_S: f64 = 3600.0;

    /// Parameters taken from the query's own weights, with the default
    /// recency unit.
    pub fn for_query(q: &ServiceQuery) -> Self {
        ScoringParams {
            alpha: q.alpha,
            lambda_base: q.lambda_base,
            max_distance_m: q.max_distance_m,
            recency_unit_s: Self::DEFAULT_RECENCY_UNIT_S,
        }
    }

    pub fn with_recency_unit(mut self, recency_unit_s: f64) -> Self {
        self.recency_unit_s = recency_unit_s;
        self
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ScoringError::BadParams("alpha must lie in [0, 1]"));
        }
        if !(self.lambda_base > 1.0 && self.lambda_base.is_finite()) {
            return Err(ScoringError::BadParams("lambda must be > 1"));
        }
        if !(self.max_distance_m > 0.0 && self.max_distance_m.is_finite()) {
            return Err(ScoringError::BadParams("max distance must be > 0"));
        }
        if !(self.recency_unit_s > 0.0 && self.recency_unit_s.is_finite()) {
            return Err(ScoringError::BadParams("recency unit must be > 0"));
        }
        Ok(())
    }
}

pub fn spatial_score(query_loc: GeoPoint, obj_loc: GeoPoint, max_distance_m: f64) -> f64 {
    spatial_from_distance(haversine_m(query_loc, obj_loc), max_distance_m)
}

/// Linear decay of a distance, clamped to `[0, 1]`.
#[inline]
pub fn spatial_from_distance(distance_m: f64, max_distance_m: f64) -> f64 {
    (1.0 - distance_m / max_distance_m).max(0.0)
}

/// Fraction of query keywords present in the skill set.
pub fn textual_score(
    query_kw: &BTreeSet<String>,
    obj_skills: &BTreeSet<String>,
) -> Result<f64, ScoringError> {
    if query_kw.is_empty() {
        return Err(ScoringError::EmptyQuery);
    }
    let hits = query_kw.iter().filter(|k| obj_skills.contains(*k)).count();
    Ok(coverage(hits, query_kw.len()))
}

#[inline]
pub(crate) fn coverage(hits: usize, query_len: usize) -> f64 {
    hits as f64 / query_len as f64
}

/// `λ^(−Δ)` with `Δ = max(0, query_t − obj_t) / recency_unit_s`.
pub fn recency_score(
    query_t: Timestamp,
    obj_t: Timestamp,
    lambda_base: f64,
    recency_unit_s: f64,
) -> f64 {
    let delta = query_t.saturating_sub(obj_t).max(0) as f64 / recency_unit_s;
    lambda_base.powf(-delta)
}

/// The weighted combination shared by exact scores and index bounds, so
/// both go through identical float operations.
#[inline]
pub fn combine(alpha: f64, spatial: f64, textual: f64, recency: f64) -> f64 {
    (alpha * spatial + (1.0 - alpha) * textual) * recency
}

pub fn combined_score(
    query: &ServiceQuery,
    obj: &SpatialTextualObject,
    params: &ScoringParams,
) -> Result<ScoreBreakdown, ScoringError> {
    let textual = textual_score(&query.keywords, &obj.skills)?;
    let spatial = spatial_score(query.location, obj.position, params.max_distance_m);
    let recency = recency_score(
        query.issued_at,
        obj.positioned_at,
        params.lambda_base,
        params.recency_unit_s,
    );
    Ok(ScoreBreakdown {
        spatial,
        textual,
        recency,
        total: combine(params.alpha, spatial, textual, recency),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::canonical_tokens;
    use proptest::prelude::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint { lat, lon }
    }

    fn kw(xs: &[&str]) -> BTreeSet<String> {
        canonical_tokens(xs)
    }

    #[test]
    fn spatial_examples() {
        assert_eq!(spatial_score(pt(1.0, 1.0), pt(1.0, 1.0), 10_000.0), 1.0);
        let a = pt(12.0, 30.0);
        let b = pt(12.3, 30.4);
        let d = haversine_m(a, b);
        assert_eq!(spatial_score(a, b, d), 0.0);
        assert_eq!(spatial_score(a, b, d / 2.0), 0.0);
        // Equatorial arc: R·Δλ = 5003.771699005142 m.
        let s = spatial_score(pt(0.0, 0.0), pt(0.0, 0.045), 10_000.0);
        assert!((s - 0.4996228300994858).abs() < 1e-9, "{s}");
    }

    #[test]
    fn textual_examples() {
        assert_eq!(
            textual_score(&kw(&["repair"]), &kw(&["repair", "driving"])),
            Ok(1.0)
        );
        assert_eq!(
            textual_score(&kw(&["repair", "firstaid"]), &kw(&["repair"])),
            Ok(0.5)
        );
        assert_eq!(textual_score(&kw(&["x", "y", "z"]), &kw(&[])), Ok(0.0));
        assert_eq!(
            textual_score(&kw(&[]), &kw(&["a"])),
            Err(ScoringError::EmptyQuery)
        );
    }

    #[test]
    fn recency_examples() {
        assert_eq!(recency_score(100, 100, 2.0, 3600.0), 1.0);
        assert_eq!(recency_score(3600, 0, 2.0, 3600.0), 0.5);
        assert_eq!(recency_score(0, 3 * 3600, 2.0, 3600.0), 1.0);
    }

    fn obj(skills: &[&str], p: GeoPoint, t: i64) -> SpatialTextualObject {
        SpatialTextualObject::new("o", skills, p, t).unwrap()
    }

    #[test]
    fn combined_examples() {
        let here = pt(10.0, 10.0);
        let q = ServiceQuery::new(["cooking"], here, 0, 1).unwrap();
        let p = ScoringParams {
            alpha: 1.0,
            ..Default::default()
        };
        let s = combined_score(&q, &obj(&["repair"], here, 0), &p).unwrap();
        assert_eq!(s.total, 1.0);

        let p = ScoringParams {
            alpha: 0.0,
            ..Default::default()
        };
        let s = combined_score(&q, &obj(&["cooking"], pt(-40.0, 100.0), 0), &p).unwrap();
        assert_eq!(s.total, 1.0);

        // α = 0.5, S_l from the equatorial example, S_ψ = 0.5, λ = 2, Δ = 1 h.
        let q = ServiceQuery::new(["repair", "firstaid"], pt(0.0, 0.0), 3600, 1).unwrap();
        let p = ScoringParams::default();
        let s = combined_score(&q, &obj(&["repair"], pt(0.0, 0.045), 0), &p).unwrap();
        assert_eq!(s.textual, 0.5);
        assert_eq!(s.recency, 0.5);
        assert!((s.total - 0.24990570752487146).abs() < 1e-12, "{}", s.total);
    }

    fn arb_case() -> impl Strategy<Value = (ServiceQuery, SpatialTextualObject, ScoringParams)> {
        let vocab = ["a", "b", "c", "d", "e"];
        (
            prop::sample::subsequence(vocab.to_vec(), 1..=5),
            prop::sample::subsequence(vocab.to_vec(), 1..=5),
            (
                -90.0f64..=90.0,
                -180.0f64..=180.0,
                -90.0f64..=90.0,
                -180.0f64..=180.0,
            ),
            (0i64..100_000, 0i64..100_000),
            (0.0f64..=1.0, 1.0001f64..10.0, 1.0f64..5e6, 1.0f64..10_000.0),
        )
            .prop_map(
                |(qk, sk, (a, b, c, d), (qt, ot), (alpha, lambda, dmax, unit))| {
                    let q = ServiceQuery::new(qk, pt(a, b), qt, 1).unwrap();
                    let o = SpatialTextualObject::new("o", sk, pt(c, d), ot).unwrap();
                    let p = ScoringParams {
                        alpha,
                        lambda_base: lambda,
                        max_distance_m: dmax,
                        recency_unit_s: unit,
                    };
                    (q, o, p)
                },
            )
    }

    proptest! {
        #[test]
        fn components_bounded((q, o, p) in arb_case()) {
            let s = combined_score(&q, &o, &p).unwrap();
            for v in [s.spatial, s.textual, s.recency, s.total] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(s.recency > 0.0 || (q.issued_at - o.positioned_at) as f64 / p.recency_unit_s > 700.0);
            let expect = (p.alpha * s.spatial + (1.0 - p.alpha) * s.textual) * s.recency;
            prop_assert!((s.total - expect).abs() <= 1e-12);
        }

        #[test]
        fn monotone_in_distance((q, o, p) in arb_case(), shift in 0.0f64..5.0) {
            let near = combined_score(&q, &o, &p).unwrap();
            // Move the object away from the query along latitude.
            let dir = if o.position.lat >= q.location.lat { 1.0 } else { -1.0 };
            let lat = (o.position.lat + dir * shift).clamp(-90.0, 90.0);
            let moved = SpatialTextualObject { position: pt(lat, o.position.lon), ..o.clone() };
            if haversine_m(q.location, moved.position) >= haversine_m(q.location, o.position) {
                let far = combined_score(&q, &moved, &p).unwrap();
                prop_assert!(far.total <= near.total);
            }
        }

        #[test]
        fn strictly_decreasing_in_age((q, o, p) in arb_case(), extra in 1i64..100_000) {
            let fresh = combined_score(&q, &o, &p).unwrap();
            let older = SpatialTextualObject { positioned_at: o.positioned_at.min(q.issued_at) - extra, ..o.clone() };
            let older = SpatialTextualObject { positioned_at: older.positioned_at.max(0), ..older };
            let stale = combined_score(&q, &older, &p).unwrap();
            let base = p.alpha * fresh.spatial + (1.0 - p.alpha) * fresh.textual;
            if base > 0.0 && older.positioned_at < o.positioned_at.min(q.issued_at) && stale.total > 0.0 {
                prop_assert!(stale.total < fresh.total || fresh.recency == stale.recency);
            }
            prop_assert!(stale.total <= fresh.total);
        }

        #[test]
        fn textual_decomposes_per_keyword((q, o, _p) in arb_case()) {
            let whole = textual_score(&q.keywords, &o.skills).unwrap();
            let n = q.keywords.len() as f64;
            let parts: f64 = q.keywords.iter()
                .map(|k| textual_score(&BTreeSet::from([k.clone()]), &o.skills).unwrap() / n)
                .sum();
            prop_assert!((whole - parts).abs() < 1e-12);
        }

        #[test]
        fn non_decreasing_in_overlap((q, o, p) in arb_case(), extra in "[a-e]") {
            let before = combined_score(&q, &o, &p).unwrap();
            let mut more = o.clone();
            more.skills.insert(extra);
            let after = combined_score(&q, &more, &p).unwrap();
            prop_assert!(after.total >= before.total);
        }

        #[test]
        fn fresh_data_keeps_weighted_order(
            (q, o1, p) in arb_case(),
            (_, o2, _) in arb_case(),
        ) {
            let fresh = |o: &SpatialTextualObject| SpatialTextualObject { positioned_at: q.issued_at, ..o.clone() };
            let a = combined_score(&q, &fresh(&o1), &p).unwrap();
            let b = combined_score(&q, &fresh(&o2), &p).unwrap();
            let wa = p.alpha * a.spatial + (1.0 - p.alpha) * a.textual;
            let wb = p.alpha * b.spatial + (1.0 - p.alpha) * b.textual;
            prop_assert_eq!(a.total.partial_cmp(&b.total), wa.partial_cmp(&wb));
        }
    }
}
