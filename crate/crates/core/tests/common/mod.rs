#![allow(dead_code)]

use crowdserve::geo::GeoRect;
use crowdserve::{GeoPoint, ScoringParams, ServiceQuery, SpatialTextualObject, Timestamp, TopK};
use rand::Rng;

pub const REGION: GeoRect = GeoRect {
    min_lat: 40.0,
    max_lat: 41.0,
    min_lon: -74.5,
    max_lon: -73.5,
};

pub const VOCAB: usize = 40;

/// Skewed toward low indices so a few keywords are common.
pub fn keyword<R: Rng>(rng: &mut R) -> String {
    let u: f64 = rng.random();
    format!("k{:02}", (u * u * VOCAB as f64) as usize)
}

pub fn point_in<R: Rng>(rng: &mut R, r: GeoRect) -> GeoPoint {
    GeoPoint::new(
        rng.random_range(r.min_lat..=r.max_lat),
        rng.random_range(r.min_lon..=r.max_lon),
    )
    .unwrap()
}

pub fn random_object<R: Rng>(
    rng: &mut R,
    id: String,
    region: GeoRect,
    latest: Timestamp,
) -> SpatialTextualObject {
    let n = rng.random_range(1..=4);
    let skills: Vec<String> = (0..n).map(|_| keyword(rng)).collect();
    SpatialTextualObject::new(
        id,
        skills,
        point_in(rng, region),
        rng.random_range(0..=latest),
    )
    .unwrap()
}

pub fn random_objects<R: Rng>(
    rng: &mut R,
    n: usize,
    region: GeoRect,
    latest: Timestamp,
) -> Vec<SpatialTextualObject> {
    (0..n)
        .map(|i| random_object(rng, format!("o{i:06}"), region, latest))
        .collect()
}

/// Random query issued at `at`, with weights and radius varied per call.
pub fn random_query<R: Rng>(
    rng: &mut R,
    region: GeoRect,
    at: Timestamp,
) -> (ServiceQuery, ScoringParams) {
    let n = rng.random_range(1..=3);
    let kws: Vec<String> = (0..n).map(|_| keyword(rng)).collect();
    let alpha = [0.0, 0.25, 0.5, 0.75, 1.0][rng.random_range(0..5)];
    let lambda = [1.5, 2.0, 4.0][rng.random_range(0..3)];
    let dmax = [2_000.0, 10_000.0, 50_000.0][rng.random_range(0..3)];
    let k = rng.random_range(1..=40);
    let q = ServiceQuery::new(kws, point_in(rng, region), at, k)
        .unwrap()
        .with_weights(alpha, lambda, dmax)
        .unwrap();
    let p = ScoringParams::for_query(&q);
    (q, p)
}

/// Same ids in the same order and scores within `tol`.
pub fn compare(got: &TopK, want: &TopK, tol: f64) -> Result<(), String> {
    if got.candidates.len() != want.candidates.len() {
        return Err(format!(
            "lengths {} vs {}",
            got.candidates.len(),
            want.candidates.len()
        ));
    }
    for (a, b) in got.candidates.iter().zip(&want.candidates) {
        if a.object_id != b.object_id || a.rank != b.rank {
            return Err(format!(
                "rank {}: {} vs {}",
                b.rank, a.object_id, b.object_id
            ));
        }
        if (a.score.total - b.score.total).abs() > tol {
            return Err(format!(
                "{}: {} vs {}",
                a.object_id, a.score.total, b.score.total
            ));
        }
    }
    Ok(())
}
