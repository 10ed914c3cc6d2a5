mod common;

use common::{random_objects, random_query, REGION};
use crowdserve::topk::oracle_ranking;
use crowdserve::{open_cursor, top_k, BigIndex, IndexConfig, QueryError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn cursor_drains_to_the_full_oracle_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let objs = random_objects(&mut rng, 3_000, REGION, 3_600);
    let idx = BigIndex::bulk_load(IndexConfig::default(), objs.clone()).unwrap();
    for _ in 0..40 {
        let at = rng.random_range(3_600..=7_200);
        let (q, p) = random_query(&mut rng, REGION, at);
        let want = oracle_ranking(&objs, &q, &p).unwrap().candidates;
        let mut cur = open_cursor(&idx, &q, &p).unwrap();
        let mut got = Vec::new();
        let mut theta = f64::INFINITY;
        loop {
            let before = cur.threshold();
            assert!(before <= theta, "threshold rose from {theta} to {before}");
            theta = before;
            let Some(c) = cur.next(&idx).unwrap() else {
                break;
            };
            assert!(c.score.total <= before + 1e-12);
            got.push(c);
        }
        assert!(cur.next(&idx).unwrap().is_none());
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(&want) {
            assert_eq!(a.object_id, b.object_id);
            assert_eq!(a.rank, b.rank);
            assert!((a.score.total - b.score.total).abs() <= 1e-9);
        }
        let top = top_k(&idx, &q, &p).unwrap();
        assert_eq!(top.candidates[..], got[..top.candidates.len()]);
    }
}

#[test]
fn selective_queries_touch_few_postings() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let objs = random_objects(&mut rng, 20_000, REGION, 3_600);
    let idx = BigIndex::bulk_load(IndexConfig::default(), objs).unwrap();
    let mut scanned = 0;
    let runs = 50;
    for _ in 0..runs {
        let (mut q, _) = random_query(&mut rng, REGION, 3_600);
        q.k = 5;
        q.max_distance_m = 3_000.0;
        let p = crowdserve::ScoringParams::for_query(&q);
        let r = top_k(&idx, &q, &p).unwrap();
        assert!(r.stats.distance_computations <= r.stats.postings_scanned);
        scanned += r.stats.postings_scanned;
    }
    let mean = scanned as f64 / runs as f64;
    assert!(mean < 20_000.0 * 0.25, "mean postings scanned {mean}");
}

#[test]
fn cursor_rejects_a_mutated_index() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let objs = random_objects(&mut rng, 100, REGION, 10);
    let mut idx = BigIndex::bulk_load(IndexConfig::default(), objs).unwrap();
    let (q, p) = random_query(&mut rng, REGION, 10);
    let mut cur = open_cursor(&idx, &q, &p).unwrap();
    cur.next(&idx).unwrap();
    idx.remove("o000001").unwrap();
    assert_eq!(cur.next(&idx), Err(QueryError::CursorInvalidated));
}
