mod common;

use std::collections::BTreeMap;

use common::{compare, random_object, random_query, REGION};
use crowdserve::geo::GeoRect;
use crowdserve::{top_k, top_k_oracle, BigIndex, IndexConfig, SpatialTextualObject};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check_queries(idx: &BigIndex, rng: &mut ChaCha8Rng, n: usize, at: i64) {
    for _ in 0..n {
        let (q, p) = random_query(rng, REGION, at);
        let got = top_k(idx, &q, &p).unwrap();
        let want = top_k_oracle(idx.objects(), &q, &p).unwrap();
        compare(&got, &want, 1e-9).unwrap();
    }
}

#[test]
fn ten_thousand_inserts_stay_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = IndexConfig {
        leaf_capacity: 16,
        ..IndexConfig::default()
    };
    let mut idx = BigIndex::new(cfg).unwrap();
    for i in 0..10_000 {
        idx.insert(random_object(&mut rng, format!("o{i}"), REGION, 5_000))
            .unwrap();
        if i % 2_500 == 0 {
            idx.audit().unwrap();
        }
    }
    idx.audit().unwrap();
    assert_eq!(idx.len(), 10_000);
    check_queries(&idx, &mut rng, 50, 6_000);
}

#[test]
fn mixed_operations_match_shadow_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = IndexConfig {
        leaf_capacity: 6,
        max_depth: 10,
        ..IndexConfig::default()
    };
    let mut idx = BigIndex::new(cfg).unwrap();
    let mut shadow: BTreeMap<String, SpatialTextualObject> = BTreeMap::new();
    let mut next = 0;
    let mut clock = 0;
    // A tight hot spot forces deep splits and repeated merges.
    let hot = GeoRect::new(40.5, 40.5001, -74.0, -73.9999);
    for step in 0..5_000 {
        clock += 1;
        let region = if rng.random_bool(0.3) { hot } else { REGION };
        match rng.random_range(0..10) {
            0..=3 => {
                let o = random_object(&mut rng, format!("o{next}"), region, clock);
                next += 1;
                shadow.insert(o.id.clone(), o.clone());
                idx.insert(o).unwrap();
            }
            4..=5 if !shadow.is_empty() => {
                let id = shadow
                    .keys()
                    .nth(rng.random_range(0..shadow.len()))
                    .unwrap()
                    .clone();
                assert_eq!(idx.remove(&id).unwrap(), shadow.remove(&id).unwrap());
            }
            6..=8 if !shadow.is_empty() => {
                let id = shadow
                    .keys()
                    .nth(rng.random_range(0..shadow.len()))
                    .unwrap()
                    .clone();
                let p = common::point_in(&mut rng, region);
                idx.update_location(&id, p, clock).unwrap();
                let o = shadow.get_mut(&id).unwrap();
                o.position = p;
                o.positioned_at = clock;
            }
            9 if !shadow.is_empty() => {
                let id = shadow
                    .keys()
                    .nth(rng.random_range(0..shadow.len()))
                    .unwrap()
                    .clone();
                let skills = random_object(&mut rng, "x".into(), region, 0).skills;
                idx.update_skills(&id, skills.clone()).unwrap();
                shadow.get_mut(&id).unwrap().skills = skills;
            }
            _ => {}
        }
        if step % 500 == 499 {
            idx.audit().unwrap();
            assert_eq!(
                idx.sorted_objects(),
                shadow.values().cloned().collect::<Vec<_>>()
            );
            check_queries(&idx, &mut rng, 5, clock);
        }
    }
}

#[test]
fn draining_removes_every_node_but_the_root() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = IndexConfig {
        leaf_capacity: 4,
        ..IndexConfig::default()
    };
    let objs: Vec<_> = (0..500)
        .map(|i| random_object(&mut rng, format!("o{i}"), REGION, 10))
        .collect();
    let mut idx = BigIndex::bulk_load(cfg, objs.clone()).unwrap();
    assert!(idx.node_count() > 1);
    for o in &objs {
        idx.remove(&o.id).unwrap();
    }
    idx.audit().unwrap();
    assert!(idx.is_empty());
    assert_eq!(idx.node_count(), 1);
}
