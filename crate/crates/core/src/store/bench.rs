//! Replays a generated workload against the index, timing queries and
//! updates and checking every answer against the brute-force oracle.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::workload::{generate_workload, WorkloadItem, WorkloadSpec};
use super::{StoreError, TurkDb};
use crate::index::IndexConfig;
use crate::model::{EventKind, ServiceQuery};
use crate::scoring::ScoringParams;
use crate::topk::{top_k, top_k_oracle, TopK};

/// How generated queries are parameterized before they run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryMix {
    pub k: Option<usize>,
    pub alpha: f64,
    pub lambda_base: f64,
    pub recency_unit_s: f64,
    /// Absolute D_max; wins over `max_distance_fraction`.
    pub max_distance_m: Option<f64>,
    /// D_max as a fraction of the workload box width.
    pub max_distance_fraction: Option<f64>,
    /// Replace keywords with tokens no turk has.
    pub absent_keywords: bool,
}

impl Default for QueryMix {
    fn default() -> Self {
        QueryMix {
            k: None,
            alpha: ServiceQuery::DEFAULT_ALPHA,
            lambda_base: ServiceQuery::DEFAULT_LAMBDA,
            recency_unit_s: ScoringParams::DEFAULT_RECENCY_UNIT_S,
            max_distance_m: None,
            max_distance_fraction: None,
            absent_keywords: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub workload: WorkloadSpec,
    pub queries: QueryMix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub latency_p50_us: f64,
    pub latency_p95_us: f64,
    pub latency_p99_us: f64,
    pub updates_per_s: f64,
    /// Mean over queries of `1 - postings_scanned / N`.
    pub pruning_ratio: f64,
    pub oracle_agreement: f64,
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub report: BenchReport,
    pub objects: usize,
    pub queries: usize,
    pub updates: usize,
    /// Issue times of queries whose answer differed from the oracle.
    pub disagreements: Vec<i64>,
}

/// Nearest-rank percentile of a sorted slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn same_answer(a: &TopK, b: &TopK) -> bool {
    a.candidates.len() == b.candidates.len()
        && a.candidates.iter().zip(&b.candidates).all(|(x, y)| {
            x.object_id == y.object_id && (x.score.total - y.score.total).abs() <= 1e-9
        })
}

impl QueryMix {
    fn apply(
        &self,
        q: &mut ServiceQuery,
        spec: &WorkloadSpec,
    ) -> Result<ScoringParams, StoreError> {
        if let Some(k) = self.k {
            q.k = k;
        }
        q.alpha = self.alpha;
        q.lambda_base = self.lambda_base;
        if let Some(d) = self.max_distance_m {
            q.max_distance_m = d;
        } else if let Some(f) = self.max_distance_fraction {
            q.max_distance_m = f * spec.bounds.width_m();
        }
        if self.absent_keywords {
            q.keywords = q.keywords.iter().map(|k| format!("absent-{k}")).collect();
        }
        let p = ScoringParams::for_query(q).with_recency_unit(self.recency_unit_s);
        q.validate()
            .map_err(|e| StoreError::BadSpec(e.to_string()))?;
        p.validate()
            .map_err(|e| StoreError::BadSpec(e.to_string()))?;
        Ok(p)
    }
}

pub fn run_bench(config: &BenchConfig) -> Result<BenchRun, StoreError> {
    let spec = &config.workload;
    let items = generate_workload(spec)?;
    let mut db = TurkDb::new(IndexConfig {
        bounds: spec.bounds,
        ..IndexConfig::default()
    })?;
    let mut latencies = Vec::new();
    let mut pruning = 0.0;
    let mut agree = 0usize;
    let mut disagreements = Vec::new();
    let mut updates = 0usize;
    let mut update_secs = 0.0;
    for item in items {
        match item {
            WorkloadItem::Event(e) => {
                let started = Instant::now();
                db.apply(&e)?;
                if e.kind() == EventKind::LocationUpdate {
                    update_secs += started.elapsed().as_secs_f64();
                    updates += 1;
                }
            }
            WorkloadItem::Query(mut q) => {
                let params = config.queries.apply(&mut q, spec)?;
                let started = Instant::now();
                let got = top_k(db.index(), &q, &params)
                    .map_err(|e| StoreError::BadSpec(e.to_string()))?;
                latencies.push(started.elapsed().as_secs_f64() * 1e6);
                let n = db.index().len() as f64;
                pruning += 1.0 - got.stats.postings_scanned as f64 / n;
                let want = top_k_oracle(db.index().objects(), &q, &params)
                    .map_err(|e| StoreError::BadSpec(e.to_string()))?;
                if same_answer(&got, &want) {
                    agree += 1;
                } else {
                    disagreements.push(q.issued_at);
                }
            }
        }
    }
    if latencies.is_empty() {
        return Err(StoreError::BadSpec("workload produced no queries".into()));
    }
    let queries = latencies.len();
    latencies.sort_by(f64::total_cmp);
    let report = BenchReport {
        latency_p50_us: percentile(&latencies, 50.0),
        latency_p95_us: percentile(&latencies, 95.0),
        latency_p99_us: percentile(&latencies, 99.0),
        updates_per_s: if update_secs > 0.0 {
            updates as f64 / update_secs
        } else {
            0.0
        },
        pruning_ratio: pruning / queries as f64,
        oracle_agreement: agree as f64 / queries as f64,
    };
    Ok(BenchRun {
        report,
        objects: db.index().len(),
        queries,
        updates,
        disagreements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BenchConfig {
        BenchConfig {
            workload: WorkloadSpec {
                objects: 100,
                duration_s: 30.0,
                query_rate_per_s: 2.0,
                ..Default::default()
            },
            queries: QueryMix::default(),
        }
    }

    #[test]
    fn smoke() {
        let run = run_bench(&tiny()).unwrap();
        let r = &run.report;
        assert_eq!(r.oracle_agreement, 1.0, "{:?}", run.disagreements);
        assert!(r.latency_p50_us <= r.latency_p95_us && r.latency_p95_us <= r.latency_p99_us);
        assert!((0.0..=1.0).contains(&r.pruning_ratio));
        assert!(r.updates_per_s > 0.0);
        assert_eq!(run.objects, 100);
        assert_eq!(run.updates, 300);
        let json = serde_json::to_value(r).unwrap();
        let keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 6, "{keys:?}");
    }

    #[test]
    fn absent_keywords_textual_only_prunes_everything() {
        let mut cfg = tiny();
        cfg.queries.alpha = 0.0;
        cfg.queries.absent_keywords = true;
        let run = run_bench(&cfg).unwrap();
        assert_eq!(run.report.pruning_ratio, 1.0);
        assert_eq!(run.report.oracle_agreement, 1.0);
    }

    #[test]
    fn percentile_nearest_rank() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&xs, 50.0), 50.0);
        assert_eq!(percentile(&xs, 99.0), 99.0);
        assert_eq!(percentile(&[7.0], 95.0), 7.0);
    }

    #[test]
    fn no_queries_is_bad_spec() {
        let mut cfg = tiny();
        cfg.workload.query_rate_per_s = 0.0;
        assert!(matches!(run_bench(&cfg), Err(StoreError::BadSpec(_))));
    }
}
