//! Synthetic workloads: turks with Zipf-distributed skills moving by random
//! waypoint inside a bounding box, interleaved with service queries.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Zipf};
use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::geo::{haversine_m, GeoRect};
use crate::model::{GeoPoint, ServiceQuery, Timestamp, TurkEvent};

/// Meters per degree of latitude on the model sphere.
const M_PER_DEG: f64 = crate::geo::EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UpdateInterval {
    /// Every `seconds`, starting at a random phase per turk.
    Fixed { seconds: f64 },
    /// Exponential gaps with the given mean.
    Exponential { mean_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub count: usize,
    /// Standard deviation of the offset from a cluster center.
    pub radius_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub objects: usize,
    pub bounds: GeoRect,
    pub vocab_size: usize,
    pub zipf_exponent: f64,
    /// Inclusive range of skills per turk.
    pub skills_per_object: (usize, usize),
    /// Inclusive range of waypoint speeds, m/s.
    pub speed_mps: (f64, f64),
    pub update_interval: UpdateInterval,
    pub query_rate_per_s: f64,
    /// Inclusive range of keywords per query.
    pub query_keywords: (usize, usize),
    pub query_k: usize,
    pub duration_s: f64,
    pub start_at: Timestamp,
    pub seed: u64,
    pub clusters: Option<ClusterSpec>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            objects: 1000,
            bounds: GeoRect::new(40.0, 41.0, -74.5, -73.5),
            vocab_size: 200,
            zipf_exponent: 1.0,
            skills_per_object: (1, 4),
            speed_mps: (0.5, 15.0),
            update_interval: UpdateInterval::Fixed { seconds: 10.0 },
            query_rate_per_s: 1.0,
            query_keywords: (1, 3),
            query_k: 10,
            duration_s: 60.0,
            start_at: 0,
            seed: 0,
            clusters: None,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), StoreError> {
        let bad = |m: &str| Err(StoreError::BadSpec(m.to_string()));
        let b = &self.bounds;
        if self.objects == 0 {
            return bad("objects must be positive");
        }
        if !(b.min_lat < b.max_lat
            && b.min_lon < b.max_lon
            && b.min_lat >= -90.0
            && b.max_lat <= 90.0)
            || b.min_lon < -180.0
            || b.max_lon > 180.0
        {
            return bad("bounds must be a non-empty lat/lon rectangle");
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive");
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return bad("zipf_exponent must be finite and non-negative");
        }
        let (lo, hi) = self.skills_per_object;
        if lo == 0 || lo > hi {
            return bad("skills_per_object must satisfy 1 <= min <= max");
        }
        let (lo, hi) = self.speed_mps;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return bad("speed_mps must satisfy 0 <= min <= max");
        }
        match self.update_interval {
            UpdateInterval::Fixed { seconds: x } | UpdateInterval::Exponential { mean_s: x } => {
                if !(x.is_finite() && x > 0.0) {
                    return bad("update interval must be positive");
                }
            }
        }
        if !(self.query_rate_per_s.is_finite() && self.query_rate_per_s >= 0.0) {
            return bad("query_rate_per_s must be non-negative");
        }
        let (lo, hi) = self.query_keywords;
        if lo == 0 || lo > hi {
            return bad("query_keywords must satisfy 1 <= min <= max");
        }
        if self.query_k == 0 {
            return bad("query_k must be positive");
        }
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return bad("duration_s must be non-negative");
        }
        if self.start_at < 0 {
            return bad("start_at must be non-negative");
        }
        if let Some(c) = self.clusters {
            if c.count == 0 || !(c.radius_m.is_finite() && c.radius_m > 0.0) {
                return bad("clusters need a positive count and radius");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WorkloadItem {
    Event(TurkEvent),
    Query(ServiceQuery),
}

impl WorkloadItem {
    pub fn at(&self) -> Timestamp {
        match self {
            WorkloadItem::Event(e) => e.at,
            WorkloadItem::Query(q) => q.issued_at,
        }
    }
}

/// Canonical token for Zipf rank `r` (1-based).
pub fn skill_name(rank: usize) -> String {
    format!("skill{rank:04}")
}

struct Sampler<'a> {
    spec: &'a WorkloadSpec,
    rng: ChaCha8Rng,
    zipf: Zipf<f64>,
    centers: Vec<GeoPoint>,
}

impl Sampler<'_> {
    fn uniform_point(&mut self) -> GeoPoint {
        let b = self.spec.bounds;
        GeoPoint {
            lat: self.rng.random_range(b.min_lat..=b.max_lat),
            lon: self.rng.random_range(b.min_lon..=b.max_lon),
        }
    }

    fn home(&mut self) -> Option<usize> {
        if self.centers.is_empty() {
            None
        } else {
            Some(self.rng.random_range(0..self.centers.len()))
        }
    }

    fn point_near(&mut self, home: Option<usize>) -> GeoPoint {
        let Some(h) = home else {
            return self.uniform_point();
        };
        let c = self.centers[h];
        let r = self.spec.clusters.expect("centers imply clusters").radius_m;
        let sd_lat = r / M_PER_DEG;
        let sd_lon = sd_lat / c.lat.to_radians().cos().max(0.01);
        let dlat: f64 = Normal::new(0.0, sd_lat)
            .expect("positive sd")
            .sample(&mut self.rng);
        let dlon: f64 = Normal::new(0.0, sd_lon)
            .expect("positive sd")
            .sample(&mut self.rng);
        let b = self.spec.bounds;
        GeoPoint {
            lat: (c.lat + dlat).clamp(b.min_lat, b.max_lat),
            lon: (c.lon + dlon).clamp(b.min_lon, b.max_lon),
        }
    }

    fn speed(&mut self) -> f64 {
        let (lo, hi) = self.spec.speed_mps;
        if lo == hi {
            lo
        } else {
            self.rng.random_range(lo..=hi)
        }
    }

    /// `n` distinct Zipf-ranked tokens, fewer if the vocabulary runs dry.
    fn tokens(&mut self, range: (usize, usize)) -> Vec<String> {
        let n = self
            .rng
            .random_range(range.0..=range.1)
            .min(self.spec.vocab_size);
        let mut ranks: Vec<usize> = Vec::with_capacity(n);
        let mut tries = 0;
        while ranks.len() < n && tries < 64 * n {
            let r = self.zipf.sample(&mut self.rng) as usize;
            if !ranks.contains(&r) {
                ranks.push(r);
            }
            tries += 1;
        }
        ranks.into_iter().map(skill_name).collect()
    }
}

struct Mover {
    home: Option<usize>,
    pos: GeoPoint,
    dest: GeoPoint,
    speed: f64,
}

impl Mover {
    fn advance(&mut self, mut dt: f64, s: &mut Sampler) {
        while dt > 0.0 && self.speed > 0.0 {
            let d = haversine_m(self.pos, self.dest);
            let needed = d / self.speed;
            if needed > dt {
                let f = dt / needed;
                self.pos = GeoPoint {
                    lat: self.pos.lat + (self.dest.lat - self.pos.lat) * f,
                    lon: self.pos.lon + (self.dest.lon - self.pos.lon) * f,
                };
                return;
            }
            dt -= needed;
            self.pos = self.dest;
            self.dest = s.point_near(self.home);
            self.speed = s.speed();
        }
    }
}

/// Generates the full stream: one REGISTER per turk at `start_at`, then
/// location updates and queries in time order. Deterministic in the spec.
pub fn generate_workload(spec: &WorkloadSpec) -> Result<Vec<WorkloadItem>, StoreError> {
    spec.validate()?;
    let mut s = Sampler {
        spec,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        zipf: Zipf::new(spec.vocab_size as f64, spec.zipf_exponent).expect("validated"),
        centers: Vec::new(),
    };
    if let Some(c) = spec.clusters {
        s.centers = (0..c.count).map(|_| s.uniform_point()).collect();
    }
    let width = spec.objects.to_string().len().max(6);
    let start = spec.start_at as f64;
    let end = start + spec.duration_s;

    let mut items: Vec<(f64, WorkloadItem)> = Vec::new();
    let mut timed: Vec<(f64, usize, WorkloadItem)> = Vec::new();
    for i in 0..spec.objects {
        let id = format!("t{i:0width$}");
        let home = s.home();
        let pos = s.point_near(home);
        let skills = s.tokens(spec.skills_per_object);
        let skill_refs: Vec<&str> = skills.iter().map(String::as_str).collect();
        items.push((
            start,
            WorkloadItem::Event(TurkEvent::register(&id, spec.start_at, &skill_refs, pos)),
        ));
        let dest = s.point_near(home);
        let speed = s.speed();
        let mut mover = Mover {
            home,
            pos,
            dest,
            speed,
        };

        let mut t = start
            + match spec.update_interval {
                UpdateInterval::Fixed { seconds } => s.rng.random_range(0.0..seconds),
                UpdateInterval::Exponential { mean_s } => Exp::new(1.0 / mean_s)
                    .expect("validated")
                    .sample(&mut s.rng),
            };
        let mut last = start;
        while t < end {
            mover.advance(t - last, &mut s);
            last = t;
            let ev = TurkEvent::location(&id, t.floor() as Timestamp, mover.pos);
            timed.push((t, i, WorkloadItem::Event(ev)));
            t += match spec.update_interval {
                UpdateInterval::Fixed { seconds } => seconds,
                UpdateInterval::Exponential { mean_s } => Exp::new(1.0 / mean_s)
                    .expect("validated")
                    .sample(&mut s.rng),
            };
        }
    }
    if spec.query_rate_per_s > 0.0 {
        let gap = Exp::new(spec.query_rate_per_s).expect("validated");
        let mut t = start + gap.sample(&mut s.rng);
        while t < end {
            let home = s.home();
            let loc = s.point_near(home);
            let kws = s.tokens(spec.query_keywords);
            let q = ServiceQuery::new(kws, loc, t.floor() as Timestamp, spec.query_k)
                .expect("generated query is valid");
            timed.push((t, usize::MAX, WorkloadItem::Query(q)));
            t += gap.sample(&mut s.rng);
        }
    }
    timed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    items.extend(timed.into_iter().map(|(t, _, it)| (t, it)));
    Ok(items.into_iter().map(|(_, it)| it).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EventKind, EventPayload};

    fn small() -> WorkloadSpec {
        WorkloadSpec {
            objects: 50,
            duration_s: 30.0,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_workload(&small()).unwrap();
        let b = generate_workload(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_workload(&WorkloadSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_speed_never_moves() {
        let spec = WorkloadSpec {
            speed_mps: (0.0, 0.0),
            ..small()
        };
        let items = generate_workload(&spec).unwrap();
        let mut home = std::collections::HashMap::new();
        let mut moves = 0;
        for it in items {
            if let WorkloadItem::Event(e) = it {
                match e.payload {
                    EventPayload::Register { lat, lon, .. } => {
                        home.insert(e.object_id, (lat, lon));
                    }
                    EventPayload::LocationUpdate { lat, lon } => {
                        assert_eq!(home[&e.object_id], (lat, lon));
                        moves += 1;
                    }
                    _ => unreachable!(),
                }
            }
        }
        assert!(moves > 0);
    }

    #[test]
    fn fixed_interval_count() {
        let spec = WorkloadSpec {
            objects: 1000,
            duration_s: 60.0,
            update_interval: UpdateInterval::Fixed { seconds: 10.0 },
            query_rate_per_s: 0.0,
            ..Default::default()
        };
        let items = generate_workload(&spec).unwrap();
        let n = items
            .iter()
            .filter(
                |it| matches!(it, WorkloadItem::Event(e) if e.kind() == EventKind::LocationUpdate),
            )
            .count();
        assert!((n as f64 - 6000.0).abs() <= 60.0, "{n}");
    }

    #[test]
    fn stream_is_time_ordered_and_in_bounds() {
        let spec = WorkloadSpec {
            clusters: Some(ClusterSpec {
                count: 3,
                radius_m: 2000.0,
            }),
            update_interval: UpdateInterval::Exponential { mean_s: 5.0 },
            ..small()
        };
        let items = generate_workload(&spec).unwrap();
        let mut last = i64::MIN;
        let mut queries = 0;
        for it in &items {
            assert!(it.at() >= last);
            last = it.at();
            match it {
                WorkloadItem::Event(e) => {
                    let (lat, lon) = match &e.payload {
                        EventPayload::Register { lat, lon, .. }
                        | EventPayload::LocationUpdate { lat, lon } => (*lat, *lon),
                        _ => unreachable!(),
                    };
                    assert!(spec.bounds.contains(GeoPoint { lat, lon }));
                }
                WorkloadItem::Query(q) => {
                    queries += 1;
                    assert!((1..=3).contains(&q.keywords.len()));
                }
            }
        }
        assert!(queries > 5);
    }

    #[test]
    fn skills_follow_zipf_head() {
        let spec = WorkloadSpec {
            objects: 2000,
            duration_s: 0.0,
            ..Default::default()
        };
        let mut counts = vec![0usize; spec.vocab_size + 1];
        for it in generate_workload(&spec).unwrap() {
            if let WorkloadItem::Event(TurkEvent {
                payload: EventPayload::Register { skills, .. },
                ..
            }) = it
            {
                for s in skills {
                    counts[s[5..].parse::<usize>().unwrap()] += 1;
                }
            }
        }
        assert!(counts[1] > counts[2] && counts[2] > counts[10] && counts[10] > counts[150]);
    }

    #[test]
    fn rejects_bad_specs() {
        for spec in [
            WorkloadSpec {
                objects: 0,
                ..small()
            },
            WorkloadSpec {
                speed_mps: (2.0, 1.0),
                ..small()
            },
            WorkloadSpec {
                skills_per_object: (0, 1),
                ..small()
            },
            WorkloadSpec {
                update_interval: UpdateInterval::Fixed { seconds: 0.0 },
                ..small()
            },
            WorkloadSpec {
                bounds: GeoRect::new(1.0, 0.0, 0.0, 1.0),
                ..small()
            },
        ] {
            assert!(matches!(
                generate_workload(&spec),
                Err(StoreError::BadSpec(_))
            ));
        }
    }

    #[test]
    fn spec_json_accepts_partial_documents() {
        let spec: WorkloadSpec = serde_json::from_str(
            r#"{"objects": 10, "update_interval": {"kind": "exponential", "mean_s": 3.0}, "seed": 9}"#,
        )
        .unwrap();
        assert_eq!(spec.objects, 10);
        assert_eq!(spec.seed, 9);
        assert_eq!(
            spec.update_interval,
            UpdateInterval::Exponential { mean_s: 3.0 }
        );
        assert!(serde_json::from_str::<WorkloadSpec>(r#"{"objectz": 1}"#).is_err());
    }
}
