use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geo::cell_id;
use crate::model::{ServiceQuery, Timestamp};

/// Depth of the quadtree cell used as the location context.
pub const CONTEXT_CELL_DEPTH: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeBucket {
    Night,
    Morning,
    Afternoon,
    Evening,
}

impl TimeBucket {
    /// Hours 0–5 night, 6–11 morning, 12–17 afternoon, 18–23 evening.
    pub fn from_hour(hour: u32) -> Self {
        match hour % 24 {
            0..=5 => TimeBucket::Night,
            6..=11 => TimeBucket::Morning,
            12..=17 => TimeBucket::Afternoon,
            _ => TimeBucket::Evening,
        }
    }

    /// Bucket of the local hour at `t`, where local time is UTC shifted by
    /// `utc_offset_s`.
    pub fn at(t: Timestamp, utc_offset_s: i64) -> Self {
        let hour = (t + utc_offset_s).rem_euclid(86_400) / 3600;
        Self::from_hour(hour as u32)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TimeBucket::Night => "night",
            TimeBucket::Morning => "morning",
            TimeBucket::Afternoon => "afternoon",
            TimeBucket::Evening => "evening",
        }
    }
}

impl FromStr for TimeBucket {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "night" => Ok(TimeBucket::Night),
            "morning" => Ok(TimeBucket::Morning),
            "afternoon" => Ok(TimeBucket::Afternoon),
            "evening" => Ok(TimeBucket::Evening),
            other => Err(format!("unknown time bucket {other:?}")),
        }
    }
}

/// Maps skill keywords to coarser service domains. Unknown keywords are
/// their own domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    domains: HashMap<String, String>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        let table: &[(&str, &[&str])] = &[
            (
                "repair",
                &[
                    "repair",
                    "computer",
                    "plumbing",
                    "motor",
                    "electrician",
                    "carpentry",
                ],
            ),
            (
                "transport",
                &["driving", "taxi", "delivery", "moving", "directions"],
            ),
            ("health", &["firstaid", "nursing", "pharmacy", "massage"]),
            (
                "household",
                &["cleaning", "cooking", "babysitting", "gardening", "laundry"],
            ),
            (
                "education",
                &["tutoring", "translation", "music", "language"],
            ),
        ];
        let mut domains = HashMap::new();
        for (domain, words) in table {
            for w in *words {
                domains.insert(w.to_string(), domain.to_string());
            }
        }
        Taxonomy { domains }
    }
}

impl Taxonomy {
    pub fn empty() -> Self {
        Taxonomy {
            domains: HashMap::new(),
        }
    }

    pub fn with(mut self, keyword: &str, domain: &str) -> Self {
        self.domains
            .insert(keyword.to_lowercase(), domain.to_string());
        self
    }

    pub fn domain_of(&self, keyword: &str) -> String {
        self.domains
            .get(keyword)
            .cloned()
            .unwrap_or_else(|| keyword.to_string())
    }
}

/// When, where, and for what kind of skill a service was requested.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextVector {
    pub time_bucket: TimeBucket,
    pub location_cell: u64,
    pub skill_domain: String,
}

impl ContextVector {
    /// Context of a query: its hour (UTC), its depth-8 cell, and the domain
    /// of its first keyword in lexicographic order.
    pub fn for_query(query: &ServiceQuery, taxonomy: &Taxonomy) -> Self {
        let first = query
            .keywords
            .iter()
            .next()
            .map(String::as_str)
            .unwrap_or("");
        ContextVector {
            time_bucket: TimeBucket::at(query.issued_at, 0),
            location_cell: cell_id(query.location, CONTEXT_CELL_DEPTH),
            skill_domain: taxonomy.domain_of(first),
        }
    }

    pub fn features(&self) -> [ContextFeature; 3] {
        [
            ContextFeature::Time(self.time_bucket),
            ContextFeature::Cell(self.location_cell),
            ContextFeature::Domain(self.skill_domain.clone()),
        ]
    }
}

/// One categorical value of one context dimension; each gets its own bias.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ContextFeature {
    Time(TimeBucket),
    Cell(u64),
    Domain(String),
}

impl fmt::Display for ContextFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextFeature::Time(b) => write!(f, "time:{}", b.as_str()),
            ContextFeature::Cell(c) => write!(f, "cell:{c}"),
            ContextFeature::Domain(d) => write!(f, "domain:{d}"),
        }
    }
}

impl FromStr for ContextFeature {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| format!("bad context feature {s:?}"))?;
        match kind {
            "time" => Ok(ContextFeature::Time(value.parse()?)),
            "cell" => value
                .parse()
                .map(ContextFeature::Cell)
                .map_err(|e| format!("bad cell id {value:?}: {e}")),
            "domain" => Ok(ContextFeature::Domain(value.to_string())),
            _ => Err(format!("bad context feature {s:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GeoPoint;

    #[test]
    fn hour_buckets() {
        assert_eq!(TimeBucket::from_hour(0), TimeBucket::Night);
        assert_eq!(TimeBucket::from_hour(5), TimeBucket::Night);
        assert_eq!(TimeBucket::from_hour(6), TimeBucket::Morning);
        assert_eq!(TimeBucket::from_hour(12), TimeBucket::Afternoon);
        assert_eq!(TimeBucket::from_hour(23), TimeBucket::Evening);
        assert_eq!(TimeBucket::at(7 * 3600, 0), TimeBucket::Morning);
        assert_eq!(TimeBucket::at(7 * 3600, -8 * 3600), TimeBucket::Evening);
    }

    #[test]
    fn query_context() {
        let q = ServiceQuery::new(
            ["taxi", "computer"],
            GeoPoint {
                lat: 22.3,
                lon: 114.2,
            },
            13 * 3600,
            1,
        )
        .unwrap();
        let c = ContextVector::for_query(&q, &Taxonomy::default());
        assert_eq!(c.time_bucket, TimeBucket::Afternoon);
        assert_eq!(c.skill_domain, "repair");
        let q2 = ServiceQuery::new(["zither"], q.location, 0, 1).unwrap();
        assert_eq!(
            ContextVector::for_query(&q2, &Taxonomy::default()).skill_domain,
            "zither"
        );
    }

    #[test]
    fn feature_names_parse_back() {
        for f in [
            ContextFeature::Time(TimeBucket::Evening),
            ContextFeature::Cell(4242),
            ContextFeature::Domain("a:b".into()),
        ] {
            assert_eq!(f.to_string().parse::<ContextFeature>().unwrap(), f);
        }
    }
}
