//! Spatial-keyword search, recommendation and dispatch for mobile service
//! volunteers ("turks").
//!
//! - [`model`]: objects, queries, events.
//! - [`scoring`]: the recency-decayed spatial-keyword score.
//! - [`index`]: quadtree with recency-sorted keyword posting lists.
//! - [`topk`]: exact top-k and resumable ranking over the index.
//! - [`recommender`]: context-aware biased matrix factorization.
//! - [`dispatch`]: candidate notification and accept/refuse/ignore re-ranking.
//! - [`store`]: event log, snapshots, workload generation and benchmarking.

pub mod dispatch;
pub mod geo;
pub mod index;
pub mod model;
pub mod recommender;
pub mod scoring;
pub mod store;
pub mod topk;

pub use index::{BigIndex, IndexConfig, IndexError};
pub use model::{
    GeoPoint, ScoreBreakdown, ServiceQuery, SpatialTextualObject, Timestamp, TurkEvent,
};
pub use scoring::ScoringParams;
pub use topk::{open_cursor, top_k, top_k_oracle, QueryCursor, QueryError, RankedCandidate, TopK};
