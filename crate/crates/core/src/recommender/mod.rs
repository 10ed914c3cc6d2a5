//! Context-aware rating prediction from explicit ratings.
//!
//! The model is biased matrix factorization with one additive bias per
//! context value:
//!
//! ```text
//! r̂(u, v, c) = μ + b_u + b_v + Σ_{x ∈ c} b_x + p_u · q_v
//! ```
//!
//! `μ` is the mean training rating and stays fixed; everything else is fit
//! by SGD on
//!
//! ```text
//! L = ½ Σ_i [ e_i² + γ (b_u² + b_v² + Σ b_x² + ‖p_u‖² + ‖q_v‖²) ]
//! ```
//!
//! where `e_i` is the residual of rating `i`. Users, turks and context
//! values unseen in training contribute nothing, so a cold-start prediction
//! is `μ` clamped to the rating scale.

mod context;
mod dump;
mod gradient;

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ServiceQuery, Timestamp};

pub use context::{ContextFeature, ContextVector, Taxonomy, TimeBucket, CONTEXT_CELL_DEPTH};
pub use gradient::{analytic_gradient, loss_gradient_check, objective};

pub const RATING_MIN: f64 = 1.0;
pub const RATING_MAX: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecommenderError {
    #[error("no ratings to train on")]
    EmptyTrainingSet,
    #[error("bad hyperparameters: {0}")]
    BadHyperparams(&'static str),
    #[error("bad rating record: {0}")]
    BadRating(String),
    #[error("bad model dump at line {line}: {reason}")]
    BadDump { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub user_id: String,
    pub turk_id: String,
    pub context: ContextVector,
    pub rating: f64,
    pub at: Timestamp,
}

impl RatingRecord {
    pub fn validate(&self) -> Result<(), RecommenderError> {
        if self.user_id.is_empty() || self.turk_id.is_empty() {
            return Err(RecommenderError::BadRating("empty user or turk id".into()));
        }
        if !(RATING_MIN..=RATING_MAX).contains(&self.rating) {
            return Err(RecommenderError::BadRating(format!(
                "rating {} outside [1, 5]",
                self.rating
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Latent dimension; 0 gives a bias-only model.
    pub factors: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub epochs: usize,
    /// Latent entries start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            factors: 8,
            learning_rate: 0.01,
            regularization: 0.02,
            epochs: 40,
            init_scale: 0.01,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), RecommenderError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(RecommenderError::BadHyperparams(
                "learning rate must be > 0",
            ));
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return Err(RecommenderError::BadHyperparams(
                "regularization must be >= 0",
            ));
        }
        if self.epochs == 0 {
            return Err(RecommenderError::BadHyperparams("epochs must be >= 1"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(RecommenderError::BadHyperparams("init scale must be >= 0"));
        }
        Ok(())
    }
}

/// Insertion-ordered name → dense index map.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Vocab<K: Eq + std::hash::Hash> {
    names: Vec<K>,
    index: HashMap<K, usize>,
}

impl<K: Eq + std::hash::Hash> Default for Vocab<K> {
    fn default() -> Self {
        Vocab {
            names: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<K: Clone + Eq + std::hash::Hash> Vocab<K> {
    fn intern(&mut self, k: &K) -> usize {
        if let Some(&i) = self.index.get(k) {
            return i;
        }
        self.names.push(k.clone());
        self.index.insert(k.clone(), self.names.len() - 1);
        self.names.len() - 1
    }

    fn get(&self, k: &K) -> Option<usize> {
        self.index.get(k).copied()
    }

    pub(crate) fn len(&self) -> usize {
        self.names.len()
    }

    pub(crate) fn names(&self) -> &[K] {
        &self.names
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarsModel {
    pub(crate) hyper: Hyperparams,
    pub(crate) mu: f64,
    pub(crate) users: Vocab<String>,
    pub(crate) turks: Vocab<String>,
    pub(crate) contexts: Vocab<ContextFeature>,
    pub(crate) user_bias: Vec<f64>,
    pub(crate) turk_bias: Vec<f64>,
    pub(crate) context_bias: Vec<f64>,
    /// Row-major, `users × factors`.
    pub(crate) user_factors: Vec<f64>,
    /// Row-major, `turks × factors`.
    pub(crate) turk_factors: Vec<f64>,
    pub(crate) loss_history: Vec<f64>,
}

/// A rating resolved against a model's vocabularies. `None` marks a
/// user/turk/context value the model has never seen.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Encoded {
    pub user: Option<usize>,
    pub turk: Option<usize>,
    pub contexts: [Option<usize>; 3],
    pub rating: f64,
}

impl CarsModel {
    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn global_mean(&self) -> f64 {
        self.mu
    }

    pub fn factors(&self) -> usize {
        self.hyper.factors
    }

    /// Training objective after each epoch.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn user_bias(&self, user: &str) -> Option<f64> {
        self.users.get(&user.to_string()).map(|i| self.user_bias[i])
    }

    pub fn turk_bias(&self, turk: &str) -> Option<f64> {
        self.turks.get(&turk.to_string()).map(|i| self.turk_bias[i])
    }

    pub fn context_bias(&self, feature: &ContextFeature) -> Option<f64> {
        self.contexts.get(feature).map(|i| self.context_bias[i])
    }

    pub fn user_vector(&self, user: &str) -> Option<&[f64]> {
        let f = self.hyper.factors;
        self.users
            .get(&user.to_string())
            .map(|i| &self.user_factors[i * f..(i + 1) * f])
    }

    pub fn turk_vector(&self, turk: &str) -> Option<&[f64]> {
        let f = self.hyper.factors;
        self.turks
            .get(&turk.to_string())
            .map(|i| &self.turk_factors[i * f..(i + 1) * f])
    }

    pub fn known_turks(&self) -> &[String] {
        self.turks.names()
    }

    pub(crate) fn encode(&self, r: &RatingRecord) -> Encoded {
        let feats = r.context.features();
        Encoded {
            user: self.users.get(&r.user_id),
            turk: self.turks.get(&r.turk_id),
            contexts: [
                self.contexts.get(&feats[0]),
                self.contexts.get(&feats[1]),
                self.contexts.get(&feats[2]),
            ],
            rating: r.rating,
        }
    }

    /// Raw (unclamped) prediction for an encoded triple.
    pub(crate) fn raw(&self, e: &Encoded) -> f64 {
        let f = self.hyper.factors;
        let mut r = self.mu;
        if let Some(u) = e.user {
            r += self.user_bias[u];
        }
        if let Some(v) = e.turk {
            r += self.turk_bias[v];
        }
        for c in e.contexts.iter().flatten() {
            r += self.context_bias[*c];
        }
        if let (Some(u), Some(v)) = (e.user, e.turk) {
            let pu = &self.user_factors[u * f..(u + 1) * f];
            let qv = &self.turk_factors[v * f..(v + 1) * f];
            r += pu.iter().zip(qv).map(|(a, b)| a * b).sum::<f64>();
        }
        r
    }

    /// Unclamped model output.
    pub fn predict_raw(&self, user_id: &str, turk_id: &str, context: &ContextVector) -> f64 {
        self.raw(&self.encode(&RatingRecord {
            user_id: user_id.to_string(),
            turk_id: turk_id.to_string(),
            context: context.clone(),
            rating: RATING_MIN,
            at: 0,
        }))
    }

    fn sgd_step(&mut self, e: &Encoded, eta: f64) {
        let gamma = self.hyper.regularization;
        let f = self.hyper.factors;
        let err = e.rating - self.raw(e);
        if let Some(u) = e.user {
            self.user_bias[u] += eta * (err - gamma * self.user_bias[u]);
        }
        if let Some(v) = e.turk {
            self.turk_bias[v] += eta * (err - gamma * self.turk_bias[v]);
        }
        for c in e.contexts.iter().flatten() {
            self.context_bias[*c] += eta * (err - gamma * self.context_bias[*c]);
        }
        if let (Some(u), Some(v)) = (e.user, e.turk) {
            for k in 0..f {
                let pu = self.user_factors[u * f + k];
                let qv = self.turk_factors[v * f + k];
                self.user_factors[u * f + k] += eta * (err * qv - gamma * pu);
                self.turk_factors[v * f + k] += eta * (err * pu - gamma * qv);
            }
        }
    }
}

/// Fits a model by SGD. Deterministic for a given `(ratings, hyper, seed)`.
pub fn train(
    ratings: &[RatingRecord],
    hyper: &Hyperparams,
    seed: u64,
) -> Result<CarsModel, RecommenderError> {
    if ratings.is_empty() {
        return Err(RecommenderError::EmptyTrainingSet);
    }
    hyper.validate()?;
    for r in ratings {
        r.validate()?;
    }
    let mut users = Vocab::default();
    let mut turks = Vocab::default();
    let mut contexts = Vocab::default();
    for r in ratings {
        users.intern(&r.user_id);
        turks.intern(&r.turk_id);
        for feat in r.context.features() {
            contexts.intern(&feat);
        }
    }
    let f = hyper.factors;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = hyper.init_scale;
    let mut init = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| {
                if scale > 0.0 {
                    rng.random_range(-scale..=scale)
                } else {
                    0.0
                }
            })
            .collect()
    };
    let user_factors = init(users.len() * f);
    let turk_factors = init(turks.len() * f);
    let mu = ratings.iter().map(|r| r.rating).sum::<f64>() / ratings.len() as f64;

    let mut model = CarsModel {
        hyper: *hyper,
        mu,
        user_bias: vec![0.0; users.len()],
        turk_bias: vec![0.0; turks.len()],
        context_bias: vec![0.0; contexts.len()],
        users,
        turks,
        contexts,
        user_factors,
        turk_factors,
        loss_history: Vec::with_capacity(hyper.epochs),
    };
    let encoded: Vec<Encoded> = ratings.iter().map(|r| model.encode(r)).collect();
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    // An epoch that raises the objective is rolled back and the step size
    // halved, so the recorded loss never increases.
    let mut eta = hyper.learning_rate;
    let mut best = gradient::objective_encoded(&model, &encoded);
    for _ in 0..hyper.epochs {
        let saved = model.clone();
        order.shuffle(&mut rng);
        for &i in &order {
            model.sgd_step(&encoded[i], eta);
        }
        let loss = gradient::objective_encoded(&model, &encoded);
        if loss <= best {
            best = loss;
        } else {
            let history = std::mem::take(&mut model.loss_history);
            model = saved;
            model.loss_history = history;
            eta *= 0.5;
        }
        model.loss_history.push(best);
    }
    Ok(model)
}

/// Predicted rating clamped to `[1, 5]`.
pub fn predict(model: &CarsModel, user_id: &str, turk_id: &str, context: &ContextVector) -> f64 {
    model
        .predict_raw(user_id, turk_id, context)
        .clamp(RATING_MIN, RATING_MAX)
}

/// Top-`m` turks from `candidate_pool \ exclude` by predicted rating in the
/// query's context, ties by turk id ascending.
pub fn recommend(
    model: &CarsModel,
    user_id: &str,
    query: &ServiceQuery,
    taxonomy: &Taxonomy,
    candidate_pool: &[String],
    exclude: &BTreeSet<String>,
    m: usize,
) -> Vec<(String, f64)> {
    let context = ContextVector::for_query(query, taxonomy);
    let pool: BTreeSet<&String> = candidate_pool
        .iter()
        .filter(|t| !exclude.contains(*t))
        .collect();
    let mut scored: Vec<(String, f64)> = pool
        .into_iter()
        .map(|t| (t.clone(), predict(model, user_id, t, &context)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(m);
    scored
}
