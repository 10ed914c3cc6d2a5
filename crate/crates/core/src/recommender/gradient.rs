//! Training objective, its analytic gradient, and a finite-difference check.
//!
//! Parameters are addressed as one flat vector in the order
//! `[user biases | turk biases | context biases | user factors | turk factors]`.
//! The global mean is not a trained parameter and is excluded.

use super::{CarsModel, Encoded, RatingRecord};

pub(crate) fn objective_encoded(model: &CarsModel, ratings: &[Encoded]) -> f64 {
    let f = model.hyper.factors;
    let gamma = model.hyper.regularization;
    let mut total = 0.0;
    for e in ratings {
        let err = e.rating - model.raw(e);
        let mut reg = 0.0;
        if let Some(u) = e.user {
            reg += model.user_bias[u].powi(2);
            reg += model.user_factors[u * f..(u + 1) * f]
                .iter()
                .map(|x| x * x)
                .sum::<f64>();
        }
        if let Some(v) = e.turk {
            reg += model.turk_bias[v].powi(2);
            reg += model.turk_factors[v * f..(v + 1) * f]
                .iter()
                .map(|x| x * x)
                .sum::<f64>();
        }
        for c in e.contexts.iter().flatten() {
            reg += model.context_bias[*c].powi(2);
        }
        total += 0.5 * (err * err + gamma * reg);
    }
    total
}

/// Regularized squared-error objective over `ratings`.
pub fn objective(model: &CarsModel, ratings: &[RatingRecord]) -> f64 {
    let enc: Vec<Encoded> = ratings.iter().map(|r| model.encode(r)).collect();
    objective_encoded(model, &enc)
}

impl CarsModel {
    pub fn parameter_count(&self) -> usize {
        self.user_bias.len()
            + self.turk_bias.len()
            + self.context_bias.len()
            + self.user_factors.len()
            + self.turk_factors.len()
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.parameter_count());
        v.extend_from_slice(&self.user_bias);
        v.extend_from_slice(&self.turk_bias);
        v.extend_from_slice(&self.context_bias);
        v.extend_from_slice(&self.user_factors);
        v.extend_from_slice(&self.turk_factors);
        v
    }

    pub(crate) fn parameter_mut(&mut self, mut i: usize) -> &mut f64 {
        for block in [
            &mut self.user_bias,
            &mut self.turk_bias,
            &mut self.context_bias,
            &mut self.user_factors,
            &mut self.turk_factors,
        ] {
            if i < block.len() {
                return &mut block[i];
            }
            i -= block.len();
        }
        panic!("parameter index out of range")
    }
}

/// Gradient of [`objective`] with respect to every trained parameter.
pub fn analytic_gradient(model: &CarsModel, ratings: &[RatingRecord]) -> Vec<f64> {
    let f = model.hyper.factors;
    let gamma = model.hyper.regularization;
    let nu = model.user_bias.len();
    let nv = model.turk_bias.len();
    let nc = model.context_bias.len();
    let uf0 = nu + nv + nc;
    let vf0 = uf0 + model.user_factors.len();
    let mut g = vec![0.0; model.parameter_count()];
    for r in ratings {
        let e = model.encode(r);
        let err = e.rating - model.raw(&e);
        if let Some(u) = e.user {
            g[u] += -err + gamma * model.user_bias[u];
        }
        if let Some(v) = e.turk {
            g[nu + v] += -err + gamma * model.turk_bias[v];
        }
        for c in e.contexts.iter().flatten() {
            g[nu + nv + c] += -err + gamma * model.context_bias[*c];
        }
        match (e.user, e.turk) {
            (Some(u), Some(v)) => {
                for k in 0..f {
                    let pu = model.user_factors[u * f + k];
                    let qv = model.turk_factors[v * f + k];
                    g[uf0 + u * f + k] += -err * qv + gamma * pu;
                    g[vf0 + v * f + k] += -err * pu + gamma * qv;
                }
            }
            (Some(u), None) => {
                for k in 0..f {
                    g[uf0 + u * f + k] += gamma * model.user_factors[u * f + k];
                }
            }
            (None, Some(v)) => {
                for k in 0..f {
                    g[vf0 + v * f + k] += gamma * model.turk_factors[v * f + k];
                }
            }
            (None, None) => {}
        }
    }
    g
}

/// Relative error floor: gradients smaller than this are compared in
/// absolute terms.
const GRADIENT_SCALE_FLOOR: f64 = 1e-3;

/// Largest relative disagreement between [`analytic_gradient`] and central
/// finite differences of [`objective`] with step `epsilon`.
pub fn loss_gradient_check(model: &CarsModel, ratings: &[RatingRecord], epsilon: f64) -> f64 {
    let analytic = analytic_gradient(model, ratings);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *probe.parameter_mut(i);
        *probe.parameter_mut(i) = orig + epsilon;
        let up = objective(&probe, ratings);
        *probe.parameter_mut(i) = orig - epsilon;
        let down = objective(&probe, ratings);
        *probe.parameter_mut(i) = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let scale = a.abs().max(numeric.abs()).max(GRADIENT_SCALE_FLOOR);
        worst = worst.max((a - numeric).abs() / scale);
    }
    worst
}
