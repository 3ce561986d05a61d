//! Binomial and trinomial metric-learning losses over pair similarities.
//!
//! Each class term is a scaled softplus averaged over that class's pairs:
//!
//! ```text
//! positive / semi:  log(1 + exp(-a (S - m))) / a
//! negative:         log(1 + exp(+a (S - m))) / a
//! ```
//!
//! The trinomial loss is the binomial loss (positive + negative terms) plus the
//! semi-positive term. A class with no pairs contributes zero.

mod train;

pub use train::{
    recall_at_1, train_toy_embedding, LinearMap, LossKind, RecallReport, ToyDataset,
    ToyDatasetParams, TrainConfig, TrainReport,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossParams {
    pub alpha_p: f64,
    pub alpha_s: f64,
    pub alpha_n: f64,
    pub m_p: f64,
    pub m_s: f64,
    pub m_n: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            alpha_p: 5.0,
            alpha_s: 6.0,
            alpha_n: 20.0,
            m_p: 0.0,
            m_s: 0.3,
            m_n: 0.7,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        for (name, a) in [
            ("alpha_p", self.alpha_p),
            ("alpha_s", self.alpha_s),
            ("alpha_n", self.alpha_n),
        ] {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {a}")));
            }
        }
        for (name, m) in [("m_p", self.m_p), ("m_s", self.m_s), ("m_n", self.m_n)] {
            if !m.is_finite() {
                return Err(Error::config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Similarities of one training batch, split by pair class.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairBatch {
    pub s_pos: Vec<f64>,
    pub s_semi: Vec<f64>,
    pub s_neg: Vec<f64>,
}

/// `dL/dS` for every pair, in batch order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairGradient {
    pub pos: Vec<f64>,
    pub semi: Vec<f64>,
    pub neg: Vec<f64>,
}

/// `log(1 + e^x)` without overflow for large `|x|`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sign = -1` pulls similarities up (positive, semi), `+1` pushes them down.
fn class_term(s: &[f64], alpha: f64, margin: f64, sign: f64) -> f64 {
    if s.is_empty() {
        return 0.0;
    }
    let sum: f64 = s.iter().map(|&v| softplus(sign * alpha * (v - margin))).sum();
    sum / (s.len() as f64 * alpha)
}

fn class_grad(s: &[f64], alpha: f64, margin: f64, sign: f64) -> Vec<f64> {
    let n = s.len() as f64;
    s.iter()
        .map(|&v| sign * logistic(sign * alpha * (v - margin)) / n)
        .collect()
}

pub fn semi_loss(s_semi: &[f64], params: &LossParams) -> f64 {
    class_term(s_semi, params.alpha_s, params.m_s, -1.0)
}

pub fn binomial_loss(s_pos: &[f64], s_neg: &[f64], params: &LossParams) -> f64 {
    class_term(s_pos, params.alpha_p, params.m_p, -1.0)
        + class_term(s_neg, params.alpha_n, params.m_n, 1.0)
}

pub fn trinomial_loss(batch: &PairBatch, params: &LossParams) -> f64 {
    binomial_loss(&batch.s_pos, &batch.s_neg, params) + semi_loss(&batch.s_semi, params)
}

/// Analytic gradient of [`trinomial_loss`] with respect to every similarity.
/// For the binomial loss, ignore (or zero) the `semi` entries.
pub fn loss_gradient(batch: &PairBatch, params: &LossParams) -> PairGradient {
    PairGradient {
        pos: class_grad(&batch.s_pos, params.alpha_p, params.m_p, -1.0),
        semi: class_grad(&batch.s_semi, params.alpha_s, params.m_s, -1.0),
        neg: class_grad(&batch.s_neg, params.alpha_n, params.m_n, 1.0),
    }
}
