use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-8;

/// Temperature-scaled softmax with max subtraction.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Parameter(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    if logits.is_empty() {
        return Err(Error::Empty("softmax logits".into()));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out, temperature);
    Ok(out)
}

pub(crate) fn softmax_in_place(v: &mut [f64], temperature: f64) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = ((*x - max) / temperature).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Categorical distribution over a finite support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("distribution support".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Parameter(format!("invalid probabilities {probs:?}")));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!("probabilities sum to {s}")));
        }
        Ok(Distribution { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Distribution {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn one_hot(n: usize, index: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Distribution { probs }
    }

    pub fn from_logits(logits: &[f64], temperature: f64) -> Result<Self> {
        Ok(Distribution {
            probs: softmax(logits, temperature)?,
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.probs[i]
    }

    /// Lowest index among the most probable outcomes.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    /// Restriction to every outcome except `excluded`, renormalised.
    pub fn without(&self, excluded: usize) -> Result<Distribution> {
        if self.probs.len() < 2 {
            return Err(Error::Parameter(
                "cannot restrict a single-outcome distribution".into(),
            ));
        }
        let mut rest: Vec<f64> = self
            .probs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != excluded)
            .map(|(_, p)| p.max(PROB_FLOOR))
            .collect();
        let s: f64 = rest.iter().sum();
        rest.iter_mut().for_each(|p| *p /= s);
        Ok(Distribution { probs: rest })
    }
}

/// Lowest index of the maximum value.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// `KL(p ‖ q) = Σ p ln(p / q)` with `q` floored at [`PROB_FLOOR`].
pub fn categorical_kl(p: &Distribution, q: &Distribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!(
            "KL support mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(kl_slices(p.probs(), q.probs()))
}

pub(crate) fn kl_slices(p: &[f64], q: &[f64]) -> f64 {
    let mut kl = 0.0;
    for (pi, qi) in p.iter().zip(q) {
        if *pi > 0.0 {
            kl += pi * (pi.max(PROB_FLOOR).ln() - qi.max(PROB_FLOOR).ln());
        }
    }
    kl.max(0.0)
}
