//! Subjective-logic opinions over `K` classes.
//!
//! Evidence `e` maps to a Dirichlet with `α = e + 1`, strength `S = Σα`,
//! belief masses `b = e / S` and uncertainty `u = K / S`.

use crate::error::{Error, Result};
use crate::numerics::softplus;
use crate::scalar::Real;

/// Non-negative, finite per-class evidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evidence<T, const K: usize>([T; K]);

impl<T: Real, const K: usize> Evidence<T, K> {
    pub fn new(values: [T; K]) -> Result<Self> {
        for (i, &e) in values.iter().enumerate() {
            if !e.is_finite() {
                return Err(Error::NonFinite(format!("evidence[{i}]")));
            }
            if e < T::zero() {
                return Err(Error::InvalidInput(format!("evidence[{i}] = {e} is negative")));
            }
        }
        Ok(Self(values))
    }

    /// `e_k = softplus(z_k)`.
    pub fn from_logits(z: &[T; K]) -> Result<Self> {
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("logit[{i}]")));
        }
        Self::new(z.map(softplus))
    }

    pub fn values(&self) -> &[T; K] {
        &self.0
    }

    pub fn total(&self) -> T {
        self.0.iter().fold(T::zero(), |a, &b| a + b)
    }
}

/// Dirichlet opinion with every derived quantity computed at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletOpinion<T, const K: usize> {
    alpha: [T; K],
    belief: [T; K],
    uncertainty: T,
    strength: T,
}

impl<T: Real, const K: usize> DirichletOpinion<T, K> {
    pub fn from_evidence(e: &Evidence<T, K>) -> Self {
        let one = T::one();
        let alpha = e.0.map(|v| v + one);
        let strength = alpha.iter().fold(T::zero(), |a, &b| a + b);
        let belief = e.0.map(|v| v / strength);
        let uncertainty = T::from_usize(K).expect("K fits") / strength;
        Self {
            alpha,
            belief,
            uncertainty,
            strength,
        }
    }

    /// Rebuild from Dirichlet parameters; every `α_k` must be at least 1.
    pub fn from_alpha(alpha: &[T; K]) -> Result<Self> {
        let mut e = [T::zero(); K];
        for (i, &a) in alpha.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::NonFinite(format!("alpha[{i}]")));
            }
            if a < T::one() {
                return Err(Error::InvalidInput(format!("alpha[{i}] = {a} is below 1")));
            }
            e[i] = a - T::one();
        }
        Ok(Self::from_evidence(&Evidence(e)))
    }

    /// The zero-evidence opinion, `u = 1`.
    pub fn vacuous() -> Self {
        Self::from_evidence(&Evidence([T::zero(); K]))
    }

    pub fn alpha(&self) -> &[T; K] {
        &self.alpha
    }

    pub fn belief(&self) -> &[T; K] {
        &self.belief
    }

    pub fn uncertainty(&self) -> T {
        self.uncertainty
    }

    pub fn strength(&self) -> T {
        self.strength
    }

    /// Dirichlet mean `p_k = α_k / S`.
    pub fn predictive_mean(&self) -> PredictiveDistribution<T, K> {
        PredictiveDistribution(self.alpha.map(|a| a / self.strength))
    }
}

/// A probability vector over the `K` classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveDistribution<T, const K: usize>([T; K]);

impl<T: Real, const K: usize> PredictiveDistribution<T, K> {
    /// Validates non-negativity and normalization within 1e-9.
    pub fn new(p: [T; K]) -> Result<Self> {
        let mut sum = T::zero();
        for (i, &v) in p.iter().enumerate() {
            if !v.is_finite() || v < T::zero() {
                return Err(Error::InvalidInput(format!("probability[{i}] = {v}")));
            }
            sum = sum + v;
        }
        if (sum - T::one()).abs().as_f64() > 1e-9 {
            return Err(Error::InvalidInput(format!("probabilities sum to {sum}")));
        }
        Ok(Self(p))
    }

    pub fn probs(&self) -> &[T; K] {
        &self.0
    }

    /// Largest probability and its index; ties go to the lower index.
    pub fn max(&self) -> (usize, T) {
        let mut best = 0;
        for i in 1..K {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        (best, self.0[best])
    }
}
