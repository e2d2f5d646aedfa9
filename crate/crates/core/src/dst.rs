//! Dempster-Shafer conflict between the parametric and retrieval opinions.
//!
//! Quadrant beliefs are folded into a binary frame {Supported, Unsupported}
//! with `Supported = {KG, UG}` and `Unsupported = {KN, UN}`; the opinion's
//! uncertainty becomes the mass on Ω. Only the conflict mass is exposed,
//! never the renormalized combination.

use crate::error::{Error, Result};
use crate::opinion::DirichletOpinion;
use crate::quadrant::{K, QUADRANT_ORDER};
use crate::scalar::Real;

const MASS_TOL: f64 = 1e-12;

/// Mass function on {Supported, Unsupported, Ω}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryMass<T> {
    supported: T,
    unsupported: T,
    omega: T,
}

impl<T: Real> BinaryMass<T> {
    pub fn new(supported: T, unsupported: T, omega: T) -> Result<Self> {
        let tol = T::lit(MASS_TOL);
        for (name, v) in [("supported", supported), ("unsupported", unsupported), ("omega", omega)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("mass on {name}")));
            }
            if v < -tol || v > T::one() + tol {
                return Err(Error::InvalidInput(format!("mass on {name} = {v} outside [0, 1]")));
            }
        }
        let sum = supported + unsupported + omega;
        if (sum - T::one()).abs() > tol {
            return Err(Error::InvalidInput(format!("binary masses sum to {sum}")));
        }
        Ok(Self {
            supported,
            unsupported,
            omega,
        })
    }

    /// Sum belief masses laid out in [`QUADRANT_ORDER`].
    pub fn from_beliefs(belief: &[T], uncertainty: T) -> Result<Self> {
        if belief.len() != K {
            return Err(Error::DimensionMismatch {
                expected: K,
                got: belief.len(),
            });
        }
        let mut s = T::zero();
        let mut u = T::zero();
        for (q, &b) in QUADRANT_ORDER.iter().zip(belief) {
            if q.supported() {
                s = s + b;
            } else {
                u = u + b;
            }
        }
        Self::new(s, u, uncertainty)
    }

    pub fn supported(&self) -> T {
        self.supported
    }

    pub fn unsupported(&self) -> T {
        self.unsupported
    }

    pub fn omega(&self) -> T {
        self.omega
    }
}

/// Reduce a quadrant opinion to the binary frame, keeping `u` as `m(Ω)`.
pub fn reduce_to_binary<T: Real>(op: &DirichletOpinion<T, K>) -> Result<BinaryMass<T>> {
    BinaryMass::from_beliefs(op.belief(), op.uncertainty())
}

/// κ = m_param(S)·m_rag(U) + m_param(U)·m_rag(S), the mass on the empty set.
pub fn conflict_kappa<T: Real>(param: &BinaryMass<T>, rag: &BinaryMass<T>) -> Result<T> {
    // Masses accepted within MASS_TOL may sit a hair outside [0, 1].
    let kappa = param.supported * rag.unsupported + param.unsupported * rag.supported;
    if !kappa.is_finite() {
        return Err(Error::NonFinite("kappa".into()));
    }
    Ok(kappa.max(T::zero()).min(T::one()))
}

/// `w_ds = 1 + γ·κ·(1 − m_rag(Ω))`.
pub fn conflict_weight<T: Real>(kappa: T, rag_omega: T, gamma: T) -> Result<T> {
    let unit = |name: &'static str, v: T| -> Result<()> {
        if !v.is_finite() || v < T::zero() || v > T::one() {
            return Err(Error::domain(name, v.as_f64(), "[0, 1]"));
        }
        Ok(())
    };
    unit("kappa", kappa)?;
    unit("rag omega mass", rag_omega)?;
    if !gamma.is_finite() || gamma < T::zero() {
        return Err(Error::domain("gamma", gamma.as_f64(), "finite gamma >= 0"));
    }
    Ok(T::one() + gamma * kappa * (T::one() - rag_omega))
}

/// Conflict score and the gate weight derived from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConflictReport<T> {
    pub kappa: T,
    pub w_ds: T,
    pub gamma: T,
    pub param: BinaryMass<T>,
    pub rag: BinaryMass<T>,
}

impl<T: Real> ConflictReport<T> {
    pub fn between(param: &DirichletOpinion<T, K>, rag: &DirichletOpinion<T, K>, gamma: T) -> Result<Self> {
        let param = reduce_to_binary(param)?;
        let rag = reduce_to_binary(rag)?;
        let kappa = conflict_kappa(&param, &rag)?;
        let w_ds = conflict_weight(kappa, rag.omega().max(T::zero()).min(T::one()), gamma)?;
        Ok(Self {
            kappa,
            w_ds,
            gamma,
            param,
            rag,
        })
    }
}
