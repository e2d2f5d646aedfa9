//! Evidential losses on Dirichlet parameters, with exact gradients.
//!
//! * data fit (Bayes risk of cross-entropy): `ψ(S) − ψ(α_y)`
//! * KL from `Dir(α̃)` to the uniform `Dir(1)`, with `α̃ = y + (1 − y) ⊙ α`
//! * `L_EDL = fit + λ_t · KL`, where `λ_t = min(1, t / t_anneal)`
//!
//! Gradients are with respect to `α`. The trigamma function supplies the
//! second derivatives of log-gamma.

use crate::error::{Error, Result};
use crate::numerics::{digamma, log_gamma, trigamma};
use crate::scalar::Real;

/// Default number of steps over which the KL weight ramps to 1.
pub const DEFAULT_ANNEAL_STEPS: usize = 2000;

/// Linear KL annealing, `λ_t = min(1, t / t_anneal)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnnealSchedule {
    step: usize,
    anneal_steps: usize,
    enabled: bool,
}

impl AnnealSchedule {
    pub fn new(step: usize, anneal_steps: usize) -> Self {
        Self {
            step,
            anneal_steps,
            enabled: true,
        }
    }

    /// λ ≡ 0 at every step (KL term switched off).
    pub fn disabled() -> Self {
        Self {
            step: 0,
            anneal_steps: DEFAULT_ANNEAL_STEPS,
            enabled: false,
        }
    }

    /// Same schedule evaluated at another step.
    pub fn at(self, step: usize) -> Self {
        Self { step, ..self }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn lambda<T: Real>(&self) -> T {
        if !self.enabled {
            return T::zero();
        }
        if self.anneal_steps == 0 || self.step >= self.anneal_steps {
            return T::one();
        }
        T::from_usize(self.step).unwrap() / T::from_usize(self.anneal_steps).unwrap()
    }
}

/// Index of the single 1 in a one-hot vector.
pub fn target_class<T: Real, const K: usize>(y: &[T; K]) -> Result<usize> {
    let mut hot = None;
    for (i, &v) in y.iter().enumerate() {
        if v == T::one() {
            if hot.is_some() {
                return Err(Error::InvalidInput("target has more than one hot entry".into()));
            }
            hot = Some(i);
        } else if v != T::zero() {
            return Err(Error::InvalidInput(format!("target entry {i} = {v} is not 0 or 1")));
        }
    }
    hot.ok_or_else(|| Error::InvalidInput("target has no hot entry".into()))
}

fn check_alpha<T: Real, const K: usize>(alpha: &[T; K]) -> Result<T> {
    let mut s = T::zero();
    for (i, &a) in alpha.iter().enumerate() {
        if !a.is_finite() {
            return Err(Error::NonFinite(format!("alpha[{i}]")));
        }
        if a < T::one() {
            return Err(Error::InvalidInput(format!("alpha[{i}] = {a} is below 1")));
        }
        s = s + a;
    }
    Ok(s)
}

/// `Σ_k y_k (ψ(S) − ψ(α_k))`.
pub fn loss_fit<T: Real, const K: usize>(alpha: &[T; K], y: &[T; K]) -> Result<T> {
    let s = check_alpha(alpha)?;
    let c = target_class(y)?;
    Ok(digamma(s)? - digamma(alpha[c])?)
}

/// ∂L_fit/∂α_k = ψ₁(S) − [k = y] ψ₁(α_y).
pub fn loss_fit_grad<T: Real, const K: usize>(alpha: &[T; K], y: &[T; K]) -> Result<[T; K]> {
    let s = check_alpha(alpha)?;
    let c = target_class(y)?;
    let mut g = [trigamma(s)?; K];
    g[c] = g[c] - trigamma(alpha[c])?;
    Ok(g)
}

/// `α̃ = y + (1 − y) ⊙ α`: the target coordinate is reset to 1.
pub fn adjusted_alpha<T: Real, const K: usize>(alpha: &[T; K], y: &[T; K]) -> Result<[T; K]> {
    check_alpha(alpha)?;
    let c = target_class(y)?;
    let mut out = *alpha;
    out[c] = T::one();
    Ok(out)
}

/// KL[Dir(α̃) ‖ Dir(1)].
pub fn loss_kl_to_uniform<T: Real, const K: usize>(alpha_tilde: &[T; K]) -> Result<T> {
    let s = check_alpha(alpha_tilde)?;
    if alpha_tilde.iter().all(|&a| a == T::one()) {
        return Ok(T::zero());
    }
    let k = T::from_usize(K).unwrap();
    let psi_s = digamma(s)?;
    let mut kl = log_gamma(s)? - log_gamma(k)?;
    for &a in alpha_tilde {
        kl = kl - log_gamma(a)? + (a - T::one()) * (digamma(a)? - psi_s);
    }
    Ok(kl.max(T::zero()))
}

/// ∂KL/∂α̃_j = (α̃_j − 1) ψ₁(α̃_j) − (S̃ − K) ψ₁(S̃).
pub fn loss_kl_grad<T: Real, const K: usize>(alpha_tilde: &[T; K]) -> Result<[T; K]> {
    let s = check_alpha(alpha_tilde)?;
    let excess = s - T::from_usize(K).unwrap();
    let tri_s = trigamma(s)?;
    let mut g = [T::zero(); K];
    for (gj, &a) in g.iter_mut().zip(alpha_tilde) {
        *gj = (a - T::one()) * trigamma(a)? - excess * tri_s;
    }
    Ok(g)
}

/// One head's evidential loss with its gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdlLossValue<T, const K: usize> {
    pub fit: T,
    pub kl: T,
    pub lambda: T,
    pub total: T,
    pub grad_alpha: [T; K],
}

pub fn loss_edl<T: Real, const K: usize>(
    alpha: &[T; K],
    y: &[T; K],
    schedule: AnnealSchedule,
) -> Result<EdlLossValue<T, K>> {
    let fit = loss_fit(alpha, y)?;
    let mut grad_alpha = loss_fit_grad(alpha, y)?;
    let lambda: T = schedule.lambda();
    let tilde = adjusted_alpha(alpha, y)?;
    let kl = loss_kl_to_uniform(&tilde)?;
    if lambda > T::zero() {
        let c = target_class(y)?;
        let kl_grad = loss_kl_grad(&tilde)?;
        for (j, g) in grad_alpha.iter_mut().enumerate() {
            // dα̃_j/dα_j = 1 − y_j
            if j != c {
                *g = *g + lambda * kl_grad[j];
            }
        }
    }
    Ok(EdlLossValue {
        fit,
        kl,
        lambda,
        total: fit + lambda * kl,
        grad_alpha,
    })
}

/// Weighted sum of the evidential losses of both heads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdlTotal<T, const K: usize> {
    pub total: T,
    pub rag: EdlLossValue<T, K>,
    pub param: EdlLossValue<T, K>,
    /// `λ_rag · ∂L_EDL/∂α_rag`
    pub grad_rag: [T; K],
    /// `λ_param · ∂L_EDL/∂α_param`
    pub grad_param: [T; K],
}

pub fn loss_edl_total<T: Real, const K: usize>(
    alpha_rag: &[T; K],
    alpha_param: &[T; K],
    y: &[T; K],
    schedule: AnnealSchedule,
    lambda_rag: T,
    lambda_param: T,
) -> Result<EdlTotal<T, K>> {
    let rag = loss_edl(alpha_rag, y, schedule)?;
    let param = loss_edl(alpha_param, y, schedule)?;
    Ok(EdlTotal {
        total: lambda_rag * rag.total + lambda_param * param.total,
        rag,
        param,
        grad_rag: rag.grad_alpha.map(|g| lambda_rag * g),
        grad_param: param.grad_alpha.map(|g| lambda_param * g),
    })
}
