//! Preference, imitation and head objectives, and the unified per-sample loss.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use super::model::{ModelParams, OutputGrads, PolicyOutput};
use crate::dst::ConflictReport;
use crate::edl::{loss_edl, AnnealSchedule};
use crate::error::{Error, Result};
use crate::numerics::{log_softmax, sigmoid, softmax, softplus};
use crate::opinion::DirichletOpinion;
use crate::quadrant::K;
use crate::scenario::{PreferenceSample, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpoConfig {
    pub tau: f64,
    pub gamma: f64,
    pub sft_coeff: f64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            gamma: 1.0,
            sft_coeff: 1.0,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau = {} must be positive", self.tau)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma = {} must be >= 0", self.gamma)));
        }
        if !(self.sft_coeff >= 0.0 && self.sft_coeff.is_finite()) {
            return Err(Error::Config(format!("sft_coeff = {} must be >= 0", self.sft_coeff)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoDual,
    LearnableW,
    CeOnly,
    NoKl,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoDual,
        Variant::LearnableW,
        Variant::CeOnly,
        Variant::NoKl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoDual => "no_dual",
            Variant::LearnableW => "learnable_w",
            Variant::CeOnly => "ce_only",
            Variant::NoKl => "no_kl",
        }
    }

    pub fn has_param_head(self) -> bool {
        self != Variant::NoDual
    }

    pub fn has_gate(self) -> bool {
        self == Variant::LearnableW
    }

    pub fn evidential(self) -> bool {
        self != Variant::CeOnly
    }

    /// Whether the conflict score is defined for this variant.
    pub fn reports_kappa(self) -> bool {
        matches!(self, Variant::Full | Variant::LearnableW | Variant::NoKl)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

/// Head-loss weights and KL annealing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadLossConfig {
    pub lambda_rag: f64,
    pub lambda_param: f64,
    pub schedule: AnnealSchedule,
}

/// `−log σ(τ·m)` and its derivative with respect to the margin `m`.
pub fn dpo_from_margin(margin: f64, tau: f64) -> (f64, f64) {
    let loss = softplus(-tau * margin);
    (loss, -tau * sigmoid(-tau * margin))
}

fn check_token(t: TokenId, v: usize) -> Result<usize> {
    let i = t as usize;
    if i >= v {
        return Err(Error::InvalidInput(format!("token {t} outside vocabulary of {v}")));
    }
    Ok(i)
}

fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("policy logits".into()));
    }
    Ok(())
}

/// Log-probabilities of the chosen and rejected tokens.
pub fn pair_logprobs(logits: &[f64], chosen: TokenId, rejected: TokenId) -> Result<(f64, f64)> {
    check_logits(logits)?;
    let (c, r) = (check_token(chosen, logits.len())?, check_token(rejected, logits.len())?);
    if c == r {
        return Err(Error::InvalidInput("chosen and rejected tokens coincide".into()));
    }
    let lp = log_softmax(logits);
    Ok((lp[c], lp[r]))
}

/// DPO loss on single-token responses and its gradient on the policy logits.
pub fn loss_dpo(
    logits: &[f64],
    ref_logprobs: (f64, f64),
    chosen: TokenId,
    rejected: TokenId,
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    let (lc, lr) = pair_logprobs(logits, chosen, rejected)?;
    let margin = (lc - ref_logprobs.0) - (lr - ref_logprobs.1);
    let (loss, dm) = dpo_from_margin(margin, tau);
    let mut grad = vec![0.0; logits.len()];
    grad[chosen as usize] += dm;
    grad[rejected as usize] -= dm;
    Ok((loss, grad))
}

/// Negative log-likelihood of the chosen token and its logit gradient.
pub fn loss_sft(logits: &[f64], chosen: TokenId) -> Result<(f64, Vec<f64>)> {
    check_logits(logits)?;
    let c = check_token(chosen, logits.len())?;
    let loss = -log_softmax(logits)[c];
    let mut grad = softmax(logits);
    grad[c] -= 1.0;
    Ok((loss, grad))
}

/// Softmax cross-entropy of four-way head logits against a quadrant index.
pub fn loss_ce_head(z: &[f64; K], target: usize) -> (f64, [f64; K]) {
    let loss = -log_softmax(z)[target];
    let p = softmax(z);
    let mut g = [0.0; K];
    for k in 0..K {
        g[k] = p[k] - if k == target { 1.0 } else { 0.0 };
    }
    (loss, g)
}

/// Evidential loss of one head and its gradient on the pre-softplus logits.
pub fn loss_edl_head(z: &[f64; K], y: &[f64; K], schedule: AnnealSchedule) -> Result<(f64, [f64; K])> {
    let alpha = z.map(|v| softplus(v) + 1.0);
    let v = loss_edl(&alpha, y, schedule)?;
    let mut g = [0.0; K];
    for k in 0..K {
        g[k] = v.grad_alpha[k] * sigmoid(z[k]);
    }
    Ok((v.total, g))
}

/// Conflict report between the two heads, when the variant defines one.
pub fn conflict_of(out: &PolicyOutput, gamma: f64) -> Result<Option<ConflictReport<f64>>> {
    match out.alpha_param {
        Some(ap) => {
            let param = DirichletOpinion::from_alpha(&ap)?;
            let rag = DirichletOpinion::from_alpha(&out.alpha_rag)?;
            Ok(Some(ConflictReport::between(&param, &rag, gamma)?))
        }
        None => Ok(None),
    }
}

/// What the preference term is compared against.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Imitation and head losses only.
    Warmup,
    /// Full objective against a frozen reference.
    Preference(&'a ModelParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub dpo: Option<f64>,
    pub sft: f64,
    pub head_rag: f64,
    pub head_param: Option<f64>,
    pub kappa: Option<f64>,
    pub w_ds: f64,
    pub lambda: f64,
}

/// Unified per-sample loss; gradients are accumulated into `grad`.
///
/// `w_ds` is evaluated on the current forward pass and held constant in the
/// gradient. For the learnable gate, `w = softplus(θ) + 1` replaces it and
/// `θ` receives `L_DPO · σ(θ)`.
pub fn loss_total(
    model: &ModelParams,
    objective: Objective<'_>,
    sample: &PreferenceSample,
    variant: Variant,
    dpo: &DpoConfig,
    heads: &HeadLossConfig,
    grad: &mut [f64],
) -> Result<LossBreakdown> {
    loss_total_with(model, objective, sample, variant, dpo, heads, None, grad)
}

/// [`loss_total`] with the conflict weight pinned to `w_fixed` when given.
///
/// The learnable gate is a parameter and is never pinned.
#[allow(clippy::too_many_arguments)]
pub fn loss_total_with(
    model: &ModelParams,
    objective: Objective<'_>,
    sample: &PreferenceSample,
    variant: Variant,
    dpo: &DpoConfig,
    heads: &HeadLossConfig,
    w_fixed: Option<f64>,
    grad: &mut [f64],
) -> Result<LossBreakdown> {
    let out = model.forward(&sample.x_rag, &sample.x_param)?;
    let y = sample.target();
    let target = sample.quadrant.index();
    let mut g = OutputGrads::zeros(model.config().vocab_size);
    let mut b = LossBreakdown {
        w_ds: 1.0,
        ..Default::default()
    };

    let schedule = if variant == Variant::NoKl {
        AnnealSchedule::disabled()
    } else {
        heads.schedule
    };
    b.lambda = schedule.lambda();

    let (rag_loss, rag_grad) = if variant.evidential() {
        loss_edl_head(&out.z_rag, &y, schedule)?
    } else {
        loss_ce_head(&out.z_rag, target)
    };
    b.head_rag = rag_loss;
    g.z_rag = rag_grad.map(|v| heads.lambda_rag * v);
    let mut total = heads.lambda_rag * rag_loss;

    if let Some(zp) = &out.z_param {
        let (loss, gp) = if variant.evidential() {
            loss_edl_head(zp, &y, schedule)?
        } else {
            loss_ce_head(zp, target)
        };
        b.head_param = Some(loss);
        g.z_param = gp.map(|v| heads.lambda_param * v);
        total += heads.lambda_param * loss;
    }

    if variant.reports_kappa() {
        if let Some(report) = conflict_of(&out, dpo.gamma)? {
            b.kappa = Some(report.kappa);
            if variant != Variant::LearnableW {
                b.w_ds = w_fixed.unwrap_or(report.w_ds);
            }
        }
    }
    if variant == Variant::LearnableW {
        let theta = model
            .gate_logit()
            .ok_or_else(|| Error::Config("learnable_w model lacks a gate".into()))?;
        b.w_ds = softplus(theta) + 1.0;
    }

    let (sft, sft_grad) = loss_sft(&out.logits_policy, sample.chosen_token)?;
    b.sft = sft;
    total += dpo.sft_coeff * sft;
    for (a, s) in g.logits_policy.iter_mut().zip(&sft_grad) {
        *a += dpo.sft_coeff * s;
    }

    if let Objective::Preference(reference) = objective {
        let ref_out = reference.forward(&sample.x_rag, &sample.x_param)?;
        let ref_lp = pair_logprobs(&ref_out.logits_policy, sample.chosen_token, sample.rejected_token)?;
        let (l, dg) = loss_dpo(
            &out.logits_policy,
            ref_lp,
            sample.chosen_token,
            sample.rejected_token,
            dpo.tau,
        )?;
        b.dpo = Some(l);
        total += b.w_ds * l;
        for (a, d) in g.logits_policy.iter_mut().zip(&dg) {
            *a += b.w_ds * d;
        }
        if variant == Variant::LearnableW {
            let gi = model.gate_index().expect("checked above");
            grad[gi] += l * sigmoid(model.values()[gi]);
        }
    }

    if !total.is_finite() {
        return Err(Error::NonFinite("total loss".into()));
    }
    b.total = total;
    model.backward(&out, &g, grad);
    Ok(b)
}
