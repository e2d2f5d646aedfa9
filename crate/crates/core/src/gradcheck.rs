//! Analytic-versus-finite-difference gradient checks for every loss.
//!
//! Head losses are checked on random Dirichlet parameters. Policy and total
//! losses are checked on a micro-model (2 features, 3 hidden units, V = 4)
//! over all parameters, with the conflict weight pinned at its value for
//! the unperturbed parameters.

use rand::Rng as _;
use serde::Serialize;

use crate::align::{
    loss_dpo, loss_sft, loss_total_with, pair_logprobs, DpoConfig, HeadLossConfig, ModelConfig, ModelParams, Objective,
    OutputGrads, Variant,
};
use crate::edl::{adjusted_alpha, loss_edl, loss_fit, loss_fit_grad, loss_kl_grad, loss_kl_to_uniform, AnnealSchedule};
use crate::error::Result;
use crate::numerics::{finite_diff_grad, relative_error};
use crate::quadrant::{Quadrant, K};
use crate::scenario::PreferenceSample;
use crate::seed::{rng_indexed, Rng};

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub const LOSS_NAMES: [&str; 6] = ["L_fit", "L_KL", "L_EDL", "L_DPO", "L_SFT", "L_total"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossCheck {
    pub loss: String,
    pub configs: usize,
    pub worst_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub checks: Vec<LossCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Options for [`run`]. `corrupt` names a loss whose analytic gradient is
/// deliberately perturbed, to confirm the harness detects it.
#[derive(Debug, Clone, Default)]
pub struct GradCheckOptions {
    pub configs: usize,
    pub seed: u64,
    pub corrupt: Option<String>,
}

fn random_alpha(rng: &mut Rng) -> [f64; K] {
    [(); K].map(|_| 1.001 + rng.gen::<f64>() * 20.0)
}

fn random_target(rng: &mut Rng) -> [f64; K] {
    Quadrant::from_index(rng.gen_range(0..K)).expect("index < K").one_hot()
}

fn micro_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        input_dim: 2,
        hidden: 3,
        vocab_size: 4,
        param_head: variant.has_param_head(),
        gate: variant.has_gate(),
    }
}

fn micro_sample(rng: &mut Rng) -> PreferenceSample {
    let quadrant = Quadrant::from_index(rng.gen_range(0..K)).expect("index < K");
    let chosen = rng.gen_range(0..4u32);
    let rejected = (chosen + rng.gen_range(1..4u32)) % 4;
    let q = rng.gen_range(-2.0..2.0);
    let c = rng.gen_range(-2.0..2.0);
    PreferenceSample {
        id: 0,
        x_rag: vec![q, c],
        x_param: vec![q, 0.0],
        quadrant,
        chosen_token: chosen,
        rejected_token: rejected,
        gold_token: chosen,
        answerable: quadrant.known_param() || quadrant.gold_in_context(),
        gold_in_context: quadrant.gold_in_context(),
        known_param: quadrant.known_param(),
    }
}

fn micro_model(variant: Variant, rng: &mut Rng) -> Result<ModelParams> {
    let mut m = ModelParams::zeros(micro_config(variant))?;
    for v in m.values_mut() {
        *v = rng.gen_range(-1.5..1.5);
    }
    Ok(m)
}

fn check_one<F>(analytic: &[f64], f: F, theta: &[f64]) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let numeric = finite_diff_grad(f, theta, FD_STEP)?;
    Ok(relative_error(analytic, &numeric))
}

fn arr(v: &[f64]) -> [f64; K] {
    [v[0], v[1], v[2], v[3]]
}

fn case(name: &str, rng: &mut Rng) -> Result<(Vec<f64>, f64)> {
    // Returns (analytic gradient, relative error) for one random configuration.
    match name {
        "L_fit" => {
            let a = random_alpha(rng);
            let y = random_target(rng);
            let g = loss_fit_grad(&a, &y)?.to_vec();
            let e = check_one(&g, |t| loss_fit(&arr(t), &y).unwrap_or(f64::NAN), &a)?;
            Ok((g, e))
        }
        "L_KL" => {
            let a = random_alpha(rng);
            let g = loss_kl_grad(&a)?.to_vec();
            let e = check_one(&g, |t| loss_kl_to_uniform(&arr(t)).unwrap_or(f64::NAN), &a)?;
            Ok((g, e))
        }
        "L_EDL" => {
            let a = random_alpha(rng);
            let y = random_target(rng);
            let schedule = AnnealSchedule::new(rng.gen_range(0..=2000), 2000);
            let g = loss_edl(&a, &y, schedule)?.grad_alpha.to_vec();
            let f = |t: &[f64]| loss_edl(&arr(t), &y, schedule).map_or(f64::NAN, |v| v.total);
            debug_assert!(adjusted_alpha(&a, &y).is_ok());
            let e = check_one(&g, f, &a)?;
            Ok((g, e))
        }
        "L_DPO" | "L_SFT" => {
            let m = micro_model(Variant::Full, rng)?;
            let s = micro_sample(rng);
            let ref_lp = (rng.gen_range(-3.0..-0.1), rng.gen_range(-3.0..-0.1));
            let tau = rng.gen_range(0.2..3.0);
            let is_dpo = name == "L_DPO";
            let eval = |values: &[f64]| -> Result<(f64, Vec<f64>, crate::align::PolicyOutput)> {
                let p = ModelParams::from_values(m.config().clone(), values.to_vec())?;
                let out = p.forward(&s.x_rag, &s.x_param)?;
                let (l, g) = if is_dpo {
                    loss_dpo(&out.logits_policy, ref_lp, s.chosen_token, s.rejected_token, tau)?
                } else {
                    loss_sft(&out.logits_policy, s.chosen_token)?
                };
                Ok((l, g, out))
            };
            let (_, g_logits, out) = eval(m.values())?;
            let mut grad = vec![0.0; m.len()];
            let mut og = OutputGrads::zeros(4);
            og.logits_policy = g_logits;
            m.backward(&out, &og, &mut grad);
            let e = check_one(&grad, |t| eval(t).map_or(f64::NAN, |r| r.0), m.values())?;
            debug_assert!(pair_logprobs(&out.logits_policy, s.chosen_token, s.rejected_token).is_ok());
            Ok((grad, e))
        }
        "L_total" => {
            let variant = Variant::ALL[rng.gen_range(0..Variant::ALL.len())];
            let m = micro_model(variant, rng)?;
            let reference = micro_model(variant, rng)?;
            let s = micro_sample(rng);
            let dpo = DpoConfig {
                tau: rng.gen_range(0.2..3.0),
                gamma: rng.gen_range(0.0..2.0),
                sft_coeff: rng.gen_range(0.0..2.0),
            };
            let heads = HeadLossConfig {
                lambda_rag: rng.gen_range(0.01..1.0),
                lambda_param: rng.gen_range(0.01..1.0),
                schedule: AnnealSchedule::new(rng.gen_range(0..=2000), 2000),
            };
            let warm = rng.gen_bool(0.2);
            let objective = if warm {
                Objective::Warmup
            } else {
                Objective::Preference(&reference)
            };
            let mut grad = vec![0.0; m.len()];
            let b = loss_total_with(&m, objective, &s, variant, &dpo, &heads, None, &mut grad)?;
            let w0 = b.w_ds;
            let cfg = m.config().clone();
            let f = |t: &[f64]| {
                let p = match ModelParams::from_values(cfg.clone(), t.to_vec()) {
                    Ok(p) => p,
                    Err(_) => return f64::NAN,
                };
                let mut scratch = vec![0.0; t.len()];
                loss_total_with(&p, objective, &s, variant, &dpo, &heads, Some(w0), &mut scratch)
                    .map_or(f64::NAN, |b| b.total)
            };
            let e = check_one(&grad, f, m.values())?;
            Ok((grad, e))
        }
        other => unreachable!("unknown loss {other}"),
    }
}

/// Run every check over `configs` random configurations each.
pub fn run(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut checks = Vec::new();
    for (li, name) in LOSS_NAMES.iter().enumerate() {
        let mut worst = 0.0f64;
        for i in 0..opts.configs {
            let mut rng = rng_indexed(opts.seed, "gradcheck", (li * 1_000_000 + i) as u64);
            let (_, mut err) = case(name, &mut rng)?;
            if opts.corrupt.as_deref() == Some(name) {
                // A perturbed analytic gradient must push the error over tolerance.
                let mut rng = rng_indexed(opts.seed, "gradcheck", (li * 1_000_000 + i) as u64);
                let (g, _) = case(name, &mut rng)?;
                let mut bad = g.clone();
                bad[0] += 0.1 * (1.0 + g[0].abs());
                err = relative_error(&bad, &g).max(err);
            }
            worst = worst.max(err);
        }
        checks.push(LossCheck {
            loss: name.to_string(),
            configs: opts.configs,
            worst_rel_err: worst,
            passed: worst <= TOLERANCE,
        });
    }
    Ok(GradCheckReport {
        tolerance: TOLERANCE,
        step: FD_STEP,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_losses_pass_on_twenty_seeds() {
        let report = run(&GradCheckOptions {
            configs: 20,
            seed: 11,
            corrupt: None,
        })
        .unwrap();
        for c in &report.checks {
            assert!(c.passed, "{} worst {}", c.loss, c.worst_rel_err);
        }
    }

    #[test]
    fn corrupted_gradient_fails() {
        let report = run(&GradCheckOptions {
            configs: 3,
            seed: 2,
            corrupt: Some("L_SFT".into()),
        })
        .unwrap();
        assert!(!report.passed());
        let sft = report.checks.iter().find(|c| c.loss == "L_SFT").unwrap();
        assert!(!sft.passed);
        assert!(report.checks.iter().filter(|c| c.loss != "L_SFT").all(|c| c.passed));
    }
}
