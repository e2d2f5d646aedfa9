//! Deterministic single-sample trainer: SFT warmup, reference snapshot, then
//! the unified objective under Adam with a warmup-cosine learning rate.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use super::loss::{loss_total, DpoConfig, HeadLossConfig, LossBreakdown, Objective, Variant};
use super::model::{ModelConfig, ModelParams};
use crate::edl::{AnnealSchedule, DEFAULT_ANNEAL_STEPS};
use crate::error::{Error, Result};
use crate::quadrant::Quadrant;
use crate::scenario::PreferenceSample;
use crate::seed::rng_indexed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub dpo: DpoConfig,
    pub lambda_rag: f64,
    pub lambda_param: f64,
    pub anneal_steps: usize,
    pub lr: f64,
    pub epochs: usize,
    /// SFT-only steps before the reference policy is frozen.
    pub sft_warmup_steps: usize,
    /// Fraction of all steps spent in linear learning-rate warmup.
    pub lr_warmup_ratio: f64,
    pub hidden: usize,
    pub seed: u64,
    /// Initial gate logit for `learnable_w`; −30 puts the gate at 1 + 9e-14.
    pub gate_init: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            dpo: DpoConfig::default(),
            lambda_rag: 0.1,
            lambda_param: 0.1,
            anneal_steps: DEFAULT_ANNEAL_STEPS,
            lr: 5e-4,
            epochs: 3,
            sft_warmup_steps: 200,
            lr_warmup_ratio: 0.1,
            hidden: 64,
            seed: 7,
            gate_init: -30.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.dpo.validate()?;
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must be finite and >= 0")))
            }
        };
        nonneg("lambda_rag", self.lambda_rag)?;
        nonneg("lambda_param", self.lambda_param)?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr = {} must be positive", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.lr_warmup_ratio) {
            return Err(Error::Config("lr_warmup_ratio must lie in [0, 1]".into()));
        }
        if self.epochs == 0 || self.hidden == 0 {
            return Err(Error::Config("epochs and hidden must be positive".into()));
        }
        if !self.gate_init.is_finite() {
            return Err(Error::Config("gate_init must be finite".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, input_dim: usize, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden: self.hidden,
            vocab_size,
            param_head: self.variant.has_param_head(),
            gate: self.variant.has_gate(),
        }
    }
}

/// Learning rate at `step` of `total`: linear warmup then cosine decay to 0.
pub fn learning_rate(base: f64, step: usize, total: usize, warmup_ratio: f64) -> f64 {
    let warm = ((total as f64) * warmup_ratio).ceil() as usize;
    if step < warm {
        return base * (step + 1) as f64 / warm as f64;
    }
    let span = total.saturating_sub(warm).max(1);
    let progress = ((step - warm) as f64 / span as f64).min(1.0);
    base * 0.5 * (1.0 + (PI * progress).cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Frozen copy of the policy taken at `snapshot_step`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePolicy {
    params: ModelParams,
    snapshot_step: usize,
}

impl ReferencePolicy {
    pub fn snapshot(params: &ModelParams, step: usize) -> Self {
        Self {
            params: params.clone(),
            snapshot_step: step,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn snapshot_step(&self) -> usize {
        self.snapshot_step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Dpo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub phase: Phase,
    pub sample_id: u64,
    pub quadrant: Quadrant,
    pub lr: f64,
    pub loss: LossBreakdown,
}

pub const STEP_LOG_HEADER: &str =
    "step,epoch,phase,sample_id,quadrant,lr,lambda,total,dpo,sft,head_rag,head_param,kappa,w_ds";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.10e}"))
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{:.6e},{:.6},{:.10e},{},{:.10e},{:.10e},{},{},{:.10e}",
            self.step,
            self.epoch,
            match self.phase {
                Phase::Warmup => "warmup",
                Phase::Dpo => "dpo",
            },
            self.sample_id,
            self.quadrant,
            self.lr,
            l.lambda,
            l.total,
            opt(l.dpo),
            l.sft,
            l.head_rag,
            opt(l.head_param),
            opt(l.kappa),
            l.w_ds
        )
    }
}

pub fn write_step_log(path: &Path, log: &[StepRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{STEP_LOG_HEADER}")?;
    for r in log {
        writeln!(w, "{}", r.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

/// Mean of `total` over the first and last `window` records.
pub fn smoothed_endpoints(log: &[StepRecord], window: usize) -> Option<(f64, f64)> {
    if log.len() < window || window == 0 {
        return None;
    }
    let mean = |s: &[StepRecord]| s.iter().map(|r| r.loss.total).sum::<f64>() / s.len() as f64;
    Some((mean(&log[..window]), mean(&log[log.len() - window..])))
}

/// Stepwise trainer; the held model is always the last finite state.
#[derive(Debug)]
pub struct Trainer<'a> {
    config: TrainConfig,
    data: &'a [PreferenceSample],
    model: ModelParams,
    reference: Option<ReferencePolicy>,
    adam: Adam,
    order: Vec<usize>,
    step: usize,
    total_steps: usize,
    log: Vec<StepRecord>,
    grad: Vec<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: &'a [PreferenceSample], vocab_size: usize) -> Result<Self> {
        config.validate()?;
        let first = data
            .first()
            .ok_or_else(|| Error::Dataset("training set is empty".into()))?;
        let model_cfg = config.model_config(first.x_rag.len(), vocab_size);
        let model = ModelParams::init(model_cfg, config.seed, config.gate_init)?;
        Self::with_model(config, data, model)
    }

    pub fn with_model(config: TrainConfig, data: &'a [PreferenceSample], model: ModelParams) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::Dataset("training set is empty".into()));
        }
        let n = model.len();
        let mut t = Self {
            total_steps: data.len() * config.epochs,
            config,
            data,
            reference: None,
            adam: Adam::new(n),
            order: Vec::new(),
            step: 0,
            log: Vec::new(),
            grad: vec![0.0; n],
            model,
        };
        if t.config.sft_warmup_steps == 0 {
            t.reference = Some(ReferencePolicy::snapshot(&t.model, 0));
        }
        Ok(t)
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    pub fn reference(&self) -> Option<&ReferencePolicy> {
        self.reference.as_ref()
    }

    pub fn log(&self) -> &[StepRecord] {
        &self.log
    }

    /// One optimizer step on one sample.
    pub fn step(&mut self) -> Result<()> {
        let n = self.data.len();
        let epoch = self.step / n;
        let pos = self.step % n;
        if pos == 0 {
            self.order = (0..n).collect();
            self.order
                .shuffle(&mut rng_indexed(self.config.seed, "train/order", epoch as u64));
        }
        let sample = &self.data[self.order[pos]];
        let heads = HeadLossConfig {
            lambda_rag: self.config.lambda_rag,
            lambda_param: self.config.lambda_param,
            schedule: AnnealSchedule::new(self.step, self.config.anneal_steps),
        };
        let (phase, objective) = match &self.reference {
            Some(r) => (Phase::Dpo, Objective::Preference(r.params())),
            None => (Phase::Warmup, Objective::Warmup),
        };
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        let step = self.step;
        let loss = loss_total(
            &self.model,
            objective,
            sample,
            self.config.variant,
            &self.config.dpo,
            &heads,
            &mut self.grad,
        )
        .map_err(|e| Error::Numerical {
            step,
            detail: format!("sample {}: {e}", sample.id),
        })?;
        if let Some(i) = self.grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical {
                step,
                detail: format!("non-finite gradient at parameter {i} on sample {}", sample.id),
            });
        }
        let lr = learning_rate(self.config.lr, step, self.total_steps, self.config.lr_warmup_ratio);
        self.adam.update(self.model.values_mut(), &self.grad, lr);
        self.log.push(StepRecord {
            step,
            epoch,
            phase,
            sample_id: sample.id,
            quadrant: sample.quadrant,
            lr,
            loss,
        });
        self.step += 1;
        if self.reference.is_none() && self.step >= self.config.sft_warmup_steps {
            self.reference = Some(ReferencePolicy::snapshot(&self.model, self.step));
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(())
    }

    pub fn into_outcome(self) -> TrainOutcome {
        TrainOutcome {
            model: self.model,
            reference: self.reference,
            log: self.log,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub reference: Option<ReferencePolicy>,
    pub log: Vec<StepRecord>,
}

pub fn train(data: &[PreferenceSample], vocab_size: usize, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut t = Trainer::new(config.clone(), data, vocab_size)?;
    t.run()?;
    Ok(t.into_outcome())
}
