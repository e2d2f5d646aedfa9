//! Dual-path MLP: a shared tanh trunk feeding a retrieval evidential head,
//! a parametric evidential head and a policy head over the answer vocabulary.
//!
//! Parameters live in one flat buffer so the optimizer, checkpoints and
//! finite-difference checks all see the same vector. Weight matrices are
//! row-major `[out, in]`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::softplus;
use crate::quadrant::K;
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub vocab_size: usize,
    /// Whether the parametric evidential head exists.
    pub param_head: bool,
    /// Whether a trainable conflict-gate logit is appended to the parameters.
    pub gate: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.vocab_size < 2 {
            return Err(Error::Config(format!(
                "model dims must be positive with vocab_size >= 2, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Offsets of every tensor inside the flat buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wr: usize,
    br: usize,
    wq: Option<usize>,
    bq: Option<usize>,
    wp: usize,
    bp: usize,
    gate: Option<usize>,
    total: usize,
}

fn build_layout(cfg: &ModelConfig) -> (Vec<ParamSpec>, Offsets) {
    let (d, h, v) = (cfg.input_dim, cfg.hidden, cfg.vocab_size);
    let mut specs = Vec::new();
    let mut offset = 0;
    let mut push = |name: &str, shape: Vec<usize>| {
        let len = shape.iter().product();
        specs.push(ParamSpec {
            name: name.to_string(),
            shape,
            offset,
            len,
        });
        offset += len;
        offset - len
    };
    let w1 = push("trunk.w1", vec![h, d]);
    let b1 = push("trunk.b1", vec![h]);
    let w2 = push("trunk.w2", vec![h, h]);
    let b2 = push("trunk.b2", vec![h]);
    let wr = push("head_rag.w", vec![K, h]);
    let br = push("head_rag.b", vec![K]);
    let (wq, bq) = if cfg.param_head {
        (
            Some(push("head_param.w", vec![K, h])),
            Some(push("head_param.b", vec![K])),
        )
    } else {
        (None, None)
    };
    let wp = push("head_policy.w", vec![v, h]);
    let bp = push("head_policy.b", vec![v]);
    let gate = cfg.gate.then(|| push("gate.logit", vec![1]));
    let total = offset;
    (
        specs,
        Offsets {
            w1,
            b1,
            w2,
            b2,
            wr,
            br,
            wq,
            bq,
            wp,
            bp,
            gate,
            total,
        },
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    layout: Vec<ParamSpec>,
    offsets: Offsets,
    values: Vec<f64>,
}

/// Hidden activations kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TrunkCache {
    pub x: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub logits_policy: Vec<f64>,
    pub z_rag: [f64; K],
    pub alpha_rag: [f64; K],
    pub z_param: Option<[f64; K]>,
    pub alpha_param: Option<[f64; K]>,
    pub rag: TrunkCache,
    pub param: Option<TrunkCache>,
}

impl PolicyOutput {
    pub fn hidden_rag(&self) -> &[f64] {
        &self.rag.h2
    }

    pub fn hidden_param(&self) -> Option<&[f64]> {
        self.param.as_ref().map(|c| c.h2.as_slice())
    }
}

/// Upstream gradients with respect to the three output blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads {
    pub logits_policy: Vec<f64>,
    pub z_rag: [f64; K],
    pub z_param: [f64; K],
}

impl OutputGrads {
    pub fn zeros(vocab_size: usize) -> Self {
        Self {
            logits_policy: vec![0.0; vocab_size],
            z_rag: [0.0; K],
            z_param: [0.0; K],
        }
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) {
    let n_in = x.len();
    out.clear();
    out.extend(b.iter().enumerate().map(|(o, &bo)| {
        let row = &w[o * n_in..(o + 1) * n_in];
        bo + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }));
}

fn head4(w: &[f64], b: &[f64], h: &[f64]) -> [f64; K] {
    let mut v = Vec::with_capacity(K);
    affine(w, b, h, &mut v);
    [v[0], v[1], v[2], v[3]]
}

fn evidential_alpha(z: &[f64; K]) -> [f64; K] {
    z.map(|v| softplus(v) + 1.0)
}

impl ModelParams {
    /// All-zero parameters.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (layout, offsets) = build_layout(&config);
        Ok(Self {
            values: vec![0.0; offsets.total],
            config,
            layout,
            offsets,
        })
    }

    /// Xavier-uniform weights, zero biases, and `gate_init` for the gate logit.
    pub fn init(config: ModelConfig, seed: u64, gate_init: f64) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        let mut rng = rng_for(seed, "model/init");
        for spec in &m.layout {
            if spec.shape.len() == 2 {
                let bound = (6.0 / (spec.shape[0] + spec.shape[1]) as f64).sqrt();
                for v in &mut m.values[spec.offset..spec.offset + spec.len] {
                    *v = rng.gen_range(-bound..bound);
                }
            }
        }
        if let Some(g) = m.offsets.gate {
            m.values[g] = gate_init;
        }
        Ok(m)
    }

    /// Rebuild from a flat buffer laid out as [`Self::layout`] describes.
    pub fn from_values(config: ModelConfig, values: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        if values.len() != m.values.len() {
            return Err(Error::DimensionMismatch {
                expected: m.values.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        m.values = values;
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &[ParamSpec] {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.offset..s.offset + s.len])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let spec = self.layout.iter().find(|s| s.name == name)?.clone();
        Some(&mut self.values[spec.offset..spec.offset + spec.len])
    }

    pub fn gate_index(&self) -> Option<usize> {
        self.offsets.gate
    }

    pub fn gate_logit(&self) -> Option<f64> {
        self.offsets.gate.map(|g| self.values[g])
    }

    fn slice(&self, off: usize, len: usize) -> &[f64] {
        &self.values[off..off + len]
    }

    fn trunk(&self, x: &[f64]) -> TrunkCache {
        let (d, h) = (self.config.input_dim, self.config.hidden);
        let o = &self.offsets;
        let mut h1 = Vec::with_capacity(h);
        affine(self.slice(o.w1, h * d), self.slice(o.b1, h), x, &mut h1);
        h1.iter_mut().for_each(|v| *v = v.tanh());
        let mut h2 = Vec::with_capacity(h);
        affine(self.slice(o.w2, h * h), self.slice(o.b2, h), &h1, &mut h2);
        h2.iter_mut().for_each(|v| *v = v.tanh());
        TrunkCache { x: x.to_vec(), h1, h2 }
    }

    pub fn forward(&self, x_rag: &[f64], x_param: &[f64]) -> Result<PolicyOutput> {
        let d = self.config.input_dim;
        for x in [x_rag, x_param] {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: x.len(),
                });
            }
        }
        let (h, v) = (self.config.hidden, self.config.vocab_size);
        let o = &self.offsets;
        let rag = self.trunk(x_rag);
        let z_rag = head4(self.slice(o.wr, K * h), self.slice(o.br, K), &rag.h2);
        let mut logits = Vec::with_capacity(v);
        affine(self.slice(o.wp, v * h), self.slice(o.bp, v), &rag.h2, &mut logits);
        let (z_param, param) = match (o.wq, o.bq) {
            (Some(wq), Some(bq)) => {
                let c = self.trunk(x_param);
                let z = head4(self.slice(wq, K * h), self.slice(bq, K), &c.h2);
                (Some(z), Some(c))
            }
            _ => (None, None),
        };
        if logits
            .iter()
            .chain(&z_rag)
            .chain(z_param.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("model outputs".into()));
        }
        Ok(PolicyOutput {
            logits_policy: logits,
            alpha_rag: evidential_alpha(&z_rag),
            z_rag,
            alpha_param: z_param.as_ref().map(evidential_alpha),
            z_param,
            rag,
            param,
        })
    }

    /// Accumulate parameter gradients for the given output gradients.
    pub fn backward(&self, out: &PolicyOutput, g: &OutputGrads, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.values.len(), "gradient buffer length");
        let (h, v) = (self.config.hidden, self.config.vocab_size);
        let o = self.offsets;

        let mut d_h2 = vec![0.0; h];
        accumulate_head(&self.values, grad, o.wr, o.br, K, h, &g.z_rag, &out.rag.h2, &mut d_h2);
        accumulate_head(
            &self.values,
            grad,
            o.wp,
            o.bp,
            v,
            h,
            &g.logits_policy,
            &out.rag.h2,
            &mut d_h2,
        );
        self.backward_trunk(&out.rag, &d_h2, grad);

        if let (Some(wq), Some(bq), Some(cache)) = (o.wq, o.bq, out.param.as_ref()) {
            let mut d_h2 = vec![0.0; h];
            accumulate_head(&self.values, grad, wq, bq, K, h, &g.z_param, &cache.h2, &mut d_h2);
            self.backward_trunk(cache, &d_h2, grad);
        }
    }

    fn backward_trunk(&self, c: &TrunkCache, d_h2: &[f64], grad: &mut [f64]) {
        let (d, h) = (self.config.input_dim, self.config.hidden);
        let o = self.offsets;
        let d_a2: Vec<f64> = d_h2.iter().zip(&c.h2).map(|(g, y)| g * (1.0 - y * y)).collect();
        let mut d_h1 = vec![0.0; h];
        accumulate_head(&self.values, grad, o.w2, o.b2, h, h, &d_a2, &c.h1, &mut d_h1);
        let d_a1: Vec<f64> = d_h1.iter().zip(&c.h1).map(|(g, y)| g * (1.0 - y * y)).collect();
        for (r, &ga) in d_a1.iter().enumerate() {
            if ga == 0.0 {
                continue;
            }
            grad[o.b1 + r] += ga;
            let row = &mut grad[o.w1 + r * d..o.w1 + (r + 1) * d];
            for (gw, &xi) in row.iter_mut().zip(&c.x) {
                *gw += ga * xi;
            }
        }
    }
}

/// Backprop through `y = W x + b`: accumulates dW, db and adds `Wᵀ dy` to `dx`.
#[allow(clippy::too_many_arguments)]
fn accumulate_head(
    values: &[f64],
    grad: &mut [f64],
    w: usize,
    b: usize,
    n_out: usize,
    n_in: usize,
    dy: &[f64],
    x: &[f64],
    dx: &mut [f64],
) {
    for r in 0..n_out {
        let g = dy[r];
        if g == 0.0 {
            continue;
        }
        grad[b + r] += g;
        let base = w + r * n_in;
        for i in 0..n_in {
            grad[base + i] += g * x[i];
            dx[i] += g * values[base + i];
        }
    }
}
