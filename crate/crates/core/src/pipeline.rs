//! End-to-end runs: generation, training, evaluation, ablation and baseline
//! analysis over a single run configuration.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::align::train::write_step_log;
use crate::align::{Checkpoint, TrainConfig, TrainOutcome, Trainer, Variant};
use crate::error::{Error, Result};
use crate::evalx::{
    baseline_logprob, compute_metrics, evaluate, median_answer_logprob, self_consistency_records, write_ece_csv,
    write_jsd_csv, write_metrics_json, write_simplex_csv, DecisionRecord, MetricsReport, DEFAULT_ECE_BINS,
};
use crate::scenario::{emit_dataset, generate_world, hash_json, Dataset, WorldConfig};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const ECE_FILE: &str = "ece.csv";
pub const SIMPLEX_FILE: &str = "simplex.csv";
pub const JSD_FILE: &str = "jsd.csv";
pub const STEP_LOG_FILE: &str = "train_log.csv";
pub const BASELINES_FILE: &str = "baselines.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ece_bins: usize,
    pub logprob_thresholds: Vec<f64>,
    pub sc_draws: usize,
    pub sc_threshold: f64,
    pub ablation_seeds: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ece_bins: DEFAULT_ECE_BINS,
            logprob_thresholds: vec![-1.0, -2.0],
            sc_draws: 10,
            sc_threshold: 0.5,
            ablation_seeds: 3,
        }
    }
}

/// Every setting of a run. The root `seed` overrides the world and trainer
/// seeds when resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_eval: usize,
    pub world: WorldConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_train: 5000,
            n_eval: 1000,
            world: WorldConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn resolved(mut self) -> Result<Self> {
        self.world.seed = self.seed;
        self.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.train.validate()?;
        if self.n_train == 0 || self.n_eval == 0 {
            return Err(Error::Config("n_train and n_eval must be positive".into()));
        }
        if self.eval.ece_bins == 0 || self.eval.sc_draws == 0 || self.eval.ablation_seeds == 0 {
            return Err(Error::Config(
                "ece_bins, sc_draws and ablation_seeds must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn hash(&self) -> Result<String> {
        hash_json(self)
    }
}

pub fn generate(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let world = generate_world(&cfg.world)?;
    emit_dataset(&world, cfg.n_train, cfg.n_eval)
}

pub fn write_datasets(dir: &Path, train: &Dataset, eval: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    train.write_jsonl(&dir.join(TRAIN_FILE))?;
    eval.write_jsonl(&dir.join(EVAL_FILE))?;
    Ok(())
}

/// Failure of a training run, with the last finite parameters when
/// training got under way.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub last_good: Option<Box<Checkpoint>>,
}

impl From<Error> for TrainFailure {
    fn from(error: Error) -> Self {
        Self { error, last_good: None }
    }
}

pub fn train_on(data: &Dataset, cfg: &TrainConfig) -> std::result::Result<(Checkpoint, TrainOutcome), TrainFailure> {
    let hash = data.header.config_hash.clone();
    let mut trainer = Trainer::new(cfg.clone(), &data.samples, data.header.config.vocab_size)?;
    if let Err(error) = trainer.run() {
        let last_good = Checkpoint::new(trainer.model().clone(), cfg, hash, trainer.log().len())
            .ok()
            .map(Box::new);
        return Err(TrainFailure { error, last_good });
    }
    let outcome = trainer.into_outcome();
    let ck = Checkpoint::new(outcome.model.clone(), cfg, hash, outcome.log.len())?;
    Ok((ck, outcome))
}

pub fn save_training(dir: &Path, ck: &Checkpoint, log: &[crate::align::StepRecord]) -> Result<()> {
    ck.save(dir)?;
    write_step_log(&dir.join(STEP_LOG_FILE), log)
}

/// Checks that a checkpoint was trained on data from the same world.
pub fn check_compatible(ck: &Checkpoint, data: &Dataset) -> Result<()> {
    data.header.check_quadrant_order()?;
    if ck.manifest.config_hash != data.header.config_hash {
        return Err(Error::Checkpoint(format!(
            "checkpoint world hash {} does not match dataset hash {}",
            ck.manifest.config_hash, data.header.config_hash
        )));
    }
    Ok(())
}

pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    data: &Dataset,
    allow_mismatch: bool,
) -> Result<(Vec<DecisionRecord>, MetricsReport)> {
    data.header.check_quadrant_order()?;
    if !allow_mismatch {
        check_compatible(ck, data)?;
    }
    let records = evaluate(&ck.params, ck.manifest.variant, &data.samples)?;
    let metrics = compute_metrics(&records)?;
    Ok((records, metrics))
}

pub fn write_eval_outputs(
    dir: &Path,
    records: &[DecisionRecord],
    metrics: &MetricsReport,
    ece_bins: usize,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_metrics_json(&dir.join(METRICS_FILE), metrics)?;
    write_ece_csv(&dir.join(ECE_FILE), records, ece_bins)?;
    write_simplex_csv(&dir.join(SIMPLEX_FILE), records)?;
    write_jsd_csv(&dir.join(JSD_FILE), records)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineResult {
    pub name: String,
    pub threshold: f64,
    pub abstain_rate: f64,
    pub metrics: MetricsReport,
}

/// Logprob thresholds (configured plus the median) and self-consistency.
pub fn analyze(ck: &Checkpoint, data: &Dataset, cfg: &EvalConfig, seed: u64) -> Result<Vec<BaselineResult>> {
    let records = evaluate(&ck.params, ck.manifest.variant, &data.samples)?;
    let mut out = Vec::new();
    let abstain_rate = |r: &[DecisionRecord]| r.iter().filter(|x| !x.answered()).count() as f64 / r.len() as f64;
    let mut push = |name: String, threshold: f64, recs: Vec<DecisionRecord>| -> Result<()> {
        out.push(BaselineResult {
            name,
            threshold,
            abstain_rate: abstain_rate(&recs),
            metrics: compute_metrics(&recs)?,
        });
        Ok(())
    };
    push("policy_argmax".into(), f64::NAN, records.clone())?;
    let mut thresholds: Vec<(String, f64)> = cfg
        .logprob_thresholds
        .iter()
        .map(|&t| (format!("logprob_t{t}"), t))
        .collect();
    if let Some(m) = median_answer_logprob(&records) {
        thresholds.push(("logprob_median".into(), m));
    }
    for (name, t) in thresholds {
        push(name, t, baseline_logprob(&records, t))?;
    }
    let mut samples = data.samples.clone();
    samples.sort_by_key(|s| s.id);
    let sc = self_consistency_records(&ck.params, &samples, &records, cfg.sc_draws, cfg.sc_threshold, seed)?;
    push(format!("self_consistency_n{}", cfg.sc_draws), cfg.sc_threshold, sc)?;
    Ok(out)
}

pub fn write_baselines(path: &Path, results: &[BaselineResult]) -> Result<()> {
    // NaN thresholds are not valid JSON numbers
    let v: Vec<serde_json::Value> = results
        .iter()
        .map(|r| {
            let mut j = serde_json::to_value(r)?;
            if !r.threshold.is_finite() {
                j["threshold"] = serde_json::Value::Null;
            }
            Ok(j)
        })
        .collect::<Result<_>>()?;
    std::fs::write(path, serde_json::to_string_pretty(&v)? + "\n")?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Sample standard deviation; 0 for a single value.
    pub fn of(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub answer_f1: MeanSd,
    pub abstain_f1: MeanSd,
    pub overall_f1: MeanSd,
    pub per_seed: Vec<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// The variant with the highest mean Overall F1 (first on ties).
    pub fn best(&self) -> Option<Variant> {
        self.rows
            .iter()
            .fold(None::<&AblationRow>, |best, r| match best {
                Some(b) if b.overall_f1.mean >= r.overall_f1.mean => Some(b),
                _ => Some(r),
            })
            .map(|r| r.variant)
    }

    pub fn render(&self) -> String {
        let best = self.best();
        let mut s = String::from("| variant | seeds | Answer F1 | Abstain F1 | Overall F1 |\n|---|---|---|---|---|\n");
        for r in &self.rows {
            let name = if Some(r.variant) == best && r.variant == Variant::Full {
                format!("**{}**", r.variant)
            } else {
                r.variant.to_string()
            };
            let seeds = r.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",");
            let f = |m: MeanSd| format!("{:.4} ± {:.4}", m.mean, m.sd);
            s.push_str(&format!(
                "| {name} | {seeds} | {} | {} | {} |\n",
                f(r.answer_f1),
                f(r.abstain_f1),
                f(r.overall_f1)
            ));
        }
        s
    }
}

/// Train and evaluate every variant on shared seeds `seed, seed + 1, …`.
///
/// `progress` is called after each run with the variant, seed and metrics.
pub fn ablate(
    train: &Dataset,
    eval: &Dataset,
    base: &TrainConfig,
    seed: u64,
    n_seeds: usize,
    variants: &[Variant],
    mut progress: impl FnMut(Variant, u64, &MetricsReport),
) -> Result<AblationTable> {
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| seed + i).collect();
    let mut rows = Vec::new();
    for &variant in variants {
        let mut per_seed = Vec::new();
        for &s in &seeds {
            let cfg = TrainConfig {
                variant,
                seed: s,
                ..base.clone()
            };
            let (ck, _) = train_on(train, &cfg).map_err(|f| f.error)?;
            let (_, m) = evaluate_checkpoint(&ck, eval, false)?;
            progress(variant, s, &m);
            per_seed.push(m);
        }
        let col = |f: fn(&MetricsReport) -> f64| MeanSd::of(&per_seed.iter().map(f).collect::<Vec<_>>());
        rows.push(AblationRow {
            variant,
            seeds: seeds.clone(),
            answer_f1: col(|m| m.f1),
            abstain_f1: col(|m| m.abstain_f1),
            overall_f1: col(|m| m.overall_f1),
            per_seed,
        });
    }
    Ok(AblationTable { rows })
}

/// Files that differ between two directories among `names`.
pub fn compare_files(a: &Path, b: &Path, names: &[&str]) -> Result<Vec<String>> {
    let mut diffs = Vec::new();
    for n in names {
        if std::fs::read(a.join(n))? != std::fs::read(b.join(n))? {
            diffs.push(n.to_string());
        }
    }
    Ok(diffs)
}
