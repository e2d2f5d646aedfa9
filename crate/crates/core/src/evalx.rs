//! Abstention-aware metrics, calibration and conflict analyses, and the
//! log-probability and self-consistency baselines.

use rand::distributions::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::align::{ModelParams, Variant};
use crate::error::{Error, Result};
use crate::numerics::{js_divergence, log_softmax, softmax};
use crate::opinion::DirichletOpinion;
use crate::quadrant::{Quadrant, K, QUADRANT_ORDER};
use crate::scenario::{PreferenceSample, TokenId, IDK_TOKEN};
use crate::seed::Rng;

pub const DEFAULT_ECE_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Answer,
    Abstain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub id: u64,
    pub decided: Decision,
    pub predicted_token: TokenId,
    pub gold_token: TokenId,
    pub correct: bool,
    pub answerable: bool,
    pub known_param: bool,
    pub gold_in_context: bool,
    pub quadrant: Quadrant,
    pub confidence: f64,
    pub p_rag: [f64; K],
    pub p_param: [f64; K],
    pub u_rag: f64,
    pub u_param: f64,
    pub kappa: Option<f64>,
    /// Most likely non-IDK token and its log-probability.
    pub answer_token: TokenId,
    pub answer_logprob: f64,
}

impl DecisionRecord {
    /// Builds a record whose decision is `predicted`, keeping the analysis fields.
    pub fn with_prediction(&self, predicted: TokenId) -> Self {
        let decided = if predicted == IDK_TOKEN {
            Decision::Abstain
        } else {
            Decision::Answer
        };
        Self {
            decided,
            predicted_token: predicted,
            correct: decided == Decision::Answer && predicted == self.gold_token,
            ..self.clone()
        }
    }

    pub fn answered(&self) -> bool {
        self.decided == Decision::Answer
    }
}

/// Argmax with ties going to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Head distribution and uncertainty: the Dirichlet mean and `u` for
/// evidential heads, softmax and `1 − max p` for the cross-entropy variant.
fn head_view(z: &[f64; K], alpha: &[f64; K], evidential: bool) -> Result<([f64; K], f64)> {
    if evidential {
        let op = DirichletOpinion::from_alpha(alpha)?;
        Ok((*op.predictive_mean().probs(), op.uncertainty()))
    } else {
        let p = softmax(z);
        let p = [p[0], p[1], p[2], p[3]];
        let m = p.iter().cloned().fold(0.0, f64::max);
        Ok((p, 1.0 - m))
    }
}

/// Run the policy on one sample and record its decision.
///
/// Without a parametric head the parametric view mirrors the retrieval head.
pub fn decide(model: &ModelParams, variant: Variant, sample: &PreferenceSample) -> Result<DecisionRecord> {
    let out = model.forward(&sample.x_rag, &sample.x_param)?;
    let evidential = variant.evidential();
    let (p_rag, u_rag) = head_view(&out.z_rag, &out.alpha_rag, evidential)?;
    let (p_param, u_param) = match (&out.z_param, &out.alpha_param) {
        (Some(z), Some(a)) => head_view(z, a, evidential)?,
        _ => (p_rag, u_rag),
    };
    let kappa = if variant.reports_kappa() {
        crate::align::conflict_of(&out, 1.0)?.map(|r| r.kappa)
    } else {
        None
    };
    let predicted = argmax(&out.logits_policy) as TokenId;
    let lp = log_softmax(&out.logits_policy);
    let answer = 1 + argmax(&lp[1..]);
    let confidence = p_rag.iter().cloned().fold(0.0, f64::max);
    let base = DecisionRecord {
        id: sample.id,
        decided: Decision::Abstain,
        predicted_token: IDK_TOKEN,
        gold_token: sample.gold_token,
        correct: false,
        answerable: sample.answerable,
        known_param: sample.known_param,
        gold_in_context: sample.gold_in_context,
        quadrant: sample.quadrant,
        confidence,
        p_rag,
        p_param,
        u_rag,
        u_param,
        kappa,
        answer_token: answer as TokenId,
        answer_logprob: lp[answer],
    };
    Ok(base.with_prediction(predicted))
}

/// Decision records for every sample, ordered by id.
pub fn evaluate(model: &ModelParams, variant: Variant, samples: &[PreferenceSample]) -> Result<Vec<DecisionRecord>> {
    let mut out = samples
        .iter()
        .map(|s| decide(model, variant, s))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by_key(|r| r.id);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub denoise_rate: f64,
    pub context_util: f64,
    pub abstain_recall: f64,
    pub abstain_precision: f64,
    pub abstain_f1: f64,
    pub overall_f1: f64,
    pub ece_per_quadrant: [f64; K],
    pub jsd_consistent: f64,
    pub jsd_conflict: f64,
    pub jsd_gap: f64,
    pub mean_max_prob: f64,
    /// Metrics whose denominator was empty and were reported as 0.
    pub undefined: Vec<String>,
}

struct Ratio<'a> {
    undefined: &'a mut Vec<String>,
}

impl Ratio<'_> {
    fn of(&mut self, name: &str, num: usize, den: usize) -> f64 {
        if den == 0 {
            self.undefined.push(name.to_string());
            0.0
        } else {
            num as f64 / den as f64
        }
    }
}

pub fn harmonic(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

pub fn compute_metrics(records: &[DecisionRecord]) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no decision records".into()));
    }
    let count = |f: &dyn Fn(&DecisionRecord) -> bool| records.iter().filter(|r| f(r)).count();
    let answerable = count(&|r| r.answerable);
    let answered = count(&|r| r.answered());
    let correct = count(&|r| r.correct);
    let correct_answerable = count(&|r| r.correct && r.answerable);
    let noise = count(&|r| r.known_param && !r.gold_in_context);
    let noise_correct = count(&|r| r.known_param && !r.gold_in_context && r.correct);
    let gold = count(&|r| r.gold_in_context && !r.known_param);
    let gold_correct = count(&|r| r.gold_in_context && !r.known_param && r.correct);
    let unanswerable = count(&|r| !r.answerable);
    let abstained = count(&|r| !r.answered());
    let right_abstain = count(&|r| !r.answered() && !r.answerable);

    let mut undefined = Vec::new();
    let mut ratio = Ratio {
        undefined: &mut undefined,
    };
    let recall = ratio.of("recall", correct_answerable, answerable);
    let precision = ratio.of("precision", correct, answered);
    let denoise_rate = ratio.of("denoise_rate", noise_correct, noise);
    let context_util = ratio.of("context_util", gold_correct, gold);
    let abstain_recall = ratio.of("abstain_recall", right_abstain, unanswerable);
    let abstain_precision = ratio.of("abstain_precision", right_abstain, abstained);
    let f1 = harmonic(recall, precision);
    let abstain_f1 = harmonic(abstain_recall, abstain_precision);

    let ece_per_quadrant = ece_per_quadrant(records, DEFAULT_ECE_BINS)?;
    let (jsd_consistent, jsd_conflict, jsd_gap) = conflict_sensitivity(records)?;
    Ok(MetricsReport {
        n: records.len(),
        recall,
        precision,
        f1,
        denoise_rate,
        context_util,
        abstain_recall,
        abstain_precision,
        abstain_f1,
        overall_f1: harmonic(f1, abstain_f1),
        ece_per_quadrant,
        jsd_consistent,
        jsd_conflict,
        jsd_gap,
        mean_max_prob: mean_max_prob(records),
        undefined,
    })
}

fn bin_index(c: f64, n_bins: usize) -> usize {
    ((c * n_bins as f64).floor() as usize).min(n_bins - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EceBin {
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

/// Equal-width reliability bins; empty bins report zeros.
pub fn ece_bins(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<Vec<EceBin>> {
    if confidences.len() != correct.len() {
        return Err(Error::DimensionMismatch {
            expected: confidences.len(),
            got: correct.len(),
        });
    }
    if n_bins == 0 {
        return Err(Error::InvalidInput("n_bins must be positive".into()));
    }
    let mut sum_c = vec![0.0; n_bins];
    let mut hits = vec![0usize; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::domain("confidence", c, "[0, 1]"));
        }
        let b = bin_index(c, n_bins);
        sum_c[b] += c;
        counts[b] += 1;
        hits[b] += ok as usize;
    }
    Ok((0..n_bins)
        .map(|b| {
            let n = counts[b].max(1) as f64;
            EceBin {
                bin: b,
                lower: b as f64 / n_bins as f64,
                upper: (b + 1) as f64 / n_bins as f64,
                count: counts[b],
                mean_confidence: sum_c[b] / n,
                accuracy: hits[b] as f64 / n,
            }
        })
        .collect())
}

/// `Σ_b (|b| / n) · |acc(b) − conf(b)|`; 0 for an empty input.
pub fn expected_calibration_error(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<f64> {
    let bins = ece_bins(confidences, correct, n_bins)?;
    let n = confidences.len();
    if n == 0 {
        return Ok(0.0);
    }
    Ok(bins
        .iter()
        .map(|b| b.count as f64 / n as f64 * (b.accuracy - b.mean_confidence).abs())
        .sum())
}

/// Confidences and quadrant-prediction correctness of the records in `q`.
fn quadrant_calibration(records: &[DecisionRecord], q: Quadrant) -> (Vec<f64>, Vec<bool>) {
    records
        .iter()
        .filter(|r| r.quadrant == q)
        .map(|r| (r.confidence, argmax(&r.p_rag) == q.index()))
        .unzip()
}

pub fn ece_per_quadrant(records: &[DecisionRecord], n_bins: usize) -> Result<[f64; K]> {
    let mut out = [0.0; K];
    for q in QUADRANT_ORDER {
        let (c, ok) = quadrant_calibration(records, q);
        out[q.index()] = expected_calibration_error(&c, &ok, n_bins)?;
    }
    Ok(out)
}

/// Mean JSD between the two heads on consistent (KG, UN) and conflicting
/// (KN, UG) samples, and the gap conflict − consistent.
pub fn conflict_sensitivity(records: &[DecisionRecord]) -> Result<(f64, f64, f64)> {
    let (mut cons, mut n_cons, mut conf, mut n_conf) = (0.0, 0usize, 0.0, 0usize);
    for r in records {
        let j = js_divergence(&r.p_rag, &r.p_param)?;
        if r.quadrant.consistent() {
            cons += j;
            n_cons += 1;
        } else {
            conf += j;
            n_conf += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    let (a, b) = (mean(cons, n_cons), mean(conf, n_conf));
    Ok((a, b, b - a))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimplexRow {
    pub id: u64,
    pub p_kg: f64,
    pub p_kn: f64,
    pub p_ug: f64,
    pub p_un: f64,
    pub quadrant: Quadrant,
    pub u_rag: f64,
}

pub fn simplex_dump(records: &[DecisionRecord]) -> Vec<SimplexRow> {
    records
        .iter()
        .map(|r| SimplexRow {
            id: r.id,
            p_kg: r.p_rag[0],
            p_kn: r.p_rag[1],
            p_ug: r.p_rag[2],
            p_un: r.p_rag[3],
            quadrant: r.quadrant,
            u_rag: r.u_rag,
        })
        .collect()
}

pub fn mean_max_prob(records: &[DecisionRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().map(|r| r.confidence).sum::<f64>() / records.len() as f64
}

/// Answer with the best non-IDK token iff its log-probability reaches `threshold`.
pub fn baseline_logprob(records: &[DecisionRecord], threshold: f64) -> Vec<DecisionRecord> {
    records
        .iter()
        .map(|r| {
            let t = if r.answer_logprob >= threshold {
                r.answer_token
            } else {
                IDK_TOKEN
            };
            r.with_prediction(t)
        })
        .collect()
}

/// Median answer log-probability, the data-driven threshold of the sweep.
pub fn median_answer_logprob(records: &[DecisionRecord]) -> Option<f64> {
    let mut v: Vec<f64> = records.iter().map(|r| r.answer_logprob).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelfConsistency {
    pub token: TokenId,
    pub agreement: f64,
    pub decided: Decision,
}

/// Draw `n_draws` tokens from the policy softmax; answer with the majority
/// token iff its agreement rate reaches `threshold`. Majority ties go to
/// the lowest token id.
pub fn self_consistency_from_logits(
    logits: &[f64],
    n_draws: usize,
    threshold: f64,
    rng: &mut Rng,
) -> Result<SelfConsistency> {
    if n_draws == 0 {
        return Err(Error::InvalidInput("n_draws must be >= 1".into()));
    }
    let p = softmax(logits);
    let dist = WeightedIndex::new(&p).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut counts = vec![0usize; p.len()];
    for _ in 0..n_draws {
        counts[dist.sample(rng)] += 1;
    }
    let top = argmax(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>());
    let agreement = counts[top] as f64 / n_draws as f64;
    let token = top as TokenId;
    let decided = if agreement >= threshold && token != IDK_TOKEN {
        Decision::Answer
    } else {
        Decision::Abstain
    };
    Ok(SelfConsistency {
        token,
        agreement,
        decided,
    })
}

pub fn baseline_self_consistency(
    model: &ModelParams,
    sample: &PreferenceSample,
    n_draws: usize,
    agreement_threshold: f64,
    rng: &mut Rng,
) -> Result<SelfConsistency> {
    let out = model.forward(&sample.x_rag, &sample.x_param)?;
    self_consistency_from_logits(&out.logits_policy, n_draws, agreement_threshold, rng)
}

/// Self-consistency decisions for every record, drawing with per-id streams.
pub fn self_consistency_records(
    model: &ModelParams,
    samples: &[PreferenceSample],
    records: &[DecisionRecord],
    n_draws: usize,
    threshold: f64,
    seed: u64,
) -> Result<Vec<DecisionRecord>> {
    samples
        .iter()
        .zip(records)
        .map(|(s, r)| {
            let mut rng = crate::seed::rng_indexed(seed, "baseline/self_consistency", s.id);
            let sc = baseline_self_consistency(model, s, n_draws, threshold, &mut rng)?;
            let t = match sc.decided {
                Decision::Answer => sc.token,
                Decision::Abstain => IDK_TOKEN,
            };
            Ok(r.with_prediction(t))
        })
        .collect()
}

#[derive(Serialize)]
struct EceRow {
    quadrant: Quadrant,
    bin: usize,
    lower: f64,
    upper: f64,
    count: usize,
    mean_confidence: f64,
    accuracy: f64,
}

#[derive(Serialize)]
struct JsdRow {
    id: u64,
    quadrant: Quadrant,
    group: &'static str,
    jsd: f64,
    kappa: String,
}

pub fn write_metrics_json(path: &Path, report: &MetricsReport) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(report)? + "\n")?;
    Ok(())
}

pub fn write_ece_csv(path: &Path, records: &[DecisionRecord], n_bins: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for q in QUADRANT_ORDER {
        let (c, ok) = quadrant_calibration(records, q);
        for b in ece_bins(&c, &ok, n_bins)? {
            w.serialize(EceRow {
                quadrant: q,
                bin: b.bin,
                lower: b.lower,
                upper: b.upper,
                count: b.count,
                mean_confidence: b.mean_confidence,
                accuracy: b.accuracy,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_simplex_csv(path: &Path, records: &[DecisionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in simplex_dump(records) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsd_csv(path: &Path, records: &[DecisionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(JsdRow {
            id: r.id,
            quadrant: r.quadrant,
            group: if r.quadrant.consistent() {
                "consistent"
            } else {
                "conflict"
            },
            jsd: js_divergence(&r.p_rag, &r.p_param)?,
            kappa: r.kappa.map_or_else(|| "n/a".to_string(), |k| k.to_string()),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use rand::Rng as _;
    use std::collections::HashSet;

    fn record(id: u64, q: Quadrant, predicted: TokenId, gold: TokenId) -> DecisionRecord {
        DecisionRecord {
            id,
            decided: Decision::Abstain,
            predicted_token: IDK_TOKEN,
            gold_token: gold,
            correct: false,
            answerable: q != Quadrant::UN,
            known_param: q.known_param(),
            gold_in_context: q.gold_in_context(),
            quadrant: q,
            confidence: 0.25,
            p_rag: [0.25; 4],
            p_param: [0.25; 4],
            u_rag: 1.0,
            u_param: 1.0,
            kappa: None,
            answer_token: 1,
            answer_logprob: -1.0,
        }
        .with_prediction(predicted)
    }

    fn worked_example() -> Vec<DecisionRecord> {
        use Quadrant::*;
        // 6 answerable, 4 unanswerable; 4 correct answers, 1 wrong answer on
        // an unanswerable query, 5 abstentions.
        vec![
            record(0, KG, 3, 3),
            record(1, KG, 4, 4),
            record(2, UG, 5, 5),
            record(3, KN, 6, 6),
            record(4, UG, 0, 2),
            record(5, KN, 0, 2),
            record(6, UN, 7, 2),
            record(7, UN, 0, 2),
            record(8, UN, 0, 2),
            record(9, UN, 0, 2),
        ]
    }

    #[test]
    fn worked_example_metrics() {
        let m = compute_metrics(&worked_example()).unwrap();
        assert!((m.recall - 4.0 / 6.0).abs() < 1e-15);
        assert!((m.precision - 0.8).abs() < 1e-15);
        assert!((m.f1 - 0.727_272_727_272_727_3).abs() < 1e-12);
        assert!((m.abstain_recall - 0.75).abs() < 1e-15);
        assert!((m.abstain_precision - 0.6).abs() < 1e-15);
        assert!((m.abstain_f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.overall_f1 - 0.695_652_173_913_043_5).abs() < 1e-12);
        assert!((m.overall_f1 - 0.6957).abs() < 5e-5);
    }

    #[test]
    fn perfect_and_always_abstain() {
        use Quadrant::*;
        let perfect = vec![
            record(0, KG, 1, 1),
            record(1, UG, 2, 2),
            record(2, KN, 3, 3),
            record(3, UN, 0, 4),
        ];
        let m = compute_metrics(&perfect).unwrap();
        for v in [
            m.recall,
            m.precision,
            m.f1,
            m.denoise_rate,
            m.context_util,
            m.abstain_recall,
            m.abstain_precision,
            m.abstain_f1,
            m.overall_f1,
        ] {
            assert_eq!(v, 1.0);
        }
        let abstain: Vec<_> = perfect.iter().map(|r| r.with_prediction(IDK_TOKEN)).collect();
        let m = compute_metrics(&abstain).unwrap();
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.overall_f1, 0.0);
        assert!(m.undefined.contains(&"precision".to_string()));
        assert!(compute_metrics(&[]).is_err());
    }

    /// Set-based recomputation straight from the metric definitions.
    fn brute_force(records: &[DecisionRecord]) -> [f64; 9] {
        let ids = |f: &dyn Fn(&DecisionRecord) -> bool| -> HashSet<u64> {
            records.iter().filter(|r| f(r)).map(|r| r.id).collect()
        };
        let s_ans = ids(&|r| r.predicted_token != IDK_TOKEN);
        let s_abs = ids(&|r| r.predicted_token == IDK_TOKEN);
        let correct = ids(&|r| r.predicted_token != IDK_TOKEN && r.predicted_token == r.gold_token);
        let i_ans = ids(&|r| r.known_param || r.gold_in_context);
        let i_unans: HashSet<u64> = records.iter().map(|r| r.id).filter(|i| !i_ans.contains(i)).collect();
        let i_noise = ids(&|r| r.known_param && !r.gold_in_context);
        let i_gold = ids(&|r| !r.known_param && r.gold_in_context);
        let frac = |a: &HashSet<u64>, b: &HashSet<u64>| {
            if b.is_empty() {
                0.0
            } else {
                a.intersection(b).count() as f64 / b.len() as f64
            }
        };
        let h = |a: f64, b: f64| if a + b == 0.0 { 0.0 } else { 2.0 * a * b / (a + b) };
        let ca: HashSet<u64> = correct.intersection(&s_ans).cloned().collect();
        let recall = frac(&ca, &i_ans);
        let precision = frac(&correct, &s_ans);
        let ar = frac(&s_abs, &i_unans);
        let ap = frac(&i_unans, &s_abs);
        let f1 = h(recall, precision);
        let af1 = h(ar, ap);
        [
            recall,
            precision,
            f1,
            frac(&correct, &i_noise),
            frac(&correct, &i_gold),
            ar,
            ap,
            af1,
            h(f1, af1),
        ]
    }

    #[test]
    fn metrics_match_enumeration_on_random_sets() {
        let mut rng = rng_for(5, "metrics-oracle");
        for _ in 0..200 {
            let n = rng.gen_range(1..40);
            let recs: Vec<_> = (0..n)
                .map(|i| {
                    let q = Quadrant::from_index(rng.gen_range(0..4)).unwrap();
                    let gold = rng.gen_range(1..5);
                    record(i, q, rng.gen_range(0..5), gold)
                })
                .collect();
            let m = compute_metrics(&recs).unwrap();
            let got = [
                m.recall,
                m.precision,
                m.f1,
                m.denoise_rate,
                m.context_util,
                m.abstain_recall,
                m.abstain_precision,
                m.abstain_f1,
                m.overall_f1,
            ];
            let want = brute_force(&recs);
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() <= 1e-12, "{got:?} vs {want:?}");
            }
            let (lo, hi) = (m.f1.min(m.abstain_f1), m.f1.max(m.abstain_f1));
            assert!(m.overall_f1 >= lo - 1e-12 && m.overall_f1 <= hi + 1e-12);
            assert!(m.overall_f1 <= 2.0 * lo + 1e-12);
        }
    }

    #[test]
    fn ece_examples() {
        assert_eq!(
            expected_calibration_error(&[1.0; 4], &[true, false, true, false], 15).unwrap(),
            0.5
        );
        assert!((expected_calibration_error(&[0.8], &[true], 15).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(
            expected_calibration_error(&[0.0, 0.0], &[false, false], 15).unwrap(),
            0.0
        );
        assert!(expected_calibration_error(&[0.5], &[], 15).is_err());
        assert!(expected_calibration_error(&[1.5], &[true], 15).is_err());
    }

    #[test]
    fn ece_bounded_and_permutation_invariant() {
        let mut rng = rng_for(6, "ece");
        for _ in 0..50 {
            let n = rng.gen_range(1..100);
            let c: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let ok: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
            let e = expected_calibration_error(&c, &ok, 15).unwrap();
            assert!((0.0..=1.0).contains(&e));
            let mut idx: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
            let c2: Vec<f64> = idx.iter().map(|&i| c[i]).collect();
            let ok2: Vec<bool> = idx.iter().map(|&i| ok[i]).collect();
            assert!((expected_calibration_error(&c2, &ok2, 15).unwrap() - e).abs() < 1e-12);
        }
    }

    #[test]
    fn jsd_examples() {
        use Quadrant::*;
        let mut recs: Vec<_> = [KG, KN, UG, UN]
            .iter()
            .enumerate()
            .map(|(i, &q)| record(i as u64, q, 0, 1))
            .collect();
        assert_eq!(conflict_sensitivity(&recs).unwrap(), (0.0, 0.0, 0.0));
        for r in recs.iter_mut().filter(|r| !r.quadrant.consistent()) {
            r.p_rag = [1.0, 0.0, 0.0, 0.0];
            r.p_param = [0.0, 1.0, 0.0, 0.0];
        }
        let (a, b, gap) = conflict_sensitivity(&recs).unwrap();
        assert_eq!(a, 0.0);
        assert!((b - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((gap - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn simplex_rows() {
        let recs = worked_example();
        let rows = simplex_dump(&recs);
        assert_eq!(rows.len(), recs.len());
        assert_eq!((rows[0].p_kg, rows[0].p_un, rows[0].u_rag), (0.25, 0.25, 1.0));
    }

    #[test]
    fn decide_tie_break_and_vacuous_confidence() {
        let cfg = crate::align::ModelConfig {
            input_dim: 2,
            hidden: 2,
            vocab_size: 4,
            param_head: true,
            gate: false,
        };
        let mut m = ModelParams::zeros(cfg).unwrap();
        for name in ["head_rag.b", "head_param.b"] {
            m.tensor_mut(name).unwrap().iter_mut().for_each(|v| *v = -60.0);
        }
        let s = PreferenceSample {
            id: 3,
            x_rag: vec![1.0, 1.0],
            x_param: vec![1.0, 0.0],
            quadrant: Quadrant::KG,
            chosen_token: 2,
            rejected_token: 0,
            gold_token: 2,
            answerable: true,
            gold_in_context: true,
            known_param: true,
        };
        // all logits tie: IDK (token 0) wins
        let r = decide(&m, Variant::Full, &s).unwrap();
        assert_eq!(r.decided, Decision::Abstain);
        assert!((r.confidence - 0.25).abs() < 1e-12);
        m.tensor_mut("head_policy.b").unwrap()[2] = 1.0;
        let r = decide(&m, Variant::Full, &s).unwrap();
        assert_eq!((r.decided, r.predicted_token, r.correct), (Decision::Answer, 2, true));
        m.tensor_mut("head_policy.b").unwrap()[0] = 2.0;
        assert_eq!(decide(&m, Variant::Full, &s).unwrap().decided, Decision::Abstain);
    }

    #[test]
    fn logprob_baseline_extremes() {
        let recs = worked_example();
        assert!(baseline_logprob(&recs, f64::NEG_INFINITY).iter().all(|r| r.answered()));
        assert!(baseline_logprob(&recs, f64::INFINITY).iter().all(|r| !r.answered()));
        let mut rng = rng_for(8, "lp");
        let recs: Vec<_> = (0..1001)
            .map(|i| {
                let mut r = record(i, Quadrant::KG, 1, 1);
                r.answer_logprob = -rng.gen::<f64>() * 5.0;
                r
            })
            .collect();
        let med = median_answer_logprob(&recs).unwrap();
        let rate = baseline_logprob(&recs, med).iter().filter(|r| !r.answered()).count() as f64 / 1001.0;
        assert!((rate - 0.5).abs() < 0.01);
    }

    #[test]
    fn self_consistency_examples() {
        let mut rng = rng_for(9, "sc");
        let sc = self_consistency_from_logits(&[-50.0, 50.0, -50.0], 10, 0.5, &mut rng).unwrap();
        assert_eq!((sc.token, sc.agreement, sc.decided), (1, 1.0, Decision::Answer));
        let trials = 2000;
        let abstains = (0..trials)
            .filter(|_| {
                self_consistency_from_logits(&[0.0; 16], 10, 0.5, &mut rng)
                    .unwrap()
                    .decided
                    == Decision::Abstain
            })
            .count();
        // P(answer) ≤ P(max count ≥ 5) ≈ 0.00295
        assert!(abstains as f64 / trials as f64 > 0.99);
        let one = self_consistency_from_logits(&[0.0, 1.0, 2.0], 1, 0.5, &mut rng).unwrap();
        assert_eq!(one.agreement, 1.0);
        assert!(self_consistency_from_logits(&[0.0; 3], 0, 0.5, &mut rng).is_err());
    }
}
