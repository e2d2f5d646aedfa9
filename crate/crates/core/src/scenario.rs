//! Synthetic retrieval world and preference-pair datasets.
//!
//! Each fact has a gold answer token, a query key and a per-fact success
//! rate for answering without context. Features are built so that:
//!
//! * the query block carries the gold answer's code scaled by the success
//!   rate (strong for known facts, weak or absent for unknown ones), on top
//!   of the fact's key and per-sample noise;
//! * the context block carries the retrieved passage's answer code plus a
//!   retriever relevance score (cosine between query key and passage key).
//!   Gold retrieval returns the fact itself, noisy retrieval a distractor
//!   fact with a different answer.
//!
//! Token 0 is the abstention token `IDK`; tokens `1..V` are answers.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::quadrant::{quadrant_order_names, Quadrant, K, QUADRANT_ORDER};
use crate::seed::{normal, rng_for, rng_indexed, Rng};

pub type TokenId = u32;

/// The abstention token.
pub const IDK_TOKEN: TokenId = 0;

pub const DATASET_FORMAT: &str = "era-dataset/1";

/// Scale of the context answer codes relative to unit-variance noise.
const CONTEXT_CODE_SCALE: f64 = 2.0;
/// Scale of the per-fact query key.
const KEY_SCALE: f64 = 0.5;
/// Success rates of facts drawn as unknown are uniform on `[0, this)`.
const UNKNOWN_RATE_CAP: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub n_facts: usize,
    pub d_query: usize,
    pub d_context: usize,
    /// Answer vocabulary including the IDK token.
    pub vocab_size: usize,
    pub p_known: f64,
    pub p_gold: f64,
    /// Covariance between parametric knowledge and gold retrieval. Shifts
    /// this much probability from the conflicting quadrants (KN, UG) onto
    /// the consistent ones (KG, UN) while keeping both marginals.
    pub coupling: f64,
    pub noise_sigma: f64,
    pub idk_ratio: f64,
    pub delta: f64,
    pub n_samples_boundary: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_facts: 2000,
            d_query: 16,
            d_context: 8,
            vocab_size: 16,
            p_known: 0.5,
            p_gold: 0.5,
            coupling: 0.1,
            noise_sigma: 0.5,
            idk_ratio: 0.7,
            delta: 1.0,
            n_samples_boundary: 10,
            seed: 7,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must lie in [0, 1]")))
            }
        };
        prob("p_known", self.p_known)?;
        prob("p_gold", self.p_gold)?;
        prob("idk_ratio", self.idk_ratio)?;
        prob("delta", self.delta)?;
        if self.quadrant_shares().iter().any(|&v| v.is_nan() || v < 0.0) {
            return Err(Error::Config(format!(
                "coupling = {} leaves a negative quadrant share for p_known = {}, p_gold = {}",
                self.coupling, self.p_known, self.p_gold
            )));
        }
        if self.d_query < 1 || self.d_context < 2 {
            return Err(Error::Config(
                "d_query must be >= 1 and d_context >= 2 (answer code plus relevance score)".into(),
            ));
        }
        if self.vocab_size < 4 {
            return Err(Error::Config("vocab_size must be >= 4".into()));
        }
        if self.n_facts < 4 {
            return Err(Error::Config("n_facts must be >= 4".into()));
        }
        if self.n_samples_boundary < 1 {
            return Err(Error::Config("n_samples_boundary must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Probability of each quadrant in [`QUADRANT_ORDER`].
    pub fn quadrant_shares(&self) -> [f64; K] {
        let (pk, pg, c) = (self.p_known, self.p_gold, self.coupling);
        [
            pk * pg + c,
            pk * (1.0 - pg) - c,
            (1.0 - pk) * pg - c,
            (1.0 - pk) * (1.0 - pg) + c,
        ]
    }

    pub fn input_dim(&self) -> usize {
        self.d_query + self.d_context
    }

    pub fn vocabulary(&self) -> Vec<String> {
        (0..self.vocab_size)
            .map(|t| {
                if t == 0 {
                    "IDK".to_string()
                } else {
                    format!("ans{t:02}")
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fact {
    pub id: usize,
    pub gold_token: TokenId,
    pub key: Vec<f64>,
    /// Draw of the generator's known/unknown coin.
    pub latent_known: bool,
    /// Per-sample probability of answering correctly without context.
    pub success_rate: f64,
    /// Outcome of the N-sample consistency test.
    pub known_param: bool,
    /// The answer the query alone most suggests besides the gold one.
    pub hallucination_token: TokenId,
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub facts: Vec<Fact>,
    /// Per-token answer code in query space.
    pub query_codes: Vec<Vec<f64>>,
    /// Per-token answer code in context space (without the score channel).
    pub context_codes: Vec<Vec<f64>>,
}

fn gaussian_vec(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * normal(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let n = (dot(a, a) * dot(b, b)).sqrt();
    if n == 0.0 {
        0.0
    } else {
        dot(a, b) / n
    }
}

/// Simulate `N` answer attempts at `success_rate`; the fact is known when
/// the share of correct attempts reaches `delta`.
///
/// With the default `delta = 1.0` this means all attempts must succeed.
pub fn boundary_membership(success_rate: f64, config: &WorldConfig, rng: &mut Rng) -> bool {
    let n = config.n_samples_boundary;
    let correct = (0..n).filter(|_| rng.gen::<f64>() < success_rate).count();
    correct as f64 / n as f64 >= config.delta
}

pub fn generate_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let mut code_rng = rng_for(config.seed, "world/codes");
    let ctx_dim = config.d_context - 1;
    let query_codes: Vec<Vec<f64>> = (0..config.vocab_size)
        .map(|_| gaussian_vec(&mut code_rng, config.d_query, 1.0))
        .collect();
    let context_codes: Vec<Vec<f64>> = (0..config.vocab_size)
        .map(|_| gaussian_vec(&mut code_rng, ctx_dim, CONTEXT_CODE_SCALE))
        .collect();

    let mut facts = Vec::with_capacity(config.n_facts);
    for id in 0..config.n_facts {
        let mut rng = rng_indexed(config.seed, "world/fact", id as u64);
        let gold_token = rng.gen_range(1..config.vocab_size) as TokenId;
        let key = gaussian_vec(&mut rng, config.d_query, KEY_SCALE);
        let latent_known = rng.gen::<f64>() < config.p_known;
        let success_rate = if latent_known {
            1.0
        } else {
            rng.gen::<f64>() * UNKNOWN_RATE_CAP
        };
        let known_param = boundary_membership(success_rate, config, &mut rng);
        let hallucination_token = (1..config.vocab_size as TokenId)
            .filter(|&t| t != gold_token)
            .max_by(|&a, &b| {
                let sa = dot(&query_codes[a as usize], &key);
                let sb = dot(&query_codes[b as usize], &key);
                sa.total_cmp(&sb).then(b.cmp(&a))
            })
            .expect("vocab_size >= 3");
        facts.push(Fact {
            id,
            gold_token,
            key,
            latent_known,
            success_rate,
            known_param,
            hallucination_token,
        });
    }
    Ok(World {
        config: config.clone(),
        facts,
        query_codes,
        context_codes,
    })
}

/// Wrong answers available when building a rejected response.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DistractorPool {
    /// Answer carried by a noisy passage (context-induced / noise answer).
    pub context_answer: Option<TokenId>,
    /// What the query alone suggests (parametric hallucination).
    pub parametric: Option<TokenId>,
    /// A wrong answer produced despite gold evidence.
    pub wrong_with_gold: Option<TokenId>,
}

/// Chosen and rejected tokens for one quadrant.
///
/// Where several rejected candidates exist, IDK is drawn with probability
/// `idk_ratio` and the remaining candidates are drawn uniformly otherwise.
pub fn build_preference_pair(
    quadrant: Quadrant,
    gold: TokenId,
    pool: &DistractorPool,
    idk: TokenId,
    idk_ratio: f64,
    rng: &mut Rng,
) -> Result<(TokenId, TokenId)> {
    let require = |name: &str, t: Option<TokenId>| {
        t.ok_or_else(|| Error::InvalidInput(format!("{quadrant} pair needs a {name} distractor")))
    };
    let mut pick_with_idk = |others: &[TokenId]| -> TokenId {
        if rng.gen::<f64>() < idk_ratio {
            idk
        } else {
            *others.choose(rng).expect("non-empty")
        }
    };
    let pair = match quadrant {
        Quadrant::KG => (gold, idk),
        Quadrant::KN => {
            let ctx = require("context", pool.context_answer)?;
            (gold, pick_with_idk(&[ctx]))
        }
        Quadrant::UG => {
            let wrong = require("wrong-with-gold", pool.wrong_with_gold)?;
            let para = require("parametric", pool.parametric)?;
            (gold, pick_with_idk(&[wrong, para]))
        }
        Quadrant::UN => {
            let para = require("parametric", pool.parametric)?;
            let ctx = require("context", pool.context_answer)?;
            let cands = [para, ctx, gold];
            (idk, *cands.choose(rng).expect("non-empty"))
        }
    };
    debug_assert_ne!(pair.0, pair.1);
    Ok(pair)
}

/// One preference example. Field names are the dataset wire format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceSample {
    pub id: u64,
    pub x_rag: Vec<f64>,
    pub x_param: Vec<f64>,
    pub quadrant: Quadrant,
    pub chosen_token: TokenId,
    pub rejected_token: TokenId,
    pub gold_token: TokenId,
    pub answerable: bool,
    pub gold_in_context: bool,
    pub known_param: bool,
}

impl PreferenceSample {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Dataset(format!("sample {}: {m}", self.id)));
        if self.x_rag.len() != self.x_param.len() {
            return fail("x_rag and x_param differ in length".into());
        }
        if self.chosen_token == self.rejected_token {
            return fail("chosen equals rejected".into());
        }
        for t in [self.chosen_token, self.rejected_token, self.gold_token] {
            if t as usize >= vocab_size {
                return fail(format!("token {t} outside vocabulary"));
            }
        }
        if self.quadrant != Quadrant::from_flags(self.known_param, self.gold_in_context) {
            return fail("quadrant inconsistent with flags".into());
        }
        if self.answerable != (self.known_param || self.gold_in_context) {
            return fail("answerable flag inconsistent".into());
        }
        if self.x_rag.iter().chain(&self.x_param).any(|v| !v.is_finite()) {
            return fail("non-finite feature".into());
        }
        Ok(())
    }

    pub fn target(&self) -> [f64; K] {
        self.quadrant.one_hot()
    }
}

/// Requested count per quadrant from [`WorldConfig::quadrant_shares`],
/// rounded by largest remainder so the counts sum to `n`.
pub fn stratification(config: &WorldConfig, n: usize) -> [usize; K] {
    let shares = config.quadrant_shares();
    let raw: Vec<f64> = shares.iter().map(|s| s * n as f64).collect();
    let mut counts = raw.map_floor();
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..K).collect();
    order.sort_by(|&a, &b| {
        (raw[b] - raw[b].floor())
            .total_cmp(&(raw[a] - raw[a].floor()))
            .then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

trait MapFloor {
    fn map_floor(&self) -> [usize; K];
}

impl MapFloor for Vec<f64> {
    fn map_floor(&self) -> [usize; K] {
        let mut out = [0; K];
        for (o, v) in out.iter_mut().zip(self) {
            *o = v.floor() as usize;
        }
        out
    }
}

fn make_sample(
    world: &World,
    id: u64,
    quadrant: Quadrant,
    pool_known: &[usize],
    pool_unknown: &[usize],
) -> Result<PreferenceSample> {
    let cfg = &world.config;
    let mut rng = rng_indexed(cfg.seed, "sample", id);
    let pool = if quadrant.known_param() {
        pool_known
    } else {
        pool_unknown
    };
    let fact = &world.facts[*pool.choose(&mut rng).ok_or_else(|| {
        Error::Dataset(format!(
            "no {} facts available for {quadrant}",
            if quadrant.known_param() { "known" } else { "unknown" }
        ))
    })?];
    let sigma = cfg.noise_sigma;

    let qcode = &world.query_codes[fact.gold_token as usize];
    let x_query: Vec<f64> = qcode
        .iter()
        .zip(&fact.key)
        .map(|(c, k)| fact.success_rate * c + k + sigma * normal(&mut rng))
        .collect();

    let passage = if quadrant.gold_in_context() {
        fact
    } else {
        // distractor with a different answer
        loop {
            let f = &world.facts[rng.gen_range(0..world.facts.len())];
            if f.gold_token != fact.gold_token {
                break f;
            }
        }
    };
    let ccode = &world.context_codes[passage.gold_token as usize];
    let mut x_context: Vec<f64> = ccode.iter().map(|c| c + sigma * normal(&mut rng)).collect();
    x_context.push(cosine(&fact.key, &passage.key) + sigma * normal(&mut rng));

    let wrong = loop {
        let t = rng.gen_range(1..cfg.vocab_size) as TokenId;
        if t != fact.gold_token {
            break t;
        }
    };
    let distractors = DistractorPool {
        context_answer: (!quadrant.gold_in_context()).then_some(passage.gold_token),
        parametric: Some(fact.hallucination_token),
        wrong_with_gold: Some(wrong),
    };
    let (chosen, rejected) = build_preference_pair(
        quadrant,
        fact.gold_token,
        &distractors,
        IDK_TOKEN,
        cfg.idk_ratio,
        &mut rng,
    )?;

    let mut x_rag = x_query.clone();
    x_rag.extend_from_slice(&x_context);
    let mut x_param = x_query;
    x_param.resize(cfg.input_dim(), 0.0);
    Ok(PreferenceSample {
        id,
        x_rag,
        x_param,
        quadrant,
        chosen_token: chosen,
        rejected_token: rejected,
        gold_token: fact.gold_token,
        answerable: quadrant.known_param() || quadrant.gold_in_context(),
        gold_in_context: quadrant.gold_in_context(),
        known_param: quadrant.known_param(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

/// First line of every dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub split: Split,
    pub seed: u64,
    pub quadrant_order: Vec<String>,
    pub vocabulary: Vec<String>,
    pub idk_token: TokenId,
    pub config: WorldConfig,
    /// Hex SHA-256 of the canonical world config JSON.
    pub config_hash: String,
    pub count: usize,
    pub stratification: [usize; K],
}

impl DatasetHeader {
    pub fn check_quadrant_order(&self) -> Result<()> {
        if self.quadrant_order != quadrant_order_names() {
            return Err(Error::Dataset(format!(
                "quadrant order {:?} differs from {:?}",
                self.quadrant_order,
                quadrant_order_names()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<PreferenceSample>,
}

impl Dataset {
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for s in &self.samples {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        let mut lines = std::io::BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Dataset(format!("{} is empty", path.display())))??;
        let header: DatasetHeader = serde_json::from_str(&header_line)?;
        if header.format != DATASET_FORMAT {
            return Err(Error::Dataset(format!("unsupported format `{}`", header.format)));
        }
        header.check_quadrant_order()?;
        let mut samples = Vec::with_capacity(header.count);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s: PreferenceSample = serde_json::from_str(&line)?;
            s.validate(header.config.vocab_size)?;
            samples.push(s);
        }
        if samples.len() != header.count {
            return Err(Error::Dataset(format!(
                "header promises {} samples, found {}",
                header.count,
                samples.len()
            )));
        }
        Ok(Self { header, samples })
    }

    pub fn histogram(&self) -> [usize; K] {
        let mut h = [0; K];
        for s in &self.samples {
            h[s.quadrant.index()] += 1;
        }
        h
    }
}

/// Hex SHA-256 of a serializable value's JSON form.
pub fn hash_json<T: Serialize>(value: &T) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(value)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Train and eval splits drawn from disjoint fact pools.
pub fn emit_dataset(world: &World, n_train: usize, n_eval: usize) -> Result<(Dataset, Dataset)> {
    let cfg = &world.config;
    if n_train == 0 || n_eval == 0 {
        return Err(Error::Config("n_train and n_eval must be positive".into()));
    }
    let cut = (world.facts.len() * n_train) / (n_train + n_eval);
    let cut = cut.clamp(1, world.facts.len() - 1);
    let split_pools = |range: std::ops::Range<usize>| {
        let (known, unknown): (Vec<usize>, Vec<usize>) = range.partition(|&i| world.facts[i].known_param);
        (known, unknown)
    };
    let train_pools = split_pools(0..cut);
    let eval_pools = split_pools(cut..world.facts.len());
    let config_hash = hash_json(cfg)?;

    let build = |split: Split, n: usize, first_id: u64, pools: &(Vec<usize>, Vec<usize>)| -> Result<Dataset> {
        let strat = stratification(cfg, n);
        let mut labels: Vec<Quadrant> = QUADRANT_ORDER
            .iter()
            .zip(strat)
            .flat_map(|(&q, c)| std::iter::repeat_n(q, c))
            .collect();
        let tag = match split {
            Split::Train => "order/train",
            Split::Eval => "order/eval",
        };
        labels.shuffle(&mut rng_for(cfg.seed, tag));
        let samples = labels
            .iter()
            .enumerate()
            .map(|(i, &q)| make_sample(world, first_id + i as u64, q, &pools.0, &pools.1))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            header: DatasetHeader {
                format: DATASET_FORMAT.to_string(),
                split,
                seed: cfg.seed,
                quadrant_order: quadrant_order_names(),
                vocabulary: cfg.vocabulary(),
                idk_token: IDK_TOKEN,
                config: cfg.clone(),
                config_hash: config_hash.clone(),
                count: n,
                stratification: strat,
            },
            samples,
        })
    };
    let train = build(Split::Train, n_train, 0, &train_pools)?;
    let eval = build(Split::Eval, n_eval, n_train as u64, &eval_pools)?;
    Ok((train, eval))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> WorldConfig {
        WorldConfig {
            n_facts: 300,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn world_is_deterministic() {
        let a = generate_world(&small_config()).unwrap();
        let b = generate_world(&small_config()).unwrap();
        assert_eq!(a.facts, b.facts);
        assert_eq!(a.query_codes, b.query_codes);
    }

    #[test]
    fn p_known_extremes_and_concentration() {
        let w = generate_world(&WorldConfig {
            p_known: 1.0,
            coupling: 0.0,
            ..small_config()
        })
        .unwrap();
        assert!(w.facts.iter().all(|f| f.latent_known && f.known_param));

        let w = generate_world(&WorldConfig {
            n_facts: 10_000,
            p_known: 0.5,
            ..WorldConfig::default()
        })
        .unwrap();
        let frac = w.facts.iter().filter(|f| f.latent_known).count() as f64 / 10_000.0;
        assert!((frac - 0.5).abs() <= 0.02, "known fraction {frac}");
    }

    #[test]
    fn boundary_examples() {
        let cfg = WorldConfig::default();
        let mut rng = rng_for(1, "t");
        assert!(boundary_membership(1.0, &cfg, &mut rng));
        assert!(!boundary_membership(0.0, &cfg, &mut rng));
        let trials = 20_000;
        let hits = (0..trials).filter(|_| boundary_membership(0.9, &cfg, &mut rng)).count();
        let rate = hits as f64 / trials as f64;
        // 0.9^10 = 0.3487; binomial sd ≈ 0.0034
        assert!((rate - 0.348_678_440_1).abs() < 0.015, "rate {rate}");
    }

    #[test]
    fn pair_rules() {
        let mut rng = rng_for(3, "pairs");
        let pool = DistractorPool {
            context_answer: Some(5),
            parametric: Some(6),
            wrong_with_gold: Some(7),
        };
        let gold = 3;
        for _ in 0..500 {
            assert_eq!(
                build_preference_pair(Quadrant::KG, gold, &pool, IDK_TOKEN, 0.7, &mut rng).unwrap(),
                (gold, IDK_TOKEN)
            );
            let (c, r) = build_preference_pair(Quadrant::KN, gold, &pool, IDK_TOKEN, 0.7, &mut rng).unwrap();
            assert_eq!(c, gold);
            assert!(r == IDK_TOKEN || r == 5);
            let (c, r) = build_preference_pair(Quadrant::UG, gold, &pool, IDK_TOKEN, 0.0, &mut rng).unwrap();
            assert_eq!(c, gold);
            assert!(r == 6 || r == 7);
            let (c, r) = build_preference_pair(Quadrant::UN, gold, &pool, IDK_TOKEN, 0.7, &mut rng).unwrap();
            assert_eq!(c, IDK_TOKEN);
            assert!([5, 6, gold].contains(&r));
        }
        let golds = (0..600)
            .filter(|_| {
                build_preference_pair(Quadrant::UN, gold, &pool, IDK_TOKEN, 0.7, &mut rng)
                    .unwrap()
                    .1
                    == gold
            })
            .count();
        assert!(golds > 0, "UN rejected must sometimes be the gold answer");
    }

    #[test]
    fn idk_ratio_is_sampling_probability() {
        let mut rng = rng_for(4, "ratio");
        let pool = DistractorPool {
            context_answer: Some(5),
            parametric: Some(6),
            wrong_with_gold: Some(7),
        };
        let n = 10_000;
        let idk = (0..n)
            .filter(|_| {
                build_preference_pair(Quadrant::KN, 2, &pool, IDK_TOKEN, 0.7, &mut rng)
                    .unwrap()
                    .1
                    == IDK_TOKEN
            })
            .count();
        assert!((idk as f64 / n as f64 - 0.7).abs() < 0.02);
    }

    #[test]
    fn missing_distractor_is_an_error() {
        let mut rng = rng_for(5, "err");
        let empty = DistractorPool::default();
        assert!(build_preference_pair(Quadrant::KG, 2, &empty, IDK_TOKEN, 0.7, &mut rng).is_ok());
        assert!(build_preference_pair(Quadrant::KN, 2, &empty, IDK_TOKEN, 0.7, &mut rng).is_err());
        assert!(build_preference_pair(Quadrant::UN, 2, &empty, IDK_TOKEN, 0.7, &mut rng).is_err());
    }

    #[test]
    fn stratification_sums() {
        let cfg = WorldConfig {
            p_known: 0.3,
            p_gold: 0.65,
            ..WorldConfig::default()
        };
        for n in [1, 7, 100, 999] {
            assert_eq!(stratification(&cfg, n).iter().sum::<usize>(), n);
        }
        let independent = WorldConfig {
            coupling: 0.0,
            ..WorldConfig::default()
        };
        assert_eq!(stratification(&independent, 1000), [250; 4]);
        assert_eq!(stratification(&WorldConfig::default(), 1000), [350, 150, 150, 350]);
    }

    #[test]
    fn dataset_invariants() {
        let cfg = small_config();
        let world = generate_world(&cfg).unwrap();
        let (train, eval) = emit_dataset(&world, 400, 120).unwrap();
        for (ds, n) in [(&train, 400), (&eval, 120)] {
            let want = stratification(&cfg, n);
            for (h, w) in ds.histogram().iter().zip(want) {
                assert!(h.abs_diff(w) <= 1);
            }
            for s in &ds.samples {
                s.validate(cfg.vocab_size).unwrap();
                assert_eq!(s.answerable, s.known_param || s.gold_in_context);
                if s.quadrant == Quadrant::KG {
                    assert_ne!(s.rejected_token, s.gold_token);
                }
                if s.quadrant == Quadrant::UN {
                    assert_eq!(s.chosen_token, IDK_TOKEN);
                }
                assert!(s.x_param[cfg.d_query..].iter().all(|&v| v == 0.0));
                assert_eq!(s.x_rag[..cfg.d_query], s.x_param[..cfg.d_query]);
            }
        }
        let train_ids: std::collections::HashSet<u64> = train.samples.iter().map(|s| s.id).collect();
        assert!(eval.samples.iter().all(|s| !train_ids.contains(&s.id)));
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(generate_world(&WorldConfig {
            idk_ratio: 1.5,
            ..small_config()
        })
        .is_err());
        assert!(generate_world(&WorldConfig {
            d_query: 0,
            ..small_config()
        })
        .is_err());
        assert!(generate_world(&WorldConfig {
            p_gold: -0.1,
            ..small_config()
        })
        .is_err());
        assert!(generate_world(&WorldConfig {
            coupling: 0.3,
            ..small_config()
        })
        .is_err());
    }
}
