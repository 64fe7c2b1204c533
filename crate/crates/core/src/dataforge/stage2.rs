use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, expand_response};
use super::perturb::{make_false_premise_record, perturb_negative, PerturbationTag};
use super::stage1::SftSample;
use super::stats::LengthStats;
use super::tilt::{solve_beta, tilt_weights, resample_indices, TiltConfig};
use crate::error::{Error, Result};
use crate::microworld::{judge_response, Question, Response, Scene};
use crate::model::{encode_input, ModelConfig};
use crate::objectives::PreferencePair;
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgeConfig {
    /// |𝒟₂| as a fraction of |𝒟₁|.
    pub ratio: f64,
    pub fp_fraction: f64,
    /// Expansion rounds per preferred answer are drawn from `0..=max`.
    pub max_expand_rounds: usize,
    /// Candidate pool size for the tilted draw, as a multiple of the number
    /// of non-false-premise pairs.
    pub pool_factor: f64,
    pub tilt_beta: f64,
    pub tilt_cap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tilt_target_mean: Option<f64>,
    /// Longest answer either side of a pair may have, `<eos>` included.
    pub max_answer_len: usize,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        ForgeConfig {
            ratio: 0.1,
            fp_fraction: 0.2,
            max_expand_rounds: 2,
            pool_factor: 2.0,
            tilt_beta: 0.15,
            tilt_cap: TiltConfig::DEFAULT_CAP,
            tilt_target_mean: None,
            max_answer_len: 16,
        }
    }
}

impl ForgeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Config(format!("ratio {} outside (0, 1]", self.ratio)));
        }
        if !(0.0..=1.0).contains(&self.fp_fraction) {
            return Err(Error::Config(format!("fp_fraction {} outside [0, 1]", self.fp_fraction)));
        }
        if !(self.pool_factor >= 1.0) {
            return Err(Error::Config("pool_factor must be at least 1".into()));
        }
        if !(self.tilt_cap >= 1.0) || !self.tilt_beta.is_finite() {
            return Err(Error::Config("tilt cap must be at least 1 and beta finite".into()));
        }
        if self.max_answer_len < 2 {
            return Err(Error::Config("max_answer_len must be at least 2".into()));
        }
        Ok(())
    }
}

/// One 𝒟₂ line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct D2Record {
    pub scene: Scene,
    pub question: Question,
    pub y_plus: Response,
    pub y_minus: Response,
    pub tag: PerturbationTag,
    /// Index of the 𝒟₁ sample whose scene this pair uses.
    pub origin_index: Option<usize>,
}

impl D2Record {
    pub fn to_pair(&self, model: &ModelConfig) -> Result<PreferencePair> {
        Ok(PreferencePair {
            x: encode_input(&self.scene, &self.question, model)?,
            y_plus: self.y_plus.clone(),
            y_minus: self.y_minus.clone(),
            provenance: self.tag,
        })
    }

    /// `grounded(y⁺) ∧ ¬grounded(y⁻)`.
    pub fn is_sound(&self) -> bool {
        self.y_plus != self.y_minus
            && judge_response(&self.scene, &self.question, &self.y_plus).grounded
            && !judge_response(&self.scene, &self.question, &self.y_minus).grounded
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DropCounts {
    pub augment_unrealizable: usize,
    pub no_negative: usize,
    pub unsound: usize,
    pub too_long: usize,
    pub false_premise_unrealizable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub d1_size: usize,
    pub requested: usize,
    pub emitted: usize,
    pub false_premise_pairs: usize,
    pub candidate_pool: usize,
    pub tilt_beta: f64,
    pub per_tag: BTreeMap<String, usize>,
    pub per_kind: BTreeMap<String, usize>,
    pub drops: DropCounts,
    pub d1_answer_lengths: Option<LengthStats>,
    pub pool_y_plus_lengths: Option<LengthStats>,
    pub d2_y_plus_lengths: Option<LengthStats>,
}

#[derive(Debug, Clone)]
pub struct Stage2Output {
    pub records: Vec<D2Record>,
    pub report: BuildReport,
}

fn fits(r: &D2Record, max: usize) -> bool {
    r.y_plus.len() <= max && r.y_minus.len() <= max
}

/// 𝒟₁ → 𝒟₂: harder re-questions with expanded preferred answers and
/// minimally perturbed negatives, a length-tilted draw over those, and
/// false-premise pairs.
pub fn build_stage2(d1: &[SftSample], cfg: &ForgeConfig, seed: u64) -> Result<Stage2Output> {
    if d1.is_empty() {
        return Err(Error::Argument("stage-1 dataset is empty".into()));
    }
    cfg.validate()?;
    let requested = ((d1.len() as f64 * cfg.ratio).round() as usize).max(1);
    let n_fp = (requested as f64 * cfg.fp_fraction).round() as usize;
    let n_main = requested - n_fp;
    let pool_target = (n_main as f64 * cfg.pool_factor).round() as usize;

    let mut order: Vec<usize> = (0..d1.len()).collect();
    order.shuffle(&mut seeds::rng(&[seed, 0x0D2]));
    let mut drops = DropCounts::default();

    let mut pool: Vec<D2Record> = Vec::with_capacity(pool_target);
    for &i in &order {
        if pool.len() >= pool_target {
            break;
        }
        let s = &d1[i];
        let item_seed = seeds::mix(&[seed, i as u64, 1]);
        let hard = match augment(s, item_seed) {
            Ok(h) => h,
            Err(Error::Unrealizable(_)) => {
                drops.augment_unrealizable += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let rounds = seeds::rng(&[item_seed, 2]).gen_range(0..=cfg.max_expand_rounds);
        let y_plus = expand_response(&hard.scene, &hard.question, &hard.answer, rounds);
        let (y_minus, tag) = match perturb_negative(&hard.scene, &hard.question, &y_plus, item_seed) {
            Ok(v) => v,
            Err(Error::Unrealizable(_) | Error::Argument(_)) => {
                drops.no_negative += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let r = D2Record { scene: hard.scene, question: hard.question, y_plus, y_minus, tag, origin_index: Some(i) };
        if !fits(&r, cfg.max_answer_len) {
            drops.too_long += 1;
        } else if !r.is_sound() {
            drops.unsound += 1;
        } else {
            pool.push(r);
        }
    }

    let mut fp: Vec<D2Record> = Vec::with_capacity(n_fp);
    for &i in &order {
        if fp.len() >= n_fp {
            break;
        }
        match make_false_premise_record(&d1[i].scene, seeds::mix(&[seed, i as u64, 3])) {
            Ok(mut r) => {
                r.origin_index = Some(i);
                if !fits(&r, cfg.max_answer_len) {
                    drops.too_long += 1;
                } else if !r.is_sound() {
                    drops.unsound += 1;
                } else {
                    fp.push(r);
                }
            }
            Err(Error::Unrealizable(_)) => drops.false_premise_unrealizable += 1,
            Err(e) => return Err(e),
        }
    }

    let pool_lengths: Vec<usize> = pool.iter().map(|r| r.y_plus.len()).collect();
    let (mut records, tilt_beta) = if pool.is_empty() || n_main == 0 {
        (Vec::new(), 0.0)
    } else {
        let mut tilt = TiltConfig::around(&pool_lengths, cfg.tilt_beta);
        tilt.cap = cfg.tilt_cap;
        tilt.target_mean = cfg.tilt_target_mean;
        let beta = match tilt.target_mean {
            Some(t) => solve_beta(&pool_lengths, tilt.mu_a, tilt.cap, t)?,
            None => tilt.beta,
        };
        let weights = tilt_weights(&pool_lengths, &tilt)?;
        let idx = resample_indices(&weights, n_main, seeds::mix(&[seed, 4]))?;
        (idx.into_iter().map(|k| pool[k].clone()).collect::<Vec<_>>(), beta)
    };
    let fp_count = fp.len();
    records.extend(fp);
    records.sort_by_key(|r| (r.origin_index, r.tag == PerturbationTag::PremiseCompliance));

    let mut per_tag = BTreeMap::new();
    let mut per_kind = BTreeMap::new();
    for r in &records {
        *per_tag.entry(r.tag.name().to_string()).or_insert(0) += 1;
        *per_kind.entry(r.question.kind.name().to_string()).or_insert(0) += 1;
    }
    let d1_lengths: Vec<usize> = d1.iter().map(|s| s.answer.len()).collect();
    let d2_lengths: Vec<usize> = records.iter().map(|r| r.y_plus.len()).collect();
    let report = BuildReport {
        d1_size: d1.len(),
        requested,
        emitted: records.len(),
        false_premise_pairs: fp_count,
        candidate_pool: pool.len(),
        tilt_beta,
        per_tag,
        per_kind,
        drops,
        d1_answer_lengths: LengthStats::from_lengths(&d1_lengths),
        pool_y_plus_lengths: LengthStats::from_lengths(&pool_lengths),
        d2_y_plus_lengths: LengthStats::from_lengths(&d2_lengths),
    };
    log::info!(
        "forged {} pairs ({} false-premise) from {} samples; pool {}",
        report.emitted,
        fp_count,
        d1.len(),
        report.candidate_pool
    );
    Ok(Stage2Output { records, report })
}
