use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataforge::{D2Record, SftSample};
use crate::error::{Error, Result};
use crate::microworld::Response;
use crate::model::{encode_input, sequence_logprob, Gradient, Params, PromptEncoding};
use crate::objectives::{ce_loss, dpo_loss_with_reference, reference_logprobs, KlProbe, PreferencePair};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sft,
    Dpo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Monitored bound on KL to the reference; exceeding it only warns.
    pub kl_bound: Option<f64>,
    pub grad_clip: Option<f64>,
    pub eval_every: usize,
    pub beta_dpo: f64,
    /// Reference checkpoint for the preference stage.
    pub reference: Option<PathBuf>,
    pub kl_probe_prompts: usize,
    pub kl_probe_len: usize,
    /// Record elapsed seconds in the log. Off by default so logs are
    /// reproducible byte for byte.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::sft()
    }
}

impl TrainConfig {
    pub fn sft() -> Self {
        TrainConfig {
            stage: Stage::Sft,
            epochs: 10,
            batch_size: 16,
            learning_rate: 3e-3,
            optimizer: Optimizer::adam(),
            seed: 0,
            kl_bound: None,
            grad_clip: Some(5.0),
            eval_every: 50,
            beta_dpo: crate::objectives::DEFAULT_BETA_DPO,
            reference: None,
            kl_probe_prompts: 32,
            kl_probe_len: 8,
            log_wall_time: false,
        }
    }

    pub fn dpo() -> Self {
        TrainConfig { stage: Stage::Dpo, epochs: 8, learning_rate: 1e-3, ..TrainConfig::sft() }
    }

    /// Checks the hyperparameters the training loops rely on.
    pub fn validate_hyper(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("epochs, batch_size and eval_every must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} invalid", self.learning_rate)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("grad_clip must be positive".into()));
            }
        }
        if let Some(k) = self.kl_bound {
            if !(k >= 0.0) {
                return Err(Error::Config("kl_bound must be nonnegative".into()));
            }
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::Config("adam coefficients out of range".into()));
            }
        }
        if self.stage == Stage::Dpo && !(self.beta_dpo > 0.0) {
            return Err(Error::Config("beta_dpo must be positive".into()));
        }
        Ok(())
    }

    /// Full validation, including the reference requirement of the
    /// preference stage.
    pub fn validate(&self) -> Result<()> {
        self.validate_hyper()?;
        if self.stage == Stage::Dpo && self.reference.is_none() {
            return Err(Error::Config("dpo stage requires a reference checkpoint".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_to_reference: Option<f64>,
    pub grad_norm: f64,
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_to_reference: Option<f64>,
    #[serde(default)]
    pub kl_exceeded: bool,
}

/// Per-step records, optionally mirrored to a JSONL file as they happen.
#[derive(Debug, Default)]
pub struct TrainLog {
    pub records: Vec<TrainLogRecord>,
    pub epochs: Vec<EpochSummary>,
    file: Option<BufWriter<File>>,
}

impl TrainLog {
    pub fn new() -> Self {
        TrainLog::default()
    }

    /// Appends every record to `path` as it is logged.
    pub fn to_file(path: &Path) -> Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(TrainLog { file: Some(BufWriter::new(f)), ..TrainLog::default() })
    }

    fn push(&mut self, r: TrainLogRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            debug_assert!(r.step > last.step);
        }
        if let Some(f) = self.file.as_mut() {
            serde_json::to_writer(&mut *f, &r)?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        self.records.push(r);
        Ok(())
    }
}

struct Optim {
    kind: Optimizer,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optim {
    fn new(kind: Optimizer, lr: f64, n: usize) -> Self {
        Optim { kind, lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut Params, grad: &Gradient) {
        self.t += 1;
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.data.iter_mut().zip(&grad.data) {
                    *p -= self.lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for i in 0..params.data.len() {
                    let g = grad.data[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    params.data[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

fn clip(grad: &mut Gradient, max: Option<f64>) -> f64 {
    let norm = grad.norm();
    if let Some(c) = max {
        if norm > c {
            grad.scale(c / norm);
        }
    }
    norm
}

fn diverged(log: &mut TrainLog, step: usize, epoch: usize, loss: f64, grad_norm: f64) -> Error {
    let r = TrainLogRecord { step, epoch, loss, margin: None, kl_to_reference: None, grad_norm, wall_time: None };
    let msg = serde_json::to_string(&r).unwrap_or_default();
    let _ = log.push(r);
    Error::Diverged(format!("non-finite loss or gradient: {msg}"))
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeds::rng(&[seed, epoch as u64, 0xE9]));
    idx
}

/// Encodes 𝒟₁ for the model's input format.
pub fn encode_sft(d1: &[SftSample], model: &crate::model::ModelConfig) -> Result<Vec<(PromptEncoding, Response)>> {
    d1.iter().map(|s| Ok((encode_input(&s.scene, &s.question, model)?, s.answer.clone()))).collect()
}

pub fn encode_pairs(d2: &[D2Record], model: &crate::model::ModelConfig) -> Result<Vec<PreferencePair>> {
    d2.iter().map(|r| r.to_pair(model)).collect()
}

/// Stage 1: minimizes cross-entropy on grounded answers.
pub fn train_sft(d1: &[SftSample], cfg: &TrainConfig, init: &Params, log: &mut TrainLog) -> Result<Params> {
    if cfg.stage != Stage::Sft {
        return Err(Error::Config("train_sft needs stage = sft".into()));
    }
    cfg.validate_hyper()?;
    let data = encode_sft(d1, &init.config)?;
    train_ce(&data, cfg, init, log)
}

/// Cross-entropy loop over encoded samples.
pub fn train_ce(
    data: &[(PromptEncoding, Response)],
    cfg: &TrainConfig,
    init: &Params,
    log: &mut TrainLog,
) -> Result<Params> {
    if data.is_empty() {
        return Err(Error::Argument("no training samples".into()));
    }
    let start = Instant::now();
    let mut params = init.clone();
    let mut opt = Optim::new(cfg.optimizer, cfg.learning_rate, params.data.len());
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(data.len(), cfg.seed, epoch);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(PromptEncoding, Response)> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (loss, mut grad) = ce_loss(&params, &batch)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(diverged(log, step, epoch, loss, grad.norm()));
            }
            let grad_norm = clip(&mut grad, cfg.grad_clip);
            log.push(TrainLogRecord {
                step,
                epoch,
                loss,
                margin: None,
                kl_to_reference: None,
                grad_norm,
                wall_time: cfg.log_wall_time.then(|| start.elapsed().as_secs_f64()),
            })?;
            opt.step(&mut params, &grad);
            loss_sum += loss;
            batches += 1;
            step += 1;
        }
        log::info!("sft epoch {epoch}: mean loss {:.4}", loss_sum / batches as f64);
        log.epochs.push(EpochSummary {
            epoch,
            mean_loss: loss_sum / batches as f64,
            mean_margin: None,
            kl_to_reference: None,
            kl_exceeded: false,
        });
    }
    Ok(params)
}

/// Stage 2: DPO on preference pairs against a frozen copy of `theta1`.
pub fn train_dpo(theta1: &Params, d2: &[D2Record], cfg: &TrainConfig, log: &mut TrainLog) -> Result<Params> {
    if cfg.stage != Stage::Dpo {
        return Err(Error::Config("train_dpo needs stage = dpo".into()));
    }
    cfg.validate_hyper()?;
    let pairs = encode_pairs(d2, &theta1.config)?;
    train_preference(theta1, &pairs, cfg, log)
}

/// DPO loop over encoded pairs.
pub fn train_preference(
    theta1: &Params,
    pairs: &[PreferencePair],
    cfg: &TrainConfig,
    log: &mut TrainLog,
) -> Result<Params> {
    if pairs.is_empty() {
        return Err(Error::Argument("no preference pairs".into()));
    }
    let start = Instant::now();
    let reference = theta1.clone();
    let ref_lp = reference_logprobs(&reference, pairs)?;
    let probe_prompts: Vec<PromptEncoding> =
        pairs.iter().take(cfg.kl_probe_prompts.max(1)).map(|p| p.x.clone()).collect();
    let probe = KlProbe::new(&reference, &probe_prompts, cfg.kl_probe_len)?;

    let mut params = theta1.clone();
    let mut opt = Optim::new(cfg.optimizer, cfg.learning_rate, params.data.len());
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(pairs.len(), cfg.seed, epoch);
        let (mut loss_sum, mut margin_sum, mut batches) = (0.0, 0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<PreferencePair> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            let refs: Vec<(f64, f64)> = chunk.iter().map(|&i| ref_lp[i]).collect();
            let out = dpo_loss_with_reference(&params, cfg.beta_dpo, &batch, &refs)?;
            let mut grad = out.grad;
            if !out.loss.is_finite() || !grad.is_finite() {
                return Err(diverged(log, step, epoch, out.loss, grad.norm()));
            }
            let grad_norm = clip(&mut grad, cfg.grad_clip);
            let kl = if step % cfg.eval_every == 0 { Some(probe.measure(&params)?) } else { None };
            log.push(TrainLogRecord {
                step,
                epoch,
                loss: out.loss,
                margin: Some(out.margin),
                kl_to_reference: kl,
                grad_norm,
                wall_time: cfg.log_wall_time.then(|| start.elapsed().as_secs_f64()),
            })?;
            opt.step(&mut params, &grad);
            loss_sum += out.loss;
            margin_sum += out.margin;
            batches += 1;
            step += 1;
        }
        let kl = probe.measure(&params)?;
        if !kl.is_finite() {
            return Err(Error::Diverged(format!("kl to reference is {kl} after epoch {epoch}")));
        }
        let exceeded = cfg.kl_bound.is_some_and(|b| kl > b);
        if exceeded {
            log::warn!("epoch {epoch}: KL to reference {kl:.4} exceeds bound {:?}", cfg.kl_bound);
        }
        log::info!(
            "dpo epoch {epoch}: mean loss {:.4}, margin {:.4}, kl {kl:.4}",
            loss_sum / batches as f64,
            margin_sum / batches as f64
        );
        log.epochs.push(EpochSummary {
            epoch,
            mean_loss: loss_sum / batches as f64,
            mean_margin: Some(margin_sum / batches as f64),
            kl_to_reference: Some(kl),
            kl_exceeded: exceeded,
        });
    }
    debug_assert_eq!(reference.data, theta1.data);
    Ok(params)
}

/// Fraction of pairs with `log p(y⁺|x) > log p(y⁻|x)`.
pub fn preference_accuracy(params: &Params, pairs: &[PreferencePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Argument("no preference pairs".into()));
    }
    let mut wins = 0;
    for p in pairs {
        if sequence_logprob(params, &p.x, &p.y_plus)? > sequence_logprob(params, &p.x, &p.y_minus)? {
            wins += 1;
        }
    }
    Ok(wins as f64 / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataforge::{build_stage1, build_stage2, ForgeConfig, Stage1Config};
    use crate::model::{init_params, ModelConfig};

    fn model() -> ModelConfig {
        ModelConfig { d_model: 16, n_heads: 2, ..ModelConfig::default() }
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let d1 = build_stage1(20, 1, &Stage1Config::default()).unwrap();
        let init = init_params(model(), 1).unwrap();
        let cfg = TrainConfig { epochs: 1, learning_rate: 0.0, ..TrainConfig::sft() };
        let out = train_sft(&d1, &cfg, &init, &mut TrainLog::new()).unwrap();
        assert_eq!(out.data, init.data);
    }

    #[test]
    fn sft_is_deterministic_and_steps_increase() {
        let d1 = build_stage1(40, 1, &Stage1Config::default()).unwrap();
        let init = init_params(model(), 1).unwrap();
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::sft() };
        let (mut la, mut lb) = (TrainLog::new(), TrainLog::new());
        let a = train_sft(&d1, &cfg, &init, &mut la).unwrap();
        let b = train_sft(&d1, &cfg, &init, &mut lb).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_eq!(la.records, lb.records);
        assert!(la.records.windows(2).all(|w| w[1].step == w[0].step + 1));
        assert!(la.records.iter().all(|r| r.wall_time.is_none()));
    }

    #[test]
    fn wrong_stage_and_bad_hyper_are_config_errors() {
        let d1 = build_stage1(5, 1, &Stage1Config::default()).unwrap();
        let init = init_params(model(), 1).unwrap();
        assert!(matches!(train_sft(&d1, &TrainConfig::dpo(), &init, &mut TrainLog::new()), Err(Error::Config(_))));
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::sft() };
        assert!(matches!(train_sft(&d1, &bad, &init, &mut TrainLog::new()), Err(Error::Config(_))));
        assert!(TrainConfig::dpo().validate().is_err());
        assert!(TrainConfig { reference: Some("ref.ckpt".into()), ..TrainConfig::dpo() }.validate().is_ok());
    }

    #[test]
    fn nan_aborts_with_a_record() {
        let d1 = build_stage1(5, 1, &Stage1Config::default()).unwrap();
        let mut init = init_params(model(), 1).unwrap();
        init.data.iter_mut().for_each(|v| *v = f64::NAN);
        let mut log = TrainLog::new();
        let err = train_sft(&d1, &TrainConfig::sft(), &init, &mut log).unwrap_err();
        assert!(matches!(err, Error::Diverged(_)));
        assert_eq!(log.records.len(), 1);
    }

    #[test]
    fn dpo_step_zero_is_ln2_and_reference_untouched() {
        let d1 = build_stage1(300, 4, &Stage1Config::default()).unwrap();
        let d2 = build_stage2(&d1, &ForgeConfig::default(), 4).unwrap().records;
        let theta1 = init_params(model(), 3).unwrap();
        let before = theta1.checksum();
        let cfg = TrainConfig { epochs: 2, eval_every: 1, ..TrainConfig::dpo() };
        let mut log = TrainLog::new();
        let theta2 = train_dpo(&theta1, &d2, &cfg, &mut log).unwrap();
        assert_eq!(theta1.checksum(), before);
        assert_ne!(theta2.checksum(), before);
        assert!((log.records[0].loss - std::f64::consts::LN_2).abs() < 1e-9);
        assert_eq!(log.records[0].kl_to_reference, Some(0.0));
        assert!(log.records.iter().all(|r| r.kl_to_reference.is_some_and(f64::is_finite)));
    }

    #[test]
    fn kl_bound_only_warns() {
        let d1 = build_stage1(200, 4, &Stage1Config::default()).unwrap();
        let d2 = build_stage2(&d1, &ForgeConfig::default(), 4).unwrap().records;
        let theta1 = init_params(model(), 3).unwrap();
        let cfg = TrainConfig { epochs: 1, kl_bound: Some(0.0), learning_rate: 1e-2, ..TrainConfig::dpo() };
        let mut log = TrainLog::new();
        train_dpo(&theta1, &d2, &cfg, &mut log).unwrap();
        assert!(log.epochs[0].kl_exceeded);
    }
}
