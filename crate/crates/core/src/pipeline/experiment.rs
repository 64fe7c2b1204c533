//! The whole study in one call: build both datasets, train both stages and
//! evaluate the two policies on a held-out set.

use serde::{Deserialize, Serialize};

use super::train::{encode_pairs, preference_accuracy, train_dpo, train_sft, EpochSummary, TrainConfig, TrainLog, TrainLogRecord};
use crate::dataforge::{build_stage1, build_stage2, BuildReport, Stage1Config, ForgeConfig};
use crate::error::Result;
use crate::evalhall::{build_evalset, hallucination_rate, pairwise_compare, MetricsReport, PairwiseReport, Strata};
use crate::model::{init_params, DecodingConfig, ModelConfig, Params};
use crate::objectives::kl_to_reference;
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub d1_size: usize,
    pub eval_size: usize,
    pub stage1: Stage1Config,
    pub forge: ForgeConfig,
    pub model: ModelConfig,
    pub sft: TrainConfig,
    pub dpo: TrainConfig,
    pub strata: Strata,
    pub decoding: DecodingConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 20_251_017,
            d1_size: 10_000,
            eval_size: 839,
            stage1: Stage1Config::default(),
            forge: ForgeConfig::default(),
            model: ModelConfig::default(),
            sft: TrainConfig::sft(),
            dpo: TrainConfig::dpo(),
            strata: Strata::default(),
            decoding: DecodingConfig::greedy(16),
        }
    }
}

/// Seeds of the individual steps, all derived from the experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSeeds {
    pub stage1: u64,
    pub forge: u64,
    pub init: u64,
    pub sft: u64,
    pub dpo: u64,
    pub eval: u64,
}

impl StepSeeds {
    pub fn derive(seed: u64) -> Self {
        StepSeeds {
            stage1: seeds::mix(&[seed, 1]),
            forge: seeds::mix(&[seed, 2]),
            init: seeds::mix(&[seed, 3]),
            sft: seeds::mix(&[seed, 4]),
            dpo: seeds::mix(&[seed, 5]),
            eval: seeds::mix(&[seed, 6]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub seeds: StepSeeds,
    pub theta1: Params,
    pub theta2: Params,
    pub forge_report: BuildReport,
    pub sft_records: Vec<TrainLogRecord>,
    pub sft_epochs: Vec<EpochSummary>,
    pub dpo_records: Vec<TrainLogRecord>,
    pub dpo_epochs: Vec<EpochSummary>,
    pub metrics_sft: MetricsReport,
    pub metrics_dpo: MetricsReport,
    /// A is the SFT policy, B the DPO policy.
    pub pairwise: PairwiseReport,
    pub preference_accuracy_sft: f64,
    pub preference_accuracy_dpo: f64,
    pub kl_final: f64,
}

/// Summary that fully determines the reported numbers, for checksumming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub theta1_checksum: String,
    pub theta2_checksum: String,
    pub forge_report: BuildReport,
    pub metrics_sft: MetricsReport,
    pub metrics_dpo: MetricsReport,
    pub pairwise: PairwiseReport,
    pub preference_accuracy_sft: f64,
    pub preference_accuracy_dpo: f64,
    pub kl_final: f64,
    pub dpo_epochs: Vec<EpochSummary>,
}

impl ExperimentResult {
    pub fn summary(&self) -> ExperimentSummary {
        ExperimentSummary {
            theta1_checksum: self.theta1.checksum(),
            theta2_checksum: self.theta2.checksum(),
            forge_report: self.forge_report.clone(),
            metrics_sft: self.metrics_sft.clone(),
            metrics_dpo: self.metrics_dpo.clone(),
            pairwise: self.pairwise.clone(),
            preference_accuracy_sft: self.preference_accuracy_sft,
            preference_accuracy_dpo: self.preference_accuracy_dpo,
            kl_final: self.kl_final,
            dpo_epochs: self.dpo_epochs.clone(),
        }
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let s = StepSeeds::derive(cfg.seed);
    let d1 = build_stage1(cfg.d1_size, s.stage1, &cfg.stage1)?;
    let forged = build_stage2(&d1, &cfg.forge, s.forge)?;
    log::info!("datasets: {} sft samples, {} preference pairs", d1.len(), forged.records.len());

    let init = init_params(cfg.model, s.init)?;
    let mut sft_log = TrainLog::new();
    let sft_cfg = TrainConfig { seed: s.sft, ..cfg.sft.clone() };
    let theta1 = train_sft(&d1, &sft_cfg, &init, &mut sft_log)?;

    let mut dpo_log = TrainLog::new();
    let dpo_cfg = TrainConfig { seed: s.dpo, ..cfg.dpo.clone() };
    let theta2 = train_dpo(&theta1, &forged.records, &dpo_cfg, &mut dpo_log)?;

    let pairs = encode_pairs(&forged.records, &cfg.model)?;
    let evalset = build_evalset(cfg.eval_size, s.eval, &cfg.strata, &cfg.stage1.world)?;
    let probe: Vec<_> = pairs.iter().take(cfg.dpo.kl_probe_prompts.max(1)).map(|p| p.x.clone()).collect();
    Ok(ExperimentResult {
        seeds: s,
        metrics_sft: hallucination_rate(&theta1, &evalset, &cfg.decoding)?,
        metrics_dpo: hallucination_rate(&theta2, &evalset, &cfg.decoding)?,
        pairwise: pairwise_compare(&theta1, &theta2, &evalset, &cfg.decoding)?,
        preference_accuracy_sft: preference_accuracy(&theta1, &pairs)?,
        preference_accuracy_dpo: preference_accuracy(&theta2, &pairs)?,
        kl_final: kl_to_reference(&theta2, &theta1, &probe, cfg.dpo.kl_probe_len)?,
        forge_report: forged.report,
        sft_records: sft_log.records,
        sft_epochs: sft_log.epochs,
        dpo_records: dpo_log.records,
        dpo_epochs: dpo_log.epochs,
        theta1,
        theta2,
    })
}
