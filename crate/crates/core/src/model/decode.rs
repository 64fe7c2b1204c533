use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{forward_logits, softmax, Params, PromptEncoding};
use crate::error::{Error, Result};
use crate::microworld::vocab::special;
use crate::microworld::{Response, Token};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    Temperature,
    TopK,
    TopP,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub strategy: Strategy,
    pub temperature: f64,
    pub k: usize,
    pub p: f64,
    pub seed: u64,
    pub max_len: usize,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        DecodingConfig::greedy(16)
    }
}

impl DecodingConfig {
    pub fn greedy(max_len: usize) -> Self {
        DecodingConfig { strategy: Strategy::Greedy, temperature: 1.0, k: 1, p: 1.0, seed: 0, max_len }
    }

    pub fn temperature(tau: f64, seed: u64, max_len: usize) -> Self {
        DecodingConfig { strategy: Strategy::Temperature, temperature: tau, seed, ..Self::greedy(max_len) }
    }

    pub fn top_k(k: usize, tau: f64, seed: u64, max_len: usize) -> Self {
        DecodingConfig { strategy: Strategy::TopK, temperature: tau, k, seed, ..Self::greedy(max_len) }
    }

    pub fn top_p(p: f64, tau: f64, seed: u64, max_len: usize) -> Self {
        DecodingConfig { strategy: Strategy::TopP, temperature: tau, p, seed, ..Self::greedy(max_len) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::Config(format!("p {} outside (0, 1]", self.p)));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        Ok(())
    }

    /// Same configuration with the sampling stream re-keyed, e.g. per item.
    pub fn reseeded(&self, salt: u64) -> Self {
        DecodingConfig { seed: seeds::mix(&[self.seed, salt]), ..self.clone() }
    }
}

/// Token ids sorted by probability, descending, index breaking ties.
fn ranked(probs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx
}

/// Draws an index from the (unnormalized) weights of `support`, walked in
/// id order so equal supports consume the random stream identically.
fn draw(support: &[usize], probs: &[f64], rng: &mut impl Rng) -> usize {
    let mut support = support.to_vec();
    support.sort_unstable();
    let total: f64 = support.iter().map(|&i| probs[i]).sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for &i in &support {
        acc += probs[i];
        if u < acc {
            return i;
        }
    }
    *support.last().expect("nonempty support")
}

/// Picks the next token from logits under the configured strategy.
pub fn select_token(logits: &[f64], cfg: &DecodingConfig, rng: &mut impl Rng) -> usize {
    if cfg.strategy == Strategy::Greedy {
        return ranked(logits)[0];
    }
    let scaled: Vec<f64> = logits.iter().map(|z| z / cfg.temperature).collect();
    let probs = softmax(&scaled);
    match cfg.strategy {
        Strategy::Greedy => unreachable!(),
        Strategy::Temperature => {
            let all: Vec<usize> = (0..probs.len()).collect();
            draw(&all, &probs, rng)
        }
        Strategy::TopK => {
            let order = ranked(&probs);
            draw(&order[..cfg.k.min(order.len())], &probs, rng)
        }
        Strategy::TopP if cfg.p >= 1.0 => {
            let all: Vec<usize> = (0..probs.len()).collect();
            draw(&all, &probs, rng)
        }
        Strategy::TopP => {
            let order = ranked(&probs);
            let mut acc = 0.0;
            let mut cut = order.len();
            for (i, &t) in order.iter().enumerate() {
                acc += probs[t];
                if acc >= cfg.p {
                    cut = i + 1;
                    break;
                }
            }
            draw(&order[..cut], &probs, rng)
        }
    }
}

/// Generates an answer until `<eos>` or `max_len` tokens.
pub fn decode(params: &Params, x: &PromptEncoding, cfg: &DecodingConfig) -> Result<Response> {
    cfg.validate()?;
    let mut rng = seeds::rng(&[cfg.seed, 0xDEC0DE]);
    let room = params.config.max_len.saturating_sub(super::position_offset(&params.config, x.len()) + x.len());
    let limit = cfg.max_len.min(room);
    let mut out: Vec<Token> = Vec::with_capacity(limit);
    while out.len() < limit {
        let logits = forward_logits(params, x, &out)?;
        let t = Token(select_token(&logits, cfg, &mut rng) as u16);
        out.push(t);
        if t == special::EOS {
            break;
        }
    }
    Ok(Response(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    fn prompt() -> PromptEncoding {
        PromptEncoding { tokens: vec![special::BRIGHT, Token(30), Token(40), special::SEP, special::Q_EXIST, Token(30), special::ANS] }
    }

    #[test]
    fn top1_matches_greedy() {
        let p = init_params(ModelConfig::default(), 11).unwrap();
        let g = decode(&p, &prompt(), &DecodingConfig::greedy(8)).unwrap();
        for seed in 0..5 {
            let k1 = decode(&p, &prompt(), &DecodingConfig::top_k(1, 1.0, seed, 8)).unwrap();
            assert_eq!(g, k1);
        }
    }

    #[test]
    fn full_nucleus_is_ancestral_sampling() {
        let p = init_params(ModelConfig::default(), 11).unwrap();
        for seed in 0..20 {
            let a = decode(&p, &prompt(), &DecodingConfig::top_p(1.0, 1.0, seed, 6)).unwrap();
            let b = decode(&p, &prompt(), &DecodingConfig::temperature(1.0, seed, 6)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let p = init_params(ModelConfig::default(), 2).unwrap();
        let c = DecodingConfig::temperature(1.5, 77, 10);
        assert_eq!(decode(&p, &prompt(), &c).unwrap(), decode(&p, &prompt(), &c).unwrap());
    }

    #[test]
    fn nucleus_keeps_smallest_prefix() {
        let logits = [(0.5f64).ln(), (0.3f64).ln(), (0.2f64).ln()];
        let cfg = DecodingConfig::top_p(0.75, 1.0, 0, 1);
        let mut rng = seeds::rng(&[1]);
        let mut seen = [0usize; 3];
        for _ in 0..2000 {
            seen[select_token(&logits, &cfg, &mut rng)] += 1;
        }
        assert_eq!(seen[2], 0);
        assert!(seen[0] > 0 && seen[1] > 0);
    }

    #[test]
    fn rejects_invalid_configs() {
        for c in [
            DecodingConfig::temperature(0.0, 0, 4),
            DecodingConfig::top_k(0, 1.0, 0, 4),
            DecodingConfig::top_p(0.0, 1.0, 0, 4),
            DecodingConfig::top_p(1.2, 1.0, 0, 4),
        ] {
            assert!(c.validate().is_err());
        }
    }
}
