use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::microworld::vocab::USED_VOCAB;
use crate::seeds;

/// Shape hyperparameters of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Context length, prompt plus answer.
    pub max_len: usize,
    /// Longest answer the context must leave room for, `<eos>` included.
    pub max_answer_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { vocab: 128, d_model: 32, n_layers: 2, n_heads: 4, max_len: 96, max_answer_len: 16 }
    }
}

impl ModelConfig {
    pub fn ff_dim(&self) -> usize {
        4 * self.d_model
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab < USED_VOCAB {
            return bad(format!("vocab {} smaller than the {} microworld tokens", self.vocab, USED_VOCAB));
        }
        if self.vocab > u16::MAX as usize {
            return bad(format!("vocab {} exceeds token id range", self.vocab));
        }
        if self.d_model < 8 {
            return bad(format!("d_model {} below 8", self.d_model));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible into {} heads", self.d_model, self.n_heads));
        }
        if self.n_layers == 0 {
            return bad("n_layers must be at least 1".into());
        }
        if self.max_answer_len == 0 || self.max_answer_len >= self.max_len {
            return bad(format!("max_answer_len {} must be in 1..{}", self.max_answer_len, self.max_len));
        }
        Ok(())
    }

    /// Tensor table in storage order.
    pub fn layout(&self) -> Vec<TensorSpec> {
        let (v, d, f) = (self.vocab, self.d_model, self.ff_dim());
        let mut specs = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            specs.push(TensorSpec { name, rows, cols, offset });
            offset += rows * cols;
        };
        push("embedding".into(), v, d);
        push("positional".into(), self.max_len, d);
        push("segment".into(), 2, d);
        for l in 0..self.n_layers {
            for w in ["wq", "wk", "wv", "wo"] {
                push(format!("layer{l}.{w}"), d, d);
            }
            push(format!("layer{l}.relpos"), self.n_heads, self.max_len);
            push(format!("layer{l}.w1"), d, f);
            push(format!("layer{l}.w2"), f, d);
        }
        push("output".into(), d, v);
        specs
    }

    pub fn num_params(&self) -> usize {
        self.layout().last().map_or(0, |t| t.offset + t.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of each tensor inside the flat buffer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOffsets {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    /// Per-head additive attention bias indexed by query−key distance.
    pub relpos: usize,
    pub w1: usize,
    pub w2: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Offsets {
    pub embedding: usize,
    pub positional: usize,
    pub segment: usize,
    pub layers: Vec<LayerOffsets>,
    pub output: usize,
}

impl Offsets {
    pub fn new(config: &ModelConfig) -> Self {
        let layout = config.layout();
        let at = |name: &str| layout.iter().find(|t| t.name == name).expect("tensor present").offset;
        let layers = (0..config.n_layers)
            .map(|l| LayerOffsets {
                wq: at(&format!("layer{l}.wq")),
                wk: at(&format!("layer{l}.wk")),
                wv: at(&format!("layer{l}.wv")),
                wo: at(&format!("layer{l}.wo")),
                relpos: at(&format!("layer{l}.relpos")),
                w1: at(&format!("layer{l}.w1")),
                w2: at(&format!("layer{l}.w2")),
            })
            .collect();
        Offsets {
            embedding: at("embedding"),
            positional: at("positional"),
            segment: at("segment"),
            layers,
            output: at("output"),
        }
    }
}

/// Every trainable parameter of the model, stored flat in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub config: ModelConfig,
    pub data: Vec<f64>,
}

/// Same shape as [`Params`]; holds derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub data: Vec<f64>,
}

impl Gradient {
    pub fn zeros(config: &ModelConfig) -> Self {
        Gradient { data: vec![0.0; config.num_params()] }
    }

    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl Params {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Params { data: vec![0.0; config.num_params()], config })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let t = self.config.layout().into_iter().find(|t| t.name == name)?;
        Some(&self.data[t.range()])
    }

    /// SHA-256 over the config header and little-endian parameter bytes.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for x in &self.data {
            h.update(x.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn same_shape(&self, other: &Params) -> bool {
        self.config == other.config && self.data.len() == other.data.len()
    }
}

const PREV_TOKEN_BIAS: f64 = 6.0;
const COPY_GAIN: f64 = 3.0;

/// Scaled-uniform initialization, deterministic per seed.
pub fn init_params(config: ModelConfig, seed: u64) -> Result<Params> {
    config.validate()?;
    let mut rng = seeds::rng(&[seed, 0x1417]);
    let mut data = vec![0.0; config.num_params()];
    let depth_scale = 1.0 / ((2 * config.n_layers) as f64).sqrt();
    let layout = config.layout();
    for t in layout.iter().filter(|t| !t.name.ends_with(".relpos")) {
        let bound = if t.name == "embedding" {
            1.0
        } else if t.name == "positional" || t.name == "segment" {
            // Small, so content rather than position dominates early attention.
            0.1
        } else if t.name == "output" {
            0.5 / (t.rows as f64).sqrt()
        } else if t.name.ends_with("wo") || t.name.ends_with("w2") {
            depth_scale * (3.0 / t.rows as f64).sqrt()
        } else {
            (3.0 / t.rows as f64).sqrt()
        };
        for x in &mut data[t.range()] {
            *x = rng.gen_range(-bound..bound);
        }
    }
    // Keys start equal to queries, so equal tokens attend to each other
    // before any training.
    for t in layout.iter().filter(|t| t.name.ends_with(".wk")) {
        let q = layout.iter().find(|s| s.name == t.name.replace(".wk", ".wq")).expect("query projection");
        data.copy_within(q.range(), t.offset);
    }
    // Head 0 of every layer starts as a previous-token copy head: a bias
    // toward distance one and an output projection that reads back what the
    // value projection wrote.
    let (d, dh) = (config.d_model, config.head_dim());
    for l in 0..config.n_layers {
        let at = |n: &str| layout.iter().find(|t| t.name == format!("layer{l}.{n}")).expect("layer tensor").offset;
        let (wv, wo, relpos) = (at("wv"), at("wo"), at("relpos"));
        data[relpos + 1] = PREV_TOKEN_BIAS;
        for i in 0..dh {
            for j in 0..d {
                data[wo + i * d + j] = COPY_GAIN * data[wv + j * d + i];
            }
        }
    }
    Ok(Params { config, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let c = ModelConfig::default();
        assert_eq!(init_params(c, 4).unwrap(), init_params(c, 4).unwrap());
        assert_ne!(init_params(c, 4).unwrap(), init_params(c, 5).unwrap());
    }

    #[test]
    fn layout_is_contiguous() {
        let c = ModelConfig::default();
        let mut next = 0;
        for t in c.layout() {
            assert_eq!(t.offset, next);
            next += t.len();
        }
        assert_eq!(next, c.num_params());
    }

    #[test]
    fn rejects_bad_shapes() {
        for c in [
            ModelConfig { d_model: 4, n_heads: 1, ..Default::default() },
            ModelConfig { vocab: 10, ..Default::default() },
            ModelConfig { n_heads: 5, ..Default::default() },
            ModelConfig { n_layers: 0, ..Default::default() },
        ] {
            assert!(matches!(init_params(c, 0), Err(Error::Config(_))));
        }
    }
}
