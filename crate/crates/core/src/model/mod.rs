//! A tiny causal decoder `p(y | scene, question)` with exact gradients.

pub mod checkpoint;
pub mod decode;
pub mod encode;
pub mod params;
mod transformer;

pub use decode::{decode, DecodingConfig, Strategy};
pub use encode::{encode_input, PromptEncoding};
pub use params::{init_params, Gradient, ModelConfig, Params, TensorSpec};
pub use transformer::{log_softmax, softmax};

use crate::error::{Error, Result};
use crate::microworld::{Response, Token};

fn ids(params: &Params, tokens: &[Token]) -> Result<Vec<usize>> {
    tokens
        .iter()
        .map(|t| {
            let id = t.id();
            if id < params.config.vocab {
                Ok(id)
            } else {
                Err(Error::Argument(format!("token {id} outside vocabulary of {}", params.config.vocab)))
            }
        })
        .collect()
}

/// Positions are counted back from the begin-answer token, which always sits
/// at row `max_len − max_answer_len − 1`; the question therefore lands on the
/// same rows whatever the scene length. Prompts too long for that alignment
/// start at row 0.
pub fn position_offset(config: &ModelConfig, prompt_len: usize) -> usize {
    (config.max_len.saturating_sub(config.max_answer_len)).saturating_sub(prompt_len)
}

/// Input ids for scoring `y` after the prompt: the last answer token is only
/// ever a target, never an input.
fn scoring_input(params: &Params, x: &PromptEncoding, y: &Response) -> Result<Vec<usize>> {
    if y.is_empty() {
        return Err(Error::Argument("response must contain at least one token".into()));
    }
    if x.is_empty() {
        return Err(Error::Argument("prompt is empty".into()));
    }
    let total = position_offset(&params.config, x.len()) + x.len() + y.len();
    if total > params.config.max_len {
        return Err(Error::Length { len: total, max: params.config.max_len });
    }
    let mut seq = ids(params, &x.tokens)?;
    let targets = ids(params, y.tokens())?;
    seq.extend_from_slice(&targets[..targets.len() - 1]);
    Ok(seq)
}

/// Per-token `log p(y_t | x, y_<t)` over the answer region.
pub fn stepwise_logprobs(params: &Params, x: &PromptEncoding, y: &Response) -> Result<Vec<f64>> {
    let seq = scoring_input(params, x, y)?;
    let trace = transformer::forward(params, &seq, position_offset(&params.config, x.len()), x.len() - 1);
    let v = params.config.vocab;
    Ok(y.tokens()
        .iter()
        .enumerate()
        .map(|(i, t)| log_softmax(trace.logits_at(x.len() - 1 + i, v))[t.id()])
        .collect())
}

/// `log p(y | x) = Σ_t log p(y_t | x, y_<t)`.
pub fn sequence_logprob(params: &Params, x: &PromptEncoding, y: &Response) -> Result<f64> {
    Ok(stepwise_logprobs(params, x, y)?.iter().sum())
}

/// Next-token logits after `prompt ++ prefix`.
pub fn forward_logits(params: &Params, x: &PromptEncoding, prefix: &[Token]) -> Result<Vec<f64>> {
    let len = x.len() + prefix.len();
    if position_offset(&params.config, x.len()) + len > params.config.max_len {
        return Err(Error::Length { len, max: params.config.max_len });
    }
    if x.is_empty() {
        return Err(Error::Argument("prompt is empty".into()));
    }
    let mut seq = ids(params, &x.tokens)?;
    seq.extend(ids(params, prefix)?);
    let trace = transformer::forward(params, &seq, position_offset(&params.config, x.len()), len - 1);
    Ok(trace.logits)
}

/// Logits at every answer position when teacher-forcing `continuation`:
/// row `i` predicts token `i` of the continuation.
pub fn teacher_forced_logits(params: &Params, x: &PromptEncoding, continuation: &[Token]) -> Result<Vec<Vec<f64>>> {
    let len = position_offset(&params.config, x.len()) + x.len() + continuation.len().saturating_sub(1);
    if len > params.config.max_len || continuation.is_empty() {
        return Err(Error::Length { len, max: params.config.max_len });
    }
    let mut seq = ids(params, &x.tokens)?;
    let c = ids(params, continuation)?;
    seq.extend_from_slice(&c[..c.len() - 1]);
    let trace = transformer::forward(params, &seq, position_offset(&params.config, x.len()), x.len() - 1);
    Ok(trace.logits.chunks_exact(params.config.vocab).map(<[f64]>::to_vec).collect())
}

/// Adds `coef · ∇ log p(y|x)` into `grad` and returns `log p(y|x)`.
pub fn accumulate_logprob_grad(
    params: &Params,
    x: &PromptEncoding,
    y: &Response,
    coef: f64,
    grad: &mut Gradient,
) -> Result<f64> {
    let seq = scoring_input(params, x, y)?;
    let from = x.len() - 1;
    let trace = transformer::forward(params, &seq, position_offset(&params.config, x.len()), from);
    let v = params.config.vocab;
    let mut dlogits = vec![0.0; y.len() * v];
    let mut lp = 0.0;
    for (i, t) in y.tokens().iter().enumerate() {
        let ls = log_softmax(trace.logits_at(from + i, v));
        lp += ls[t.id()];
        let row = &mut dlogits[i * v..(i + 1) * v];
        for (r, l) in row.iter_mut().zip(&ls) {
            *r = -coef * l.exp();
        }
        row[t.id()] += coef;
    }
    if coef != 0.0 {
        transformer::backward(params, &trace, &dlogits, &mut grad.data);
    }
    Ok(lp)
}

/// `∂ log p(y|x) / ∂θ` for every parameter.
pub fn grad_logprob(params: &Params, x: &PromptEncoding, y: &Response) -> Result<Gradient> {
    let mut g = Gradient::zeros(&params.config);
    accumulate_logprob_grad(params, x, y, 1.0, &mut g)?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microworld::vocab::{special, USED_VOCAB};
    use rand::Rng;

    fn small() -> ModelConfig {
        ModelConfig { vocab: USED_VOCAB, d_model: 8, n_layers: 2, n_heads: 2, max_len: 20, max_answer_len: 6 }
    }

    fn prompt(len: usize, seed: u64) -> PromptEncoding {
        let mut rng = crate::seeds::rng(&[seed]);
        let mut tokens: Vec<Token> = (0..len - 1).map(|_| Token(rng.gen_range(16..USED_VOCAB as u16))).collect();
        tokens.push(special::ANS);
        PromptEncoding { tokens }
    }

    fn answer(tokens: &[u16]) -> Response {
        Response(tokens.iter().map(|&t| Token(t)).collect())
    }

    #[test]
    fn zero_params_give_uniform_logprob() {
        let p = Params::zeros(ModelConfig::default()).unwrap();
        let y = answer(&[30, 40, 3]);
        let lp = sequence_logprob(&p, &prompt(10, 1), &y).unwrap();
        assert!((lp + 3.0 * (128f64).ln()).abs() < 1e-12);
        let logits = forward_logits(&p, &prompt(10, 1), &[]).unwrap();
        assert!(logits.iter().all(|&z| z == logits[0]));
    }

    #[test]
    fn logprob_is_sum_of_steps() {
        let p = init_params(small(), 3).unwrap();
        let x = prompt(9, 2);
        let y = answer(&[30, 41, 52, 3]);
        let mut total = 0.0;
        for i in 0..y.len() {
            let logits = forward_logits(&p, &x, &y.tokens()[..i]).unwrap();
            total += log_softmax(&logits)[y.tokens()[i].id()];
        }
        let lp = sequence_logprob(&p, &x, &y).unwrap();
        assert!((lp - total).abs() < 1e-12, "{lp} vs {total}");
    }

    #[test]
    fn single_token_probabilities_sum_to_one() {
        let p = init_params(small(), 5).unwrap();
        let x = prompt(9, 7);
        let s: f64 = (0..p.config.vocab)
            .map(|t| sequence_logprob(&p, &x, &answer(&[t as u16])).unwrap().exp())
            .sum();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn causal_prefix_invariance() {
        let p = init_params(small(), 8).unwrap();
        let x = prompt(7, 1);
        let a = teacher_forced_logits(&p, &x, &[Token(30), Token(31), Token(32)]).unwrap();
        let b = teacher_forced_logits(&p, &x, &[Token(30), Token(31), Token(50), Token(60)]).unwrap();
        // Row i only sees tokens before i, so the shared rows agree exactly.
        assert_eq!(a[..], b[..3]);
        let c = teacher_forced_logits(&p, &x, &[Token(30), Token(45), Token(32)]).unwrap();
        assert_eq!(a[..2], c[..2]);
        assert_ne!(a[2], c[2]);
    }

    #[test]
    fn unused_positional_rows_are_inert() {
        let mut p = init_params(small(), 8).unwrap();
        let x = prompt(7, 1);
        let before = forward_logits(&p, &x, &[Token(30)]).unwrap();
        let row = p.config.layout().iter().find(|t| t.name == "positional").unwrap().offset + 15 * 8;
        p.data[row..row + 8].iter_mut().for_each(|v| *v += 3.0);
        assert_eq!(before, forward_logits(&p, &x, &[Token(30)]).unwrap());
    }

    #[test]
    fn gradient_is_zero_on_unused_rows_and_linear() {
        let p = init_params(small(), 2).unwrap();
        let x = prompt(8, 4);
        let y = answer(&[30, 3]);
        let g = grad_logprob(&p, &x, &y).unwrap();
        let layout = p.config.layout();
        let pos = layout.iter().find(|t| t.name == "positional").unwrap();
        // Offset 6 puts the 9 input tokens on rows 6..=14.
        assert_eq!(position_offset(&p.config, x.len()), 6);
        assert!(g.data[pos.offset..pos.offset + 6 * 8].iter().all(|&v| v == 0.0));
        assert!(g.data[pos.offset + 15 * 8..pos.offset + pos.len()].iter().all(|&v| v == 0.0));
        assert!(g.data[pos.offset + 6 * 8..pos.offset + 15 * 8].iter().any(|&v| v != 0.0));
        let emb = layout.iter().find(|t| t.name == "embedding").unwrap();
        assert!(g.data[emb.offset..emb.offset + 8].iter().all(|&v| v == 0.0), "<pad> embedding unused");
        let mut g3 = Gradient::zeros(&p.config);
        accumulate_logprob_grad(&p, &x, &y, 3.0, &mut g3).unwrap();
        for (a, b) in g.data.iter().zip(&g3.data) {
            assert!((3.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn errors_on_overflow_and_empty() {
        let p = init_params(small(), 2).unwrap();
        let x = prompt(18, 4);
        assert!(matches!(sequence_logprob(&p, &x, &answer(&[30, 30, 30])), Err(Error::Length { .. })));
        assert!(matches!(sequence_logprob(&p, &x, &answer(&[])), Err(Error::Argument(_))));
        assert!(matches!(sequence_logprob(&p, &x, &answer(&[200])), Err(Error::Argument(_))));
    }
}
