//! Training objectives: cross-entropy, DPO against a frozen reference, GRPO
//! with group-normalized advantages, and KL drift from the reference.
//!
//! Every loss returns its value together with the exact gradient. Per-sample
//! contributions are accumulated in ascending sample order so results are
//! bitwise reproducible.

use crate::dataforge::PerturbationTag;
use crate::error::{Error, Result};
use crate::microworld::{GroundingVerdict, Response, Token};
use crate::model::{
    self, accumulate_logprob_grad, decode, log_softmax, DecodingConfig, Gradient, ModelConfig, Params,
    PromptEncoding,
};

/// Floor on the group standard deviation when normalizing advantages.
pub const ADVANTAGE_STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub x: PromptEncoding,
    pub y_plus: Response,
    pub y_minus: Response,
    pub provenance: PerturbationTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseGroup {
    pub x: PromptEncoding,
    pub candidates: Vec<(Response, f64)>,
    /// Filled by [`ResponseGroup::fill_advantages`].
    pub advantages: Option<Vec<f64>>,
}

impl ResponseGroup {
    pub fn new(x: PromptEncoding, candidates: Vec<(Response, f64)>) -> Self {
        ResponseGroup { x, candidates, advantages: None }
    }

    pub fn fill_advantages(&mut self) -> Result<()> {
        let rewards: Vec<f64> = self.candidates.iter().map(|c| c.1).collect();
        self.advantages = Some(group_advantages(&rewards)?);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DpoConfig<'a> {
    pub beta: f64,
    pub reference: &'a Params,
}

pub const DEFAULT_BETA_DPO: f64 = 0.1;

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean negative log-likelihood over the batch.
pub fn ce_loss(params: &Params, batch: &[(PromptEncoding, Response)]) -> Result<(f64, Gradient)> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let coef = -1.0 / batch.len() as f64;
    let mut grad = Gradient::zeros(&params.config);
    let mut loss = 0.0;
    for (x, y) in batch {
        loss -= accumulate_logprob_grad(params, x, y, coef, &mut grad)?;
    }
    Ok((loss / batch.len() as f64, grad))
}

/// Reference log-likelihoods `(log π_ref(y⁺|x), log π_ref(y⁻|x))` per pair.
pub fn reference_logprobs(reference: &Params, pairs: &[PreferencePair]) -> Result<Vec<(f64, f64)>> {
    pairs
        .iter()
        .map(|p| {
            Ok((
                model::sequence_logprob(reference, &p.x, &p.y_plus)?,
                model::sequence_logprob(reference, &p.x, &p.y_minus)?,
            ))
        })
        .collect()
}

/// DPO loss plus the diagnostics the trainer logs.
#[derive(Debug, Clone)]
pub struct DpoOutput {
    pub loss: f64,
    pub grad: Gradient,
    /// Mean of `log π(y⁺|x) − log π(y⁻|x)` over the pairs.
    pub margin: f64,
}

/// DPO with precomputed reference log-likelihoods.
pub fn dpo_loss_with_reference(
    params: &Params,
    beta: f64,
    pairs: &[PreferencePair],
    reference_lp: &[(f64, f64)],
) -> Result<DpoOutput> {
    if pairs.is_empty() {
        return Err(Error::Argument("no preference pairs".into()));
    }
    if reference_lp.len() != pairs.len() {
        return Err(Error::Argument("reference log-probs do not match pairs".into()));
    }
    if !(beta > 0.0) {
        return Err(Error::Config(format!("beta_dpo {beta} must be positive")));
    }
    let n = pairs.len() as f64;
    let mut grad = Gradient::zeros(&params.config);
    let (mut loss, mut margin) = (0.0, 0.0);
    for (p, &(rp, rm)) in pairs.iter().zip(reference_lp) {
        let lp = model::sequence_logprob(params, &p.x, &p.y_plus)?;
        let lm = model::sequence_logprob(params, &p.x, &p.y_minus)?;
        let z = beta * ((lp - rp) - (lm - rm));
        loss += softplus(-z);
        margin += lp - lm;
        // d softplus(-z) / dz = -σ(-z)
        let w = beta * sigmoid(-z) / n;
        accumulate_logprob_grad(params, &p.x, &p.y_plus, w, &mut grad)?;
        accumulate_logprob_grad(params, &p.x, &p.y_minus, -w, &mut grad)?;
    }
    // The accumulations above add ∇(−loss); flip to the loss gradient.
    grad.scale(-1.0);
    Ok(DpoOutput { loss: loss / n, grad, margin: margin / n })
}

/// `mean −log σ(β[(log π(y⁺) − log π_ref(y⁺)) − (log π(y⁻) − log π_ref(y⁻))])`.
pub fn dpo_loss(params: &Params, cfg: &DpoConfig<'_>, pairs: &[PreferencePair]) -> Result<(f64, Gradient)> {
    if !params.same_shape(cfg.reference) {
        return Err(Error::Config("policy and reference shapes differ".into()));
    }
    let refs = reference_logprobs(cfg.reference, pairs)?;
    let out = dpo_loss_with_reference(params, cfg.beta, pairs, &refs)?;
    Ok((out.loss, out.grad))
}

/// `Â_i = (r_i − mean r) / max(std r, 1e−8)` with population std.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Argument(format!("need at least 2 rewards, got {}", rewards.len())));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(ADVANTAGE_STD_FLOOR);
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// `mean over groups of −Σ_i Â_i log π(y_i | x)`.
pub fn grpo_loss(params: &Params, groups: &[ResponseGroup]) -> Result<(f64, Gradient)> {
    if groups.is_empty() {
        return Err(Error::Argument("no response groups".into()));
    }
    let n = groups.len() as f64;
    let mut grad = Gradient::zeros(&params.config);
    let mut loss = 0.0;
    for (gi, g) in groups.iter().enumerate() {
        let adv = g
            .advantages
            .as_ref()
            .ok_or_else(|| Error::State(format!("group {gi} has no advantages")))?;
        if adv.len() != g.candidates.len() {
            return Err(Error::State(format!("group {gi}: advantages do not match candidates")));
        }
        for ((y, _), &a) in g.candidates.iter().zip(adv) {
            let lp = accumulate_logprob_grad(params, &g.x, y, -a / n, &mut grad)?;
            loss -= a * lp;
        }
    }
    Ok((loss / n, grad))
}

/// Oracle reward: +1 grounded, 0 when nothing is wrong but nothing answers
/// the question, −1 otherwise.
pub fn oracle_reward(v: &GroundingVerdict) -> f64 {
    if v.grounded {
        1.0
    } else if v.invalid_claims.is_empty() {
        0.0
    } else {
        -1.0
    }
}

/// Reference-side state for repeated KL measurements: greedy continuations
/// of the reference and its log-probabilities along them.
#[derive(Debug, Clone)]
pub struct KlProbe {
    prompts: Vec<PromptEncoding>,
    continuations: Vec<Vec<Token>>,
    reference_logp: Vec<Vec<Vec<f64>>>,
    config: ModelConfig,
}

impl KlProbe {
    pub fn new(reference: &Params, prompts: &[PromptEncoding], probe_len: usize) -> Result<Self> {
        if prompts.is_empty() {
            return Err(Error::Argument("no prompts to probe".into()));
        }
        let probe_len = probe_len.max(1);
        let mut continuations = Vec::with_capacity(prompts.len());
        let mut reference_logp = Vec::with_capacity(prompts.len());
        for x in prompts {
            let mut cont = decode(reference, x, &DecodingConfig::greedy(probe_len))?.0;
            cont.truncate(probe_len);
            let lr = if cont.is_empty() {
                Vec::new()
            } else {
                model::teacher_forced_logits(reference, x, &cont)?.iter().map(|l| log_softmax(l)).collect()
            };
            continuations.push(cont);
            reference_logp.push(lr);
        }
        Ok(KlProbe { prompts: prompts.to_vec(), continuations, reference_logp, config: reference.config })
    }

    /// Mean per-position `KL(π ‖ π_ref)` over the probed positions.
    pub fn measure(&self, params: &Params) -> Result<f64> {
        if params.config != self.config {
            return Err(Error::Config("policy and reference shapes differ".into()));
        }
        let mut total = 0.0;
        let mut positions = 0usize;
        for ((x, cont), lr) in self.prompts.iter().zip(&self.continuations).zip(&self.reference_logp) {
            if cont.is_empty() {
                continue;
            }
            for (a, lb) in model::teacher_forced_logits(params, x, cont)?.iter().zip(lr) {
                let la = log_softmax(a);
                let kl: f64 = la.iter().zip(lb).map(|(p, q)| p.exp() * (p - q)).sum();
                total += kl.max(0.0);
                positions += 1;
            }
        }
        Ok(if positions == 0 { 0.0 } else { total / positions as f64 })
    }
}

/// Mean per-position `KL(π ‖ π_ref)` over the first `probe_len` positions of
/// each prompt's greedy continuation under the reference.
pub fn kl_to_reference(
    params: &Params,
    reference: &Params,
    prompts: &[PromptEncoding],
    probe_len: usize,
) -> Result<f64> {
    if !params.same_shape(reference) {
        return Err(Error::Config("policy and reference shapes differ".into()));
    }
    KlProbe::new(reference, prompts, probe_len)?.measure(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microworld::vocab::special;
    use crate::model::{init_params, ModelConfig};
    use proptest::prelude::*;

    fn cfg() -> ModelConfig {
        ModelConfig { d_model: 8, n_heads: 2, max_len: 24, max_answer_len: 8, ..ModelConfig::default() }
    }

    fn x(seed: u16) -> PromptEncoding {
        PromptEncoding { tokens: vec![special::BRIGHT, Token(30 + seed), Token(41), special::SEP, special::Q_EXIST, Token(30 + seed), special::ANS] }
    }

    fn y(t: &[u16]) -> Response {
        Response(t.iter().map(|&v| Token(v)).collect())
    }

    fn pair(seed: u16) -> PreferencePair {
        PreferencePair {
            x: x(seed),
            y_plus: y(&[11, 30 + seed, 3]),
            y_minus: y(&[11, 31 + seed, 3]),
            provenance: PerturbationTag::CategorySiblingSwap,
        }
    }

    #[test]
    fn ce_on_zero_params_is_t_ln_v() {
        let p = Params::zeros(ModelConfig::default()).unwrap();
        let batch = vec![(x(0), y(&[11, 30, 3])), (x(1), y(&[12, 31, 3]))];
        let (loss, _) = ce_loss(&p, &batch).unwrap();
        assert!((loss - 3.0 * 128f64.ln()).abs() < 1e-12);
        assert!(matches!(ce_loss(&p, &[]), Err(Error::Argument(_))));
    }

    #[test]
    fn dpo_at_reference_is_ln2() {
        let p = init_params(cfg(), 1).unwrap();
        let pairs: Vec<_> = (0..5).map(pair).collect();
        let (loss, _) = dpo_loss(&p, &DpoConfig { beta: 0.1, reference: &p }, &pairs).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn dpo_gradient_at_reference_is_half_beta_difference() {
        let p = init_params(cfg(), 1).unwrap();
        let pairs: Vec<_> = (0..3).map(pair).collect();
        let beta = 0.1;
        let (_, g) = dpo_loss(&p, &DpoConfig { beta, reference: &p }, &pairs).unwrap();
        let mut expect = Gradient::zeros(&p.config);
        for q in &pairs {
            expect.add_scaled(&model::grad_logprob(&p, &q.x, &q.y_plus).unwrap(), -beta / 2.0 / 3.0);
            expect.add_scaled(&model::grad_logprob(&p, &q.x, &q.y_minus).unwrap(), beta / 2.0 / 3.0);
        }
        for (a, b) in g.data.iter().zip(&expect.data) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn dpo_rejects_shape_mismatch() {
        let p = init_params(cfg(), 1).unwrap();
        let r = init_params(ModelConfig { d_model: 16, ..cfg() }, 1).unwrap();
        assert!(matches!(dpo_loss(&p, &DpoConfig { beta: 0.1, reference: &r }, &[pair(0)]), Err(Error::Config(_))));
    }

    #[test]
    fn dpo_loss_decreases_in_preferred_logprob() {
        // With reference terms fixed, the loss is softplus(−β·margin).
        let l = |m: f64| softplus(-0.1 * m);
        assert!(l(1.0) < l(0.0) && l(0.0) < l(-1.0));
    }

    #[test]
    fn advantages_examples() {
        assert_eq!(group_advantages(&[1.0, 1.0, 1.0]).unwrap(), vec![0.0, 0.0, 0.0]);
        assert_eq!(group_advantages(&[2.0, 0.0]).unwrap(), vec![1.0, -1.0]);
        assert!(group_advantages(&[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn advantages_are_standardized(r in proptest::collection::vec(-10.0f64..10.0, 2..12)) {
            let a = group_advantages(&r).unwrap();
            let n = a.len() as f64;
            let mean = a.iter().sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-12);
            let mr = r.iter().sum::<f64>() / n;
            let sd = (r.iter().map(|v| (v - mr).powi(2)).sum::<f64>() / n).sqrt();
            if sd > ADVANTAGE_STD_FLOOR {
                let sa = (a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!((sa - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn grpo_zero_advantages_and_direct_substitution() {
        let p = init_params(cfg(), 2).unwrap();
        let (y1, y2) = (y(&[11, 30, 3]), y(&[12, 30, 3]));
        let mut g = ResponseGroup::new(x(0), vec![(y1.clone(), 1.0), (y2.clone(), 1.0)]);
        assert!(matches!(grpo_loss(&p, std::slice::from_ref(&g)), Err(Error::State(_))));
        g.fill_advantages().unwrap();
        let (loss, grad) = grpo_loss(&p, std::slice::from_ref(&g)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data.iter().all(|&v| v == 0.0));

        g.advantages = Some(vec![1.0, -1.0]);
        let (loss, _) = grpo_loss(&p, &[g]).unwrap();
        let expect = model::sequence_logprob(&p, &x(0), &y2).unwrap() - model::sequence_logprob(&p, &x(0), &y1).unwrap();
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn kl_zero_at_reference_and_nonnegative() {
        let a = init_params(cfg(), 3).unwrap();
        let b = init_params(cfg(), 4).unwrap();
        let prompts: Vec<_> = (0..4).map(x).collect();
        assert_eq!(kl_to_reference(&a, &a, &prompts, 5).unwrap(), 0.0);
        assert!(kl_to_reference(&a, &b, &prompts, 5).unwrap() > 0.0);
    }
}
