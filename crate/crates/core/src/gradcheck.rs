//! Analytic gradients against central finite differences on the default
//! model, plus the KL full-vocabulary oracle.

use crate::dataforge::{build_stage1, make_false_premise_pair, perturb_negative, Stage1Config};
use crate::microworld::{generate_scene, DifficultyTier, Response, WorldConfig};
use crate::microworld::vocab::{special, Token};
use crate::model::{encode_input, forward_logits, init_params, Gradient, ModelConfig, Params, PromptEncoding};
use crate::objectives::{
    ce_loss, dpo_loss, dpo_loss_with_reference, grpo_loss, kl_to_reference, reference_logprobs, DpoConfig,
    PreferencePair, ResponseGroup,
};
use crate::seeds;
use rand::seq::SliceRandom;

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
const COORDS: usize = 120;

fn default_model(seed: u64) -> Params {
    init_params(ModelConfig::default(), seed).unwrap()
}

/// Jitters every parameter so no coordinate sits at a special point.
fn jittered(p: &Params, seed: u64, scale: f64) -> Params {
    use rand::Rng;
    let mut rng = seeds::rng(&[seed, 0x9A7]);
    let mut q = p.clone();
    q.data.iter_mut().for_each(|v| *v += rng.gen_range(-scale..scale));
    q
}

fn sft_batch(n: usize, seed: u64) -> Vec<(PromptEncoding, Response)> {
    let cfg = ModelConfig::default();
    build_stage1(n, seed, &Stage1Config::default())
        .unwrap()
        .into_iter()
        .map(|s| (encode_input(&s.scene, &s.question, &cfg).unwrap(), s.answer))
        .collect()
}

fn pairs(n: usize, seed: u64) -> Vec<PreferencePair> {
    let cfg = ModelConfig::default();
    let mut out = Vec::new();
    for s in build_stage1(4 * n, seed, &Stage1Config::default()).unwrap() {
        if out.len() == n {
            break;
        }
        if let Ok((y_minus, tag)) = perturb_negative(&s.scene, &s.question, &s.answer, seed) {
            let x = encode_input(&s.scene, &s.question, &cfg).unwrap();
            out.push(PreferencePair { x, y_plus: s.answer, y_minus, provenance: tag });
        }
    }
    let scene = generate_scene(seeds::train_seed(&[seed, 77]), DifficultyTier::Easy, &WorldConfig::default()).unwrap();
    out.push(make_false_premise_pair(&scene, seed, &cfg).unwrap());
    out
}

/// Coordinates to probe: random ones with a non-negligible analytic
/// derivative, plus a few where it vanishes.
fn probe_coords(g: &Gradient, seed: u64) -> Vec<usize> {
    let mut rng = seeds::rng(&[seed, 0xC00D]);
    let mut live: Vec<usize> = (0..g.data.len()).filter(|&i| g.data[i].abs() > 1e-6).collect();
    let mut dead: Vec<usize> = (0..g.data.len()).filter(|&i| g.data[i] == 0.0).collect();
    live.shuffle(&mut rng);
    dead.shuffle(&mut rng);
    let mut c: Vec<usize> = live.into_iter().take(COORDS).collect();
    c.extend(dead.into_iter().take(10));
    c
}

fn check(name: &str, params: &Params, f: impl Fn(&Params) -> (f64, Gradient)) {
    let (_, g) = f(params);
    let coords = probe_coords(&g, 1);
    assert!(coords.len() >= 100, "{name}: only {} probe coordinates", coords.len());
    let mut worst: f64 = 0.0;
    for &i in &coords {
        let mut p = params.clone();
        p.data[i] = params.data[i] + STEP;
        let up = f(&p).0;
        p.data[i] = params.data[i] - STEP;
        let down = f(&p).0;
        let numeric = (up - down) / (2.0 * STEP);
        let analytic = g.data[i];
        let scale = analytic.abs().max(numeric.abs());
        let err = (analytic - numeric).abs();
        if scale > 1e-6 {
            worst = worst.max(err / scale);
            assert!(err <= REL_TOL * scale, "{name}[{i}]: analytic {analytic:e} numeric {numeric:e}");
        } else {
            assert!(err <= 1e-9, "{name}[{i}]: analytic {analytic:e} numeric {numeric:e}");
        }
    }
    eprintln!("{name}: {} coordinates, worst relative error {worst:.2e}", coords.len());
}

#[test]
fn ce_gradient_matches_finite_differences() {
    let p = default_model(11);
    let batch = sft_batch(3, 5);
    check("ce", &p, |q| ce_loss(q, &batch).unwrap());
}

#[test]
fn dpo_gradient_matches_finite_differences() {
    let reference = default_model(12);
    let p = jittered(&reference, 3, 0.05);
    let ps = pairs(2, 9);
    let cfg = DpoConfig { beta: 0.5, reference: &reference };
    check("dpo", &p, |q| dpo_loss(q, &cfg, &ps).unwrap());
}

#[test]
fn dpo_gradient_at_reference_is_half_logprob_difference() {
    let reference = default_model(13);
    let ps = pairs(2, 4);
    let beta = 0.1;
    let refs = reference_logprobs(&reference, &ps).unwrap();
    let out = dpo_loss_with_reference(&reference, beta, &ps, &refs).unwrap();
    assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-12);
    // Independent reconstruction from per-sequence finite differences.
    let lp = |q: &Params, x: &PromptEncoding, y: &Response| crate::model::sequence_logprob(q, x, y).unwrap();
    let coords = probe_coords(&out.grad, 2);
    for &i in coords.iter().take(40) {
        let mut expect = 0.0;
        for pr in &ps {
            let mut q = reference.clone();
            q.data[i] += STEP;
            let up = lp(&q, &pr.x, &pr.y_plus) - lp(&q, &pr.x, &pr.y_minus);
            q.data[i] -= 2.0 * STEP;
            let down = lp(&q, &pr.x, &pr.y_plus) - lp(&q, &pr.x, &pr.y_minus);
            expect += -(beta / 2.0) * (up - down) / (2.0 * STEP) / ps.len() as f64;
        }
        let a = out.grad.data[i];
        assert!((a - expect).abs() <= REL_TOL * a.abs().max(expect.abs()) + 1e-10, "[{i}] {a:e} vs {expect:e}");
    }
}

#[test]
fn grpo_gradient_matches_finite_differences() {
    let p = default_model(14);
    let batch = sft_batch(6, 8);
    let mut groups = Vec::new();
    for chunk in batch.chunks(3) {
        // Candidates: the grounded answer plus answers borrowed from other prompts.
        let x = chunk[0].0.clone();
        let cands: Vec<(Response, f64)> =
            chunk.iter().enumerate().map(|(k, (_, y))| (y.clone(), [1.0, -1.0, 0.0][k])).collect();
        let mut g = ResponseGroup::new(x, cands);
        g.fill_advantages().unwrap();
        groups.push(g);
    }
    check("grpo", &p, |q| grpo_loss(q, &groups).unwrap());
}

#[test]
fn preference_step_increases_margin() {
    let reference = default_model(15);
    for pr in pairs(4, 21) {
        let one = [pr.clone()];
        let (_, g) = dpo_loss(&reference, &DpoConfig { beta: 0.1, reference: &reference }, &one).unwrap();
        let mut q = reference.clone();
        q.data.iter_mut().zip(&g.data).for_each(|(v, d)| *v -= 1e-3 * d);
        let m = |p: &Params| {
            crate::model::sequence_logprob(p, &pr.x, &pr.y_plus).unwrap()
                - crate::model::sequence_logprob(p, &pr.x, &pr.y_minus).unwrap()
        };
        assert!(m(&q) > m(&reference), "{:?}", pr.provenance);
    }
}

/// KL by explicit full-vocabulary summation over reference-greedy
/// continuations, using nothing but the forward pass.
fn kl_oracle(p: &Params, r: &Params, prompts: &[PromptEncoding], probe_len: usize) -> f64 {
    let v = p.config.vocab;
    let softmax = |z: &[f64]| {
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|a| (a - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|a| a / s).collect::<Vec<f64>>()
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for x in prompts {
        let mut prefix: Vec<Token> = Vec::new();
        for _ in 0..probe_len {
            let (pp, pr) = (softmax(&forward_logits(p, x, &prefix).unwrap()), softmax(&forward_logits(r, x, &prefix).unwrap()));
            total += (0..v).map(|i| if pp[i] > 0.0 { pp[i] * (pp[i] / pr[i]).ln() } else { 0.0 }).sum::<f64>();
            count += 1;
            let next = (0..v).fold(0, |b, i| if pr[i] > pr[b] { i } else { b });
            if next == special::EOS.id() {
                break;
            }
            prefix.push(Token(next as u16));
        }
    }
    total / count as f64
}

#[test]
fn kl_matches_full_vocabulary_oracle() {
    let a = default_model(16);
    let b = jittered(&a, 5, 0.2);
    let prompts: Vec<PromptEncoding> = sft_batch(4, 3).into_iter().map(|(x, _)| x).collect();
    let kl = kl_to_reference(&b, &a, &prompts, 6).unwrap();
    let oracle = kl_oracle(&b, &a, &prompts, 6);
    assert!(kl > 0.0);
    assert!((kl - oracle).abs() < 1e-10, "{kl} vs {oracle}");
    assert_eq!(kl_to_reference(&a, &a, &prompts, 6).unwrap(), 0.0);
}
