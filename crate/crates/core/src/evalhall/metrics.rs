use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::evalset::EvalItem;
use crate::error::{Error, Result};
use crate::microworld::grammar::Claim;
use crate::microworld::vocab::Category;
use crate::microworld::{grounded_answers, judge_with_spec, GroundingVerdict, QuestionKind, Response};
use crate::model::{decode, encode_input, DecodingConfig, Params};

/// Anything that answers eval items.
pub trait Policy {
    fn respond(&self, item: &EvalItem) -> Result<Response>;
}

/// A model decoded under a fixed configuration; sampling is re-keyed per
/// item so results do not depend on evaluation order.
#[derive(Debug, Clone)]
pub struct ModelPolicy<'a> {
    pub params: &'a Params,
    pub decoding: DecodingConfig,
}

impl Policy for ModelPolicy<'_> {
    fn respond(&self, item: &EvalItem) -> Result<Response> {
        let x = encode_input(&item.scene, &item.question, &self.params.config)?;
        decode(self.params, &x, &self.decoding.reseeded(item.id))
    }
}

/// Always gives the oracle's canonical answer.
#[derive(Debug, Clone, Copy, Default)]
pub struct CanonicalPolicy;

impl Policy for CanonicalPolicy {
    fn respond(&self, item: &EvalItem) -> Result<Response> {
        Ok(grounded_answers(&item.scene, &item.question).canonical_response())
    }
}

/// Always asserts an object the scene does not contain (or an impossible
/// count when every category is present).
#[derive(Debug, Clone, Copy, Default)]
pub struct NonexistentObjectPolicy;

impl Policy for NonexistentObjectPolicy {
    fn respond(&self, item: &EvalItem) -> Result<Response> {
        let claim = match Category::ALL.iter().find(|&&c| item.scene.count(c) == 0) {
            Some(&c) => Claim::Exists(c),
            None => {
                let c = item.question.category;
                Claim::Count { n: (item.scene.count(c) + 1).min(15) as u8, color: None, category: c }
            }
        };
        Ok(Response::from_claims([&claim]))
    }
}

/// One judged answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub id: u64,
    pub kind: QuestionKind,
    pub response: Response,
    pub verdict: GroundingVerdict,
    pub abstain_required: bool,
}

pub fn judge_item(item: &EvalItem, response: Response) -> ItemOutcome {
    let spec = grounded_answers(&item.scene, &item.question);
    let verdict = judge_with_spec(&item.scene, &item.question, &spec, &response);
    ItemOutcome { id: item.id, kind: item.question.kind, response, verdict, abstain_required: spec.abstain_required }
}

pub fn run_policy(policy: &dyn Policy, evalset: &[EvalItem]) -> Result<Vec<ItemOutcome>> {
    evalset.iter().map(|it| Ok(judge_item(it, policy.respond(it)?))).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KindMetrics {
    pub n: usize,
    pub grounded: usize,
    pub hallucinated: usize,
    pub hallucination_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub grounded: usize,
    pub hallucinated: usize,
    pub hallucination_rate: f64,
    /// Share of abstention-required items answered by a grounded abstention.
    pub abstention_accuracy: Option<f64>,
    /// Share of false-premise items whose answer rejects the premise.
    pub premise_rejection_rate: Option<f64>,
    /// Mean validated claims among grounded answers.
    pub mean_validated_claims: f64,
    pub per_kind: BTreeMap<String, KindMetrics>,
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

pub fn summarize(outcomes: &[ItemOutcome]) -> Result<MetricsReport> {
    if outcomes.is_empty() {
        return Err(Error::Argument("no outcomes to summarize".into()));
    }
    let mut per_kind: BTreeMap<String, KindMetrics> = BTreeMap::new();
    let (mut grounded, mut hallucinated, mut claims) = (0, 0, 0);
    let (mut abstain_n, mut abstain_ok, mut fp_n, mut fp_ok) = (0, 0, 0, 0);
    for o in outcomes {
        let k = per_kind.entry(o.kind.name().to_string()).or_default();
        k.n += 1;
        if o.verdict.grounded {
            grounded += 1;
            k.grounded += 1;
            claims += o.verdict.validated_claims;
        }
        if o.verdict.hallucinated() {
            hallucinated += 1;
            k.hallucinated += 1;
        }
        if o.abstain_required {
            abstain_n += 1;
            abstain_ok += usize::from(o.verdict.grounded && o.verdict.abstained);
        }
        if o.kind == QuestionKind::FalsePremise {
            fp_n += 1;
            fp_ok += usize::from(o.verdict.premise_rejected);
        }
    }
    for k in per_kind.values_mut() {
        k.hallucination_rate = k.hallucinated as f64 / k.n as f64;
    }
    Ok(MetricsReport {
        n: outcomes.len(),
        grounded,
        hallucinated,
        hallucination_rate: hallucinated as f64 / outcomes.len() as f64,
        abstention_accuracy: ratio(abstain_ok, abstain_n),
        premise_rejection_rate: ratio(fp_ok, fp_n),
        mean_validated_claims: ratio(claims, grounded).unwrap_or(0.0),
        per_kind,
    })
}

pub fn evaluate_policy(policy: &dyn Policy, evalset: &[EvalItem]) -> Result<MetricsReport> {
    if evalset.is_empty() {
        return Err(Error::Argument("evalset is empty".into()));
    }
    summarize(&run_policy(policy, evalset)?)
}

/// Decodes every item, judges it and aggregates the rates.
pub fn hallucination_rate(params: &Params, evalset: &[EvalItem], cfg: &DecodingConfig) -> Result<MetricsReport> {
    evaluate_policy(&ModelPolicy { params, decoding: cfg.clone() }, evalset)
}

impl MetricsReport {
    pub fn render(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.1}%", 100.0 * v));
        let mut s = format!(
            "items {}  grounded {}  hallucinated {} ({:.1}%)\nabstention accuracy {}  premise rejection {}  detail {:.3}\n",
            self.n,
            self.grounded,
            self.hallucinated,
            100.0 * self.hallucination_rate,
            pct(self.abstention_accuracy),
            pct(self.premise_rejection_rate),
            self.mean_validated_claims
        );
        s.push_str(&format!("{:<22} {:>5} {:>9} {:>13}\n", "kind", "n", "grounded", "hallucinated"));
        for (k, m) in &self.per_kind {
            s.push_str(&format!("{:<22} {:>5} {:>9} {:>13}\n", k, m.n, m.grounded, m.hallucinated));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalhall::{build_evalset, Strata};
    use crate::microworld::{judge_response, WorldConfig};
    use crate::model::{ModelConfig, Params};

    fn items(n: usize) -> Vec<EvalItem> {
        build_evalset(n, 3, &Strata::default(), &WorldConfig::default()).unwrap()
    }

    #[test]
    fn scripted_extremes() {
        let e = items(160);
        let good = evaluate_policy(&CanonicalPolicy, &e).unwrap();
        assert_eq!(good.hallucination_rate, 0.0);
        assert_eq!(good.grounded, e.len());
        assert_eq!(good.abstention_accuracy, Some(1.0));
        assert_eq!(good.premise_rejection_rate, Some(1.0));
        let bad = evaluate_policy(&NonexistentObjectPolicy, &e).unwrap();
        assert_eq!(bad.hallucination_rate, 1.0);
        assert_eq!(bad.premise_rejection_rate, Some(0.0));
        assert!(evaluate_policy(&CanonicalPolicy, &[]).is_err());
    }

    #[test]
    fn zero_model_rate_matches_recount() {
        let e = items(64);
        let p = Params::zeros(ModelConfig::default()).unwrap();
        let cfg = DecodingConfig::greedy(16);
        let report = hallucination_rate(&p, &e, &cfg).unwrap();
        let mut recount = 0;
        for it in &e {
            let x = encode_input(&it.scene, &it.question, &p.config).unwrap();
            let y = decode(&p, &x, &cfg).unwrap();
            let v = judge_response(&it.scene, &it.question, &y);
            if !v.grounded && !v.abstained {
                recount += 1;
            }
        }
        assert_eq!(report.hallucinated, recount);
        assert_eq!(report.hallucination_rate, recount as f64 / e.len() as f64);
        assert!(report.render().contains("hallucinated"));
    }
}
