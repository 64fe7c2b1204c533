use serde::{Deserialize, Serialize};

use super::evalset::EvalItem;
use super::metrics::{judge_item, ItemOutcome, ModelPolicy, Policy};
use crate::error::{Error, Result};
use crate::model::{DecodingConfig, Params};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseCounts {
    pub a_wins: usize,
    pub b_wins: usize,
    pub tie: usize,
    pub both_wrong: usize,
    pub error: usize,
}

impl PairwiseCounts {
    pub fn total(&self) -> usize {
        self.a_wins + self.b_wins + self.tie + self.both_wrong + self.error
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    AWins,
    BWins,
    Tie,
    BothWrong,
    Error,
}

/// Percentages in tenths of a point, rounded half up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tenths {
    pub a_wins: i64,
    pub b_wins: i64,
    pub tie: i64,
    pub both_wrong: i64,
    pub error: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseReport {
    pub counts: PairwiseCounts,
    pub total: usize,
    pub percent_tenths: Tenths,
    /// `pct(b_wins) − pct(a_wins)` in tenths of a point.
    pub delta_tenths: i64,
    pub percentages: [f64; 5],
    pub delta_win_rate: f64,
}

/// `round(100·count/total, 1)` as an integer number of tenths.
pub fn percent_tenths(count: usize, total: usize) -> i64 {
    ((2000 * count as u128 + total as u128) / (2 * total as u128)) as i64
}

fn fmt_tenths(t: i64) -> String {
    let sign = if t < 0 { "-" } else { "" };
    format!("{sign}{}.{}", t.abs() / 10, t.abs() % 10)
}

/// Formats counts the way the comparison table reports them.
pub fn report_table(counts: PairwiseCounts, total: usize) -> Result<PairwiseReport> {
    if total == 0 || counts.total() != total {
        return Err(Error::Argument(format!("counts sum to {} but total is {total}", counts.total())));
    }
    let t = Tenths {
        a_wins: percent_tenths(counts.a_wins, total),
        b_wins: percent_tenths(counts.b_wins, total),
        tie: percent_tenths(counts.tie, total),
        both_wrong: percent_tenths(counts.both_wrong, total),
        error: percent_tenths(counts.error, total),
    };
    let delta = t.b_wins - t.a_wins;
    Ok(PairwiseReport {
        counts,
        total,
        percent_tenths: t,
        delta_tenths: delta,
        percentages: [t.a_wins, t.b_wins, t.tie, t.both_wrong, t.error].map(|v| v as f64 / 10.0),
        delta_win_rate: delta as f64 / 10.0,
    })
}

impl PairwiseReport {
    pub fn delta_string(&self) -> String {
        let s = fmt_tenths(self.delta_tenths);
        if self.delta_tenths >= 0 {
            format!("+{s}")
        } else {
            s
        }
    }

    pub fn render(&self, a: &str, b: &str) -> String {
        let t = &self.percent_tenths;
        let c = &self.counts;
        let rows = [
            (format!("{a} wins"), c.a_wins, t.a_wins),
            (format!("{b} wins"), c.b_wins, t.b_wins),
            ("tie".to_string(), c.tie, t.tie),
            ("both wrong".to_string(), c.both_wrong, t.both_wrong),
            ("error".to_string(), c.error, t.error),
        ];
        let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(14);
        let mut s = format!("{:<w$} {:>7} {:>7}\n", "category", "count", "pct");
        for (name, n, p) in rows {
            s.push_str(&format!("{name:<w$} {n:>7} {:>6}%\n", fmt_tenths(p)));
        }
        s.push_str(&format!("{:<w$} {:>7} {:>6}%\n", "delta win rate", "", self.delta_string()));
        s.push_str(&format!("{:<w$} {:>7}\n", "total", self.total));
        s
    }
}

/// Per-item comparison of two judged answers. `None` marks an item for
/// which no response could be produced; unparseable answers are merely
/// wrong.
pub fn compare_outcomes(a: Option<&ItemOutcome>, b: Option<&ItemOutcome>) -> Outcome {
    let (Some(a), Some(b)) = (a, b) else { return Outcome::Error };
    let (va, vb) = (&a.verdict, &b.verdict);
    match (va.grounded, vb.grounded) {
        (true, false) => Outcome::AWins,
        (false, true) => Outcome::BWins,
        (false, false) => Outcome::BothWrong,
        (true, true) => match va.validated_claims.cmp(&vb.validated_claims) {
            std::cmp::Ordering::Greater => Outcome::AWins,
            std::cmp::Ordering::Less => Outcome::BWins,
            std::cmp::Ordering::Equal => Outcome::Tie,
        },
    }
}

pub fn tally(a: &[Option<ItemOutcome>], b: &[Option<ItemOutcome>]) -> Result<PairwiseCounts> {
    if a.len() != b.len() {
        return Err(Error::Argument("outcome lists differ in length".into()));
    }
    let mut c = PairwiseCounts::default();
    for (x, y) in a.iter().zip(b) {
        match compare_outcomes(x.as_ref(), y.as_ref()) {
            Outcome::AWins => c.a_wins += 1,
            Outcome::BWins => c.b_wins += 1,
            Outcome::Tie => c.tie += 1,
            Outcome::BothWrong => c.both_wrong += 1,
            Outcome::Error => c.error += 1,
        }
    }
    Ok(c)
}

pub fn compare_policies(a: &dyn Policy, b: &dyn Policy, evalset: &[EvalItem]) -> Result<PairwiseReport> {
    if evalset.is_empty() {
        return Err(Error::Argument("evalset is empty".into()));
    }
    let run = |p: &dyn Policy| -> Vec<Option<ItemOutcome>> {
        evalset
            .iter()
            .map(|it| match p.respond(it) {
                Ok(y) => Some(judge_item(it, y)),
                Err(e) => {
                    log::warn!("item {}: no response: {e}", it.id);
                    None
                }
            })
            .collect()
    };
    let counts = tally(&run(a), &run(b))?;
    report_table(counts, evalset.len())
}

/// Oracle-judged A/B comparison; `b` is the treated model.
pub fn pairwise_compare(
    params_a: &Params,
    params_b: &Params,
    evalset: &[EvalItem],
    cfg: &DecodingConfig,
) -> Result<PairwiseReport> {
    if params_a.config.vocab != params_b.config.vocab {
        return Err(Error::Config("models do not share a vocabulary".into()));
    }
    compare_policies(
        &ModelPolicy { params: params_a, decoding: cfg.clone() },
        &ModelPolicy { params: params_b, decoding: cfg.clone() },
        evalset,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalhall::{build_evalset, CanonicalPolicy, NonexistentObjectPolicy, Strata};
    use crate::microworld::WorldConfig;
    use crate::model::{init_params, ModelConfig};

    fn counts(v: [usize; 5]) -> PairwiseCounts {
        PairwiseCounts { a_wins: v[0], b_wins: v[1], tie: v[2], both_wrong: v[3], error: v[4] }
    }

    #[test]
    fn single_category_is_one_hundred() {
        let r = report_table(counts([0, 0, 17, 0, 0]), 17).unwrap();
        assert_eq!(r.percent_tenths.tie, 1000);
        assert_eq!(r.delta_tenths, 0);
        let r = report_table(counts([0, 5, 0, 0, 0]), 5).unwrap();
        assert_eq!(r.delta_string(), "+100.0");
        let r = report_table(counts([5, 0, 0, 0, 0]), 5).unwrap();
        assert_eq!(r.delta_string(), "-100.0");
        assert!(report_table(counts([1, 1, 1, 1, 1]), 6).is_err());
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(percent_tenths(1, 8), 125);
        assert_eq!(percent_tenths(1, 16), 63);
        assert_eq!(percent_tenths(1, 3), 333);
        assert_eq!(percent_tenths(2, 3), 667);
    }

    #[test]
    fn scripted_comparison() {
        let e = build_evalset(96, 2, &Strata::default(), &WorldConfig::default()).unwrap();
        let r = compare_policies(&CanonicalPolicy, &NonexistentObjectPolicy, &e).unwrap();
        assert_eq!(r.counts.a_wins, e.len());
        let r = compare_policies(&CanonicalPolicy, &CanonicalPolicy, &e).unwrap();
        assert_eq!(r.counts.tie, e.len());
    }

    #[test]
    fn same_model_is_tie_or_both_wrong() {
        let e = build_evalset(48, 2, &Strata::default(), &WorldConfig::default()).unwrap();
        let p = init_params(ModelConfig::default(), 5).unwrap();
        let r = pairwise_compare(&p, &p, &e, &DecodingConfig::greedy(16)).unwrap();
        assert_eq!(r.counts.tie + r.counts.both_wrong, e.len());
        assert_eq!(r.counts.a_wins + r.counts.b_wins, 0);
        assert!(r.render("A", "B").contains("delta win rate"));
    }
}
