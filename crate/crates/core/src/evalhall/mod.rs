//! Oracle-judged evaluation: hallucination and abstention rates, pairwise
//! model comparison, length histograms and decoding sweeps.

mod evalset;
mod metrics;
mod pairwise;
mod sweep;

pub use evalset::{build_evalset, EvalItem, Strata};
pub use metrics::{
    evaluate_policy, hallucination_rate, judge_item, run_policy, summarize, CanonicalPolicy, ItemOutcome,
    KindMetrics, MetricsReport, ModelPolicy, NonexistentObjectPolicy, Policy,
};
pub use pairwise::{
    compare_outcomes, compare_policies, pairwise_compare, percent_tenths, report_table, tally, Outcome,
    PairwiseCounts, PairwiseReport, Tenths,
};
pub use sweep::{decoding_sweep, length_histogram, spearman, SweepPoint, SweepReport};
