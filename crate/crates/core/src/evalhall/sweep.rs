use serde::{Deserialize, Serialize};

use super::evalset::EvalItem;
use super::metrics::{hallucination_rate, MetricsReport};
use crate::dataforge::LengthStats;
use crate::error::{Error, Result};
use crate::model::{DecodingConfig, Params, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub decoding: DecodingConfig,
    pub hallucination_rate: f64,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// Spearman rank correlation between temperature and hallucination rate;
    /// `None` when either side is constant.
    pub temperature_spearman: Option<f64>,
}

/// Average ranks (1-based), ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Pearson correlation of the ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sx = rx.iter().map(|a| (a - mx).powi(2)).sum::<f64>().sqrt();
    let sy = ry.iter().map(|b| (b - my).powi(2)).sum::<f64>().sqrt();
    (sx > 0.0 && sy > 0.0).then(|| cov / (sx * sy))
}

pub fn decoding_sweep(params: &Params, evalset: &[EvalItem], grid: &[DecodingConfig]) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(Error::Argument("decoding grid is empty".into()));
    }
    let mut points = Vec::with_capacity(grid.len());
    for cfg in grid {
        let report = hallucination_rate(params, evalset, cfg)?;
        log::info!("{:?} τ={}: hallucination {:.4}", cfg.strategy, cfg.temperature, report.hallucination_rate);
        points.push(SweepPoint { decoding: cfg.clone(), hallucination_rate: report.hallucination_rate, report });
    }
    // Greedy decoding ignores temperature; it sits at τ = 0.
    let taus: Vec<f64> = points
        .iter()
        .map(|p| if p.decoding.strategy == Strategy::Greedy { 0.0 } else { p.decoding.temperature })
        .collect();
    let rates: Vec<f64> = points.iter().map(|p| p.hallucination_rate).collect();
    Ok(SweepReport { temperature_spearman: spearman(&taus, &rates), points })
}

impl SweepReport {
    pub fn render(&self) -> String {
        let mut s = format!("{:<12} {:>6} {:>5} {:>6} {:>14}\n", "strategy", "tau", "k", "p", "hallucination");
        for p in &self.points {
            let d = &p.decoding;
            s.push_str(&format!(
                "{:<12} {:>6.2} {:>5} {:>6.2} {:>13.1}%\n",
                format!("{:?}", d.strategy).to_lowercase(),
                d.temperature,
                d.k,
                d.p,
                100.0 * p.hallucination_rate
            ));
        }
        match self.temperature_spearman {
            Some(r) => s.push_str(&format!("spearman(tau, rate) = {r:+.4}\n")),
            None => s.push_str("spearman(tau, rate) = undefined\n"),
        }
        s
    }
}

/// Length statistics of a nonempty sample of token lengths.
pub fn length_histogram(lengths: &[usize]) -> Result<LengthStats> {
    LengthStats::from_lengths(lengths).ok_or_else(|| Error::Argument("no lengths".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalhall::{build_evalset, Strata};
    use crate::microworld::WorldConfig;
    use crate::model::{init_params, ModelConfig};

    #[test]
    fn spearman_known_values() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), None);
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
    }

    #[test]
    fn greedy_point_equals_direct_rate() {
        let e = build_evalset(32, 4, &Strata::default(), &WorldConfig::default()).unwrap();
        let p = init_params(ModelConfig::default(), 8).unwrap();
        let g = DecodingConfig::greedy(16);
        let s = decoding_sweep(&p, &e, &[g.clone()]).unwrap();
        assert_eq!(s.points.len(), 1);
        assert_eq!(s.points[0].report, hallucination_rate(&p, &e, &g).unwrap());
        assert!(s.temperature_spearman.is_none());
        assert!(decoding_sweep(&p, &e, &[]).is_err());
    }

    #[test]
    fn histogram_contract() {
        let h = length_histogram(&[3, 3, 3]).unwrap();
        assert_eq!(h.mean, 3.0);
        assert!(length_histogram(&[]).is_err());
    }
}
