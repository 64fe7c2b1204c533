use serde::{Deserialize, Serialize};

pub const HISTOGRAM_BIN_WIDTH: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Inclusive lower edge.
    pub lo: usize,
    /// Exclusive upper edge.
    pub hi: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: usize,
    pub max: usize,
    pub bins: Vec<HistogramBin>,
}

impl LengthStats {
    /// `None` for an empty sample.
    pub fn from_lengths(lengths: &[usize]) -> Option<LengthStats> {
        if lengths.is_empty() {
            return None;
        }
        let mut sorted = lengths.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2] as f64
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
        };
        let (min, max) = (sorted[0], sorted[n - 1]);
        let first = min / HISTOGRAM_BIN_WIDTH;
        let last = max / HISTOGRAM_BIN_WIDTH;
        let mut bins: Vec<HistogramBin> = (first..=last)
            .map(|b| HistogramBin { lo: b * HISTOGRAM_BIN_WIDTH, hi: (b + 1) * HISTOGRAM_BIN_WIDTH, count: 0 })
            .collect();
        for &l in &sorted {
            bins[l / HISTOGRAM_BIN_WIDTH - first].count += 1;
        }
        Some(LengthStats {
            count: n,
            mean: sorted.iter().sum::<usize>() as f64 / n as f64,
            median,
            min,
            max,
            bins,
        })
    }

    /// Text histogram, one row per bin.
    pub fn render(&self, width: usize) -> String {
        let peak = self.bins.iter().map(|b| b.count).max().unwrap_or(1).max(1);
        let mut s = format!("n={} mean={:.3} median={:.1}\n", self.count, self.mean, self.median);
        for b in &self.bins {
            let bar = "#".repeat((b.count * width).div_ceil(peak));
            s.push_str(&format!("[{:>3},{:>3}) {:>7} {}\n", b.lo, b.hi, b.count, bar));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lo,hi,count\n");
        for b in &self.bins {
            s.push_str(&format!("{},{},{}\n", b.lo, b.hi, b.count));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_lengths_fill_one_bin() {
        let s = LengthStats::from_lengths(&[5; 12]).unwrap();
        assert_eq!(s.mean, 5.0);
        assert_eq!(s.median, 5.0);
        assert_eq!(s.bins.iter().filter(|b| b.count > 0).count(), 1);
        assert_eq!(s.bins[0], HistogramBin { lo: 4, hi: 6, count: 12 });
        assert!(LengthStats::from_lengths(&[]).is_none());
    }

    #[test]
    fn counts_sum_and_median() {
        let l = [1, 2, 3, 4, 9, 10];
        let s = LengthStats::from_lengths(&l).unwrap();
        assert_eq!(s.bins.iter().map(|b| b.count).sum::<usize>(), l.len());
        assert_eq!(s.median, 3.5);
        assert_eq!(s.bins.first().unwrap().lo, 0);
        assert_eq!(s.bins.last().unwrap().hi, 12);
        assert!(s.render(20).lines().count() == s.bins.len() + 1);
        assert!(s.to_csv().starts_with("lo,hi,count\n0,2,1\n"));
    }
}
