//! Alarms, windowed alarm matching and precision/recall summaries.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::semisynth::{Cadence, PrevalenceSeries};

/// Sorted, unique period indices at which an alarm fired.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AlarmSeries(Vec<usize>);

impl AlarmSeries {
    pub fn new(mut periods: Vec<usize>) -> Self {
        periods.sort_unstable();
        periods.dedup();
        Self(periods)
    }

    pub fn periods(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A predicted alarm at `u` matches a true alarm at `t` when
/// `t - before <= u <= t + after`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchWindow {
    pub before: usize,
    pub after: usize,
}

impl MatchWindow {
    pub fn new(before: usize, after: usize) -> Self {
        Self { before, after }
    }

    /// One week early to two weeks late, in periods of `cadence`.
    pub fn for_cadence(cadence: Cadence) -> Self {
        match cadence {
            Cadence::Weekly => Self::new(1, 2),
            Cadence::Daily => Self::new(7, 14),
        }
    }

    fn admits(&self, truth: usize, predicted: usize) -> bool {
        predicted + self.before >= truth && predicted <= truth + self.after
    }
}

/// Periods with `p < threshold`.
pub fn alarms_from_pvalues(p_series: &[f64], threshold: f64) -> AlarmSeries {
    AlarmSeries(
        p_series
            .iter()
            .enumerate()
            .filter(|(_, &p)| p < threshold)
            .map(|(t, _)| t)
            .collect(),
    )
}

/// Periods where the prevalence grew by more than `theta` over the mean of
/// the previous `l` periods. Periods with a zero baseline never alarm.
pub fn alarms_from_growth(prev: &PrevalenceSeries, theta: f64, l: usize) -> Result<AlarmSeries> {
    if l == 0 {
        return Err(domain("growth baseline needs at least one period"));
    }
    let rates = prev.rates();
    let periods = (l..rates.len())
        .filter(|&t| {
            let base = rates[t - l..t].iter().sum::<f64>() / l as f64;
            base > 0.0 && rates[t] / base - 1.0 > theta
        })
        .collect();
    Ok(AlarmSeries(periods))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchCounts {
    /// 1 when nothing was predicted.
    pub fn precision(&self) -> f64 {
        match self.tp + self.fp {
            0 => 1.0,
            d => self.tp as f64 / d as f64,
        }
    }

    /// 1 when there was nothing to find.
    pub fn recall(&self) -> f64 {
        match self.tp + self.fn_ {
            0 => 1.0,
            d => self.tp as f64 / d as f64,
        }
    }
}

/// Greedy one-to-one matching in time order: each true alarm takes the
/// earliest unmatched prediction inside its window.
pub fn match_alarms(
    truth: &AlarmSeries,
    predicted: &AlarmSeries,
    window: MatchWindow,
) -> MatchCounts {
    let pred = predicted.periods();
    let mut next = 0;
    let mut tp = 0;
    for &t in truth.periods() {
        while next < pred.len() && pred[next] + window.before < t {
            next += 1;
        }
        if next < pred.len() && window.admits(t, pred[next]) {
            tp += 1;
            next += 1;
        }
    }
    MatchCounts {
        tp,
        fp: pred.len() - tp,
        fn_: truth.len() - tp,
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

/// One point per threshold, thresholds sorted ascending.
pub fn pr_curve(
    p_series: &[f64],
    truth: &AlarmSeries,
    window: MatchWindow,
    thresholds: &[f64],
) -> Result<PrCurve> {
    if let Some(bad) = thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(domain(format!("threshold {bad} outside (0, 1)")));
    }
    let mut sorted = thresholds.to_vec();
    sorted.sort_by(f64::total_cmp);
    let points = sorted
        .into_iter()
        .map(|threshold| {
            let m = match_alarms(truth, &alarms_from_pvalues(p_series, threshold), window);
            let (precision, recall) = (m.precision(), m.recall());
            PrPoint {
                threshold,
                precision,
                recall,
                f1: f1(precision, recall),
            }
        })
        .collect();
    Ok(PrCurve { points })
}

/// Highest recall among points with precision `>= 1 - fdr`, or 0.
pub fn recall_at_fdr(curve: &PrCurve, fdr: f64) -> Result<f64> {
    if curve.points.is_empty() {
        return Err(domain("empty PR curve"));
    }
    Ok(curve
        .points
        .iter()
        .filter(|p| p.precision >= 1.0 - fdr)
        .map(|p| p.recall)
        .fold(0.0, f64::max))
}

/// `k` thresholds evenly spaced in log scale over `[lo, hi]`.
pub fn log_thresholds(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut t: Vec<f64> = (0..k)
        .map(|i| (a + (b - a) * i as f64 / (k - 1) as f64).exp())
        .collect();
    t[0] = lo;
    t[k - 1] = hi;
    t
}
