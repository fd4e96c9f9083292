//! Semi-synthetic count data: smooth an observed series into a prevalence,
//! resample Poisson observations from it, and split them across sites.

use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::combine::validate_shares;
use crate::error::{config, domain, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cadence {
    Daily,
    #[default]
    Weekly,
}

impl Cadence {
    pub fn step_days(self) -> i64 {
        match self {
            Cadence::Daily => 1,
            Cadence::Weekly => 7,
        }
    }

    /// Infers the cadence from the spacing of two consecutive dates.
    pub fn from_step(days: i64) -> Option<Cadence> {
        match days {
            1 => Some(Cadence::Daily),
            7 => Some(Cadence::Weekly),
            _ => None,
        }
    }
}

impl fmt::Display for Cadence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cadence::Daily => "daily",
            Cadence::Weekly => "weekly",
        })
    }
}

impl FromStr for Cadence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "daily" => Ok(Cadence::Daily),
            "weekly" => Ok(Cadence::Weekly),
            _ => Err(config(format!("unknown cadence '{s}'"))),
        }
    }
}

fn check_timestamps(timestamps: &[NaiveDate], cadence: Cadence) -> Result<()> {
    let step = cadence.step_days();
    for (i, w) in timestamps.windows(2).enumerate() {
        let gap = (w[1] - w[0]).num_days();
        if gap != step {
            return Err(domain(format!(
                "timestamps {} and {} (index {}) are {gap} days apart, expected {step} for {cadence} cadence",
                w[0],
                w[1],
                i + 1
            )));
        }
    }
    Ok(())
}

fn date_range(start: NaiveDate, cadence: Cadence, len: usize) -> Vec<NaiveDate> {
    (0..len)
        .map(|i| start + Duration::days(i as i64 * cadence.step_days()))
        .collect()
}

/// Observed counts `k_t` for one site at a fixed cadence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountSeries {
    site_id: String,
    cadence: Cadence,
    timestamps: Vec<NaiveDate>,
    counts: Vec<u64>,
}

impl CountSeries {
    pub fn new(
        site_id: impl Into<String>,
        cadence: Cadence,
        timestamps: Vec<NaiveDate>,
        counts: Vec<u64>,
    ) -> Result<Self> {
        if timestamps.len() != counts.len() {
            return Err(domain(format!(
                "{} timestamps for {} counts",
                timestamps.len(),
                counts.len()
            )));
        }
        check_timestamps(&timestamps, cadence)?;
        Ok(Self {
            site_id: site_id.into(),
            cadence,
            timestamps,
            counts,
        })
    }

    /// Builds a series with equally spaced timestamps starting at `start`.
    pub fn from_start(
        site_id: impl Into<String>,
        cadence: Cadence,
        start: NaiveDate,
        counts: Vec<u64>,
    ) -> Self {
        let timestamps = date_range(start, cadence, counts.len());
        Self {
            site_id: site_id.into(),
            cadence,
            timestamps,
            counts,
        }
    }

    pub fn site_id(&self) -> &str {
        &self.site_id
    }

    pub fn cadence(&self) -> Cadence {
        self.cadence
    }

    pub fn timestamps(&self) -> &[NaiveDate] {
        &self.timestamps
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn with_site_id(mut self, site_id: impl Into<String>) -> Self {
        self.site_id = site_id.into();
        self
    }

    /// Same cadence and timestamps.
    pub fn is_aligned_with(&self, other: &CountSeries) -> bool {
        self.cadence == other.cadence && self.timestamps == other.timestamps
    }

    /// Pointwise sum of aligned series, labelled `site_id`.
    pub fn sum_of(site_id: impl Into<String>, series: &[CountSeries]) -> Result<Self> {
        let first = series.first().ok_or_else(|| domain("no series to sum"))?;
        if let Some(bad) = series.iter().find(|s| !s.is_aligned_with(first)) {
            return Err(config(format!(
                "series '{}' is not aligned with '{}'",
                bad.site_id, first.site_id
            )));
        }
        let counts = (0..first.len())
            .map(|t| series.iter().map(|s| s.counts[t]).sum())
            .collect();
        Ok(Self {
            site_id: site_id.into(),
            cadence: first.cadence,
            timestamps: first.timestamps.clone(),
            counts,
        })
    }
}

/// Underlying Poisson rates `λ_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrevalenceSeries {
    cadence: Cadence,
    timestamps: Vec<NaiveDate>,
    rates: Vec<f64>,
}

impl PrevalenceSeries {
    pub fn new(cadence: Cadence, timestamps: Vec<NaiveDate>, rates: Vec<f64>) -> Result<Self> {
        if timestamps.len() != rates.len() {
            return Err(domain(format!(
                "{} timestamps for {} rates",
                timestamps.len(),
                rates.len()
            )));
        }
        if let Some(bad) = rates.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(domain(format!("rate {bad} must be finite and >= 0")));
        }
        check_timestamps(&timestamps, cadence)?;
        Ok(Self {
            cadence,
            timestamps,
            rates,
        })
    }

    pub fn from_start(cadence: Cadence, start: NaiveDate, rates: Vec<f64>) -> Result<Self> {
        let timestamps = date_range(start, cadence, rates.len());
        Self::new(cadence, timestamps, rates)
    }

    pub fn cadence(&self) -> Cadence {
        self.cadence
    }

    pub fn timestamps(&self) -> &[NaiveDate] {
        &self.timestamps
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }
}

/// Site shares `s_i`: nonnegative, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ShareVector(Vec<f64>);

impl ShareVector {
    pub fn new(shares: Vec<f64>) -> Result<Self> {
        validate_shares(&shares)?;
        Ok(Self(shares))
    }

    pub fn equal(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(domain("need at least one site"));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    /// Shares proportional to nonnegative totals; uniform when all are zero.
    pub fn from_totals(totals: &[u64]) -> Result<Self> {
        let sum: u64 = totals.iter().sum();
        if sum == 0 {
            return Self::equal(totals.len());
        }
        Ok(Self(
            totals.iter().map(|&t| t as f64 / sum as f64).collect(),
        ))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest share, first on ties.
    pub fn largest(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .fold(0, |best, (i, &s)| if s > self.0[best] { i } else { best })
    }
}

impl TryFrom<Vec<f64>> for ShareVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ShareVector> for Vec<f64> {
    fn from(s: ShareVector) -> Self {
        s.0
    }
}

/// Moving average aligned to the input timestamps.
///
/// Where the whole window fits around `t` the mean is centered on `t`
/// (for even windows the extra point is taken from the past). Elsewhere the
/// mean runs over the trailing partial window `[max(0, t - w + 1), t]`, so a
/// window longer than the series gives running means.
pub fn moving_average(series: &CountSeries, window: usize) -> Result<PrevalenceSeries> {
    if series.is_empty() {
        return Err(domain("cannot smooth an empty series"));
    }
    if window == 0 {
        return Err(domain("smoothing window must be positive"));
    }
    let counts = series.counts();
    let len = counts.len();
    let mut prefix = Vec::with_capacity(len + 1);
    prefix.push(0u64);
    for &c in counts {
        prefix.push(prefix.last().unwrap() + c);
    }
    let mean = |lo: usize, hi: usize| (prefix[hi + 1] - prefix[lo]) as f64 / (hi + 1 - lo) as f64;
    let ahead = (window - 1) / 2;
    let behind = window - 1 - ahead;
    let rates = (0..len)
        .map(|t| {
            if t >= behind && t + ahead < len {
                mean(t - behind, t + ahead)
            } else {
                mean((t + 1).saturating_sub(window), t)
            }
        })
        .collect();
    Ok(PrevalenceSeries {
        cadence: series.cadence,
        timestamps: series.timestamps.clone(),
        rates,
    })
}

/// Draws `k_t ~ Poi(λ_t)` independently for each period.
pub fn poisson_sample(prev: &PrevalenceSeries, seed: u64) -> Result<CountSeries> {
    let mut rng = rng::stream(seed, 0);
    let counts = prev
        .rates
        .iter()
        .map(|&rate| draw_poisson(rate, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(CountSeries {
        site_id: "all".to_string(),
        cadence: prev.cadence,
        timestamps: prev.timestamps.clone(),
        counts,
    })
}

pub(crate) fn draw_poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<u64> {
    if rate == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(rate).map_err(|e| domain(format!("Poisson rate {rate}: {e}")))?;
    Ok(dist.sample(rng) as u64)
}

/// Splits each `k_t` across sites with a multinomial draw on `shares`.
/// Sites are named `site-0`, `site-1`, ...
pub fn split_multinomial(
    series: &CountSeries,
    shares: &ShareVector,
    seed: u64,
) -> Vec<CountSeries> {
    let mut rng = rng::stream(seed, 1);
    let n_sites = shares.len();
    let mut site_counts = vec![Vec::with_capacity(series.len()); n_sites];
    let mut draw = vec![0u64; n_sites];
    for &k in series.counts() {
        multinomial_into(k, shares.as_slice(), &mut rng, &mut draw);
        for (dst, &x) in site_counts.iter_mut().zip(&draw) {
            dst.push(x);
        }
    }
    site_counts
        .into_iter()
        .enumerate()
        .map(|(i, counts)| CountSeries {
            site_id: format!("site-{i}"),
            cadence: series.cadence,
            timestamps: series.timestamps.clone(),
            counts,
        })
        .collect()
}

/// Sequential conditional binomials; the last site with positive share
/// takes the remainder so totals are conserved exactly.
pub(crate) fn multinomial_into<R: Rng + ?Sized>(
    k: u64,
    shares: &[f64],
    rng: &mut R,
    out: &mut [u64],
) {
    out.fill(0);
    let last = match shares.iter().rposition(|&s| s > 0.0) {
        Some(i) => i,
        None => return,
    };
    let mut remaining = k;
    let mut mass = 1.0;
    for (i, &s) in shares.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i == last {
            out[i] = remaining;
            break;
        }
        if s <= 0.0 {
            continue;
        }
        let p = (s / mass).clamp(0.0, 1.0);
        let x = Binomial::new(remaining, p)
            .expect("p in [0, 1]")
            .sample(rng);
        out[i] = x;
        remaining -= x;
        mass -= s;
    }
}

pub fn scale_magnitude(prev: &PrevalenceSeries, multiplier: f64) -> Result<PrevalenceSeries> {
    if !(multiplier.is_finite() && multiplier > 0.0) {
        return Err(domain(format!(
            "magnitude multiplier {multiplier} must be positive"
        )));
    }
    Ok(PrevalenceSeries {
        cadence: prev.cadence,
        timestamps: prev.timestamps.clone(),
        rates: prev.rates.iter().map(|r| r * multiplier).collect(),
    })
}

/// `S = -Σ s_i ln s_i / ln N`, with `0 ln 0 = 0`.
pub fn normalized_entropy(shares: &ShareVector) -> Result<f64> {
    let n = shares.len();
    if n < 2 {
        return Err(domain("normalized entropy needs at least two sites"));
    }
    let h: f64 = shares
        .as_slice()
        .iter()
        .filter(|&&s| s > 0.0)
        .map(|&s| -s * s.ln())
        .sum();
    Ok((h / (n as f64).ln()).clamp(0.0, 1.0))
}

/// One dominant site with share `a` and `N - 1` equal small sites, with `a`
/// chosen so the normalized entropy equals `target`.
pub fn shares_for_entropy(n: usize, target: f64) -> Result<ShareVector> {
    if n < 2 {
        return Err(domain("entropy targets need at least two sites"));
    }
    if !(0.0..=1.0).contains(&target) {
        return Err(domain(format!("entropy target {target} outside [0, 1]")));
    }
    let build = |a: f64| {
        let rest = (1.0 - a) / (n - 1) as f64;
        let mut v = vec![rest; n];
        v[0] = a;
        v
    };
    let entropy = |a: f64| normalized_entropy(&ShareVector(build(a))).expect("n >= 2");
    // Entropy falls from 1 at a = 1/N to 0 at a = 1.
    let (mut lo, mut hi) = (1.0 / n as f64, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if entropy(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut v = build(0.5 * (lo + hi));
    let sum: f64 = v.iter().sum();
    v.iter_mut().for_each(|s| *s /= sum);
    ShareVector::new(v)
}

/// A Gaussian-shaped epidemic wave on the period axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub center: f64,
    pub width: f64,
    pub peak: f64,
}

/// Shape of the built-in multi-wave fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveShape {
    pub periods: usize,
    pub cadence: Cadence,
    pub start: NaiveDate,
    pub baseline: f64,
    pub waves: Vec<Wave>,
    /// Seed of the observation noise layered on the smooth shape.
    pub noise_seed: u64,
}

impl Default for WaveShape {
    /// Three years of weekly counts with four waves of uneven size and
    /// speed.
    fn default() -> Self {
        Self {
            periods: 156,
            cadence: Cadence::Weekly,
            start: NaiveDate::from_ymd_opt(2020, 1, 6).expect("valid date"),
            baseline: 40.0,
            waves: vec![
                Wave {
                    center: 18.0,
                    width: 3.5,
                    peak: 260.0,
                },
                Wave {
                    center: 52.0,
                    width: 6.0,
                    peak: 520.0,
                },
                Wave {
                    center: 90.0,
                    width: 3.0,
                    peak: 380.0,
                },
                Wave {
                    center: 128.0,
                    width: 5.0,
                    peak: 700.0,
                },
            ],
            noise_seed: 2020,
        }
    }
}

impl WaveShape {
    pub fn rate_at(&self, t: usize) -> f64 {
        let x = t as f64;
        self.baseline
            + self
                .waves
                .iter()
                .map(|w| w.peak * (-0.5 * ((x - w.center) / w.width).powi(2)).exp())
                .sum::<f64>()
    }
}

/// A realistic-looking observed series: Poisson noise around the wave shape.
/// Used as the stand-in for observed data that the pipeline smooths.
pub fn builtin_wave_series(shape: &WaveShape) -> CountSeries {
    let mut rng = rng::stream(shape.noise_seed, 0);
    let counts = (0..shape.periods)
        .map(|t| draw_poisson(shape.rate_at(t), &mut rng).expect("finite positive rate"))
        .collect();
    CountSeries::from_start("observed", shape.cadence, shape.start, counts)
}
