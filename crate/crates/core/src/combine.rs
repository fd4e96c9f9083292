//! p-value combiners.
//!
//! The four classical combiners treat sites as exchangeable. The weighted
//! variants take per-site shares `s_i` (fractions of the total count) and,
//! for the continuity-corrected Stouffer, the total count `n` and the
//! binomial parameter `ρ` of the underlying surge test.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::numerics::{
    chi_square_cdf, chi_square_sf, gamma_quantile_upper, normal_cdf, normal_quantile,
};

/// Lower/upper clamp applied to p-values before quantile or log transforms.
pub const P_CLAMP: f64 = 1e-15;

const SHARE_SUM_TOLERANCE: f64 = 1e-9;

/// Combination method identifiers, as used in configs and on the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "stouffer")]
    Stouffer,
    #[serde(rename = "fisher")]
    Fisher,
    #[serde(rename = "pearson")]
    Pearson,
    #[serde(rename = "tippett")]
    Tippett,
    #[serde(rename = "wstouffer")]
    WeightedStouffer,
    #[serde(rename = "cstouffer")]
    CorrectedStouffer,
    #[serde(rename = "wfisher")]
    WFisher,
    #[serde(rename = "goods")]
    Goods,
    #[serde(rename = "lancaster")]
    Lancaster,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Stouffer,
        Method::Fisher,
        Method::Pearson,
        Method::Tippett,
        Method::WeightedStouffer,
        Method::CorrectedStouffer,
        Method::WFisher,
        Method::Goods,
        Method::Lancaster,
    ];

    /// The unweighted combiners.
    pub const NAIVE: [Method; 4] = [
        Method::Stouffer,
        Method::Fisher,
        Method::Pearson,
        Method::Tippett,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::Stouffer => "stouffer",
            Method::Fisher => "fisher",
            Method::Pearson => "pearson",
            Method::Tippett => "tippett",
            Method::WeightedStouffer => "wstouffer",
            Method::CorrectedStouffer => "cstouffer",
            Method::WFisher => "wfisher",
            Method::Goods => "goods",
            Method::Lancaster => "lancaster",
        }
    }

    pub fn needs_shares(self) -> bool {
        !Self::NAIVE.contains(&self)
    }

    /// Whether the method also needs the total count `n`.
    pub fn needs_total(self) -> bool {
        matches!(self, Method::CorrectedStouffer | Method::Lancaster)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| config(format!("unknown combination method '{s}'")))
    }
}

/// Per-site evidence handed to a combiner.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceSet {
    p_values: Vec<f64>,
    shares: Option<Vec<f64>>,
    total_count: Option<u64>,
    rho: Option<f64>,
}

impl EvidenceSet {
    pub fn new(p_values: Vec<f64>) -> Result<Self> {
        if p_values.is_empty() {
            return Err(domain("evidence set needs at least one p-value"));
        }
        if let Some(bad) = p_values
            .iter()
            .find(|p| p.is_nan() || !(0.0..=1.0).contains(*p))
        {
            return Err(domain(format!("p-value {bad} is outside [0, 1]")));
        }
        Ok(Self {
            p_values,
            shares: None,
            total_count: None,
            rho: None,
        })
    }

    pub fn with_shares(mut self, shares: Vec<f64>) -> Result<Self> {
        validate_shares(&shares)?;
        if shares.len() != self.p_values.len() {
            return Err(config(format!(
                "{} shares for {} p-values",
                shares.len(),
                self.p_values.len()
            )));
        }
        self.shares = Some(shares);
        Ok(self)
    }

    pub fn with_equal_shares(self) -> Self {
        let n = self.p_values.len();
        let shares = vec![1.0 / n as f64; n];
        self.with_shares(shares).expect("equal shares are valid")
    }

    pub fn with_total_count(mut self, n: u64) -> Self {
        self.total_count = Some(n);
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(domain(format!("rho = {rho} must lie in (0, 1)")));
        }
        self.rho = Some(rho);
        Ok(self)
    }

    pub fn p_values(&self) -> &[f64] {
        &self.p_values
    }

    pub fn shares(&self) -> Option<&[f64]> {
        self.shares.as_deref()
    }

    pub fn total_count(&self) -> Option<u64> {
        self.total_count
    }

    pub fn rho(&self) -> Option<f64> {
        self.rho
    }

    pub fn len(&self) -> usize {
        self.p_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_values.is_empty()
    }

    fn require_shares(&self, method: Method) -> Result<&[f64]> {
        self.shares
            .as_deref()
            .ok_or_else(|| config(format!("method '{method}' needs site shares")))
    }
}

pub(crate) fn validate_shares(shares: &[f64]) -> Result<()> {
    if shares.is_empty() {
        return Err(domain("share vector is empty"));
    }
    if let Some(bad) = shares.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(domain(format!("share {bad} must be finite and >= 0")));
    }
    let total: f64 = shares.iter().sum();
    if (total - 1.0).abs() > SHARE_SUM_TOLERANCE {
        return Err(domain(format!("shares sum to {total}, expected 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CombinedResult {
    pub p: f64,
    pub statistic: f64,
    pub method: Method,
}

fn clamped(p: f64) -> f64 {
    p.clamp(P_CLAMP, 1.0 - P_CLAMP)
}

fn z_score(p: f64) -> f64 {
    normal_quantile(clamped(p)).expect("clamped into (0, 1)")
}

/// `Φ(Σ Φ⁻¹(p_i) / √N)`; the statistic is the unscaled sum.
pub fn stouffer(ev: &EvidenceSet) -> Result<CombinedResult> {
    let sum: f64 = ev.p_values.iter().map(|&p| z_score(p)).sum();
    Ok(CombinedResult {
        p: normal_cdf(sum / (ev.len() as f64).sqrt()),
        statistic: sum,
        method: Method::Stouffer,
    })
}

/// `-2 Σ ln p_i` against `χ²(2N)`.
pub fn fisher(ev: &EvidenceSet) -> Result<CombinedResult> {
    let statistic: f64 = ev
        .p_values
        .iter()
        .map(|&p| -2.0 * p.max(P_CLAMP).ln())
        .sum();
    Ok(CombinedResult {
        p: chi_square_sf(statistic, 2.0 * ev.len() as f64)?,
        statistic,
        method: Method::Fisher,
    })
}

/// Which tail of `χ²(2N)` Pearson's statistic is referred to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PearsonTail {
    /// Small p-values give a small statistic and a small combined p.
    #[default]
    Lower,
    /// Large p-values give a small combined p.
    Upper,
}

/// `-2 Σ ln(1 - p_i)` referred to the lower tail of `χ²(2N)`.
pub fn pearson(ev: &EvidenceSet) -> Result<CombinedResult> {
    pearson_with_tail(ev, PearsonTail::Lower)
}

pub fn pearson_with_tail(ev: &EvidenceSet, tail: PearsonTail) -> Result<CombinedResult> {
    let statistic: f64 = ev
        .p_values
        .iter()
        .map(|&p| -2.0 * (-p.min(1.0 - P_CLAMP)).ln_1p())
        .sum();
    let df = 2.0 * ev.len() as f64;
    let p = match tail {
        PearsonTail::Lower => chi_square_cdf(statistic, df)?,
        PearsonTail::Upper => chi_square_sf(statistic, df)?,
    };
    Ok(CombinedResult {
        p,
        statistic,
        method: Method::Pearson,
    })
}

/// `1 - (1 - min p_i)^N`.
pub fn tippett(ev: &EvidenceSet) -> Result<CombinedResult> {
    let min = ev.p_values.iter().cloned().fold(1.0, f64::min);
    let n = ev.len() as f64;
    Ok(CombinedResult {
        p: (-(n * (-min).ln_1p()).exp_m1()).clamp(0.0, 1.0),
        statistic: min,
        method: Method::Tippett,
    })
}

fn weighted_z_sum(p_values: &[f64], shares: &[f64]) -> f64 {
    p_values
        .iter()
        .zip(shares)
        .filter(|(_, &s)| s > 0.0)
        .map(|(&p, &s)| s.sqrt() * z_score(p))
        .sum()
}

/// `Φ(Σ √s_i Φ⁻¹(p_i))`.
pub fn weighted_stouffer(ev: &EvidenceSet) -> Result<CombinedResult> {
    let shares = ev.require_shares(Method::WeightedStouffer)?;
    let statistic = weighted_z_sum(&ev.p_values, shares);
    Ok(CombinedResult {
        p: normal_cdf(statistic),
        statistic,
        method: Method::WeightedStouffer,
    })
}

/// Shift that the site-level Yates corrections leave behind when
/// `N` corrected z-scores are recombined: `(1 - N) / (2√(ρ(1-ρ)n))`.
pub fn continuity_shift(sites: usize, rho: f64, n: u64) -> f64 {
    (1.0 - sites as f64) / (2.0 * (rho * (1.0 - rho) * n as f64).sqrt())
}

/// Weighted Stouffer plus the continuity shift for `N` sites.
pub fn corrected_stouffer(ev: &EvidenceSet) -> Result<CombinedResult> {
    let shares = ev.require_shares(Method::CorrectedStouffer)?;
    let n = ev
        .total_count
        .ok_or_else(|| config("method 'cstouffer' needs the total count n"))?;
    let rho = ev
        .rho
        .ok_or_else(|| config("method 'cstouffer' needs rho"))?;
    if n == 0 {
        return Err(config("method 'cstouffer' needs n >= 1"));
    }
    let statistic = weighted_z_sum(&ev.p_values, shares) + continuity_shift(ev.len(), rho, n);
    Ok(CombinedResult {
        p: normal_cdf(statistic),
        statistic,
        method: Method::CorrectedStouffer,
    })
}

/// Upper-tail quantile of `Gamma(shape, ½)` at `p`, 0 for a zero shape.
fn gamma_transform(p: f64, shape: f64) -> Result<f64> {
    if shape == 0.0 || p >= 1.0 {
        return Ok(0.0);
    }
    gamma_quantile_upper(p.max(P_CLAMP), shape, 0.5)
}

/// Weighted Fisher: `Σ F⁻¹_{Gam(s_i N, ½)}(1 - p_i)` against `χ²(2N)`.
///
/// Site `i` contributes a `χ²(2 s_i N)` variate, so the degrees of freedom
/// add up to the `2N` of the reference distribution and equal shares give
/// back Fisher's `-2 ln p_i`.
pub fn wfisher(ev: &EvidenceSet) -> Result<CombinedResult> {
    let shares = ev.require_shares(Method::WFisher)?;
    let n = ev.len() as f64;
    let statistic = ev
        .p_values
        .iter()
        .zip(shares)
        .map(|(&p, &s)| gamma_transform(p, s * n))
        .sum::<Result<f64>>()?;
    Ok(CombinedResult {
        p: chi_square_sf(statistic, 2.0 * n)?,
        statistic,
        method: Method::WFisher,
    })
}

/// Weighted Fisher with the gamma shape taken as `s_i N / 2`, as it is
/// sometimes printed. The transformed variates then carry `N` degrees of
/// freedom in total while still being referred to `χ²(2N)`, which makes the
/// result conservative under the null. Kept for comparison only.
pub fn wfisher_half_shape(ev: &EvidenceSet) -> Result<CombinedResult> {
    let shares = ev.require_shares(Method::WFisher)?;
    let n = ev.len() as f64;
    let statistic = ev
        .p_values
        .iter()
        .zip(shares)
        .map(|(&p, &s)| gamma_transform(p, 0.5 * s * n))
        .sum::<Result<f64>>()?;
    Ok(CombinedResult {
        p: chi_square_sf(statistic, 2.0 * n)?,
        statistic,
        method: Method::WFisher,
    })
}

/// Good's weighted statistic `-2 Σ w_i ln p_i` with `w_i = s_i N`, referred
/// to `χ²(2 Σ w_i) = χ²(2N)`. The true null law is a weighted sum of
/// exponentials; the chi-square reference is an approximation.
pub fn goods(ev: &EvidenceSet) -> Result<CombinedResult> {
    let shares = ev.require_shares(Method::Goods)?;
    let n = ev.len() as f64;
    let statistic: f64 = ev
        .p_values
        .iter()
        .zip(shares)
        .map(|(&p, &s)| -2.0 * s * n * p.max(P_CLAMP).ln())
        .sum();
    Ok(CombinedResult {
        p: chi_square_sf(statistic, 2.0 * n)?,
        statistic,
        method: Method::Goods,
    })
}

/// Lancaster: `Σ F⁻¹_{Gam(df_i/2, ½)}(1 - p_i)` against `χ²(Σ df_i)`.
pub fn lancaster(ev: &EvidenceSet, dfs: &[f64]) -> Result<CombinedResult> {
    if dfs.len() != ev.len() {
        return Err(config(format!(
            "{} degrees of freedom for {} p-values",
            dfs.len(),
            ev.len()
        )));
    }
    if let Some(bad) = dfs.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
        return Err(config(format!("degrees of freedom {bad} must be positive")));
    }
    let statistic = ev
        .p_values
        .iter()
        .zip(dfs)
        .map(|(&p, &df)| gamma_transform(p, 0.5 * df))
        .sum::<Result<f64>>()?;
    Ok(CombinedResult {
        p: chi_square_sf(statistic, dfs.iter().sum())?,
        statistic,
        method: Method::Lancaster,
    })
}

/// Lancaster with each site's degrees of freedom set to its count
/// `n_i = s_i n`. Sites with no counts carry no information and are dropped.
fn lancaster_by_counts(ev: &EvidenceSet) -> Result<CombinedResult> {
    let shares = ev.require_shares(Method::Lancaster)?;
    let n = ev
        .total_count
        .ok_or_else(|| config("method 'lancaster' needs the total count n"))?;
    let (p, dfs): (Vec<f64>, Vec<f64>) = ev
        .p_values
        .iter()
        .zip(shares)
        .map(|(&p, &s)| (p, s * n as f64))
        .filter(|&(_, df)| df > 0.0)
        .unzip();
    if p.is_empty() {
        return Ok(CombinedResult {
            p: 1.0,
            statistic: 0.0,
            method: Method::Lancaster,
        });
    }
    lancaster(&EvidenceSet::new(p)?, &dfs)
}

/// Dispatches to the combiner named by `method`. Lancaster uses per-site
/// counts `s_i n` as degrees of freedom.
pub fn combine(method: Method, ev: &EvidenceSet) -> Result<CombinedResult> {
    match method {
        Method::Stouffer => stouffer(ev),
        Method::Fisher => fisher(ev),
        Method::Pearson => pearson(ev),
        Method::Tippett => tippett(ev),
        Method::WeightedStouffer => weighted_stouffer(ev),
        Method::CorrectedStouffer => corrected_stouffer(ev),
        Method::WFisher => wfisher(ev),
        Method::Goods => goods(ev),
        Method::Lancaster => lancaster_by_counts(ev),
    }
}
