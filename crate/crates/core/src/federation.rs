//! In-process simulation of the federated protocol.
//!
//! A [`SiteNode`] owns its count series and only ever emits two message
//! types: a [`PValueReport`] per period and a [`CoarseReport`] per reporting
//! cycle. The [`Aggregator`] sees nothing else.

use serde::{Deserialize, Serialize};

use crate::combine::{combine, EvidenceSet, Method};
use crate::error::{config, Error, Result};
use crate::numerics::Probability;
use crate::semisynth::{CountSeries, ShareVector};
use crate::surge_test::{p_value_from_totals, SurgeHypothesis};

/// Per-period p-value released by a site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueReport {
    pub site_id: String,
    pub period: usize,
    pub p: Probability,
}

/// Total count of one reporting cycle, released `lag` periods after the
/// cycle ends. Cycle `j` covers periods `jC ..= (j+1)C - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseReport {
    pub site_id: String,
    pub cycle: usize,
    pub total: u64,
}

/// Where the aggregator's site shares come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShareSource {
    /// True window totals `n_i / n`, supplied by the simulation harness.
    Known,
    /// Ratio of the latest released coarse totals.
    #[default]
    Estimated,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    pub hypothesis: SurgeHypothesis,
    pub method: Method,
    #[serde(default)]
    pub share_source: ShareSource,
    #[serde(default = "default_cycle")]
    pub reporting_cycle: usize,
    #[serde(default)]
    pub lag: usize,
}

fn default_cycle() -> usize {
    1
}

impl FederationConfig {
    pub fn new(hypothesis: SurgeHypothesis, method: Method, share_source: ShareSource) -> Self {
        Self {
            hypothesis,
            method,
            share_source,
            reporting_cycle: 1,
            lag: 0,
        }
    }

    pub fn with_schedule(mut self, reporting_cycle: usize, lag: usize) -> Self {
        self.reporting_cycle = reporting_cycle;
        self.lag = lag;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.reporting_cycle == 0 {
            return Err(config("reporting cycle must be at least one period"));
        }
        self.check_method(self.method)
    }

    fn check_method(&self, method: Method) -> Result<()> {
        if method.needs_shares() && self.share_source == ShareSource::None {
            return Err(config(format!(
                "method '{method}' needs shares but share_source is 'none'"
            )));
        }
        Ok(())
    }
}

/// A data custodian. The count series never leaves the node.
#[derive(Debug, Clone)]
pub struct SiteNode {
    site_id: String,
    series: CountSeries,
}

impl SiteNode {
    pub fn new(series: CountSeries) -> Self {
        Self {
            site_id: series.site_id().to_string(),
            series,
        }
    }

    pub fn site_id(&self) -> &str {
        &self.site_id
    }

    pub fn num_periods(&self) -> usize {
        self.series.len()
    }

    /// `(c, n)` of the window ending at `t`.
    fn window_totals(&self, t: usize, hyp: &SurgeHypothesis) -> Result<(u64, u64)> {
        let l = hyp.baseline_len();
        if t < l {
            return Err(Error::InsufficientHistory {
                period: t,
                available: t,
                needed: l,
            });
        }
        let counts = self.series.counts();
        if t >= counts.len() {
            return Err(config(format!(
                "period {t} is past the end of site '{}' ({} periods)",
                self.site_id,
                counts.len()
            )));
        }
        let c: u64 = counts[t - l..t].iter().sum();
        Ok((c, c + counts[t]))
    }

    /// Exact p-value for a surge at `t` against the preceding `l` periods.
    pub fn compute_report(&self, t: usize, hyp: &SurgeHypothesis) -> Result<PValueReport> {
        let (c, n) = self.window_totals(t, hyp)?;
        Ok(PValueReport {
            site_id: self.site_id.clone(),
            period: t,
            p: Probability::clamped(p_value_from_totals(c, n, hyp)?)?,
        })
    }

    /// Total over cycle `cycle`; `None` if the series ends inside it.
    pub fn coarse_report(&self, cycle: usize, reporting_cycle: usize) -> Option<CoarseReport> {
        let start = cycle * reporting_cycle;
        let end = start + reporting_cycle;
        let counts = self.series.counts();
        (end <= counts.len()).then(|| CoarseReport {
            site_id: self.site_id.clone(),
            cycle,
            total: counts[start..end].iter().sum(),
        })
    }
}

/// Index of the latest cycle whose report is public at period `t`.
pub fn latest_released_cycle(t: usize, reporting_cycle: usize, lag: usize) -> Option<usize> {
    // Cycle j is released at (j + 1) C - 1 + lag.
    (t + 1)
        .checked_sub(lag)
        .map(|x| x / reporting_cycle)
        .and_then(|j| j.checked_sub(1))
}

/// Shares from the most recent released cycle, uniform if nothing usable
/// has been released by `t`.
pub fn estimate_shares(
    site_ids: &[String],
    coarse: &[CoarseReport],
    t: usize,
    reporting_cycle: usize,
    lag: usize,
) -> Result<ShareVector> {
    let uniform = || ShareVector::equal(site_ids.len());
    let Some(cycle) = latest_released_cycle(t, reporting_cycle, lag) else {
        return uniform();
    };
    let totals: Option<Vec<u64>> = site_ids
        .iter()
        .map(|id| {
            coarse
                .iter()
                .find(|r| r.cycle == cycle && &r.site_id == id)
                .map(|r| r.total)
        })
        .collect();
    match totals {
        Some(totals) => ShareVector::from_totals(&totals),
        None => uniform(),
    }
}

/// Combined p-value of one period.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FederatedPoint {
    pub period: usize,
    pub p: f64,
    /// Shares handed to the combiner; empty for unweighted methods.
    pub shares: Vec<f64>,
}

/// Combines site reports. It has no path to any site's counts.
#[derive(Debug, Clone)]
pub struct Aggregator {
    cfg: FederationConfig,
    site_ids: Vec<String>,
}

/// What the aggregator knows about one period besides the p-values.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareEvidence {
    pub shares: ShareVector,
    /// Total count `n` of the window, exact or estimated.
    pub total: u64,
}

impl Aggregator {
    pub fn new(cfg: FederationConfig, site_ids: Vec<String>) -> Result<Self> {
        cfg.validate()?;
        if site_ids.is_empty() {
            return Err(config("federation needs at least one site"));
        }
        Ok(Self { cfg, site_ids })
    }

    pub fn site_ids(&self) -> &[String] {
        &self.site_ids
    }

    /// Shares and total estimated from coarse reports. The window total is
    /// the latest cycle's per-period average scaled to `l + 1` periods.
    pub fn estimate(&self, coarse: &[CoarseReport], t: usize) -> Result<ShareEvidence> {
        let c = self.cfg.reporting_cycle;
        let shares = estimate_shares(&self.site_ids, coarse, t, c, self.cfg.lag)?;
        let periods = self.cfg.hypothesis.baseline_len() as f64 + 1.0;
        let total = latest_released_cycle(t, c, self.cfg.lag)
            .map(|j| {
                let sum: u64 = coarse
                    .iter()
                    .filter(|r| r.cycle == j)
                    .map(|r| r.total)
                    .sum();
                (sum as f64 / c as f64 * periods).round() as u64
            })
            .unwrap_or(0);
        Ok(ShareEvidence { shares, total })
    }

    /// Combines the reports of period `t` with `method`. Reports must come
    /// in site order.
    pub fn combine_period(
        &self,
        method: Method,
        t: usize,
        reports: &[PValueReport],
        shares: Option<&ShareEvidence>,
    ) -> Result<FederatedPoint> {
        if reports.len() != self.site_ids.len()
            || reports
                .iter()
                .zip(&self.site_ids)
                .any(|(r, id)| &r.site_id != id || r.period != t)
        {
            return Err(config(format!(
                "reports for period {t} do not match the site roster"
            )));
        }
        let p_values = reports.iter().map(|r| r.p.get()).collect();
        let mut ev = EvidenceSet::new(p_values)?;
        let mut used = Vec::new();
        if method.needs_shares() {
            let se = shares.ok_or_else(|| config(format!("method '{method}' needs shares")))?;
            used = se.shares.as_slice().to_vec();
            ev = ev
                .with_shares(used.clone())?
                .with_total_count(se.total.max(1))
                .with_rho(self.cfg.hypothesis.rho())?;
        }
        Ok(FederatedPoint {
            period: t,
            p: combine(method, &ev)?.p,
            shares: used,
        })
    }
}

fn check_roster(sites: &[SiteNode]) -> Result<()> {
    let first = sites
        .first()
        .ok_or_else(|| config("federation needs at least one site"))?;
    for s in &sites[1..] {
        if !s.series.is_aligned_with(&first.series) {
            return Err(config(format!(
                "site '{}' is not aligned with site '{}'",
                s.site_id, first.site_id
            )));
        }
        if s.site_id == first.site_id || sites.iter().filter(|o| o.site_id == s.site_id).count() > 1
        {
            return Err(config(format!("duplicate site id '{}'", s.site_id)));
        }
    }
    Ok(())
}

/// Per-period site reports, one row per testable period `t >= l`.
pub fn collect_reports(
    sites: &[SiteNode],
    hyp: &SurgeHypothesis,
) -> Result<Vec<Vec<PValueReport>>> {
    check_roster(sites)?;
    let len = sites[0].num_periods();
    (hyp.baseline_len()..len)
        .map(|t| sites.iter().map(|s| s.compute_report(t, hyp)).collect())
        .collect()
}

/// Runs the protocol once and combines with each of `methods`, returning
/// one series per method in the same order.
pub fn run_federation_methods(
    sites: &[SiteNode],
    cfg: &FederationConfig,
    methods: &[Method],
) -> Result<Vec<Vec<FederatedPoint>>> {
    cfg.validate()?;
    for &m in methods {
        cfg.check_method(m)?;
    }
    let hyp = &cfg.hypothesis;
    let reports = collect_reports(sites, hyp)?;
    let site_ids: Vec<String> = sites.iter().map(|s| s.site_id.clone()).collect();
    let aggregator = Aggregator::new(cfg.clone(), site_ids)?;

    let len = sites[0].num_periods();
    let n_cycles = len / cfg.reporting_cycle;
    let coarse: Vec<CoarseReport> = (0..n_cycles)
        .flat_map(|j| {
            sites
                .iter()
                .filter_map(move |s| s.coarse_report(j, cfg.reporting_cycle))
        })
        .collect();

    let mut out = vec![Vec::with_capacity(reports.len()); methods.len()];
    for period_reports in &reports {
        let t = period_reports[0].period;
        let shares = match cfg.share_source {
            ShareSource::Known => {
                // Harness oracle: true window totals, not visible to sites'
                // peers in a real deployment.
                let totals = sites
                    .iter()
                    .map(|s| s.window_totals(t, hyp).map(|(_, n)| n))
                    .collect::<Result<Vec<_>>>()?;
                Some(ShareEvidence {
                    shares: ShareVector::from_totals(&totals)?,
                    total: totals.iter().sum(),
                })
            }
            ShareSource::Estimated => {
                let released: Vec<CoarseReport> =
                    match latest_released_cycle(t, cfg.reporting_cycle, cfg.lag) {
                        Some(j) => coarse.iter().filter(|r| r.cycle == j).cloned().collect(),
                        None => Vec::new(),
                    };
                Some(aggregator.estimate(&released, t)?)
            }
            ShareSource::None => None,
        };
        for (series, &m) in out.iter_mut().zip(methods) {
            series.push(aggregator.combine_period(m, t, period_reports, shares.as_ref())?);
        }
    }
    Ok(out)
}

/// Runs the protocol with the configured method.
pub fn run_federation(sites: &[SiteNode], cfg: &FederationConfig) -> Result<Vec<FederatedPoint>> {
    Ok(run_federation_methods(sites, cfg, &[cfg.method])?.remove(0))
}
