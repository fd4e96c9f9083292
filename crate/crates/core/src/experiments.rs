//! Monte Carlo experiments: calibrated power curves and semi-synthetic
//! recall/F1 sweeps.
//!
//! Every replicate draws from its own derived seed and results are reduced in
//! replicate order, so outputs do not depend on thread scheduling.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combine::{combine, EvidenceSet, Method};
use crate::error::{config, Error, Result};
use crate::evaluation::{
    alarms_from_growth, alarms_from_pvalues, log_thresholds, match_alarms, pr_curve, recall_at_fdr,
    AlarmSeries, MatchWindow,
};
use crate::federation::{
    run_federation_methods, FederatedPoint, FederationConfig, ShareSource, SiteNode,
};
use crate::rng;
use crate::semisynth::{
    draw_poisson, moving_average, normalized_entropy, poisson_sample, scale_magnitude,
    shares_for_entropy, split_multinomial, CountSeries, ShareVector, WaveShape,
};
use crate::surge_test::{p_value_from_totals, SurgeHypothesis};

/// A detector compared in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Arm {
    /// Exact test on the pooled counts.
    Centralized,
    /// Exact test on the site with the largest share only.
    LargestSite,
    Combined(Method),
}

impl Arm {
    /// Centralized, largest site, then every combiner.
    pub fn all() -> Vec<Arm> {
        let mut v = vec![Arm::Centralized, Arm::LargestSite];
        v.extend(Method::ALL.iter().map(|&m| Arm::Combined(m)));
        v
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arm::Centralized => f.write_str("centralized"),
            Arm::LargestSite => f.write_str("largest-site"),
            Arm::Combined(m) => f.write_str(m.id()),
        }
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centralized" => Ok(Arm::Centralized),
            "largest-site" => Ok(Arm::LargestSite),
            other => other.parse().map(Arm::Combined),
        }
    }
}

impl From<Arm> for String {
    fn from(a: Arm) -> Self {
        a.to_string()
    }
}

impl TryFrom<String> for Arm {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

fn methods_of(arms: &[Arm]) -> Vec<Method> {
    arms.iter()
        .filter_map(|a| match a {
            Arm::Combined(m) => Some(*m),
            _ => None,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Power curves

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerCurveConfig {
    pub hypothesis: SurgeHypothesis,
    /// Expected window total `n`, held fixed across the grid.
    pub total_count: f64,
    pub shares: ShareVector,
    pub theta_grid: Vec<f64>,
    pub arms: Vec<Arm>,
    pub replicates: usize,
    /// Allowed gap between the calibrated null rejection rate and alpha.
    pub calibration_tolerance: f64,
}

impl Default for PowerCurveConfig {
    fn default() -> Self {
        Self {
            hypothesis: SurgeHypothesis::new(0.3, 4, 0.05).expect("valid defaults"),
            total_count: 200.0,
            shares: ShareVector::equal(2).expect("two sites"),
            theta_grid: (3..=10).map(|i| i as f64 / 10.0).collect(),
            arms: Arm::all(),
            replicates: 100_000,
            calibration_tolerance: 0.002,
        }
    }
}

impl PowerCurveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.total_count.is_finite() && self.total_count > 0.0) {
            return Err(config("total_count must be positive"));
        }
        if self.replicates == 0 {
            return Err(config("replicates must be positive"));
        }
        if self.arms.is_empty() || self.theta_grid.is_empty() {
            return Err(config("need at least one arm and one grid point"));
        }
        if let Some(bad) = self
            .theta_grid
            .iter()
            .find(|t| !(t.is_finite() && **t >= 0.0))
        {
            return Err(config(format!("grid value {bad} must be >= 0")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRow {
    pub method: Arm,
    pub theta_alt: f64,
    pub power: f64,
    /// Calibrated rejection threshold on the p-value.
    pub threshold: f64,
}

/// Per-site `(c_i, n_i)` for one window. Site `i` has baseline rate
/// `λ_i = s_i n̄ / (l + 1 + θ')` per period and test rate `λ_i (1 + θ')`,
/// so the expected window total is `n̄` at every `θ'`.
pub fn draw_site_windows<R: Rng + ?Sized>(
    hyp: &SurgeHypothesis,
    total_count: f64,
    shares: &ShareVector,
    theta_alt: f64,
    rng: &mut R,
) -> Result<Vec<(u64, u64)>> {
    let l = hyp.baseline_len() as f64;
    shares
        .as_slice()
        .iter()
        .map(|&s| {
            let base = s * total_count / (l + 1.0 + theta_alt);
            let c = draw_poisson(l * base, rng)?;
            let k = draw_poisson(base * (1.0 + theta_alt), rng)?;
            Ok((c, c + k))
        })
        .collect()
}

/// p-value of each arm on one set of site windows. Weighted combiners get
/// the true window shares `n_i / n`.
pub fn arm_p_values(
    arms: &[Arm],
    windows: &[(u64, u64)],
    largest: usize,
    hyp: &SurgeHypothesis,
) -> Result<Vec<f64>> {
    let site_p = windows
        .iter()
        .map(|&(c, n)| p_value_from_totals(c, n, hyp))
        .collect::<Result<Vec<_>>>()?;
    let (c, n) = windows
        .iter()
        .fold((0, 0), |(a, b), &(c, n)| (a + c, b + n));
    let totals: Vec<u64> = windows.iter().map(|w| w.1).collect();
    let ev = EvidenceSet::new(site_p.clone())?
        .with_shares(ShareVector::from_totals(&totals)?.into())?
        .with_total_count(n.max(1))
        .with_rho(hyp.rho())?;
    arms.iter()
        .map(|arm| match arm {
            Arm::Centralized => p_value_from_totals(c, n, hyp),
            Arm::LargestSite => Ok(site_p[largest]),
            Arm::Combined(m) => Ok(combine(*m, &ev)?.p),
        })
        .collect()
}

/// Threshold `τ` whose rejection rate `#{p < τ} / R` on `null_p` is within
/// `tol` of `alpha`, found by bisection. When an atom of the null
/// distribution straddles the band, the largest threshold with rate at most
/// `alpha + tol` is used.
pub fn calibrate_threshold(null_p: &[f64], alpha: f64, tol: f64) -> f64 {
    let mut sorted = null_p.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rate = |tau: f64| sorted.partition_point(|&p| p < tau) as f64 / sorted.len() as f64;
    let (mut lo, mut hi) = (0.0, 1.0 + f64::EPSILON);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r = rate(mid);
        if (r - alpha).abs() <= tol {
            return mid;
        }
        if r < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if rate(hi) <= alpha + tol {
        hi
    } else {
        lo
    }
}

const CALIBRATION_STREAM: u64 = u64::MAX;

fn simulate_arms(cfg: &PowerCurveConfig, theta_alt: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    let largest = cfg.shares.largest();
    let rows = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, r as u64);
            let w = draw_site_windows(
                &cfg.hypothesis,
                cfg.total_count,
                &cfg.shares,
                theta_alt,
                &mut rng,
            )?;
            arm_p_values(&cfg.arms, &w, largest, &cfg.hypothesis)
        })
        .collect::<Result<Vec<_>>>()?;
    // Transpose to one column per arm.
    Ok((0..cfg.arms.len())
        .map(|a| rows.iter().map(|row| row[a]).collect())
        .collect())
}

/// Monte Carlo power of every arm over the grid, each arm's threshold
/// calibrated on an independent null sample at `θ' = θ`. Rows are sorted by
/// `(method, θ')`.
pub fn power_curve(cfg: &PowerCurveConfig, seed: u64) -> Result<Vec<PowerRow>> {
    cfg.validate()?;
    let alpha = cfg.hypothesis.alpha();
    let null = simulate_arms(
        cfg,
        cfg.hypothesis.theta(),
        rng::sub_seed(seed, CALIBRATION_STREAM),
    )?;
    let thresholds: Vec<f64> = null
        .iter()
        .map(|p| calibrate_threshold(p, alpha, cfg.calibration_tolerance))
        .collect();
    let mut rows = Vec::with_capacity(cfg.arms.len() * cfg.theta_grid.len());
    for (g, &theta_alt) in cfg.theta_grid.iter().enumerate() {
        let sims = simulate_arms(cfg, theta_alt, rng::sub_seed(seed, g as u64))?;
        for ((arm, p), &tau) in cfg.arms.iter().zip(&sims).zip(&thresholds) {
            let power = p.iter().filter(|&&x| x < tau).count() as f64 / p.len() as f64;
            rows.push(PowerRow {
                method: *arm,
                theta_alt,
                power,
                threshold: tau,
            });
        }
    }
    rows.sort_by(|a, b| {
        a.method
            .to_string()
            .cmp(&b.method.to_string())
            .then(a.theta_alt.total_cmp(&b.theta_alt))
    });
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Semi-synthetic sweeps

/// The dimension varied across settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Sweep {
    /// Equal shares over each site count.
    Sites { sites: Vec<usize> },
    /// Prevalence multipliers at fixed shares.
    Magnitude {
        multipliers: Vec<f64>,
        shares: ShareVector,
    },
    /// One dominant site, remaining shares equal, at each entropy target.
    Entropy { targets: Vec<f64>, sites: usize },
    /// Explicit share vectors.
    Shares { shares: Vec<ShareVector> },
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep::Sites {
            sites: vec![2, 5, 10, 20],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Setting {
    pub label: String,
    pub multiplier: f64,
    pub shares: ShareVector,
}

fn share_label(s: &ShareVector) -> String {
    s.as_slice()
        .iter()
        .map(|x| format!("{x}"))
        .collect::<Vec<_>>()
        .join("|")
}

impl Sweep {
    pub fn settings(&self) -> Result<Vec<Setting>> {
        match self {
            Sweep::Sites { sites } => sites
                .iter()
                .map(|&n| {
                    Ok(Setting {
                        label: format!("sites={n}"),
                        multiplier: 1.0,
                        shares: ShareVector::equal(n)?,
                    })
                })
                .collect(),
            Sweep::Magnitude {
                multipliers,
                shares,
            } => Ok(multipliers
                .iter()
                .map(|&m| Setting {
                    label: format!("magnitude={m}"),
                    multiplier: m,
                    shares: shares.clone(),
                })
                .collect()),
            Sweep::Entropy { targets, sites } => targets
                .iter()
                .map(|&e| {
                    let shares = shares_for_entropy(*sites, e)?;
                    Ok(Setting {
                        label: format!("entropy={e}"),
                        multiplier: 1.0,
                        shares,
                    })
                })
                .collect(),
            Sweep::Shares { shares } => Ok(shares
                .iter()
                .map(|s| Setting {
                    label: format!("shares={}", share_label(s)),
                    multiplier: 1.0,
                    shares: s.clone(),
                })
                .collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemisynthConfig {
    pub hypothesis: SurgeHypothesis,
    pub shape: WaveShape,
    /// Moving-average window, in periods, applied to the observed series.
    pub smoothing_window: usize,
    /// Multiplier applied to the smoothed prevalence before any sweep.
    pub magnitude: f64,
    pub sweep: Sweep,
    pub arms: Vec<Arm>,
    pub replicates: usize,
    pub thresholds: usize,
    pub min_threshold: f64,
    pub max_threshold: f64,
    pub fdr: f64,
    pub share_source: ShareSource,
    pub reporting_cycle: usize,
    pub lag: usize,
    pub window: Option<MatchWindow>,
}

impl Default for SemisynthConfig {
    fn default() -> Self {
        Self {
            hypothesis: SurgeHypothesis::new(0.3, 4, 0.05).expect("valid defaults"),
            shape: WaveShape::default(),
            smoothing_window: 3,
            magnitude: 1.0,
            sweep: Sweep::default(),
            arms: Arm::all(),
            replicates: 50,
            thresholds: 50,
            min_threshold: 1e-12,
            max_threshold: 0.5,
            fdr: 0.1,
            share_source: ShareSource::Known,
            reporting_cycle: 1,
            lag: 0,
            window: None,
        }
    }
}

impl SemisynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 || self.thresholds == 0 {
            return Err(config("replicates and thresholds must be positive"));
        }
        if !(self.min_threshold > 0.0
            && self.min_threshold < self.max_threshold
            && self.max_threshold < 1.0)
        {
            return Err(config("thresholds must satisfy 0 < min < max < 1"));
        }
        if self.arms.is_empty() {
            return Err(config("need at least one arm"));
        }
        if self.smoothing_window == 0 {
            return Err(config("smoothing_window must be positive"));
        }
        Ok(())
    }

    fn federation(&self, method: Method) -> FederationConfig {
        FederationConfig::new(self.hypothesis, method, self.share_source)
            .with_schedule(self.reporting_cycle, self.lag)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemisynthRow {
    pub setting: String,
    pub method: Arm,
    pub entropy: Option<f64>,
    pub recall_at_fdr: f64,
    pub f1: f64,
}

/// Exact p-value series of one site, 1 for periods without full history.
pub fn site_p_series(series: &CountSeries, hyp: &SurgeHypothesis) -> Result<Vec<f64>> {
    let node = SiteNode::new(series.clone());
    let mut out = vec![1.0; series.len()];
    for (t, slot) in out.iter_mut().enumerate().skip(hyp.baseline_len()) {
        *slot = node.compute_report(t, hyp)?.p.get();
    }
    Ok(out)
}

/// Expands federated points into a per-period series, 1 where absent.
pub fn p_series_by_period(points: &[FederatedPoint], len: usize) -> Vec<f64> {
    let mut out = vec![1.0; len];
    for p in points {
        if p.period < len {
            out[p.period] = p.p;
        }
    }
    out
}

/// p-series of every arm for one set of site series.
pub fn arm_p_series(
    arms: &[Arm],
    sites: &[CountSeries],
    shares: &ShareVector,
    fed: &FederationConfig,
) -> Result<Vec<Vec<f64>>> {
    let len = sites
        .first()
        .map(|s| s.len())
        .ok_or_else(|| config("no sites"))?;
    let methods = methods_of(arms);
    let nodes: Vec<SiteNode> = sites.iter().cloned().map(SiteNode::new).collect();
    let combined = if methods.is_empty() {
        Vec::new()
    } else {
        run_federation_methods(&nodes, fed, &methods)?
    };
    let hyp = &fed.hypothesis;
    let mut combined = combined.into_iter();
    arms.iter()
        .map(|arm| match arm {
            Arm::Centralized => site_p_series(&CountSeries::sum_of("all", sites)?, hyp),
            Arm::LargestSite => site_p_series(&sites[shares.largest()], hyp),
            Arm::Combined(_) => Ok(p_series_by_period(
                &combined.next().expect("one series per method"),
                len,
            )),
        })
        .collect()
}

struct Scores {
    recall: Vec<f64>,
    f1: Vec<f64>,
}

fn score_replicate(
    cfg: &SemisynthConfig,
    prevalence: &crate::semisynth::PrevalenceSeries,
    truth: &AlarmSeries,
    setting: &Setting,
    window: MatchWindow,
    thresholds: &[f64],
    seed: u64,
) -> Result<Scores> {
    let counts = poisson_sample(prevalence, rng::sub_seed(seed, 0))?;
    let sites = split_multinomial(&counts, &setting.shares, rng::sub_seed(seed, 1));
    let method = methods_of(&cfg.arms)
        .first()
        .copied()
        .unwrap_or(Method::Fisher);
    let series = arm_p_series(&cfg.arms, &sites, &setting.shares, &cfg.federation(method))?;
    let central = site_p_series(&counts, &cfg.hypothesis)?;
    let central_alarms = alarms_from_pvalues(&central, cfg.hypothesis.alpha());
    let mut recall = Vec::with_capacity(series.len());
    let mut f1 = Vec::with_capacity(series.len());
    for p in &series {
        let curve = pr_curve(p, truth, window, thresholds)?;
        recall.push(recall_at_fdr(&curve, cfg.fdr)?);
        let m = match_alarms(
            &central_alarms,
            &alarms_from_pvalues(p, cfg.hypothesis.alpha()),
            window,
        );
        f1.push(crate::evaluation::f1(m.precision(), m.recall()));
    }
    Ok(Scores { recall, f1 })
}

/// Runs smooth → sample → split → federate → evaluate for every setting of
/// the sweep. Recall is measured at the configured FDR against growth
/// alarms on the prevalence; F1 at alpha against alarms of the centralized
/// exact test on the same draw. Scores are averaged over replicates.
pub fn semisynth(
    cfg: &SemisynthConfig,
    observed: &CountSeries,
    seed: u64,
) -> Result<Vec<SemisynthRow>> {
    cfg.validate()?;
    for m in methods_of(&cfg.arms) {
        cfg.federation(m).validate()?;
    }
    let smoothed = moving_average(observed, cfg.smoothing_window)?;
    let base = scale_magnitude(&smoothed, cfg.magnitude)?;
    let truth = alarms_from_growth(&base, cfg.hypothesis.theta(), cfg.hypothesis.baseline_len())?;
    let window = cfg
        .window
        .unwrap_or_else(|| MatchWindow::for_cadence(observed.cadence()));
    let thresholds = log_thresholds(cfg.min_threshold, cfg.max_threshold, cfg.thresholds);

    let mut rows = Vec::new();
    for (si, setting) in cfg.sweep.settings()?.iter().enumerate() {
        let prevalence = scale_magnitude(&base, setting.multiplier)?;
        let scores = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| {
                let s = rng::sub_seed_path(seed, &[si as u64, r as u64]);
                score_replicate(cfg, &prevalence, &truth, setting, window, &thresholds, s)
            })
            .collect::<Result<Vec<_>>>()?;
        let entropy = normalized_entropy(&setting.shares).ok();
        for (a, arm) in cfg.arms.iter().enumerate() {
            let reps = scores.len() as f64;
            rows.push(SemisynthRow {
                setting: setting.label.clone(),
                method: *arm,
                entropy,
                recall_at_fdr: scores.iter().map(|s| s.recall[a]).sum::<f64>() / reps,
                f1: scores.iter().map(|s| s.f1[a]).sum::<f64>() / reps,
            });
        }
    }
    Ok(rows)
}
