use std::io::Write;
use std::path::PathBuf;

use chrono::NaiveDate;
use clap::Args;
use fedsurv_core::evaluation::{alarms_from_pvalues, f1, match_alarms};
use fedsurv_core::experiments::{p_series_by_period, site_p_series};
use fedsurv_core::federation::{run_federation, FederatedPoint};
use fedsurv_core::rng::sub_seed;
use fedsurv_core::semisynth::{
    builtin_wave_series, moving_average, poisson_sample, scale_magnitude, split_multinomial,
    WaveShape,
};
use fedsurv_core::{
    CountSeries, FederationConfig, MatchWindow, Method, ShareSource, ShareVector, SiteNode,
    SurgeHypothesis,
};
use serde::{Deserialize, Serialize};

use super::HypothesisOptions;
use crate::error::{CliError, Result};
use crate::io::{alarms_path, csv_output, finish, load_config, num, output, read_counts};
use crate::Common;

#[derive(Debug, Args)]
pub struct FederationArgs {
    #[command(flatten)]
    common: Common,

    /// Per-site counts (site_id,date,count). Without it, sites are
    /// simulated from the built-in fixture.
    #[arg(long)]
    input: Option<PathBuf>,

    /// Combination method (default wstouffer).
    #[arg(long)]
    method: Option<Method>,

    /// known, estimated or none.
    #[arg(long)]
    share_source: Option<String>,

    /// Periods per coarse share report (estimated shares).
    #[arg(long)]
    reporting_cycle: Option<usize>,

    /// Periods between the end of a cycle and its release.
    #[arg(long)]
    lag: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FederationRunConfig {
    hypothesis: HypothesisOptions,
    method: Method,
    share_source: ShareSource,
    reporting_cycle: usize,
    lag: usize,
    input: Option<PathBuf>,
    /// Site split for simulated data.
    shares: ShareVector,
    shape: WaveShape,
    smoothing_window: usize,
    magnitude: f64,
    window: Option<MatchWindow>,
}

impl Default for FederationRunConfig {
    fn default() -> Self {
        Self {
            hypothesis: HypothesisOptions::default(),
            method: Method::WeightedStouffer,
            share_source: ShareSource::Known,
            reporting_cycle: 1,
            lag: 0,
            input: None,
            shares: ShareVector::equal(5).expect("five sites"),
            shape: WaveShape::default(),
            smoothing_window: 3,
            magnitude: 1.0,
            window: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct PointOut {
    period: usize,
    date: NaiveDate,
    p: f64,
    shares: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct Summary {
    periods: usize,
    alarms: usize,
    centralized_alarms: usize,
    precision: f64,
    recall: f64,
    f1: f64,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    hypothesis: SurgeHypothesis,
    method: Method,
    share_source: ShareSource,
    reporting_cycle: usize,
    lag: usize,
    sites: Vec<&'a str>,
    points: Vec<PointOut>,
    alarms: Vec<usize>,
    summary: Summary,
}

fn simulate_sites(cfg: &FederationRunConfig, seed: u64) -> Result<Vec<CountSeries>> {
    let observed = builtin_wave_series(&cfg.shape);
    let prevalence = scale_magnitude(
        &moving_average(&observed, cfg.smoothing_window)?,
        cfg.magnitude,
    )?;
    let counts = poisson_sample(&prevalence, sub_seed(seed, 0))?;
    Ok(split_multinomial(&counts, &cfg.shares, sub_seed(seed, 1)))
}

/// Writes the JSON report to `--out` (or stdout) and, with `--out`, the
/// per-period `period,date,p,alarm` table next to it.
pub fn run(args: FederationArgs) -> Result<()> {
    let mut cfg: FederationRunConfig = load_config(args.common.config.as_deref(), "federation")?;
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if let Some(s) = &args.share_source {
        cfg.share_source =
            serde_json::from_value(serde_json::Value::String(s.clone())).map_err(|_| {
                CliError::Usage(format!(
                    "unknown share source '{s}' (known, estimated, none)"
                ))
            })?;
    }
    cfg.reporting_cycle = args.reporting_cycle.unwrap_or(cfg.reporting_cycle);
    cfg.lag = args.lag.unwrap_or(cfg.lag);
    let hyp = cfg.hypothesis.build()?;
    let fed = FederationConfig::new(hyp, cfg.method, cfg.share_source)
        .with_schedule(cfg.reporting_cycle, cfg.lag);
    fed.validate()?;

    let series = match args.input.as_ref().or(cfg.input.as_ref()) {
        Some(path) => read_counts(path, None)?,
        None => simulate_sites(&cfg, args.common.seed.unwrap_or(0))?,
    };
    let nodes: Vec<SiteNode> = series.iter().cloned().map(SiteNode::new).collect();
    let points: Vec<FederatedPoint> = run_federation(&nodes, &fed)?;

    let len = series[0].len();
    let dates = series[0].timestamps();
    let p = p_series_by_period(&points, len);
    let alarms = alarms_from_pvalues(&p, hyp.alpha());
    let central = site_p_series(&CountSeries::sum_of("all", &series)?, &hyp)?;
    let central_alarms = alarms_from_pvalues(&central, hyp.alpha());
    let window = cfg
        .window
        .unwrap_or_else(|| MatchWindow::for_cadence(series[0].cadence()));
    let m = match_alarms(&central_alarms, &alarms, window);

    let report = Report {
        hypothesis: hyp,
        method: cfg.method,
        share_source: cfg.share_source,
        reporting_cycle: cfg.reporting_cycle,
        lag: cfg.lag,
        sites: series.iter().map(|s| s.site_id()).collect(),
        points: points
            .iter()
            .map(|pt| PointOut {
                period: pt.period,
                date: dates[pt.period],
                p: pt.p,
                shares: pt.shares.clone(),
            })
            .collect(),
        alarms: alarms.periods().to_vec(),
        summary: Summary {
            periods: points.len(),
            alarms: alarms.len(),
            centralized_alarms: central_alarms.len(),
            precision: m.precision(),
            recall: m.recall(),
            f1: f1(m.precision(), m.recall()),
        },
    };

    let mut w = output(args.common.out.as_deref())?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io("cannot write report", e))?;

    if let Some(out) = &args.common.out {
        let mut table = csv_output(Some(&alarms_path(out)))?;
        table.write_record(["period", "date", "p", "alarm"])?;
        for pt in &points {
            table.write_record([
                pt.period.to_string(),
                dates[pt.period].to_string(),
                num(pt.p),
                (pt.p < hyp.alpha()).to_string(),
            ])?;
        }
        finish(table)?;
    }
    Ok(())
}
