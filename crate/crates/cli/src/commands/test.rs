use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use fedsurv_core::surge_test::p_value_from_totals;
use fedsurv_core::{Cadence, CountSeries};
use serde::Deserialize;

use super::HypothesisOptions;
use crate::error::{CliError, Result};
use crate::io::{load_config, num, output, read_counts};
use crate::Common;

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    common: Common,

    /// Count CSV with columns site_id,date,count.
    #[arg(long)]
    input: Option<PathBuf>,

    /// Surge threshold θ.
    #[arg(long)]
    theta: Option<f64>,

    /// Number of baseline periods l.
    #[arg(long)]
    baseline_len: Option<usize>,

    /// Only report this period index.
    #[arg(long)]
    period: Option<usize>,

    /// Test a single site; all sites are pooled otherwise.
    #[arg(long)]
    site: Option<String>,

    #[arg(long)]
    cadence: Option<Cadence>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TestConfig {
    input: Option<PathBuf>,
    hypothesis: HypothesisOptions,
    period: Option<usize>,
    site: Option<String>,
    cadence: Option<Cadence>,
}

pub fn run(args: TestArgs) -> Result<()> {
    let cfg: TestConfig = load_config(args.common.config.as_deref(), "test")?;
    let hyp = cfg
        .hypothesis
        .overlay(args.theta, args.baseline_len, None)
        .build()?;
    let input = args
        .input
        .or(cfg.input)
        .ok_or_else(|| CliError::Usage("test needs --input <csv>".into()))?;
    let sites = read_counts(&input, args.cadence.or(cfg.cadence))?;
    let series = match args.site.or(cfg.site) {
        Some(id) => sites
            .into_iter()
            .find(|s| s.site_id() == id)
            .ok_or_else(|| {
                CliError::Usage(format!("site '{id}' not found in {}", input.display()))
            })?,
        None if sites.len() == 1 => sites.into_iter().next().expect("one site"),
        None => CountSeries::sum_of("all", &sites)?,
    };

    let l = hyp.baseline_len();
    let counts = series.counts();
    let periods: Vec<usize> = match args.period.or(cfg.period) {
        Some(t) if t < l => {
            return Err(fedsurv_core::Error::InsufficientHistory {
                period: t,
                available: t,
                needed: l,
            }
            .into())
        }
        Some(t) if t >= counts.len() => {
            return Err(CliError::Usage(format!(
                "period {t} is past the end ({} periods)",
                counts.len()
            )))
        }
        Some(t) => vec![t],
        None => (l..counts.len()).collect(),
    };

    let mut w = output(args.common.out.as_deref())?;
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "period,c,n,p")?;
        for &t in &periods {
            let c: u64 = counts[t - l..t].iter().sum();
            let n = c + counts[t];
            let p = p_value_from_totals(c, n, &hyp).expect("n and rho are valid");
            writeln!(w, "{t},{c},{n},{}", num(p))?;
        }
        w.flush()
    };
    emit().map_err(|e| CliError::io("cannot write output", e))
}
