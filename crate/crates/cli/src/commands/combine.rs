use std::io::Write;

use clap::Args;
use fedsurv_core::combine::combine;
use fedsurv_core::{EvidenceSet, Method};
use serde::Deserialize;

use super::{FloatList, HypothesisOptions};
use crate::error::{CliError, Result};
use crate::io::{load_config, num, output};
use crate::Common;

#[derive(Debug, Args)]
pub struct CombineArgs {
    #[command(flatten)]
    common: Common,

    /// Comma-separated site p-values.
    #[arg(long)]
    p: Option<FloatList>,

    /// Comma-separated site shares, summing to one.
    #[arg(long)]
    shares: Option<FloatList>,

    /// Total window count n (cstouffer, lancaster).
    #[arg(long)]
    total: Option<u64>,

    /// Combination method; repeat for several. Defaults to every method
    /// the inputs allow.
    #[arg(long = "method")]
    methods: Vec<Method>,

    /// Surge threshold θ, used to derive ρ for cstouffer.
    #[arg(long)]
    theta: Option<f64>,

    /// Baseline length l, used to derive ρ for cstouffer.
    #[arg(long)]
    baseline_len: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CombineConfig {
    p_values: Option<Vec<f64>>,
    shares: Option<Vec<f64>>,
    total_count: Option<u64>,
    methods: Vec<Method>,
    hypothesis: HypothesisOptions,
}

pub fn run(args: CombineArgs) -> Result<()> {
    let cfg: CombineConfig = load_config(args.common.config.as_deref(), "combine")?;
    let hyp = cfg
        .hypothesis
        .overlay(args.theta, args.baseline_len, None)
        .build()?;
    let p = args
        .p
        .map(|l| l.0)
        .or(cfg.p_values)
        .ok_or_else(|| CliError::Usage("combine needs --p <p1,p2,...>".into()))?;
    let shares = args.shares.map(|l| l.0).or(cfg.shares);
    let total = args.total.or(cfg.total_count);

    let mut ev = EvidenceSet::new(p)?.with_rho(hyp.rho())?;
    if let Some(s) = shares.clone() {
        ev = ev.with_shares(s)?;
    }
    if let Some(n) = total {
        ev = ev.with_total_count(n);
    }
    let explicit = !args.methods.is_empty() || !cfg.methods.is_empty();
    let methods: Vec<Method> = match (args.methods.is_empty(), cfg.methods.is_empty()) {
        (false, _) => args.methods,
        (true, false) => cfg.methods,
        (true, true) => Method::ALL
            .into_iter()
            .filter(|m| {
                (!m.needs_shares() || shares.is_some()) && (!m.needs_total() || total.is_some())
            })
            .collect(),
    };

    let mut rows = Vec::with_capacity(methods.len());
    for m in methods {
        match combine(m, &ev) {
            Ok(r) => rows.push(format!("{m},{},{}", num(r.statistic), num(r.p))),
            Err(e @ fedsurv_core::Error::Config(_)) if explicit => return Err(e.into()),
            Err(fedsurv_core::Error::Config(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let mut w = output(args.common.out.as_deref())?;
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "method,statistic,p")?;
        for r in &rows {
            writeln!(w, "{r}")?;
        }
        w.flush()
    };
    emit().map_err(|e| CliError::io("cannot write output", e))
}
