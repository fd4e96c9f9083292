use std::path::PathBuf;

use clap::Args;
use fedsurv_core::evaluation::{log_thresholds, pr_curve, recall_at_fdr};
use fedsurv_core::{AlarmSeries, MatchWindow};
use serde::Deserialize;

use crate::error::{CliError, Result};
use crate::io::{csv_output, finish, load_config, num, read_alarm_periods, read_p_series};
use crate::Common;

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    common: Common,

    /// p-value series with columns period,p.
    #[arg(long)]
    input: Option<PathBuf>,

    /// True alarms: a `period` column, optionally filtered by `alarm`.
    #[arg(long)]
    truth: Option<PathBuf>,

    /// Periods a prediction may precede a true alarm.
    #[arg(long)]
    before: Option<usize>,

    /// Periods a prediction may follow a true alarm.
    #[arg(long)]
    after: Option<usize>,

    /// Number of log-spaced thresholds.
    #[arg(long)]
    thresholds: Option<usize>,

    #[arg(long)]
    fdr: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvaluateConfig {
    input: Option<PathBuf>,
    truth: Option<PathBuf>,
    window: MatchWindow,
    thresholds: usize,
    min_threshold: f64,
    max_threshold: f64,
    fdr: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            input: None,
            truth: None,
            window: MatchWindow::new(1, 2),
            thresholds: 50,
            min_threshold: 1e-12,
            max_threshold: 0.5,
            fdr: 0.1,
        }
    }
}

/// Writes the PR curve as `threshold,precision,recall,f1` and prints
/// `recall_at_fdr=<value>` on stderr.
pub fn run(args: EvaluateArgs) -> Result<()> {
    let cfg: EvaluateConfig = load_config(args.common.config.as_deref(), "evaluate")?;
    let input = args
        .input
        .or(cfg.input)
        .ok_or_else(|| CliError::Usage("evaluate needs --input <csv>".into()))?;
    let truth = args
        .truth
        .or(cfg.truth)
        .ok_or_else(|| CliError::Usage("evaluate needs --truth <csv>".into()))?;
    let window = MatchWindow::new(
        args.before.unwrap_or(cfg.window.before),
        args.after.unwrap_or(cfg.window.after),
    );
    let fdr = args.fdr.unwrap_or(cfg.fdr);
    if !(0.0..1.0).contains(&fdr) {
        return Err(CliError::Usage(format!("fdr {fdr} must lie in [0, 1)")));
    }
    let k = args.thresholds.unwrap_or(cfg.thresholds);
    if k == 0
        || !(cfg.min_threshold > 0.0
            && cfg.min_threshold < cfg.max_threshold
            && cfg.max_threshold < 1.0)
    {
        return Err(CliError::Config(
            "thresholds need k >= 1 and 0 < min < max < 1".into(),
        ));
    }

    let p = read_p_series(&input)?;
    let truth = AlarmSeries::new(read_alarm_periods(&truth)?);
    let curve = pr_curve(
        &p,
        &truth,
        window,
        &log_thresholds(cfg.min_threshold, cfg.max_threshold, k),
    )?;
    let mut w = csv_output(args.common.out.as_deref())?;
    w.write_record(["threshold", "precision", "recall", "f1"])?;
    for pt in &curve.points {
        w.write_record([
            num(pt.threshold),
            num(pt.precision),
            num(pt.recall),
            num(pt.f1),
        ])?;
    }
    finish(w)?;
    eprintln!("recall_at_fdr={}", num(recall_at_fdr(&curve, fdr)?));
    Ok(())
}
