use std::path::PathBuf;

use clap::Args;
use fedsurv_core::experiments::{semisynth, SemisynthConfig};
use fedsurv_core::semisynth::builtin_wave_series;
use fedsurv_core::CountSeries;

use crate::error::Result;
use crate::io::{csv_output, finish, load_config, num, read_counts};
use crate::Common;

#[derive(Debug, Args)]
pub struct SemisynthArgs {
    #[command(flatten)]
    common: Common,

    /// Observed counts (site_id,date,count) to smooth; sites are pooled.
    /// The built-in wave fixture is used when absent.
    #[arg(long)]
    input: Option<PathBuf>,

    #[arg(long)]
    replicates: Option<usize>,
}

/// Writes `setting,method,entropy,recall_at_fdr,f1`, one row per setting
/// and method. `entropy` is empty for single-site settings.
pub fn run(args: SemisynthArgs) -> Result<()> {
    let mut cfg: SemisynthConfig = load_config(args.common.config.as_deref(), "semisynth")?;
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    cfg.validate()?;
    let observed = match &args.input {
        Some(path) => {
            let sites = read_counts(path, None)?;
            CountSeries::sum_of("observed", &sites)?
        }
        None => builtin_wave_series(&cfg.shape),
    };
    let rows = semisynth(&cfg, &observed, args.common.seed.unwrap_or(0))?;
    let mut w = csv_output(args.common.out.as_deref())?;
    w.write_record(["setting", "method", "entropy", "recall_at_fdr", "f1"])?;
    for r in rows {
        w.write_record([
            r.setting,
            r.method.to_string(),
            r.entropy.map(num).unwrap_or_default(),
            num(r.recall_at_fdr),
            num(r.f1),
        ])?;
    }
    finish(w)
}
