use clap::Args;
use fedsurv_core::experiments::{power_curve, PowerCurveConfig};

use crate::error::Result;
use crate::io::{csv_output, finish, load_config, num};
use crate::Common;

#[derive(Debug, Args)]
pub struct PowerArgs {
    #[command(flatten)]
    common: Common,

    /// Monte Carlo replicates per grid point and for calibration.
    #[arg(long)]
    replicates: Option<usize>,
}

/// Writes `method,theta_alt,power,threshold`, sorted by method then θ'.
pub fn run(args: PowerArgs) -> Result<()> {
    let mut cfg: PowerCurveConfig = load_config(args.common.config.as_deref(), "power-curve")?;
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    cfg.validate()?;
    let rows = power_curve(&cfg, args.common.seed.unwrap_or(0))?;
    let mut w = csv_output(args.common.out.as_deref())?;
    w.write_record(["method", "theta_alt", "power", "threshold"])?;
    for r in rows {
        w.write_record([
            r.method.to_string(),
            num(r.theta_alt),
            num(r.power),
            num(r.threshold),
        ])?;
    }
    finish(w)
}
