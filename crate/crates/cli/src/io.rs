//! CSV and JSON plumbing.
//!
//! Count input schema: `site_id,date,count` with ISO-8601 dates, one row per
//! site and period, in any order. Extra columns are ignored.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use csv::StringRecord;
use fedsurv_core::{Cadence, CountSeries};
use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::error::{CliError, Result};

fn open_reader(path: &Path) -> Result<(csv::Reader<File>, StringRecord)> {
    let file =
        File::open(path).map_err(|e| CliError::io(format!("cannot open {}", path.display()), e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| malformed(path, 1, e.to_string()))?
        .clone();
    Ok((reader, headers))
}

fn column(headers: &StringRecord, path: &Path, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
}

fn malformed(path: &Path, line: u64, message: impl Into<String>) -> CliError {
    CliError::Malformed {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn records<'a>(
    reader: &'a mut csv::Reader<File>,
    path: &Path,
) -> impl Iterator<Item = Result<(u64, StringRecord)>> + 'a {
    let path = path.to_path_buf();
    reader.records().map(move |r| match r {
        Ok(rec) => {
            let line = rec.position().map_or(0, |p| p.line());
            Ok((line, rec))
        }
        Err(e) => {
            let line = e.position().map_or(0, |p| p.line());
            Err(malformed(&path, line, e.to_string()))
        }
    })
}

struct Row {
    line: u64,
    date: NaiveDate,
    count: u64,
}

/// Reads per-site count series, in order of first appearance. The cadence
/// is inferred from the first date gap unless given.
pub fn read_counts(path: &Path, cadence: Option<Cadence>) -> Result<Vec<CountSeries>> {
    let (mut reader, headers) = open_reader(path)?;
    let site_col = column(&headers, path, "site_id")?;
    let date_col = column(&headers, path, "date")?;
    let count_col = column(&headers, path, "count")?;

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<Row>> = HashMap::new();
    for rec in records(&mut reader, path) {
        let (line, rec) = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let site = field(site_col).to_string();
        if site.is_empty() {
            return Err(malformed(path, line, "empty site_id"));
        }
        let date = NaiveDate::parse_from_str(field(date_col), "%Y-%m-%d")
            .map_err(|e| malformed(path, line, format!("bad date '{}': {e}", field(date_col))))?;
        let count: u64 = field(count_col).parse().map_err(|_| {
            malformed(
                path,
                line,
                format!("count '{}' is not a nonnegative integer", field(count_col)),
            )
        })?;
        if !rows.contains_key(&site) {
            order.push(site.clone());
        }
        rows.entry(site)
            .or_default()
            .push(Row { line, date, count });
    }
    if order.is_empty() {
        return Err(malformed(path, 2, "no data rows"));
    }

    for v in rows.values_mut() {
        v.sort_by_key(|r| r.date);
    }
    let cadence = match cadence {
        Some(c) => c,
        None => infer_cadence(path, &order, &rows)?,
    };
    let step = cadence.step_days();
    order
        .iter()
        .map(|site| {
            let v = &rows[site];
            for w in v.windows(2) {
                let gap = (w[1].date - w[0].date).num_days();
                if gap != step {
                    let line = w[0].line.max(w[1].line);
                    let msg = if gap == 0 {
                        format!("duplicate date {} for site '{site}'", w[1].date)
                    } else {
                        format!(
                            "site '{site}': {} follows {} by {gap} days, expected {step} ({cadence})",
                            w[1].date, w[0].date
                        )
                    };
                    return Err(malformed(path, line, msg));
                }
            }
            let timestamps = v.iter().map(|r| r.date).collect();
            let counts = v.iter().map(|r| r.count).collect();
            Ok(CountSeries::new(site.clone(), cadence, timestamps, counts)?)
        })
        .collect()
}

fn infer_cadence(
    path: &Path,
    order: &[String],
    rows: &HashMap<String, Vec<Row>>,
) -> Result<Cadence> {
    for site in order {
        if let [a, b, ..] = rows[site].as_slice() {
            let gap = (b.date - a.date).num_days();
            return Cadence::from_step(gap).ok_or_else(|| {
                malformed(
                    path,
                    b.line,
                    format!("cannot infer cadence from a {gap}-day gap; expected 1 (daily) or 7 (weekly)"),
                )
            });
        }
    }
    Ok(Cadence::Weekly)
}

/// Reads `period,p` rows into a dense series, 1 where a period is absent.
pub fn read_p_series(path: &Path) -> Result<Vec<f64>> {
    let (mut reader, headers) = open_reader(path)?;
    let period_col = column(&headers, path, "period")?;
    let p_col = column(&headers, path, "p")?;
    let mut pairs = Vec::new();
    for rec in records(&mut reader, path) {
        let (line, rec) = rec?;
        let period = parse_period(path, line, rec.get(period_col).unwrap_or(""))?;
        let raw = rec.get(p_col).unwrap_or("");
        let p: f64 = raw
            .parse()
            .ok()
            .filter(|p: &f64| (0.0..=1.0).contains(p))
            .ok_or_else(|| malformed(path, line, format!("p '{raw}' is not a probability")))?;
        pairs.push((period, p));
    }
    let len = pairs.iter().map(|(t, _)| t + 1).max().unwrap_or(0);
    let mut out = vec![1.0; len];
    for (t, p) in pairs {
        out[t] = p;
    }
    Ok(out)
}

/// Reads the `period` column of an alarm file. With an `alarm` column, only
/// rows where it is true or 1 count.
pub fn read_alarm_periods(path: &Path) -> Result<Vec<usize>> {
    let (mut reader, headers) = open_reader(path)?;
    let period_col = column(&headers, path, "period")?;
    let alarm_col = headers.iter().position(|h| h == "alarm");
    let mut out = Vec::new();
    for rec in records(&mut reader, path) {
        let (line, rec) = rec?;
        let fired = match alarm_col {
            Some(c) => match rec.get(c).unwrap_or("") {
                "true" | "1" => true,
                "false" | "0" => false,
                other => {
                    return Err(malformed(
                        path,
                        line,
                        format!("alarm '{other}' is not a boolean"),
                    ))
                }
            },
            None => true,
        };
        if fired {
            out.push(parse_period(path, line, rec.get(period_col).unwrap_or(""))?);
        }
    }
    Ok(out)
}

fn parse_period(path: &Path, line: u64, raw: &str) -> Result<usize> {
    raw.parse().map_err(|_| {
        malformed(
            path,
            line,
            format!("period '{raw}' is not a nonnegative integer"),
        )
    })
}

/// Loads a JSON config. A top-level `"kind"` field, if present, must name
/// the running subcommand.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>, kind: &str) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}", path.display()), e))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(obj) = value.as_object_mut() {
        if let Some(k) = obj.remove("kind") {
            if k.as_str() != Some(kind) {
                return Err(CliError::Config(format!(
                    "{}: config kind {k} does not match subcommand '{kind}'",
                    path.display()
                )));
            }
        }
    }
    serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Buffered writer to `path`, or stdout.
pub fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            let f = File::create(p)
                .map_err(|e| CliError::io(format!("cannot create {}", p.display()), e))?;
            Box::new(BufWriter::new(f))
        }
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

pub fn csv_output(path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>> {
    Ok(csv::Writer::from_writer(output(path)?))
}

/// Shortest round-trip form, switching to exponent notation for very small
/// or large magnitudes.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// `report.json` → `report.alarms.csv`.
pub fn alarms_path(out: &Path) -> PathBuf {
    out.with_extension("alarms.csv")
}

pub fn finish(mut w: csv::Writer<Box<dyn Write>>) -> Result<()> {
    w.flush()
        .map_err(|e| CliError::io("cannot write output", e))
}
