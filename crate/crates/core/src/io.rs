//! Scenario documents, command-line overrides, sweep expansion and the
//! CSV formats for traces and metrics.
//!
//! Scenario documents are TOML. Unknown keys are rejected and every error
//! names the offending field by its dotted path.
//!
//! CSV files are comma separated with a header row and LF line endings.
//! Reals carry 17 significant digits, absent values are empty cells and
//! booleans are `true`/`false`. Column orders are [`TRACE_COLUMNS`] and
//! [`METRICS_COLUMNS`].

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use toml::{Table, Value};

use crate::analysis::{MetricsReport, Stability};
use crate::error::{Error, Result};
use crate::scenario::{ScenarioConfig, TraceRecord, SCHEMA};

pub const TRACE_COLUMNS: [&str; 21] = [
    "t",
    "v_pcc_alpha",
    "v_pcc_beta",
    "v_pcc_d",
    "v_pcc_q",
    "theta_true",
    "theta_hat",
    "phase_error",
    "i_inv_d",
    "i_inv_q",
    "i_pcc_d",
    "i_pcc_q",
    "v_c_d",
    "v_c_q",
    "u_d",
    "u_q",
    "saturated",
    "delta",
    "omega_m",
    "z_active",
    "diverged",
];

pub const METRICS_COLUMNS: [&str; 10] = [
    "label",
    "method",
    "stability",
    "steady_state_phase_error",
    "final_max_phase_error",
    "settling_time",
    "decay_time_constant",
    "peak_overshoot",
    "first_saturation",
    "duration",
];

/// Parse `text` as a TOML table.
pub fn parse_table(text: &str) -> Result<Table> {
    text.parse::<Table>()
        .map_err(|e| Error::config("<document>", e.message().to_string()))
}

/// Split `key=value` and parse the value as a TOML value, falling back to
/// a bare string.
pub fn parse_override(spec: &str) -> Result<(String, Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(spec, "override key must be a dotted path"));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// Set `value` at the dotted `key`, creating intermediate tables.
pub fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut cur = table;
    for (n, part) in parts.iter().enumerate() {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(Error::config(parts[..=n].join("."), "is not a table")),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Apply `key=value` overrides in order.
pub fn apply_overrides(table: &mut Table, overrides: &[String]) -> Result<()> {
    for spec in overrides {
        let (key, value) = parse_override(spec)?;
        set_path(table, &key, value)?;
    }
    Ok(())
}

fn field_of(path: &str) -> String {
    if path.is_empty() || path == "." {
        "<document>".to_string()
    } else {
        path.to_string()
    }
}

/// Deserialize a table, reporting the dotted path of the first failure.
pub fn from_table<T: DeserializeOwned>(table: Table) -> Result<T> {
    serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        let msg = e.inner().to_string();
        Error::config(field_of(&path), msg)
    })
}

/// Build and validate a scenario from a parsed document.
pub fn scenario_from_table(table: Table) -> Result<ScenarioConfig> {
    match table.get("schema") {
        Some(Value::String(s)) if s == SCHEMA => {}
        Some(Value::String(s)) => {
            return Err(Error::config(
                "schema",
                format!("expected `{SCHEMA}`, found `{s}`"),
            ))
        }
        Some(_) => return Err(Error::config("schema", "must be a string")),
        None => {
            return Err(Error::config(
                "schema",
                format!("missing, expected `{SCHEMA}`"),
            ))
        }
    }
    let cfg: ScenarioConfig = from_table(table)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parse a scenario document and apply overrides.
pub fn parse_scenario(text: &str, overrides: &[String]) -> Result<ScenarioConfig> {
    let mut table = parse_table(text)?;
    apply_overrides(&mut table, overrides)?;
    scenario_from_table(table)
}

/// Read a scenario file, returning the raw table with overrides applied.
pub fn load_table(path: &Path, overrides: &[String]) -> Result<Table> {
    let text = fs::read_to_string(path)?;
    let mut table = parse_table(&text)?;
    apply_overrides(&mut table, overrides)?;
    Ok(table)
}

pub fn load_scenario(path: &Path, overrides: &[String]) -> Result<ScenarioConfig> {
    scenario_from_table(load_table(path, overrides)?)
}

/// Serialize a scenario back to a TOML document.
pub fn scenario_to_string(cfg: &ScenarioConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::config("<document>", e.to_string()))
}

/// One expanded sweep point.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    /// `key=value` pairs joined by `;`, in axis order.
    pub label: String,
    pub config: ScenarioConfig,
}

/// Cartesian product of the sweep axes. The first axis varies slowest.
/// A document without a `sweep` section expands to itself.
pub fn expand_sweep(table: &Table) -> Result<Vec<SweepPoint>> {
    let mut base = table.clone();
    let axes = match base.remove("sweep") {
        None => Vec::new(),
        Some(v) => {
            let sweep: crate::scenario::SweepConfig = from_table(match v {
                Value::Table(t) => t,
                _ => return Err(Error::config("sweep", "must be a table")),
            })
            .map_err(|e| match e {
                Error::Config { field, reason } => Error::config(format!("sweep.{field}"), reason),
                other => other,
            })?;
            if sweep.axis.is_empty() {
                return Err(Error::config("sweep.axis", "grid is empty"));
            }
            sweep.axis
        }
    };
    for (n, axis) in axes.iter().enumerate() {
        if axis.values.is_empty() {
            return Err(Error::config(
                format!("sweep.axis[{n}].values"),
                "must not be empty",
            ));
        }
        if axis.key.starts_with("sweep") {
            return Err(Error::config(
                format!("sweep.axis[{n}].key"),
                "cannot sweep the sweep section",
            ));
        }
    }
    let total: usize = axes.iter().map(|a| a.values.len()).product();
    let mut points = Vec::with_capacity(total);
    for flat in 0..total {
        let mut t = base.clone();
        let mut labels = Vec::with_capacity(axes.len());
        let mut rem = flat;
        let mut idx = vec![0; axes.len()];
        for (k, axis) in axes.iter().enumerate().rev() {
            idx[k] = rem % axis.values.len();
            rem /= axis.values.len();
        }
        for (axis, &i) in axes.iter().zip(&idx) {
            let v = axis.values[i].clone();
            labels.push(format!("{}={}", axis.key, v));
            set_path(&mut t, &axis.key, v)?;
        }
        points.push(SweepPoint {
            label: labels.join(";"),
            config: scenario_from_table(t)?,
        });
    }
    Ok(points)
}

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_real(x: Option<f64>) -> String {
    x.map(real).unwrap_or_default()
}

fn parse_real(col: &str, s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::config(col, format!("`{s}` is not a number")))
}

fn parse_opt_real(col: &str, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_real(col, s).map(Some)
    }
}

fn parse_bool(col: &str, s: &str) -> Result<bool> {
    s.parse()
        .map_err(|_| Error::config(col, format!("`{s}` is not a boolean")))
}

fn writer<W: std::io::Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn check_header(rdr: &mut csv::Reader<impl std::io::Read>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::config(
            "<header>",
            format!("expected columns {}", expected.join(",")),
        ));
    }
    Ok(())
}

pub fn write_trace<W: std::io::Write>(w: W, records: &[TraceRecord]) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(TRACE_COLUMNS)?;
    for r in records {
        wtr.write_record([
            real(r.t),
            real(r.v_pcc_alpha),
            real(r.v_pcc_beta),
            real(r.v_pcc_d),
            real(r.v_pcc_q),
            real(r.theta_true),
            real(r.theta_hat),
            real(r.phase_error),
            real(r.i_inv_d),
            real(r.i_inv_q),
            real(r.i_pcc_d),
            real(r.i_pcc_q),
            real(r.v_c_d),
            real(r.v_c_q),
            real(r.u_d),
            real(r.u_q),
            r.saturated.to_string(),
            opt_real(r.delta),
            opt_real(r.omega_m),
            real(r.z_active),
            r.diverged.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_trace<R: std::io::Read>(r: R) -> Result<Vec<TraceRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(&mut rdr, &TRACE_COLUMNS)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let f = |k: usize| parse_real(TRACE_COLUMNS[k], &row[k]);
        out.push(TraceRecord {
            t: f(0)?,
            v_pcc_alpha: f(1)?,
            v_pcc_beta: f(2)?,
            v_pcc_d: f(3)?,
            v_pcc_q: f(4)?,
            theta_true: f(5)?,
            theta_hat: f(6)?,
            phase_error: f(7)?,
            i_inv_d: f(8)?,
            i_inv_q: f(9)?,
            i_pcc_d: f(10)?,
            i_pcc_q: f(11)?,
            v_c_d: f(12)?,
            v_c_q: f(13)?,
            u_d: f(14)?,
            u_q: f(15)?,
            saturated: parse_bool(TRACE_COLUMNS[16], &row[16])?,
            delta: parse_opt_real(TRACE_COLUMNS[17], &row[17])?,
            omega_m: parse_opt_real(TRACE_COLUMNS[18], &row[18])?,
            z_active: f(19)?,
            diverged: parse_bool(TRACE_COLUMNS[20], &row[20])?,
        });
    }
    Ok(out)
}

/// A metrics row with the sweep label and method it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub label: String,
    pub method: String,
    pub report: MetricsReport,
}

pub fn write_metrics<W: std::io::Write>(w: W, rows: &[MetricsRow]) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(METRICS_COLUMNS)?;
    for row in rows {
        let m = &row.report;
        wtr.write_record([
            row.label.clone(),
            row.method.clone(),
            m.stability.as_str().to_string(),
            real(m.steady_state_phase_error),
            real(m.final_max_phase_error),
            opt_real(m.settling_time),
            opt_real(m.decay_time_constant),
            real(m.peak_overshoot),
            opt_real(m.first_saturation),
            real(m.duration),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_metrics<R: std::io::Read>(r: R) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(&mut rdr, &METRICS_COLUMNS)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let stability = match &row[2] {
            "stable" => Stability::Stable,
            "oscillatory" => Stability::Oscillatory,
            "diverged" => Stability::Diverged,
            other => {
                return Err(Error::config(
                    "stability",
                    format!("unknown class `{other}`"),
                ))
            }
        };
        out.push(MetricsRow {
            label: row[0].to_string(),
            method: row[1].to_string(),
            report: MetricsReport {
                steady_state_phase_error: parse_real(METRICS_COLUMNS[3], &row[3])?,
                final_max_phase_error: parse_real(METRICS_COLUMNS[4], &row[4])?,
                settling_time: parse_opt_real(METRICS_COLUMNS[5], &row[5])?,
                decay_time_constant: parse_opt_real(METRICS_COLUMNS[6], &row[6])?,
                stability,
                peak_overshoot: parse_real(METRICS_COLUMNS[7], &row[7])?,
                first_saturation: parse_opt_real(METRICS_COLUMNS[8], &row[8])?,
                duration: parse_real(METRICS_COLUMNS[9], &row[9])?,
            },
        });
    }
    Ok(out)
}

/// Write a trace CSV to `path`.
pub fn write_trace_file(path: &Path, records: &[TraceRecord]) -> Result<()> {
    write_trace(fs::File::create(path)?, records)
}

pub fn write_metrics_file(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_metrics(fs::File::create(path)?, rows)
}
