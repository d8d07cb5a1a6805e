//! File formats: TOA matrices, ground truth, side information and run
//! configuration.
//!
//! TOA CSV files hold `M` rows of `K` comma-separated times in seconds. An
//! empty cell marks an unobserved entry. A sibling `<stem>.mask.csv` of 0/1
//! values, when present, marks further entries as unobserved. TOA JSON files
//! are objects `{"toa": [[..]], "mask": [[..]], "speed": 343.0}` where
//! `mask` and `speed` are optional and `null` times are unobserved.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::constraints::{DistanceBound, KnownDistance};
use crate::error::{Error, Result};
use crate::evaluation::AlignedResult;
use crate::geometry::PointSet;
use crate::pipeline::{Localization, LocalizeOptions};
use crate::refine::{AugLagConfig, LmConfig};
use crate::sdr::SolverOptions;
use crate::toa::{SyncMode, Timing, ToaMatrix, DEFAULT_SPEED};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// Guesses from the extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidParameter(format!(
                "unknown format '{other}', expected csv or json"
            ))),
        }
    }
}

/// `data.csv` → `data.mask.csv`.
pub fn mask_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("toa");
    path.with_file_name(format!("{stem}.mask.csv"))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

/// Parses a rectangular CSV table, mapping each trimmed cell through `cell`.
fn parse_table<T>(
    text: &str,
    source: &str,
    mut cell: impl FnMut(&str) -> std::result::Result<T, String>,
) -> Result<Vec<Vec<T>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<T>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(format!("{source}, row {}", r + 1), e.to_string()))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(record.len());
        for (c, field) in record.iter().enumerate() {
            row.push(cell(field).map_err(|msg| {
                Error::parse(format!("{source}, row {}, column {}", rows.len() + 1, c + 1), msg)
            })?);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::parse(
                    format!("{source}, row {}", rows.len() + 1),
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(source, "no data rows"));
    }
    Ok(rows)
}

fn finite_number(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("'{s}' is not finite"))
    }
}

fn check_coverage(mask: &DMatrix<bool>, source: &str) -> Result<()> {
    if let Some(i) = (0..mask.nrows()).find(|&i| !mask.row(i).iter().any(|&o| o)) {
        return Err(Error::parse(
            format!("{source}, row {}", i + 1),
            "receiver has no observed entry",
        ));
    }
    if let Some(j) = (0..mask.ncols()).find(|&j| !mask.column(j).iter().any(|&o| o)) {
        return Err(Error::parse(
            format!("{source}, column {}", j + 1),
            "source has no observed entry",
        ));
    }
    Ok(())
}

/// Parses TOA CSV text and an optional 0/1 mask table.
pub fn parse_toa_csv(text: &str, mask_text: Option<&str>, speed: f64) -> Result<ToaMatrix> {
    let rows = parse_table(text, "toa", |s| {
        if s.is_empty() {
            Ok(None)
        } else {
            finite_number(s).map(Some)
        }
    })?;
    let (m, k) = (rows.len(), rows[0].len());
    let mut t = DMatrix::zeros(m, k);
    let mut mask = DMatrix::from_element(m, k, true);
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            match v {
                Some(v) => t[(i, j)] = *v,
                None => mask[(i, j)] = false,
            }
        }
    }
    if let Some(mask_text) = mask_text {
        let flags = parse_table(mask_text, "mask", |s| match s {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            other => Err(format!("'{other}' is not 0 or 1")),
        })?;
        if flags.len() != m || flags[0].len() != k {
            return Err(Error::parse(
                "mask",
                format!("shape {}×{} differs from TOA shape {m}×{k}", flags.len(), flags[0].len()),
            ));
        }
        for (i, row) in flags.iter().enumerate() {
            for (j, &observed) in row.iter().enumerate() {
                mask[(i, j)] &= observed;
            }
        }
    }
    check_coverage(&mask, "toa")?;
    ToaMatrix::with_mask(t, mask, speed)
}

#[derive(Debug, Serialize, Deserialize)]
struct ToaJson {
    toa: Vec<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<Vec<Vec<bool>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    speed: Option<f64>,
}

/// Parses a TOA JSON document; its `speed` field overrides `default_speed`.
pub fn parse_toa_json(text: &str, default_speed: f64) -> Result<ToaMatrix> {
    let doc: ToaJson = serde_json::from_str(text).map_err(|e| {
        Error::parse(format!("toa, line {}, column {}", e.line(), e.column()), e.to_string())
    })?;
    let m = doc.toa.len();
    if m == 0 || doc.toa[0].is_empty() {
        return Err(Error::parse("toa", "empty matrix"));
    }
    let k = doc.toa[0].len();
    if let Some(i) = doc.toa.iter().position(|r| r.len() != k) {
        return Err(Error::parse(
            format!("toa, row {}", i + 1),
            format!("expected {k} columns, found {}", doc.toa[i].len()),
        ));
    }
    let mut t = DMatrix::zeros(m, k);
    let mut mask = DMatrix::from_element(m, k, true);
    for (i, row) in doc.toa.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            match v {
                Some(v) if v.is_finite() => t[(i, j)] = *v,
                Some(_) => {
                    return Err(Error::parse(
                        format!("toa, row {}, column {}", i + 1, j + 1),
                        "value is not finite",
                    ))
                }
                None => mask[(i, j)] = false,
            }
        }
    }
    if let Some(flags) = &doc.mask {
        if flags.len() != m || flags.iter().any(|r| r.len() != k) {
            return Err(Error::parse("mask", format!("shape differs from TOA shape {m}×{k}")));
        }
        for (i, row) in flags.iter().enumerate() {
            for (j, &observed) in row.iter().enumerate() {
                if observed && doc.toa[i][j].is_none() {
                    return Err(Error::parse(
                        format!("toa, row {}, column {}", i + 1, j + 1),
                        "entry is marked observed but is null",
                    ));
                }
                mask[(i, j)] &= observed;
            }
        }
    }
    check_coverage(&mask, "toa")?;
    ToaMatrix::with_mask(t, mask, doc.speed.unwrap_or(default_speed))
}

/// Reads a TOA matrix. CSV files pick up a sibling mask file when one
/// exists and use `default_speed`.
pub fn read_toa(path: &Path, format: Format, default_speed: f64) -> Result<ToaMatrix> {
    let text = read_text(path)?;
    let with_file = |e: Error| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    };
    match format {
        Format::Csv => {
            let mpath = mask_path(path);
            let mask = if mpath.exists() {
                Some(read_text(&mpath)?)
            } else {
                None
            };
            parse_toa_csv(&text, mask.as_deref(), default_speed).map_err(with_file)
        }
        Format::Json => parse_toa_json(&text, default_speed).map_err(with_file),
    }
}

/// CSV text for the times plus, when entries are missing, the mask table.
/// Unobserved entries are written as empty cells.
pub fn format_toa_csv(toa: &ToaMatrix) -> (String, Option<String>) {
    let mut out = String::new();
    let mut mask = String::new();
    for i in 0..toa.m() {
        let cells: Vec<String> = (0..toa.k())
            .map(|j| {
                if toa.is_observed(i, j) {
                    format!("{:?}", toa.times()[(i, j)])
                } else {
                    String::new()
                }
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
        let flags: Vec<&str> = (0..toa.k())
            .map(|j| if toa.is_observed(i, j) { "1" } else { "0" })
            .collect();
        mask.push_str(&flags.join(","));
        mask.push('\n');
    }
    (out, (!toa.is_complete()).then_some(mask))
}

pub fn format_toa_json(toa: &ToaMatrix) -> Result<String> {
    let rows: Vec<Vec<Option<f64>>> = (0..toa.m())
        .map(|i| {
            (0..toa.k())
                .map(|j| toa.is_observed(i, j).then(|| toa.times()[(i, j)]))
                .collect()
        })
        .collect();
    let mask = (!toa.is_complete()).then(|| {
        (0..toa.m())
            .map(|i| (0..toa.k()).map(|j| toa.is_observed(i, j)).collect())
            .collect()
    });
    let doc = ToaJson {
        toa: rows,
        mask,
        speed: Some(toa.speed()),
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Writes a TOA matrix; CSV output with missing entries also writes the
/// sibling mask file.
pub fn write_toa(path: &Path, toa: &ToaMatrix, format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            let (data, mask) = format_toa_csv(toa);
            write_text(path, &data)?;
            if let Some(mask) = mask {
                write_text(&mask_path(path), &mask)?;
            }
            Ok(())
        }
        Format::Json => write_text(path, &format_toa_json(toa)?),
    }
}

/// Ground-truth geometry and, optionally, timings (seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub receivers: Vec<Vec<f64>>,
    pub sources: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Vec<f64>>,
}

fn columns(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.column_iter().map(|c| c.iter().copied().collect()).collect()
}

impl TruthFile {
    pub fn new(points: &PointSet, timing: Option<&Timing>) -> Self {
        Self {
            receivers: columns(&points.receivers()),
            sources: columns(&points.sources()),
            sigma: timing.map(|t| t.sigma.iter().copied().collect()),
            tau: timing.map(|t| t.tau.iter().copied().collect()),
        }
    }

    pub fn points(&self) -> Result<PointSet> {
        let d = self
            .receivers
            .first()
            .or(self.sources.first())
            .map(Vec::len)
            .unwrap_or(0);
        let all: Vec<&Vec<f64>> = self.receivers.iter().chain(&self.sources).collect();
        if let Some(p) = all.iter().position(|p| p.len() != d) {
            return Err(Error::parse(
                format!("truth, point {}", p + 1),
                format!("expected {d} coordinates"),
            ));
        }
        let coords = DMatrix::from_fn(d, all.len(), |r, c| all[c][r]);
        PointSet::new(coords, self.receivers.len())
    }

    pub fn timing(&self) -> Option<Timing> {
        Some(Timing {
            sigma: DVector::from_vec(self.sigma.clone()?),
            tau: DVector::from_vec(self.tau.clone()?),
        })
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, source: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        Error::parse(format!("{source}, line {}, column {}", e.line(), e.column()), e.to_string())
    })
}

pub fn read_truth(path: &Path) -> Result<TruthFile> {
    parse_json(&read_text(path)?, &path.display().to_string())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

/// Known distances as JSON `[{"i":0,"j":1,"distance":0.1}]` or CSV rows
/// `i,j,distance` (0-based point indices, receivers first).
pub fn read_known_distances(path: &Path) -> Result<Vec<KnownDistance>> {
    let text = read_text(path)?;
    let source = path.display().to_string();
    match Format::from_path(path) {
        Format::Json => parse_json(&text, &source),
        Format::Csv => parse_index_rows(&text, &source, 3)?
            .into_iter()
            .map(|(i, j, v)| {
                Ok(KnownDistance {
                    i,
                    j,
                    distance: v[0],
                })
            })
            .collect(),
    }
}

/// Bounds as JSON `[{"i":0,"j":1,"lower":1.0,"upper":2.0}]` or CSV rows
/// `i,j,lower,upper`.
pub fn read_distance_bounds(path: &Path) -> Result<Vec<DistanceBound>> {
    let text = read_text(path)?;
    let source = path.display().to_string();
    match Format::from_path(path) {
        Format::Json => parse_json(&text, &source),
        Format::Csv => parse_index_rows(&text, &source, 4)?
            .into_iter()
            .map(|(i, j, v)| {
                Ok(DistanceBound {
                    i,
                    j,
                    lower: v[0],
                    upper: v[1],
                })
            })
            .collect(),
    }
}

fn parse_index_rows(text: &str, source: &str, width: usize) -> Result<Vec<(usize, usize, Vec<f64>)>> {
    let rows = parse_table(text, source, |s| Ok(s.to_string()))?;
    let mut out = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let at = |c: usize| format!("{source}, row {}, column {}", r + 1, c + 1);
        if row.len() != width {
            return Err(Error::parse(
                format!("{source}, row {}", r + 1),
                format!("expected {width} columns, found {}", row.len()),
            ));
        }
        let index = |c: usize| {
            row[c]
                .parse::<usize>()
                .map_err(|_| Error::parse(at(c), format!("'{}' is not an index", row[c])))
        };
        let values = (2..width)
            .map(|c| finite_number(&row[c]).map_err(|m| Error::parse(at(c), m)))
            .collect::<Result<Vec<f64>>>()?;
        out.push((index(0)?, index(1)?, values));
    }
    Ok(out)
}

/// Per-source delays in seconds, as a JSON array or a CSV with one value per
/// cell (any layout).
pub fn read_delays(path: &Path) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    let source = path.display().to_string();
    match Format::from_path(path) {
        Format::Json => parse_json(&text, &source),
        Format::Csv => Ok(parse_table(&text, &source, finite_number)?
            .into_iter()
            .flatten()
            .collect()),
    }
}

/// Settings for `localize`, loadable from JSON. File-based side information
/// given on the command line is merged in by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: SyncMode,
    pub d: usize,
    /// Propagation speed for CSV inputs (m/s).
    pub speed: f64,
    pub lm: LmConfig,
    pub al: AugLagConfig,
    pub solver: SolverOptions,
    pub trace_weight: f64,
    pub known_distances: Vec<KnownDistance>,
    pub distance_bounds: Vec<DistanceBound>,
    pub constant_offset: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let o = LocalizeOptions::default();
        Self {
            mode: o.mode,
            d: o.d,
            speed: DEFAULT_SPEED,
            lm: o.lm,
            al: o.al,
            solver: o.solver,
            trace_weight: o.trace_weight,
            known_distances: Vec::new(),
            distance_bounds: Vec::new(),
            constant_offset: None,
            out: None,
            seed: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.d) {
            return Err(Error::Config(format!("dimension must be 2 or 3, got {}", self.d)));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(Error::Config(format!("speed must be positive, got {}", self.speed)));
        }
        if !(self.trace_weight >= 0.0 && self.trace_weight.is_finite()) {
            return Err(Error::Config("trace weight must be nonnegative".into()));
        }
        self.lm.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.al.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn options(&self) -> LocalizeOptions {
        LocalizeOptions {
            d: self.d,
            mode: self.mode,
            lm: self.lm.clone(),
            al: self.al.clone(),
            solver: self.solver.clone(),
            known_distances: self.known_distances.clone(),
            distance_bounds: self.distance_bounds.clone(),
            constant_offset: self.constant_offset.clone(),
            trace_weight: self.trace_weight,
        }
    }
}

/// Parses a JSON config; any failure is a config error.
pub fn parse_config<T: for<'de> Deserialize<'de>>(text: &str, source: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        Error::Config(format!("{source}, line {}, column {}: {e}", e.line(), e.column()))
    })
}

pub fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text, &path.display().to_string())
}

/// Machine-readable summary of a localization run.
pub fn results_json(result: &Localization, evaluation: Option<&AlignedResult>) -> Value {
    let mut doc = json!({
        "receivers": columns(&result.points.receivers()),
        "sources": columns(&result.points.sources()),
        "sigma": result.timing.as_ref().map(|t| t.sigma.as_slice().to_vec()),
        "tau": result.timing.as_ref().map(|t| t.tau.as_slice().to_vec()),
        "timing_residual_norm": result.timing.as_ref().map(|t| t.residual_norm),
        "missing_values": result.alpha,
        "mode": result.mode,
        "objective": result.final_loss,
        "sdr": {
            "status": format!("{:?}", result.sdr_status),
            "objective": result.sdr_objective,
            "iterations": result.sdr_iterations,
            "tail_mass": result.tail_mass,
        },
        "refinement": result.report,
        "dof": result.dof,
        "warnings": result.warnings,
        "seconds": result.seconds,
    });
    if let Some(a) = evaluation {
        doc["evaluation"] = json!({
            "e_rs": a.e_rs,
            "e_r": a.e_r,
            "e_rs_clipped": a.e_rs_clipped,
            "e_r_clipped": a.e_r_clipped,
            "rotation": a.rotation.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            "translation": a.translation.as_slice(),
        });
    }
    doc
}
