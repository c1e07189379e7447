//! Dataset text format reader/writer and the statistical screening tests
//! used to validate measurements and select model parameters.
//!
//! A day file holds one sample per non-comment line: `x y z aqi` with
//! optional trailing `u temp hum` columns, separated by whitespace or
//! commas. `#` starts a comment.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Sample, SampleSet};
use crate::model::solve_beta;
use crate::sim::Scenario;

/// One day of measurements with the optional screening covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDay {
    pub label: String,
    pub scenario: Scenario,
    pub samples: SampleSet,
    /// Aligned with `samples`; present only when the file carries the
    /// extended columns.
    pub temperature: Vec<Option<f64>>,
    pub humidity: Vec<Option<f64>>,
    /// Malformed-line reports, one per skipped line.
    pub warnings: Vec<String>,
}

impl DatasetDay {
    pub fn from_samples(label: impl Into<String>, samples: SampleSet) -> Self {
        let scenario = if samples.iter().all(|s| s.position[2] == 0.0) {
            Scenario::TwoD
        } else {
            Scenario::ThreeD
        };
        let n = samples.len();
        Self {
            label: label.into(),
            scenario,
            samples,
            temperature: vec![None; n],
            humidity: vec![None; n],
            warnings: Vec::new(),
        }
    }

    /// Indices of samples whose coordinates are off the grid lattice by
    /// more than 1e-6 m (GPS jitter); they are kept but reported.
    pub fn off_lattice(&self, grid: &GridSpec) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| {
                (0..3).any(|axis| {
                    let rel = (s.position[axis] - grid.origin[axis]) / grid.spacing;
                    (rel - rel.round()).abs() * grid.spacing > 1e-6
                })
            })
            .map(|(i, _)| i)
            .collect()
    }
}

/// Parses one day file in the flat line format.
pub fn parse_day(path: impl AsRef<Path>) -> Result<DatasetDay> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "day".to_string());
    parse_day_str(&text, &label, &path.display().to_string())
}

pub fn parse_day_str(text: &str, label: &str, origin: &str) -> Result<DatasetDay> {
    let mut samples = Vec::new();
    let mut temperature = Vec::new();
    let mut humidity = Vec::new();
    let mut warnings = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> =
            line.split(|c: char| c.is_whitespace() || c == ',').filter(|f| !f.is_empty()).collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) if (4..=7).contains(&v.len()) => v,
            Ok(v) => {
                warnings.push(format!("{origin}:{}: expected 4-7 numbers, got {}", lineno + 1, v.len()));
                continue;
            }
            Err(e) => {
                warnings.push(format!("{origin}:{}: {e}", lineno + 1));
                continue;
            }
        };
        let wind = values.get(4).copied().unwrap_or(0.0);
        match Sample::new([values[0], values[1], values[2]], wind, values[3]) {
            Ok(s) => {
                samples.push(s);
                temperature.push(values.get(5).copied());
                humidity.push(values.get(6).copied());
            }
            Err(e) => warnings.push(format!("{origin}:{}: {e}", lineno + 1)),
        }
    }
    if samples.is_empty() {
        return Err(Error::Dataset(format!("no samples in {origin}")));
    }
    let scenario = if samples.iter().all(|s| s.position[2] == 0.0) {
        Scenario::TwoD
    } else {
        Scenario::ThreeD
    };
    Ok(DatasetDay { label: label.to_string(), scenario, samples, temperature, humidity, warnings })
}

/// Serializes a day back to the text format. Output is byte-stable for a
/// fixed day and parses back to full float precision.
pub fn write_day_str(day: &DatasetDay) -> String {
    let mut out = String::new();
    for (i, s) in day.samples.iter().enumerate() {
        let _ = write!(out, "{} {} {} {} {}", s.position[0], s.position[1], s.position[2], s.aqi, s.wind);
        match (day.temperature.get(i).copied().flatten(), day.humidity.get(i).copied().flatten()) {
            (Some(t), Some(h)) => {
                let _ = write!(out, " {t} {h}");
            }
            (Some(t), None) => {
                let _ = write!(out, " {t}");
            }
            _ => {}
        }
        out.push('\n');
    }
    out
}

pub fn write_day(day: &DatasetDay, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_day_str(day))?;
    Ok(())
}

/// Parses the matrix day layout: each row is a fixed xy position (row-major
/// over the grid's x/y dims), each column a height level, cells are AQI
/// values. Positions come from the grid's cube centers.
pub fn parse_day_matrix(text: &str, label: &str, grid: &GridSpec) -> Result<DatasetDay> {
    let mut samples = Vec::new();
    let mut row = 0usize;
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|f| !f.is_empty())
            .map(|f| f.parse::<f64>().map_err(|e| Error::Dataset(format!("{label}: {e}"))))
            .collect::<Result<_>>()?;
        if values.len() != grid.dims[2] {
            return Err(Error::Dataset(format!(
                "{label}: matrix row {row} has {} columns, expected nz = {}",
                values.len(),
                grid.dims[2]
            )));
        }
        if row >= grid.dims[0] * grid.dims[1] {
            return Err(Error::Dataset(format!("{label}: more rows than xy positions")));
        }
        let ix = row % grid.dims[0];
        let iy = row / grid.dims[0];
        for (iz, &aqi) in values.iter().enumerate() {
            let center = grid.center([ix, iy, iz]);
            samples.push(Sample::new(center, 0.0, aqi)?);
        }
        row += 1;
    }
    if samples.is_empty() {
        return Err(Error::Dataset(format!("no samples in {label}")));
    }
    Ok(DatasetDay::from_samples(label, samples))
}

/// Welch two-sample test of equal means; returns the two-sided p-value.
pub fn two_tailed_mean_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::NotEnoughSamples { got: a.len().min(b.len()), need: 2 });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64], m: f64| {
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
    };
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (m1, m2) = (mean(a), mean(b));
    let (v1, v2) = (var(a, m1), var(b, m2));
    let se_sq = v1 / n1 + v2 / n2;
    if se_sq == 0.0 {
        return Ok(if m1 == m2 { 1.0 } else { 0.0 });
    }
    let t = (m1 - m2) / se_sq.sqrt();
    let df = se_sq * se_sq
        / ((v1 / n1).powi(2) / (n1 - 1.0) + (v2 / n2).powi(2) / (n2 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Metric(format!("students-t: {e}")))?;
    Ok(2.0 * (1.0 - dist.cdf(t.abs())))
}

/// Ordinary least squares with an intercept and collinearity handling.
#[derive(Debug, Clone)]
pub struct OlsFit {
    /// Intercept estimate.
    pub intercept: f64,
    /// Indices into the input columns that were kept, in order.
    pub kept: Vec<usize>,
    /// Coefficients aligned with `kept`.
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Names of dropped (collinear) columns.
    pub dropped: Vec<String>,
    pub residual_variance: f64,
}

impl OlsFit {
    /// Prediction for one row of the original covariates.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut y = self.intercept;
        for (slot, &col) in self.kept.iter().enumerate() {
            y += self.coefficients[slot] * row[col];
        }
        y
    }
}

/// Fits y on the given covariate columns plus an intercept. Collinear
/// columns (those adding nothing to the column span) are dropped with a
/// warning entry rather than failing.
pub fn ols(names: &[&str], columns: &[Vec<f64>], y: &[f64]) -> Result<OlsFit> {
    let n = y.len();
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::Metric("covariate column length mismatch".into()));
    }
    if n < columns.len() + 2 {
        return Err(Error::NotEnoughSamples { got: n, need: columns.len() + 2 });
    }
    // Greedy span check: keep a column only if it is not (numerically) in
    // the span of the intercept plus previously kept columns.
    let mut kept: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    for (ci, col) in columns.iter().enumerate() {
        let p = kept.len() + 1;
        let mut x = DMatrix::zeros(n, p);
        for r in 0..n {
            x[(r, 0)] = 1.0;
            for (slot, &kc) in kept.iter().enumerate() {
                x[(r, slot + 1)] = columns[kc][r];
            }
        }
        let target = DVector::from_column_slice(col);
        let ls = solve_beta(&x, &target)?;
        let resid = &x * &ls.beta - &target;
        let col_norm = target.norm().max(1e-30);
        if resid.norm() / col_norm <= 1e-10 {
            dropped.push(names.get(ci).copied().unwrap_or("?").to_string());
        } else {
            kept.push(ci);
        }
    }
    let p = kept.len() + 1;
    let mut x = DMatrix::zeros(n, p);
    for r in 0..n {
        x[(r, 0)] = 1.0;
        for (slot, &kc) in kept.iter().enumerate() {
            x[(r, slot + 1)] = columns[kc][r];
        }
    }
    let yv = DVector::from_column_slice(y);
    let ls = solve_beta(&x, &yv)?;
    let resid = &x * &ls.beta - &yv;
    let rss: f64 = resid.iter().map(|r| r * r).sum();
    let df = (n - p) as f64;
    let s2 = if df > 0.0 { rss / df } else { 0.0 };
    let xtx = x.transpose() * &x;
    let xtx_inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::Metric("normal matrix singular after column pruning".into()))?;
    let dist = StudentsT::new(0.0, 1.0, df.max(1.0))
        .map_err(|e| Error::Metric(format!("students-t: {e}")))?;
    let mut coefficients = Vec::new();
    let mut std_errors = Vec::new();
    let mut t_stats = Vec::new();
    let mut p_values = Vec::new();
    for slot in 0..kept.len() {
        let b = ls.beta[slot + 1];
        let se = (s2 * xtx_inv[(slot + 1, slot + 1)]).sqrt();
        let t = if se > 0.0 { b / se } else { f64::INFINITY };
        let pv = if se > 0.0 { 2.0 * (1.0 - dist.cdf(t.abs())) } else { 0.0 };
        coefficients.push(b);
        std_errors.push(se);
        t_stats.push(t);
        p_values.push(pv);
    }
    Ok(OlsFit {
        intercept: ls.beta[0],
        kept,
        coefficients,
        std_errors,
        t_stats,
        p_values,
        dropped,
        residual_variance: s2,
    })
}

/// Per-covariate screening result mirroring the parameter-selection table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScreenEntry {
    pub name: String,
    pub coefficient: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionScreen {
    pub intercept: f64,
    pub entries: Vec<ScreenEntry>,
    pub dropped: Vec<String>,
}

impl RegressionScreen {
    /// Two-column CSV: parameter, p_value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("parameter,p_value\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{}", e.name, e.p_value);
        }
        out
    }
}

/// Least-squares screen of concentration on candidate covariates with a
/// per-coefficient test of H0: beta_j = 0.
pub fn spatial_regression_screen(
    names: &[&str],
    columns: &[Vec<f64>],
    y: &[f64],
) -> Result<RegressionScreen> {
    let fit = ols(names, columns, y)?;
    let entries = fit
        .kept
        .iter()
        .enumerate()
        .map(|(slot, &col)| ScreenEntry {
            name: names.get(col).copied().unwrap_or("?").to_string(),
            coefficient: fit.coefficients[slot],
            std_error: fit.std_errors[slot],
            t_stat: fit.t_stats[slot],
            p_value: fit.p_values[slot],
        })
        .collect();
    Ok(RegressionScreen { intercept: fit.intercept, entries, dropped: fit.dropped })
}
