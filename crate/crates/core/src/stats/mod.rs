//! Least-squares estimation with classical diagnostics.
//!
//! [`ols_fit`] solves through a pivoted QR factorization and reports
//! homoskedastic standard errors, two-sided t tests and the overall F test.
//! [`panel_fit`] absorbs a one-way fixed effect by within-group demeaning.

pub mod dist;
mod lsq;
mod panel;
mod report;

use std::collections::HashSet;

use serde::Serialize;
use thiserror::Error;

pub use dist::{f_cdf, f_sf, t_cdf, t_two_sided_p};
pub use lsq::PIVOT_TOLERANCE;
pub use panel::{panel_fit, PanelData, PanelFit};
pub use report::{render_csv, render_text, ReportOptions};

pub const INTERCEPT: &str = "(intercept)";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("column '{0}' is empty")]
    EmptyColumn(String),
    #[error("column '{column}' has {got} values, expected {expected}")]
    LengthMismatch {
        column: String,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in column '{column}' at row {row}")]
    NonFinite { column: String, row: usize },
    #[error("duplicate column name '{0}'")]
    DuplicateColumn(String),
    #[error("{n} observations cannot identify {params} parameters")]
    TooFewObservations { n: usize, params: usize },
    #[error("design matrix is rank deficient; dependent column(s): {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("degrees of freedom must be >= 1, got {0}")]
    InvalidDf(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("fixed-effect group '{0}' has fewer than 2 observations")]
    GroupTooSmall(String),
    #[error("fixed-effect model needs at least 2 groups, got {0}")]
    TooFewGroups(usize),
}

/// Named predictor columns plus an intercept flag.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    intercept: bool,
    n: usize,
}

impl DesignMatrix {
    /// Builds from column vectors; requires `n > k + intercept`.
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>, intercept: bool) -> Result<Self, StatsError> {
        if names.len() != columns.len() {
            return Err(StatsError::InvalidArgument(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let n = columns.first().map(Vec::len).unwrap_or(0);
        let mut seen = HashSet::new();
        for (name, col) in names.iter().zip(&columns) {
            if !seen.insert(name.as_str()) || (intercept && name == INTERCEPT) {
                return Err(StatsError::DuplicateColumn(name.clone()));
            }
            if col.len() != n {
                return Err(StatsError::LengthMismatch { column: name.clone(), expected: n, got: col.len() });
            }
            check_finite(name, col)?;
        }
        let params = columns.len() + usize::from(intercept);
        if params == 0 {
            return Err(StatsError::InvalidArgument("design has no columns".into()));
        }
        if n <= params {
            return Err(StatsError::TooFewObservations { n, params });
        }
        Ok(DesignMatrix { names, columns, intercept, n })
    }

    /// Builds from row-major data.
    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>], intercept: bool) -> Result<Self, StatsError> {
        let k = names.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); k];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(StatsError::InvalidArgument(format!("row {r} has {} values, expected {k}", row.len())));
            }
            for (c, v) in row.iter().enumerate() {
                columns[c].push(*v);
            }
        }
        Self::new(names, columns, intercept)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of predictors, excluding the intercept.
    pub fn k(&self) -> usize {
        self.columns.len()
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }
}

fn check_finite(name: &str, values: &[f64]) -> Result<(), StatsError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(row) => Err(StatsError::NonFinite { column: name.to_string(), row }),
        None => Ok(()),
    }
}

/// Significance marks: `***` p ≤ 0.01, `**` p ≤ 0.05, `*` p ≤ 0.10.
pub fn significance_stars(p: f64) -> &'static str {
    if p <= 0.01 {
        "***"
    } else if p <= 0.05 {
        "**"
    } else if p <= 0.10 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub stars: &'static str,
    pub is_intercept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionResult {
    pub coefficients: Vec<Coefficient>,
    pub r2: f64,
    pub adjusted_r2: f64,
    pub f_stat: f64,
    pub f_p_value: f64,
    pub n: usize,
    /// Predictors excluding the intercept (and any absorbed effects).
    pub k: usize,
    pub df_resid: usize,
    pub ssr: f64,
    pub sst: f64,
    pub residuals: Vec<f64>,
}

impl RegressionResult {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    pub fn slopes(&self) -> impl Iterator<Item = &Coefficient> {
        self.coefficients.iter().filter(|c| !c.is_intercept)
    }
}

/// Degrees-of-freedom bookkeeping shared by OLS and the within estimator.
pub(crate) struct FitShape {
    pub df_resid: usize,
    /// Slopes tested by the F statistic.
    pub df_model: usize,
    /// Numerator of the adjusted-R² correction, (n − 1) for plain OLS.
    pub df_total: usize,
    pub sst: f64,
}

pub(crate) fn fit_columns(
    names: &[String],
    columns: &[Vec<f64>],
    intercept_at: Option<usize>,
    y: &[f64],
    shape: FitShape,
) -> Result<RegressionResult, StatsError> {
    let ls = lsq::solve(names, columns, y)?;
    let ssr: f64 = ls.residuals.iter().map(|e| e * e).sum();
    let df = shape.df_resid as f64;
    let sigma2 = ssr / df;
    let coefficients = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let estimate = ls.coef[j];
            let std_error = (sigma2 * ls.xtx_inv[j][j]).max(0.0).sqrt();
            let t_stat = estimate / std_error;
            let p_value = t_two_sided_p(t_stat, df)?;
            Ok(Coefficient {
                name: name.clone(),
                estimate,
                std_error,
                t_stat,
                p_value,
                stars: significance_stars(p_value),
                is_intercept: intercept_at == Some(j),
            })
        })
        .collect::<Result<Vec<_>, StatsError>>()?;

    let sst = shape.sst;
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else { 0.0 };
    let adjusted_r2 = 1.0 - (1.0 - r2) * shape.df_total as f64 / df;
    let (f_stat, f_p_value) = if shape.df_model == 0 {
        (f64::NAN, f64::NAN)
    } else if sst <= 0.0 {
        (0.0, 1.0)
    } else {
        let explained = (sst - ssr).max(0.0) / shape.df_model as f64;
        let f = explained / sigma2;
        let p = if f.is_nan() { f64::NAN } else { f_sf(f, shape.df_model as f64, df)? };
        (f, p)
    };
    Ok(RegressionResult {
        coefficients,
        r2,
        adjusted_r2,
        f_stat,
        f_p_value,
        n: y.len(),
        k: shape.df_model,
        df_resid: shape.df_resid,
        ssr,
        sst,
        residuals: ls.residuals,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Ordinary least squares of `y` on the design.
///
/// Standard errors are sqrt(diag(σ̂²(XᵀX)⁻¹)) with σ̂² = SSR / (n − k − 1);
/// the F statistic tests all slopes jointly against zero.
pub fn ols_fit(x: &DesignMatrix, y: &[f64]) -> Result<RegressionResult, StatsError> {
    if y.len() != x.n {
        return Err(StatsError::LengthMismatch { column: "outcome".into(), expected: x.n, got: y.len() });
    }
    check_finite("outcome", y)?;
    let mut names = Vec::with_capacity(x.k() + 1);
    let mut columns = Vec::with_capacity(x.k() + 1);
    if x.intercept {
        names.push(INTERCEPT.to_string());
        columns.push(vec![1.0; x.n]);
    }
    names.extend(x.names.iter().cloned());
    columns.extend(x.columns.iter().cloned());

    let (sst, df_total) = if x.intercept {
        let m = mean(y);
        (y.iter().map(|v| (v - m).powi(2)).sum(), x.n - 1)
    } else {
        (y.iter().map(|v| v * v).sum(), x.n)
    };
    let shape = FitShape {
        df_resid: x.n - columns.len(),
        df_model: x.k(),
        df_total,
        sst,
    };
    fit_columns(&names, &columns, x.intercept.then_some(0), y, shape)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub r: f64,
    pub r2: f64,
    pub n: usize,
}

/// Pearson correlation of two equally long samples (n ≥ 3).
pub fn correlation_report(x: &[f64], y: &[f64]) -> Result<Correlation, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { column: "y".into(), expected: x.len(), got: y.len() });
    }
    if x.len() < 3 {
        return Err(StatsError::TooFewObservations { n: x.len(), params: 3 });
    }
    check_finite("x", x)?;
    check_finite("y", y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(StatsError::ZeroVariance("y"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok(Correlation { r, r2: r * r, n: x.len() })
}
