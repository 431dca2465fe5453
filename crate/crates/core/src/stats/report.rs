//! Text and delimited renderings of a fitted model.

use std::fmt::Write as _;

use super::{significance_stars, RegressionResult};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    /// Label of the dependent variable, e.g. `ln(asthma_ed_visits)`.
    pub outcome: String,
    /// Absorbed factor and its number of levels, for within fits.
    pub fixed_effect: Option<(String, usize)>,
    pub decimals: usize,
}

impl ReportOptions {
    pub fn new(outcome: impl Into<String>) -> Self {
        ReportOptions { outcome: outcome.into(), fixed_effect: None, decimals: 3 }
    }
}

const RULE_WIDTH: usize = 64;

/// `.564` style: no leading zero before the decimal point.
fn bare_fraction(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    if let Some(rest) = s.strip_prefix("0.") {
        format!(".{rest}")
    } else if let Some(rest) = s.strip_prefix("-0.") {
        format!("-.{rest}")
    } else {
        s
    }
}

fn number(v: f64, decimals: usize) -> String {
    if v.is_nan() {
        "n/a".to_string()
    } else {
        format!("{v:.decimals$}")
    }
}

pub fn render_text(result: &RegressionResult, opts: &ReportOptions) -> String {
    let d = opts.decimals;
    let rule = "-".repeat(RULE_WIDTH);
    let label_width = result
        .coefficients
        .iter()
        .map(|c| c.name.chars().count() + 2)
        .chain(["Sample size (N)".len()])
        .max()
        .unwrap_or(0)
        + 2;
    let mut out = String::new();
    let _ = writeln!(out, "Dependent Variable = {}", opts.outcome);
    let _ = writeln!(out, "{rule}");
    let _ = writeln!(out, "{:<label_width$}{:<16}{}", "Model Variable", "Coeff.", "(Std. Err.)");
    let mut has_intercept = false;
    for c in result.slopes().chain(result.coefficients.iter().filter(|c| c.is_intercept)) {
        let label = if c.is_intercept {
            has_intercept = true;
            format!("{} \u{2020}", c.name)
        } else {
            c.name.clone()
        };
        let coeff = format!("{}{}", number(c.estimate, d), c.stars);
        let _ = writeln!(out, "{label:<label_width$}{coeff:<16}{}", number(c.std_error, d));
    }
    let _ = writeln!(out, "{rule}");
    let _ = writeln!(out, "{:<label_width$}{}", "Sample size (N)", result.n);
    let _ = writeln!(out, "{:<label_width$}{}", "Adjusted R^2", bare_fraction(result.adjusted_r2, d));
    let f = if result.f_stat.is_nan() {
        "n/a".to_string()
    } else {
        format!("{:.2}{}", result.f_stat, significance_stars(result.f_p_value))
    };
    let _ = writeln!(out, "{:<label_width$}{}", "F-test", f);
    if let Some((name, groups)) = &opts.fixed_effect {
        let _ = writeln!(out, "{:<label_width$}{} ({} groups)", "Fixed effect", name, groups);
    }
    let _ = writeln!(out, "{rule}");
    let _ = writeln!(
        out,
        "NOTE: Coeff.= coefficient and Std. Err.= standard error. *** = significant at 99% (p<=0.01); \
         ** = significant at 95% (p<=0.05); * = significant at 90% (p<=0.10)."
    );
    if has_intercept {
        let _ = writeln!(out, "\u{2020} Intercept is estimated but conventionally left out of the variable list.");
    }
    out
}

/// Delimited form: one row per coefficient, then footer rows.
pub fn render_csv(result: &RegressionResult, opts: &ReportOptions) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let row = |w: &mut csv::Writer<Vec<u8>>, fields: [String; 7]| {
        w.write_record(&fields).expect("writing to memory");
    };
    row(
        &mut w,
        ["section", "term", "estimate", "std_error", "t_stat", "p_value", "stars"].map(String::from),
    );
    for c in &result.coefficients {
        let section = if c.is_intercept { "intercept" } else { "coefficient" };
        row(
            &mut w,
            [
                section.to_string(),
                c.name.clone(),
                c.estimate.to_string(),
                c.std_error.to_string(),
                c.t_stat.to_string(),
                c.p_value.to_string(),
                c.stars.to_string(),
            ],
        );
    }
    let footer = |w: &mut csv::Writer<Vec<u8>>, term: &str, value: String| {
        row(w, ["footer".into(), term.into(), value, String::new(), String::new(), String::new(), String::new()]);
    };
    footer(&mut w, "outcome", opts.outcome.clone());
    footer(&mut w, "n", result.n.to_string());
    footer(&mut w, "k", result.k.to_string());
    footer(&mut w, "df_resid", result.df_resid.to_string());
    footer(&mut w, "r2", result.r2.to_string());
    footer(&mut w, "adjusted_r2", result.adjusted_r2.to_string());
    row(
        &mut w,
        [
            "footer".into(),
            "f_stat".into(),
            result.f_stat.to_string(),
            String::new(),
            String::new(),
            result.f_p_value.to_string(),
            significance_stars(result.f_p_value).to_string(),
        ],
    );
    if let Some((name, groups)) = &opts.fixed_effect {
        footer(&mut w, "fixed_effect", name.clone());
        footer(&mut w, "groups", groups.to_string());
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is utf-8")
}

#[cfg(test)]
mod tests {
    use super::super::{ols_fit, DesignMatrix};
    use super::*;

    fn sample() -> RegressionResult {
        let x: Vec<f64> = (0..12).map(f64::from).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 1.0 + 0.5 * v + if i % 2 == 0 { 0.3 } else { -0.3 }).collect();
        ols_fit(&DesignMatrix::new(vec!["ln1p(trees)".into()], vec![x], true).unwrap(), &y).unwrap()
    }

    #[test]
    fn text_layout() {
        let fit = sample();
        let text = render_text(&fit, &ReportOptions::new("ln(visits)"));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "Dependent Variable = ln(visits)");
        assert!(lines[2].starts_with("Model Variable"));
        assert!(lines[3].starts_with("ln1p(trees)"));
        assert!(lines[4].starts_with("(intercept) \u{2020}"));
        assert!(text.contains("Sample size (N)"));
        assert!(text.contains("Adjusted R^2"));
        assert!(text.contains("F-test"));
        assert!(lines.iter().any(|l| l.starts_with('\u{2020}')));
    }

    #[test]
    fn fraction_format() {
        assert_eq!(bare_fraction(0.5638, 3), ".564");
        assert_eq!(bare_fraction(-0.12, 2), "-.12");
        assert_eq!(bare_fraction(1.0, 3), "1.000");
    }

    #[test]
    fn csv_rows() {
        let fit = sample();
        let text = render_csv(&fit, &ReportOptions::new("y"));
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
        assert_eq!(&rows[0][1], "(intercept)");
        assert_eq!(&rows[1][1], "ln1p(trees)");
        let est: f64 = rows[1][2].parse().unwrap();
        assert_eq!(est, fit.coefficients[1].estimate);
        assert!(rows.iter().any(|r| &r[1] == "n" && &r[2] == "12"));
        assert!(rows.iter().any(|r| &r[1] == "f_stat"));
    }
}
