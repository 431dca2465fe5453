//! One-way fixed-effects (within) estimator.

use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use super::{check_finite, fit_columns, FitShape, RegressionResult, StatsError};

#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    /// Fixed-effect label of each observation.
    pub groups: Vec<String>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelFit {
    pub fit: RegressionResult,
    pub groups: usize,
    /// Recovered effect per group: ȳ_g − x̄_g·β.
    pub group_effects: BTreeMap<String, f64>,
}

/// Fits y_it = α_g + x_it·β + ε_it by demeaning within groups.
///
/// R² is the within R²; residual degrees of freedom are n − k − G.
pub fn panel_fit(data: &PanelData) -> Result<PanelFit, StatsError> {
    let n = data.y.len();
    if data.names.len() != data.columns.len() {
        return Err(StatsError::InvalidArgument(format!(
            "{} names for {} columns",
            data.names.len(),
            data.columns.len()
        )));
    }
    if data.names.is_empty() {
        return Err(StatsError::InvalidArgument("panel model needs at least one predictor".into()));
    }
    if data.groups.len() != n {
        return Err(StatsError::LengthMismatch { column: "group".into(), expected: n, got: data.groups.len() });
    }
    let mut seen = HashSet::new();
    for (name, col) in data.names.iter().zip(&data.columns) {
        if !seen.insert(name.as_str()) {
            return Err(StatsError::DuplicateColumn(name.clone()));
        }
        if col.len() != n {
            return Err(StatsError::LengthMismatch { column: name.clone(), expected: n, got: col.len() });
        }
        check_finite(name, col)?;
    }
    check_finite("outcome", &data.y)?;

    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in data.groups.iter().enumerate() {
        members.entry(g.as_str()).or_default().push(i);
    }
    if members.len() < 2 {
        return Err(StatsError::TooFewGroups(members.len()));
    }
    if let Some((g, _)) = members.iter().find(|(_, rows)| rows.len() < 2) {
        return Err(StatsError::GroupTooSmall(g.to_string()));
    }
    let k = data.columns.len();
    let g_count = members.len();
    if n <= k + g_count {
        return Err(StatsError::TooFewObservations { n, params: k + g_count });
    }

    let group_means = |v: &[f64]| -> BTreeMap<&str, f64> {
        members
            .iter()
            .map(|(g, rows)| (*g, rows.iter().map(|&i| v[i]).sum::<f64>() / rows.len() as f64))
            .collect()
    };
    let demean = |v: &[f64]| -> (Vec<f64>, BTreeMap<&str, f64>) {
        let means = group_means(v);
        let out = v.iter().zip(&data.groups).map(|(x, g)| x - means[g.as_str()]).collect();
        (out, means)
    };

    let (y_w, y_means) = demean(&data.y);
    let mut x_means = Vec::with_capacity(k);
    let mut x_w = Vec::with_capacity(k);
    for col in &data.columns {
        let (w, m) = demean(col);
        x_w.push(w);
        x_means.push(m);
    }

    let sst = y_w.iter().map(|v| v * v).sum();
    let shape = FitShape {
        df_resid: n - k - g_count,
        df_model: k,
        df_total: n - g_count,
        sst,
    };
    let fit = fit_columns(&data.names, &x_w, None, &y_w, shape)?;

    let group_effects = members
        .keys()
        .map(|g| {
            let xb: f64 = fit.coefficients.iter().zip(&x_means).map(|(c, m)| c.estimate * m[g]).sum();
            (g.to_string(), y_means[g] - xb)
        })
        .collect();
    Ok(PanelFit { fit, groups: g_count, group_effects })
}

#[cfg(test)]
mod tests {
    use super::super::{ols_fit, DesignMatrix};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic(seed: u64, groups: usize, per: usize) -> PanelData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = PanelData { names: vec!["a".into(), "b".into()], columns: vec![vec![], vec![]], groups: vec![], y: vec![] };
        for g in 0..groups {
            let effect = g as f64 * 3.0 - 4.0;
            for _ in 0..per {
                let a: f64 = rng.random_range(0.0..5.0) + g as f64;
                let b: f64 = rng.random_range(-1.0..1.0);
                data.columns[0].push(a);
                data.columns[1].push(b);
                data.groups.push(format!("g{g}"));
                data.y.push(effect + 1.5 * a - 0.7 * b + rng.random_range(-0.5..0.5));
            }
        }
        data
    }

    #[test]
    fn matches_dummy_variable_regression() {
        // Least-squares dummy variables give the same slopes and standard errors.
        let data = synthetic(3, 4, 15);
        let panel = panel_fit(&data).unwrap();
        let mut names = data.names.clone();
        let mut columns = data.columns.clone();
        for g in 1..4 {
            names.push(format!("d{g}"));
            columns.push(data.groups.iter().map(|x| if *x == format!("g{g}") { 1.0 } else { 0.0 }).collect());
        }
        let lsdv = ols_fit(&DesignMatrix::new(names, columns, true).unwrap(), &data.y).unwrap();
        for name in ["a", "b"] {
            let (p, l) = (panel.fit.coefficient(name).unwrap(), lsdv.coefficient(name).unwrap());
            assert!((p.estimate - l.estimate).abs() < 1e-9);
            assert!((p.std_error - l.std_error).abs() < 1e-9);
            assert!((p.p_value - l.p_value).abs() < 1e-9);
        }
        assert_eq!(panel.fit.df_resid, lsdv.df_resid);
        assert!((panel.fit.ssr - lsdv.ssr).abs() < 1e-8);
        // recovered effects equal the dummy intercepts
        let base = lsdv.coefficient("(intercept)").unwrap().estimate;
        assert!((panel.group_effects["g0"] - base).abs() < 1e-8);
        for g in 1..4 {
            let d = lsdv.coefficient(&format!("d{g}")).unwrap().estimate;
            assert!((panel.group_effects[&format!("g{g}")] - (base + d)).abs() < 1e-8);
        }
    }

    #[test]
    fn group_shift_is_absorbed() {
        let data = synthetic(8, 3, 10);
        let base = panel_fit(&data).unwrap();
        let mut shifted = data.clone();
        for (y, g) in shifted.y.iter_mut().zip(&shifted.groups) {
            *y += if g == "g1" { 100.0 } else { -7.0 };
        }
        let moved = panel_fit(&shifted).unwrap();
        for (a, b) in base.fit.coefficients.iter().zip(&moved.fit.coefficients) {
            assert!((a.estimate - b.estimate).abs() < 1e-9);
        }
        assert!((base.fit.r2 - moved.fit.r2).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_groupings() {
        let mut data = synthetic(1, 3, 5);
        let mut single = data.clone();
        single.groups.iter_mut().for_each(|g| *g = "all".into());
        assert_eq!(panel_fit(&single).unwrap_err(), StatsError::TooFewGroups(1));

        let last = data.groups.len() - 1;
        data.groups[last] = "lonely".into();
        assert_eq!(panel_fit(&data).unwrap_err(), StatsError::GroupTooSmall("lonely".into()));
    }

    #[test]
    fn within_constant_predictor_is_rank_deficient() {
        let mut data = synthetic(2, 3, 6);
        data.names.push("c".into());
        data.columns.push(data.groups.iter().map(|g| if g == "g0" { 1.0 } else { 2.0 }).collect());
        match panel_fit(&data).unwrap_err() {
            StatsError::RankDeficient { columns } => assert_eq!(columns, vec!["c".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_groups_same_slope() {
        let x = [1.0, 2.0, 3.0, 4.0, 1.5, 2.5, 3.5];
        let groups = ["a", "a", "a", "a", "b", "b", "b"];
        let y: Vec<f64> = x.iter().zip(groups).map(|(v, g)| 5.0 * v + if g == "a" { 2.0 } else { -3.0 }).collect();
        let data = PanelData {
            names: vec!["x".into()],
            columns: vec![x.to_vec()],
            groups: groups.iter().map(|g| g.to_string()).collect(),
            y,
        };
        let out = panel_fit(&data).unwrap();
        assert!((out.fit.coefficients[0].estimate - 5.0).abs() < 1e-12);
        assert!((out.group_effects["a"] - 2.0).abs() < 1e-12);
        assert!((out.group_effects["b"] + 3.0).abs() < 1e-12);
        assert_eq!(out.fit.df_resid, 7 - 1 - 2);
    }

    #[test]
    fn sensor_sized_panel_matches_dummies() {
        // 162 sites x 4 seasons, season as the fixed effect
        let mut rng = ChaCha8Rng::seed_from_u64(162);
        let seasons = ["winter", "spring", "summer", "fall"];
        let mut data = PanelData { names: vec!["trees".into(), "floor".into()], columns: vec![vec![], vec![]], groups: vec![], y: vec![] };
        for _site in 0..162 {
            for (s, season) in seasons.iter().enumerate() {
                let t: f64 = rng.random_range(0.0..80.0);
                let f: f64 = rng.random_range(0.0..3.0);
                data.columns[0].push(t);
                data.columns[1].push(f);
                data.groups.push(season.to_string());
                data.y.push(9.0 + s as f64 - 0.02 * t + 0.4 * f + rng.random_range(-1.0..1.0));
            }
        }
        let panel = panel_fit(&data).unwrap();
        let mut names = data.names.clone();
        let mut columns = data.columns.clone();
        for season in &seasons[1..] {
            names.push(season.to_string());
            columns.push(data.groups.iter().map(|g| if g == season { 1.0 } else { 0.0 }).collect());
        }
        let lsdv = ols_fit(&DesignMatrix::new(names, columns, true).unwrap(), &data.y).unwrap();
        for name in ["trees", "floor"] {
            let (p, l) = (panel.fit.coefficient(name).unwrap(), lsdv.coefficient(name).unwrap());
            assert!((p.estimate - l.estimate).abs() <= 1e-8 * l.estimate.abs().max(1e-3));
            assert!((p.std_error - l.std_error).abs() <= 1e-8 * l.std_error);
        }
        assert_eq!(panel.fit.n, 648);
        assert!(panel.fit.adjusted_r2 <= panel.fit.r2);
    }
}
