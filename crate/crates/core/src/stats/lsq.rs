//! Householder QR with column pivoting.

use super::StatsError;

/// Relative pivot tolerance: a column whose remaining norm is at most this
/// fraction of the largest original column norm is treated as dependent.
pub const PIVOT_TOLERANCE: f64 = 1e-10;

pub(crate) struct LeastSquares {
    pub coef: Vec<f64>,
    /// (XᵀX)⁻¹ in original column order.
    pub xtx_inv: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    // scaled to avoid overflow on large columns
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * v.iter().map(|x| (x / scale).powi(2)).sum::<f64>().sqrt()
}

/// Solves min ‖y − Xβ‖ for the columns of X (each of length n).
pub(crate) fn solve(names: &[String], columns: &[Vec<f64>], y: &[f64]) -> Result<LeastSquares, StatsError> {
    let p = columns.len();
    let n = y.len();
    let mut a: Vec<Vec<f64>> = columns.to_vec();
    let mut qty = y.to_vec();
    let mut perm: Vec<usize> = (0..p).collect();
    let largest = columns.iter().map(|c| norm(c)).fold(0.0_f64, f64::max);
    let tol = PIVOT_TOLERANCE * largest;

    for j in 0..p {
        let (pivot, pivot_norm) = (j..p)
            .map(|c| (c, norm(&a[c][j..])))
            .fold((j, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot_norm <= tol || largest == 0.0 {
            let mut dependent: Vec<String> = perm[j..].iter().map(|&c| names[c].clone()).collect();
            dependent.sort();
            return Err(StatsError::RankDeficient { columns: dependent });
        }
        a.swap(j, pivot);
        perm.swap(j, pivot);

        // Householder reflector H = I − v vᵀ / (vᵀv/2) zeroing a[j][j+1..].
        let alpha = if a[j][j] > 0.0 { -pivot_norm } else { pivot_norm };
        let mut v: Vec<f64> = a[j][j..].to_vec();
        v[0] -= alpha;
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        if vtv > 0.0 {
            for col in a.iter_mut().skip(j + 1) {
                let dot: f64 = v.iter().zip(&col[j..]).map(|(vi, ci)| vi * ci).sum();
                let f = 2.0 * dot / vtv;
                for (ci, vi) in col[j..].iter_mut().zip(&v) {
                    *ci -= f * vi;
                }
            }
            let dot: f64 = v.iter().zip(&qty[j..]).map(|(vi, yi)| vi * yi).sum();
            let f = 2.0 * dot / vtv;
            for (yi, vi) in qty[j..].iter_mut().zip(&v) {
                *yi -= f * vi;
            }
        }
        a[j][j] = alpha;
        for x in a[j][j + 1..].iter_mut() {
            *x = 0.0;
        }
    }
    debug_assert!(n >= p);

    // Back substitution: R z = (Qᵀy)[..p], R[i][k] = a[k][i].
    let mut z = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = ((i + 1)..p).map(|k| a[k][i] * z[k]).sum();
        z[i] = (qty[i] - s) / a[i][i];
    }
    // R⁻¹, upper triangular, column by column.
    let mut r_inv = vec![vec![0.0; p]; p];
    for c in 0..p {
        r_inv[c][c] = 1.0 / a[c][c];
        for i in (0..c).rev() {
            let s: f64 = ((i + 1)..=c).map(|k| a[k][i] * r_inv[k][c]).sum();
            r_inv[i][c] = -s / a[i][i];
        }
    }
    let mut coef = vec![0.0; p];
    let mut xtx_inv = vec![vec![0.0; p]; p];
    for i in 0..p {
        coef[perm[i]] = z[i];
        for k in 0..p {
            let s: f64 = (i.max(k)..p).map(|m| r_inv[i][m] * r_inv[k][m]).sum();
            xtx_inv[perm[i]][perm[k]] = s;
        }
    }
    let residuals = (0..n)
        .map(|r| y[r] - columns.iter().zip(&coef).map(|(col, b)| col[r] * b).sum::<f64>())
        .collect();
    Ok(LeastSquares { coef, xtx_inv, residuals })
}
