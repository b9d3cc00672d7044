//! Partial correlation test with the Fisher transform.
//!
//! Each pair of scalar components is residualized on an intercept plus the
//! conditioning columns; the residual correlation `r` maps to
//! `z = atanh(r)`, and `sqrt(n - k - 3) * |z|` is compared against a
//! standard normal. Multi-column groups combine component pairs with a
//! Bonferroni correction.

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;

use super::{check_groups, CiError};

/// Variance below which a residual is treated as constant.
const DEGENERATE_VAR: f64 = 1e-24;

/// Least-squares residual of `y` on `[1 | cond]`, with the design rank.
fn residualize(y: &DVector<f64>, cond: &DMatrix<f64>) -> (DVector<f64>, usize) {
    let n = y.nrows();
    let mut design = DMatrix::zeros(n, cond.ncols() + 1);
    design.column_mut(0).fill(1.0);
    if cond.ncols() > 0 {
        design.view_mut((0, 1), (n, cond.ncols())).copy_from(cond);
    }
    let svd = design.clone().svd(true, true);
    let tolerance = 1e-12
        * svd
            .singular_values
            .iter()
            .cloned()
            .fold(0.0_f64, f64::max)
            .max(1.0);
    let rank = svd.singular_values.iter().filter(|&&s| s > tolerance).count();
    let beta = svd.solve(y, tolerance).expect("svd computed with u and v");
    (y - design * beta, rank)
}

fn pair_pvalue(a: &DVector<f64>, b: &DVector<f64>, cond: &DMatrix<f64>) -> Result<f64, CiError> {
    let n = a.nrows();
    let needed = cond.ncols() + 4;
    if n < needed {
        return Err(CiError::TooFewSamples { needed, got: n });
    }
    let (res_a, rank) = residualize(a, cond);
    let (res_b, _) = residualize(b, cond);
    // The intercept uses one rank unit; the rest belongs to `cond`.
    let k_eff = rank.saturating_sub(1);
    if n < k_eff + 4 {
        return Err(CiError::TooFewSamples { needed: k_eff + 4, got: n });
    }
    let var_a = res_a.norm_squared();
    let var_b = res_b.norm_squared();
    if var_a < DEGENERATE_VAR || var_b < DEGENERATE_VAR {
        return Ok(1.0);
    }
    let r = (res_a.dot(&res_b) / (var_a * var_b).sqrt()).clamp(-1.0 + 1e-12, 1.0 - 1e-12);
    let z = r.atanh();
    let statistic = ((n - k_eff) as f64 - 3.0).sqrt() * z.abs();
    Ok(erfc(statistic / std::f64::consts::SQRT_2))
}

/// P-value for linear conditional independence of two column groups.
///
/// Pass a zero-column `cond` to test marginal independence. Multi-column
/// groups take the smallest pair p-value times the number of pairs,
/// clamped to one.
pub fn fisher_z_pvalue(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    cond: &DMatrix<f64>,
) -> Result<f64, CiError> {
    check_groups(a, b, cond)?;
    let pairs = a.ncols() * b.ncols();
    let mut smallest = 1.0_f64;
    for i in 0..a.ncols() {
        let col_a = DVector::from_column_slice(a.column(i).as_slice());
        for j in 0..b.ncols() {
            let col_b = DVector::from_column_slice(b.column(j).as_slice());
            smallest = smallest.min(pair_pvalue(&col_a, &col_b, cond)?);
        }
    }
    Ok((smallest * pairs as f64).min(1.0))
}
