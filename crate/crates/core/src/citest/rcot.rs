//! Kernel conditional independence test on random Fourier features.
//!
//! Groups are standardized, mapped through `sqrt(2) * cos(x W' + b)` with
//! Gaussian frequencies scaled by a median-distance bandwidth, and the
//! tested features are residualized on the conditioning features with a
//! tiny ridge. The statistic is `n` times the squared Frobenius norm of
//! the residual cross-covariance; its null is a weighted chi-square,
//! evaluated either by a three-cumulant gamma match or by permutation.

use std::f64::consts::{SQRT_2, TAU};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::RngExt;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use super::{center_columns, check_groups, standardize_columns, CiError};
use crate::rng::derive_rng;

const TAG_RCOT: u64 = 0x7263_6f74;
const STREAM_A: u64 = 0;
const STREAM_B: u64 = 1;
const STREAM_COND: u64 = 2;
const STREAM_PERMUTE: u64 = 3;

/// Rows used to estimate the median pairwise distance.
const BANDWIDTH_ROWS: usize = 500;
/// Smallest sample size the asymptotic null is trusted with.
const MIN_ROWS: usize = 20;
/// Ridge factor applied to the conditioning feature covariance.
const RIDGE_FACTOR: f64 = 1e-10;

/// How the null distribution of the kernel statistic is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum NullMethod {
    /// Three-cumulant gamma match to the weighted chi-square limit.
    Gamma,
    /// Monte-Carlo permutation of the second group's residual features.
    Permutation { draws: usize },
}

/// Settings for [`rcot_pvalue`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RcotParams {
    /// Fourier features for each tested group.
    pub features_tested: usize,
    /// Fourier features for the conditioning group.
    pub features_cond: usize,
    pub null: NullMethod,
}

impl Default for RcotParams {
    fn default() -> Self {
        Self {
            features_tested: 5,
            features_cond: 25,
            null: NullMethod::Gamma,
        }
    }
}

/// Median pairwise distance over a row prefix; one when degenerate.
fn median_bandwidth(x: &DMatrix<f64>) -> f64 {
    let m = x.nrows().min(BANDWIDTH_ROWS);
    if m < 2 {
        return 1.0;
    }
    let mut distances = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            let mut sum = 0.0;
            for c in 0..x.ncols() {
                let d = x[(i, c)] - x[(j, c)];
                sum += d * d;
            }
            distances.push(sum.sqrt());
        }
    }
    distances.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let median = distances[distances.len() / 2];
    if median.is_finite() && median > 1e-12 {
        median
    } else {
        1.0
    }
}

/// Random cosine features `sqrt(2) * cos(x W' + offset)` with frequencies
/// `N(0, 1) / bandwidth`.
fn fourier_features(
    x: &DMatrix<f64>,
    count: usize,
    bandwidth: f64,
    rng: &mut ChaCha12Rng,
) -> DMatrix<f64> {
    let (n, d) = (x.nrows(), x.ncols());
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut frequencies = DMatrix::zeros(count, d);
    for f in 0..count {
        for j in 0..d {
            frequencies[(f, j)] = normal.sample(rng) / bandwidth;
        }
    }
    let mut offsets = DVector::zeros(count);
    for f in 0..count {
        offsets[f] = rng.random_range(0.0..TAU);
    }
    let mut out = x * frequencies.transpose();
    for f in 0..count {
        for i in 0..n {
            out[(i, f)] = SQRT_2 * (out[(i, f)] + offsets[f]).cos();
        }
    }
    out
}

/// Tail probability of `sum lambda_i z_i^2` at `q`, matching the first
/// three cumulants to a scaled, shifted chi-square.
pub(crate) fn weighted_chi_square_tail(lambdas: &[f64], q: f64) -> f64 {
    if q <= 0.0 {
        return 1.0;
    }
    let k1: f64 = lambdas.iter().sum();
    let k2: f64 = 2.0 * lambdas.iter().map(|l| l * l).sum::<f64>();
    let k3: f64 = 8.0 * lambdas.iter().map(|l| l * l * l).sum::<f64>();
    if k2 <= 1e-300 {
        return 1.0;
    }
    if k3 <= 1e-300 {
        let scale = k2 / (2.0 * k1);
        let dof = 2.0 * k1 * k1 / k2;
        return gamma_ur(dof / 2.0, q / scale / 2.0);
    }
    let scale = k3 / (4.0 * k2);
    let dof = 8.0 * k2.powi(3) / (k3 * k3);
    let shift = k1 - scale * dof;
    let x = (q - shift) / scale;
    if x <= 0.0 {
        1.0
    } else {
        gamma_ur(dof / 2.0, x / 2.0)
    }
}

fn gamma_pvalue(ea: &DMatrix<f64>, eb: &DMatrix<f64>, statistic: f64) -> f64 {
    let (n, da, db) = (ea.nrows(), ea.ncols(), eb.ncols());
    let mut products = DMatrix::zeros(n, da * db);
    for i in 0..n {
        for p in 0..da {
            for q in 0..db {
                products[(i, p * db + q)] = ea[(i, p)] * eb[(i, q)];
            }
        }
    }
    center_columns(&mut products);
    let sigma = products.transpose() * &products / n as f64;
    let eigen = SymmetricEigen::new(sigma);
    let lambdas: Vec<f64> = eigen.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    weighted_chi_square_tail(&lambdas, statistic)
}

fn permutation_pvalue(
    ea: &DMatrix<f64>,
    eb: &DMatrix<f64>,
    statistic: f64,
    draws: usize,
    rng: &mut ChaCha12Rng,
) -> Result<f64, CiError> {
    if draws == 0 {
        return Err(CiError::BadParameter("permutation needs draws > 0".into()));
    }
    let n = ea.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut exceedances = 0usize;
    for _ in 0..draws {
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let permuted = eb.select_rows(order.iter());
        let cov = ea.transpose() * permuted / n as f64;
        if n as f64 * cov.norm_squared() >= statistic {
            exceedances += 1;
        }
    }
    Ok((1 + exceedances) as f64 / (draws + 1) as f64)
}

/// P-value for kernel conditional independence of `a` and `b` given
/// `cond`; pass a zero-column `cond` for marginal independence.
pub fn rcot_pvalue(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    cond: &DMatrix<f64>,
    params: &RcotParams,
    seed: u64,
) -> Result<f64, CiError> {
    check_groups(a, b, cond)?;
    if params.features_tested == 0 || params.features_cond == 0 {
        return Err(CiError::BadParameter("feature counts must be positive".into()));
    }
    let n = a.nrows();
    if n < MIN_ROWS {
        return Err(CiError::TooFewSamples { needed: MIN_ROWS, got: n });
    }

    let standardized_a = standardize_columns(a);
    let standardized_b = standardize_columns(b);
    let mut rng_a = derive_rng(seed, &[TAG_RCOT, STREAM_A]);
    let mut rng_b = derive_rng(seed, &[TAG_RCOT, STREAM_B]);
    let mut fa = fourier_features(
        &standardized_a,
        params.features_tested,
        median_bandwidth(&standardized_a),
        &mut rng_a,
    );
    let mut fb = fourier_features(
        &standardized_b,
        params.features_tested,
        median_bandwidth(&standardized_b),
        &mut rng_b,
    );
    center_columns(&mut fa);
    center_columns(&mut fb);

    let (ea, eb) = if cond.ncols() == 0 {
        (fa, fb)
    } else {
        let standardized_cond = standardize_columns(cond);
        let mut rng_cond = derive_rng(seed, &[TAG_RCOT, STREAM_COND]);
        let mut fc = fourier_features(
            &standardized_cond,
            params.features_cond,
            median_bandwidth(&standardized_cond),
            &mut rng_cond,
        );
        center_columns(&mut fc);
        let mut regularized = fc.transpose() * &fc / n as f64;
        let trace = regularized.trace();
        let ridge = if trace > 1e-300 {
            RIDGE_FACTOR * trace / regularized.nrows() as f64
        } else {
            RIDGE_FACTOR
        };
        for i in 0..regularized.nrows() {
            regularized[(i, i)] += ridge;
        }
        let factor = regularized
            .cholesky()
            .expect("ridge keeps the feature covariance positive definite");
        let beta_a = factor.solve(&(fc.transpose() * &fa / n as f64));
        let beta_b = factor.solve(&(fc.transpose() * &fb / n as f64));
        (fa - &fc * beta_a, fb - &fc * beta_b)
    };

    let cov = ea.transpose() * &eb / n as f64;
    let statistic = n as f64 * cov.norm_squared();
    match params.null {
        NullMethod::Gamma => Ok(gamma_pvalue(&ea, &eb, statistic)),
        NullMethod::Permutation { draws } => {
            let mut rng = derive_rng(seed, &[TAG_RCOT, STREAM_PERMUTE]);
            permutation_pvalue(&ea, &eb, statistic, draws, &mut rng)
        }
    }
}
