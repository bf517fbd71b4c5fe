//! Weighted ridge surrogate and coefficient ranking.
//!
//! The fit minimizes
//!
//! ```text
//! Σᵢ wᵢ (yᵢ − β₀ − xᵢ·β)² + λ‖β‖²
//! ```
//!
//! with an unpenalized intercept β₀, by forming the (F+1)-dimensional normal
//! equations `(X̃ᵀWX̃ + P) θ = X̃ᵀWy` where `X̃ = [X | 1]` and `P` is `λ` on
//! the diagonal except for a 0 in the intercept slot, then solving them with
//! a Cholesky factorization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::Mask;

/// Dense row-major design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "design data has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(DesignMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "design row {i} has {} values, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(DesignMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// 0/1 design from masks; with several mask slices per sample the
    /// columns are concatenated in slice order.
    pub fn from_masks<'a, I>(samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = Vec<&'a Mask>>,
    {
        let rows: Vec<Vec<f64>> = samples
            .into_iter()
            .map(|parts| {
                parts
                    .iter()
                    .flat_map(|m| m.bits().iter().map(|b| if *b { 1.0 } else { 0.0 }))
                    .collect()
            })
            .collect();
        DesignMatrix::from_rows(&rows)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeOptions {
    pub lambda: f64,
    pub fit_intercept: bool,
}

impl Default for RidgeOptions {
    fn default() -> Self {
        RidgeOptions {
            lambda: 1.0,
            fit_intercept: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub weighted_r2: f64,
}

impl SurrogateFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// In-place Cholesky solve of the symmetric positive definite system
/// `a x = b` (`a` row-major `n x n`). Fails when a pivot is not clearly
/// positive relative to the largest diagonal entry.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize) -> Result<()> {
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    let tol = scale * 1e-13;
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d.is_nan() || d <= tol {
            return Err(Error::Singular);
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    // L y = b
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    // Lᵀ x = y
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    Ok(())
}

pub fn fit_weighted_ridge(
    design: &DesignMatrix,
    targets: &[f64],
    weights: &[f64],
    options: RidgeOptions,
) -> Result<SurrogateFit> {
    let s = design.rows();
    let f = design.cols();
    if s < 2 {
        return Err(Error::Argument(format!("need at least 2 samples (got {s})")));
    }
    if targets.len() != s || weights.len() != s {
        return Err(Error::DimensionMismatch(format!(
            "design has {s} rows, targets {}, weights {}",
            targets.len(),
            weights.len()
        )));
    }
    if !(options.lambda.is_finite() && options.lambda >= 0.0) {
        return Err(Error::Argument(format!(
            "lambda must be >= 0 (got {})",
            options.lambda
        )));
    }
    if design.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("design matrix"));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("targets"));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::Argument("weights must be finite and positive".into()));
    }

    let n = if options.fit_intercept { f + 1 } else { f };
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    let mut xt = vec![0.0; n];
    for i in 0..s {
        xt[..f].copy_from_slice(design.row(i));
        if options.fit_intercept {
            xt[f] = 1.0;
        }
        let w = weights[i];
        for p in 0..n {
            let wx = w * xt[p];
            if wx == 0.0 {
                continue;
            }
            b[p] += wx * targets[i];
            for q in 0..=p {
                a[p * n + q] += wx * xt[q];
            }
        }
    }
    for p in 0..n {
        for q in 0..p {
            a[q * n + p] = a[p * n + q];
        }
    }
    for p in 0..f {
        a[p * n + p] += options.lambda;
    }
    cholesky_solve(&mut a, &mut b, n)?;

    let coefficients = b[..f].to_vec();
    let intercept = if options.fit_intercept { b[f] } else { 0.0 };
    if coefficients.iter().any(|c| !c.is_finite()) || !intercept.is_finite() {
        return Err(Error::NonFinite("surrogate coefficients"));
    }
    let mut fit = SurrogateFit {
        coefficients,
        intercept,
        lambda: options.lambda,
        weighted_r2: 0.0,
    };
    fit.weighted_r2 = weighted_r2(&fit, design, targets, weights);
    Ok(fit)
}

fn weighted_r2(fit: &SurrogateFit, design: &DesignMatrix, y: &[f64], w: &[f64]) -> f64 {
    let wsum: f64 = w.iter().sum();
    let mean = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / wsum;
    let mut rss = 0.0;
    let mut tss = 0.0;
    for i in 0..design.rows() {
        let r = y[i] - fit.predict(design.row(i));
        rss += w[i] * r * r;
        tss += w[i] * (y[i] - mean) * (y[i] - mean);
    }
    let tiny = 1e-300;
    if tss <= tiny {
        return if rss <= tiny { 1.0 } else { 0.0 };
    }
    1.0 - rss / tss
}

/// The `min(k, len)` largest coefficients by magnitude, as
/// `(index, signed coefficient)`, ties broken by ascending index.
pub fn rank_coefficients(coefficients: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..coefficients.len()).collect();
    idx.sort_by(|&a, &b| {
        coefficients[b]
            .abs()
            .total_cmp(&coefficients[a].abs())
            .then(a.cmp(&b))
    });
    idx.into_iter()
        .take(k)
        .map(|i| (i, coefficients[i]))
        .collect()
}

pub fn rank_features(fit: &SurrogateFit, k: usize) -> Vec<(usize, f64)> {
    rank_coefficients(&fit.coefficients, k)
}
