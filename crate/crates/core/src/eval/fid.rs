//! Fréchet distance between Gaussians fitted to feature sets.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg::matmul;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
    pub count: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Mean and unbiased, symmetrized covariance of the rows.
pub fn gaussian_stats(features: ArrayView2<f64>) -> Result<GaussianStats> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::arg(format!("need at least 2 feature rows for covariance, got {n}")));
    }
    let mean = features.mean_axis(Axis(0)).expect("nonempty");
    let centered = &features - &mean;
    let cov = matmul(centered.t(), centered.view()) / (n - 1) as f64;
    let cov = (&cov + &cov.t()) * 0.5;
    Ok(GaussianStats { mean, cov, count: n })
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Eigenvalues below `-1e-6 · max(1, λ_max)` are an error; the rest are clamped at 0.
fn clamped_eigen(s: &Array2<f64>, what: &str) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let sym = (s + &s.t()) * 0.5;
    let eig = SymmetricEigen::new(to_na(&sym));
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = 1e-6 * top.max(1.0);
    let mut vals = Vec::with_capacity(eig.eigenvalues.len());
    for &l in eig.eigenvalues.iter() {
        if l.is_nan() || l < -tol {
            return Err(Error::Numeric(format!("{what} has eigenvalue {l}, not positive semi-definite")));
        }
        vals.push(l.max(0.0));
    }
    Ok((vals, eig.eigenvectors))
}

fn apply(vecs: &DMatrix<f64>, f: impl Fn(usize) -> f64) -> Array2<f64> {
    let d = vecs.nrows();
    let scaled = DMatrix::from_fn(d, d, |i, j| vecs[(i, j)] * f(j));
    from_na(&(scaled * vecs.transpose()))
}

fn check_pair(s1: &Array2<f64>, s2: &Array2<f64>) -> Result<()> {
    if !s1.is_square() || s1.dim() != s2.dim() {
        return Err(Error::arg(format!("matrices must be square and equal in size: {:?} vs {:?}", s1.dim(), s2.dim())));
    }
    Ok(())
}

/// Eigenvalues of `S1^{1/2} S2 S1^{1/2}`, whose square roots sum to `tr (S1 S2)^{1/2}`.
#[allow(clippy::type_complexity)]
fn similar_product_eigen(
    s1: &Array2<f64>,
    s2: &Array2<f64>,
) -> Result<(Array2<f64>, Vec<f64>, DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    check_pair(s1, s2)?;
    let (l1, v1) = clamped_eigen(s1, "first covariance")?;
    clamped_eigen(s2, "second covariance")?;
    let root1 = apply(&v1, |j| l1[j].sqrt());
    let m = matmul(matmul(root1.view(), s2.view()).view(), root1.view());
    let (mu, w) = clamped_eigen(&m, "covariance product")?;
    Ok((root1, l1, v1, mu, w))
}

/// Principal square root of `S1 S2`, computed as
/// `S1^{1/2} (S1^{1/2} S2 S1^{1/2})^{1/2} S1^{-1/2}` with a pseudo-inverse
/// on the null space of `S1`.
pub fn matrix_sqrt_product(s1: &Array2<f64>, s2: &Array2<f64>) -> Result<Array2<f64>> {
    let (root1, l1, v1, mu, w) = similar_product_eigen(s1, s2)?;
    let top = l1.iter().cloned().fold(0.0, f64::max);
    let inv_root1 = apply(&v1, |j| if l1[j] > 1e-12 * top.max(1e-300) { 1.0 / l1[j].sqrt() } else { 0.0 });
    let root_m = apply(&w, |j| mu[j].sqrt());
    Ok(matmul(matmul(root1.view(), root_m.view()).view(), inv_root1.view()))
}

/// `tr (S1 S2)^{1/2}`.
pub fn trace_sqrt_product(s1: &Array2<f64>, s2: &Array2<f64>) -> Result<f64> {
    let (_, _, _, mu, _) = similar_product_eigen(s1, s2)?;
    Ok(mu.iter().map(|m| m.sqrt()).sum())
}

/// `‖μ_r − μ_g‖² + tr(Σ_r + Σ_g − 2 (Σ_r Σ_g)^{1/2})`.
pub fn fid(real: &GaussianStats, gen: &GaussianStats) -> Result<f64> {
    if real.dim() != gen.dim() {
        return Err(Error::arg(format!("feature dimensions differ: {} vs {}", real.dim(), gen.dim())));
    }
    if real.mean == gen.mean && real.cov == gen.cov {
        return Ok(0.0);
    }
    let diff = &real.mean - &gen.mean;
    let mean_term = diff.dot(&diff);
    let tr = real.cov.diag().sum() + gen.cov.diag().sum() - 2.0 * trace_sqrt_product(&real.cov, &gen.cov)?;
    let v = mean_term + tr;
    if v < 0.0 && v > -1e-6 {
        return Ok(0.0);
    }
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Numeric(format!("FID evaluated to {v}")));
    }
    Ok(v)
}
