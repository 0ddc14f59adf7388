//! Precision and recall for distributions over clustered embeddings.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::squared_distance;
use crate::rng;

pub const DEFAULT_BINS: usize = 20;
pub const DEFAULT_ANGLES: usize = 1001;

#[derive(Clone, Debug, PartialEq)]
pub struct PrdCurve {
    pub lambdas: Vec<f64>,
    /// α(λ) for each grid point.
    pub precision: Vec<f64>,
    /// β(λ) for each grid point.
    pub recall: Vec<f64>,
    pub bins: usize,
    pub cluster_seed: u64,
}

impl PrdCurve {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// `tan θ_i` for `θ_i = i · (π/2) / (n + 1)`, `i = 1..=n`. The middle point of
/// an odd grid is exactly 1.
pub fn lambda_grid(num_angles: usize) -> Vec<f64> {
    let step = std::f64::consts::FRAC_PI_2 / (num_angles + 1) as f64;
    (1..=num_angles)
        .map(|i| if 2 * i == num_angles + 1 { 1.0 } else { (i as f64 * step).tan() })
        .collect()
}

fn check_histogram(h: &[f64], name: &str) -> Result<()> {
    if h.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::arg(format!("histogram {name} has negative or non-finite mass")));
    }
    let sum: f64 = h.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::arg(format!("histogram {name} sums to {sum}, not 1")));
    }
    Ok(())
}

/// `α(λ) = Σ min(λ P, Q)` and `β(λ) = Σ min(P, Q / λ)` over the grid.
pub fn prd_curve(p: &[f64], q: &[f64], num_angles: usize) -> Result<PrdCurve> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::arg(format!("histograms must have equal nonzero length ({} vs {})", p.len(), q.len())));
    }
    if num_angles < 2 {
        return Err(Error::arg("PRD needs at least 2 angles"));
    }
    check_histogram(p, "P")?;
    check_histogram(q, "Q")?;
    let lambdas = lambda_grid(num_angles);
    let mut precision = Vec::with_capacity(num_angles);
    let mut recall = Vec::with_capacity(num_angles);
    for &l in &lambdas {
        let a: f64 = p.iter().zip(q).map(|(&pw, &qw)| (l * pw).min(qw)).sum();
        let b: f64 = p.iter().zip(q).map(|(&pw, &qw)| pw.min(qw / l)).sum();
        precision.push(a.clamp(0.0, 1.0));
        recall.push(b.clamp(0.0, 1.0));
    }
    Ok(PrdCurve { lambdas, precision, recall, bins: p.len(), cluster_seed: 0 })
}

/// `(1 + b²) α β / (b² α + β)`, with `0/0 = 0`.
pub fn f_beta(alpha: f64, beta: f64, b: f64) -> f64 {
    let den = b * b * alpha + beta;
    if den <= 0.0 {
        0.0
    } else {
        (1.0 + b * b) * alpha * beta / den
    }
}

/// `(F_8, F_{1/8})`, each maximized over the curve.
pub fn f_beta_summary(curve: &PrdCurve) -> (f64, f64) {
    let best = |b: f64| {
        curve
            .precision
            .iter()
            .zip(&curve.recall)
            .map(|(&a, &r)| f_beta(a, r, b))
            .fold(0.0, f64::max)
    };
    (best(8.0), best(1.0 / 8.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

/// Index of the nearest centroid for each row; ties go to the lowest index.
fn assign(rows: &[&[f64]], centroids: &Array2<f64>) -> Vec<usize> {
    let c = centroids.as_standard_layout();
    let width = c.ncols();
    let flat = c.as_slice().expect("standard layout");
    rows.par_iter()
        .map(|x| {
            let mut best = (0, f64::INFINITY);
            for (j, cj) in flat.chunks_exact(width.max(1)).enumerate() {
                let d = squared_distance(x, cj);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best.0
        })
        .collect()
}

/// Lloyd iterations from a k-means++ start. Stops after `max_iter` rounds or
/// when the total centroid shift falls below `1e-6` of the centroid scale.
/// An empty cluster keeps its previous centroid.
pub fn kmeans(data: ArrayView2<f64>, k: usize, seed: u64, max_iter: usize) -> Result<KMeans> {
    let (n, d) = data.dim();
    if k == 0 || n < k {
        return Err(Error::arg(format!("k-means needs 1 ≤ k ≤ rows, got k = {k} with {n} rows")));
    }
    let owned = data.as_standard_layout();
    let rows: Vec<&[f64]> = if d == 0 {
        vec![&[][..]; n]
    } else {
        owned.as_slice().expect("standard layout").chunks_exact(d).collect()
    };
    let mut r = rng::rng(rng::derive(seed, "kmeans"));
    let mut centroids = Array2::zeros((k, d));
    let first = r.random_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut dist: Vec<f64> = rows.iter().map(|x| squared_distance(x, rows[first])).collect();
    for j in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = r.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                acc += w;
                if acc > target {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            r.random_range(0..n)
        };
        centroids.row_mut(j).assign(&data.row(pick));
        for (i, x) in rows.iter().enumerate() {
            dist[i] = dist[i].min(squared_distance(x, rows[pick]));
        }
    }
    let mut assignments = assign(&rows, &centroids);
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (x, &a) in data.rows().into_iter().zip(&assignments) {
            sums.row_mut(a).scaled_add(1.0, &x);
            counts[a] += 1;
        }
        let mut shift = 0.0;
        let mut scale = 0.0;
        for (j, &count) in counts.iter().enumerate() {
            if count > 0 {
                let new = sums.row(j).mapv(|v| v / count as f64);
                shift += (&new - &centroids.row(j)).mapv(|v| v * v).sum();
                centroids.row_mut(j).assign(&new);
            }
            scale += centroids.row(j).mapv(|v| v * v).sum();
        }
        assignments = assign(&rows, &centroids);
        if shift <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(KMeans { centroids, assignments, iterations })
}

/// Cluster both feature sets together into `bins` clusters and return the
/// normalized cluster histograms of the real rows and generated rows.
pub fn prd_histograms(real: ArrayView2<f64>, gen: ArrayView2<f64>, bins: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if real.nrows() != gen.nrows() {
        return Err(Error::arg(format!("PRD needs equal sample counts, got {} real and {} generated", real.nrows(), gen.nrows())));
    }
    if bins < 2 {
        return Err(Error::arg("PRD needs at least 2 bins"));
    }
    if real.ncols() != gen.ncols() {
        return Err(Error::arg("real and generated features differ in width"));
    }
    // Cluster in a canonical block order so swapping the inputs swaps the output.
    let swapped = gen.iter().partial_cmp(real.iter()) == Some(std::cmp::Ordering::Less);
    let (first, second) = if swapped { (gen, real) } else { (real, gen) };
    let all = concatenate(Axis(0), &[first, second]).expect("same width");
    let km = kmeans(all.view(), bins, seed, 100)?;
    let n = real.nrows();
    let mut p = vec![0.0; bins];
    let mut q = vec![0.0; bins];
    for &a in &km.assignments[..n] {
        p[a] += 1.0;
    }
    for &a in &km.assignments[n..] {
        q[a] += 1.0;
    }
    for v in p.iter_mut().chain(q.iter_mut()) {
        *v /= n as f64;
    }
    Ok(if swapped { (q, p) } else { (p, q) })
}
