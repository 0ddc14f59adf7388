//! Dense matrix products routed through one gemm kernel.
//!
//! Every product in the crate goes through [`matmul`] so that a row of the
//! output depends only on the corresponding row of the left operand. Batched
//! and one-at-a-time evaluation of a network therefore agree bit-for-bit.

use ndarray::{Array2, ArrayView2};

/// `a · b` for arbitrary (possibly transposed) views.
pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (m, k) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "inner dimensions differ: {k} vs {k2}");
    let mut c = Array2::<f64>::zeros((m, n));
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    let (rsa, csa) = strides(&a);
    let (rsb, csb) = strides(&b);
    // SAFETY: pointers and strides come from live ndarray views of the
    // stated dimensions; `c` is a freshly allocated standard-layout array.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

fn strides(v: &ArrayView2<f64>) -> (isize, isize) {
    let s = v.strides();
    (s[0], s[1])
}

/// Squared Euclidean distance with four interleaved accumulators.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        for l in 0..4 {
            let d = a[j + l] - b[j + l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        let d = a[j] - b[j];
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normal;
    use ndarray::s;

    fn naive(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        let mut c = Array2::zeros((a.nrows(), b.ncols()));
        for i in 0..a.nrows() {
            for j in 0..b.ncols() {
                c[[i, j]] = (0..a.ncols()).map(|l| a[[i, l]] * b[[l, j]]).sum();
            }
        }
        c
    }

    #[test]
    fn matches_naive_product_with_transposes() {
        let a = standard_normal(7, 5, 1);
        let b = standard_normal(9, 5, 2);
        let got = matmul(a.view(), b.t());
        let want = naive(&a, &b.t().to_owned());
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_are_independent_of_batch() {
        let a = standard_normal(40, 33, 3);
        let b = standard_normal(33, 50, 4);
        let full = matmul(a.view(), b.view());
        for i in [0, 13, 39] {
            let one = matmul(a.slice(s![i..i + 1, ..]), b.view());
            assert_eq!(one.row(0), full.row(i));
        }
    }

    #[test]
    fn squared_distance_handles_tails() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let b = [0.0; 7];
        assert_eq!(squared_distance(&a, &b), 140.0);
        assert_eq!(squared_distance(&a, &a), 0.0);
    }
}
