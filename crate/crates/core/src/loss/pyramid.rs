//! Laplacian pyramid on NCHW batches: 5-tap binomial blur with clamped
//! borders, factor-2 decimation and zero-insertion upsampling. Every operator
//! is linear and has an explicit adjoint for backpropagation.

use ndarray::Array4;

const TAPS: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable blur along one spatial axis (2 = rows, 3 = columns).
fn blur_axis(x: &Array4<f64>, axis: usize, adjoint: bool) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let mut out = Array4::<f64>::zeros((n, c, h, w));
    let len = if axis == 2 { h } else { w };
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let pos = if axis == 2 { y } else { xx };
                    let v = x[[b, ch, y, xx]];
                    for (t, &k) in TAPS.iter().enumerate() {
                        let src = clamp_index(pos as isize + t as isize - 2, len);
                        let (sy, sx) = if axis == 2 { (src, xx) } else { (y, src) };
                        if adjoint {
                            // forward: out[pos] += k * x[src]  =>  adjoint: out[src] += k * g[pos]
                            out[[b, ch, sy, sx]] += k * v;
                        } else {
                            out[[b, ch, y, xx]] += k * x[[b, ch, sy, sx]];
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn blur(x: &Array4<f64>) -> Array4<f64> {
    blur_axis(&blur_axis(x, 3, false), 2, false)
}

pub fn blur_adjoint(g: &Array4<f64>) -> Array4<f64> {
    blur_axis(&blur_axis(g, 2, true), 3, true)
}

/// Blur then keep even rows and columns: `h × w → ⌈h/2⌉ × ⌈w/2⌉`.
pub fn downsample(x: &Array4<f64>) -> Array4<f64> {
    let b = blur(x);
    let (n, c, h, w) = b.dim();
    Array4::from_shape_fn((n, c, h.div_ceil(2), w.div_ceil(2)), |(i, ch, y, xx)| b[[i, ch, 2 * y, 2 * xx]])
}

pub fn downsample_adjoint(g: &Array4<f64>, h: usize, w: usize) -> Array4<f64> {
    blur_adjoint(&zero_insert(g, h, w))
}

fn zero_insert(x: &Array4<f64>, h: usize, w: usize) -> Array4<f64> {
    let (n, c, sh, sw) = x.dim();
    let mut out = Array4::<f64>::zeros((n, c, h, w));
    for i in 0..n {
        for ch in 0..c {
            for y in 0..sh.min(h.div_ceil(2)) {
                for xx in 0..sw.min(w.div_ceil(2)) {
                    out[[i, ch, 2 * y, 2 * xx]] = x[[i, ch, y, xx]];
                }
            }
        }
    }
    out
}

/// Zero-insert to `h × w`, blur, and scale by 4 to preserve mean intensity.
pub fn upsample(x: &Array4<f64>, h: usize, w: usize) -> Array4<f64> {
    blur(&zero_insert(x, h, w)) * 4.0
}

pub fn upsample_adjoint(g: &Array4<f64>, sh: usize, sw: usize) -> Array4<f64> {
    let b = blur_adjoint(g) * 4.0;
    let (n, c, _, _) = b.dim();
    Array4::from_shape_fn((n, c, sh, sw), |(i, ch, y, xx)| b[[i, ch, 2 * y, 2 * xx]])
}

/// Band-pass levels `L_0 … L_{levels-2}` followed by the low-pass residue.
pub fn laplacian_pyramid(x: &Array4<f64>, levels: usize) -> Vec<Array4<f64>> {
    let mut gauss = vec![x.clone()];
    for _ in 1..levels {
        let next = downsample(gauss.last().unwrap());
        gauss.push(next);
    }
    let mut bands = Vec::with_capacity(levels);
    for j in 0..levels - 1 {
        let (_, _, h, w) = gauss[j].dim();
        bands.push(&gauss[j] - &upsample(&gauss[j + 1], h, w));
    }
    bands.push(gauss.pop().unwrap());
    bands
}

/// Backpropagate per-level gradients `dℓ/dL_j` to the pyramid input of size `h × w`.
pub fn laplacian_pyramid_adjoint(band_grads: &[Array4<f64>], h: usize, w: usize) -> Array4<f64> {
    let levels = band_grads.len();
    let mut sizes = vec![(h, w)];
    for _ in 1..levels {
        let (ph, pw) = *sizes.last().unwrap();
        sizes.push((ph.div_ceil(2), pw.div_ceil(2)));
    }
    let mut g_next = band_grads[levels - 1].clone();
    for j in (0..levels - 1).rev() {
        let (nh, nw) = sizes[j + 1];
        let total = &g_next - &upsample_adjoint(&band_grads[j], nh, nw);
        let (ch, cw) = sizes[j];
        g_next = &band_grads[j] + &downsample_adjoint(&total, ch, cw);
    }
    g_next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normal;

    fn rand4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let n = shape.0 * shape.1 * shape.2 * shape.3;
        Array4::from_shape_vec(shape, standard_normal(1, n, seed).into_raw_vec_and_offset().0).unwrap()
    }

    fn dot(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
        (a * b).sum()
    }

    #[test]
    fn operators_have_matching_adjoints() {
        let x = rand4((2, 1, 7, 6), 1);
        let y = rand4((2, 1, 7, 6), 2);
        assert!((dot(&blur(&x), &y) - dot(&x, &blur_adjoint(&y))).abs() < 1e-10);

        let yd = rand4((2, 1, 4, 3), 3);
        assert!((dot(&downsample(&x), &yd) - dot(&x, &downsample_adjoint(&yd, 7, 6))).abs() < 1e-10);

        let xs = rand4((2, 1, 4, 3), 4);
        assert!((dot(&upsample(&xs, 7, 6), &y) - dot(&xs, &upsample_adjoint(&y, 4, 3))).abs() < 1e-10);
    }

    #[test]
    fn blur_preserves_constants() {
        let x = Array4::from_elem((1, 1, 5, 5), 0.7);
        for v in blur(&x).iter() {
            assert!((v - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn pyramid_adjoint_matches_inner_products() {
        let x = rand4((1, 2, 8, 8), 5);
        let bands = laplacian_pyramid(&x, 3);
        let gs: Vec<_> = bands.iter().enumerate().map(|(i, b)| rand4(b.dim(), 10 + i as u64)).collect();
        let lhs: f64 = bands.iter().zip(&gs).map(|(b, g)| dot(b, g)).sum();
        let rhs = dot(&x, &laplacian_pyramid_adjoint(&gs, 8, 8));
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
