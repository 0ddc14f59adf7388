//! Reconstruction losses between image batches.
//!
//! All losses are per-element means so that learning rates carry over
//! between resolutions. Every kind returns a gradient with respect to its
//! first argument.

mod perceptual;
pub mod pyramid;

pub use perceptual::{ExtractorKind, ExtractorSpec, FeatureExtractor};

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::datasets::ImageShape;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    L2,
    LapPyramid,
    Perceptual,
    MultiscalePerceptual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Read by `lap-pyramid`.
    pub pyramid_levels: usize,
    /// Read by `multiscale-perceptual`.
    pub subsample_levels: usize,
    /// Read by `perceptual` and `multiscale-perceptual`.
    pub extractor: ExtractorSpec,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            kind: LossKind::Perceptual,
            pyramid_levels: 3,
            subsample_levels: 2,
            extractor: ExtractorSpec::default(),
        }
    }
}

impl LossSpec {
    pub fn l2() -> Self {
        Self { kind: LossKind::L2, ..Self::default() }
    }

    pub fn lap_pyramid(levels: usize) -> Self {
        Self { kind: LossKind::LapPyramid, pyramid_levels: levels, ..Self::default() }
    }
}

/// A loss ready to evaluate on images of one shape.
#[derive(Clone, Debug)]
pub enum Loss {
    L2,
    LapPyramid { levels: usize },
    Perceptual(FeatureExtractor),
    Multiscale { base: Box<Loss>, levels: usize },
}

impl Loss {
    pub fn from_spec(spec: &LossSpec, shape: ImageShape) -> Result<Self> {
        let loss = match spec.kind {
            LossKind::L2 => Loss::L2,
            LossKind::LapPyramid => {
                if spec.pyramid_levels == 0 {
                    return Err(Error::Config("pyramid_levels must be at least 1".into()));
                }
                Loss::LapPyramid { levels: spec.pyramid_levels }
            }
            LossKind::Perceptual => Loss::Perceptual(FeatureExtractor::from_spec(&spec.extractor, shape.channels)?),
            LossKind::MultiscalePerceptual => {
                if spec.subsample_levels == 0 {
                    return Err(Error::Config("subsample_levels must be at least 1".into()));
                }
                Loss::Multiscale {
                    base: Box::new(Loss::Perceptual(FeatureExtractor::from_spec(&spec.extractor, shape.channels)?)),
                    levels: spec.subsample_levels,
                }
            }
        };
        Ok(loss)
    }

    pub fn value(&self, a: &Array4<f64>, b: &Array4<f64>) -> Result<f64> {
        match self {
            Loss::L2 => l2_loss(a, b),
            Loss::LapPyramid { levels } => laplacian_pyramid_loss(a, b, *levels),
            Loss::Perceptual(fx) => fx.loss(a, b),
            Loss::Multiscale { base, levels } => multiscale_loss(a, b, base, *levels),
        }
    }

    pub fn value_and_grad(&self, a: &Array4<f64>, b: &Array4<f64>) -> Result<(f64, Array4<f64>)> {
        match self {
            Loss::L2 => {
                check_same_shape(a, b)?;
                Ok(l2_value_and_grad(a, b))
            }
            Loss::LapPyramid { levels } => laplacian_pyramid_value_and_grad(a, b, *levels),
            Loss::Perceptual(fx) => fx.loss_and_grad(a, b),
            Loss::Multiscale { base, levels } => multiscale_value_and_grad(a, b, base, *levels),
        }
    }

    /// Loss of each image pair separately.
    pub fn per_image(&self, a: &Array4<f64>, b: &Array4<f64>) -> Result<Vec<f64>> {
        check_same_shape(a, b)?;
        (0..a.dim().0)
            .map(|i| {
                let r = ndarray::s![i..i + 1, .., .., ..];
                self.value(&a.slice(r).to_owned(), &b.slice(r).to_owned())
            })
            .collect()
    }
}

pub(crate) fn check_same_shape(a: &Array4<f64>, b: &Array4<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::arg(format!("loss inputs differ in shape: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn mean_or_zero(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub(crate) fn l2_value_and_grad(a: &Array4<f64>, b: &Array4<f64>) -> (f64, Array4<f64>) {
    let diff = a - b;
    let n = diff.len();
    let v = mean_or_zero(diff.iter().map(|d| d * d).sum(), n);
    let g = diff * (2.0 / n.max(1) as f64);
    (v, g)
}

/// Mean over all elements of the squared difference.
pub fn l2_loss(a: &Array4<f64>, b: &Array4<f64>) -> Result<f64> {
    check_same_shape(a, b)?;
    let n = a.len();
    let sum = ndarray::Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + (x - y) * (x - y));
    Ok(mean_or_zero(sum, n))
}

fn check_pyramid(a: &Array4<f64>, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::arg("pyramid levels must be at least 1"));
    }
    let (_, _, h, w) = a.dim();
    let need = 1usize << (levels - 1);
    if h < need || w < need {
        return Err(Error::arg(format!("{h}x{w} images are too small for a {levels}-level pyramid (need {need})")));
    }
    Ok(())
}

/// `Σ_j 4^{-j} · mean|Lap_j(a) − Lap_j(b)|`.
pub fn laplacian_pyramid_loss(a: &Array4<f64>, b: &Array4<f64>, levels: usize) -> Result<f64> {
    check_same_shape(a, b)?;
    check_pyramid(a, levels)?;
    let bands = pyramid::laplacian_pyramid(&(a - b), levels);
    Ok(bands
        .iter()
        .enumerate()
        .map(|(j, band)| 0.25f64.powi(j as i32) * mean_or_zero(band.iter().map(|v| v.abs()).sum(), band.len()))
        .sum())
}

fn laplacian_pyramid_value_and_grad(a: &Array4<f64>, b: &Array4<f64>, levels: usize) -> Result<(f64, Array4<f64>)> {
    check_same_shape(a, b)?;
    check_pyramid(a, levels)?;
    let bands = pyramid::laplacian_pyramid(&(a - b), levels);
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(levels);
    for (j, band) in bands.iter().enumerate() {
        let scale = 0.25f64.powi(j as i32) / band.len().max(1) as f64;
        value += scale * band.iter().map(|v| v.abs()).sum::<f64>();
        grads.push(band.mapv(|v| scale * sign(v)));
    }
    let (_, _, h, w) = a.dim();
    Ok((value, pyramid::laplacian_pyramid_adjoint(&grads, h, w)))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sum of weighted per-tap feature MSEs plus the weighted pixel MSE.
pub fn perceptual_feature_loss(a: &Array4<f64>, b: &Array4<f64>, fx: &FeatureExtractor) -> Result<f64> {
    fx.loss(a, b)
}

/// Halve resolution; bilinear interpolation at exactly half scale with
/// half-pixel centers reduces to a 2×2 mean.
pub fn bilinear_half(x: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    Array4::from_shape_fn((n, c, h / 2, w / 2), |(i, ch, y, xx)| {
        0.25 * (x[[i, ch, 2 * y, 2 * xx]]
            + x[[i, ch, 2 * y, 2 * xx + 1]]
            + x[[i, ch, 2 * y + 1, 2 * xx]]
            + x[[i, ch, 2 * y + 1, 2 * xx + 1]])
    })
}

fn bilinear_half_adjoint(g: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = g.dim();
    Array4::from_shape_fn((n, c, 2 * h, 2 * w), |(i, ch, y, xx)| 0.25 * g[[i, ch, y / 2, xx / 2]])
}

fn check_multiscale(a: &Array4<f64>, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::arg("subsample levels must be at least 1"));
    }
    let (_, _, h, w) = a.dim();
    let div = 1usize << (levels - 1);
    if h % div != 0 || w % div != 0 {
        return Err(Error::arg(format!("{h}x{w} images are not divisible by {div} for {levels} scales")));
    }
    Ok(())
}

/// Mean of `base` over scales `1, 1/2, …, 1/2^(levels-1)`.
pub fn multiscale_loss(a: &Array4<f64>, b: &Array4<f64>, base: &Loss, levels: usize) -> Result<f64> {
    check_same_shape(a, b)?;
    check_multiscale(a, levels)?;
    let (mut sa, mut sb) = (a.clone(), b.clone());
    let mut total = 0.0;
    for s in 0..levels {
        if s > 0 {
            sa = bilinear_half(&sa);
            sb = bilinear_half(&sb);
        }
        total += base.value(&sa, &sb)?;
    }
    Ok(total / levels as f64)
}

fn multiscale_value_and_grad(a: &Array4<f64>, b: &Array4<f64>, base: &Loss, levels: usize) -> Result<(f64, Array4<f64>)> {
    check_same_shape(a, b)?;
    check_multiscale(a, levels)?;
    let (mut sa, mut sb) = (a.clone(), b.clone());
    let mut total = 0.0;
    let mut scale_grads = Vec::with_capacity(levels);
    for s in 0..levels {
        if s > 0 {
            sa = bilinear_half(&sa);
            sb = bilinear_half(&sb);
        }
        let (v, g) = base.value_and_grad(&sa, &sb)?;
        total += v;
        scale_grads.push(g);
    }
    let mut g = scale_grads.pop().unwrap();
    while let Some(finer) = scale_grads.pop() {
        g = finer + bilinear_half_adjoint(&g);
    }
    let k = 1.0 / levels as f64;
    Ok((total * k, g * k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layer, Network};
    use crate::rng::{rng, standard_normal};

    fn rand4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let n = shape.0 * shape.1 * shape.2 * shape.3;
        Array4::from_shape_vec(shape, standard_normal(1, n, seed).into_raw_vec_and_offset().0).unwrap()
    }

    fn fd_check(loss: &Loss, a: &Array4<f64>, b: &Array4<f64>, tol: f64) {
        let (_, g) = loss.value_and_grad(a, b).unwrap();
        let h = 1e-6;
        for i in 0..a.len() {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap.as_slice_mut().unwrap()[i] += h;
            am.as_slice_mut().unwrap()[i] -= h;
            let fd = (loss.value(&ap, b).unwrap() - loss.value(&am, b).unwrap()) / (2.0 * h);
            let an = g.as_slice().unwrap()[i];
            let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-8);
            assert!(rel < tol, "element {i}: fd {fd} vs analytic {an}");
        }
    }

    #[test]
    fn l2_constant_images() {
        let a = Array4::from_elem((2, 1, 3, 3), -1.0);
        let b = Array4::from_elem((2, 1, 3, 3), 1.0);
        assert_eq!(l2_loss(&a, &b).unwrap(), 4.0);
        assert_eq!(l2_loss(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn l2_matches_elementwise_loop() {
        let a = rand4((2, 3, 4, 5), 1);
        let b = rand4((2, 3, 4, 5), 2);
        let mut sum = 0.0;
        for n in 0..2 {
            for c in 0..3 {
                for y in 0..4 {
                    for x in 0..5 {
                        let d = a[[n, c, y, x]] - b[[n, c, y, x]];
                        sum += d * d;
                    }
                }
            }
        }
        assert!((l2_loss(&a, &b).unwrap() - sum / 120.0).abs() < 1e-14);
    }

    #[test]
    fn shape_mismatch_is_argument_error() {
        let a = rand4((1, 1, 4, 4), 1);
        let b = rand4((1, 1, 4, 5), 2);
        assert!(matches!(l2_loss(&a, &b), Err(Error::Argument(_))));
        assert!(matches!(Loss::L2.value_and_grad(&a, &b), Err(Error::Argument(_))));
    }

    #[test]
    fn single_level_pyramid_is_mean_absolute_difference() {
        let a = rand4((2, 1, 5, 5), 3);
        let b = rand4((2, 1, 5, 5), 4);
        let mad: f64 = (&a - &b).iter().map(|v| v.abs()).sum::<f64>() / a.len() as f64;
        assert!((laplacian_pyramid_loss(&a, &b, 1).unwrap() - mad).abs() < 1e-14);
    }

    #[test]
    fn pyramid_rejects_small_images() {
        let a = rand4((1, 1, 4, 4), 5);
        assert!(matches!(laplacian_pyramid_loss(&a, &a, 4), Err(Error::Argument(_))));
        assert_eq!(laplacian_pyramid_loss(&a, &a, 3).unwrap(), 0.0);
    }

    #[test]
    fn identity_extractor_collapses_to_l2() {
        let a = rand4((2, 1, 4, 4), 6);
        let b = rand4((2, 1, 4, 4), 7);
        let fx = FeatureExtractor::identity(1.0, 0.0);
        assert!((perceptual_feature_loss(&a, &b, &fx).unwrap() - l2_loss(&a, &b).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn grayscale_is_replicated_for_rgb_extractor() {
        let a = rand4((1, 1, 6, 6), 8);
        let b = rand4((1, 1, 6, 6), 9);
        let fx = FeatureExtractor::random_conv(3, &[4, 4], 1, vec![], 0.5).unwrap();
        let rgb = |x: &Array4<f64>| ndarray::concatenate(ndarray::Axis(1), &[x.view(), x.view(), x.view()]).unwrap();
        let direct = fx.loss(&rgb(&a), &rgb(&b)).unwrap() - 0.5 * l2_loss(&rgb(&a), &rgb(&b)).unwrap();
        let via_gray = fx.loss(&a, &b).unwrap() - 0.5 * l2_loss(&a, &b).unwrap();
        assert!((direct - via_gray).abs() < 1e-12);
        fd_check(&Loss::Perceptual(fx.clone()), &a, &b, 1e-2);

        let two = rand4((1, 2, 6, 6), 10);
        assert!(matches!(fx.loss(&two, &two), Err(Error::Config(_))));
    }

    #[test]
    fn weighted_taps_sum_independently_computed_mses() {
        let mut r = rng(3);
        let seg0 = Network::new(vec![Layer::conv2d(1, 2, 3, 1, 1, &mut r), Layer::Relu]);
        let seg1 = Network::new(vec![Layer::conv2d(2, 3, 3, 2, 1, &mut r), Layer::Tanh]);
        let fx = FeatureExtractor::new("two", vec![seg0.clone(), seg1.clone()], vec![1.0, 2.0], 0.0, 1).unwrap();
        let a = rand4((2, 1, 6, 6), 11);
        let b = rand4((2, 1, 6, 6), 12);
        let mse = |x: &ndarray::ArrayD<f64>, y: &ndarray::ArrayD<f64>| {
            (x - y).iter().map(|d| d * d).sum::<f64>() / x.len() as f64
        };
        let (a0, b0) = (seg0.forward(&a.clone().into_dyn()), seg0.forward(&b.clone().into_dyn()));
        let (a1, b1) = (seg1.forward(&a0), seg1.forward(&b0));
        let want = mse(&a0, &b0) + 2.0 * mse(&a1, &b1);
        assert!((fx.loss(&a, &b).unwrap() - want).abs() < 1e-13);
    }

    #[test]
    fn multiscale_two_levels_on_l2() {
        let a = rand4((1, 1, 32, 32), 13);
        let b = rand4((1, 1, 32, 32), 14);
        let coarse = |x: &Array4<f64>| {
            Array4::from_shape_fn((1, 1, 16, 16), |(_, _, y, xx)| {
                (x[[0, 0, 2 * y, 2 * xx]] + x[[0, 0, 2 * y + 1, 2 * xx]] + x[[0, 0, 2 * y, 2 * xx + 1]] + x[[0, 0, 2 * y + 1, 2 * xx + 1]]) / 4.0
            })
        };
        let want = 0.5 * (l2_loss(&a, &b).unwrap() + l2_loss(&coarse(&a), &coarse(&b)).unwrap());
        assert!((multiscale_loss(&a, &b, &Loss::L2, 2).unwrap() - want).abs() < 1e-14);
        assert_eq!(multiscale_loss(&a, &b, &Loss::L2, 1).unwrap(), l2_loss(&a, &b).unwrap());
        assert_eq!(multiscale_loss(&a, &a, &Loss::L2, 3).unwrap(), 0.0);
        let odd = rand4((1, 1, 6, 6), 15);
        assert!(multiscale_loss(&odd, &odd, &Loss::L2, 3).is_err());
    }

    #[test]
    fn gradients_match_finite_differences_on_4x4() {
        let a = rand4((1, 1, 4, 4), 16);
        let b = rand4((1, 1, 4, 4), 17);
        fd_check(&Loss::L2, &a, &b, 1e-3);
        fd_check(&Loss::LapPyramid { levels: 3 }, &a, &b, 1e-3);
        let fx = FeatureExtractor::random_conv(1, &[3, 4], 2, vec![], 1.0).unwrap();
        fd_check(&Loss::Perceptual(fx.clone()), &a, &b, 1e-2);
        fd_check(&Loss::Multiscale { base: Box::new(Loss::Perceptual(fx)), levels: 2 }, &a, &b, 1e-2);
    }

    #[test]
    fn extractor_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fx.ckpt");
        let fx = FeatureExtractor::random_conv(1, &[4, 6], 9, vec![], 1.0).unwrap();
        fx.save(&path).unwrap();
        let back = FeatureExtractor::load(&path, vec![], 1.0).unwrap();
        let a = rand4((1, 1, 8, 8), 18);
        let b = rand4((1, 1, 8, 8), 19);
        assert_eq!(fx.loss(&a, &b).unwrap(), back.loss(&a, &b).unwrap());
    }
}
