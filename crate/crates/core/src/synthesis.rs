//! Sampling, inversion and interpolation with a trained generator and mapper,
//! and the Gaussian-fit baseline sampler.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis, Ix2};

use crate::checkpoint::Checkpoint;
use crate::datasets::{unit_to_byte, ImageBatch, ImageShape};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::glo::{project_rows, LatentTable};
use crate::imle::MapperNetwork;
use crate::loss::Loss;
use crate::nn::{Adam, Mode};
use crate::rng;

const CHUNK: usize = 256;

/// A generator and the mapper feeding it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub generator: Generator,
    pub mapper: MapperNetwork,
    pub metadata: BTreeMap<String, String>,
}

impl TrainedModel {
    pub fn new(generator: Generator, mapper: MapperNetwork) -> Result<Self> {
        if mapper.latent_dim != generator.latent_dim {
            return Err(Error::arg(format!(
                "mapper emits {}-d codes but the generator takes {}-d",
                mapper.latent_dim, generator.latent_dim
            )));
        }
        Ok(Self { generator, mapper, metadata: BTreeMap::new() })
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.latent_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.mapper.noise_dim
    }

    pub fn shape(&self) -> ImageShape {
        self.generator.shape
    }

    /// `G(T(e))` for each noise row.
    pub fn decode_noise(&self, e: &Array2<f64>) -> Result<ImageBatch> {
        if e.ncols() != self.noise_dim() {
            return Err(Error::arg(format!("expected {}-d noise, got {}", self.noise_dim(), e.ncols())));
        }
        let [c, h, w] = self.shape().dims();
        let mut parts = Vec::new();
        for start in (0..e.nrows()).step_by(CHUNK) {
            let end = (start + CHUNK).min(e.nrows());
            let z = self.mapper.map(e.slice(s![start..end, ..]))?;
            parts.push(self.generator.decode(z.view())?);
        }
        let pixels = if parts.is_empty() {
            ndarray::Array4::zeros((0, c, h, w))
        } else {
            concatenate(Axis(0), &parts.iter().map(|p| p.view()).collect::<Vec<_>>()).expect("same image shape")
        };
        Ok(ImageBatch::generated(pixels))
    }

    pub fn write_to(&self, ck: &mut Checkpoint) {
        self.generator.write_to(ck);
        self.mapper.write_to(ck);
        for (k, v) in &self.metadata {
            ck.meta.insert(format!("model.{k}"), v.clone());
        }
    }

    pub fn read_from(ck: &Checkpoint) -> Result<Self> {
        let mut m = Self::new(Generator::read_from(ck)?, MapperNetwork::read_from(ck)?)?;
        m.metadata = ck
            .meta
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("model.").map(|k| (k.to_string(), v.clone())))
            .collect();
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&Checkpoint::load(path)?)
    }
}

/// Standard normal noise for sampling, keyed by `seed`.
pub fn sample_noise(n: usize, noise_dim: usize, seed: u64) -> Array2<f64> {
    rng::standard_normal(n, noise_dim, rng::derive(seed, "sample-noise"))
}

/// `G(T(e))` with `e ~ N(0, I)`.
pub fn sample_images(model: &TrainedModel, n: usize, seed: u64) -> Result<ImageBatch> {
    model.decode_noise(&sample_noise(n, model.noise_dim(), seed))
}

/// Full-covariance Gaussian fitted to latent codes.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLatentPrior {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
    /// Lower-triangular `L` with `L Lᵀ = cov + jitter · I`.
    pub factor: Array2<f64>,
    pub jitter: f64,
    /// Weight of the scaled-identity target mixed into the covariance.
    pub shrinkage: f64,
}

const SHRINKAGE: f64 = 1e-4;

pub fn fit_gaussian_prior(table: &LatentTable) -> Result<GaussianLatentPrior> {
    fit_gaussian_rows(table.codes())
}

pub fn fit_gaussian_rows(z: &Array2<f64>) -> Result<GaussianLatentPrior> {
    let (n, d) = z.dim();
    if n == 0 || d == 0 {
        return Err(Error::arg("cannot fit a Gaussian to an empty table"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("latent table contains non-finite values".into()));
    }
    let mean = z.mean_axis(Axis(0)).expect("nonempty");
    let centered = z - &mean;
    let mut cov = if n > 1 {
        crate::linalg::matmul(centered.t(), centered.view()) / (n - 1) as f64
    } else {
        Array2::zeros((d, d))
    };
    cov = (&cov + &cov.t()) * 0.5;
    let mut shrinkage = 0.0;
    if n < d + 1 {
        shrink(&mut cov);
        shrinkage = SHRINKAGE;
    }
    let mut attempt = jittered_cholesky(&cov);
    if attempt.is_none() && shrinkage == 0.0 {
        shrink(&mut cov);
        shrinkage = SHRINKAGE;
        attempt = jittered_cholesky(&cov);
    }
    let (factor, jitter) =
        attempt.ok_or_else(|| Error::Numeric("latent covariance is not positive definite even after jitter".into()))?;
    Ok(GaussianLatentPrior { mean, cov, factor, jitter, shrinkage })
}

fn shrink(cov: &mut Array2<f64>) {
    let d = cov.nrows();
    let target = cov.diag().sum() / d as f64;
    *cov = &*cov * (1.0 - SHRINKAGE) + Array2::<f64>::eye(d) * (SHRINKAGE * target);
}

/// Cholesky factor, adding diagonal jitter from `1e-12` up to `1e-5`
/// (relative to the largest variance) until it succeeds.
fn jittered_cholesky(cov: &Array2<f64>) -> Option<(Array2<f64>, f64)> {
    if let Some(l) = cholesky(cov, 0.0) {
        return Some((l, 0.0));
    }
    let scale = cov.diag().iter().cloned().fold(0.0, f64::max).max(1.0);
    (-12..=-5).find_map(|k| {
        let jitter = scale * 10f64.powi(k);
        cholesky(cov, jitter).map(|l| (l, jitter))
    })
}

fn cholesky(cov: &Array2<f64>, jitter: f64) -> Option<Array2<f64>> {
    let d = cov.nrows();
    let m = DMatrix::from_fn(d, d, |i, j| cov[[i, j]] + if i == j { jitter } else { 0.0 });
    let l = m.cholesky()?.l();
    Some(Array2::from_shape_fn((d, d), |(i, j)| l[(i, j)]))
}

impl GaussianLatentPrior {
    /// `n` draws `μ + L ε`.
    pub fn sample(&self, n: usize, seed: u64) -> Array2<f64> {
        let eps = rng::standard_normal(n, self.mean.len(), rng::derive(seed, "prior-sample"));
        crate::linalg::matmul(eps.view(), self.factor.t()) + &self.mean
    }
}

/// Decode prior draws after projecting them to the unit sphere.
pub fn gaussian_fit_sample(gen: &Generator, prior: &GaussianLatentPrior, n: usize, seed: u64) -> Result<ImageBatch> {
    if prior.mean.len() != gen.latent_dim {
        return Err(Error::arg("prior dimension differs from the generator latent dimension"));
    }
    let mut z = prior.sample(n, seed);
    project_rows(&mut z)?;
    let mut parts = Vec::new();
    for start in (0..n).step_by(CHUNK) {
        parts.push(gen.decode(z.slice(s![start..(start + CHUNK).min(n), ..]))?);
    }
    if parts.is_empty() {
        return Ok(ImageBatch::empty(gen.shape));
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(ImageBatch::generated(concatenate(Axis(0), &views).expect("same shape")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvertOptions {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Starting noise; drawn from `N(0, I)` with `seed` when absent.
    pub init: Option<Array1<f64>>,
}

impl Default for InvertOptions {
    fn default() -> Self {
        Self { steps: 500, lr: 0.05, seed: 0, init: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inversion {
    /// Best iterate seen.
    pub noise: Array1<f64>,
    pub loss: f64,
    pub initial_loss: f64,
    /// Set when a non-finite loss stopped the search early.
    pub diverged: bool,
    pub steps_run: usize,
}

/// Minimize `ℓ(G(T(e)), image)` over `e` with Adam.
pub fn invert_image(model: &TrainedModel, image: &ImageBatch, loss: &Loss, opts: &InvertOptions) -> Result<Inversion> {
    if image.len() != 1 || image.shape() != model.shape() {
        return Err(Error::arg(format!(
            "inversion needs one {} image, got {} of {}",
            model.shape(),
            image.len(),
            image.shape()
        )));
    }
    let mut e = match &opts.init {
        Some(init) if init.len() == model.noise_dim() => init.clone().insert_axis(Axis(0)),
        Some(init) => {
            return Err(Error::arg(format!("initial noise has {} dims, model takes {}", init.len(), model.noise_dim())))
        }
        None => rng::standard_normal(1, model.noise_dim(), rng::derive(opts.seed, "invert-init")),
    };
    let eval = |e: &Array2<f64>| -> Result<(f64, Array2<f64>)> {
        let (z, mt) = model.mapper.net.forward_tape(&e.clone().into_dyn(), Mode::Eval);
        let z = z.into_dimensionality::<Ix2>().map_err(|err| Error::Numeric(err.to_string()))?;
        let (x, gt) = model.generator.decode_tape(z.view(), Mode::Eval)?;
        let (v, g) = loss.value_and_grad(&x, &image.pixels)?;
        let (gz, _) = model.generator.backward(&gt, &g)?;
        let (ge, _) = model.mapper.net.backward(&mt, &gz.into_dyn());
        let ge = ge.into_dimensionality::<Ix2>().map_err(|err| Error::Numeric(err.to_string()))?;
        Ok((v, ge))
    };
    let (initial_loss, mut grad) = eval(&e)?;
    let mut best = (e.row(0).to_owned(), initial_loss);
    let mut adam = Adam::new(opts.lr);
    let mut diverged = !initial_loss.is_finite();
    let mut steps_run = 0;
    while steps_run < opts.steps && !diverged {
        let mut p = e.clone().into_dyn();
        adam.step(vec![&mut p], &[grad.clone().into_dyn()]);
        e = p.into_dimensionality().expect("rank 2");
        steps_run += 1;
        let (v, g) = eval(&e)?;
        if !v.is_finite() {
            log::warn!("inversion diverged at step {steps_run}; returning best iterate");
            diverged = true;
            break;
        }
        if v < best.1 {
            best = (e.row(0).to_owned(), v);
        }
        grad = g;
    }
    Ok(Inversion { noise: best.0, loss: best.1, initial_loss, diverged, steps_run })
}

/// `steps` frames decoding `(1 − t)·e1 + t·e2` for evenly spaced `t ∈ [0, 1]`.
pub fn interpolate(model: &TrainedModel, e1: ArrayView1<f64>, e2: ArrayView1<f64>, steps: usize) -> Result<ImageBatch> {
    if steps < 2 {
        return Err(Error::arg("interpolation needs at least 2 steps"));
    }
    if e1.len() != model.noise_dim() || e2.len() != model.noise_dim() {
        return Err(Error::arg("endpoint noise dimension differs from the model"));
    }
    let mut e = Array2::zeros((steps, e1.len()));
    for k in 0..steps {
        let t = k as f64 / (steps - 1) as f64;
        let row = lerp(e1, e2, t);
        e.row_mut(k).assign(&row);
    }
    model.decode_noise(&e)
}

/// `(1 − t)·a + t·b`; exact at `t = 0` and `t = 1`.
pub fn lerp(a: ArrayView1<f64>, b: ArrayView1<f64>, t: f64) -> Array1<f64> {
    if t == 0.0 {
        return a.to_owned();
    }
    if t == 1.0 {
        return b.to_owned();
    }
    &a * (1.0 - t) + &b * t
}

/// Tile a batch into a row-major grid with `cols` columns and write it losslessly.
pub fn save_grid(batch: &ImageBatch, cols: usize, path: &Path) -> Result<()> {
    if batch.is_empty() || cols == 0 {
        return Err(Error::arg("grid needs at least one image and one column"));
    }
    let ImageShape { channels, height, width } = batch.shape();
    if channels != 1 && channels != 3 {
        return Err(Error::arg(format!("cannot render {channels}-channel images")));
    }
    let cols = cols.min(batch.len());
    let rows = batch.len().div_ceil(cols);
    let mut img = image::RgbImage::new((cols * width) as u32, (rows * height) as u32);
    for (k, im) in batch.pixels.outer_iter().enumerate() {
        let (gy, gx) = ((k / cols) * height, (k % cols) * width);
        for y in 0..height {
            for x in 0..width {
                let px = if channels == 1 {
                    let v = unit_to_byte(im[[0, y, x]]);
                    [v, v, v]
                } else {
                    [unit_to_byte(im[[0, y, x]]), unit_to_byte(im[[1, y, x]]), unit_to_byte(im[[2, y, x]])]
                };
                img.put_pixel((gx + x) as u32, (gy + y) as u32, image::Rgb(px));
            }
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Manifest written next to a noise file.
pub fn noise_manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".txt");
    PathBuf::from(p)
}

/// Little-endian f32 rows plus a `dim=… count=… seed=…` manifest.
pub fn write_noise(path: &Path, e: &Array2<f64>, seed: u64) -> Result<()> {
    let mut bytes = Vec::with_capacity(e.len() * 4);
    for v in e.iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|err| Error::io(path, err))?;
    let manifest = noise_manifest_path(path);
    let mut f = std::fs::File::create(&manifest).map_err(|err| Error::io(&manifest, err))?;
    writeln!(f, "dim={} count={} seed={}", e.ncols(), e.nrows(), seed).map_err(|err| Error::io(&manifest, err))
}

/// Returns the noise rows and the recorded seed.
pub fn read_noise(path: &Path) -> Result<(Array2<f64>, u64)> {
    let manifest = noise_manifest_path(path);
    let text = std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut fields = BTreeMap::new();
    for part in text.split_whitespace() {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("{}: malformed manifest entry `{part}`", manifest.display())))?;
        let v: u64 = v.parse().map_err(|_| Error::Format(format!("{}: `{k}` is not an integer", manifest.display())))?;
        fields.insert(k.to_string(), v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| Error::Format(format!("manifest lacks `{k}`")));
    let (dim, count, seed) = (get("dim")? as usize, get("count")? as usize, get("seed")?);
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != dim * count * 4 {
        return Err(Error::Length { what: path.display().to_string(), expected: dim * count * 4, found: bytes.len() });
    }
    let vals = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Ok((Array2::from_shape_vec((count, dim), vals).expect("length checked"), seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{GeneratorKind, GeneratorSpec};
    use crate::glo::{glo_reconstruct, init_latent_table};
    use crate::imle::{map_pool, sample_noise_pool, MapperSpec};
    use ndarray::array;

    fn toy_model() -> TrainedModel {
        let spec = GeneratorSpec { kind: GeneratorKind::Mlp, hidden: 16, channels: 1 };
        let mut gen = Generator::new(&spec, 3, ImageShape::new(1, 6, 6), 1).unwrap();
        let mut mapper = MapperNetwork::new(&MapperSpec { hidden: 8, batch_norm: true, unit_output: false }, 4, 3, 2).unwrap();
        // Non-trivial running statistics so inference mode is exercised.
        for layer in gen.net.layers.iter_mut().chain(mapper.net.layers.iter_mut()) {
            if let crate::nn::Layer::BatchNorm(bn) = layer {
                bn.running_mean.fill(0.1);
                bn.running_var.fill(0.5);
            }
        }
        TrainedModel::new(gen, mapper).unwrap()
    }

    #[test]
    fn sampling_contracts() {
        let m = toy_model();
        assert!(sample_images(&m, 0, 1).unwrap().is_empty());
        let a = sample_images(&m, 300, 7).unwrap();
        assert_eq!(a, sample_images(&m, 300, 7).unwrap());
        assert_eq!(a.pixels.dim(), (300, 1, 6, 6));
        assert!(a.pixels.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn sampling_composes_mapping_and_reconstruction() {
        let m = toy_model();
        let got = sample_images(&m, 20, 3).unwrap();
        let mut pool = sample_noise_pool(1, m.noise_dim(), 0).unwrap();
        pool.noise = sample_noise(20, m.noise_dim(), 3);
        let pool = map_pool(&m.mapper, pool).unwrap();
        let table = LatentTable::from_raw(pool.mapped.clone());
        let ids: Vec<usize> = (0..20).collect();
        assert_eq!(glo_reconstruct(&m.generator, &table, &ids).unwrap().pixels, got.pixels);
    }

    #[test]
    fn prior_on_basis_vectors() {
        let mut z = Array2::zeros((100, 2));
        for i in 0..100 {
            z[[i, i % 2]] = 1.0;
        }
        let p = fit_gaussian_rows(&z).unwrap();
        assert_eq!(p.mean, array![0.5, 0.5]);
        let want = 25.0 / 99.0;
        for (i, j) in [(0, 0), (1, 1)] {
            assert!((p.cov[[i, j]] - want).abs() < 1e-12);
        }
        assert!((p.cov[[0, 1]] + want).abs() < 1e-12);
        assert!((want - 0.2525).abs() < 1e-4);
        let llt = crate::linalg::matmul(p.factor.view(), p.factor.t());
        assert!((&llt - &p.cov).iter().all(|d| d.abs() < 1e-6));
    }

    #[test]
    fn degenerate_prior_samples_the_point() {
        let z = Array2::from_shape_fn((10, 3), |(_, j)| [0.6, 0.0, 0.8][j]);
        let p = fit_gaussian_rows(&z).unwrap();
        assert!(p.cov.iter().all(|v| v.abs() < 1e-20));
        let s = p.sample(50, 1);
        assert!(s.rows().into_iter().all(|r| (&r - &p.mean).iter().all(|d| d.abs() < 1e-3)));

        let spec = GeneratorSpec { kind: GeneratorKind::Linear, hidden: 1, channels: 1 };
        let gen = Generator::new(&spec, 3, ImageShape::new(1, 2, 2), 0).unwrap();
        let imgs = gaussian_fit_sample(&gen, &p, 4, 2).unwrap();
        let direct = gen.decode(array![[0.6, 0.0, 0.8]].view()).unwrap();
        for k in 0..4 {
            let diff = &imgs.pixels.slice(s![k, .., .., ..]) - &direct.slice(s![0, .., .., ..]);
            assert!(diff.iter().all(|d| d.abs() < 1e-5));
        }
    }

    #[test]
    fn prior_resampling_recovers_mean() {
        let t = init_latent_table(500, 4, 3).unwrap();
        let p = fit_gaussian_prior(&t).unwrap();
        let s = p.sample(100_000, 4);
        let m = s.mean_axis(Axis(0)).unwrap();
        assert!((&m - &p.mean).iter().all(|d| d.abs() < 0.02));
        let few = init_latent_table(3, 8, 1).unwrap();
        let p = fit_gaussian_prior(&few).unwrap();
        assert_eq!(p.shrinkage, SHRINKAGE);
        assert!(p.sample(5, 0).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn inversion_from_true_noise_stays_at_optimum() {
        let m = toy_model();
        let e = sample_noise(1, m.noise_dim(), 9);
        let img = m.decode_noise(&e).unwrap();
        let opts = InvertOptions { steps: 25, init: Some(e.row(0).to_owned()), ..InvertOptions::default() };
        let r = invert_image(&m, &img, &Loss::L2, &opts).unwrap();
        assert!(r.loss < 1e-6);
        assert!((&r.noise - &e.row(0)).iter().all(|d| d.abs() < 1e-4));
    }

    #[test]
    fn inversion_zero_steps_and_progress() {
        let m = toy_model();
        let img = sample_images(&m, 1, 11).unwrap();
        let zero = invert_image(&m, &img, &Loss::L2, &InvertOptions { steps: 0, seed: 5, ..InvertOptions::default() }).unwrap();
        assert_eq!(zero.noise, rng::standard_normal(1, 4, rng::derive(5, "invert-init")).row(0));
        assert_eq!(zero.loss, zero.initial_loss);
        let r = invert_image(&m, &img, &Loss::L2, &InvertOptions { steps: 500, seed: 5, ..InvertOptions::default() }).unwrap();
        assert!(r.loss < 0.5 * r.initial_loss, "{} vs {}", r.loss, r.initial_loss);
        assert!(!r.diverged);
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let m = toy_model();
        let e = sample_noise(2, m.noise_dim(), 4);
        let frames = interpolate(&m, e.row(0), e.row(1), 5).unwrap();
        let ends = m.decode_noise(&e).unwrap();
        assert_eq!(frames.pixels.slice(s![0, .., .., ..]), ends.pixels.slice(s![0, .., .., ..]));
        assert_eq!(frames.pixels.slice(s![4, .., .., ..]), ends.pixels.slice(s![1, .., .., ..]));
        let mid = (&e.row(0) * 0.5 + &e.row(1) * 0.5).insert_axis(Axis(0));
        assert_eq!(frames.pixels.slice(s![2, .., .., ..]), m.decode_noise(&mid).unwrap().pixels.slice(s![0, .., .., ..]));
        let two = interpolate(&m, e.row(0), e.row(1), 2).unwrap();
        assert_eq!(two.pixels, ends.pixels);
        let same = interpolate(&m, e.row(0), e.row(0), 4).unwrap();
        for k in 1..4 {
            assert_eq!(same.pixels.slice(s![k, .., .., ..]), same.pixels.slice(s![0, .., .., ..]));
        }
        assert!(matches!(interpolate(&m, e.row(0), e.row(1), 1), Err(Error::Argument(_))));
    }

    #[test]
    fn grid_and_noise_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = toy_model();
        let batch = sample_images(&m, 5, 1).unwrap();
        let png = dir.path().join("grid.png");
        save_grid(&batch, 3, &png).unwrap();
        let img = image::open(&png).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (18, 12));
        assert_eq!(img.get_pixel(7, 1)[0], unit_to_byte(batch.pixels[[1, 0, 1, 1]]));

        let e = sample_noise(3, 4, 2);
        let path = dir.path().join("noise.f32");
        write_noise(&path, &e, 2).unwrap();
        let (back, seed) = read_noise(&path).unwrap();
        assert_eq!(seed, 2);
        assert!((&back - &e).iter().all(|d| d.abs() < 1e-6));
        assert_eq!(std::fs::read_to_string(noise_manifest_path(&path)).unwrap().trim(), "dim=4 count=3 seed=2");
    }

    #[test]
    fn model_checkpoint_round_trip() {
        let mut m = toy_model();
        m.metadata.insert("dataset".into(), "toy".into());
        let mut ck = Checkpoint::new(0);
        m.write_to(&mut ck);
        assert_eq!(TrainedModel::read_from(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap(), m);
    }
}
