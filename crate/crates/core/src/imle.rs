//! Noise-to-latent mapping trained by nearest-neighbor matching, plus the
//! pixel-space variant that matches generated images to training images.

use ndarray::{Array2, ArrayView2, Axis, Ix2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::datasets::DatasetHandle;
use crate::error::{Error, Result};
use crate::generator::{parse_meta, Generator};
use crate::glo::LatentTable;
use crate::linalg::squared_distance;
use crate::loss::Loss;
use crate::nn::{Adam, Layer, Mode, Network, Tensor};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapperSpec {
    pub hidden: usize,
    pub batch_norm: bool,
    /// Project outputs onto the unit sphere, where the latent codes live.
    pub unit_output: bool,
}

impl Default for MapperSpec {
    fn default() -> Self {
        Self { hidden: 128, batch_norm: true, unit_output: true }
    }
}

/// `T: R^{d_e} → R^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct MapperNetwork {
    pub noise_dim: usize,
    pub latent_dim: usize,
    pub spec: MapperSpec,
    pub net: Network,
}

impl MapperNetwork {
    /// `Linear(d_e, h) → [BatchNorm] → ReLU → Linear(h, d) → [UnitNorm]`.
    pub fn new(spec: &MapperSpec, noise_dim: usize, latent_dim: usize, seed: u64) -> Result<Self> {
        if noise_dim == 0 || latent_dim == 0 || spec.hidden == 0 {
            return Err(Error::arg("mapper dimensions must be positive"));
        }
        let mut r = rng::rng(rng::derive(seed, "mapper"));
        let mut layers = vec![Layer::linear(noise_dim, spec.hidden, &mut r)];
        if spec.batch_norm {
            layers.push(Layer::batch_norm(spec.hidden));
        }
        layers.push(Layer::Relu);
        layers.push(Layer::linear(spec.hidden, latent_dim, &mut r));
        if spec.unit_output {
            layers.push(Layer::UnitNorm);
        }
        Ok(Self { noise_dim, latent_dim, spec: spec.clone(), net: Network::new(layers) })
    }

    /// Wrap an arbitrary network mapping `noise_dim` to `latent_dim`.
    pub fn from_network(net: Network, noise_dim: usize, latent_dim: usize) -> Result<Self> {
        let out = net.output_shape(&[noise_dim])?;
        if out != [latent_dim] {
            return Err(Error::arg(format!("network maps {noise_dim} to {out:?}, expected [{latent_dim}]")));
        }
        Ok(Self { noise_dim, latent_dim, spec: MapperSpec { hidden: 0, batch_norm: false, unit_output: false }, net })
    }

    /// Inference-mode `T(e)` for each row.
    pub fn map(&self, e: ArrayView2<f64>) -> Result<Array2<f64>> {
        if e.ncols() != self.noise_dim {
            return Err(Error::arg(format!("mapper expects {}-dimensional noise, got {}", self.noise_dim, e.ncols())));
        }
        if e.nrows() == 0 {
            return Ok(Array2::zeros((0, self.latent_dim)));
        }
        to2(self.net.forward(&e.to_owned().into_dyn()))
    }

    pub fn write_to(&self, ck: &mut Checkpoint) {
        ck.meta.insert("mapper.noise_dim".into(), self.noise_dim.to_string());
        ck.meta.insert("mapper.latent_dim".into(), self.latent_dim.to_string());
        ck.meta.insert("mapper.hidden".into(), self.spec.hidden.to_string());
        ck.meta.insert("mapper.batch_norm".into(), self.spec.batch_norm.to_string());
        ck.meta.insert("mapper.unit_output".into(), self.spec.unit_output.to_string());
        for (name, t) in self.net.named_tensors("mapper") {
            ck.insert(name, t);
        }
    }

    pub fn read_from(ck: &Checkpoint) -> Result<Self> {
        let spec = MapperSpec {
            hidden: parse_meta(ck, "mapper.hidden")?,
            batch_norm: parse_meta(ck, "mapper.batch_norm")?,
            unit_output: parse_meta(ck, "mapper.unit_output")?,
        };
        let mut t = Self::new(&spec, parse_meta(ck, "mapper.noise_dim")?, parse_meta(ck, "mapper.latent_dim")?, 0)
            .map_err(|e| Error::Format(e.to_string()))?;
        t.net.load_named("mapper", &ck.tensors)?;
        Ok(t)
    }
}

fn to2(t: Tensor) -> Result<Array2<f64>> {
    t.into_dimensionality::<Ix2>().map_err(|e| Error::Numeric(e.to_string()))
}

/// Noise draws and, once mapped, their images under a mapper.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePool {
    pub noise: Array2<f64>,
    /// `M × d`; empty until mapped.
    pub mapped: Array2<f64>,
    pub epoch: usize,
    /// Set when `mapped` equals the current mapper applied to `noise`.
    pub fresh: bool,
}

impl NoisePool {
    pub fn len(&self) -> usize {
        self.noise.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mark the mapping as out of date (the mapper has changed).
    pub fn invalidate(&mut self) {
        self.fresh = false;
    }
}

pub fn sample_noise_pool(count: usize, noise_dim: usize, seed: u64) -> Result<NoisePool> {
    if count == 0 || noise_dim == 0 {
        return Err(Error::arg("noise pool size and dimension must be positive"));
    }
    Ok(NoisePool {
        noise: rng::standard_normal(count, noise_dim, seed),
        mapped: Array2::zeros((0, 0)),
        epoch: 0,
        fresh: false,
    })
}

/// Fill `mapped` with `T(noise)` in inference mode.
pub fn map_pool(t: &MapperNetwork, mut pool: NoisePool) -> Result<NoisePool> {
    pool.mapped = t.map(pool.noise.view())?;
    pool.fresh = true;
    Ok(pool)
}

/// For each query row, the index and squared distance of the closest
/// candidate row. Ties go to the lowest index.
pub fn nearest_rows(queries: ArrayView2<f64>, candidates: ArrayView2<f64>) -> Result<Vec<(usize, f64)>> {
    if candidates.nrows() == 0 {
        return Err(Error::arg("no candidates to match against"));
    }
    if queries.ncols() != candidates.ncols() {
        return Err(Error::arg(format!(
            "query width {} differs from candidate width {}",
            queries.ncols(),
            candidates.ncols()
        )));
    }
    let cands = candidates.as_standard_layout();
    let width = cands.ncols();
    let flat = cands.as_slice().expect("standard layout");
    if width == 0 {
        return Ok(vec![(0, 0.0); queries.nrows()]);
    }
    let qs = queries.as_standard_layout();
    Ok(qs
        .as_slice()
        .expect("standard layout")
        .par_chunks_exact(width)
        .map(|q| {
            let mut best = (0, f64::INFINITY);
            for (m, c) in flat.chunks_exact(width).enumerate() {
                let d = squared_distance(q, c);
                if d < best.1 {
                    best = (m, d);
                }
            }
            if best.1.is_infinite() {
                best.1 = squared_distance(q, &flat[..width]);
            }
            best
        })
        .collect())
}

/// Closest mapped pool row for each latent row.
pub fn nearest_mapped_noise(z: ArrayView2<f64>, pool: &NoisePool) -> Result<Vec<(usize, f64)>> {
    if !pool.fresh {
        return Err(Error::State("noise pool is stale; map it with the current mapper first".into()));
    }
    nearest_rows(z, pool.mapped.view())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefreshPolicy {
    /// Remap the pool after every mapper update.
    PerMinibatch,
    /// Map once at epoch start and match against that snapshot all epoch.
    PerEpoch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImleTrainConfig {
    pub epochs: usize,
    /// Pool size M; 0 means `max(10 × batch_size, 1024)`.
    pub pool_size: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub refresh: RefreshPolicy,
    pub mapper: MapperSpec,
    /// Set from the pipeline seed; not part of the config text.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ImleTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            pool_size: 0,
            batch_size: 64,
            lr: 0.001,
            refresh: RefreshPolicy::PerMinibatch,
            mapper: MapperSpec::default(),
            seed: 0,
        }
    }
}

impl ImleTrainConfig {
    pub fn effective_pool_size(&self) -> usize {
        if self.pool_size == 0 {
            (10 * self.batch_size).max(1024)
        } else {
            self.pool_size
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("imle batch_size must be positive".into()));
        }
        if self.effective_pool_size() < self.batch_size {
            return Err(Error::Config(format!(
                "pool size {} is smaller than batch size {}",
                self.effective_pool_size(),
                self.batch_size
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("imle lr must be finite and nonnegative, got {}", self.lr)));
        }
        Ok(())
    }

    fn pool_seed(&self, epoch: usize) -> u64 {
        rng::mix(rng::derive(self.seed, "imle-pool"), epoch as u64)
    }

    fn order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::rng(rng::mix(rng::derive(self.seed, "imle-order"), epoch as u64)));
        order
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImleEpochStats {
    pub epoch: usize,
    /// Mean Euclidean distance from each row to its match, measured when matched.
    pub mean_matched_distance: f64,
    pub mean_matched_sq_distance: f64,
    /// Mean over batches of the fit loss before each update.
    pub mean_fit_loss: f64,
}

/// Mean over rows of `‖z_t − T(e_t)‖²` with batch statistics in the mapper.
pub fn fit_loss(t: &MapperNetwork, z: ArrayView2<f64>, e: ArrayView2<f64>, mode: Mode) -> Result<f64> {
    let out = to2(t.net.forward_mode(&e.to_owned().into_dyn(), mode))?;
    let d = &out - &z;
    Ok(d.iter().map(|v| v * v).sum::<f64>() / z.nrows().max(1) as f64)
}

pub struct ImleTrainer {
    pub cfg: ImleTrainConfig,
    opt: Adam,
}

impl ImleTrainer {
    pub fn new(cfg: ImleTrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { opt: Adam::new(cfg.lr), cfg })
    }

    pub fn epoch(&mut self, t: &mut MapperNetwork, table: &LatentTable, epoch: usize) -> Result<ImleEpochStats> {
        if table.is_empty() {
            return Err(Error::arg("latent table is empty"));
        }
        if table.dim() != t.latent_dim {
            return Err(Error::arg(format!("mapper outputs {} dims, latents have {}", t.latent_dim, table.dim())));
        }
        let mut pool = sample_noise_pool(self.cfg.effective_pool_size(), t.noise_dim, self.cfg.pool_seed(epoch))?;
        pool.epoch = epoch;
        let mut pool = map_pool(t, pool)?;
        let order = self.cfg.order(table.len(), epoch);
        let batch = self.cfg.batch_size.min(table.len());
        let (mut dist, mut sq, mut fit) = (0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for (b, ids) in order.chunks(batch).enumerate() {
            let z = table.rows(ids)?;
            let matches = match self.cfg.refresh {
                RefreshPolicy::PerMinibatch => {
                    if !pool.fresh {
                        pool = map_pool(t, pool)?;
                    }
                    nearest_mapped_noise(z.view(), &pool)?
                }
                RefreshPolicy::PerEpoch => nearest_rows(z.view(), pool.mapped.view())?,
            };
            for &(_, d2) in &matches {
                sq += d2;
                dist += d2.sqrt();
            }
            let idx: Vec<usize> = matches.iter().map(|m| m.0).collect();
            let e = pool.noise.select(Axis(0), &idx);
            let (out, tape) = t.net.forward_tape(&e.into_dyn(), Mode::Train);
            let diff = to2(out)? - &z;
            let n = ids.len() as f64;
            let value = diff.iter().map(|v| v * v).sum::<f64>() / n;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b, value });
            }
            let grad = (diff * (2.0 / n)).into_dyn();
            let (_, gp) = t.net.backward(&tape, &grad);
            t.net.update_running_stats(&tape);
            self.opt.step(t.net.params_mut(), &gp);
            pool.invalidate();
            fit += value;
            batches += 1;
        }
        let n = table.len() as f64;
        Ok(ImleEpochStats {
            epoch,
            mean_matched_distance: dist / n,
            mean_matched_sq_distance: sq / n,
            mean_fit_loss: fit / batches as f64,
        })
    }
}

/// Train a fresh mapper on `table`.
pub fn train_mapper(
    table: &LatentTable,
    noise_dim: usize,
    cfg: &ImleTrainConfig,
    mut on_epoch: impl FnMut(&ImleEpochStats),
) -> Result<(MapperNetwork, Vec<ImleEpochStats>)> {
    let mut t = MapperNetwork::new(&cfg.mapper, noise_dim, table.dim(), cfg.seed)?;
    let mut trainer = ImleTrainer::new(cfg.clone())?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let s = trainer.epoch(&mut t, table, epoch)?;
        on_epoch(&s);
        history.push(s);
    }
    Ok((t, history))
}

/// Image-space IMLE: the generator is fed noise directly and each training
/// image is matched to its nearest generated image.
pub struct PixelImleTrainer {
    pub cfg: ImleTrainConfig,
    opt: Adam,
}

impl PixelImleTrainer {
    pub fn new(cfg: ImleTrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { opt: Adam::new(cfg.lr), cfg })
    }

    fn render(gen: &Generator, noise: &Array2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((noise.nrows(), gen.shape.pixels()));
        for start in (0..noise.nrows()).step_by(256) {
            let end = (start + 256).min(noise.nrows());
            let imgs = gen.decode(noise.slice(ndarray::s![start..end, ..]))?;
            let flat = imgs.into_shape_with_order((end - start, gen.shape.pixels())).map_err(|e| Error::Numeric(e.to_string()))?;
            out.slice_mut(ndarray::s![start..end, ..]).assign(&flat);
        }
        Ok(out)
    }

    pub fn epoch(&mut self, gen: &mut Generator, data: &DatasetHandle, epoch: usize) -> Result<ImleEpochStats> {
        if gen.shape != data.shape() {
            return Err(Error::arg(format!("generator emits {}, data is {}", gen.shape, data.shape())));
        }
        let pool = sample_noise_pool(self.cfg.effective_pool_size(), gen.latent_dim, self.cfg.pool_seed(epoch))?;
        let mut rendered = Self::render(gen, &pool.noise)?;
        let mut fresh = true;
        let order = self.cfg.order(data.len(), epoch);
        let batch = self.cfg.batch_size.min(data.len());
        let (mut dist, mut sq, mut fit) = (0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for (b, ids) in order.chunks(batch).enumerate() {
            if !fresh && self.cfg.refresh == RefreshPolicy::PerMinibatch {
                rendered = Self::render(gen, &pool.noise)?;
            }
            let target = data.batch(ids)?;
            let matches = nearest_rows(target.flat().view(), rendered.view())?;
            for &(_, d2) in &matches {
                sq += d2;
                dist += d2.sqrt();
            }
            let idx: Vec<usize> = matches.iter().map(|m| m.0).collect();
            let e = pool.noise.select(Axis(0), &idx);
            let (out, tape) = gen.decode_tape(e.view(), Mode::Train)?;
            let (value, grad) = Loss::L2.value_and_grad(&out, &target.pixels)?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b, value });
            }
            let (_, gp) = gen.backward(&tape, &grad)?;
            gen.net.update_running_stats(&tape);
            self.opt.step(gen.net.params_mut(), &gp);
            fresh = false;
            fit += value;
            batches += 1;
        }
        let n = data.len() as f64;
        Ok(ImleEpochStats {
            epoch,
            mean_matched_distance: dist / n,
            mean_matched_sq_distance: sq / n,
            mean_fit_loss: fit / batches as f64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::ImageShape;
    use crate::generator::{GeneratorKind, GeneratorSpec};
    use crate::nn::Linear;
    use ndarray::{array, ArrayD, IxDyn};

    fn brute(q: &Array2<f64>, c: &Array2<f64>) -> Vec<(usize, f64)> {
        q.rows()
            .into_iter()
            .map(|qr| {
                let mut best = (usize::MAX, f64::INFINITY);
                for (m, cr) in c.rows().into_iter().enumerate() {
                    let mut d = 0.0;
                    for j in 0..qr.len() {
                        d += (qr[j] - cr[j]) * (qr[j] - cr[j]);
                    }
                    if d < best.1 {
                        best = (m, d);
                    }
                }
                best
            })
            .collect()
    }

    fn assert_same(got: &[(usize, f64)], want: &[(usize, f64)]) {
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            assert_eq!(g.0, w.0);
            assert!((g.1 - w.1).abs() <= 1e-12 * w.1.max(1.0));
        }
    }

    fn identity_mapper(d: usize) -> MapperNetwork {
        let net = Network::new(vec![Layer::Linear(Linear {
            weight: Array2::<f64>::eye(d).into_dyn(),
            bias: ArrayD::zeros(IxDyn(&[d])),
        })]);
        MapperNetwork::from_network(net, d, d).unwrap()
    }

    #[test]
    fn pool_is_seeded_and_validated() {
        assert_eq!(sample_noise_pool(10, 3, 1).unwrap(), sample_noise_pool(10, 3, 1).unwrap());
        assert_eq!(sample_noise_pool(1, 3, 1).unwrap().len(), 1);
        assert!(sample_noise_pool(0, 3, 1).is_err());
        assert!(!sample_noise_pool(4, 3, 1).unwrap().fresh);
    }

    #[test]
    fn identity_mapper_maps_noise_to_itself() {
        let pool = map_pool(&identity_mapper(4), sample_noise_pool(20, 4, 2).unwrap()).unwrap();
        assert!(pool.fresh);
        assert_eq!(pool.mapped, pool.noise);
    }

    #[test]
    fn batched_mapping_equals_row_by_row() {
        let mut t = MapperNetwork::new(&MapperSpec::default(), 5, 3, 4).unwrap();
        if let Layer::BatchNorm(bn) = &mut t.net.layers[1] {
            bn.running_mean.fill(0.3);
            bn.running_var.fill(2.0);
        }
        let pool = map_pool(&t, sample_noise_pool(64, 5, 3).unwrap()).unwrap();
        let again = map_pool(&t, pool.clone()).unwrap();
        assert_eq!(again.mapped, pool.mapped);
        for m in 0..64 {
            let one = t.map(pool.noise.slice(ndarray::s![m..m + 1, ..])).unwrap();
            assert_eq!(one.row(0), pool.mapped.row(m));
        }
        assert!(matches!(t.map(Array2::zeros((2, 4)).view()), Err(Error::Argument(_))));
    }

    #[test]
    fn exact_match_and_ties() {
        let mut pool = map_pool(&identity_mapper(3), sample_noise_pool(10, 3, 5).unwrap()).unwrap();
        let z = pool.mapped.slice(ndarray::s![7..8, ..]).to_owned();
        assert_eq!(nearest_mapped_noise(z.view(), &pool).unwrap(), vec![(7, 0.0)]);

        pool.mapped = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]];
        let res = nearest_mapped_noise(array![[0.0, 0.0, 0.0]].view(), &pool).unwrap();
        assert_eq!(res, vec![(0, 1.0)]);
        let res = nearest_mapped_noise(array![[0.0, 0.0, 5.0]].view(), &pool).unwrap();
        assert_eq!(res[0].0, 0);

        pool.invalidate();
        assert!(matches!(nearest_mapped_noise(z.view(), &pool), Err(Error::State(_))));
    }

    #[test]
    fn matches_brute_force_on_small_pool() {
        let c = rng::standard_normal(10, 5, 6);
        let q = rng::standard_normal(4, 5, 7);
        assert_same(&nearest_rows(q.view(), c.view()).unwrap(), &brute(&q, &c));
    }

    #[test]
    fn zero_rate_keeps_mapper_and_still_reports_distance() {
        let table = crate::glo::init_latent_table(20, 2, 0).unwrap();
        let cfg = ImleTrainConfig { lr: 0.0, batch_size: 8, pool_size: 32, ..ImleTrainConfig::default() };
        let mut t = MapperNetwork::new(&cfg.mapper, 3, 2, 0).unwrap();
        let before: Vec<Tensor> = t.net.params().into_iter().cloned().collect();
        let s = ImleTrainer::new(cfg).unwrap().epoch(&mut t, &table, 0).unwrap();
        let after: Vec<Tensor> = t.net.params().into_iter().cloned().collect();
        assert_eq!(before, after);
        assert!(s.mean_matched_distance > 0.0 && s.mean_matched_distance.is_finite());
    }

    #[test]
    fn linear_mapper_full_batch_step_does_not_increase_fit_loss() {
        let z = rng::standard_normal(16, 2, 8);
        let pool = rng::standard_normal(64, 3, 9);
        let mut r = rng::rng(10);
        let net = Network::new(vec![Layer::linear(3, 2, &mut r)]);
        let mut t = MapperNetwork::from_network(net, 3, 2).unwrap();
        for step in 0..20 {
            let mapped = t.map(pool.view()).unwrap();
            let idx: Vec<usize> = nearest_rows(z.view(), mapped.view()).unwrap().iter().map(|m| m.0).collect();
            let e = pool.select(Axis(0), &idx);
            let pre = fit_loss(&t, z.view(), e.view(), Mode::Train).unwrap();
            let (out, tape) = t.net.forward_tape(&e.clone().into_dyn(), Mode::Train);
            let grad = ((to2(out).unwrap() - &z) * (2.0 / 16.0)).into_dyn();
            let (_, gp) = t.net.backward(&tape, &grad);
            crate::nn::Sgd { lr: 0.05 }.step(t.net.params_mut(), &gp);
            let post = fit_loss(&t, z.view(), e.view(), Mode::Train).unwrap();
            assert!(post <= pre, "step {step}: {post} > {pre}");
        }
    }

    #[test]
    fn per_minibatch_refresh_is_deterministic() {
        let table = crate::glo::init_latent_table(30, 2, 1).unwrap();
        let cfg = ImleTrainConfig { batch_size: 8, pool_size: 64, lr: 0.01, ..ImleTrainConfig::default() };
        let cfg_few = ImleTrainConfig { epochs: 3, ..cfg };
        let a = train_mapper(&table, 2, &cfg_few, |_| {}).unwrap();
        let b = train_mapper(&table, 2, &cfg_few, |_| {}).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn pixel_imle_zero_rate_and_matching() {
        let px = rng::standard_normal(6, 16, 11).mapv(|v| (0.5 * v).tanh());
        let data = DatasetHandle::from_pixels("toy", px.into_shape_with_order((6, 1, 4, 4)).unwrap()).unwrap();
        let spec = GeneratorSpec { kind: GeneratorKind::Mlp, hidden: 8, channels: 1 };
        let mut gen = Generator::new(&spec, 3, ImageShape::new(1, 4, 4), 0).unwrap();
        let cfg = ImleTrainConfig { lr: 0.0, batch_size: 3, pool_size: 16, ..ImleTrainConfig::default() };
        let before: Vec<Tensor> = gen.net.params().into_iter().cloned().collect();
        PixelImleTrainer::new(cfg.clone()).unwrap().epoch(&mut gen, &data, 0).unwrap();
        assert_eq!(before, gen.net.params().into_iter().cloned().collect::<Vec<_>>());

        let pool = sample_noise_pool(16, 3, 12).unwrap();
        let rendered = PixelImleTrainer::render(&gen, &pool.noise).unwrap();
        let flat = data.all().flat();
        assert_same(&nearest_rows(flat.view(), rendered.view()).unwrap(), &brute(&flat, &rendered));
    }

    #[test]
    fn mapper_checkpoint_round_trip() {
        let t = MapperNetwork::new(&MapperSpec::default(), 6, 4, 3).unwrap();
        let mut ck = Checkpoint::new(2);
        t.write_to(&mut ck);
        assert_eq!(MapperNetwork::read_from(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap(), t);
    }

    #[test]
    fn default_pool_size() {
        let cfg = ImleTrainConfig::default();
        assert_eq!(cfg.effective_pool_size(), 1024);
        assert_eq!(ImleTrainConfig { batch_size: 200, ..cfg.clone() }.effective_pool_size(), 2000);
        assert_eq!((cfg.epochs, cfg.lr), (50, 0.001));
        assert!(ImleTrainConfig { pool_size: 10, batch_size: 20, ..cfg }.validate().is_err());
    }
}
