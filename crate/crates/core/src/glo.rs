//! Joint optimization of a generator and one unit-norm latent code per
//! training image.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::datasets::{DatasetHandle, ImageBatch};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorSpec};
use crate::loss::{Loss, LossSpec};
use crate::nn::{Mode, Optimizer, OptimizerKind, Tensor};
use crate::rng;

/// One latent code per training image. Row `i` belongs to dataset id `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTable {
    codes: Array2<f64>,
    /// Optimizer steps applied to each row.
    updates: Vec<u64>,
}

impl LatentTable {
    /// Wrap codes as they are; nothing is projected.
    pub fn from_raw(codes: Array2<f64>) -> Self {
        let updates = vec![0; codes.nrows()];
        Self { codes, updates }
    }

    pub fn codes(&self) -> &Array2<f64> {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.codes.ncols()
    }

    pub fn updates(&self) -> &[u64] {
        &self.updates
    }

    pub fn rows(&self, ids: &[usize]) -> Result<Array2<f64>> {
        if let Some(bad) = ids.iter().find(|&&i| i >= self.len()) {
            return Err(Error::arg(format!("latent id {bad} out of range (table has {} rows)", self.len())));
        }
        Ok(self.codes.select(Axis(0), ids))
    }

    /// Largest deviation of a row norm from 1.
    pub fn max_norm_error(&self) -> f64 {
        self.codes
            .rows()
            .into_iter()
            .map(|r| (r.dot(&r).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_to(&self, ck: &mut Checkpoint) {
        ck.insert("latents", self.codes.clone().into_dyn());
        let counts = self.updates.iter().map(|&u| u as f64).collect::<Vec<_>>();
        ck.insert("latents.updates", ndarray::Array1::from(counts).into_dyn());
    }

    pub fn read_from(ck: &Checkpoint) -> Result<Self> {
        let codes = ck
            .tensor("latents")?
            .clone()
            .into_dimensionality()
            .map_err(|_| Error::Format("`latents` must be a matrix".into()))?;
        let mut t = Self::from_raw(codes);
        if let Ok(u) = ck.tensor("latents.updates") {
            if u.len() != t.len() {
                return Err(Error::Format("`latents.updates` length differs from the table".into()));
            }
            t.updates = u.iter().map(|&v| v as u64).collect();
        }
        Ok(t)
    }
}

/// T rows of standard normal draws, each normalized.
pub fn init_latent_table(count: usize, dim: usize, seed: u64) -> Result<LatentTable> {
    if dim == 0 {
        return Err(Error::arg("latent dimension must be positive"));
    }
    if count == 0 {
        return Err(Error::arg("latent table needs at least one row"));
    }
    let mut z = rng::standard_normal(count, dim, rng::derive(seed, "latents"));
    project_rows(&mut z)?;
    Ok(LatentTable::from_raw(z))
}

/// Each row divided by its Euclidean norm.
pub fn project_to_sphere(z: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = z.to_owned();
    project_rows(&mut out)?;
    Ok(out)
}

pub fn project_rows(z: &mut Array2<f64>) -> Result<()> {
    for (i, mut row) in z.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Numeric(format!("cannot project row {i} with norm {norm} to the unit sphere")));
        }
        row /= norm;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GloTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub latent_lr: f64,
    /// Generator rate as a multiple of the latent rate.
    pub generator_lr_ratio: f64,
    pub decay_factor: f64,
    pub decay_interval: usize,
    pub latent_optimizer: OptimizerKind,
    pub generator_optimizer: OptimizerKind,
    pub generator: GeneratorSpec,
    pub loss: LossSpec,
    /// Set from the pipeline seed; not part of the config text.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for GloTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 64,
            latent_lr: 0.01,
            generator_lr_ratio: 0.1,
            decay_factor: 0.5,
            decay_interval: 50,
            latent_optimizer: OptimizerKind::Sgd,
            generator_optimizer: OptimizerKind::Adam,
            generator: GeneratorSpec::default(),
            loss: LossSpec::default(),
            seed: 0,
        }
    }
}

impl GloTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.latent_lr >= 0.0 && self.latent_lr.is_finite()) {
            return Err(Error::Config(format!("latent_lr must be finite and nonnegative, got {}", self.latent_lr)));
        }
        if !(self.generator_lr_ratio >= 0.0 && self.generator_lr_ratio.is_finite()) {
            return Err(Error::Config("generator_lr_ratio must be finite and nonnegative".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!("decay_factor must lie in (0, 1], got {}", self.decay_factor)));
        }
        if self.decay_interval == 0 || self.batch_size == 0 {
            return Err(Error::Config("decay_interval and batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Latent rate in effect during `epoch` (0-based).
    pub fn latent_lr_at(&self, epoch: usize) -> f64 {
        self.latent_lr * self.decay_factor.powi((epoch / self.decay_interval) as i32)
    }

    pub fn generator_lr_at(&self, epoch: usize) -> f64 {
        self.latent_lr_at(epoch) * self.generator_lr_ratio
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub batch_losses: Vec<f64>,
    pub latent_lr: f64,
    pub generator_lr: f64,
}

/// Latent-row optimizer. Adam keeps one moment pair per row and uses the
/// row's own step count for bias correction.
#[derive(Clone, Debug)]
enum LatentOptimizer {
    Sgd,
    Adam { m: Array2<f64>, v: Array2<f64> },
}

impl LatentOptimizer {
    fn new(kind: OptimizerKind, rows: usize, dim: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => LatentOptimizer::Sgd,
            OptimizerKind::Adam => LatentOptimizer::Adam { m: Array2::zeros((rows, dim)), v: Array2::zeros((rows, dim)) },
        }
    }

    fn step(&mut self, table: &mut LatentTable, ids: &[usize], grads: &Array2<f64>, lr: f64) -> Result<()> {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        for (k, &id) in ids.iter().enumerate() {
            let g = grads.row(k);
            let before = table.codes.row(id).to_owned();
            table.updates[id] += 1;
            match self {
                LatentOptimizer::Sgd => table.codes.row_mut(id).scaled_add(-lr, &g),
                LatentOptimizer::Adam { m, v } => {
                    let t = table.updates[id] as i32;
                    let (bc1, bc2) = (1.0 - B1.powi(t), 1.0 - B2.powi(t));
                    let mut row = table.codes.row_mut(id);
                    for j in 0..g.len() {
                        m[[id, j]] = B1 * m[[id, j]] + (1.0 - B1) * g[j];
                        v[[id, j]] = B2 * v[[id, j]] + (1.0 - B2) * g[j] * g[j];
                        row[j] -= lr * (m[[id, j]] / bc1) / ((v[[id, j]] / bc2).sqrt() + EPS);
                    }
                }
            }
            // A row the step did not move is left exactly as it was.
            if table.codes.row(id) != before {
                let mut row = table.codes.row_mut(id);
                let norm = row.dot(&row).sqrt();
                if norm == 0.0 || !norm.is_finite() {
                    return Err(Error::Numeric(format!("latent row {id} reached norm {norm}")));
                }
                row /= norm;
            }
        }
        Ok(())
    }
}

/// Optimizer state carried across epochs of one training run.
pub struct GloTrainer {
    pub cfg: GloTrainConfig,
    loss: Loss,
    generator_opt: Optimizer,
    latent_opt: LatentOptimizer,
}

impl GloTrainer {
    pub fn new(cfg: GloTrainConfig, gen: &Generator, table: &LatentTable) -> Result<Self> {
        cfg.validate()?;
        let loss = Loss::from_spec(&cfg.loss, gen.shape)?;
        Ok(Self {
            generator_opt: Optimizer::new(cfg.generator_optimizer, cfg.generator_lr_at(0)),
            latent_opt: LatentOptimizer::new(cfg.latent_optimizer, table.len(), table.dim()),
            loss,
            cfg,
        })
    }

    pub fn loss(&self) -> &Loss {
        &self.loss
    }

    /// One pass over every image, in the dataset's order for `epoch`.
    pub fn epoch(&mut self, gen: &mut Generator, table: &mut LatentTable, data: &DatasetHandle, epoch: usize) -> Result<EpochStats> {
        if table.len() != data.len() {
            return Err(Error::arg(format!("latent table has {} rows, dataset has {} images", table.len(), data.len())));
        }
        if table.dim() != gen.latent_dim || data.shape() != gen.shape {
            return Err(Error::arg(format!(
                "generator maps {}-d latents to {}, table is {}-d and data is {}",
                gen.latent_dim,
                gen.shape,
                table.dim(),
                data.shape()
            )));
        }
        let latent_lr = self.cfg.latent_lr_at(epoch);
        let generator_lr = self.cfg.generator_lr_at(epoch);
        self.generator_opt.set_lr(generator_lr);
        let batches = data.minibatch_ids(self.cfg.batch_size.min(data.len()), epoch as u64)?;
        let mut batch_losses = Vec::with_capacity(batches.len());
        for (b, ids) in batches.iter().enumerate() {
            let z = table.rows(ids)?;
            let target = data.batch(ids)?;
            let (out, tape) = gen.decode_tape(z.view(), Mode::Train)?;
            let (value, grad) = self.loss.value_and_grad(&out, &target.pixels)?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b, value });
            }
            let (gz, gp) = gen.backward(&tape, &grad)?;
            gen.net.update_running_stats(&tape);
            self.generator_opt.step(gen.net.params_mut(), &gp);
            // The batch loss is a mean over images, so scaling by the batch
            // size gives each row the gradient of its own image loss.
            let gz = gz * ids.len() as f64;
            self.latent_opt.step(table, ids, &gz, latent_lr)?;
            batch_losses.push(value);
        }
        let weights: Vec<f64> = batches.iter().map(|ids| ids.len() as f64).collect();
        let mean_loss = batch_losses.iter().zip(&weights).map(|(l, w)| l * w).sum::<f64>() / weights.iter().sum::<f64>();
        Ok(EpochStats { epoch, mean_loss, batch_losses, latent_lr, generator_lr })
    }
}

/// Train for `cfg.epochs` epochs from scratch; `on_epoch` sees each epoch's statistics.
pub fn train_glo(
    data: &DatasetHandle,
    latent_dim: usize,
    cfg: &GloTrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(Generator, LatentTable, Vec<EpochStats>)> {
    let mut gen = Generator::new(&cfg.generator, latent_dim, data.shape(), cfg.seed)?;
    let mut table = init_latent_table(data.len(), latent_dim, cfg.seed)?;
    let mut trainer = GloTrainer::new(cfg.clone(), &gen, &table)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let stats = trainer.epoch(&mut gen, &mut table, data, epoch)?;
        on_epoch(&stats);
        history.push(stats);
    }
    Ok((gen, table, history))
}

/// `G(z_id)` for each id, in order.
pub fn glo_reconstruct(gen: &Generator, table: &LatentTable, ids: &[usize]) -> Result<ImageBatch> {
    let z = table.rows(ids)?;
    Ok(ImageBatch { pixels: gen.decode(z.view())?, ids: ids.to_vec() })
}

/// Mean loss of every reconstruction against its target, evaluated in inference mode.
pub fn reconstruction_loss(gen: &Generator, table: &LatentTable, data: &DatasetHandle, loss: &Loss) -> Result<f64> {
    let mut total = 0.0;
    let chunk = 256;
    for start in (0..data.len()).step_by(chunk) {
        let ids: Vec<usize> = (start..(start + chunk).min(data.len())).collect();
        let rec = glo_reconstruct(gen, table, &ids)?;
        total += loss.value(&rec.pixels, &data.batch(&ids)?.pixels)? * ids.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Trainable parameters only (batch-norm running buffers excluded).
pub fn trainable_params(gen: &Generator) -> Vec<Tensor> {
    gen.net.params().into_iter().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::ImageShape;
    use crate::generator::GeneratorKind;
    use crate::loss::LossKind;
    use ndarray::{array, s, Array4};

    #[test]
    fn projection_examples() {
        let p = project_to_sphere(array![[0.6, 0.8], [3.0, 4.0]].view()).unwrap();
        assert_eq!(p.row(0).to_vec(), vec![0.6, 0.8]);
        assert!((p[[1, 0]] - 0.6).abs() < 1e-15 && (p[[1, 1]] - 0.8).abs() < 1e-15);
        assert!(matches!(project_to_sphere(array![[0.0, 0.0]].view()), Err(Error::Numeric(_))));
        let twice = project_to_sphere(p.view()).unwrap();
        assert!((&twice - &p).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn init_table_is_unit_norm_and_seeded() {
        let a = init_latent_table(50, 7, 3).unwrap();
        assert!(a.max_norm_error() < 1e-12);
        assert_eq!(a, init_latent_table(50, 7, 3).unwrap());
        assert_ne!(a, init_latent_table(50, 7, 4).unwrap());
        assert!(matches!(init_latent_table(5, 0, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn lr_schedule_decays_in_steps() {
        let cfg = GloTrainConfig::default();
        assert_eq!(cfg.latent_lr_at(0), 0.01);
        assert_eq!(cfg.latent_lr_at(49), 0.01);
        assert_eq!(cfg.latent_lr_at(50), 0.005);
        assert!((cfg.generator_lr_at(120) - 0.01 * 0.25 * 0.1).abs() < 1e-18);
        assert_eq!(cfg.epochs, 500);
        let bad = GloTrainConfig { decay_factor: 0.0, ..GloTrainConfig::default() };
        assert!(bad.validate().is_err());
    }

    fn toy_data(n: usize, seed: u64) -> DatasetHandle {
        let px = rng::standard_normal(n, 16, seed).mapv(|v| (0.5 * v).tanh());
        DatasetHandle::from_pixels("toy", px.into_shape_with_order((n, 1, 4, 4)).unwrap()).unwrap()
    }

    fn toy_cfg() -> GloTrainConfig {
        GloTrainConfig {
            batch_size: 4,
            generator: GeneratorSpec { kind: GeneratorKind::Mlp, hidden: 16, channels: 1 },
            loss: LossSpec::l2(),
            ..GloTrainConfig::default()
        }
    }

    #[test]
    fn zero_rates_leave_parameters_and_table_untouched() {
        let data = toy_data(8, 1);
        let cfg = GloTrainConfig { latent_lr: 0.0, epochs: 3, ..toy_cfg() };
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let cfg = GloTrainConfig { latent_optimizer: kind, ..cfg.clone() };
            let mut gen = Generator::new(&cfg.generator, 3, data.shape(), 0).unwrap();
            let mut table = init_latent_table(8, 3, 0).unwrap();
            let (p0, t0) = (trainable_params(&gen), table.codes().clone());
            let mut tr = GloTrainer::new(cfg.clone(), &gen, &table).unwrap();
            for e in 0..3 {
                tr.epoch(&mut gen, &mut table, &data, e).unwrap();
            }
            assert_eq!(trainable_params(&gen), p0);
            assert_eq!(table.codes(), &t0);
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_batch() {
        let data = toy_data(4, 2);
        let cfg = toy_cfg();
        let mut gen = Generator::new(&cfg.generator, 3, data.shape(), 0).unwrap();
        if let crate::nn::Layer::Linear(l) = &mut gen.net.layers[6] {
            l.bias.fill(f64::NAN);
        }
        let mut table = init_latent_table(4, 3, 0).unwrap();
        let mut tr = GloTrainer::new(cfg, &gen, &table).unwrap();
        match tr.epoch(&mut gen, &mut table, &data, 0) {
            Err(Error::NonFiniteLoss { epoch: 0, batch: 0, value }) => assert!(value.is_nan()),
            other => panic!("expected non-finite loss, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_table_is_rejected() {
        let data = toy_data(4, 2);
        let cfg = toy_cfg();
        let mut gen = Generator::new(&cfg.generator, 3, data.shape(), 0).unwrap();
        let mut table = init_latent_table(5, 3, 0).unwrap();
        let mut tr = GloTrainer::new(cfg, &gen, &table).unwrap();
        assert!(matches!(tr.epoch(&mut gen, &mut table, &data, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn reconstruct_contract() {
        let gen = Generator::new(&toy_cfg().generator, 3, ImageShape::new(1, 4, 4), 0).unwrap();
        let table = init_latent_table(6, 3, 1).unwrap();
        let rec = glo_reconstruct(&gen, &table, &[5, 0, 5]).unwrap();
        assert_eq!(rec.ids, vec![5, 0, 5]);
        assert!(rec.pixels.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(rec.pixels.slice(s![0, .., .., ..]), rec.pixels.slice(s![2, .., .., ..]));
        assert!(glo_reconstruct(&gen, &table, &[]).unwrap().is_empty());
        assert!(matches!(glo_reconstruct(&gen, &table, &[6]), Err(Error::Argument(_))));
    }

    /// 2-parameter generator: one pixel, `tanh(w z + b)`, d = 1.
    #[test]
    fn toy_generator_gradients_match_finite_differences() {
        let spec = GeneratorSpec { kind: GeneratorKind::Linear, hidden: 1, channels: 1 };
        let gen = Generator::new(&spec, 1, ImageShape::new(1, 1, 1), 5).unwrap();
        assert_eq!(gen.num_params(), 2);
        let z = array![[0.7], [-0.3]];
        let target = Array4::from_shape_vec((2, 1, 1, 1), vec![0.2, -0.5]).unwrap();
        let loss = Loss::L2;
        let f = |g: &Generator, z: &Array2<f64>| loss.value(&g.decode(z.view()).unwrap(), &target).unwrap();
        let (out, tape) = gen.decode_tape(z.view(), Mode::Train).unwrap();
        let (_, grad) = loss.value_and_grad(&out, &target).unwrap();
        let (gz, gp) = gen.backward(&tape, &grad).unwrap();
        let h = 1e-6;
        let rel = |a: f64, b: f64| (a - b).abs() / (a.abs() + b.abs()).max(1e-12);
        for i in 0..2 {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[[i, 0]] += h;
            zm[[i, 0]] -= h;
            let fd = (f(&gen, &zp) - f(&gen, &zm)) / (2.0 * h);
            assert!(rel(fd, gz[[i, 0]]) < 1e-3, "latent {i}: {fd} vs {}", gz[[i, 0]]);
        }
        for (p, g) in gp.iter().enumerate() {
            let mut gp_ = gen.clone();
            let mut gm_ = gen.clone();
            gp_.net.params_mut()[p].as_slice_mut().unwrap()[0] += h;
            gm_.net.params_mut()[p].as_slice_mut().unwrap()[0] -= h;
            let fd = (f(&gp_, &z) - f(&gm_, &z)) / (2.0 * h);
            let an = g.as_slice().unwrap()[0];
            assert!(rel(fd, an) < 1e-3, "param {p}: {fd} vs {an}");
        }
    }

    #[test]
    fn short_run_keeps_sphere_and_is_deterministic() {
        let data = toy_data(8, 3);
        let cfg = GloTrainConfig { epochs: 5, latent_lr: 1.0, ..toy_cfg() };
        let (g1, t1, h1) = train_glo(&data, 4, &cfg, |_| {}).unwrap();
        let (g2, t2, h2) = train_glo(&data, 4, &cfg, |_| {}).unwrap();
        assert!(t1.max_norm_error() < 1e-12);
        assert!(t1.updates().iter().all(|&u| u == 5));
        assert_eq!(t1, t2);
        assert_eq!(g1, g2);
        assert_eq!(h1, h2);
        assert_eq!(cfg.loss.kind, LossKind::L2);
    }

    #[test]
    fn table_checkpoint_round_trip() {
        let t = init_latent_table(9, 4, 2).unwrap();
        let mut ck = Checkpoint::new(1);
        t.write_to(&mut ck);
        let back = LatentTable::read_from(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
