//! End-to-end runs: GLO, then the IMLE mapper, then samples and reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::checkpoint::Checkpoint;
use crate::config::{create_run_dir, PipelineConfig};
use crate::datasets::DatasetHandle;
use crate::error::{Error, Result};
use crate::eval::{evaluate, plot_prd, DataSource, Embedder, EvalReport, EvalSpec, GaussianFitSampler, ImageSource, NoiseSampler, ReferenceSet};
use crate::generator::Generator;
use crate::glo::{init_latent_table, GloTrainer, LatentTable};
use crate::imle::{ImleTrainConfig, ImleTrainer, MapperNetwork, PixelImleTrainer};
use crate::rng;
use crate::synthesis::{fit_gaussian_prior, gaussian_fit_sample, sample_noise, save_grid, write_noise, TrainedModel};

pub const GLO_CHECKPOINT: &str = "glo.ckpt";
pub const MODEL_CHECKPOINT: &str = "glann.ckpt";
pub const PIXEL_IMLE_CHECKPOINT: &str = "pixel-imle.ckpt";

const STAGE_KEY: &str = "pipeline.stage";

/// Everything a checkpoint written by the pipeline can hold.
#[derive(Clone, Debug)]
pub struct Bundle {
    pub config: PipelineConfig,
    pub epoch: u64,
    pub generator: Generator,
    /// Absent in the image-space IMLE baseline checkpoint.
    pub table: Option<LatentTable>,
    pub mapper: Option<MapperNetwork>,
}

impl Bundle {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.epoch);
        ck.config = self.config.to_toml();
        self.generator.write_to(&mut ck);
        if let Some(t) = &self.table {
            t.write_to(&mut ck);
        }
        let stage = match (&self.table, &self.mapper) {
            (_, Some(m)) => {
                m.write_to(&mut ck);
                "glann"
            }
            (Some(_), None) => "glo",
            (None, None) => "pixel-imle",
        };
        ck.meta.insert(STAGE_KEY.into(), stage.into());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let stage = ck.meta_value(STAGE_KEY)?;
        let config = PipelineConfig::from_toml(&ck.config).map_err(|e| Error::Format(format!("embedded config: {e}")))?;
        let generator = Generator::read_from(ck)?;
        let (table, mapper) = match stage {
            "glo" => (Some(LatentTable::read_from(ck)?), None),
            "glann" => (Some(LatentTable::read_from(ck)?), Some(MapperNetwork::read_from(ck)?)),
            "pixel-imle" => (None, None),
            other => return Err(Error::Format(format!("unknown pipeline stage `{other}` in checkpoint"))),
        };
        Ok(Self { config, epoch: ck.epoch, generator, table, mapper })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn model(&self) -> Result<TrainedModel> {
        let mapper = self
            .mapper
            .clone()
            .ok_or_else(|| Error::State("checkpoint has no mapper; train one with train-mapper first".into()))?;
        let mut m = TrainedModel::new(self.generator.clone(), mapper)?;
        m.metadata.insert("dataset".into(), self.config.dataset.path.display().to_string());
        m.metadata.insert("config_hash".into(), self.config.hash());
        Ok(m)
    }

    pub fn table(&self) -> Result<&LatentTable> {
        self.table.as_ref().ok_or_else(|| Error::State("checkpoint has no latent table".into()))
    }
}

/// Paths and reports produced by [`run_pipeline`].
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub glo_checkpoint: PathBuf,
    pub model_checkpoint: PathBuf,
    pub pixel_checkpoint: Option<PathBuf>,
    pub grids: Vec<PathBuf>,
    pub plot: PathBuf,
    pub reports: Vec<EvalReport>,
}

impl RunArtifacts {
    pub fn report(&self, sampler: &str) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.sampler == sampler)
    }
}

fn stage<T>(name: &str, last: &Option<PathBuf>, f: impl FnOnce() -> Result<T>) -> Result<T> {
    info!("stage {name}");
    f().map_err(|e| Error::Stage { stage: name.to_string(), last_checkpoint: last.clone(), source: Box::new(e) })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Train data and the reference set evaluation compares against.
pub fn load_data(cfg: &PipelineConfig) -> Result<(DatasetHandle, DatasetHandle)> {
    let (train, rest) = cfg.dataset.load_split(cfg.seed)?;
    let reference = match cfg.eval.reference {
        ReferenceSet::Train => train.clone(),
        ReferenceSet::Holdout => rest.ok_or_else(|| {
            Error::Config("eval.reference = \"holdout\" needs dataset.limit below the dataset size".into())
        })?,
    };
    Ok((train, reference))
}

/// GLO from scratch. Returns the generator, latents and a CSV of epoch statistics.
pub fn run_glo(cfg: &PipelineConfig, data: &DatasetHandle) -> Result<(Generator, LatentTable, String)> {
    let mut gen = Generator::new(&cfg.glo.generator, cfg.latent_dim, data.shape(), cfg.seed)?;
    let mut table = init_latent_table(data.len(), cfg.latent_dim, cfg.seed)?;
    let mut trainer = GloTrainer::new(cfg.glo.clone(), &gen, &table)?;
    let mut csv = String::from("epoch,mean_loss,latent_lr,generator_lr\n");
    for epoch in 0..cfg.glo.epochs {
        let s = trainer.epoch(&mut gen, &mut table, data, epoch)?;
        info!("glo epoch {epoch}: loss {:.6}", s.mean_loss);
        let _ = writeln!(csv, "{},{:e},{:e},{:e}", epoch, s.mean_loss, s.latent_lr, s.generator_lr);
    }
    Ok((gen, table, csv))
}

/// Mapper from scratch on a trained table.
pub fn run_mapper(cfg: &PipelineConfig, table: &LatentTable) -> Result<(MapperNetwork, String)> {
    let mut t = MapperNetwork::new(&cfg.imle.mapper, cfg.noise_dim, table.dim(), cfg.seed)?;
    let mut trainer = ImleTrainer::new(cfg.imle.clone())?;
    let mut csv = String::from("epoch,mean_matched_distance,mean_matched_sq_distance,mean_fit_loss\n");
    for epoch in 0..cfg.imle.epochs {
        let s = trainer.epoch(&mut t, table, epoch)?;
        info!("imle epoch {epoch}: matched distance {:.6}", s.mean_matched_distance);
        let _ = writeln!(csv, "{},{:e},{:e},{:e}", epoch, s.mean_matched_distance, s.mean_matched_sq_distance, s.mean_fit_loss);
    }
    Ok((t, csv))
}

/// Image-space IMLE baseline on a fresh generator fed noise directly.
pub fn run_pixel_imle(cfg: &PipelineConfig, data: &DatasetHandle) -> Result<Generator> {
    let mut gen = Generator::new(&cfg.glo.generator, cfg.noise_dim, data.shape(), rng::derive(cfg.seed, "pixel-imle"))?;
    let icfg = ImleTrainConfig {
        epochs: cfg.baseline.pixel_imle_epochs,
        pool_size: cfg.baseline.pixel_imle_pool_size,
        refresh: cfg.baseline.pixel_imle_refresh,
        ..cfg.imle.clone()
    };
    let mut trainer = PixelImleTrainer::new(icfg)?;
    for epoch in 0..cfg.baseline.pixel_imle_epochs {
        let s = trainer.epoch(&mut gen, data, epoch)?;
        info!("pixel-imle epoch {epoch}: matched distance {:.6}", s.mean_matched_distance);
    }
    Ok(gen)
}

/// The evaluation spec with `n` capped at the reference size.
pub fn effective_eval_spec(cfg: &PipelineConfig, reference: &DatasetHandle) -> EvalSpec {
    let mut spec = cfg.eval.clone();
    if spec.n > reference.len() {
        warn!("eval.n = {} exceeds the {} reference images; using {}", spec.n, reference.len(), reference.len());
        spec.n = reference.len();
    }
    spec
}

/// Reports for every sampler a bundle supports, recomputed from the bundle alone.
pub fn evaluate_bundle(bundle: &Bundle, reference: &DatasetHandle, extra: &[&dyn ImageSource]) -> Result<Vec<EvalReport>> {
    let cfg = &bundle.config;
    let spec = effective_eval_spec(cfg, reference);
    let embedder = Embedder::from_spec(&cfg.eval.embedder, reference.shape())?;
    let hash = cfg.hash();
    let mut reports = Vec::new();
    let model = bundle.mapper.as_ref().map(|_| bundle.model()).transpose()?;
    if let Some(m) = &model {
        reports.push(evaluate(m, reference, &embedder, &spec, &hash)?);
    }
    if let Some(table) = &bundle.table {
        let prior = fit_gaussian_prior(table)?;
        reports.push(evaluate(&GaussianFitSampler { generator: &bundle.generator, prior: &prior }, reference, &embedder, &spec, &hash)?);
    } else {
        reports.push(evaluate(&NoiseSampler { generator: &bundle.generator, label: "pixel-imle" }, reference, &embedder, &spec, &hash)?);
    }
    for src in extra {
        reports.push(evaluate(*src, reference, &embedder, &spec, &hash)?);
    }
    Ok(reports)
}

/// Real data scored against itself, as a sanity reference.
pub fn evaluate_data(cfg: &PipelineConfig, reference: &DatasetHandle) -> Result<EvalReport> {
    let spec = effective_eval_spec(cfg, reference);
    let embedder = Embedder::from_spec(&cfg.eval.embedder, reference.shape())?;
    evaluate(&DataSource(reference), reference, &embedder, &spec, &cfg.hash())
}

fn grid_cols(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).max(1)
}

/// Run every stage into a fresh run directory. With `resume_from`, the stages
/// already contained in that checkpoint are loaded instead of trained.
pub fn run_pipeline(cfg: &PipelineConfig, resume_from: Option<&Path>) -> Result<RunArtifacts> {
    let mut cfg = cfg.clone();
    cfg.resolve_seeds();
    cfg.validate()?;
    let dir = create_run_dir(&cfg)?;
    info!("run directory {}", dir.display());
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    let mut last: Option<PathBuf> = None;

    let resumed = match resume_from {
        Some(p) => {
            let b = stage("resume", &last, || Bundle::load(p))?;
            if b.table.is_none() {
                return Err(Error::Config(format!("{} is not a GLO or GLANN checkpoint", p.display())));
            }
            if b.config.glo != cfg.glo || b.config.latent_dim != cfg.latent_dim || b.config.dataset != cfg.dataset {
                warn!("resuming from a checkpoint trained under a different GLO or dataset config");
            }
            last = Some(p.to_path_buf());
            Some(b)
        }
        None => None,
    };

    let (train, reference) = stage("load-data", &last, || load_data(&cfg))?;
    info!("{} training images of shape {}", train.len(), train.shape());

    let glo_path = dir.join(GLO_CHECKPOINT);
    let (generator, table) = match &resumed {
        Some(b) => (b.generator.clone(), b.table.clone().expect("checked above")),
        None => stage("glo", &last, || {
            let (g, t, csv) = run_glo(&cfg, &train)?;
            write_text(&dir.join("glo_history.csv"), &csv)?;
            Ok((g, t))
        })?,
    };
    let glo_bundle = Bundle { config: cfg.clone(), epoch: cfg.glo.epochs as u64, generator, table: Some(table), mapper: None };
    stage("glo", &last, || glo_bundle.save(&glo_path))?;
    last = Some(glo_path.clone());

    let model_path = dir.join(MODEL_CHECKPOINT);
    let mapper = match resumed.as_ref().and_then(|b| b.mapper.clone()) {
        Some(m) => m,
        None => stage("imle", &last, || {
            let (m, csv) = run_mapper(&cfg, glo_bundle.table()?)?;
            write_text(&dir.join("imle_history.csv"), &csv)?;
            Ok(m)
        })?,
    };
    let bundle = Bundle { epoch: cfg.imle.epochs as u64, mapper: Some(mapper), ..glo_bundle };
    stage("imle", &last, || bundle.save(&model_path))?;
    last = Some(model_path.clone());

    let pixel = if cfg.baseline.pixel_imle_epochs > 0 {
        let path = dir.join(PIXEL_IMLE_CHECKPOINT);
        let gen = stage("pixel-imle", &last, || run_pixel_imle(&cfg, &train))?;
        let b = Bundle { config: cfg.clone(), epoch: cfg.baseline.pixel_imle_epochs as u64, generator: gen, table: None, mapper: None };
        stage("pixel-imle", &last, || b.save(&path))?;
        Some((b, path))
    } else {
        None
    };

    let grids = stage("sample", &last, || {
        let model = bundle.model()?;
        let n = cfg.grid_samples;
        let cols = grid_cols(n);
        let noise = sample_noise(n, model.noise_dim(), cfg.seed);
        write_noise(&dir.join("samples.noise"), &noise, cfg.seed)?;
        let mut grids = vec![dir.join("samples.png"), dir.join("gaussian-fit.png")];
        save_grid(&model.decode_noise(&noise)?, cols, &grids[0])?;
        let prior = fit_gaussian_prior(bundle.table()?)?;
        save_grid(&gaussian_fit_sample(&bundle.generator, &prior, n, cfg.seed)?, cols, &grids[1])?;
        if let Some((b, _)) = &pixel {
            let p = dir.join("pixel-imle.png");
            save_grid(&NoiseSampler { generator: &b.generator, label: "pixel-imle" }.generate(n, cfg.seed)?, cols, &p)?;
            grids.push(p);
        }
        Ok(grids)
    })?;

    let (reports, plot) = stage("evaluate", &last, || {
        let mut reports = evaluate_bundle(&bundle, &reference, &[])?;
        if let Some((b, _)) = &pixel {
            reports.extend(evaluate_bundle(b, &reference, &[])?);
        }
        for r in &reports {
            info!("{}: FID {:.6}, F8 {:.4}, F1/8 {:.4}", r.sampler, r.fid, r.f8, r.f1_8);
            r.save(&dir, &r.sampler)?;
        }
        let plot = dir.join("prd.png");
        let curves: Vec<_> = reports.iter().map(|r| (&r.curve, (r.f8, r.f1_8))).collect();
        plot_prd(&curves, &plot)?;
        Ok((reports, plot))
    })?;

    Ok(RunArtifacts {
        dir,
        glo_checkpoint: glo_path,
        model_checkpoint: model_path,
        pixel_checkpoint: pixel.map(|(_, p)| p),
        grids,
        plot,
        reports,
    })
}
