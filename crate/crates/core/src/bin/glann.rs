use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{concatenate, Array1, Axis};

use glann::config::{create_run_dir, PipelineConfig};
use glann::datasets::{fit_square, image_to_unit, ImageBatch};
use glann::eval::{plot_prd, DataSource, Embedder};
use glann::loss::{Loss, LossSpec};
use glann::pipeline::{self, Bundle, GLO_CHECKPOINT, MODEL_CHECKPOINT};
use glann::rng;
use glann::synthesis::{
    fit_gaussian_prior, gaussian_fit_sample, interpolate, invert_image, read_noise, sample_noise, save_grid, write_noise,
    InvertOptions,
};
use glann::{Error, Result};

#[derive(Parser)]
#[command(name = "glann", version, about = "Train and sample GLO + IMLE image generators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; missing keys take their defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set glo.epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        PipelineConfig::load(self.config.as_deref())?.with_overrides(&self.overrides)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    L2,
    LapPyramid,
    /// The loss the model was trained with.
    Train,
}

#[derive(Subcommand)]
enum Command {
    /// Train the generator and latent table (stage 1).
    TrainGlo {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint to write; defaults to a new run directory.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Train the noise-to-latent mapper on a stage-1 checkpoint (stage 2).
    TrainMapper {
        /// Stage-1 checkpoint.
        #[arg(long)]
        glo: PathBuf,
        /// Overrides on top of the config stored in the checkpoint.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Defaults to glann.ckpt next to the input.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Sample G(T(e)) with e ~ N(0, I) into an image grid.
    Sample {
        #[arg(short, long)]
        model: PathBuf,
        #[arg(short, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
        /// Also write the noise as little-endian f32 plus a text manifest.
        #[arg(long)]
        noise_out: Option<PathBuf>,
    },
    /// Sample from a Gaussian fitted to the latent codes.
    SampleGaussian {
        #[arg(short, long)]
        model: PathBuf,
        #[arg(short, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Find noise whose sample reconstructs an image.
    Invert {
        #[arg(short, long)]
        model: PathBuf,
        /// Raster image; resized and cropped to the model's shape.
        #[arg(long, conflicts_with = "index", required_unless_present = "index")]
        image: Option<PathBuf>,
        /// Image id in the training data named by the checkpoint's config.
        #[arg(long)]
        index: Option<usize>,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = LossArg::L2)]
        loss: LossArg,
        /// Target and reconstruction side by side.
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        noise_out: Option<PathBuf>,
    },
    /// Decode a straight line between two noise vectors.
    Interpolate {
        #[arg(short, long)]
        model: PathBuf,
        /// Noise files written by `sample --noise-out`; the first row is used.
        #[arg(long, requires = "to")]
        from: Option<PathBuf>,
        #[arg(long, requires = "from")]
        to: Option<PathBuf>,
        /// Seed for random endpoints when no files are given.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Recompute FID and PRD reports from a checkpoint.
    Evaluate {
        #[arg(short, long)]
        model: PathBuf,
        /// Overrides on top of the config stored in the checkpoint.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Also score the reference data against itself.
        #[arg(long)]
        with_data: bool,
        /// Report directory.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// All stages into a fresh run directory.
    RunAll {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Skip the stages already contained in this checkpoint.
        #[arg(long)]
        resume_from: Option<PathBuf>,
    },
}

fn bundle_with(path: &Path, overrides: &[String]) -> Result<Bundle> {
    let mut b = Bundle::load(path)?;
    b.config = b.config.with_overrides(overrides)?;
    Ok(b)
}

fn load_target(b: &Bundle, image: Option<&Path>, index: Option<usize>) -> Result<ImageBatch> {
    let shape = b.generator.shape;
    match (image, index) {
        (Some(p), _) => {
            if shape.height != shape.width {
                return Err(Error::Config(format!("image inversion needs a square model, this one is {shape}")));
            }
            let img = image::open(p)?;
            let px = image_to_unit(&fit_square(&img, shape.height as u32), shape.channels);
            let pixels = ndarray::Array4::from_shape_vec((1, shape.channels, shape.height, shape.width), px)
                .map_err(|e| Error::Format(e.to_string()))?;
            Ok(ImageBatch::generated(pixels))
        }
        (None, Some(i)) => {
            let (train, _) = pipeline::load_data(&b.config)?;
            train.batch(&[i])
        }
        (None, None) => Err(Error::Argument("give --image or --index".into())),
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::TrainGlo { cfg, out } => {
            let cfg = cfg.load()?;
            cfg.validate()?;
            let out = match out {
                Some(p) => p,
                None => create_run_dir(&cfg)?.join(GLO_CHECKPOINT),
            };
            let (train, _) = pipeline::load_data(&cfg)?;
            let (generator, table, csv) = pipeline::run_glo(&cfg, &train)?;
            let b = Bundle { epoch: cfg.glo.epochs as u64, config: cfg, generator, table: Some(table), mapper: None };
            b.save(&out)?;
            let hist = out.with_file_name("glo_history.csv");
            std::fs::write(&hist, csv).map_err(|e| Error::Io { path: hist, source: e })?;
            println!("{}", out.display());
        }
        Command::TrainMapper { glo, overrides, out } => {
            let mut b = bundle_with(&glo, &overrides)?;
            b.config.validate()?;
            let (mapper, csv) = pipeline::run_mapper(&b.config, b.table()?)?;
            b.mapper = Some(mapper);
            b.epoch = b.config.imle.epochs as u64;
            let out = out.unwrap_or_else(|| glo.with_file_name(MODEL_CHECKPOINT));
            b.save(&out)?;
            let hist = out.with_file_name("imle_history.csv");
            std::fs::write(&hist, csv).map_err(|e| Error::Io { path: hist, source: e })?;
            println!("{}", out.display());
        }
        Command::Sample { model, n, seed, out, noise_out } => {
            let m = Bundle::load(&model)?.model()?;
            let e = sample_noise(n, m.noise_dim(), seed);
            save_grid(&m.decode_noise(&e)?, grid_cols(n), &out)?;
            if let Some(p) = noise_out {
                write_noise(&p, &e, seed)?;
            }
        }
        Command::SampleGaussian { model, n, seed, out } => {
            let b = Bundle::load(&model)?;
            let prior = fit_gaussian_prior(b.table()?)?;
            save_grid(&gaussian_fit_sample(&b.generator, &prior, n, seed)?, grid_cols(n), &out)?;
        }
        Command::Invert { model, image, index, steps, lr, seed, loss, out, noise_out } => {
            let b = Bundle::load(&model)?;
            let m = b.model()?;
            let target = load_target(&b, image.as_deref(), index)?;
            let spec = match loss {
                LossArg::L2 => LossSpec::l2(),
                LossArg::LapPyramid => LossSpec::lap_pyramid(b.config.glo.loss.pyramid_levels),
                LossArg::Train => b.config.glo.loss.clone(),
            };
            let loss = Loss::from_spec(&spec, m.shape())?;
            let inv = invert_image(&m, &target, &loss, &InvertOptions { steps, lr, seed, init: None })?;
            if inv.diverged {
                log::warn!("loss became non-finite after {} steps; returning the best iterate", inv.steps_run);
            }
            println!("initial loss {:e}, final loss {:e}", inv.initial_loss, inv.loss);
            let e = inv.noise.clone().insert_axis(Axis(0));
            let recon = m.decode_noise(&e)?;
            let both = concatenate(Axis(0), &[target.pixels.view(), recon.pixels.view()]).expect("same shape");
            save_grid(&ImageBatch::generated(both), 2, &out)?;
            if let Some(p) = noise_out {
                write_noise(&p, &e, seed)?;
            }
        }
        Command::Interpolate { model, from, to, seed, steps, out } => {
            let m = Bundle::load(&model)?.model()?;
            let (e1, e2): (Array1<f64>, Array1<f64>) = match (from, to) {
                (Some(a), Some(b)) => (first_row(&a)?, first_row(&b)?),
                _ => {
                    let e = rng::standard_normal(2, m.noise_dim(), rng::derive(seed, "interpolate"));
                    (e.row(0).to_owned(), e.row(1).to_owned())
                }
            };
            save_grid(&interpolate(&m, e1.view(), e2.view(), steps)?, steps, &out)?;
        }
        Command::Evaluate { model, overrides, with_data, out } => {
            let b = bundle_with(&model, &overrides)?;
            let (_, reference) = pipeline::load_data(&b.config)?;
            let embedder = Embedder::from_spec(&b.config.eval.embedder, reference.shape())?;
            let data = DataSource(&reference);
            let extra: Vec<&dyn glann::eval::ImageSource> = if with_data { vec![&data] } else { vec![] };
            let reports = pipeline::evaluate_bundle(&b, &reference, &extra)?;
            for r in &reports {
                r.save(&out, &r.sampler)?;
                println!("{}: fid {:.6} f8 {:.4} f1_8 {:.4} ({})", r.sampler, r.fid, r.f8, r.f1_8, embedder.id);
            }
            let curves: Vec<_> = reports.iter().map(|r| (&r.curve, (r.f8, r.f1_8))).collect();
            plot_prd(&curves, &out.join("prd.png"))?;
        }
        Command::RunAll { cfg, resume_from } => {
            let cfg = cfg.load()?;
            let run = pipeline::run_pipeline(&cfg, resume_from.as_deref())?;
            for r in &run.reports {
                println!("{}: fid {:.6} f8 {:.4} f1_8 {:.4}", r.sampler, r.fid, r.f8, r.f1_8);
            }
            println!("{}", run.dir.display());
        }
    }
    Ok(())
}

fn first_row(path: &Path) -> Result<Array1<f64>> {
    let (e, _) = read_noise(path)?;
    if e.nrows() == 0 {
        return Err(Error::Format(format!("{} holds no noise vectors", path.display())));
    }
    Ok(e.row(0).to_owned())
}

fn grid_cols(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).max(1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    rng::init_execution_mode();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
