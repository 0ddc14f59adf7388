//! Pipeline configuration, stored as TOML.
//!
//! Every key has a default, so an empty file is a valid config. Values are
//! resolved in the order flag > file > default: [`PipelineConfig::load`] reads
//! the file and [`PipelineConfig::apply_override`] applies `section.key=value`
//! flags on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{load_idx, load_image_dir, DatasetHandle};
use crate::error::{Error, Result};
use crate::eval::EvalSpec;
use crate::glo::GloTrainConfig;
use crate::imle::{ImleTrainConfig, RefreshPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    /// IDX image file, optionally gzipped.
    Idx,
    /// Directory of raster images, sorted by file name.
    ImageDir,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub format: DatasetFormat,
    pub path: PathBuf,
    /// Train on the first `limit` images; 0 means all of them.
    pub limit: usize,
    /// Side length images are resized to. Only read for `image-dir`.
    pub image_size: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            format: DatasetFormat::Idx,
            path: PathBuf::from("data/mnist5k-images-idx3-ubyte.gz"),
            limit: 0,
            image_size: 64,
        }
    }
}

impl DatasetSpec {
    /// Every image in the source, before `limit` is applied.
    pub fn load_all(&self, seed: u64) -> Result<DatasetHandle> {
        let h = match self.format {
            DatasetFormat::Idx => load_idx(&self.path)?,
            DatasetFormat::ImageDir => load_image_dir(&self.path, self.image_size)?,
        };
        Ok(h.with_seed(seed))
    }

    /// `(train, rest)`: the first `limit` images and whatever follows them.
    pub fn load_split(&self, seed: u64) -> Result<(DatasetHandle, Option<DatasetHandle>)> {
        let all = self.load_all(seed)?;
        if self.limit == 0 || self.limit >= all.len() {
            return Ok((all, None));
        }
        let rest = all.skip(self.limit)?;
        Ok((all.take(self.limit)?, Some(rest)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSpec {
    /// Epochs of image-space IMLE on a fresh generator; 0 skips the baseline.
    pub pixel_imle_epochs: usize,
    /// 0 means the IMLE default.
    pub pixel_imle_pool_size: usize,
    pub pixel_imle_refresh: RefreshPolicy,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self { pixel_imle_epochs: 0, pixel_imle_pool_size: 0, pixel_imle_refresh: RefreshPolicy::PerEpoch }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub latent_dim: usize,
    pub noise_dim: usize,
    pub output_dir: PathBuf,
    /// Images in each sample grid.
    pub grid_samples: usize,
    pub dataset: DatasetSpec,
    pub glo: GloTrainConfig,
    pub imle: ImleTrainConfig,
    pub eval: EvalSpec,
    pub baseline: BaselineSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            latent_dim: 64,
            noise_dim: 64,
            output_dir: PathBuf::from("runs"),
            grid_samples: 64,
            dataset: DatasetSpec::default(),
            glo: GloTrainConfig::default(),
            imle: ImleTrainConfig::default(),
            eval: EvalSpec::default(),
            baseline: BaselineSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve_seeds();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Read a config file; `None` gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_toml(&text)
            }
        }
    }

    /// Copy the global seed into each stage config.
    pub fn resolve_seeds(&mut self) {
        self.glo.seed = self.seed;
        self.imle.seed = self.seed;
        self.eval.seed = self.seed;
    }

    /// Apply `a.b.c=value`. The value is read as a TOML literal and falls
    /// back to a bare string, so `dataset.path=x.idx` needs no quotes.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::arg(format!("override `{assignment}` is not of the form key=value")))?;
        let key = key.trim();
        let value = parse_value(raw.trim());
        let mut root = toml::Value::try_from(&*self).expect("config serializes");
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::arg(format!("bad override key `{key}`")));
        }
        let mut table = root.as_table_mut().expect("config is a table");
        for part in &parts[..parts.len() - 1] {
            let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| Error::arg(format!("override key `{key}`: `{part}` is not a section")))?;
        }
        table.insert(parts[parts.len() - 1].to_string(), value);
        let mut cfg: Self = root.try_into().map_err(|e: toml::de::Error| Error::Config(format!("override `{assignment}`: {e}")))?;
        cfg.resolve_seeds();
        *self = cfg;
        Ok(())
    }

    pub fn with_overrides<S: AsRef<str>>(mut self, overrides: &[S]) -> Result<Self> {
        for o in overrides {
            self.apply_override(o.as_ref())?;
        }
        Ok(self)
    }

    /// Hex SHA-256 of the config text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.noise_dim == 0 {
            return Err(Error::Config("latent_dim and noise_dim must be positive".into()));
        }
        self.glo.validate()?;
        self.imle.validate()?;
        if self.eval.n < 2 || self.eval.bins < 2 || self.eval.angles < 2 {
            return Err(Error::Config("eval.n, eval.bins and eval.angles must each be at least 2".into()));
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// `<output_dir>/<timestamp>-<hash8>`, with a numeric suffix if that exists.
/// The directory is created; an existing one is never reused.
pub fn create_run_dir(cfg: &PipelineConfig) -> Result<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = format!("{stamp}-{}", &cfg.hash()[..8]);
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    for attempt in 0.. {
        let name = if attempt == 0 { base.clone() } else { format!("{base}-{attempt}") };
        let dir = cfg.output_dir.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::OptimizerKind;

    #[test]
    fn empty_text_is_defaults() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
        assert_eq!(PipelineConfig::default().glo.epochs, 500);
        assert_eq!(PipelineConfig::default().glo.decay_interval, 50);
        assert_eq!(PipelineConfig::default().imle.epochs, 50);
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = PipelineConfig { seed: 9, latent_dim: 7, ..Default::default() };
        cfg.glo.latent_optimizer = OptimizerKind::Adam;
        cfg.eval.embedder.channels = vec![4, 5, 6];
        cfg.dataset.limit = 11;
        cfg.resolve_seeds();
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.glo.seed, 9);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn overrides_beat_file_values() {
        let cfg = PipelineConfig::from_toml("seed = 3\n[glo]\nepochs = 7\nlatent_lr = 0.5\n").unwrap();
        let cfg = cfg
            .with_overrides(&["glo.epochs=2", "dataset.path=foo/bar.idx", "glo.loss.kind=l2", "imle.refresh=\"per-epoch\""])
            .unwrap();
        assert_eq!(cfg.glo.epochs, 2);
        assert_eq!(cfg.glo.latent_lr, 0.5);
        assert_eq!(cfg.dataset.path, PathBuf::from("foo/bar.idx"));
        assert_eq!(cfg.glo.loss.kind, crate::loss::LossKind::L2);
        assert_eq!(cfg.imle.refresh, crate::imle::RefreshPolicy::PerEpoch);
        assert_eq!(cfg.imle.seed, 3);
    }

    #[test]
    fn bad_keys_are_config_errors() {
        assert!(matches!(PipelineConfig::from_toml("nope = 1"), Err(Error::Config(_))));
        let mut cfg = PipelineConfig::default();
        assert!(matches!(cfg.apply_override("glo.nope=1"), Err(Error::Config(_))));
        assert!(matches!(cfg.apply_override("glo.epochs=abc"), Err(Error::Config(_))));
        assert!(matches!(cfg.apply_override("seed.x=1"), Err(Error::Argument(_))));
        assert!(matches!(cfg.apply_override("noequals"), Err(Error::Argument(_))));
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn run_dirs_are_never_reused() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig { output_dir: tmp.path().to_path_buf(), ..Default::default() };
        let a = create_run_dir(&cfg).unwrap();
        let b = create_run_dir(&cfg).unwrap();
        assert_ne!(a, b);
        assert!(a.file_name().unwrap().to_str().unwrap().contains(&cfg.hash()[..8]));
    }
}
