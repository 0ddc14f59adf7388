//! Sample-quality evaluation: embeddings, FID and precision/recall curves.

mod embed;
mod fid;
mod plot;
mod prd;

pub use embed::{Embedder, EmbedderKind, EmbedderSpec};
pub use fid::{fid, gaussian_stats, matrix_sqrt_product, trace_sqrt_product, GaussianStats};
pub use plot::plot_prd;
pub use prd::{
    f_beta, f_beta_summary, kmeans, lambda_grid, prd_curve, prd_histograms, KMeans, PrdCurve, DEFAULT_ANGLES,
    DEFAULT_BINS,
};

use std::fmt::Write as _;
use std::path::Path;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::{DatasetHandle, ImageBatch, ImageShape};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::rng;
use crate::synthesis::{gaussian_fit_sample, sample_images, GaussianLatentPrior, TrainedModel};

/// Anything that can produce `n` images for a seed.
pub trait ImageSource {
    fn name(&self) -> String;
    fn shape(&self) -> ImageShape;
    fn generate(&self, n: usize, seed: u64) -> Result<ImageBatch>;
}

impl ImageSource for TrainedModel {
    fn name(&self) -> String {
        "glann".into()
    }

    fn shape(&self) -> ImageShape {
        TrainedModel::shape(self)
    }

    fn generate(&self, n: usize, seed: u64) -> Result<ImageBatch> {
        sample_images(self, n, seed)
    }
}

/// Generator decoding draws from a Gaussian fitted to its latent codes.
pub struct GaussianFitSampler<'a> {
    pub generator: &'a Generator,
    pub prior: &'a GaussianLatentPrior,
}

impl ImageSource for GaussianFitSampler<'_> {
    fn name(&self) -> String {
        "gaussian-fit".into()
    }

    fn shape(&self) -> ImageShape {
        self.generator.shape
    }

    fn generate(&self, n: usize, seed: u64) -> Result<ImageBatch> {
        gaussian_fit_sample(self.generator, self.prior, n, seed)
    }
}

/// Generator fed standard normal noise directly.
pub struct NoiseSampler<'a> {
    pub generator: &'a Generator,
    pub label: &'a str,
}

impl ImageSource for NoiseSampler<'_> {
    fn name(&self) -> String {
        self.label.into()
    }

    fn shape(&self) -> ImageShape {
        self.generator.shape
    }

    fn generate(&self, n: usize, seed: u64) -> Result<ImageBatch> {
        let e = crate::synthesis::sample_noise(n, self.generator.latent_dim, seed);
        Ok(ImageBatch::generated(self.generator.decode(e.view())?))
    }
}

/// Real images, picked exactly as [`evaluate`] picks its reference set.
pub struct DataSource<'a>(pub &'a DatasetHandle);

impl ImageSource for DataSource<'_> {
    fn name(&self) -> String {
        "data".into()
    }

    fn shape(&self) -> ImageShape {
        self.0.shape()
    }

    fn generate(&self, n: usize, seed: u64) -> Result<ImageBatch> {
        self.0.batch(&reference_ids(self.0.len(), n, seed)?)
    }
}

/// `n` distinct ids out of `0..total`, seeded.
pub fn reference_ids(total: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > total {
        return Err(Error::arg(format!("requested {n} reference images, only {total} available")));
    }
    let mut ids: Vec<usize> = (0..total).collect();
    ids.shuffle(&mut rng::rng(rng::derive(seed, "eval-reference")));
    ids.truncate(n);
    Ok(ids)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceSet {
    /// The training images.
    Train,
    /// Images after the training subset in the same file.
    Holdout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    /// Samples per side.
    pub n: usize,
    pub bins: usize,
    pub angles: usize,
    pub reference: ReferenceSet,
    pub embedder: EmbedderSpec,
    /// Set from the pipeline seed; not part of the config text.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            n: 10_000,
            bins: DEFAULT_BINS,
            angles: DEFAULT_ANGLES,
            reference: ReferenceSet::Train,
            embedder: EmbedderSpec::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub sampler: String,
    pub fid: f64,
    pub curve: PrdCurve,
    /// Recall-weighted summary.
    pub f8: f64,
    /// Precision-weighted summary.
    pub f1_8: f64,
    pub embedder: String,
    pub n_real: usize,
    pub n_gen: usize,
    pub seed: u64,
    pub config_hash: String,
    pub reference_ids: Vec<usize>,
}

/// Metrics between two embedded feature sets.
pub fn compare_features(real: ArrayView2<f64>, gen: ArrayView2<f64>, bins: usize, angles: usize, seed: u64) -> Result<(f64, PrdCurve)> {
    let f = fid(&gaussian_stats(real)?, &gaussian_stats(gen)?)?;
    let (p, q) = prd_histograms(real, gen, bins, seed)?;
    let mut curve = prd_curve(&p, &q, angles)?;
    curve.cluster_seed = seed;
    Ok((f, curve))
}

/// Embed `n` images from `source` and `n` reference images, then compare.
pub fn evaluate(
    source: &dyn ImageSource,
    reference: &DatasetHandle,
    embedder: &Embedder,
    spec: &EvalSpec,
    config_hash: &str,
) -> Result<EvalReport> {
    if source.shape() != reference.shape() {
        return Err(Error::arg(format!("sampler emits {}, reference images are {}", source.shape(), reference.shape())));
    }
    let ids = reference_ids(reference.len(), spec.n, spec.seed)?;
    let real = reference.batch(&ids)?;
    let gen = source.generate(spec.n, spec.seed)?;
    let fr = embedder.embed(&real.pixels)?;
    let fg = embedder.embed(&gen.pixels)?;
    let (fid, curve) = compare_features(fr.view(), fg.view(), spec.bins, spec.angles, spec.seed)?;
    let (f8, f1_8) = f_beta_summary(&curve);
    Ok(EvalReport {
        sampler: source.name(),
        fid,
        curve,
        f8,
        f1_8,
        embedder: embedder.id.clone(),
        n_real: real.len(),
        n_gen: gen.len(),
        seed: spec.seed,
        config_hash: config_hash.to_string(),
        reference_ids: ids,
    })
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "sampler = {}", self.sampler);
        let _ = writeln!(s, "fid = {:e}", self.fid);
        let _ = writeln!(s, "f8 = {:e}", self.f8);
        let _ = writeln!(s, "f1_8 = {:e}", self.f1_8);
        let _ = writeln!(s, "embedder = {}", self.embedder);
        let _ = writeln!(s, "n_real = {}", self.n_real);
        let _ = writeln!(s, "n_gen = {}", self.n_gen);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "bins = {}", self.curve.bins);
        let _ = writeln!(s, "cluster_seed = {}", self.curve.cluster_seed);
        let _ = writeln!(s, "config_hash = {}", self.config_hash);
        let ids: Vec<String> = self.reference_ids.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "reference_ids = {}", ids.join(","));
        let _ = writeln!(s, "[curve]");
        s.push_str(&self.curve_csv());
        s
    }

    /// `lambda,alpha,beta` rows.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("lambda,alpha,beta\n");
        for i in 0..self.curve.len() {
            let _ = writeln!(s, "{:e},{:e},{:e}", self.curve.lambdas[i], self.curve.precision[i], self.curve.recall[i]);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (head, curve) = text
            .split_once("[curve]\n")
            .ok_or_else(|| Error::Format("report lacks a [curve] section".into()))?;
        let mut kv = std::collections::BTreeMap::new();
        for line in head.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Format(format!("malformed report line `{line}`")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| kv.get(k).cloned().ok_or_else(|| Error::Format(format!("report lacks `{k}`")));
        fn num<T: std::str::FromStr>(k: &str, v: String) -> Result<T> {
            v.parse().map_err(|_| Error::Format(format!("report field `{k}` is malformed")))
        }
        let mut rdr = csv::Reader::from_reader(curve.as_bytes());
        let (mut lambdas, mut precision, mut recall) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.deserialize::<(f64, f64, f64)>() {
            let (l, a, b) = rec.map_err(|e| Error::Format(format!("curve table: {e}")))?;
            lambdas.push(l);
            precision.push(a);
            recall.push(b);
        }
        let ids = get("reference_ids")?;
        let reference_ids = if ids.is_empty() {
            Vec::new()
        } else {
            ids.split(',').map(|v| num("reference_ids", v.to_string())).collect::<Result<_>>()?
        };
        Ok(Self {
            sampler: get("sampler")?,
            fid: num("fid", get("fid")?)?,
            f8: num("f8", get("f8")?)?,
            f1_8: num("f1_8", get("f1_8")?)?,
            embedder: get("embedder")?,
            n_real: num("n_real", get("n_real")?)?,
            n_gen: num("n_gen", get("n_gen")?)?,
            seed: num("seed", get("seed")?)?,
            config_hash: get("config_hash")?,
            curve: PrdCurve {
                lambdas,
                precision,
                recall,
                bins: num("bins", get("bins")?)?,
                cluster_seed: num("cluster_seed", get("cluster_seed")?)?,
            },
            reference_ids,
        })
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let txt = dir.join(format!("{stem}.txt"));
        std::fs::write(&txt, self.to_text()).map_err(|e| Error::io(&txt, e))?;
        let csv = dir.join(format!("{stem}_prd.csv"));
        std::fs::write(&csv, self.curve_csv()).map_err(|e| Error::io(&csv, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normal;

    fn data(n: usize) -> DatasetHandle {
        let px = standard_normal(n, 64, 5).mapv(|v| (0.7 * v).tanh());
        DatasetHandle::from_pixels("mem", px.into_shape_with_order((n, 1, 8, 8)).unwrap()).unwrap()
    }

    #[test]
    fn self_evaluation_is_perfect() {
        let d = data(300);
        let emb = Embedder::from_spec(&EmbedderSpec { dim: 8, ..EmbedderSpec::default() }, d.shape()).unwrap();
        let spec = EvalSpec { n: 200, ..EvalSpec::default() };
        let r = evaluate(&DataSource(&d), &d, &emb, &spec, "h").unwrap();
        assert!(r.fid < 1e-3, "{}", r.fid);
        assert!(r.f8 > 0.99 && r.f1_8 > 0.99);
        assert_eq!(r.curve.len(), 1001);
        assert!(evaluate(&DataSource(&d), &d, &emb, &EvalSpec { n: 301, ..spec }, "h").is_err());
    }

    #[test]
    fn swapping_roles_keeps_fid_and_swaps_scores() {
        let a = standard_normal(150, 4, 1);
        let b = standard_normal(150, 4, 2) * 1.5 + 0.7;
        let (f1, c1) = compare_features(a.view(), b.view(), 10, 1001, 3).unwrap();
        let (f2, c2) = compare_features(b.view(), a.view(), 10, 1001, 3).unwrap();
        assert!((f1 - f2).abs() < 1e-8 * f1.max(1.0));
        let (s1, s2) = (f_beta_summary(&c1), f_beta_summary(&c2));
        assert!((s1.0 - s2.1).abs() < 1e-9 && (s1.1 - s2.0).abs() < 1e-9, "{s1:?} vs {s2:?}");
    }

    #[test]
    fn report_text_round_trip() {
        let d = data(60);
        let emb = Embedder::from_spec(&EmbedderSpec { dim: 4, ..EmbedderSpec::default() }, d.shape()).unwrap();
        let spec = EvalSpec { n: 40, angles: 21, bins: 5, ..EvalSpec::default() };
        let src = NoiseSampler {
            generator: &Generator::new(
                &crate::generator::GeneratorSpec { kind: crate::generator::GeneratorKind::Linear, hidden: 1, channels: 1 },
                3,
                d.shape(),
                1,
            )
            .unwrap(),
            label: "noise",
        };
        let r = evaluate(&src, &d, &emb, &spec, "abc").unwrap();
        assert_eq!(EvalReport::from_text(&r.to_text()).unwrap(), r);
        let dir = tempfile::tempdir().unwrap();
        r.save(dir.path(), "noise").unwrap();
        assert!(dir.path().join("noise_prd.csv").exists());
    }
}
