use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array4, Axis, Ix4};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{Layer, Mode, Network, Tensor};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorKind {
    /// Single tap on the raw image.
    Identity,
    /// Frozen convolution stack with seeded random weights.
    RandomConv,
    /// Random-conv layout with weights read from a checkpoint file.
    Checkpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorSpec {
    pub kind: ExtractorKind,
    pub seed: u64,
    /// Output channels of each 3×3 convolution; one tap after each.
    pub channels: Vec<usize>,
    /// Expected input channels; 0 means "whatever the images have".
    pub input_channels: usize,
    pub path: Option<PathBuf>,
    /// Per-tap weights; empty means `1 / taps` each.
    pub layer_weights: Vec<f64>,
    pub pixel_weight: f64,
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        Self {
            kind: ExtractorKind::RandomConv,
            seed: 0x5eed,
            channels: vec![8, 16, 32],
            input_channels: 0,
            path: None,
            layer_weights: Vec::new(),
            pixel_weight: 1.0,
        }
    }
}

/// A frozen feature network split at its tap points.
///
/// Tap `k` is the output of `segments[0..=k]` applied in order; an empty
/// segment taps its input unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    pub id: String,
    segments: Vec<Network>,
    layer_weights: Vec<f64>,
    pixel_weight: f64,
    input_channels: usize,
}

impl FeatureExtractor {
    pub fn new(
        id: impl Into<String>,
        segments: Vec<Network>,
        layer_weights: Vec<f64>,
        pixel_weight: f64,
        input_channels: usize,
    ) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Config("feature extractor needs at least one tap".into()));
        }
        let layer_weights = if layer_weights.is_empty() {
            vec![1.0 / segments.len() as f64; segments.len()]
        } else {
            layer_weights
        };
        if layer_weights.len() != segments.len() {
            return Err(Error::Config(format!(
                "{} layer weights given for {} tapped layers",
                layer_weights.len(),
                segments.len()
            )));
        }
        if layer_weights.iter().chain([&pixel_weight]).any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("perceptual weights must be finite and nonnegative".into()));
        }
        Ok(Self {
            id: id.into(),
            segments,
            layer_weights,
            pixel_weight,
            input_channels,
        })
    }

    /// One tap on the raw image.
    pub fn identity(layer_weight: f64, pixel_weight: f64) -> Self {
        Self::new("identity", vec![Network::default()], vec![layer_weight], pixel_weight, 0).expect("valid identity")
    }

    /// 3×3 conv + ReLU blocks; the first keeps resolution, later ones stride 2.
    pub fn random_conv(input_channels: usize, channels: &[usize], seed: u64, layer_weights: Vec<f64>, pixel_weight: f64) -> Result<Self> {
        if input_channels == 0 || channels.is_empty() || channels.contains(&0) {
            return Err(Error::Config("random-conv extractor needs positive channel counts".into()));
        }
        let mut r = rng::rng(rng::derive(seed, "extractor"));
        let mut prev = input_channels;
        let segments = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let stride = if i == 0 { 1 } else { 2 };
                let seg = Network::new(vec![Layer::conv2d(prev, c, 3, stride, 1, &mut r), Layer::Relu]);
                prev = c;
                seg
            })
            .collect();
        let id = format!("random-conv-{input_channels}-{}-seed{seed}", join(channels));
        Self::new(id, segments, layer_weights, pixel_weight, input_channels)
    }

    pub fn from_spec(spec: &ExtractorSpec, image_channels: usize) -> Result<Self> {
        let input_channels = if spec.input_channels == 0 { image_channels } else { spec.input_channels };
        match spec.kind {
            ExtractorKind::Identity => {
                let w = spec.layer_weights.first().copied().unwrap_or(1.0);
                Ok(Self::identity(w, spec.pixel_weight))
            }
            ExtractorKind::RandomConv => Self::random_conv(
                input_channels,
                &spec.channels,
                spec.seed,
                spec.layer_weights.clone(),
                spec.pixel_weight,
            ),
            ExtractorKind::Checkpoint => {
                let path = spec
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config("checkpoint extractor requires `path`".into()))?;
                Self::load(path, spec.layer_weights.clone(), spec.pixel_weight)
            }
        }
    }

    pub fn taps(&self) -> usize {
        self.segments.len()
    }

    fn adapt_input(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let c = x.dim().1;
        match (self.input_channels, c) {
            (0, _) => Ok(x.clone()),
            (want, got) if want == got => Ok(x.clone()),
            (3, 1) => Ok(ndarray::concatenate(Axis(1), &[x.view(), x.view(), x.view()]).expect("same shapes")),
            (want, got) => Err(Error::Config(format!(
                "feature extractor `{}` expects {want}-channel input, images have {got}",
                self.id
            ))),
        }
    }

    fn collapse_grad(&self, g: Array4<f64>, channels: usize) -> Array4<f64> {
        if g.dim().1 == channels {
            g
        } else {
            g.sum_axis(Axis(1)).insert_axis(Axis(1))
        }
    }

    /// Features at every tap.
    pub fn features(&self, x: &Array4<f64>) -> Result<Vec<Tensor>> {
        let mut h = self.adapt_input(x)?.into_dyn();
        let mut out = Vec::with_capacity(self.segments.len());
        for seg in &self.segments {
            h = seg.forward(&h);
            out.push(h.clone());
        }
        Ok(out)
    }

    pub fn loss(&self, a: &Array4<f64>, b: &Array4<f64>) -> Result<f64> {
        Ok(self.loss_impl(a, b, false)?.0)
    }

    pub fn loss_and_grad(&self, a: &Array4<f64>, b: &Array4<f64>) -> Result<(f64, Array4<f64>)> {
        let (v, g) = self.loss_impl(a, b, true)?;
        Ok((v, g.expect("gradient requested")))
    }

    fn loss_impl(&self, a: &Array4<f64>, b: &Array4<f64>, want_grad: bool) -> Result<(f64, Option<Array4<f64>>)> {
        super::check_same_shape(a, b)?;
        let fb = self.features(b)?;
        let mut h = self.adapt_input(a)?.into_dyn();
        let mut tapes = Vec::with_capacity(self.segments.len());
        let mut tap_grads = Vec::with_capacity(self.segments.len());
        let mut total = 0.0;
        for ((seg, target), &w) in self.segments.iter().zip(&fb).zip(&self.layer_weights) {
            let (out, tape) = seg.forward_tape(&h, Mode::Eval);
            let diff = &out - target;
            let count = diff.len().max(1) as f64;
            total += w * diff.iter().map(|d| d * d).sum::<f64>() / count;
            tap_grads.push(diff * (2.0 * w / count));
            tapes.push(tape);
            h = out;
        }
        let (pix, pix_grad) = super::l2_value_and_grad(a, b);
        total += self.pixel_weight * pix;
        if !want_grad {
            return Ok((total, None));
        }
        let mut g = tap_grads.pop().expect("at least one tap");
        for k in (0..self.segments.len()).rev() {
            g = self.segments[k].backward(&tapes[k], &g).0;
            if k > 0 {
                g += &tap_grads[k - 1];
            }
        }
        let g4 = g.into_dimensionality::<Ix4>().map_err(|e| Error::Numeric(e.to_string()))?;
        let g4 = self.collapse_grad(g4, a.dim().1) + pix_grad * self.pixel_weight;
        Ok((total, Some(g4)))
    }

    /// Write the extractor weights in the checkpoint format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let channels: Vec<usize> = self
            .segments
            .iter()
            .filter_map(|s| match s.layers.first() {
                Some(Layer::Conv2d(c)) => Some(c.weight.shape()[0]),
                _ => None,
            })
            .collect();
        if channels.len() != self.segments.len() {
            return Err(Error::arg("only convolutional extractors can be saved"));
        }
        let mut ck = Checkpoint::new(0);
        ck.meta.insert("kind".into(), "feature-extractor".into());
        ck.meta.insert("input_channels".into(), self.input_channels.to_string());
        ck.meta.insert("channels".into(), join(&channels));
        for (i, seg) in self.segments.iter().enumerate() {
            for (name, t) in seg.named_tensors(&format!("extractor.{i}")) {
                ck.insert(name, t);
            }
        }
        ck.save(path)
    }

    pub fn load(path: &Path, layer_weights: Vec<f64>, pixel_weight: f64) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let meta = |k: &str| {
            ck.meta
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Format(format!("{}: extractor checkpoint missing `{k}`", path.display())))
        };
        let input_channels: usize = meta("input_channels")?
            .parse()
            .map_err(|_| Error::Format("bad input_channels".into()))?;
        let channels: Vec<usize> = meta("channels")?
            .split('-')
            .map(|s| s.parse().map_err(|_| Error::Format("bad channel list".into())))
            .collect::<Result<_>>()?;
        let mut fx = Self::random_conv(input_channels, &channels, 0, layer_weights, pixel_weight)?;
        let tensors: BTreeMap<String, Tensor> = ck.tensors.into_iter().collect();
        for (i, seg) in fx.segments.iter_mut().enumerate() {
            seg.load_named(&format!("extractor.{i}"), &tensors)?;
        }
        fx.id = format!("checkpoint:{}", path.display());
        Ok(fx)
    }
}

fn join(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
}
