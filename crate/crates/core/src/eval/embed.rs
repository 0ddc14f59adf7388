//! Fixed image embedders used by the sample-quality metrics.

use ndarray::{concatenate, Array2, Array4, Axis, IxDyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::ImageShape;
use crate::error::{Error, Result};
use crate::nn::{Layer, Network};
use crate::rng;

const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    /// Two stride-2 3x3 conv layers with ReLU and a linear head, all random.
    RandomConv,
    /// Raw flattened pixels.
    Pixels,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub channels: Vec<usize>,
    pub seed: u64,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        Self { kind: EmbedderKind::RandomConv, dim: 64, channels: vec![16, 32], seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct Embedder {
    pub id: String,
    pub shape: ImageShape,
    net: Option<Network>,
    dim: usize,
}

impl Embedder {
    pub fn from_spec(spec: &EmbedderSpec, shape: ImageShape) -> Result<Self> {
        match spec.kind {
            EmbedderKind::Pixels => Ok(Self { id: "pixels".into(), shape, net: None, dim: shape.pixels() }),
            EmbedderKind::RandomConv => {
                if spec.dim == 0 || spec.channels.is_empty() || spec.channels.contains(&0) {
                    return Err(Error::Config("embedder needs a positive dim and nonzero channel counts".into()));
                }
                let mut r = rng::rng(rng::derive(spec.seed, "embedder"));
                let mut layers = Vec::new();
                let mut c_in = shape.channels;
                for &c in &spec.channels {
                    layers.push(Layer::conv2d(c_in, c, 3, 2, 1, &mut r));
                    layers.push(Layer::Relu);
                    c_in = c;
                }
                layers.push(Layer::Flatten);
                let mut net = Network::new(layers);
                let flat = net.output_shape(&shape.dims())?[0];
                net.layers.push(Layer::linear(flat, spec.dim, &mut r));
                let chans: Vec<String> = spec.channels.iter().map(usize::to_string).collect();
                Ok(Self {
                    id: format!("random-conv:c{}:d{}:s{}", chans.join("-"), spec.dim, spec.seed),
                    shape,
                    net: Some(net),
                    dim: spec.dim,
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// One feature row per image, in input order.
    pub fn embed(&self, images: &Array4<f64>) -> Result<Array2<f64>> {
        let (n, c, h, w) = images.dim();
        if [c, h, w] != self.shape.dims() {
            return Err(Error::arg(format!("embedder expects {}, got {c}x{h}x{w}", self.shape)));
        }
        let Some(net) = &self.net else {
            return Ok(images.to_shape((n, c * h * w)).expect("contiguous").to_owned());
        };
        if n == 0 {
            return Ok(Array2::zeros((0, self.dim)));
        }
        let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
        let parts: Vec<Array2<f64>> = starts
            .par_iter()
            .map(|&s| {
                let x = images.slice(ndarray::s![s..(s + CHUNK).min(n), .., .., ..]).to_owned().into_dyn();
                let y = net.forward(&x);
                let rows = y.shape()[0];
                y.into_shape_with_order(IxDyn(&[rows, self.dim]))
                    .expect("linear head output")
                    .into_dimensionality()
                    .expect("rank 2")
            })
            .collect();
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        Ok(concatenate(Axis(0), &views).expect("same width"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normal;

    #[test]
    fn chunked_embedding_matches_single_pass() {
        let shape = ImageShape::new(1, 8, 8);
        let e = Embedder::from_spec(&EmbedderSpec { dim: 5, channels: vec![3, 4], ..Default::default() }, shape).unwrap();
        let x = standard_normal(CHUNK + 7, 64, 1).into_shape_with_order((CHUNK + 7, 1, 8, 8)).unwrap();
        let all = e.embed(&x).unwrap();
        assert_eq!(all.dim(), (CHUNK + 7, 5));
        let tail = e.embed(&x.slice(ndarray::s![CHUNK.., .., .., ..]).to_owned()).unwrap();
        assert_eq!(tail, all.slice(ndarray::s![CHUNK.., ..]));
        assert!(e.embed(&Array4::zeros((1, 3, 8, 8))).is_err());
    }

    #[test]
    fn pixels_flatten() {
        let e = Embedder::from_spec(&EmbedderSpec { kind: EmbedderKind::Pixels, ..Default::default() }, ImageShape::new(1, 2, 2)).unwrap();
        let x = Array4::from_shape_vec((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(e.embed(&x).unwrap().row(0).to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.id, "pixels");
    }
}
