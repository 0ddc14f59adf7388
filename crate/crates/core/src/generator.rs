//! Decoders from latent codes to images.

use std::collections::BTreeMap;

use ndarray::{Array2, Array4, ArrayView2, Ix2, Ix4};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::datasets::ImageShape;
use crate::error::{Error, Result};
use crate::nn::{Layer, Mode, Network, Tape, Tensor};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// `tanh(W z + b)`; a toy with `(d + 1) · pixels` parameters.
    Linear,
    /// Two hidden dense layers with batch norm.
    Mlp,
    /// Dense stem followed by two stride-2 transposed convolutions.
    Deconv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    /// Width of the dense hidden layers.
    pub hidden: usize,
    /// Channels after the first transposed convolution (`deconv` only);
    /// the dense stem emits twice this many.
    pub channels: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self { kind: GeneratorKind::Deconv, hidden: 1024, channels: 64 }
    }
}

impl GeneratorSpec {
    pub fn build(&self, latent_dim: usize, shape: ImageShape, seed: u64) -> Result<Network> {
        if latent_dim == 0 {
            return Err(Error::arg("latent dimension must be positive"));
        }
        if shape.pixels() == 0 {
            return Err(Error::arg("image shape must be nonempty"));
        }
        let mut r = rng::rng(rng::derive(seed, "generator"));
        let p = shape.pixels();
        let layers = match self.kind {
            GeneratorKind::Linear => vec![Layer::linear(latent_dim, p, &mut r), Layer::Tanh, Layer::Reshape(shape.dims().to_vec())],
            GeneratorKind::Mlp => {
                let h = self.positive("hidden", self.hidden)?;
                vec![
                    Layer::linear(latent_dim, h, &mut r),
                    Layer::batch_norm(h),
                    Layer::Relu,
                    Layer::linear(h, h, &mut r),
                    Layer::batch_norm(h),
                    Layer::Relu,
                    Layer::linear(h, p, &mut r),
                    Layer::Tanh,
                    Layer::Reshape(shape.dims().to_vec()),
                ]
            }
            GeneratorKind::Deconv => {
                let h = self.positive("hidden", self.hidden)?;
                let c = self.positive("channels", self.channels)?;
                if !shape.height.is_multiple_of(4) || !shape.width.is_multiple_of(4) {
                    return Err(Error::Config(format!(
                        "deconv generator needs height and width divisible by 4, got {shape}"
                    )));
                }
                let (h4, w4) = (shape.height / 4, shape.width / 4);
                vec![
                    Layer::linear(latent_dim, h, &mut r),
                    Layer::batch_norm(h),
                    Layer::Relu,
                    Layer::linear(h, 2 * c * h4 * w4, &mut r),
                    Layer::batch_norm(2 * c * h4 * w4),
                    Layer::Relu,
                    Layer::Reshape(vec![2 * c, h4, w4]),
                    Layer::conv_transpose2d(2 * c, c, 4, 2, 1, &mut r),
                    Layer::batch_norm(c),
                    Layer::Relu,
                    Layer::conv_transpose2d(c, shape.channels, 4, 2, 1, &mut r),
                    Layer::Tanh,
                ]
            }
        };
        let net = Network::new(layers);
        let out = net.output_shape(&[latent_dim])?;
        if out != shape.dims() {
            return Err(Error::Config(format!("generator produces {out:?}, expected {shape}")));
        }
        Ok(net)
    }

    fn positive(&self, name: &str, v: usize) -> Result<usize> {
        if v == 0 {
            return Err(Error::Config(format!("generator `{name}` must be positive")));
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub spec: GeneratorSpec,
    pub latent_dim: usize,
    pub shape: ImageShape,
    pub net: Network,
}

impl Generator {
    pub fn new(spec: &GeneratorSpec, latent_dim: usize, shape: ImageShape, seed: u64) -> Result<Self> {
        Ok(Self {
            spec: spec.clone(),
            latent_dim,
            shape,
            net: spec.build(latent_dim, shape, seed)?,
        })
    }

    fn check_latents(&self, z: &ArrayView2<f64>) -> Result<()> {
        if z.ncols() != self.latent_dim {
            return Err(Error::arg(format!(
                "generator expects {}-dimensional latents, got {}",
                self.latent_dim,
                z.ncols()
            )));
        }
        Ok(())
    }

    /// Inference-mode decode of `n × d` latents.
    pub fn decode(&self, z: ArrayView2<f64>) -> Result<Array4<f64>> {
        self.check_latents(&z)?;
        if z.nrows() == 0 {
            let [c, h, w] = self.shape.dims();
            return Ok(Array4::zeros((0, c, h, w)));
        }
        to4(self.net.forward(&z.to_owned().into_dyn()))
    }

    pub fn decode_tape(&self, z: ArrayView2<f64>, mode: Mode) -> Result<(Array4<f64>, Tape)> {
        self.check_latents(&z)?;
        let (out, tape) = self.net.forward_tape(&z.to_owned().into_dyn(), mode);
        Ok((to4(out)?, tape))
    }

    /// Latent gradient and parameter gradients for an output gradient.
    pub fn backward(&self, tape: &Tape, grad: &Array4<f64>) -> Result<(Array2<f64>, Vec<Tensor>)> {
        let (gz, gp) = self.net.backward(tape, &grad.clone().into_dyn());
        let gz = gz.into_dimensionality::<Ix2>().map_err(|e| Error::Numeric(e.to_string()))?;
        Ok((gz, gp))
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    pub fn write_to(&self, ck: &mut Checkpoint) {
        ck.meta.insert("generator.kind".into(), kind_name(self.spec.kind).into());
        ck.meta.insert("generator.hidden".into(), self.spec.hidden.to_string());
        ck.meta.insert("generator.channels".into(), self.spec.channels.to_string());
        ck.meta.insert("generator.latent_dim".into(), self.latent_dim.to_string());
        ck.meta.insert("generator.image_shape".into(), self.shape.to_string());
        for (name, t) in self.net.named_tensors("generator") {
            ck.insert(name, t);
        }
    }

    pub fn read_from(ck: &Checkpoint) -> Result<Self> {
        let kind = match ck.meta_value("generator.kind")? {
            "linear" => GeneratorKind::Linear,
            "mlp" => GeneratorKind::Mlp,
            "deconv" => GeneratorKind::Deconv,
            other => return Err(Error::Format(format!("unknown generator kind `{other}`"))),
        };
        let spec = GeneratorSpec {
            kind,
            hidden: parse_meta(ck, "generator.hidden")?,
            channels: parse_meta(ck, "generator.channels")?,
        };
        let latent_dim = parse_meta(ck, "generator.latent_dim")?;
        let shape = parse_shape(ck.meta_value("generator.image_shape")?)?;
        let mut g = Self::new(&spec, latent_dim, shape, 0).map_err(|e| Error::Format(e.to_string()))?;
        let tensors: &BTreeMap<String, Tensor> = &ck.tensors;
        g.net.load_named("generator", tensors)?;
        Ok(g)
    }
}

fn to4(t: Tensor) -> Result<Array4<f64>> {
    t.into_dimensionality::<Ix4>().map_err(|e| Error::Numeric(e.to_string()))
}

fn kind_name(kind: GeneratorKind) -> &'static str {
    match kind {
        GeneratorKind::Linear => "linear",
        GeneratorKind::Mlp => "mlp",
        GeneratorKind::Deconv => "deconv",
    }
}

pub(crate) fn parse_meta<T: std::str::FromStr>(ck: &Checkpoint, key: &str) -> Result<T> {
    ck.meta_value(key)?
        .parse()
        .map_err(|_| Error::Format(format!("checkpoint entry `{key}` is malformed")))
}

pub(crate) fn parse_shape(s: &str) -> Result<ImageShape> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.parse().map_err(|_| Error::Format(format!("bad image shape `{s}`"))))
        .collect::<Result<_>>()?;
    match parts[..] {
        [c, h, w] => Ok(ImageShape::new(c, h, w)),
        _ => Err(Error::Format(format!("bad image shape `{s}`"))),
    }
}
