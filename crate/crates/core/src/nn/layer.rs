use ndarray::{Array1, Array2, Array4, ArrayD, Axis, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::conv::{col2im, im2col, ConvGeom};
use crate::linalg::matmul;

pub type Tensor = ArrayD<f64>;

/// Whether batch normalization uses batch statistics or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `out × in`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    /// `out × in × k × k`
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d {
    /// `in × out × k × k`
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Layer {
    Linear(Linear),
    BatchNorm(BatchNorm),
    Relu,
    Tanh,
    /// Scale each row of a 2-D input to unit Euclidean norm.
    UnitNorm,
    /// Reshape each sample to the given per-sample shape.
    Reshape(Vec<usize>),
    Flatten,
    Conv2d(Conv2d),
    ConvTranspose2d(ConvTranspose2d),
}

/// Per-layer state saved by a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub(crate) enum Cache {
    None,
    Input(Tensor),
    Output(Tensor),
    Shape(Vec<usize>),
    Norm {
        x_hat: Tensor,
        inv_std: Array1<f64>,
        train: bool,
        batch_mean: Array1<f64>,
        batch_var_unbiased: Array1<f64>,
    },
    Cols {
        cols: Array2<f64>,
        in_shape: Vec<usize>,
    },
    InputMat {
        x_mat: Array2<f64>,
        in_shape: Vec<usize>,
    },
}

fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-bound..bound))
}

impl Layer {
    pub fn linear(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Layer::Linear(Linear {
            weight: uniform(&[outputs, inputs], bound, rng),
            bias: uniform(&[outputs], bound, rng),
        })
    }

    pub fn batch_norm(features: usize) -> Self {
        Layer::BatchNorm(BatchNorm {
            gamma: ArrayD::ones(IxDyn(&[features])),
            beta: ArrayD::zeros(IxDyn(&[features])),
            running_mean: ArrayD::zeros(IxDyn(&[features])),
            running_var: ArrayD::ones(IxDyn(&[features])),
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn conv2d(inputs: usize, outputs: usize, kernel: usize, stride: usize, pad: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / ((inputs * kernel * kernel) as f64).sqrt();
        Layer::Conv2d(Conv2d {
            weight: uniform(&[outputs, inputs, kernel, kernel], bound, rng),
            bias: uniform(&[outputs], bound, rng),
            stride,
            pad,
        })
    }

    pub fn conv_transpose2d(
        inputs: usize,
        outputs: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / ((outputs * kernel * kernel) as f64).sqrt();
        Layer::ConvTranspose2d(ConvTranspose2d {
            weight: uniform(&[inputs, outputs, kernel, kernel], bound, rng),
            bias: uniform(&[outputs], bound, rng),
            stride,
            pad,
        })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::ConvTranspose2d(c) => vec![&c.weight, &c.bias],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::ConvTranspose2d(c) => vec![&mut c.weight, &mut c.bias],
            _ => vec![],
        }
    }

    /// Named parameters and buffers, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::Linear(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::BatchNorm(b) => vec![
                ("gamma", &b.gamma),
                ("beta", &b.beta),
                ("running_mean", &b.running_mean),
                ("running_var", &b.running_var),
            ],
            Layer::Conv2d(c) => vec![("weight", &c.weight), ("bias", &c.bias)],
            Layer::ConvTranspose2d(c) => vec![("weight", &c.weight), ("bias", &c.bias)],
            _ => vec![],
        }
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            Layer::Linear(l) => vec![("weight", &mut l.weight), ("bias", &mut l.bias)],
            Layer::BatchNorm(b) => vec![
                ("gamma", &mut b.gamma),
                ("beta", &mut b.beta),
                ("running_mean", &mut b.running_mean),
                ("running_var", &mut b.running_var),
            ],
            Layer::Conv2d(c) => vec![("weight", &mut c.weight), ("bias", &mut c.bias)],
            Layer::ConvTranspose2d(c) => vec![("weight", &mut c.weight), ("bias", &mut c.bias)],
            _ => vec![],
        }
    }

    /// Per-sample output shape for a per-sample input shape, or `None` if incompatible.
    pub fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        match self {
            Layer::Linear(l) => {
                (input == [l.weight.shape()[1]]).then(|| vec![l.weight.shape()[0]])
            }
            Layer::BatchNorm(b) => (input.first() == Some(&b.gamma.len())).then(|| input.to_vec()),
            Layer::Relu | Layer::Tanh => Some(input.to_vec()),
            Layer::UnitNorm => (input.len() == 1).then(|| input.to_vec()),
            Layer::Reshape(shape) => {
                (input.iter().product::<usize>() == shape.iter().product::<usize>()).then(|| shape.clone())
            }
            Layer::Flatten => Some(vec![input.iter().product()]),
            Layer::Conv2d(c) => {
                let w = c.weight.shape();
                if input.len() != 3 || input[0] != w[1] {
                    return None;
                }
                let g = ConvGeom::new(input[0], input[1], input[2], w[2], c.stride, c.pad)?;
                Some(vec![w[0], g.out_h, g.out_w])
            }
            Layer::ConvTranspose2d(c) => {
                let w = c.weight.shape();
                if input.len() != 3 || input[0] != w[0] {
                    return None;
                }
                let (h, wd) = transposed_size(input[1], input[2], w[2], c.stride, c.pad)?;
                Some(vec![w[1], h, wd])
            }
        }
    }

    pub(crate) fn forward(&self, x: &Tensor, mode: Mode, keep: bool) -> (Tensor, Cache) {
        match self {
            Layer::Linear(l) => {
                let x2 = as_matrix(x);
                let w = l.weight.view().into_dimensionality().expect("rank-2 weight");
                let mut y = matmul(x2.view(), w.t());
                y += &l.bias.view().into_dimensionality::<ndarray::Ix1>().expect("rank-1 bias");
                let cache = if keep { Cache::Input(x.clone()) } else { Cache::None };
                (y.into_dyn(), cache)
            }
            Layer::BatchNorm(b) => b.forward(x, mode, keep),
            Layer::Relu => {
                let y = x.mapv(|v| v.max(0.0));
                (y, if keep { Cache::Input(x.clone()) } else { Cache::None })
            }
            Layer::Tanh => {
                let y = x.mapv(f64::tanh);
                let cache = if keep { Cache::Output(y.clone()) } else { Cache::None };
                (y, cache)
            }
            Layer::UnitNorm => {
                let mut y = x.clone();
                for mut row in y.axis_iter_mut(Axis(0)) {
                    let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    row.mapv_inplace(|v| v / n);
                }
                (y, if keep { Cache::Input(x.clone()) } else { Cache::None })
            }
            Layer::Reshape(shape) => {
                let mut full = vec![x.shape()[0]];
                full.extend_from_slice(shape);
                let y = x
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(IxDyn(&full))
                    .expect("reshape size checked at construction");
                (y, if keep { Cache::Shape(x.shape().to_vec()) } else { Cache::None })
            }
            Layer::Flatten => {
                let n = x.shape()[0];
                let rest = x.len() / n.max(1);
                let y = x
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(IxDyn(&[n, rest]))
                    .expect("flatten");
                (y, if keep { Cache::Shape(x.shape().to_vec()) } else { Cache::None })
            }
            Layer::Conv2d(c) => c.forward(x, keep),
            Layer::ConvTranspose2d(c) => c.forward(x, keep),
        }
    }

    /// Returns the input gradient; parameter gradients are written to `grads`
    /// (one slot per entry of [`Layer::params`]).
    pub(crate) fn backward(&self, cache: &Cache, g: &Tensor, grads: &mut [Tensor]) -> Tensor {
        match (self, cache) {
            (Layer::Linear(l), Cache::Input(x)) => {
                let x2 = as_matrix(x);
                let g2 = as_matrix(g);
                let w = l.weight.view().into_dimensionality().expect("rank-2 weight");
                grads[0] = matmul(g2.t(), x2.view()).into_dyn();
                grads[1] = g2.sum_axis(Axis(0)).into_dyn();
                matmul(g2.view(), w).into_dyn()
            }
            (Layer::BatchNorm(b), c) => b.backward(c, g, grads),
            (Layer::Relu, Cache::Input(x)) => {
                let mut out = g.clone();
                ndarray::Zip::from(&mut out).and(x).for_each(|o, &xv| {
                    if xv <= 0.0 {
                        *o = 0.0
                    }
                });
                out
            }
            (Layer::Tanh, Cache::Output(y)) => {
                let mut out = g.clone();
                ndarray::Zip::from(&mut out).and(y).for_each(|o, &yv| *o *= 1.0 - yv * yv);
                out
            }
            (Layer::UnitNorm, Cache::Input(x)) => {
                let mut out = g.clone();
                for (mut o, xr) in out.axis_iter_mut(Axis(0)).zip(x.axis_iter(Axis(0))) {
                    let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let yg = xr.iter().zip(o.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                    ndarray::Zip::from(&mut o).and(&xr).for_each(|ov, &xv| *ov = (*ov - xv / n * yg) / n);
                }
                out
            }
            (Layer::Reshape(_) | Layer::Flatten, Cache::Shape(s)) => g
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order(IxDyn(s))
                .expect("inverse reshape"),
            (Layer::Conv2d(c), cache) => c.backward(cache, g, grads),
            (Layer::ConvTranspose2d(c), cache) => c.backward(cache, g, grads),
            _ => panic!("backward called without a matching forward cache"),
        }
    }
}

pub(crate) fn transposed_size(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<(usize, usize)> {
    let oh = ((h.checked_sub(1)? * stride) + k).checked_sub(2 * pad)?;
    let ow = ((w.checked_sub(1)? * stride) + k).checked_sub(2 * pad)?;
    (oh > 0 && ow > 0).then_some((oh, ow))
}

fn as_matrix(x: &Tensor) -> Array2<f64> {
    let n = x.shape()[0];
    let rest = x.len().checked_div(n).unwrap_or_else(|| x.shape()[1..].iter().product());
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, rest))
        .expect("matrix view")
}

/// `(N, C, S)` view of a rank-2 or rank-4 activation.
fn ncs(x: &Tensor) -> (usize, usize, usize) {
    match x.ndim() {
        2 => (x.shape()[0], x.shape()[1], 1),
        4 => (x.shape()[0], x.shape()[1], x.shape()[2] * x.shape()[3]),
        r => panic!("batch norm expects rank 2 or 4 input, got rank {r}"),
    }
}

impl BatchNorm {
    fn forward(&self, x: &Tensor, mode: Mode, keep: bool) -> (Tensor, Cache) {
        let (n, c, s) = ncs(x);
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let m = (n * s) as f64;
        let mut mean = Array1::<f64>::zeros(c);
        let mut var = Array1::<f64>::zeros(c);
        let train = mode == Mode::Train;
        if train {
            for ch in 0..c {
                let mut sum = 0.0;
                for b in 0..n {
                    sum += xs[(b * c + ch) * s..(b * c + ch + 1) * s].iter().sum::<f64>();
                }
                let mu = sum / m;
                let mut sq = 0.0;
                for b in 0..n {
                    sq += xs[(b * c + ch) * s..(b * c + ch + 1) * s]
                        .iter()
                        .map(|v| (v - mu) * (v - mu))
                        .sum::<f64>();
                }
                mean[ch] = mu;
                var[ch] = sq / m;
            }
        } else {
            mean.assign(&self.running_mean.view().into_dimensionality::<ndarray::Ix1>().unwrap());
            var.assign(&self.running_var.view().into_dimensionality::<ndarray::Ix1>().unwrap());
        }
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut x_hat = ArrayD::<f64>::zeros(x.raw_dim());
        let mut y = ArrayD::<f64>::zeros(x.raw_dim());
        {
            let xh = x_hat.as_slice_mut().unwrap();
            let ys = y.as_slice_mut().unwrap();
            for b in 0..n {
                for ch in 0..c {
                    let (gm, bt) = (self.gamma[ch], self.beta[ch]);
                    for i in (b * c + ch) * s..(b * c + ch + 1) * s {
                        let h = (xs[i] - mean[ch]) * inv_std[ch];
                        xh[i] = h;
                        ys[i] = gm * h + bt;
                    }
                }
            }
        }
        let cache = if keep {
            let unbiased = if m > 1.0 { var.mapv(|v| v * m / (m - 1.0)) } else { var.clone() };
            Cache::Norm {
                x_hat,
                inv_std,
                train,
                batch_mean: mean,
                batch_var_unbiased: unbiased,
            }
        } else {
            Cache::None
        };
        (y, cache)
    }

    fn backward(&self, cache: &Cache, g: &Tensor, grads: &mut [Tensor]) -> Tensor {
        let Cache::Norm { x_hat, inv_std, train, .. } = cache else {
            panic!("batch norm backward without cache")
        };
        let (n, c, s) = ncs(g);
        let g = g.as_standard_layout();
        let gs = g.as_slice().unwrap();
        let xh = x_hat.as_slice().unwrap();
        let m = (n * s) as f64;
        let mut dgamma = Array1::<f64>::zeros(c);
        let mut dbeta = Array1::<f64>::zeros(c);
        for b in 0..n {
            for ch in 0..c {
                for i in (b * c + ch) * s..(b * c + ch + 1) * s {
                    dgamma[ch] += gs[i] * xh[i];
                    dbeta[ch] += gs[i];
                }
            }
        }
        let mut dx = ArrayD::<f64>::zeros(g.raw_dim());
        let dxs = dx.as_slice_mut().unwrap();
        for b in 0..n {
            for ch in 0..c {
                let k = self.gamma[ch] * inv_std[ch];
                for i in (b * c + ch) * s..(b * c + ch + 1) * s {
                    dxs[i] = if *train {
                        k * (gs[i] - dbeta[ch] / m - xh[i] * dgamma[ch] / m)
                    } else {
                        k * gs[i]
                    };
                }
            }
        }
        grads[0] = dgamma.into_dyn();
        grads[1] = dbeta.into_dyn();
        dx
    }

    pub(crate) fn update_running(&mut self, batch_mean: &Array1<f64>, batch_var_unbiased: &Array1<f64>) {
        let mo = self.momentum;
        ndarray::Zip::from(&mut self.running_mean)
            .and(batch_mean.view().into_dyn())
            .for_each(|r, &b| *r = (1.0 - mo) * *r + mo * b);
        ndarray::Zip::from(&mut self.running_var)
            .and(batch_var_unbiased.view().into_dyn())
            .for_each(|r, &b| *r = (1.0 - mo) * *r + mo * b);
    }
}

fn to4(x: &Tensor) -> Array4<f64> {
    x.view()
        .into_dimensionality::<ndarray::Ix4>()
        .expect("convolution expects NCHW input")
        .to_owned()
}

/// `(C, N·L)` from `(N, C, H, W)`.
fn channel_major(x: &Array4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    x.view()
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, n * h * w))
        .unwrap()
}

/// Inverse of [`channel_major`].
fn batch_major(m: &Array2<f64>, n: usize, h: usize, w: usize) -> Array4<f64> {
    let c = m.nrows();
    m.as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, n, h, w))
        .unwrap()
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
}

fn kernel_matrix(w: &Tensor, rows: usize) -> ndarray::ArrayView2<'_, f64> {
    let cols = w.len() / rows;
    w.view().into_shape_with_order((rows, cols)).expect("contiguous kernel")
}

impl Conv2d {
    fn geom(&self, x: &Array4<f64>) -> ConvGeom {
        let (_, c, h, w) = x.dim();
        let k = self.weight.shape()[2];
        ConvGeom::new(c, h, w, k, self.stride, self.pad).expect("conv geometry checked at construction")
    }

    fn forward(&self, x: &Tensor, keep: bool) -> (Tensor, Cache) {
        let x4 = to4(x);
        let n = x4.dim().0;
        let g = self.geom(&x4);
        let cols = im2col(x4.view(), &g);
        let out_c = self.weight.shape()[0];
        let w = kernel_matrix(&self.weight, out_c);
        let mut y = matmul(w, cols.view());
        for (mut row, b) in y.rows_mut().into_iter().zip(self.bias.iter()) {
            row += *b;
        }
        let y = batch_major(&y, n, g.out_h, g.out_w).into_dyn();
        let cache = if keep {
            Cache::Cols { cols, in_shape: x.shape().to_vec() }
        } else {
            Cache::None
        };
        (y, cache)
    }

    fn backward(&self, cache: &Cache, g: &Tensor, grads: &mut [Tensor]) -> Tensor {
        let Cache::Cols { cols, in_shape } = cache else { panic!("conv backward without cache") };
        let out_c = self.weight.shape()[0];
        let g4 = to4(g);
        let gm = channel_major(&g4);
        let w = kernel_matrix(&self.weight, out_c);
        grads[0] = matmul(gm.view(), cols.t())
            .into_shape_with_order(IxDyn(self.weight.shape()))
            .unwrap();
        grads[1] = gm.sum_axis(Axis(1)).into_dyn();
        let dcols = matmul(w.t(), gm.view());
        let geom = ConvGeom::new(in_shape[1], in_shape[2], in_shape[3], self.weight.shape()[2], self.stride, self.pad)
            .unwrap();
        col2im(&dcols, &geom, in_shape[0]).into_dyn()
    }
}

impl ConvTranspose2d {
    /// Geometry of the equivalent forward convolution mapping output back to input.
    fn geom(&self, in_h: usize, in_w: usize) -> ConvGeom {
        let k = self.weight.shape()[2];
        let (oh, ow) = transposed_size(in_h, in_w, k, self.stride, self.pad).expect("checked at construction");
        let g = ConvGeom::new(self.weight.shape()[1], oh, ow, k, self.stride, self.pad).unwrap();
        debug_assert_eq!((g.out_h, g.out_w), (in_h, in_w));
        g
    }

    fn forward(&self, x: &Tensor, keep: bool) -> (Tensor, Cache) {
        let x4 = to4(x);
        let (n, cin, h, w) = x4.dim();
        let g = self.geom(h, w);
        let xm = channel_major(&x4);
        let wm = kernel_matrix(&self.weight, cin);
        let cols = matmul(wm.t(), xm.view());
        let mut y = col2im(&cols, &g, n);
        for mut img in y.outer_iter_mut() {
            for (mut ch, b) in img.outer_iter_mut().zip(self.bias.iter()) {
                ch += *b;
            }
        }
        let cache = if keep {
            Cache::InputMat { x_mat: xm, in_shape: x.shape().to_vec() }
        } else {
            Cache::None
        };
        (y.into_dyn(), cache)
    }

    fn backward(&self, cache: &Cache, g: &Tensor, grads: &mut [Tensor]) -> Tensor {
        let Cache::InputMat { x_mat, in_shape } = cache else { panic!("conv-transpose backward without cache") };
        let (n, cin, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
        let geom = self.geom(h, w);
        let g4 = to4(g);
        let dcols = im2col(g4.view(), &geom);
        let wm = kernel_matrix(&self.weight, cin);
        grads[0] = matmul(x_mat.view(), dcols.t())
            .into_shape_with_order(IxDyn(self.weight.shape()))
            .unwrap();
        grads[1] = g4.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0)).into_dyn();
        let dx = matmul(wm, dcols.view());
        batch_major(&dx, n, h, w).into_dyn()
    }
}
