use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::conv::{
    conv3d_backward, conv3d_forward, maxpool3d_backward, maxpool3d_forward, tconv3d_backward,
    tconv3d_forward, upsample_backward, upsample_forward, ConvGeom,
};
use super::{propagate_one, LayerDesc, Shape};
use crate::error::Result;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// A contiguous batch of activations: `n` samples of `shape` each,
/// row-major within a sample.
#[derive(Debug, Clone)]
pub struct Batch {
    pub data: Vec<f64>,
    pub shape: Shape,
    pub n: usize,
}

impl Batch {
    pub fn new(data: Vec<f64>, shape: Shape, n: usize) -> Self {
        assert_eq!(data.len(), n * shape.numel());
        Batch { data, shape, n }
    }

    pub fn zeros(shape: Shape, n: usize) -> Self {
        Batch {
            data: vec![0.0; n * shape.numel()],
            shape,
            n,
        }
    }

    pub fn sample_len(&self) -> usize {
        self.shape.numel()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        let l = self.sample_len();
        &mut self.data[i * l..(i + 1) * l]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One layer with its parameters. `weight`/`bias` double as gamma/beta for
/// batch normalization; running statistics are state, not parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub desc: LayerDesc,
    pub in_shape: Shape,
    pub out_shape: Shape,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Per-layer backward cache.
pub enum Cache {
    None,
    Input(Vec<f64>),
    Argmax(Vec<usize>),
    BatchNorm { xhat: Vec<f64>, invstd: Vec<f64> },
    TanhOut(Vec<f64>),
    ActIn(Vec<f64>),
}

/// Parameter gradients aligned with `Network::layers` (weight, bias).
#[derive(Debug, Clone)]
pub struct GradBuffer {
    pub per_layer: Vec<(Vec<f64>, Vec<f64>)>,
}

impl GradBuffer {
    pub fn zeros_like(net: &Network) -> Self {
        GradBuffer {
            per_layer: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    pub fn add(&mut self, other: &GradBuffer) {
        for (a, b) in self.per_layer.iter_mut().zip(&other.per_layer) {
            for (x, y) in a.0.iter_mut().zip(&b.0) {
                *x += y;
            }
            for (x, y) in a.1.iter_mut().zip(&b.1) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in self.per_layer.iter_mut() {
            for x in w.iter_mut() {
                *x *= s;
            }
            for x in b.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.per_layer {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    pub input_shape: Shape,
    pub output_shape: Shape,
    pub layers: Vec<Layer>,
}

impl Network {
    /// Build a network from descriptors, validating shape propagation, with
    /// Gaussian(0, 0.02) weight init and zero biases (batch-norm scale 1,
    /// shift 0).
    pub fn new<R: Rng>(descs: &[LayerDesc], input_shape: Shape, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, 0.02).expect("valid stddev");
        let mut layers = Vec::with_capacity(descs.len());
        let mut shape = input_shape;
        for (i, desc) in descs.iter().enumerate() {
            let out_shape = propagate_one(desc, &shape, i)?;
            let (weight, bias, rm, rv) = match desc {
                LayerDesc::Linear {
                    in_features,
                    out_features,
                } => (
                    (0..in_features * out_features)
                        .map(|_| normal.sample(rng))
                        .collect(),
                    vec![0.0; *out_features],
                    vec![],
                    vec![],
                ),
                LayerDesc::Conv3d {
                    in_ch,
                    out_ch,
                    kernel,
                    ..
                }
                | LayerDesc::TransposedConv3d {
                    in_ch,
                    out_ch,
                    kernel,
                    ..
                } => (
                    (0..in_ch * out_ch * kernel[0] * kernel[1] * kernel[2])
                        .map(|_| normal.sample(rng))
                        .collect(),
                    vec![0.0; *out_ch],
                    vec![],
                    vec![],
                ),
                LayerDesc::BatchNorm { features } => (
                    vec![1.0; *features],
                    vec![0.0; *features],
                    vec![0.0; *features],
                    vec![1.0; *features],
                ),
                _ => (vec![], vec![], vec![], vec![]),
            };
            layers.push(Layer {
                desc: desc.clone(),
                in_shape: shape,
                out_shape,
                weight,
                bias,
                running_mean: rm,
                running_var: rv,
            });
            shape = out_shape;
        }
        Ok(Network {
            input_shape,
            output_shape: shape,
            layers,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for l in self.layers.iter_mut() {
            let wl = l.weight.len();
            l.weight.copy_from_slice(&flat[off..off + wl]);
            off += wl;
            let bl = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + bl]);
            off += bl;
        }
        assert_eq!(off, flat.len());
    }

    /// Forward pass. Train mode uses batch statistics for batch norm (and
    /// updates running stats); eval mode uses running statistics. Returns
    /// the output batch and per-layer caches for `backward`.
    pub fn forward(&mut self, x: &Batch, mode: Mode) -> (Batch, Vec<Cache>) {
        assert_eq!(x.shape, self.input_shape, "input shape mismatch");
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for li in 0..self.layers.len() {
            let (next, cache) = layer_forward(&mut self.layers[li], &cur, mode);
            caches.push(cache);
            cur = next;
        }
        (cur, caches)
    }

    /// Eval-mode forward without cache bookkeeping or state updates.
    pub fn forward_eval(&self, x: &Batch) -> Batch {
        let mut tmp = self.clone();
        let (out, _) = tmp.forward(x, Mode::Eval);
        out
    }

    /// Backward pass for the forward recorded in `caches`. Returns the
    /// gradient w.r.t. the input batch and parameter gradients.
    pub fn backward(&self, caches: &[Cache], gout: &Batch) -> (Batch, GradBuffer) {
        assert_eq!(caches.len(), self.layers.len());
        let mut grads = GradBuffer::zeros_like(self);
        let mut g = gout.clone();
        for li in (0..self.layers.len()).rev() {
            let (gw, gb) = {
                let slot = &mut grads.per_layer[li];
                (&mut slot.0, &mut slot.1)
            };
            g = layer_backward(&self.layers[li], &caches[li], &g, gw, gb);
        }
        (g, grads)
    }
}

fn grid_of(shape: &Shape) -> (usize, [usize; 3]) {
    match shape {
        Shape::Grid { channels, dims } => (*channels, *dims),
        Shape::Vector(_) => panic!("expected grid shape"),
    }
}

fn layer_forward(layer: &mut Layer, x: &Batch, mode: Mode) -> (Batch, Cache) {
    let n = x.n;
    let in_len = layer.in_shape.numel();
    let out_len = layer.out_shape.numel();
    match &layer.desc {
        LayerDesc::Linear {
            in_features,
            out_features,
        } => {
            let mut out = Batch::zeros(layer.out_shape, n);
            out.data
                .par_chunks_mut(out_len)
                .zip(x.data.par_chunks(in_len))
                .for_each(|(o, xi)| {
                    for of in 0..*out_features {
                        let row = &layer.weight[of * in_features..(of + 1) * in_features];
                        let mut acc = layer.bias[of];
                        for (w, v) in row.iter().zip(xi) {
                            acc += w * v;
                        }
                        o[of] = acc;
                    }
                });
            (out, Cache::Input(x.data.clone()))
        }
        LayerDesc::Conv3d {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        } => {
            let (_, in_dims) = grid_of(&layer.in_shape);
            let (_, out_dims) = grid_of(&layer.out_shape);
            let geom = ConvGeom {
                in_ch: *in_ch,
                out_ch: *out_ch,
                in_dims,
                out_dims,
                kernel: *kernel,
                stride: *stride,
                padding: *padding,
            };
            let mut out = Batch::zeros(layer.out_shape, n);
            out.data
                .par_chunks_mut(out_len)
                .zip(x.data.par_chunks(in_len))
                .for_each(|(o, xi)| conv3d_forward(xi, o, &layer.weight, &layer.bias, &geom));
            (out, Cache::Input(x.data.clone()))
        }
        LayerDesc::TransposedConv3d {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        } => {
            let (_, in_dims) = grid_of(&layer.in_shape);
            let (_, out_dims) = grid_of(&layer.out_shape);
            let geom = ConvGeom {
                in_ch: *in_ch,
                out_ch: *out_ch,
                in_dims,
                out_dims,
                kernel: *kernel,
                stride: *stride,
                padding: *padding,
            };
            let mut out = Batch::zeros(layer.out_shape, n);
            out.data
                .par_chunks_mut(out_len)
                .zip(x.data.par_chunks(in_len))
                .for_each(|(o, xi)| tconv3d_forward(xi, o, &layer.weight, &layer.bias, &geom));
            (out, Cache::Input(x.data.clone()))
        }
        LayerDesc::BatchNorm { features } => {
            let f = *features;
            // Number of elements normalized per feature and a closure mapping
            // (sample element index) -> feature.
            let per_sample = in_len;
            let spatial = per_sample / f;
            let m = (n * spatial) as f64;
            let mut out = Batch::zeros(layer.out_shape, n);
            let mut xhat = vec![0.0; x.data.len()];
            let mut invstd = vec![0.0; f];
            match mode {
                Mode::Train => {
                    for j in 0..f {
                        let mut sum = 0.0;
                        for s in 0..n {
                            let base = s * per_sample + j * spatial;
                            for k in 0..spatial {
                                sum += x.data[base + k];
                            }
                        }
                        let mean = sum / m;
                        let mut var = 0.0;
                        for s in 0..n {
                            let base = s * per_sample + j * spatial;
                            for k in 0..spatial {
                                let d = x.data[base + k] - mean;
                                var += d * d;
                            }
                        }
                        var /= m;
                        let istd = 1.0 / (var + BN_EPS).sqrt();
                        invstd[j] = istd;
                        layer.running_mean[j] =
                            (1.0 - BN_MOMENTUM) * layer.running_mean[j] + BN_MOMENTUM * mean;
                        layer.running_var[j] =
                            (1.0 - BN_MOMENTUM) * layer.running_var[j] + BN_MOMENTUM * var;
                        for s in 0..n {
                            let base = s * per_sample + j * spatial;
                            for k in 0..spatial {
                                let xh = (x.data[base + k] - mean) * istd;
                                xhat[base + k] = xh;
                                out.data[base + k] = layer.weight[j] * xh + layer.bias[j];
                            }
                        }
                    }
                }
                Mode::Eval => {
                    for j in 0..f {
                        let istd = 1.0 / (layer.running_var[j] + BN_EPS).sqrt();
                        invstd[j] = istd;
                        let mean = layer.running_mean[j];
                        for s in 0..n {
                            let base = s * per_sample + j * spatial;
                            for k in 0..spatial {
                                let xh = (x.data[base + k] - mean) * istd;
                                xhat[base + k] = xh;
                                out.data[base + k] = layer.weight[j] * xh + layer.bias[j];
                            }
                        }
                    }
                }
            }
            (out, Cache::BatchNorm { xhat, invstd })
        }
        LayerDesc::MaxPool3d { kernel, stride } => {
            let (ch, in_dims) = grid_of(&layer.in_shape);
            let (_, out_dims) = grid_of(&layer.out_shape);
            let mut out = Batch::zeros(layer.out_shape, n);
            let mut argmax = vec![0usize; n * out_len];
            out.data
                .par_chunks_mut(out_len)
                .zip(argmax.par_chunks_mut(out_len))
                .zip(x.data.par_chunks(in_len))
                .for_each(|((o, a), xi)| {
                    maxpool3d_forward(xi, o, a, ch, in_dims, out_dims, *kernel, *stride)
                });
            (out, Cache::Argmax(argmax))
        }
        LayerDesc::Upsample { scale } => {
            let (ch, in_dims) = grid_of(&layer.in_shape);
            let mut out = Batch::zeros(layer.out_shape, n);
            out.data
                .par_chunks_mut(out_len)
                .zip(x.data.par_chunks(in_len))
                .for_each(|(o, xi)| upsample_forward(xi, o, ch, in_dims, *scale));
            (out, Cache::None)
        }
        LayerDesc::Reshape { .. } | LayerDesc::Flatten => {
            let out = Batch::new(x.data.clone(), layer.out_shape, n);
            (out, Cache::None)
        }
        LayerDesc::Tanh => {
            let mut out = Batch::zeros(layer.out_shape, n);
            for (o, v) in out.data.iter_mut().zip(&x.data) {
                *o = v.tanh();
            }
            (out.clone(), Cache::TanhOut(out.data))
        }
        LayerDesc::Relu => {
            let mut out = Batch::zeros(layer.out_shape, n);
            for (o, v) in out.data.iter_mut().zip(&x.data) {
                *o = v.max(0.0);
            }
            (out, Cache::ActIn(x.data.clone()))
        }
        LayerDesc::LeakyRelu { slope } => {
            let mut out = Batch::zeros(layer.out_shape, n);
            for (o, v) in out.data.iter_mut().zip(&x.data) {
                *o = if *v > 0.0 { *v } else { slope * v };
            }
            (out, Cache::ActIn(x.data.clone()))
        }
    }
}

fn layer_backward(
    layer: &Layer,
    cache: &Cache,
    gout: &Batch,
    gw: &mut [f64],
    gb: &mut [f64],
) -> Batch {
    let n = gout.n;
    let in_len = layer.in_shape.numel();
    let out_len = layer.out_shape.numel();
    match (&layer.desc, cache) {
        (
            LayerDesc::Linear {
                in_features,
                out_features,
            },
            Cache::Input(x),
        ) => {
            let mut gin = Batch::zeros(layer.in_shape, n);
            for s in 0..n {
                let xi = &x[s * in_len..(s + 1) * in_len];
                let go = gout.sample(s);
                let gi = &mut gin.data[s * in_len..(s + 1) * in_len];
                for of in 0..*out_features {
                    let g = go[of];
                    gb[of] += g;
                    let row = &layer.weight[of * in_features..(of + 1) * in_features];
                    let grow = &mut gw[of * in_features..(of + 1) * in_features];
                    for i in 0..*in_features {
                        gi[i] += row[i] * g;
                        grow[i] += xi[i] * g;
                    }
                }
            }
            gin
        }
        (
            LayerDesc::Conv3d {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
            },
            Cache::Input(x),
        )
        | (
            LayerDesc::TransposedConv3d {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
            },
            Cache::Input(x),
        ) => {
            let transposed = matches!(layer.desc, LayerDesc::TransposedConv3d { .. });
            let (_, in_dims) = grid_of(&layer.in_shape);
            let (_, out_dims) = grid_of(&layer.out_shape);
            let geom = ConvGeom {
                in_ch: *in_ch,
                out_ch: *out_ch,
                in_dims,
                out_dims,
                kernel: *kernel,
                stride: *stride,
                padding: *padding,
            };
            let mut gin = Batch::zeros(layer.in_shape, n);
            // Per-sample weight/bias gradients computed in parallel, then
            // reduced in fixed sample order for determinism.
            let per_sample: Vec<(Vec<f64>, Vec<f64>)> = gin
                .data
                .par_chunks_mut(in_len)
                .enumerate()
                .map(|(s, gi)| {
                    let mut gws = vec![0.0; gw.len()];
                    let mut gbs = vec![0.0; gb.len()];
                    let xi = &x[s * in_len..(s + 1) * in_len];
                    let go = gout.sample(s);
                    if transposed {
                        tconv3d_backward(xi, go, gi, &mut gws, &mut gbs, &layer.weight, &geom);
                    } else {
                        conv3d_backward(xi, go, gi, &mut gws, &mut gbs, &layer.weight, &geom);
                    }
                    (gws, gbs)
                })
                .collect();
            for (gws, gbs) in &per_sample {
                for (a, b) in gw.iter_mut().zip(gws) {
                    *a += b;
                }
                for (a, b) in gb.iter_mut().zip(gbs) {
                    *a += b;
                }
            }
            gin
        }
        (LayerDesc::BatchNorm { features }, Cache::BatchNorm { xhat, invstd }) => {
            let f = *features;
            let spatial = in_len / f;
            let m = (n * spatial) as f64;
            let mut gin = Batch::zeros(layer.in_shape, n);
            for j in 0..f {
                let mut dgamma = 0.0;
                let mut dbeta = 0.0;
                for s in 0..n {
                    let base = s * in_len + j * spatial;
                    for k in 0..spatial {
                        let go = gout.data[base + k];
                        dgamma += go * xhat[base + k];
                        dbeta += go;
                    }
                }
                gw[j] += dgamma;
                gb[j] += dbeta;
                let coeff = layer.weight[j] * invstd[j] / m;
                for s in 0..n {
                    let base = s * in_len + j * spatial;
                    for k in 0..spatial {
                        let go = gout.data[base + k];
                        gin.data[base + k] =
                            coeff * (m * go - dbeta - xhat[base + k] * dgamma);
                    }
                }
            }
            gin
        }
        (LayerDesc::MaxPool3d { .. }, Cache::Argmax(argmax)) => {
            let mut gin = Batch::zeros(layer.in_shape, n);
            gin.data
                .par_chunks_mut(in_len)
                .zip(gout.data.par_chunks(out_len))
                .zip(argmax.par_chunks(out_len))
                .for_each(|((gi, go), am)| maxpool3d_backward(go, gi, am));
            gin
        }
        (LayerDesc::Upsample { scale }, _) => {
            let (ch, in_dims) = grid_of(&layer.in_shape);
            let mut gin = Batch::zeros(layer.in_shape, n);
            gin.data
                .par_chunks_mut(in_len)
                .zip(gout.data.par_chunks(out_len))
                .for_each(|(gi, go)| upsample_backward(go, gi, ch, in_dims, *scale));
            gin
        }
        (LayerDesc::Reshape { .. }, _) | (LayerDesc::Flatten, _) => {
            Batch::new(gout.data.clone(), layer.in_shape, n)
        }
        (LayerDesc::Tanh, Cache::TanhOut(y)) => {
            let mut gin = Batch::zeros(layer.in_shape, n);
            for ((gi, go), yv) in gin.data.iter_mut().zip(&gout.data).zip(y) {
                *gi = go * (1.0 - yv * yv);
            }
            gin
        }
        (LayerDesc::Relu, Cache::ActIn(x)) => {
            let mut gin = Batch::zeros(layer.in_shape, n);
            for ((gi, go), xv) in gin.data.iter_mut().zip(&gout.data).zip(x) {
                *gi = if *xv > 0.0 { *go } else { 0.0 };
            }
            gin
        }
        (LayerDesc::LeakyRelu { slope }, Cache::ActIn(x)) => {
            let mut gin = Batch::zeros(layer.in_shape, n);
            for ((gi, go), xv) in gin.data.iter_mut().zip(&gout.data).zip(x) {
                *gi = if *xv > 0.0 { *go } else { slope * go };
            }
            gin
        }
        _ => panic!("cache/layer mismatch in backward"),
    }
}
