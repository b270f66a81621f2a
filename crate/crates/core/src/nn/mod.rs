//! Minimal dense/3-D convolutional network stack with hand-derived backprop.
//!
//! Everything runs in f64 so analytic gradients can be checked against
//! central finite differences directly. Layer specs are declarative and
//! shape-checked before any parameter is allocated.

mod adam;
mod conv;
mod network;

pub use adam::Adam;
pub use network::{Batch, GradBuffer, Layer, Mode, Network};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declarative layer descriptor. A network is an ordered list of these plus
/// an input shape; composing them must reproduce the declared output shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerDesc {
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Conv3d {
        in_ch: usize,
        out_ch: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    },
    TransposedConv3d {
        in_ch: usize,
        out_ch: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    },
    BatchNorm {
        features: usize,
    },
    MaxPool3d {
        kernel: [usize; 3],
        stride: [usize; 3],
    },
    /// Nearest-neighbour upsampling by an integer factor per axis.
    Upsample {
        scale: usize,
    },
    /// [N, F] -> [N, C, D, H, W]; F must equal C*D*H*W.
    Reshape {
        channels: usize,
        dims: [usize; 3],
    },
    /// [N, C, D, H, W] -> [N, C*D*H*W].
    Flatten,
    Tanh,
    Relu,
    LeakyRelu {
        slope: f64,
    },
}

/// Activation shape between layers (batch axis excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Vector(usize),
    Grid { channels: usize, dims: [usize; 3] },
}

impl Shape {
    pub fn numel(&self) -> usize {
        match self {
            Shape::Vector(f) => *f,
            Shape::Grid { channels, dims } => channels * dims[0] * dims[1] * dims[2],
        }
    }
}

fn conv_out(dim: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let padded = dim + 2 * p;
    if padded < k || s == 0 {
        return None;
    }
    Some((padded - k) / s + 1)
}

fn tconv_out(dim: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    if s == 0 {
        return None;
    }
    let raw = (dim - 1) * s + k;
    if raw < 2 * p {
        return None;
    }
    Some(raw - 2 * p)
}

/// Propagate `input` through `desc`; errors carry the layer index supplied.
pub fn propagate_one(desc: &LayerDesc, input: &Shape, layer: usize) -> Result<Shape> {
    let err = |reason: String| Error::ShapeMismatch { layer, reason };
    match desc {
        LayerDesc::Linear {
            in_features,
            out_features,
        } => match input {
            Shape::Vector(f) if f == in_features => Ok(Shape::Vector(*out_features)),
            other => Err(err(format!(
                "linear expects vector of {in_features}, got {other:?}"
            ))),
        },
        LayerDesc::Conv3d {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        } => match input {
            Shape::Grid { channels, dims } if channels == in_ch => {
                let mut out = [0usize; 3];
                for a in 0..3 {
                    out[a] = conv_out(dims[a], kernel[a], stride[a], padding[a])
                        .ok_or_else(|| err(format!("conv3d kernel exceeds input on axis {a}")))?;
                }
                Ok(Shape::Grid {
                    channels: *out_ch,
                    dims: out,
                })
            }
            other => Err(err(format!(
                "conv3d expects grid with {in_ch} channels, got {other:?}"
            ))),
        },
        LayerDesc::TransposedConv3d {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        } => match input {
            Shape::Grid { channels, dims } if channels == in_ch => {
                let mut out = [0usize; 3];
                for a in 0..3 {
                    out[a] = tconv_out(dims[a], kernel[a], stride[a], padding[a])
                        .ok_or_else(|| err(format!("transposed conv invalid on axis {a}")))?;
                }
                Ok(Shape::Grid {
                    channels: *out_ch,
                    dims: out,
                })
            }
            other => Err(err(format!(
                "transposed_conv3d expects grid with {in_ch} channels, got {other:?}"
            ))),
        },
        LayerDesc::BatchNorm { features } => {
            let actual = match input {
                Shape::Vector(f) => *f,
                Shape::Grid { channels, .. } => *channels,
            };
            if actual == *features {
                Ok(*input)
            } else {
                Err(err(format!(
                    "batch_norm expects {features} features/channels, got {actual}"
                )))
            }
        }
        LayerDesc::MaxPool3d { kernel, stride } => match input {
            Shape::Grid { channels, dims } => {
                let mut out = [0usize; 3];
                for a in 0..3 {
                    out[a] = conv_out(dims[a], kernel[a], stride[a], 0)
                        .ok_or_else(|| err(format!("max_pool3d window exceeds input axis {a}")))?;
                }
                Ok(Shape::Grid {
                    channels: *channels,
                    dims: out,
                })
            }
            other => Err(err(format!("max_pool3d expects grid, got {other:?}"))),
        },
        LayerDesc::Upsample { scale } => match input {
            Shape::Grid { channels, dims } if *scale > 0 => Ok(Shape::Grid {
                channels: *channels,
                dims: [dims[0] * scale, dims[1] * scale, dims[2] * scale],
            }),
            other => Err(err(format!(
                "upsample expects grid and positive scale, got {other:?}"
            ))),
        },
        LayerDesc::Reshape { channels, dims } => match input {
            Shape::Vector(f) if *f == channels * dims[0] * dims[1] * dims[2] => Ok(Shape::Grid {
                channels: *channels,
                dims: *dims,
            }),
            other => Err(err(format!(
                "reshape to {channels}x{dims:?} incompatible with {other:?}"
            ))),
        },
        LayerDesc::Flatten => match input {
            Shape::Grid { .. } => Ok(Shape::Vector(input.numel())),
            other => Err(err(format!("flatten expects grid, got {other:?}"))),
        },
        LayerDesc::Tanh | LayerDesc::Relu | LayerDesc::LeakyRelu { .. } => Ok(*input),
    }
}

/// Compose all layers over `input`, returning the final shape.
pub fn propagate(descs: &[LayerDesc], input: Shape) -> Result<Shape> {
    let mut shape = input;
    for (i, d) in descs.iter().enumerate() {
        shape = propagate_one(d, &shape, i)?;
    }
    Ok(shape)
}
