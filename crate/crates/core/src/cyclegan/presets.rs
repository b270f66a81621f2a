use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LayerDesc;

/// Layer specs for all four networks plus the I/O dimensions they connect.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GanArch {
    pub fnc_dim: usize,
    pub volume_shape: [usize; 3],
    pub g1: Vec<LayerDesc>,
    pub g2: Vec<LayerDesc>,
    pub d1: Vec<LayerDesc>,
    pub d2: Vec<LayerDesc>,
}

fn tconv(
    in_ch: usize,
    out_ch: usize,
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
) -> LayerDesc {
    LayerDesc::TransposedConv3d {
        in_ch,
        out_ch,
        kernel,
        stride,
        padding,
    }
}

fn conv(
    in_ch: usize,
    out_ch: usize,
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
) -> LayerDesc {
    LayerDesc::Conv3d {
        in_ch,
        out_ch,
        kernel,
        stride,
        padding,
    }
}

fn bn_relu(ch: usize) -> [LayerDesc; 2] {
    [LayerDesc::BatchNorm { features: ch }, LayerDesc::Relu]
}

/// G2/D-style conv tower: five conv+batchnorm+maxpool stages, pooling each
/// axis only while it still has room (so it works at desk scale too).
pub(crate) fn conv_pool_tower(
    channels: [usize; 5],
    mut dims: [usize; 3],
) -> (Vec<LayerDesc>, [usize; 3], usize) {
    let mut layers = Vec::new();
    let mut in_ch = 1;
    for &out_ch in &channels {
        layers.push(conv(in_ch, out_ch, [3; 3], [1; 3], [1; 3]));
        layers.extend(bn_relu(out_ch));
        let mut k = [1usize; 3];
        for a in 0..3 {
            if dims[a] >= 2 {
                k[a] = 2;
                dims[a] = (dims[a] - 2) / 2 + 1;
            }
        }
        layers.push(LayerDesc::MaxPool3d { kernel: k, stride: k });
        in_ch = out_ch;
    }
    (layers, dims, in_ch)
}

/// Full-scale architecture: F = 1378 (53 components), volumes 121x145x121.
/// G1 is five transposed-conv+batchnorm stages with upsampling after the
/// third and fifth, then a final conv + tanh; G2 is five conv+batchnorm+
/// max-pool stages, then linear + tanh; D1 is five convs (two pooled); D2
/// is three linear layers.
pub fn paper_preset() -> GanArch {
    let fnc_dim = 1378;
    let volume_shape = [121, 145, 121];
    let g1 = vec![
        LayerDesc::Linear {
            in_features: fnc_dim,
            out_features: 64 * 4 * 5 * 4,
        },
        LayerDesc::Reshape {
            channels: 64,
            dims: [4, 5, 4],
        },
        // (4,5,4) -> (8,10,8)
        tconv(64, 64, [4; 3], [2; 3], [1; 3]),
        bn_relu(64)[0].clone(),
        bn_relu(64)[1].clone(),
        // -> (16,20,16)
        tconv(64, 32, [4; 3], [2; 3], [1; 3]),
        bn_relu(32)[0].clone(),
        bn_relu(32)[1].clone(),
        // -> (31,37,31), then upsample -> (62,74,62)
        tconv(32, 16, [3; 3], [2; 3], [1, 2, 1]),
        bn_relu(16)[0].clone(),
        bn_relu(16)[1].clone(),
        LayerDesc::Upsample { scale: 2 },
        // -> (61,73,61)
        tconv(16, 16, [2; 3], [1; 3], [1; 3]),
        bn_relu(16)[0].clone(),
        bn_relu(16)[1].clone(),
        // -> (61,73,61), then upsample -> (122,146,122)
        tconv(16, 8, [3; 3], [1; 3], [1; 3]),
        bn_relu(8)[0].clone(),
        bn_relu(8)[1].clone(),
        LayerDesc::Upsample { scale: 2 },
        // -> (121,145,121)
        conv(8, 1, [4; 3], [1; 3], [1; 3]),
        LayerDesc::Tanh,
    ];

    let (mut g2, dims, last_ch) = conv_pool_tower([16, 32, 64, 64, 32], volume_shape);
    g2.push(LayerDesc::Flatten);
    g2.push(LayerDesc::Linear {
        in_features: last_ch * dims[0] * dims[1] * dims[2],
        out_features: fnc_dim,
    });
    g2.push(LayerDesc::Tanh);

    let d1 = vec![
        conv(1, 16, [3; 3], [2; 3], [1; 3]),
        LayerDesc::LeakyRelu { slope: 0.2 },
        conv(16, 32, [3; 3], [2; 3], [1; 3]),
        LayerDesc::LeakyRelu { slope: 0.2 },
        LayerDesc::MaxPool3d {
            kernel: [2; 3],
            stride: [2; 3],
        },
        conv(32, 64, [3; 3], [2; 3], [1; 3]),
        LayerDesc::LeakyRelu { slope: 0.2 },
        conv(64, 64, [3; 3], [2; 3], [1; 3]),
        LayerDesc::LeakyRelu { slope: 0.2 },
        LayerDesc::MaxPool3d {
            kernel: [2; 3],
            stride: [2; 3],
        },
        conv(64, 32, [3; 3], [1; 3], [1; 3]),
        LayerDesc::LeakyRelu { slope: 0.2 },
        LayerDesc::Flatten,
        LayerDesc::Linear {
            in_features: 32 * 2 * 2 * 2,
            out_features: 1,
        },
    ];

    let d2 = vec![
        LayerDesc::Linear {
            in_features: fnc_dim,
            out_features: 64,
        },
        LayerDesc::LeakyRelu { slope: 0.2 },
        LayerDesc::Linear {
            in_features: 64,
            out_features: 32,
        },
        LayerDesc::LeakyRelu { slope: 0.2 },
        LayerDesc::Linear {
            in_features: 32,
            out_features: 1,
        },
    ];

    GanArch {
        fnc_dim,
        volume_shape,
        g1,
        g2,
        d1,
        d2,
    }
}

/// Desk-scale architecture with the same layer structure as the full
/// preset. Volume dims must be divisible by 4.
pub fn desk_preset(n_components: usize, volume_shape: [usize; 3]) -> Result<GanArch> {
    if volume_shape.iter().any(|d| d % 4 != 0 || *d == 0) {
        return Err(Error::Config(format!(
            "desk preset needs volume dims divisible by 4, got {volume_shape:?}"
        )));
    }
    if n_components < 2 {
        return Err(Error::Config("desk preset needs >= 2 components".into()));
    }
    let fnc_dim = n_components * (n_components - 1) / 2;
    let base = [volume_shape[0] / 4, volume_shape[1] / 4, volume_shape[2] / 4];
    let c0 = 16;
    let mut g1 = vec![
        LayerDesc::Linear {
            in_features: fnc_dim,
            out_features: c0 * base[0] * base[1] * base[2],
        },
        LayerDesc::Reshape {
            channels: c0,
            dims: base,
        },
    ];
    let chs = [16, 12, 12, 8, 8];
    let mut in_ch = c0;
    for (i, &ch) in chs.iter().enumerate() {
        g1.push(tconv(in_ch, ch, [3; 3], [1; 3], [1; 3]));
        g1.extend(bn_relu(ch));
        if i == 2 || i == 4 {
            g1.push(LayerDesc::Upsample { scale: 2 });
        }
        in_ch = ch;
    }
    g1.push(conv(in_ch, 1, [3; 3], [1; 3], [1; 3]));
    g1.push(LayerDesc::Tanh);

    let (mut g2, dims, last_ch) = conv_pool_tower([8, 12, 16, 16, 16], volume_shape);
    g2.push(LayerDesc::Flatten);
    g2.push(LayerDesc::Linear {
        in_features: last_ch * dims[0] * dims[1] * dims[2],
        out_features: fnc_dim,
    });
    g2.push(LayerDesc::Tanh);

    let mut d1 = vec![
        conv(1, 8, [3; 3], [2; 3], [1; 3]),
        LayerDesc::LeakyRelu { slope: 0.2 },
        conv(8, 12, [3; 3], [2; 3], [1; 3]),
        LayerDesc::LeakyRelu { slope: 0.2 },
    ];
    let d1_dims = [
        (volume_shape[0] - 1) / 2 / 2 + 1,
        (volume_shape[1] - 1) / 2 / 2 + 1,
        (volume_shape[2] - 1) / 2 / 2 + 1,
    ];
    // pool when there is room, as in the full preset
    let mut dims2 = d1_dims;
    let mut k = [1usize; 3];
    for a in 0..3 {
        if dims2[a] >= 2 {
            k[a] = 2;
            dims2[a] = (dims2[a] - 2) / 2 + 1;
        }
    }
    d1.push(LayerDesc::MaxPool3d { kernel: k, stride: k });
    for (a, b) in [(12, 16), (16, 16), (16, 8)] {
        d1.push(conv(a, b, [3; 3], [1; 3], [1; 3]));
        d1.push(LayerDesc::LeakyRelu { slope: 0.2 });
    }
    d1.push(LayerDesc::Flatten);
    d1.push(LayerDesc::Linear {
        in_features: 8 * dims2[0] * dims2[1] * dims2[2],
        out_features: 1,
    });

    let d2 = vec![
        LayerDesc::Linear {
            in_features: fnc_dim,
            out_features: 32,
        },
        LayerDesc::LeakyRelu { slope: 0.2 },
        LayerDesc::Linear {
            in_features: 32,
            out_features: 16,
        },
        LayerDesc::LeakyRelu { slope: 0.2 },
        LayerDesc::Linear {
            in_features: 16,
            out_features: 1,
        },
    ];

    Ok(GanArch {
        fnc_dim,
        volume_shape,
        g1,
        g2,
        d1,
        d2,
    })
}
