//! Per-sample 3-D convolution kernels on contiguous row-major buffers.
//!
//! Layout is [C, D, H, W] per sample; the batch loop (and rayon
//! parallelism) lives in `network.rs`. Convolution weights are
//! [out_ch, in_ch, k0, k1, k2]; transposed-convolution weights are
//! [in_ch, out_ch, k0, k1, k2].

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_dims: [usize; 3],
    pub out_dims: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

#[inline]
fn grid_idx(dims: [usize; 3], c: usize, d: usize, h: usize, w: usize) -> usize {
    ((c * dims[0] + d) * dims[1] + h) * dims[2] + w
}

pub fn conv3d_forward(x: &[f64], out: &mut [f64], w: &[f64], b: &[f64], g: &ConvGeom) {
    let [k0, k1, k2] = g.kernel;
    let [s0, s1, s2] = g.stride;
    let [p0, p1, p2] = g.padding;
    let kvol = k0 * k1 * k2;
    for oc in 0..g.out_ch {
        for od in 0..g.out_dims[0] {
            for oh in 0..g.out_dims[1] {
                for ow in 0..g.out_dims[2] {
                    let mut acc = b[oc];
                    for ic in 0..g.in_ch {
                        let wbase = (oc * g.in_ch + ic) * kvol;
                        for kd in 0..k0 {
                            let id = (od * s0 + kd).wrapping_sub(p0);
                            if id >= g.in_dims[0] {
                                continue;
                            }
                            for kh in 0..k1 {
                                let ih = (oh * s1 + kh).wrapping_sub(p1);
                                if ih >= g.in_dims[1] {
                                    continue;
                                }
                                for kw in 0..k2 {
                                    let iw = (ow * s2 + kw).wrapping_sub(p2);
                                    if iw >= g.in_dims[2] {
                                        continue;
                                    }
                                    acc += x[grid_idx(g.in_dims, ic, id, ih, iw)]
                                        * w[wbase + (kd * k1 + kh) * k2 + kw];
                                }
                            }
                        }
                    }
                    out[grid_idx(g.out_dims, oc, od, oh, ow)] = acc;
                }
            }
        }
    }
}

pub fn conv3d_backward(
    x: &[f64],
    gout: &[f64],
    gin: &mut [f64],
    gw: &mut [f64],
    gb: &mut [f64],
    w: &[f64],
    g: &ConvGeom,
) {
    let [k0, k1, k2] = g.kernel;
    let [s0, s1, s2] = g.stride;
    let [p0, p1, p2] = g.padding;
    let kvol = k0 * k1 * k2;
    for oc in 0..g.out_ch {
        for od in 0..g.out_dims[0] {
            for oh in 0..g.out_dims[1] {
                for ow in 0..g.out_dims[2] {
                    let go = gout[grid_idx(g.out_dims, oc, od, oh, ow)];
                    if go == 0.0 {
                        continue;
                    }
                    gb[oc] += go;
                    for ic in 0..g.in_ch {
                        let wbase = (oc * g.in_ch + ic) * kvol;
                        for kd in 0..k0 {
                            let id = (od * s0 + kd).wrapping_sub(p0);
                            if id >= g.in_dims[0] {
                                continue;
                            }
                            for kh in 0..k1 {
                                let ih = (oh * s1 + kh).wrapping_sub(p1);
                                if ih >= g.in_dims[1] {
                                    continue;
                                }
                                for kw in 0..k2 {
                                    let iw = (ow * s2 + kw).wrapping_sub(p2);
                                    if iw >= g.in_dims[2] {
                                        continue;
                                    }
                                    let xi = grid_idx(g.in_dims, ic, id, ih, iw);
                                    let wi = wbase + (kd * k1 + kh) * k2 + kw;
                                    gin[xi] += w[wi] * go;
                                    gw[wi] += x[xi] * go;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn tconv3d_forward(x: &[f64], out: &mut [f64], w: &[f64], b: &[f64], g: &ConvGeom) {
    let [k0, k1, k2] = g.kernel;
    let [s0, s1, s2] = g.stride;
    let [p0, p1, p2] = g.padding;
    let kvol = k0 * k1 * k2;
    for oc in 0..g.out_ch {
        let base = oc * g.out_dims[0] * g.out_dims[1] * g.out_dims[2];
        for v in &mut out[base..base + g.out_dims[0] * g.out_dims[1] * g.out_dims[2]] {
            *v = b[oc];
        }
    }
    for ic in 0..g.in_ch {
        for id in 0..g.in_dims[0] {
            for ih in 0..g.in_dims[1] {
                for iw in 0..g.in_dims[2] {
                    let xv = x[grid_idx(g.in_dims, ic, id, ih, iw)];
                    if xv == 0.0 {
                        continue;
                    }
                    for oc in 0..g.out_ch {
                        let wbase = (ic * g.out_ch + oc) * kvol;
                        for kd in 0..k0 {
                            let od = (id * s0 + kd).wrapping_sub(p0);
                            if od >= g.out_dims[0] {
                                continue;
                            }
                            for kh in 0..k1 {
                                let oh = (ih * s1 + kh).wrapping_sub(p1);
                                if oh >= g.out_dims[1] {
                                    continue;
                                }
                                for kw in 0..k2 {
                                    let ow = (iw * s2 + kw).wrapping_sub(p2);
                                    if ow >= g.out_dims[2] {
                                        continue;
                                    }
                                    out[grid_idx(g.out_dims, oc, od, oh, ow)] +=
                                        xv * w[wbase + (kd * k1 + kh) * k2 + kw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn tconv3d_backward(
    x: &[f64],
    gout: &[f64],
    gin: &mut [f64],
    gw: &mut [f64],
    gb: &mut [f64],
    w: &[f64],
    g: &ConvGeom,
) {
    let [k0, k1, k2] = g.kernel;
    let [s0, s1, s2] = g.stride;
    let [p0, p1, p2] = g.padding;
    let kvol = k0 * k1 * k2;
    for oc in 0..g.out_ch {
        for od in 0..g.out_dims[0] {
            for oh in 0..g.out_dims[1] {
                for ow in 0..g.out_dims[2] {
                    gb[oc] += gout[grid_idx(g.out_dims, oc, od, oh, ow)];
                }
            }
        }
    }
    for ic in 0..g.in_ch {
        for id in 0..g.in_dims[0] {
            for ih in 0..g.in_dims[1] {
                for iw in 0..g.in_dims[2] {
                    let xi = grid_idx(g.in_dims, ic, id, ih, iw);
                    let xv = x[xi];
                    let mut acc = 0.0;
                    for oc in 0..g.out_ch {
                        let wbase = (ic * g.out_ch + oc) * kvol;
                        for kd in 0..k0 {
                            let od = (id * s0 + kd).wrapping_sub(p0);
                            if od >= g.out_dims[0] {
                                continue;
                            }
                            for kh in 0..k1 {
                                let oh = (ih * s1 + kh).wrapping_sub(p1);
                                if oh >= g.out_dims[1] {
                                    continue;
                                }
                                for kw in 0..k2 {
                                    let ow = (iw * s2 + kw).wrapping_sub(p2);
                                    if ow >= g.out_dims[2] {
                                        continue;
                                    }
                                    let go = gout[grid_idx(g.out_dims, oc, od, oh, ow)];
                                    let wi = wbase + (kd * k1 + kh) * k2 + kw;
                                    acc += w[wi] * go;
                                    gw[wi] += xv * go;
                                }
                            }
                        }
                    }
                    gin[xi] += acc;
                }
            }
        }
    }
}

/// Max pooling; `argmax` receives the flat input index of each output's
/// winning element (ties resolved to the first scan-order element).
pub fn maxpool3d_forward(
    x: &[f64],
    out: &mut [f64],
    argmax: &mut [usize],
    channels: usize,
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
) {
    for c in 0..channels {
        for od in 0..out_dims[0] {
            for oh in 0..out_dims[1] {
                for ow in 0..out_dims[2] {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0usize;
                    for kd in 0..kernel[0] {
                        for kh in 0..kernel[1] {
                            for kw in 0..kernel[2] {
                                let xi = grid_idx(
                                    in_dims,
                                    c,
                                    od * stride[0] + kd,
                                    oh * stride[1] + kh,
                                    ow * stride[2] + kw,
                                );
                                if x[xi] > best {
                                    best = x[xi];
                                    best_i = xi;
                                }
                            }
                        }
                    }
                    let oi = grid_idx(out_dims, c, od, oh, ow);
                    out[oi] = best;
                    argmax[oi] = best_i;
                }
            }
        }
    }
}

pub fn maxpool3d_backward(gout: &[f64], gin: &mut [f64], argmax: &[usize]) {
    for (go, &ai) in gout.iter().zip(argmax) {
        gin[ai] += go;
    }
}

pub fn upsample_forward(
    x: &[f64],
    out: &mut [f64],
    channels: usize,
    in_dims: [usize; 3],
    scale: usize,
) {
    let out_dims = [in_dims[0] * scale, in_dims[1] * scale, in_dims[2] * scale];
    for c in 0..channels {
        for od in 0..out_dims[0] {
            for oh in 0..out_dims[1] {
                for ow in 0..out_dims[2] {
                    out[grid_idx(out_dims, c, od, oh, ow)] =
                        x[grid_idx(in_dims, c, od / scale, oh / scale, ow / scale)];
                }
            }
        }
    }
}

pub fn upsample_backward(
    gout: &[f64],
    gin: &mut [f64],
    channels: usize,
    in_dims: [usize; 3],
    scale: usize,
) {
    let out_dims = [in_dims[0] * scale, in_dims[1] * scale, in_dims[2] * scale];
    for c in 0..channels {
        for od in 0..out_dims[0] {
            for oh in 0..out_dims[1] {
                for ow in 0..out_dims[2] {
                    gin[grid_idx(in_dims, c, od / scale, oh / scale, ow / scale)] +=
                        gout[grid_idx(out_dims, c, od, oh, ow)];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        // 1x1x1 kernel with unit weight reproduces the input.
        let g = ConvGeom {
            in_ch: 1,
            out_ch: 1,
            in_dims: [2, 2, 2],
            out_dims: [2, 2, 2],
            kernel: [1, 1, 1],
            stride: [1, 1, 1],
            padding: [0, 0, 0],
        };
        let x: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let mut out = vec![0.0; 8];
        conv3d_forward(&x, &mut out, &[1.0], &[0.0], &g);
        assert_eq!(out, x);
    }

    #[test]
    fn maxpool_picks_max_and_routes_gradient() {
        let x = vec![1.0, 5.0, 3.0, 2.0, 0.0, 0.0, 0.0, 0.0];
        let mut out = vec![0.0; 1];
        let mut arg = vec![0usize; 1];
        maxpool3d_forward(
            &x,
            &mut out,
            &mut arg,
            1,
            [2, 2, 2],
            [1, 1, 1],
            [2, 2, 2],
            [2, 2, 2],
        );
        assert_eq!(out[0], 5.0);
        let mut gin = vec![0.0; 8];
        maxpool3d_backward(&[2.0], &mut gin, &arg);
        assert_eq!(gin[1], 2.0);
        assert_eq!(gin.iter().sum::<f64>(), 2.0);
    }
}
