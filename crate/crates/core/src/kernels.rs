//! Raw numeric kernels shared by the recording (tape) and inference paths.
//!
//! All layouts are row-major: images are `(batch, channels, height, width)`,
//! conv weights `(out, in, kh, kw)`, dense weights `(out, in)`.

use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.in_h + 2 * self.pad + 1 - self.kh
    }

    pub fn out_w(&self) -> usize {
        self.in_w + 2 * self.pad + 1 - self.kw
    }

    /// Range of output columns `ox` for which `ox + k - pad` is a valid input column.
    #[inline]
    fn valid_range(out: usize, inp: usize, k: usize, pad: usize) -> (usize, usize) {
        let lo = pad.saturating_sub(k);
        let hi = (inp + pad).saturating_sub(k).min(out);
        (lo, hi.max(lo))
    }
}

pub fn conv2d_forward<T: Real>(g: &ConvGeom, input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![T::zero(); g.batch * g.out_ch * oh * ow];
    let in_plane = g.in_h * g.in_w;
    let out_plane = oh * ow;
    for b in 0..g.batch {
        for o in 0..g.out_ch {
            let dst = &mut out[(b * g.out_ch + o) * out_plane..][..out_plane];
            dst.iter_mut().for_each(|v| *v = bias[o]);
            for c in 0..g.in_ch {
                let src = &input[(b * g.in_ch + c) * in_plane..][..in_plane];
                let wk = &weight[((o * g.in_ch + c) * g.kh) * g.kw..][..g.kh * g.kw];
                for ki in 0..g.kh {
                    let (y0, y1) = ConvGeom::valid_range(oh, g.in_h, ki, g.pad);
                    for kj in 0..g.kw {
                        let w = wk[ki * g.kw + kj];
                        let (x0, x1) = ConvGeom::valid_range(ow, g.in_w, kj, g.pad);
                        for oy in y0..y1 {
                            let iy = oy + ki - g.pad;
                            let srow = &src[iy * g.in_w..][..g.in_w];
                            let drow = &mut dst[oy * ow..][..ow];
                            for ox in x0..x1 {
                                drow[ox] = drow[ox] + w * srow[ox + kj - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_input, grad_weight, grad_bias)`; `grad_input` is skipped when not needed.
pub fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    need_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let in_plane = g.in_h * g.in_w;
    let out_plane = oh * ow;
    let mut gw = vec![T::zero(); weight.len()];
    let mut gb = vec![T::zero(); g.out_ch];
    let mut gi = need_input.then(|| vec![T::zero(); input.len()]);
    for b in 0..g.batch {
        for o in 0..g.out_ch {
            let go = &grad_out[(b * g.out_ch + o) * out_plane..][..out_plane];
            gb[o] = gb[o] + go.iter().copied().sum::<T>();
            for c in 0..g.in_ch {
                let src = &input[(b * g.in_ch + c) * in_plane..][..in_plane];
                let wbase = ((o * g.in_ch + c) * g.kh) * g.kw;
                for ki in 0..g.kh {
                    let (y0, y1) = ConvGeom::valid_range(oh, g.in_h, ki, g.pad);
                    for kj in 0..g.kw {
                        let (x0, x1) = ConvGeom::valid_range(ow, g.in_w, kj, g.pad);
                        let mut acc = T::zero();
                        for oy in y0..y1 {
                            let iy = oy + ki - g.pad;
                            let srow = &src[iy * g.in_w..][..g.in_w];
                            let grow = &go[oy * ow..][..ow];
                            for ox in x0..x1 {
                                acc = acc + grow[ox] * srow[ox + kj - g.pad];
                            }
                        }
                        gw[wbase + ki * g.kw + kj] = gw[wbase + ki * g.kw + kj] + acc;
                        if let Some(gi) = gi.as_mut() {
                            let w = weight[wbase + ki * g.kw + kj];
                            let dst = &mut gi[(b * g.in_ch + c) * in_plane..][..in_plane];
                            for oy in y0..y1 {
                                let iy = oy + ki - g.pad;
                                let grow = &go[oy * ow..][..ow];
                                let drow = &mut dst[iy * g.in_w..][..g.in_w];
                                for ox in x0..x1 {
                                    drow[ox + kj - g.pad] = drow[ox + kj - g.pad] + w * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (gi, gw, gb)
}

/// `y = x · Wᵀ + b` for `x: (batch, in)`, `W: (out, in)`.
pub fn dense_forward<T: Real>(
    batch: usize,
    n_in: usize,
    n_out: usize,
    x: &[T],
    w: &[T],
    b: &[T],
) -> Vec<T> {
    let mut y = vec![T::zero(); batch * n_out];
    for i in 0..batch {
        let xr = &x[i * n_in..][..n_in];
        for o in 0..n_out {
            let wr = &w[o * n_in..][..n_in];
            let mut acc = b[o];
            for k in 0..n_in {
                acc = acc + xr[k] * wr[k];
            }
            y[i * n_out + o] = acc;
        }
    }
    y
}

pub fn dense_backward<T: Real>(
    batch: usize,
    n_in: usize,
    n_out: usize,
    x: &[T],
    w: &[T],
    gy: &[T],
    need_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let mut gw = vec![T::zero(); n_out * n_in];
    let mut gb = vec![T::zero(); n_out];
    let mut gx = need_input.then(|| vec![T::zero(); batch * n_in]);
    for i in 0..batch {
        let xr = &x[i * n_in..][..n_in];
        for o in 0..n_out {
            let g = gy[i * n_out + o];
            gb[o] = gb[o] + g;
            let gwr = &mut gw[o * n_in..][..n_in];
            for k in 0..n_in {
                gwr[k] = gwr[k] + g * xr[k];
            }
            if let Some(gx) = gx.as_mut() {
                let wr = &w[o * n_in..][..n_in];
                let gxr = &mut gx[i * n_in..][..n_in];
                for k in 0..n_in {
                    gxr[k] = gxr[k] + g * wr[k];
                }
            }
        }
    }
    (gx, gw, gb)
}

pub fn relu_forward<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect()
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_backward<T: Real>(x: &[T], gy: &[T]) -> Vec<T> {
    x.iter()
        .zip(gy)
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect()
}

/// Non-overlapping `size × size` max pooling (floor on ragged edges).
/// Returns the pooled values and, for each output, the flat input index it came from.
pub fn maxpool_forward<T: Real>(
    planes: usize,
    h: usize,
    w: usize,
    size: usize,
    x: &[T],
) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / size, w / size);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (oy * size) * w + ox * size;
                for dy in 0..size {
                    for dx in 0..size {
                        let idx = base + (oy * size + dy) * w + ox * size + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward<T: Real>(input_len: usize, argmax: &[usize], gy: &[T]) -> Vec<T> {
    let mut gx = vec![T::zero(); input_len];
    for (&i, &g) in argmax.iter().zip(gy) {
        gx[i] = gx[i] + g;
    }
    gx
}

/// Per-channel affine `(x - mean[c]) / std[c]` over `(batch, channels, plane)`.
pub fn channel_affine<T: Real>(x: &[T], channels: usize, plane: usize, mean: &[T], std: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for (k, chunk) in x.chunks(plane).enumerate() {
        let c = k % channels;
        out.extend(chunk.iter().map(|&v| (v - mean[c]) / std[c]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_handles_padding() {
        // in_w = 4, pad = 1, k = 3 -> out_w = 4
        let g = ConvGeom {
            batch: 1,
            in_ch: 1,
            in_h: 4,
            in_w: 4,
            out_ch: 1,
            kh: 3,
            kw: 3,
            pad: 1,
        };
        assert_eq!(g.out_w(), 4);
        assert_eq!(ConvGeom::valid_range(4, 4, 0, 1), (1, 4));
        assert_eq!(ConvGeom::valid_range(4, 4, 1, 1), (0, 4));
        assert_eq!(ConvGeom::valid_range(4, 4, 2, 1), (0, 3));
    }

    #[test]
    fn one_by_one_conv_scales() {
        let g = ConvGeom {
            batch: 1,
            in_ch: 1,
            in_h: 2,
            in_w: 2,
            out_ch: 1,
            kh: 1,
            kw: 1,
            pad: 0,
        };
        let out = conv2d_forward(&g, &[1.0f32; 4], &[2.0], &[0.0]);
        assert_eq!(out, vec![2.0; 4]);
    }

    #[test]
    fn maxpool_routes_to_first_max() {
        let x = [1.0f32, 3.0, 3.0, 0.0];
        let (y, arg) = maxpool_forward(1, 2, 2, 2, &x);
        assert_eq!(y, vec![3.0]);
        assert_eq!(arg, vec![1]);
        assert_eq!(maxpool_backward(4, &arg, &[5.0f32]), vec![0.0, 5.0, 0.0, 0.0]);
    }
}
