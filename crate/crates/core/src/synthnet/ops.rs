//! Forward and backward passes of the network primitives.
//!
//! Backward functions take the forward inputs (or outputs, where cheaper),
//! the upstream gradient, and accumulate parameter gradients into the
//! caller's buffers with `+=`, so batch items and layers can share one
//! flat gradient vector.

use rayon::prelude::*;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Reflection index without edge repetition, folded periodically so any
/// padding works on any size (`-1 -> 1`, `n -> n-2`).
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    /// Reflection padding on every side.
    pub pad: usize,
}

impl ConvGeom {
    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.k * self.k
    }

    pub fn out_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = (h + 2 * self.pad, w + 2 * self.pad);
        if ph < self.k || pw < self.k || self.stride == 0 {
            return Err(Error::SizeMismatch(format!(
                "{h}x{w} input too small for kernel {} with padding {}",
                self.k, self.pad
            )));
        }
        Ok(((ph - self.k) / self.stride + 1, (pw - self.k) / self.stride + 1))
    }

    fn check(&self, x: &Tensor, w: &[f64], b: &[f64]) -> Result<(usize, usize)> {
        if x.channels() != self.in_c {
            return Err(Error::SizeMismatch(format!(
                "conv expects {} input channels, got {}",
                self.in_c,
                x.channels()
            )));
        }
        if w.len() != self.weight_len() || b.len() != self.out_c {
            return Err(Error::SizeMismatch("conv parameter length".into()));
        }
        self.out_size(x.height(), x.width())
    }
}

/// Reflection-padded copy of one `C x H x W` item.
fn pad_item(item: &[f64], c: usize, h: usize, w: usize, pad: usize) -> Vec<f64> {
    if pad == 0 {
        return item.to_vec();
    }
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0; c * ph * pw];
    let cols: Vec<usize> = (0..pw).map(|x| reflect(x as isize - pad as isize, w)).collect();
    for ch in 0..c {
        let src = &item[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * ph * pw..(ch + 1) * ph * pw];
        for y in 0..ph {
            let sy = reflect(y as isize - pad as isize, h);
            let srow = &src[sy * w..(sy + 1) * w];
            for (d, &sx) in dst[y * pw..(y + 1) * pw].iter_mut().zip(&cols) {
                *d = srow[sx];
            }
        }
    }
    out
}

/// Folds a gradient on the padded grid back onto the source pixels.
fn unpad_grad(gp: &[f64], c: usize, h: usize, w: usize, pad: usize) -> Vec<f64> {
    if pad == 0 {
        return gp.to_vec();
    }
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0; c * h * w];
    let cols: Vec<usize> = (0..pw).map(|x| reflect(x as isize - pad as isize, w)).collect();
    for ch in 0..c {
        let src = &gp[ch * ph * pw..(ch + 1) * ph * pw];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..ph {
            let sy = reflect(y as isize - pad as isize, h);
            for (x, &sx) in cols.iter().enumerate() {
                dst[sy * w + sx] += src[y * pw + x];
            }
        }
    }
    out
}

/// Cross-correlation with reflection padding. `w` is `[out][in][ky][kx]`.
pub fn conv2d_forward(x: &Tensor, w: &[f64], b: &[f64], g: ConvGeom) -> Result<Tensor> {
    let (oh, ow) = g.check(x, w, b)?;
    let [n, c, h, wd] = x.shape();
    let (ph, pw) = (h + 2 * g.pad, wd + 2 * g.pad);
    let (k, s) = (g.k, g.stride);
    let mut out = Tensor::zeros([n, g.out_c, oh, ow]);
    for i in 0..n {
        let xp = pad_item(x.item(i), c, h, wd, g.pad);
        out.item_mut(i)
            .par_chunks_mut(oh * ow)
            .enumerate()
            .for_each(|(o, plane)| {
                plane.fill(b[o]);
                for ci in 0..c {
                    let src = &xp[ci * ph * pw..(ci + 1) * ph * pw];
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = w[((o * c + ci) * k + ky) * k + kx];
                            for y in 0..oh {
                                let row = &mut plane[y * ow..(y + 1) * ow];
                                let base = (y * s + ky) * pw + kx;
                                if s == 1 {
                                    for (d, v) in row.iter_mut().zip(&src[base..base + ow]) {
                                        *d += wv * v;
                                    }
                                } else {
                                    for (xo, d) in row.iter_mut().enumerate() {
                                        *d += wv * src[base + xo * s];
                                    }
                                }
                            }
                        }
                    }
                }
            });
    }
    Ok(out)
}

/// Returns `dL/dx`; adds `dL/dw`, `dL/db` into `gw`, `gb`.
pub fn conv2d_backward(
    x: &Tensor,
    w: &[f64],
    g: ConvGeom,
    gy: &Tensor,
    gw: &mut [f64],
    gb: &mut [f64],
) -> Result<Tensor> {
    let (oh, ow) = g.out_size(x.height(), x.width())?;
    let [n, c, h, wd] = x.shape();
    gy.require_shape([n, g.out_c, oh, ow])?;
    let (ph, pw) = (h + 2 * g.pad, wd + 2 * g.pad);
    let (k, s) = (g.k, g.stride);
    let mut gx = Tensor::zeros(x.shape());
    for i in 0..n {
        let xp = pad_item(x.item(i), c, h, wd, g.pad);
        let gyi = gy.item(i);

        gw.par_chunks_mut(c * k * k)
            .zip(gb.par_iter_mut())
            .enumerate()
            .for_each(|(o, (gwo, gbo))| {
                let gplane = &gyi[o * oh * ow..(o + 1) * oh * ow];
                *gbo += gplane.iter().sum::<f64>();
                for ci in 0..c {
                    let src = &xp[ci * ph * pw..(ci + 1) * ph * pw];
                    for ky in 0..k {
                        for kx in 0..k {
                            let mut acc = 0.0;
                            for y in 0..oh {
                                let grow = &gplane[y * ow..(y + 1) * ow];
                                let base = (y * s + ky) * pw + kx;
                                if s == 1 {
                                    for (a, b) in grow.iter().zip(&src[base..base + ow]) {
                                        acc += a * b;
                                    }
                                } else {
                                    for (xo, a) in grow.iter().enumerate() {
                                        acc += a * src[base + xo * s];
                                    }
                                }
                            }
                            gwo[(ci * k + ky) * k + kx] += acc;
                        }
                    }
                }
            });

        let mut gxp = vec![0.0; c * ph * pw];
        gxp.par_chunks_mut(ph * pw).enumerate().for_each(|(ci, dst)| {
            for o in 0..g.out_c {
                let gplane = &gyi[o * oh * ow..(o + 1) * oh * ow];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w[((o * c + ci) * k + ky) * k + kx];
                        for y in 0..oh {
                            let grow = &gplane[y * ow..(y + 1) * ow];
                            let base = (y * s + ky) * pw + kx;
                            if s == 1 {
                                for (d, a) in dst[base..base + ow].iter_mut().zip(grow) {
                                    *d += wv * a;
                                }
                            } else {
                                for (xo, a) in grow.iter().enumerate() {
                                    dst[base + xo * s] += wv * a;
                                }
                            }
                        }
                    }
                }
            }
        });
        gx.item_mut(i)
            .copy_from_slice(&unpad_grad(&gxp, c, h, wd, g.pad));
    }
    Ok(gx)
}

pub fn leaky_relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

/// Backward from the forward input `x`.
pub fn leaky_relu_backward(x: &Tensor, gy: &Tensor) -> Tensor {
    x.zip_map(gy, |v, g| if v > 0.0 { g } else { LEAKY_SLOPE * g })
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Backward from the forward output `y`.
pub fn sigmoid_backward(y: &Tensor, gy: &Tensor) -> Tensor {
    y.zip_map(gy, |s, g| g * s * (1.0 - s))
}

/// Mean over space: `(N, C, H, W) -> (N, C, 1, 1)`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let data = x
        .data()
        .chunks_exact(h * w)
        .map(|p| p.iter().sum::<f64>() / (h * w) as f64)
        .collect();
    Tensor::new([n, c, 1, 1], data).expect("pool shape")
}

pub fn global_avg_pool_backward(x_shape: [usize; 4], gy: &Tensor) -> Tensor {
    let [n, c, h, w] = x_shape;
    let scale = 1.0 / (h * w) as f64;
    let mut data = Vec::with_capacity(n * c * h * w);
    for &g in gy.data() {
        data.extend(std::iter::repeat_n(g * scale, h * w));
    }
    Tensor::new(x_shape, data).expect("pool shape")
}

/// Fully connected layer on `(N, in, 1, 1)`; `w` is `[out][in]`.
pub fn linear_forward(x: &Tensor, w: &[f64], b: &[f64]) -> Result<Tensor> {
    let [n, inp, h, wd] = x.shape();
    if h * wd != 1 || w.len() != b.len() * inp {
        return Err(Error::SizeMismatch(format!(
            "linear layer: input {:?}, {} weights, {} biases",
            x.shape(),
            w.len(),
            b.len()
        )));
    }
    let out = b.len();
    let mut data = Vec::with_capacity(n * out);
    for i in 0..n {
        let xi = x.item(i);
        for o in 0..out {
            let row = &w[o * inp..(o + 1) * inp];
            data.push(b[o] + row.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    Tensor::new([n, out, 1, 1], data)
}

pub fn linear_backward(x: &Tensor, w: &[f64], gy: &Tensor, gw: &mut [f64], gb: &mut [f64]) -> Tensor {
    let [n, inp, _, _] = x.shape();
    let out = gb.len();
    let mut gx = Tensor::zeros(x.shape());
    for i in 0..n {
        let xi = x.item(i);
        let gyi = gy.item(i);
        for o in 0..out {
            gb[o] += gyi[o];
            for j in 0..inp {
                gw[o * inp + j] += gyi[o] * xi[j];
            }
        }
        let gxi = gx.item_mut(i);
        for j in 0..inp {
            gxi[j] = (0..out).map(|o| w[o * inp + j] * gyi[o]).sum();
        }
    }
    gx
}

/// Per-channel affine modulation `F * ω1 + ω2`; `m` is `(N, 2C, 1, 1)`
/// holding `ω1` in its first `C` entries and `ω2` in the rest.
pub fn gfm_forward(f: &Tensor, m: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = f.shape();
    m.require_shape([n, 2 * c, 1, 1])?;
    let mut out = f.clone();
    for i in 0..n {
        let mi = m.item(i).to_vec();
        for (ch, plane) in out.item_mut(i).chunks_exact_mut(h * w).enumerate() {
            let (s, t) = (mi[ch], mi[c + ch]);
            for v in plane {
                *v = *v * s + t;
            }
        }
    }
    Ok(out)
}

/// Returns `(dL/dF, dL/dm)`.
pub fn gfm_backward(f: &Tensor, m: &Tensor, gy: &Tensor) -> (Tensor, Tensor) {
    let [n, c, h, w] = f.shape();
    let mut gf = gy.clone();
    let mut gm = Tensor::zeros(m.shape());
    for i in 0..n {
        let mi = m.item(i).to_vec();
        let fi = f.item(i);
        let gyi = gy.item(i);
        let mut gmi = vec![0.0; 2 * c];
        for ch in 0..c {
            let fp = &fi[ch * h * w..(ch + 1) * h * w];
            let gp = &gyi[ch * h * w..(ch + 1) * h * w];
            gmi[ch] = fp.iter().zip(gp).map(|(a, b)| a * b).sum();
            gmi[c + ch] = gp.iter().sum();
        }
        gm.item_mut(i).copy_from_slice(&gmi);
        for (ch, plane) in gf.item_mut(i).chunks_exact_mut(h * w).enumerate() {
            for v in plane {
                *v *= mi[ch];
            }
        }
    }
    (gf, gm)
}
