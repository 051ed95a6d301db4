//! Patch discriminator and least-squares adversarial objectives.
//!
//! Four unpadded 4×4 convolutions with strides 2, 2, 4, 1 and a 1×1 head.
//! The receptive field is 1 + 3·(1 + 2 + 4 + 16) = 70 pixels, so a 70×70
//! crop produces exactly one score.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Conv2d, ParamLayout};
use super::ops::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const PATCH: usize = 70;

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub layout: ParamLayout,
    pub theta: Vec<f64>,
    convs: [Conv2d; 4],
    head: Conv2d,
}

pub struct DiscCache {
    input: Tensor,
    ins: Vec<Tensor>,
    pre: Vec<Tensor>,
    last: Tensor,
}

impl Discriminator {
    pub const DESCRIPTION: &'static str = "discriminator channels=16,32,64,64 kernel=4 strides=2,2,4,1";

    pub fn zeroed() -> Self {
        let mut layout = ParamLayout::default();
        let chans = [(3, 16, 2), (16, 32, 2), (32, 64, 4), (64, 64, 1)];
        let convs = std::array::from_fn(|i| {
            let (in_c, out_c, stride) = chans[i];
            Conv2d::new(&mut layout, &format!("disc.{i}"), ConvGeom { in_c, out_c, k: 4, stride, pad: 0 })
        });
        let head = Conv2d::new(&mut layout, "disc.head", ConvGeom { in_c: 64, out_c: 1, k: 1, stride: 1, pad: 0 });
        let theta = vec![0.0; layout.total()];
        Self { layout, theta, convs, head }
    }

    /// Kaiming-uniform body; the head starts at zero so every initial score is 0.
    pub fn init(seed: u64) -> Self {
        let mut d = Self::zeroed();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for c in &d.convs {
            c.init(&mut d.theta, &mut rng);
        }
        d
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, DiscCache)> {
        if x.height() < PATCH || x.width() < PATCH {
            return Err(Error::SizeMismatch(format!(
                "discriminator needs at least {PATCH}x{PATCH}, got {}x{}",
                x.height(),
                x.width()
            )));
        }
        let mut ins = Vec::with_capacity(4);
        let mut pre = Vec::with_capacity(4);
        let mut a = x.clone();
        for c in &self.convs {
            let z = c.forward(&self.theta, &a)?;
            ins.push(std::mem::replace(&mut a, ops::leaky_relu(&z)));
            pre.push(z);
        }
        let out = self.head.forward(&self.theta, &a)?;
        Ok((out, DiscCache { input: x.clone(), ins, pre, last: a }))
    }

    /// Returns `(dL/dtheta, dL/dx)`.
    pub fn backward(&self, cache: &DiscCache, gy: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        let mut grad = vec![0.0; self.theta.len()];
        let mut ga = self.head.backward(&self.theta, &cache.last, gy, &mut grad)?;
        for i in (0..4).rev() {
            let gz = ops::leaky_relu_backward(&cache.pre[i], &ga);
            ga = self.convs[i].backward(&self.theta, &cache.ins[i], &gz, &mut grad)?;
        }
        debug_assert_eq!(ga.shape(), cache.input.shape());
        Ok((grad, ga))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsganLosses {
    pub d: f64,
    pub g: f64,
}

fn mean_sq(t: &Tensor, target: f64) -> f64 {
    t.data().iter().map(|v| (v - target).powi(2)).sum::<f64>() / t.len() as f64
}

/// `loss_D = ½·mean((d_real−1)²) + ½·mean(d_fake²)`, `loss_G = ½·mean((d_fake−1)²)`.
pub fn lsgan_losses(d_real: &Tensor, d_fake: &Tensor) -> Result<LsganLosses> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::InvalidParameter("empty discriminator scores".into()));
    }
    Ok(LsganLosses {
        d: 0.5 * mean_sq(d_real, 1.0) + 0.5 * mean_sq(d_fake, 0.0),
        g: 0.5 * mean_sq(d_fake, 1.0),
    })
}

/// `d loss_G / d d_fake`.
pub fn lsgan_g_grad(d_fake: &Tensor) -> Tensor {
    let n = d_fake.len() as f64;
    d_fake.map(|v| (v - 1.0) / n)
}

/// `(d loss_D / d d_real, d loss_D / d d_fake)`.
pub fn lsgan_d_grads(d_real: &Tensor, d_fake: &Tensor) -> (Tensor, Tensor) {
    let (nr, nf) = (d_real.len() as f64, d_fake.len() as f64);
    (d_real.map(|v| (v - 1.0) / nr), d_fake.map(|v| v / nf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_cases() {
        let s = [1, 1, 2, 2];
        let l = lsgan_losses(&Tensor::filled(s, 1.0), &Tensor::filled(s, 0.0)).unwrap();
        assert_eq!(l.d, 0.0);
        let l = lsgan_losses(&Tensor::filled(s, 0.3), &Tensor::filled(s, 1.0)).unwrap();
        assert_eq!(l.g, 0.0);
        let l = lsgan_losses(&Tensor::filled(s, 0.5), &Tensor::filled(s, 0.5)).unwrap();
        assert_eq!((l.d, l.g), (0.25, 0.125));
        assert!(lsgan_losses(&Tensor::zeros([0, 1, 1, 1]), &Tensor::filled(s, 0.5)).is_err());
    }

    #[test]
    fn seventy_pixel_receptive_field() {
        let d = Discriminator::init(1);
        let (y, _) = d.forward(&Tensor::filled([2, 3, 70, 70], 0.5)).unwrap();
        assert_eq!(y.shape(), [2, 1, 1, 1]);
        assert!(d.forward(&Tensor::filled([1, 3, 69, 70], 0.5)).is_err());
        // One score depends on every input pixel of the crop: perturb a corner.
        let mut d = d;
        let h = d.head;
        d.theta[h.w..h.w + 64].fill(1.0);
        let base = Tensor::filled([1, 3, 70, 70], 0.5);
        let (a, _) = d.forward(&base).unwrap();
        for (yy, xx) in [(0, 0), (69, 69), (0, 69)] {
            let mut p = base.clone();
            p.data_mut()[yy * 70 + xx] += 1.0;
            let (b, _) = d.forward(&p).unwrap();
            assert_ne!(a.data()[0], b.data()[0], "pixel ({yy},{xx}) outside receptive field");
        }
    }

    #[test]
    fn initial_scores_are_zero() {
        let d = Discriminator::init(2);
        let (y, _) = d.forward(&Tensor::filled([1, 3, 80, 72], 0.9)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let l = lsgan_losses(&y, &y).unwrap();
        assert_eq!(l.d, 0.5);
    }
}
