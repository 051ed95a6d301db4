//! Parameterized layers over a flat parameter vector.
//!
//! Layers only record offsets into the owning network's `theta`; gradients
//! live in a vector of the same length and layout.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, ConvGeom, LEAKY_SLOPE};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Allocation order of named tensors inside a flat parameter vector.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamLayout {
    pub tensors: Vec<TensorSpec>,
    total: usize,
}

impl ParamLayout {
    pub fn alloc(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let offset = self.total;
        let spec = TensorSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
        };
        self.total += spec.len();
        self.tensors.push(spec);
        offset
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// He/Kaiming-uniform gain for LeakyReLU.
pub fn kaiming_gain() -> f64 {
    (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt()
}

/// Fills `dst` with `U(-bound, bound)` drawn in single precision, so the
/// values survive the f32 weights file unchanged.
pub fn fill_uniform(rng: &mut ChaCha8Rng, dst: &mut [f64], fan_in: usize) {
    let bound = (kaiming_gain() * (3.0 / fan_in as f64).sqrt()) as f32;
    for v in dst {
        *v = rng.random_range(-bound..bound) as f64;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub geom: ConvGeom,
    pub w: usize,
    pub b: usize,
}

impl Conv2d {
    pub fn new(layout: &mut ParamLayout, name: &str, geom: ConvGeom) -> Self {
        let w = layout.alloc(
            format!("{name}.weight"),
            &[geom.out_c, geom.in_c, geom.k, geom.k],
        );
        let b = layout.alloc(format!("{name}.bias"), &[geom.out_c]);
        Self { geom, w, b }
    }

    pub fn weight<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.w..self.w + self.geom.weight_len()]
    }

    pub fn bias<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.b..self.b + self.geom.out_c]
    }

    pub fn init(&self, theta: &mut [f64], rng: &mut ChaCha8Rng) {
        let fan_in = self.geom.in_c * self.geom.k * self.geom.k;
        fill_uniform(rng, &mut theta[self.w..self.w + self.geom.weight_len()], fan_in);
        theta[self.b..self.b + self.geom.out_c].fill(0.0);
    }

    pub fn forward(&self, theta: &[f64], x: &Tensor) -> Result<Tensor> {
        ops::conv2d_forward(x, self.weight(theta), self.bias(theta), self.geom)
    }

    pub fn backward(&self, theta: &[f64], x: &Tensor, gy: &Tensor, grad: &mut [f64]) -> Result<Tensor> {
        let (wlen, c) = (self.geom.weight_len(), self.geom.out_c);
        // Weight and bias blocks are allocated back to back.
        debug_assert_eq!(self.b, self.w + wlen);
        let (gw, gb) = grad[self.w..self.b + c].split_at_mut(wlen);
        ops::conv2d_backward(x, self.weight(theta), self.geom, gy, gw, gb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub inp: usize,
    pub out: usize,
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, name: &str, inp: usize, out: usize) -> Self {
        let w = layout.alloc(format!("{name}.weight"), &[out, inp]);
        let b = layout.alloc(format!("{name}.bias"), &[out]);
        Self { inp, out, w, b }
    }

    pub fn weight<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.w..self.w + self.inp * self.out]
    }

    pub fn bias<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.b..self.b + self.out]
    }

    pub fn forward(&self, theta: &[f64], x: &Tensor) -> Result<Tensor> {
        ops::linear_forward(x, self.weight(theta), self.bias(theta))
    }

    pub fn backward(&self, theta: &[f64], x: &Tensor, gy: &Tensor, grad: &mut [f64]) -> Tensor {
        let wlen = self.inp * self.out;
        debug_assert_eq!(self.b, self.w + wlen);
        let (gw, gb) = grad[self.w..self.b + self.out].split_at_mut(wlen);
        ops::linear_backward(x, self.weight(theta), gy, gw, gb)
    }
}

/// GFM projection `v_c -> (ω1, ω2)`, initialized to the identity modulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GfmProjection {
    pub fc: Linear,
    pub channels: usize,
}

impl GfmProjection {
    pub fn new(layout: &mut ParamLayout, name: &str, cond: usize, channels: usize) -> Self {
        Self {
            fc: Linear::new(layout, name, cond, 2 * channels),
            channels,
        }
    }

    pub fn init(&self, theta: &mut [f64]) {
        theta[self.fc.w..self.fc.w + self.fc.inp * self.fc.out].fill(0.0);
        let b = &mut theta[self.fc.b..self.fc.b + self.fc.out];
        b[..self.channels].fill(1.0);
        b[self.channels..].fill(0.0);
    }
}

/// Gated block: `lrelu(conv_f(x)) * sigmoid(conv_g(x))`, plus `x` when the
/// channel counts match.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HaConv {
    pub feature: Conv2d,
    pub gate: Conv2d,
}

#[derive(Debug, Clone)]
pub struct HaCache {
    pub zf: Tensor,
    pub af: Tensor,
    pub sg: Tensor,
}

impl HaConv {
    pub fn new(layout: &mut ParamLayout, name: &str, in_c: usize, out_c: usize) -> Self {
        let geom = ConvGeom { in_c, out_c, k: 3, stride: 1, pad: 1 };
        Self {
            feature: Conv2d::new(layout, &format!("{name}.feature"), geom),
            gate: Conv2d::new(layout, &format!("{name}.gate"), geom),
        }
    }

    pub fn has_skip(&self) -> bool {
        self.feature.geom.in_c == self.feature.geom.out_c
    }

    pub fn init(&self, theta: &mut [f64], rng: &mut ChaCha8Rng) {
        self.feature.init(theta, rng);
        self.gate.init(theta, rng);
    }

    pub fn forward(&self, theta: &[f64], x: &Tensor) -> Result<(Tensor, HaCache)> {
        let zf = self.feature.forward(theta, x)?;
        let af = ops::leaky_relu(&zf);
        let sg = ops::sigmoid(&self.gate.forward(theta, x)?);
        let mut y = af.zip_map(&sg, |a, s| a * s);
        if self.has_skip() {
            y.add_assign(x);
        }
        Ok((y, HaCache { zf, af, sg }))
    }

    pub fn backward(
        &self,
        theta: &[f64],
        x: &Tensor,
        cache: &HaCache,
        gy: &Tensor,
        grad: &mut [f64],
    ) -> Result<Tensor> {
        let g_af = gy.zip_map(&cache.sg, |g, s| g * s);
        let g_sg = gy.zip_map(&cache.af, |g, a| g * a);
        let g_zf = ops::leaky_relu_backward(&cache.zf, &g_af);
        let g_zg = ops::sigmoid_backward(&cache.sg, &g_sg);
        let mut gx = self.feature.backward(theta, x, &g_zf, grad)?;
        gx.add_assign(&self.gate.backward(theta, x, &g_zg, grad)?);
        if self.has_skip() {
            gx.add_assign(gy);
        }
        Ok(gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn block(in_c: usize, out_c: usize) -> (HaConv, Vec<f64>) {
        let mut layout = ParamLayout::default();
        let b = HaConv::new(&mut layout, "ha", in_c, out_c);
        let mut theta = vec![0.0; layout.total()];
        b.init(&mut theta, &mut ChaCha8Rng::seed_from_u64(1));
        (b, theta)
    }

    #[test]
    fn gate_at_rest_halves_feature() {
        let (b, mut theta) = block(3, 2);
        let g = b.gate;
        theta[g.w..g.b + g.geom.out_c].fill(0.0);
        let x = Tensor::new([1, 3, 4, 4], (0..48).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let (y, _) = b.forward(&theta, &x).unwrap();
        let feature = ops::leaky_relu(&b.feature.forward(&theta, &x).unwrap());
        assert_eq!(y, feature.map(|v| 0.5 * v));
    }

    #[test]
    fn zero_input_zero_output() {
        for (i, o) in [(3, 4), (4, 4)] {
            let (b, theta) = block(i, o);
            let (y, _) = b.forward(&theta, &Tensor::zeros([1, i, 5, 5])).unwrap();
            assert!(y.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn layout_offsets_are_contiguous() {
        let mut layout = ParamLayout::default();
        let c = Conv2d::new(&mut layout, "c", ConvGeom { in_c: 2, out_c: 3, k: 3, stride: 1, pad: 1 });
        let l = Linear::new(&mut layout, "l", 4, 5);
        assert_eq!(c.b, 54);
        assert_eq!(l.w, 57);
        assert_eq!(layout.total(), 57 + 25);
        assert_eq!(layout.tensors[2].name, "l.weight");
    }

    #[test]
    fn init_is_f32_exact_and_bounded() {
        let (b, theta) = block(4, 4);
        let bound = kaiming_gain() * (3.0 / 36.0f64).sqrt();
        for &v in b.feature.weight(&theta) {
            assert_eq!(v, v as f32 as f64);
            assert!(v.abs() <= bound + 1e-7);
        }
        assert!(b.feature.bias(&theta).iter().all(|&v| v == 0.0));
    }
}
