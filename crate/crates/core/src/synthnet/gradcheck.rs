//! Central-difference verification of the hand-written backward passes.
//!
//! Every check uses a scalar objective: primitives are probed with a random
//! linear functional `Σ r ⊙ y`, the full generator with the HTMP loss.
//! Coordinates whose perturbation moves any LeakyReLU argument or L1
//! residual across zero, or moves one lying within `KINK_MARGIN` of zero, are
//! excluded, since the derivative does not exist there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{HaConv, ParamLayout};
use super::network::{ArchConfig, Generator};
use super::ops::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::Result;
use crate::region::{HtmpConfig, HtmpSupervision};

pub const STEP: f64 = 1e-4;
pub const KINK_MARGIN: f64 = 1e-7;
/// Denominator floor of the relative error; gradients below it are compared
/// in absolute terms.
pub const REL_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub excluded: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err < self.tolerance
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn crosses(base: &[f64], plus: &[f64], minus: &[f64]) -> bool {
    base.iter().zip(plus).zip(minus).any(|((&b, &p), &m)| {
        let moved = p != b || m != b;
        (moved && b.abs() < KINK_MARGIN) || (b > 0.0) != (p > 0.0) || (b > 0.0) != (m > 0.0)
    })
}

/// Compares `analytic` with central differences of `f` at `coords`.
/// `f` returns the objective and its kink arguments.
pub fn check_coords(
    name: &str,
    x: &[f64],
    analytic: &[f64],
    coords: &[usize],
    tolerance: f64,
    f: impl Fn(&[f64]) -> (f64, Vec<f64>),
) -> GradCheckReport {
    let (_, base_kinks) = f(x);
    let mut report = GradCheckReport {
        name: name.to_string(),
        checked: 0,
        excluded: 0,
        max_rel_err: 0.0,
        tolerance,
    };
    let mut p = x.to_vec();
    for &i in coords {
        p[i] = x[i] + STEP;
        let (lp, kp) = f(&p);
        p[i] = x[i] - STEP;
        let (lm, km) = f(&p);
        p[i] = x[i];
        if crosses(&base_kinks, &kp, &km) {
            report.excluded += 1;
            continue;
        }
        let fd = (lp - lm) / (2.0 * STEP);
        report.checked += 1;
        report.max_rel_err = report.max_rel_err.max(rel_err(fd, analytic[i]));
    }
    report
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], scale: f64) -> Tensor {
    Tensor::new(shape, random_vec(rng, shape.iter().product(), scale)).expect("shape")
}

fn dot(a: &Tensor, b: &[f64]) -> f64 {
    a.data().iter().zip(b).map(|(x, y)| x * y).sum()
}

fn all_coords(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Up to `per_tensor` coordinates from every tensor of a layout.
fn layout_coords(layout: &ParamLayout, per_tensor: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = Vec::new();
    for t in &layout.tensors {
        let n = t.len();
        if n <= per_tensor {
            out.extend(t.range());
        } else {
            let mut picked: Vec<usize> = (0..n).collect();
            for i in 0..per_tensor {
                let j = rng.random_range(i..n);
                picked.swap(i, j);
            }
            out.extend(picked[..per_tensor].iter().map(|k| t.offset + k));
        }
    }
    out
}

fn check_conv(rng: &mut ChaCha8Rng, name: &str, g: ConvGeom, shape: [usize; 4]) -> Result<Vec<GradCheckReport>> {
    let x = random_tensor(rng, shape, 1.0);
    let w = random_vec(rng, g.weight_len(), 0.5);
    let b = random_vec(rng, g.out_c, 0.5);
    let y = ops::conv2d_forward(&x, &w, &b, g)?;
    let r = random_vec(rng, y.len(), 1.0);
    let gy = Tensor::new(y.shape(), r.clone())?;
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; b.len()];
    let gx = ops::conv2d_backward(&x, &w, g, &gy, &mut gw, &mut gb)?;
    let tol = 1e-6;
    let fx = |v: &[f64]| {
        let t = Tensor::new(x.shape(), v.to_vec()).unwrap();
        (dot(&ops::conv2d_forward(&t, &w, &b, g).unwrap(), &r), vec![])
    };
    let fw = |v: &[f64]| (dot(&ops::conv2d_forward(&x, v, &b, g).unwrap(), &r), vec![]);
    let fb = |v: &[f64]| (dot(&ops::conv2d_forward(&x, &w, v, g).unwrap(), &r), vec![]);
    Ok(vec![
        check_coords(&format!("{name} dx"), x.data(), gx.data(), &all_coords(x.len()), tol, fx),
        check_coords(&format!("{name} dw"), &w, &gw, &all_coords(w.len()), tol, fw),
        check_coords(&format!("{name} db"), &b, &gb, &all_coords(b.len()), tol, fb),
    ])
}

fn check_elementwise(rng: &mut ChaCha8Rng) -> Vec<GradCheckReport> {
    let x = random_tensor(rng, [1, 2, 4, 4], 1.0);
    let r = random_vec(rng, x.len(), 1.0);
    let gy = Tensor::new(x.shape(), r.clone()).unwrap();
    let wrap = |v: &[f64]| Tensor::new(x.shape(), v.to_vec()).unwrap();

    let g_lrelu = ops::leaky_relu_backward(&x, &gy);
    let lrelu = check_coords("leaky_relu", x.data(), g_lrelu.data(), &all_coords(x.len()), 1e-6, |v| {
        (dot(&ops::leaky_relu(&wrap(v)), &r), v.to_vec())
    });

    let g_sig = ops::sigmoid_backward(&ops::sigmoid(&x), &gy);
    let sig = check_coords("sigmoid", x.data(), g_sig.data(), &all_coords(x.len()), 1e-6, |v| {
        (dot(&ops::sigmoid(&wrap(v)), &r), vec![])
    });

    let rp = random_vec(rng, 2, 1.0);
    let gp = ops::global_avg_pool_backward(x.shape(), &Tensor::new([1, 2, 1, 1], rp.clone()).unwrap());
    let pool = check_coords("global_avg_pool", x.data(), gp.data(), &all_coords(x.len()), 1e-6, |v| {
        (dot(&ops::global_avg_pool(&wrap(v)), &rp), vec![])
    });
    vec![lrelu, sig, pool]
}

fn check_linear(rng: &mut ChaCha8Rng) -> Result<Vec<GradCheckReport>> {
    let x = random_tensor(rng, [2, 5, 1, 1], 1.0);
    let w = random_vec(rng, 15, 1.0);
    let b = random_vec(rng, 3, 1.0);
    let r = random_vec(rng, 6, 1.0);
    let gy = Tensor::new([2, 3, 1, 1], r.clone())?;
    let (mut gw, mut gb) = (vec![0.0; 15], vec![0.0; 3]);
    let gx = ops::linear_backward(&x, &w, &gy, &mut gw, &mut gb);
    let fx = |v: &[f64]| {
        let t = Tensor::new(x.shape(), v.to_vec()).unwrap();
        (dot(&ops::linear_forward(&t, &w, &b).unwrap(), &r), vec![])
    };
    let fw = |v: &[f64]| (dot(&ops::linear_forward(&x, v, &b).unwrap(), &r), vec![]);
    let fb = |v: &[f64]| (dot(&ops::linear_forward(&x, &w, v).unwrap(), &r), vec![]);
    Ok(vec![
        check_coords("linear dx", x.data(), gx.data(), &all_coords(10), 1e-6, fx),
        check_coords("linear dw", &w, &gw, &all_coords(15), 1e-6, fw),
        check_coords("linear db", &b, &gb, &all_coords(3), 1e-6, fb),
    ])
}

/// GFM with its projection: `F * ω1 + ω2` where `(ω1, ω2) = W v + b`.
fn check_gfm(rng: &mut ChaCha8Rng) -> Result<Vec<GradCheckReport>> {
    let (c, d) = (3, 4);
    let f = random_tensor(rng, [2, c, 3, 3], 1.0);
    let v = random_tensor(rng, [2, d, 1, 1], 1.0);
    let w = random_vec(rng, 2 * c * d, 1.0);
    let b = random_vec(rng, 2 * c, 1.0);
    let r = random_vec(rng, f.len(), 1.0);
    let objective = |f: &Tensor, w: &[f64], b: &[f64]| {
        let m = ops::linear_forward(&v, w, b).unwrap();
        dot(&ops::gfm_forward(f, &m).unwrap(), &r)
    };
    let m = ops::linear_forward(&v, &w, &b)?;
    let (gf, gm) = ops::gfm_backward(&f, &m, &Tensor::new(f.shape(), r.clone())?);
    let (mut gw, mut gb) = (vec![0.0; w.len()], vec![0.0; b.len()]);
    ops::linear_backward(&v, &w, &gm, &mut gw, &mut gb);
    let ff = |x: &[f64]| (objective(&Tensor::new(f.shape(), x.to_vec()).unwrap(), &w, &b), vec![]);
    let fw = |x: &[f64]| (objective(&f, x, &b), vec![]);
    let fb = |x: &[f64]| (objective(&f, &w, x), vec![]);
    Ok(vec![
        check_coords("gfm dF", f.data(), gf.data(), &all_coords(f.len()), 1e-6, ff),
        check_coords("gfm dW", &w, &gw, &all_coords(w.len()), 1e-6, fw),
        check_coords("gfm db", &b, &gb, &all_coords(b.len()), 1e-6, fb),
    ])
}

fn check_ha_conv(rng: &mut ChaCha8Rng) -> Result<Vec<GradCheckReport>> {
    let mut layout = ParamLayout::default();
    let block = HaConv::new(&mut layout, "ha", 4, 4);
    let theta = random_vec(rng, layout.total(), 0.5);
    let x = random_tensor(rng, [1, 4, 6, 6], 1.0);
    let (y, cache) = block.forward(&theta, &x)?;
    let r = random_vec(rng, y.len(), 1.0);
    let mut grad = vec![0.0; theta.len()];
    let gx = block.backward(&theta, &x, &cache, &Tensor::new(y.shape(), r.clone())?, &mut grad)?;
    let eval = |th: &[f64], x: &Tensor| {
        let (y, c) = block.forward(th, x).unwrap();
        (dot(&y, &r), c.zf.into_data())
    };
    Ok(vec![
        check_coords("ha_conv dx", x.data(), gx.data(), &all_coords(x.len()), 1e-6, |v| {
            eval(&theta, &Tensor::new(x.shape(), v.to_vec()).unwrap())
        }),
        check_coords("ha_conv dtheta", &theta, &grad, &all_coords(theta.len()), 1e-6, |v| eval(v, &x)),
    ])
}

/// Randomizes every generator parameter, including the modulation
/// projections, so no gradient path is trivially zero.
pub fn randomized_generator(seed: u64) -> Generator {
    let mut g = Generator::init(ArchConfig::default(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    for t in g.layout.tensors.clone() {
        for v in &mut g.theta[t.range()] {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    g
}

/// HTMP loss of the generator on one 8×8 patch, checked over a sample of
/// coordinates from every parameter tensor.
fn check_composite(rng: &mut ChaCha8Rng, seed: u64) -> Result<GradCheckReport> {
    let size = 8;
    let hdr = crate::synthetic::synthetic_hdr(seed, size, size)?;
    let gen = randomized_generator(seed);
    let conds = super::train::condition_tensor(&hdr, &crate::tmo::standin_lut())?;
    let h = Tensor::from_image(&hdr);
    let sup = HtmpSupervision::new(&hdr, &HtmpConfig::default())?;
    let target = sup.target.to_planar();

    let (out, cache) = gen.forward(&h, &conds)?;
    let gs = Tensor::new(out.shape(), sup.grad_planar(out.data())?)?;
    let analytic = gen.backward(&cache, &gs)?;
    let coords = layout_coords(&gen.layout, 6, rng);
    let f = |th: &[f64]| {
        let mut probe = gen.clone();
        probe.theta.copy_from_slice(th);
        let (out, cache) = probe.forward(&h, &conds).unwrap();
        let loss = sup.loss_planar(out.data()).unwrap().total;
        let mut kinks = cache.kink_args();
        kinks.extend(out.data().iter().zip(&target).map(|(s, t)| s - t));
        (loss, kinks)
    };
    Ok(check_coords("htmp_loss∘generator", &gen.theta, &analytic, &coords, 1e-4, f))
}

/// Every primitive check plus the composed generator/HTMP check.
pub fn suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    out.extend(check_conv(&mut rng, "conv3x3", ConvGeom { in_c: 2, out_c: 3, k: 3, stride: 1, pad: 1 }, [2, 2, 5, 5])?);
    out.extend(check_conv(&mut rng, "conv7x7/4", ConvGeom { in_c: 3, out_c: 2, k: 7, stride: 4, pad: 3 }, [1, 3, 9, 9])?);
    out.extend(check_conv(&mut rng, "conv1x1", ConvGeom { in_c: 3, out_c: 4, k: 1, stride: 1, pad: 0 }, [1, 3, 4, 4])?);
    out.extend(check_conv(&mut rng, "conv4x4/2", ConvGeom { in_c: 2, out_c: 2, k: 4, stride: 2, pad: 0 }, [1, 2, 8, 8])?);
    out.extend(check_elementwise(&mut rng));
    out.extend(check_linear(&mut rng)?);
    out.extend(check_gfm(&mut rng)?);
    out.extend(check_ha_conv(&mut rng)?);
    out.push(check_composite(&mut rng, seed)?);
    Ok(out)
}
