//! Conditioned two-stream generator.
//!
//! `s = N_g(h) + N_l(h)`. The global stream is three 1×1 convolutions, the
//! local stream three gated 3×3 blocks. A condition network turns the
//! concatenated baseline renderings into a vector `v_c`, and every layer of
//! both streams is modulated channel-wise by its own projection of `v_c`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv2d, GfmProjection, HaCache, HaConv, ParamLayout};
use super::ops::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Width of the hidden layers in both streams.
    pub features: usize,
    /// Channels of the three condition convolutions; the last is `len(v_c)`.
    pub cond_channels: [usize; 3],
    pub cond_kernel: usize,
    pub cond_stride: usize,
    /// Number of RGB condition images.
    pub cond_images: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            features: 32,
            cond_channels: [16, 32, 64],
            cond_kernel: 7,
            cond_stride: 4,
            cond_images: 4,
        }
    }
}

impl ArchConfig {
    pub fn cond_dim(&self) -> usize {
        self.cond_channels[2]
    }

    /// `key=value` summary used in weight-file headers.
    pub fn describe(&self) -> String {
        format!(
            "generator features={} cond_channels={},{},{} cond_kernel={} cond_stride={} cond_images={}",
            self.features,
            self.cond_channels[0],
            self.cond_channels[1],
            self.cond_channels[2],
            self.cond_kernel,
            self.cond_stride,
            self.cond_images
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let mut words = line.split_whitespace();
        if words.next() != Some("generator") {
            return Err(Error::Weights(format!("not a generator architecture: {line:?}")));
        }
        let mut cfg = ArchConfig::default();
        for w in words {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| Error::Weights(format!("bad architecture field {w:?}")))?;
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Weights(format!("bad number in {w:?}")))
            };
            match k {
                "features" => cfg.features = num(v)?,
                "cond_channels" => {
                    let parts: Vec<usize> = v.split(',').map(num).collect::<Result<_>>()?;
                    cfg.cond_channels = parts
                        .try_into()
                        .map_err(|_| Error::Weights(format!("cond_channels needs 3 values: {v}")))?;
                }
                "cond_kernel" => cfg.cond_kernel = num(v)?,
                "cond_stride" => cfg.cond_stride = num(v)?,
                "cond_images" => cfg.cond_images = num(v)?,
                _ => return Err(Error::Weights(format!("unknown architecture field {k:?}"))),
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub arch: ArchConfig,
    pub layout: ParamLayout,
    pub theta: Vec<f64>,
    cond: [Conv2d; 3],
    global: [Conv2d; 3],
    local: [HaConv; 3],
    gfm_global: [GfmProjection; 3],
    gfm_local: [GfmProjection; 3],
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GenCache {
    modulate: bool,
    h: Tensor,
    cond_in: Vec<Tensor>,
    cond_pre: Vec<Tensor>,
    cond_act: Tensor,
    v: Tensor,
    mods_g: Vec<Tensor>,
    mods_l: Vec<Tensor>,
    g_in: Vec<Tensor>,
    g_pre: Vec<Tensor>,
    g_mod: Vec<Tensor>,
    l_in: Vec<Tensor>,
    l_cache: Vec<HaCache>,
    l_pre: Vec<Tensor>,
    pub global: Tensor,
    pub local: Tensor,
}

impl GenCache {
    /// Arguments of every LeakyReLU in the graph; the piecewise-linear
    /// kinks sit where one of these is zero.
    pub fn kink_args(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for t in self.cond_pre.iter().chain(&self.g_mod[..2]) {
            v.extend_from_slice(t.data());
        }
        for c in &self.l_cache {
            v.extend_from_slice(c.zf.data());
        }
        v
    }
}

impl Generator {
    /// Builds the parameter layout; all parameters start at zero.
    pub fn zeroed(arch: ArchConfig) -> Self {
        let mut layout = ParamLayout::default();
        let cc = arch.cond_channels;
        let cin = [3 * arch.cond_images, cc[0], cc[1]];
        let cond = std::array::from_fn(|i| {
            Conv2d::new(
                &mut layout,
                &format!("cond.{i}"),
                ConvGeom {
                    in_c: cin[i],
                    out_c: cc[i],
                    k: arch.cond_kernel,
                    stride: arch.cond_stride,
                    pad: arch.cond_kernel / 2,
                },
            )
        });
        let f = arch.features;
        let widths = [(3, f), (f, f), (f, 3)];
        let global = std::array::from_fn(|i| {
            let (in_c, out_c) = widths[i];
            Conv2d::new(
                &mut layout,
                &format!("global.{i}"),
                ConvGeom { in_c, out_c, k: 1, stride: 1, pad: 0 },
            )
        });
        let local = std::array::from_fn(|i| {
            let (in_c, out_c) = widths[i];
            HaConv::new(&mut layout, &format!("local.{i}"), in_c, out_c)
        });
        let d = arch.cond_dim();
        let gfm_global =
            std::array::from_fn(|i| GfmProjection::new(&mut layout, &format!("gfm.global.{i}"), d, widths[i].1));
        let gfm_local =
            std::array::from_fn(|i| GfmProjection::new(&mut layout, &format!("gfm.local.{i}"), d, widths[i].1));
        let theta = vec![0.0; layout.total()];
        Self { arch, layout, theta, cond, global, local, gfm_global, gfm_local }
    }

    /// Kaiming-uniform convolutions, zero biases, identity modulation.
    pub fn init(arch: ArchConfig, seed: u64) -> Self {
        let mut g = Self::zeroed(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = &mut g.theta;
        for c in &g.cond {
            c.init(theta, &mut rng);
        }
        for c in &g.global {
            c.init(theta, &mut rng);
        }
        for b in &g.local {
            b.init(theta, &mut rng);
        }
        for p in g.gfm_global.iter().chain(&g.gfm_local) {
            p.init(theta);
        }
        g
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    pub fn gfm_projections(&self) -> impl Iterator<Item = &GfmProjection> {
        self.gfm_global.iter().chain(&self.gfm_local)
    }

    /// Zeroes every parameter of the local stream and its projections.
    pub fn zero_local_stream(&mut self) {
        for spec in &self.layout.tensors {
            if spec.name.starts_with("local.") || spec.name.starts_with("gfm.local.") {
                self.theta[spec.range()].fill(0.0);
            }
        }
    }

    /// Condition vector `v_c` of shape `(N, cond_dim, 1, 1)`.
    pub fn condition(&self, conds: &Tensor) -> Result<Tensor> {
        let mut a = conds.clone();
        for c in &self.cond {
            a = ops::leaky_relu(&c.forward(&self.theta, &a)?);
        }
        Ok(ops::global_avg_pool(&a))
    }

    fn check_inputs(&self, h: &Tensor, conds: &Tensor) -> Result<()> {
        let [n, c, hh, w] = h.shape();
        if c != 3 {
            return Err(Error::SizeMismatch(format!("generator input needs 3 channels, got {c}")));
        }
        conds.require_shape([n, 3 * self.arch.cond_images, hh, w])
    }

    pub fn forward(&self, h: &Tensor, conds: &Tensor) -> Result<(Tensor, GenCache)> {
        self.run(h, conds, true)
    }

    /// Forward pass with every modulation skipped.
    pub fn forward_unmodulated(&self, h: &Tensor, conds: &Tensor) -> Result<Tensor> {
        Ok(self.run(h, conds, false)?.0)
    }

    fn run(&self, h: &Tensor, conds: &Tensor, modulate: bool) -> Result<(Tensor, GenCache)> {
        self.check_inputs(h, conds)?;
        let th = &self.theta;

        let mut cond_in = Vec::with_capacity(3);
        let mut cond_pre = Vec::with_capacity(3);
        let mut a = conds.clone();
        for c in &self.cond {
            let z = c.forward(th, &a)?;
            cond_in.push(std::mem::replace(&mut a, ops::leaky_relu(&z)));
            cond_pre.push(z);
        }
        let v = ops::global_avg_pool(&a);
        let cond_act = a;

        let mut mods_g = Vec::with_capacity(3);
        let mut mods_l = Vec::with_capacity(3);
        for (pg, pl) in self.gfm_global.iter().zip(&self.gfm_local) {
            mods_g.push(pg.fc.forward(th, &v)?);
            mods_l.push(pl.fc.forward(th, &v)?);
        }
        let modulated = |x: Tensor, m: &Tensor| -> Result<Tensor> {
            if modulate {
                ops::gfm_forward(&x, m)
            } else {
                Ok(x)
            }
        };

        let (mut g_in, mut g_pre, mut g_mod) = (Vec::new(), Vec::new(), Vec::new());
        let mut x = h.clone();
        for (i, c) in self.global.iter().enumerate() {
            let z = c.forward(th, &x)?;
            let m = modulated(z.clone(), &mods_g[i])?;
            g_in.push(x);
            x = if i < 2 { ops::leaky_relu(&m) } else { m.clone() };
            g_pre.push(z);
            g_mod.push(m);
        }
        let global = x;

        let (mut l_in, mut l_cache, mut l_pre) = (Vec::new(), Vec::new(), Vec::new());
        let mut x = h.clone();
        for (i, b) in self.local.iter().enumerate() {
            let (y, cache) = b.forward(th, &x)?;
            l_in.push(std::mem::replace(&mut x, modulated(y.clone(), &mods_l[i])?));
            l_cache.push(cache);
            l_pre.push(y);
        }
        let local = x;

        let out = global.add(&local);
        let cache = GenCache {
            modulate,
            h: h.clone(),
            cond_in,
            cond_pre,
            cond_act,
            v,
            mods_g,
            mods_l,
            g_in,
            g_pre,
            g_mod,
            l_in,
            l_cache,
            l_pre,
            global,
            local,
        };
        Ok((out, cache))
    }

    /// Gradient of a scalar loss with respect to `theta`, given `dL/ds`.
    pub fn backward(&self, cache: &GenCache, gs: &Tensor) -> Result<Vec<f64>> {
        Ok(self.backward_full(cache, gs)?.0)
    }

    /// Also returns `dL/dh` and `dL/dconds`.
    pub fn backward_full(&self, cache: &GenCache, gs: &Tensor) -> Result<(Vec<f64>, Tensor, Tensor)> {
        if !cache.modulate {
            return Err(Error::InvalidParameter("backward needs a modulated forward pass".into()));
        }
        let th = &self.theta;
        let mut grad = vec![0.0; th.len()];
        let mut gv = Tensor::zeros(cache.v.shape());

        // Local stream.
        let mut gx = gs.clone();
        for i in (0..3).rev() {
            let (gy, gm) = ops::gfm_backward(&cache.l_pre[i], &cache.mods_l[i], &gx);
            gv.add_assign(&self.gfm_local[i].fc.backward(th, &cache.v, &gm, &mut grad));
            gx = self.local[i].backward(th, &cache.l_in[i], &cache.l_cache[i], &gy, &mut grad)?;
        }
        let mut gh = gx;

        // Global stream.
        let mut gx = gs.clone();
        for i in (0..3).rev() {
            let gmod = if i < 2 {
                ops::leaky_relu_backward(&cache.g_mod[i], &gx)
            } else {
                gx
            };
            let (gz, gm) = ops::gfm_backward(&cache.g_pre[i], &cache.mods_g[i], &gmod);
            gv.add_assign(&self.gfm_global[i].fc.backward(th, &cache.v, &gm, &mut grad));
            gx = self.global[i].backward(th, &cache.g_in[i], &gz, &mut grad)?;
        }
        gh.add_assign(&gx);

        // Condition network.
        let mut ga = ops::global_avg_pool_backward(cache.cond_act.shape(), &gv);
        for i in (0..3).rev() {
            let gz = ops::leaky_relu_backward(&cache.cond_pre[i], &ga);
            ga = self.cond[i].backward(th, &cache.cond_in[i], &gz, &mut grad)?;
        }
        debug_assert_eq!(cache.h.shape(), gh.shape());
        Ok((grad, gh, ga))
    }
}
