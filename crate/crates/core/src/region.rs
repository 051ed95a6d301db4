//! Radiance regions and the hybrid tone-mapping-prior (HTMP) supervision.
//!
//! A PQ frame is split into highlight, mid-tone and shadow regions by two
//! radiance thresholds. Each region gets its own supervisor: white for
//! highlights, a `W`-weighted blend of μ-law CGM and the LUT operator for
//! mid-tones, and the linear operator for shadows.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::colorimetry::{bt2020_to_bt709, cgm_pixel, luma, pq_eotf, MuLaw, BT2020_LUMA};
use crate::error::{Error, Result};
use crate::image::{Gamut, Image, Transfer};
use crate::lut::Lut3D;
use crate::tmo::{nearest_rank, standin_lut, Normalization, Tmo, LINEAR_PERCENTILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RadianceMode {
    /// BT.2020 luminance of the linearized channels.
    #[default]
    Luminance,
    /// Largest linearized channel.
    MaxRgb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Thresholds {
    /// `α`, `β` are the `a`-th and `b`-th nearest-rank percentiles of `L`.
    Percentile { a: f64, b: f64 },
    /// Absolute linear radiance thresholds, bypassing the histogram.
    Fixed { alpha: f64, beta: f64 },
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds::Percentile { a: 95.0, b: 5.0 }
    }
}

#[derive(Debug, Clone)]
pub struct HtmpConfig {
    pub thresholds: Thresholds,
    pub mu: MuLaw,
    pub radiance: RadianceMode,
    /// `y(.)`: LUT operator for the mid-tone blend.
    pub lut: Arc<Lut3D>,
    /// Normalizer of the shadow supervisor `l(.)`.
    pub linear: Normalization,
}

impl Default for HtmpConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            mu: MuLaw::default(),
            radiance: RadianceMode::default(),
            lut: Arc::new(standin_lut()),
            linear: Normalization::ScenePercentile(LINEAR_PERCENTILE),
        }
    }
}

impl HtmpConfig {
    pub fn validate(&self) -> Result<()> {
        match self.thresholds {
            Thresholds::Percentile { a, b } => {
                if !(0.0 < b && b < a && a <= 100.0) {
                    return Err(Error::InvalidParameter(format!(
                        "percentiles must satisfy 0 < b < a <= 100, got a={a} b={b}"
                    )));
                }
            }
            Thresholds::Fixed { alpha, beta } => {
                if !(alpha > beta && beta.is_finite() && alpha.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "fixed thresholds must satisfy alpha > beta, got alpha={alpha} beta={beta}"
                    )));
                }
            }
        }
        if self.lut.domain() != ([0.0; 3], [1.0; 3]) {
            return Err(Error::InvalidParameter("LUT domain must be [0, 1]".into()));
        }
        Ok(())
    }
}

/// Per-pixel linear radiance of a PQ BT.2020 frame, row-major.
pub fn radiance_map(h: &Image, mode: RadianceMode) -> Result<Vec<f64>> {
    h.require_tags(Gamut::Bt2020, Transfer::Pq)?;
    Ok(h.pixels()
        .map(|p| {
            let lin = p.map(|v| pq_eotf(v as f64));
            match mode {
                RadianceMode::Luminance => luma(BT2020_LUMA, lin),
                RadianceMode::MaxRgb => lin[0].max(lin[1]).max(lin[2]),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    pub alpha: f64,
    pub beta: f64,
    /// Set when the histogram gave `α = β` and `α` had to be nudged up.
    pub degenerate: bool,
}

/// Smallest power-of-two multiple of machine epsilon that moves `beta` up.
fn widen(beta: f64) -> f64 {
    let mut eps = f64::EPSILON;
    while beta + eps <= beta {
        eps *= 2.0;
    }
    beta + eps
}

/// Nearest-rank percentile thresholds of a radiance map.
pub fn thresholds(l: &[f64], a: f64, b: f64) -> ThresholdPair {
    let mut sorted = l.to_vec();
    sorted.sort_by(f64::total_cmp);
    let alpha = nearest_rank(&sorted, a);
    let beta = nearest_rank(&sorted, b);
    if alpha > beta {
        ThresholdPair { alpha, beta, degenerate: false }
    } else {
        log::warn!("degenerate radiance histogram: alpha = beta = {beta}");
        ThresholdPair { alpha: widen(beta), beta, degenerate: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMasks {
    pub high: Vec<u8>,
    pub mid: Vec<u8>,
    pub low: Vec<u8>,
    /// Mid-tone blend weight `μ⁻¹(clamp((L-β)/(α-β), 0, 1))`.
    pub w: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl RegionMasks {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Fractions of pixels in the (high, mid, low) regions.
    pub fn fractions(&self) -> (f64, f64, f64) {
        let n = self.len() as f64;
        let count = |m: &[u8]| m.iter().filter(|&&v| v == 1).count() as f64 / n;
        (count(&self.high), count(&self.mid), count(&self.low))
    }
}

pub fn region_masks(l: &[f64], alpha: f64, beta: f64, mu: MuLaw) -> Result<RegionMasks> {
    if !(alpha > beta) {
        return Err(Error::InvalidParameter(format!(
            "alpha ({alpha}) must exceed beta ({beta})"
        )));
    }
    let n = l.len();
    let mut masks = RegionMasks {
        high: vec![0; n],
        mid: vec![0; n],
        low: vec![0; n],
        w: vec![0.0; n],
        alpha,
        beta,
    };
    for (i, &v) in l.iter().enumerate() {
        if v > alpha {
            masks.high[i] = 1;
        } else if v < beta {
            masks.low[i] = 1;
        } else {
            masks.mid[i] = 1;
        }
        masks.w[i] = mu.expand(((v - beta) / (alpha - beta)).clamp(0.0, 1.0)).min(1.0);
    }
    Ok(masks)
}

/// Summary written next to generated targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HtmpStats {
    pub alpha: f64,
    pub beta: f64,
    pub degenerate: bool,
    pub high_fraction: f64,
    pub mid_fraction: f64,
    pub low_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HtmpLoss {
    pub total: f64,
    pub high: f64,
    pub mid: f64,
    pub low: f64,
}

/// Composite target and region masks of one HDR frame.
#[derive(Debug, Clone)]
pub struct HtmpSupervision {
    pub target: Image,
    pub masks: RegionMasks,
    pub degenerate: bool,
}

impl HtmpSupervision {
    pub fn new(h: &Image, cfg: &HtmpConfig) -> Result<Self> {
        cfg.validate()?;
        let l = radiance_map(h, cfg.radiance)?;
        let pair = match cfg.thresholds {
            Thresholds::Percentile { a, b } => thresholds(&l, a, b),
            Thresholds::Fixed { alpha, beta } => ThresholdPair { alpha, beta, degenerate: false },
        };
        let masks = region_masks(&l, pair.alpha, pair.beta, cfg.mu)?;
        let linear = Tmo::Linear(cfg.linear).prepare(h)?;
        let m = bt2020_to_bt709();
        let mut data = Vec::with_capacity(h.data().len());
        for (i, p) in h.pixels().enumerate() {
            let p = p.map(|v| v as f64);
            let t = if masks.high[i] == 1 {
                [1.0; 3]
            } else if masks.low[i] == 1 {
                linear.map(p)
            } else {
                let w = masks.w[i];
                let c = cgm_pixel(&m, p).map(|v| cfg.mu.compress(v));
                let y = cfg.lut.eval(p);
                [0, 1, 2].map(|k| w * c[k] + (1.0 - w) * y[k])
            };
            data.extend(t.map(|v| v as f32));
        }
        let target = Image::new(h.width(), h.height(), data, Gamut::Bt709, Transfer::Gamma709)?;
        Ok(Self { target, masks, degenerate: pair.degenerate })
    }

    /// The supervision restricted to a `w x h` window at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        let target = self.target.crop(x0, y0, w, h)?;
        let width = self.target.width();
        let pick = |v: &[u8]| -> Vec<u8> {
            (y0..y0 + h).flat_map(|y| v[y * width + x0..y * width + x0 + w].to_vec()).collect()
        };
        let w_map = (y0..y0 + h)
            .flat_map(|y| self.masks.w[y * width + x0..y * width + x0 + w].to_vec())
            .collect();
        let masks = RegionMasks {
            high: pick(&self.masks.high),
            mid: pick(&self.masks.mid),
            low: pick(&self.masks.low),
            w: w_map,
            alpha: self.masks.alpha,
            beta: self.masks.beta,
        };
        Ok(Self { target, masks, degenerate: self.degenerate })
    }

    pub fn stats(&self) -> HtmpStats {
        let (high_fraction, mid_fraction, low_fraction) = self.masks.fractions();
        HtmpStats {
            alpha: self.masks.alpha,
            beta: self.masks.beta,
            degenerate: self.degenerate,
            high_fraction,
            mid_fraction,
            low_fraction,
        }
    }

    /// Loss of a planar (`rrr..ggg..bbb..`) prediction.
    pub fn loss_planar(&self, s: &[f64]) -> Result<HtmpLoss> {
        let n = self.masks.len();
        if s.len() != 3 * n {
            return Err(Error::SizeMismatch(format!(
                "prediction has {} values, target {}",
                s.len(),
                3 * n
            )));
        }
        let t = self.target.data();
        let mut acc = [0.0f64; 3];
        for c in 0..3 {
            for i in 0..n {
                let d = (s[c * n + i] - t[i * 3 + c] as f64).abs();
                acc[self.region(i)] += d;
            }
        }
        Ok(self.finish(acc))
    }

    /// Gradient of the total loss with respect to a planar prediction.
    pub fn grad_planar(&self, s: &[f64]) -> Result<Vec<f64>> {
        let n = self.masks.len();
        if s.len() != 3 * n {
            return Err(Error::SizeMismatch(format!(
                "prediction has {} values, target {}",
                s.len(),
                3 * n
            )));
        }
        let t = self.target.data();
        let scale = 1.0 / (3 * n) as f64;
        let mut g = vec![0.0; 3 * n];
        for c in 0..3 {
            for i in 0..n {
                let d = s[c * n + i] - t[i * 3 + c] as f64;
                g[c * n + i] = if d > 0.0 {
                    scale
                } else if d < 0.0 {
                    -scale
                } else {
                    0.0
                };
            }
        }
        Ok(g)
    }

    pub fn loss(&self, s: &Image) -> Result<HtmpLoss> {
        s.require_tags(Gamut::Bt709, Transfer::Gamma709)?;
        s.require_same_size(&self.target)?;
        let mut acc = [0.0f64; 3];
        for (i, (p, q)) in s.data().chunks_exact(3).zip(self.target.data().chunks_exact(3)).enumerate() {
            let r = self.region(i);
            for c in 0..3 {
                acc[r] += (p[c] as f64 - q[c] as f64).abs();
            }
        }
        Ok(self.finish(acc))
    }

    /// Gradient image of the total loss with respect to `s`, interleaved.
    pub fn grad(&self, s: &Image) -> Result<Vec<f64>> {
        s.require_same_size(&self.target)?;
        let g = self.grad_planar(&s.to_planar())?;
        let n = self.masks.len();
        Ok((0..3 * n).map(|j| g[(j % 3) * n + j / 3]).collect())
    }

    fn region(&self, i: usize) -> usize {
        if self.masks.high[i] == 1 {
            0
        } else if self.masks.mid[i] == 1 {
            1
        } else {
            2
        }
    }

    fn finish(&self, acc: [f64; 3]) -> HtmpLoss {
        let denom = (3 * self.masks.len()) as f64;
        let (high, mid, low) = (acc[0] / denom, acc[1] / denom, acc[2] / denom);
        HtmpLoss { total: high + mid + low, high, mid, low }
    }
}

pub fn htmp_target(h: &Image, cfg: &HtmpConfig) -> Result<Image> {
    Ok(HtmpSupervision::new(h, cfg)?.target)
}

pub fn htmp_loss(s: &Image, h: &Image, cfg: &HtmpConfig) -> Result<HtmpLoss> {
    s.require_same_size(h)?;
    HtmpSupervision::new(h, cfg)?.loss(s)
}

pub fn htmp_loss_grad(s: &Image, h: &Image, cfg: &HtmpConfig) -> Result<Vec<f64>> {
    s.require_same_size(h)?;
    HtmpSupervision::new(h, cfg)?.grad(s)
}
