//! Baseline tone-mapping operators (HDRTV PQ/BT.2020 -> SDRTV BT.709).
//!
//! Every operator is global: frame statistics (normalizer, exposure) are
//! resolved once by [`Tmo::prepare`], after which the mapping is a pure
//! per-pixel function that can also be baked into a [`Lut3D`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::colorimetry::{
    bt2020_to_bt709, cgm_pixel, gamma709_oetf, luma, pq_eotf, Mat3, MuLaw, BT709_LUMA,
};
use crate::error::{Error, Result};
use crate::image::{Gamut, Image, Transfer};
use crate::lut::Lut3D;

/// Linear level of 100 cd/m² on the normalized PQ scale.
pub const REFERENCE_WHITE: f64 = 0.01;

/// Percentile of max-channel linear light used by the scene normalizer.
pub const LINEAR_PERCENTILE: f64 = 99.9;

/// Geometric-mean luminance target of the exposure rule.
pub const KEY_VALUE: f64 = 0.18;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Normalization {
    /// Divide by [`REFERENCE_WHITE`].
    ReferenceWhite,
    /// Divide by the given nearest-rank percentile of max-channel linear light.
    ScenePercentile(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Exposure {
    /// Scale so that the log-average luminance maps to [`KEY_VALUE`].
    GeometricMean,
    /// Fixed multiplier on normalized linear light.
    Fixed(f64),
}

/// Filmic curve with the widely published default constants.
pub mod hable {
    pub const A: f64 = 0.15;
    pub const B: f64 = 0.50;
    pub const C: f64 = 0.10;
    pub const D: f64 = 0.20;
    pub const E: f64 = 0.02;
    pub const F: f64 = 0.30;
    pub const WHITE: f64 = 11.2;

    pub fn curve(x: f64) -> f64 {
        ((x * (A * x + C * B) + D * E) / (x * (A * x + B) + D * F)) - E / F
    }

    /// `curve(x) / curve(WHITE)`; not clamped.
    pub fn normalized(x: f64) -> f64 {
        curve(x) / curve(WHITE)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tmo {
    Clip(Normalization),
    Linear(Normalization),
    Reinhard(Exposure),
    Hable(Exposure),
    MuLawCgm(MuLaw),
    Lut(Arc<Lut3D>),
}

impl Tmo {
    pub fn clip() -> Self {
        Tmo::Clip(Normalization::ReferenceWhite)
    }

    pub fn linear() -> Self {
        Tmo::Linear(Normalization::ScenePercentile(LINEAR_PERCENTILE))
    }

    pub fn reinhard() -> Self {
        Tmo::Reinhard(Exposure::GeometricMean)
    }

    pub fn hable() -> Self {
        Tmo::Hable(Exposure::GeometricMean)
    }

    pub fn mulaw_cgm(mu: f64) -> Result<Self> {
        Ok(Tmo::MuLawCgm(MuLaw::new(mu)?))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Tmo::Clip(_) => "clip",
            Tmo::Linear(_) => "linear",
            Tmo::Reinhard(_) => "reinhard",
            Tmo::Hable(_) => "hable",
            Tmo::MuLawCgm(_) => "mulaw-cgm",
            Tmo::Lut(_) => "lut",
        }
    }

    /// Resolves frame statistics of `h` into a per-pixel map.
    pub fn prepare(&self, h: &Image) -> Result<PixelMap> {
        h.require_tags(Gamut::Bt2020, Transfer::Pq)?;
        let m = bt2020_to_bt709();
        let kind = match self {
            Tmo::Clip(n) | Tmo::Linear(n) => MapKind::Scaled {
                scale: normalizer_scale(*n, &m, h)?,
            },
            Tmo::Reinhard(e) => MapKind::Reinhard {
                scale: exposure_scale(*e, &m, h)?,
            },
            Tmo::Hable(e) => MapKind::Hable {
                scale: exposure_scale(*e, &m, h)?,
            },
            Tmo::MuLawCgm(mu) => MapKind::MuLawCgm(*mu),
            Tmo::Lut(lut) => {
                if lut.domain() != ([0.0; 3], [1.0; 3]) {
                    return Err(Error::InvalidParameter(
                        "LUT domain does not match PQ code range [0, 1]".into(),
                    ));
                }
                MapKind::Lut(lut.clone())
            }
        };
        Ok(PixelMap { matrix: m, kind })
    }

    /// Per-pixel map for operators whose configuration needs no frame
    /// statistics (fixed exposure, reference-white normalization).
    pub fn pointwise(&self) -> Result<PixelMap> {
        let m = bt2020_to_bt709();
        let kind = match self {
            Tmo::Clip(Normalization::ReferenceWhite) | Tmo::Linear(Normalization::ReferenceWhite) => {
                MapKind::Scaled {
                    scale: 1.0 / REFERENCE_WHITE,
                }
            }
            Tmo::Reinhard(Exposure::Fixed(s)) => MapKind::Reinhard { scale: check_scale(*s)? },
            Tmo::Hable(Exposure::Fixed(s)) => MapKind::Hable { scale: check_scale(*s)? },
            Tmo::MuLawCgm(mu) => MapKind::MuLawCgm(*mu),
            Tmo::Lut(lut) => MapKind::Lut(lut.clone()),
            other => {
                return Err(Error::InvalidParameter(format!(
                    "{} with frame-dependent statistics has no pointwise form",
                    other.name()
                )))
            }
        };
        Ok(PixelMap { matrix: m, kind })
    }

    pub fn apply(&self, h: &Image) -> Result<Image> {
        let map = self.prepare(h)?;
        h.map_pixels(Gamut::Bt709, Transfer::Gamma709, |p| map.map(p))
    }
}

fn check_scale(s: f64) -> Result<f64> {
    if s > 0.0 && s.is_finite() {
        Ok(s)
    } else {
        Err(Error::InvalidParameter(format!("exposure scale must be > 0, got {s}")))
    }
}

#[derive(Debug, Clone)]
enum MapKind {
    Scaled { scale: f64 },
    Reinhard { scale: f64 },
    Hable { scale: f64 },
    MuLawCgm(MuLaw),
    Lut(Arc<Lut3D>),
}

/// A resolved operator: PQ BT.2020 code triplet -> BT.709 gamma code triplet.
#[derive(Debug, Clone)]
pub struct PixelMap {
    matrix: Mat3,
    kind: MapKind,
}

impl PixelMap {
    pub fn map(&self, pq_rgb: [f64; 3]) -> [f64; 3] {
        let linear = || self.matrix.apply(pq_rgb.map(pq_eotf));
        match &self.kind {
            MapKind::Scaled { scale } => {
                linear().map(|v| gamma709_oetf((v * scale).clamp(0.0, 1.0)))
            }
            MapKind::Reinhard { scale } => linear().map(|v| {
                let x = v.max(0.0) * scale;
                gamma709_oetf(x / (1.0 + x))
            }),
            MapKind::Hable { scale } => linear().map(|v| {
                let x = v.max(0.0) * scale;
                gamma709_oetf(hable::normalized(x).clamp(0.0, 1.0))
            }),
            MapKind::MuLawCgm(mu) => cgm_pixel(&self.matrix, pq_rgb).map(|v| mu.compress(v)),
            MapKind::Lut(lut) => lut.eval(pq_rgb),
        }
    }

    /// Resolved linear-light multiplier, if the operator has one.
    pub fn scale(&self) -> Option<f64> {
        match self.kind {
            MapKind::Scaled { scale } | MapKind::Reinhard { scale } | MapKind::Hable { scale } => {
                Some(scale)
            }
            _ => None,
        }
    }
}

fn linear_709<'a>(m: &Mat3, h: &'a Image) -> impl Iterator<Item = [f64; 3]> + 'a {
    let m = *m;
    h.pixels().map(move |p| m.apply(p.map(|v| pq_eotf(v as f64))))
}

/// Nearest-rank percentile: the value at rank `ceil(p/100 * n)` of the sorted data.
pub fn nearest_rank(sorted: &[f64], percentile: f64) -> f64 {
    let n = sorted.len();
    let rank = ((percentile / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

fn normalizer_scale(n: Normalization, m: &Mat3, h: &Image) -> Result<f64> {
    match n {
        Normalization::ReferenceWhite => Ok(1.0 / REFERENCE_WHITE),
        Normalization::ScenePercentile(p) => {
            if !(p > 0.0 && p <= 100.0) {
                return Err(Error::InvalidParameter(format!("percentile {p} outside (0, 100]")));
            }
            let mut maxes: Vec<f64> = linear_709(m, h)
                .map(|c| c[0].max(c[1]).max(c[2]).max(0.0))
                .collect();
            maxes.sort_by(f64::total_cmp);
            let norm = nearest_rank(&maxes, p);
            if norm > 0.0 {
                Ok(1.0 / norm)
            } else {
                log::warn!("linear normalizer is zero (black frame); output is black");
                Ok(0.0)
            }
        }
    }
}

fn exposure_scale(e: Exposure, m: &Mat3, h: &Image) -> Result<f64> {
    match e {
        Exposure::Fixed(s) => check_scale(s),
        Exposure::GeometricMean => {
            const DELTA: f64 = 1e-6;
            let n = h.pixel_count() as f64;
            let log_sum: f64 = linear_709(m, h)
                .map(|c| (DELTA + luma(BT709_LUMA, c.map(|v| v.max(0.0)))).ln())
                .sum();
            Ok(KEY_VALUE / (log_sum / n).exp())
        }
    }
}

pub fn tmo_clip(h: &Image) -> Result<Image> {
    Tmo::clip().apply(h)
}

pub fn tmo_linear(h: &Image) -> Result<Image> {
    Tmo::linear().apply(h)
}

pub fn tmo_reinhard(h: &Image) -> Result<Image> {
    Tmo::reinhard().apply(h)
}

pub fn tmo_hable(h: &Image) -> Result<Image> {
    Tmo::hable().apply(h)
}

pub fn tmo_mulaw_cgm(h: &Image, mu: f64) -> Result<Image> {
    Tmo::mulaw_cgm(mu)?.apply(h)
}

pub fn lut_apply(h: &Image, lut: &Lut3D) -> Result<Image> {
    lut.apply(h)
}

/// Samples a frame-independent operator on an `n^3` lattice.
pub fn bake_lut(tmo: &Tmo, n: usize) -> Result<Lut3D> {
    let map = tmo.pointwise()?;
    let mut lut = Lut3D::bake(n, |rgb| map.map(rgb))?;
    lut.set_title(format!("{} baked {n}", tmo.name()));
    Ok(lut)
}

/// Exposure of the bundled stand-in for the proprietary showcase LUT:
/// 100 cd/m² maps to `x = 1` on the filmic curve.
pub const STANDIN_EXPOSURE: f64 = 1.0 / REFERENCE_WHITE;

/// Size of the bundled stand-in LUT.
pub const STANDIN_SIZE: usize = 33;

/// Hable-baked 33³ LUT used for `y(.)` when no `.cube` file is supplied.
pub fn standin_lut() -> Lut3D {
    bake_lut(&Tmo::Hable(Exposure::Fixed(STANDIN_EXPOSURE)), STANDIN_SIZE)
        .expect("stand-in LUT parameters are valid")
}
