//! Transfer functions, gamut matrices and the colour spaces used by losses
//! and metrics.
//!
//! Linear light is normalized so that `1.0` is the PQ peak (10000 cd/m²).
//! One BT.2020 -> BT.709 matrix, derived from the primaries below, is shared
//! by gamut mapping and every baseline operator.

#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};
use crate::image::{Gamut, Image, Transfer};

pub mod pq {
    pub const M1: f64 = 2610.0 / 16384.0;
    pub const M2: f64 = 2523.0 / 32.0;
    pub const C1: f64 = 3424.0 / 4096.0;
    pub const C2: f64 = 2413.0 / 128.0;
    pub const C3: f64 = 2392.0 / 128.0;
    /// Luminance of normalized linear 1.0, in nits.
    pub const PEAK_NITS: f64 = 10000.0;
}

/// PQ code value -> normalized linear light.
pub fn pq_eotf(code: f64) -> f64 {
    let p = code.clamp(0.0, 1.0).powf(1.0 / pq::M2);
    ((p - pq::C1).max(0.0) / (pq::C2 - pq::C3 * p)).powf(1.0 / pq::M1)
}

/// Normalized linear light -> PQ code value.
pub fn pq_oetf(linear: f64) -> f64 {
    let y = linear.clamp(0.0, 1.0).powf(pq::M1);
    ((pq::C1 + pq::C2 * y) / (1.0 + pq::C3 * y)).powf(pq::M2)
}

/// BT.709 OETF constants in their exact (continuous) form; the familiar
/// 1.099 / 0.018 are these rounded.
pub mod rec709 {
    pub const ALPHA: f64 = 1.099_296_826_809_442;
    pub const BETA: f64 = 0.018_053_968_510_807;
    pub const SLOPE: f64 = 4.5;
    pub const POWER: f64 = 0.45;
}

pub fn gamma709_oetf(linear: f64) -> f64 {
    let l = linear.clamp(0.0, 1.0);
    if l < rec709::BETA {
        rec709::SLOPE * l
    } else {
        rec709::ALPHA * l.powf(rec709::POWER) - (rec709::ALPHA - 1.0)
    }
}

pub fn gamma709_eotf(code: f64) -> f64 {
    let v = code.clamp(0.0, 1.0);
    if v < rec709::SLOPE * rec709::BETA {
        v / rec709::SLOPE
    } else {
        ((v + rec709::ALPHA - 1.0) / rec709::ALPHA).powf(1.0 / rec709::POWER)
    }
}

/// The `ln(1 + mu x) / ln(1 + mu)` range compressor and its inverse.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MuLaw {
    mu: f64,
}

impl MuLaw {
    pub const DEFAULT_MU: f64 = 5000.0;

    pub fn new(mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidParameter(format!("mu must be > 0, got {mu}")));
        }
        Ok(Self { mu })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn compress(&self, x: f64) -> f64 {
        (self.mu * x).ln_1p() / self.mu.ln_1p()
    }

    pub fn expand(&self, y: f64) -> f64 {
        (y * self.mu.ln_1p()).exp_m1() / self.mu
    }
}

impl Default for MuLaw {
    fn default() -> Self {
        Self {
            mu: Self::DEFAULT_MU,
        }
    }
}

pub fn mu_law(x: f64, mu: f64) -> Result<f64> {
    Ok(MuLaw::new(mu)?.compress(x))
}

pub fn mu_law_inv(y: f64, mu: f64) -> Result<f64> {
    Ok(MuLaw::new(mu)?.expand(y))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn mul(&self, other: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        Mat3(out)
    }

    pub fn inverse(&self) -> Mat3 {
        let m = &self.0;
        let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
        let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
        let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
        let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
        let inv_det = 1.0 / det;
        Mat3([
            [
                c00 * inv_det,
                (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det,
                (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det,
            ],
            [
                c01 * inv_det,
                (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det,
                (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det,
            ],
            [
                c02 * inv_det,
                (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det,
                (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det,
            ],
        ])
    }
}

const D65: [f64; 2] = [0.3127, 0.3290];
const BT709_PRIMARIES: [[f64; 2]; 3] = [[0.64, 0.33], [0.30, 0.60], [0.15, 0.06]];
const BT2020_PRIMARIES: [[f64; 2]; 3] = [[0.708, 0.292], [0.170, 0.797], [0.131, 0.046]];

fn xy_to_xyz(xy: [f64; 2]) -> [f64; 3] {
    [xy[0] / xy[1], 1.0, (1.0 - xy[0] - xy[1]) / xy[1]]
}

/// RGB -> XYZ for the given primaries with a D65 white of luminance 1.
fn rgb_to_xyz_matrix(primaries: &[[f64; 2]; 3]) -> Mat3 {
    let cols: Vec<[f64; 3]> = primaries.iter().map(|p| xy_to_xyz(*p)).collect();
    let p = Mat3([
        [cols[0][0], cols[1][0], cols[2][0]],
        [cols[0][1], cols[1][1], cols[2][1]],
        [cols[0][2], cols[1][2], cols[2][2]],
    ]);
    let s = p.inverse().apply(xy_to_xyz(D65));
    let mut m = p.0;
    for row in &mut m {
        for (j, v) in row.iter_mut().enumerate() {
            *v *= s[j];
        }
    }
    Mat3(m)
}

pub fn bt709_to_xyz() -> Mat3 {
    rgb_to_xyz_matrix(&BT709_PRIMARIES)
}

pub fn bt2020_to_xyz() -> Mat3 {
    rgb_to_xyz_matrix(&BT2020_PRIMARIES)
}

/// Linear BT.2020 RGB -> linear BT.709 RGB.
pub fn bt2020_to_bt709() -> Mat3 {
    bt709_to_xyz().inverse().mul(&bt2020_to_xyz())
}

pub fn bt709_to_bt2020() -> Mat3 {
    bt2020_to_xyz().inverse().mul(&bt709_to_xyz())
}

pub const BT2020_LUMA: [f64; 3] = [0.2627, 0.6780, 0.0593];
pub const BT709_LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];

pub fn luma(weights: [f64; 3], rgb: [f64; 3]) -> f64 {
    weights[0] * rgb[0] + weights[1] * rgb[1] + weights[2] * rgb[2]
}

/// Per-pixel gamut mapping of a PQ-coded BT.2020 value into BT.709 gamma codes.
pub fn cgm_pixel(m: &Mat3, pq_rgb: [f64; 3]) -> [f64; 3] {
    let lin = m.apply(pq_rgb.map(pq_eotf));
    lin.map(|v| gamma709_oetf(v.clamp(0.0, 1.0)))
}

/// Global colour gamut mapping: PQ EOTF, BT.2020 -> BT.709 matrix, hard
/// clip, BT.709 OETF.
pub fn cgm(h: &Image) -> Result<Image> {
    h.require_tags(Gamut::Bt2020, Transfer::Pq)?;
    let m = bt2020_to_bt709();
    h.map_pixels(Gamut::Bt709, Transfer::Gamma709, |p| cgm_pixel(&m, p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lab {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Converts one BT.709 gamma-coded pixel to CIE Lab (D65).
pub fn bt709_code_to_lab(to_xyz: &Mat3, rgb: [f64; 3]) -> Lab {
    let xyz = to_xyz.apply(rgb.map(gamma709_eotf));
    let white = to_xyz.apply([1.0; 3]);
    let fx = lab_f(xyz[0] / white[0]);
    let fy = lab_f(xyz[1] / white[1]);
    let fz = lab_f(xyz[2] / white[2]);
    Lab {
        l: 116.0 * fy - 16.0,
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

/// Per-pixel Lab values of a BT.709 frame, row-major.
pub fn rgb_to_lab(img: &Image) -> Result<Vec<Lab>> {
    img.require_tags(Gamut::Bt709, Transfer::Gamma709)?;
    let m = bt709_to_xyz();
    Ok(img
        .pixels()
        .map(|p| bt709_code_to_lab(&m, p.map(|v| v as f64)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ictcp {
    pub i: f64,
    pub ct: f64,
    pub cp: f64,
}

const LMS_FROM_BT2020: Mat3 = Mat3([
    [1688.0 / 4096.0, 2146.0 / 4096.0, 262.0 / 4096.0],
    [683.0 / 4096.0, 2951.0 / 4096.0, 462.0 / 4096.0],
    [99.0 / 4096.0, 309.0 / 4096.0, 3688.0 / 4096.0],
]);

const ICTCP_FROM_LMS: Mat3 = Mat3([
    [2048.0 / 4096.0, 2048.0 / 4096.0, 0.0],
    [6610.0 / 4096.0, -13613.0 / 4096.0, 7003.0 / 4096.0],
    [17933.0 / 4096.0, -17390.0 / 4096.0, -543.0 / 4096.0],
]);

pub fn pq_bt2020_to_ictcp(pq_rgb: [f64; 3]) -> Ictcp {
    let lms = LMS_FROM_BT2020.apply(pq_rgb.map(pq_eotf));
    let v = ICTCP_FROM_LMS.apply(lms.map(pq_oetf));
    Ictcp {
        i: v[0],
        ct: v[1],
        cp: v[2],
    }
}

pub fn rgb_to_ictcp(img: &Image) -> Result<Vec<Ictcp>> {
    img.require_tags(Gamut::Bt2020, Transfer::Pq)?;
    Ok(img
        .pixels()
        .map(|p| pq_bt2020_to_ictcp(p.map(|v| v as f64)))
        .collect())
}
