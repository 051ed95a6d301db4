//! Seeded procedural HDR scenes used as a stand-in training and test corpus.
//!
//! Each scene is built in absolute luminance (cd/m²) in linear BT.2020:
//! a tinted sky-like gradient, soft coloured blobs, a high-frequency texture,
//! a shadowed rectangle and a few small specular highlights between 1000 and
//! 4000 cd/m². The result is PQ encoded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::colorimetry::{bt709_to_bt2020, pq_oetf};
use crate::error::{Error, Result};
use crate::image::{Gamut, Image, Transfer};

/// Peak luminance of the PQ signal range in cd/m².
pub const PQ_PEAK_NITS: f64 = crate::colorimetry::pq::PEAK_NITS;

struct Blob {
    cx: f64,
    cy: f64,
    radius: f64,
    color: [f64; 3],
}

/// A random colour inside BT.709, expressed in linear BT.2020, with BT.709
/// luminance drawn from `nits`.
fn tint(rng: &mut ChaCha8Rng, nits: std::ops::Range<f64>, saturation: f64) -> [f64; 3] {
    let m = bt709_to_bt2020();
    let nits = rng.random_range(nits);
    let c709: [f64; 3] = std::array::from_fn(|_| 1.0 - saturation * rng.random::<f64>());
    let norm = 0.2126 * c709[0] + 0.7152 * c709[1] + 0.0722 * c709[2];
    m.apply(c709.map(|v| v / norm * nits))
}

/// One procedural scene, PQ coded BT.2020.
pub fn synthetic_hdr(seed: u64, width: usize, height: usize) -> Result<Image> {
    if width < 2 || height < 2 {
        return Err(Error::InvalidParameter(format!(
            "synthetic scenes need at least 2x2 pixels, got {width}x{height}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);

    let top = tint(&mut rng, 80.0..400.0, 0.4);
    let bottom = tint(&mut rng, 5.0..60.0, 0.6);
    let angle = rng.random_range(-0.5..0.5f64);

    let blobs: Vec<Blob> = (0..rng.random_range(2..5))
        .map(|_| Blob {
            cx: rng.random_range(0.0..w),
            cy: rng.random_range(0.0..h),
            radius: rng.random_range(0.1..0.35) * w.min(h),
            color: tint(&mut rng, 20.0..600.0, 0.9),
        })
        .collect();

    let freq = [rng.random_range(0.2..0.9), rng.random_range(0.2..0.9)];
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let texture_amp = rng.random_range(0.05..0.3);

    let sx0 = rng.random_range(0.0..0.6) * w;
    let sy0 = rng.random_range(0.0..0.6) * h;
    let (sw, sh) = (rng.random_range(0.2..0.4) * w, rng.random_range(0.2..0.4) * h);
    let shadow = rng.random_range(0.002..0.02);

    let speculars: Vec<Blob> = (0..rng.random_range(1..4))
        .map(|_| Blob {
            cx: rng.random_range(0.0..w),
            cy: rng.random_range(0.0..h),
            radius: rng.random_range(0.02..0.06) * w.min(h) + 0.75,
            color: tint(&mut rng, 1000.0..4000.0, 0.15),
        })
        .collect();

    Image::from_fn(width, height, Gamut::Bt2020, Transfer::Pq, |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let t = ((fy / h) + angle * (fx / w - 0.5)).clamp(0.0, 1.0);
        let mut c: [f64; 3] = std::array::from_fn(|k| top[k] * (1.0 - t) + bottom[k] * t);
        for b in &blobs {
            let d2 = ((fx - b.cx).powi(2) + (fy - b.cy).powi(2)) / (b.radius * b.radius);
            let g = (-0.5 * d2).exp();
            for k in 0..3 {
                c[k] = c[k] * (1.0 - 0.7 * g) + b.color[k] * g;
            }
        }
        let tex = 1.0 + texture_amp * (freq[0] * fx + phase).sin() * (freq[1] * fy).cos();
        c = c.map(|v| v * tex);
        if fx >= sx0 && fx < sx0 + sw && fy >= sy0 && fy < sy0 + sh {
            c = c.map(|v| v * shadow);
        }
        for s in &speculars {
            let d2 = ((fx - s.cx).powi(2) + (fy - s.cy).powi(2)) / (s.radius * s.radius);
            if d2 < 1.0 {
                let g = 1.0 - d2;
                for k in 0..3 {
                    c[k] = c[k] * (1.0 - g) + s.color[k] * g;
                }
            }
        }
        c.map(|v| pq_oetf((v / PQ_PEAK_NITS).clamp(0.0, 1.0)) as f32)
    })
}

/// `count` scenes with seeds derived from `seed`.
pub fn synthetic_corpus(seed: u64, count: usize, width: usize, height: usize) -> Result<Vec<Image>> {
    (0..count as u64)
        .map(|i| synthetic_hdr(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i), width, height))
        .collect()
}
