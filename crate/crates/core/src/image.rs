//! The frame type shared by every stage of the pipeline.
//!
//! Pixels are stored interleaved (`r, g, b, r, g, b, ...`) in row-major order
//! as normalized single-precision code values. HDRTV frames carry
//! `Bt2020 + Pq`, SDRTV frames `Bt709 + Gamma709`; scene-linear intermediates
//! use `Linear` and are the only frames allowed to leave `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gamut {
    Bt709,
    Bt2020,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transfer {
    Linear,
    Pq,
    Gamma709,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
    gamut: Gamut,
    transfer: Transfer,
}

impl Image {
    /// Builds a frame from interleaved RGB samples.
    ///
    /// Non-linear frames are clamped to `[0, 1]`; non-finite samples are
    /// rejected for every transfer.
    pub fn new(
        width: usize,
        height: usize,
        mut data: Vec<f32>,
        gamut: Gamut,
        transfer: Transfer,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::SizeMismatch(format!(
                "empty image {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::SizeMismatch(format!(
                "{}x{} image needs {} samples, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite sample at index {i}"
            )));
        }
        if transfer != Transfer::Linear {
            for v in &mut data {
                *v = v.clamp(0.0, 1.0);
            }
        }
        Ok(Self {
            width,
            height,
            data,
            gamut,
            transfer,
        })
    }

    /// Builds a frame by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        gamut: Gamut,
        transfer: Transfer,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data, gamut, transfer)
    }

    pub fn filled(
        width: usize,
        height: usize,
        rgb: [f32; 3],
        gamut: Gamut,
        transfer: Transfer,
    ) -> Result<Self> {
        Self::from_fn(width, height, gamut, transfer, |_, _| rgb)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn gamut(&self) -> Gamut {
        self.gamut
    }

    pub fn transfer(&self) -> Transfer {
        self.transfer
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn has_tags(&self, gamut: Gamut, transfer: Transfer) -> bool {
        self.gamut == gamut && self.transfer == transfer
    }

    pub fn require_tags(&self, gamut: Gamut, transfer: Transfer) -> Result<()> {
        if self.has_tags(gamut, transfer) {
            Ok(())
        } else {
            Err(Error::WrongTags {
                expected_gamut: gamut,
                expected_transfer: transfer,
                gamut: self.gamut,
                transfer: self.transfer,
            })
        }
    }

    pub fn require_same_size(&self, other: &Image) -> Result<()> {
        if self.width == other.width && self.height == other.height {
            Ok(())
        } else {
            Err(Error::SizeMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    /// Same pixels, different tags. No conversion is performed.
    pub fn retag(mut self, gamut: Gamut, transfer: Transfer) -> Result<Self> {
        if transfer != Transfer::Linear {
            for v in &mut self.data {
                *v = v.clamp(0.0, 1.0);
            }
        }
        self.gamut = gamut;
        self.transfer = transfer;
        Ok(self)
    }

    /// Per-pixel map in double precision, parallel over rows.
    pub fn map_pixels(
        &self,
        gamut: Gamut,
        transfer: Transfer,
        f: impl Fn([f64; 3]) -> [f64; 3] + Sync,
    ) -> Result<Image> {
        use rayon::prelude::*;
        let mut out = vec![0f32; self.data.len()];
        out.par_chunks_mut(self.width * 3)
            .zip(self.data.par_chunks(self.width * 3))
            .for_each(|(dst, src)| {
                for (d, s) in dst.chunks_exact_mut(3).zip(src.chunks_exact(3)) {
                    let v = f([s[0] as f64, s[1] as f64, s[2] as f64]);
                    d[0] = v[0] as f32;
                    d[1] = v[1] as f32;
                    d[2] = v[2] as f32;
                }
            });
        Image::new(self.width, self.height, out, gamut, transfer)
    }

    /// Copies the `w x h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::OutOfBounds(format!(
                "crop window ({x0},{y0}) {w}x{h} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Ok(Image {
            width: w,
            height: h,
            data,
            gamut: self.gamut,
            transfer: self.transfer,
        })
    }

    /// Planar copy (`rrr..ggg..bbb..`) in double precision.
    pub fn to_planar(&self) -> Vec<f64> {
        let n = self.pixel_count();
        let mut out = vec![0.0; n * 3];
        for (i, p) in self.data.chunks_exact(3).enumerate() {
            out[i] = p[0] as f64;
            out[n + i] = p[1] as f64;
            out[2 * n + i] = p[2] as f64;
        }
        out
    }

    /// Inverse of [`Image::to_planar`].
    pub fn from_planar(
        width: usize,
        height: usize,
        planar: &[f64],
        gamut: Gamut,
        transfer: Transfer,
    ) -> Result<Image> {
        let n = width * height;
        if planar.len() != n * 3 {
            return Err(Error::SizeMismatch(format!(
                "planar buffer of {} for {width}x{height}",
                planar.len()
            )));
        }
        let mut data = Vec::with_capacity(n * 3);
        for i in 0..n {
            data.push(planar[i] as f32);
            data.push(planar[n + i] as f32);
            data.push(planar[2 * n + i] as f32);
        }
        Image::new(width, height, data, gamut, transfer)
    }
}
