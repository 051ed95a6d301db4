use crate::error::{Error, Result};
use crate::image::{Gamut, Image, Transfer};

/// Dense NCHW tensor in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::SizeMismatch(format!(
                "tensor {:?} needs {} values, got {}",
                shape,
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: [usize; 4], v: f64) -> Self {
        Self {
            shape,
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Values of batch item `n`, `C*H*W` long.
    pub fn item(&self, n: usize) -> &[f64] {
        let len = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.shape[1] * self.shape[2] * self.shape[3];
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, cc, h, w] = self.shape;
        self.data[((n * cc + c) * h + y) * w + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn require_shape(&self, shape: [usize; 4]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::SizeMismatch(format!(
                "expected tensor {:?}, got {:?}",
                shape, self.shape
            )));
        }
        Ok(())
    }

    /// Single-item tensor `(1, 3, H, W)` from an image's code values.
    pub fn from_image(img: &Image) -> Self {
        Self {
            shape: [1, 3, img.height(), img.width()],
            data: img.to_planar(),
        }
    }

    /// Clamps item `n` to `[0, 1]` and wraps it as an image.
    pub fn to_image(&self, n: usize, gamut: Gamut, transfer: Transfer) -> Result<Image> {
        if self.shape[1] != 3 {
            return Err(Error::SizeMismatch(format!(
                "image export needs 3 channels, got {}",
                self.shape[1]
            )));
        }
        let planar: Vec<f64> = self.item(n).iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Image::from_planar(self.shape[3], self.shape[2], &planar, gamut, transfer)
    }

    /// Concatenates tensors with equal batch and spatial size along channels.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidParameter("nothing to concatenate".into()))?;
        let [n, _, h, w] = first.shape;
        for p in parts {
            if p.shape[0] != n || p.shape[2] != h || p.shape[3] != w {
                return Err(Error::SizeMismatch(format!(
                    "cannot concatenate {:?} with {:?}",
                    first.shape, p.shape
                )));
            }
        }
        let c: usize = parts.iter().map(|p| p.shape[1]).sum();
        let mut data = Vec::with_capacity(n * c * h * w);
        for i in 0..n {
            for p in parts {
                data.extend_from_slice(p.item(i));
            }
        }
        Ok(Self { shape: [n, c, h, w], data })
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(items: &[&Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidParameter("nothing to stack".into()))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(Error::SizeMismatch(format!(
                    "cannot stack {:?} with {:?}",
                    first.shape, t.shape
                )));
            }
            data.extend_from_slice(&t.data);
            n += t.shape[0];
        }
        Ok(Self { shape: [n, c, h, w], data })
    }

    /// Batch item `n` as its own tensor.
    pub fn slice_batch(&self, n: usize) -> Self {
        Self {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.item(n).to_vec(),
        }
    }

    /// Spatial window `[y0, y0+h) x [x0, x0+w)` of every item and channel.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        let [n, c, hh, ww] = self.shape;
        if y0 + h > hh || x0 + w > ww || h == 0 || w == 0 {
            return Err(Error::OutOfBounds(format!(
                "crop ({y0},{x0}) {h}x{w} outside {hh}x{ww}"
            )));
        }
        let mut data = Vec::with_capacity(n * c * h * w);
        for plane in self.data.chunks_exact(hh * ww) {
            for y in y0..y0 + h {
                data.extend_from_slice(&plane[y * ww + x0..y * ww + x0 + w]);
            }
        }
        Ok(Self { shape: [n, c, h, w], data })
    }

    /// Adds `grad` (shaped like a crop) back into the matching window.
    pub fn add_window(&mut self, y0: usize, x0: usize, grad: &Tensor) {
        let [_, _, hh, ww] = self.shape;
        let [_, _, h, w] = grad.shape;
        for (dst, src) in self.data.chunks_exact_mut(hh * ww).zip(grad.data.chunks_exact(h * w)) {
            for y in 0..h {
                let d = &mut dst[(y0 + y) * ww + x0..(y0 + y) * ww + x0 + w];
                for (a, b) in d.iter_mut().zip(&src[y * w..(y + 1) * w]) {
                    *a += b;
                }
            }
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}
