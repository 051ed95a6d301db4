//! Global integer-translation alignment by exhaustive MSE search.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Minimum overlap, per axis, at the largest search offset.
pub const MIN_OVERLAP: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Offset2D {
    pub dx: i32,
    pub dy: i32,
}

impl Offset2D {
    pub fn new(dx: i32, dy: i32) -> Self {
        Self { dx, dy }
    }

    fn l1(self) -> i32 {
        self.dx.abs() + self.dy.abs()
    }

    /// Tie-break order: smaller `|dx|+|dy|`, then smaller `dy`, then smaller `dx`.
    fn tie_order(self, other: Self) -> Ordering {
        self.l1()
            .cmp(&other.l1())
            .then(self.dy.cmp(&other.dy))
            .then(self.dx.cmp(&other.dx))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub offset: Offset2D,
    pub residual: f64,
}

impl std::fmt::Display for Alignment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{}", self.offset.dx, self.offset.dy, self.residual)
    }
}

/// Overlap window `[x0, x1) x [y0, y1)` in `b` coordinates when `a` is moved by `o`.
fn overlap(w: usize, h: usize, o: Offset2D) -> (usize, usize, usize, usize) {
    let (w, h) = (w as i64, h as i64);
    let (dx, dy) = (o.dx as i64, o.dy as i64);
    let x0 = dx.max(0);
    let x1 = (w + dx).min(w);
    let y0 = dy.max(0);
    let y1 = (h + dy).min(h);
    (x0 as usize, x1 as usize, y0 as usize, y1 as usize)
}

/// MSE between `a` moved by `offset` (so `a'(x, y) = a(x - dx, y - dy)`) and
/// `b`, over their overlap.
pub fn shifted_mse(a: &Image, b: &Image, offset: Offset2D) -> f64 {
    let w = a.width();
    let (x0, x1, y0, y1) = overlap(w, a.height(), offset);
    let (ad, bd) = (a.data(), b.data());
    let mut sum = 0.0f64;
    for y in y0..y1 {
        let ya = (y as i64 - offset.dy as i64) as usize;
        let xa0 = (x0 as i64 - offset.dx as i64) as usize;
        let arow = &ad[(ya * w + xa0) * 3..(ya * w + xa0 + (x1 - x0)) * 3];
        let brow = &bd[(y * w + x0) * 3..(y * w + x1) * 3];
        for (p, q) in arow.iter().zip(brow) {
            let d = *p as f64 - *q as f64;
            sum += d * d;
        }
    }
    sum / ((x1 - x0) * (y1 - y0) * 3) as f64
}

/// Finds the integer offset within `±radius` that best maps `a` onto `b`.
pub fn align_translation(a: &Image, b: &Image, radius: u32) -> Result<Alignment> {
    a.require_same_size(b)?;
    a.require_tags(b.gamut(), b.transfer())?;
    if radius < 1 {
        return Err(Error::InvalidParameter("alignment radius must be >= 1".into()));
    }
    let r = radius as usize;
    if a.width() < MIN_OVERLAP + r || a.height() < MIN_OVERLAP + r {
        return Err(Error::SizeMismatch(format!(
            "overlap below {MIN_OVERLAP}x{MIN_OVERLAP} at radius {radius} for {}x{} images",
            a.width(),
            a.height()
        )));
    }
    let ri = radius as i32;
    let offsets: Vec<Offset2D> = (-ri..=ri)
        .flat_map(|dy| (-ri..=ri).map(move |dx| Offset2D::new(dx, dy)))
        .collect();
    let best = offsets
        .par_iter()
        .map(|&o| Alignment {
            offset: o,
            residual: shifted_mse(a, b, o),
        })
        .min_by(|p, q| {
            p.residual
                .total_cmp(&q.residual)
                .then(p.offset.tie_order(q.offset))
        })
        .expect("non-empty search window");
    Ok(best)
}

/// Crops both images to the region where they overlap under `offset`,
/// so that the returned pair is pixel-aligned.
pub fn apply_offset(a: &Image, b: &Image, offset: Offset2D) -> Result<(Image, Image)> {
    a.require_same_size(b)?;
    let (x0, x1, y0, y1) = overlap(a.width(), a.height(), offset);
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::OutOfBounds("offset leaves no overlap".into()));
    }
    let ax = (x0 as i64 - offset.dx as i64) as usize;
    let ay = (y0 as i64 - offset.dy as i64) as usize;
    let ac = a.crop(ax, ay, x1 - x0, y1 - y0)?;
    let bc = b.crop(x0, y0, x1 - x0, y1 - y0)?;
    Ok((ac, bc))
}
