//! 3D lookup tables: `.cube` text I/O and trilinear application.
//!
//! ```text
//! TITLE "optional"
//! DOMAIN_MIN 0.0 0.0 0.0
//! DOMAIN_MAX 1.0 1.0 1.0
//! LUT_3D_SIZE 33
//! 0.000000 0.000000 0.000000
//! ...
//! ```
//!
//! Samples are addressed `r + N*g + N*N*b` (red fastest), the ordering used
//! by the file format.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Gamut, Image, Transfer};

#[derive(Debug, Clone, PartialEq)]
pub struct Lut3D {
    size: usize,
    samples: Vec<[f64; 3]>,
    domain_min: [f64; 3],
    domain_max: [f64; 3],
    title: Option<String>,
}

impl Lut3D {
    pub fn new(size: usize, samples: Vec<[f64; 3]>) -> Result<Self> {
        Self::with_domain(size, samples, [0.0; 3], [1.0; 3])
    }

    pub fn with_domain(
        size: usize,
        samples: Vec<[f64; 3]>,
        domain_min: [f64; 3],
        domain_max: [f64; 3],
    ) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidParameter(format!("LUT size {size} < 2")));
        }
        if samples.len() != size * size * size {
            return Err(Error::SizeMismatch(format!(
                "LUT of size {size} needs {} samples, got {}",
                size * size * size,
                samples.len()
            )));
        }
        if let Some(i) = samples
            .iter()
            .position(|s| s.iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(Error::InvalidParameter(format!(
                "LUT sample {i} outside [0, 1]: {:?}",
                samples[i]
            )));
        }
        if (0..3).any(|c| domain_max[c] <= domain_min[c]) {
            return Err(Error::InvalidParameter("empty LUT domain".into()));
        }
        Ok(Self {
            size,
            samples,
            domain_min,
            domain_max,
            title: None,
        })
    }

    pub fn identity(size: usize) -> Result<Self> {
        Self::bake(size, |rgb| rgb)
    }

    /// Samples `f` at every lattice point. Coordinates are rounded through
    /// `f32` first so lattice samples agree exactly with the same operator
    /// applied to stored images.
    pub fn bake(size: usize, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidParameter(format!("LUT size {size} < 2")));
        }
        let mut samples = Vec::with_capacity(size * size * size);
        for b in 0..size {
            for g in 0..size {
                for r in 0..size {
                    let coord = [r, g, b].map(|i| lattice_coord(i, size));
                    samples.push(f(coord).map(|v| v.clamp(0.0, 1.0)));
                }
            }
        }
        Self::new(size, samples)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn title(&self) -> Option<&str> {
        self.title.as_deref()
    }

    pub fn set_title(&mut self, title: impl Into<String>) {
        self.title = Some(title.into());
    }

    pub fn domain(&self) -> ([f64; 3], [f64; 3]) {
        (self.domain_min, self.domain_max)
    }

    pub fn sample(&self, r: usize, g: usize, b: usize) -> [f64; 3] {
        self.samples[r + self.size * (g + self.size * b)]
    }

    pub fn samples(&self) -> &[[f64; 3]] {
        &self.samples
    }

    /// Trilinear interpolation at `rgb` (clamped to the domain).
    pub fn eval(&self, rgb: [f64; 3]) -> [f64; 3] {
        let n = self.size;
        let last = (n - 1) as f64;
        // Positions within f32 rounding of a lattice index snap onto it.
        let snap = 1e-7 * last;
        let mut idx = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for c in 0..3 {
            let t = ((rgb[c] - self.domain_min[c]) / (self.domain_max[c] - self.domain_min[c]))
                .clamp(0.0, 1.0);
            let mut p = t * last;
            let nearest = p.round();
            if (p - nearest).abs() <= snap {
                p = nearest;
            }
            let i = (p.floor() as usize).min(n - 2);
            idx[c] = i;
            frac[c] = p - i as f64;
        }
        let [r0, g0, b0] = idx;
        let [fr, fg, fb] = frac;
        let mut out = [0.0; 3];
        for (corner, weight) in [
            ((0, 0, 0), (1.0 - fr) * (1.0 - fg) * (1.0 - fb)),
            ((1, 0, 0), fr * (1.0 - fg) * (1.0 - fb)),
            ((0, 1, 0), (1.0 - fr) * fg * (1.0 - fb)),
            ((1, 1, 0), fr * fg * (1.0 - fb)),
            ((0, 0, 1), (1.0 - fr) * (1.0 - fg) * fb),
            ((1, 0, 1), fr * (1.0 - fg) * fb),
            ((0, 1, 1), (1.0 - fr) * fg * fb),
            ((1, 1, 1), fr * fg * fb),
        ] {
            if weight == 0.0 {
                continue;
            }
            let s = self.sample(r0 + corner.0, g0 + corner.1, b0 + corner.2);
            for c in 0..3 {
                out[c] += weight * s[c];
            }
        }
        out
    }

    /// The `y(.)` operator: trilinear lookup on PQ code values.
    pub fn apply(&self, h: &Image) -> Result<Image> {
        h.require_tags(Gamut::Bt2020, Transfer::Pq)?;
        if self.domain_min != [0.0; 3] || self.domain_max != [1.0; 3] {
            return Err(Error::InvalidParameter(format!(
                "LUT domain {:?}..{:?} does not match PQ code range [0, 1]",
                self.domain_min, self.domain_max
            )));
        }
        h.map_pixels(Gamut::Bt709, Transfer::Gamma709, |p| self.eval(p))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut size: Option<usize> = None;
        let mut title = None;
        let mut domain_min = [0.0; 3];
        let mut domain_max = [1.0; 3];
        let mut samples = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { line: line_no, msg };
            let mut tokens = line.split_whitespace();
            let head = tokens.next().unwrap_or_default();
            match head {
                "TITLE" => {
                    title = Some(line["TITLE".len()..].trim().trim_matches('"').to_string());
                }
                "DOMAIN_MIN" | "DOMAIN_MAX" => {
                    let v = parse_triplet(tokens).map_err(parse_err)?;
                    if head == "DOMAIN_MIN" {
                        domain_min = v;
                    } else {
                        domain_max = v;
                    }
                }
                "LUT_3D_SIZE" => {
                    let n = tokens
                        .next()
                        .and_then(|t| t.parse::<usize>().ok())
                        .ok_or_else(|| parse_err("bad LUT_3D_SIZE".into()))?;
                    if n < 2 {
                        return Err(parse_err(format!("LUT_3D_SIZE {n} < 2")));
                    }
                    size = Some(n);
                }
                "LUT_1D_SIZE" => return Err(parse_err("1D LUTs are not supported".into())),
                _ if head.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '.') => {
                    if size.is_none() {
                        return Err(parse_err("sample row before LUT_3D_SIZE".into()));
                    }
                    let v = parse_triplet(line.split_whitespace()).map_err(parse_err)?;
                    samples.push(v);
                }
                other => return Err(parse_err(format!("unknown keyword {other}"))),
            }
        }
        let size = size.ok_or(Error::Parse {
            line: 0,
            msg: "missing LUT_3D_SIZE".into(),
        })?;
        if samples.len() != size * size * size {
            return Err(Error::Parse {
                line: 0,
                msg: format!(
                    "expected {} sample rows for size {size}, found {}",
                    size * size * size,
                    samples.len()
                ),
            });
        }
        let mut lut = Self::with_domain(size, samples, domain_min, domain_max)?;
        lut.title = title;
        Ok(lut)
    }

    pub fn to_cube_string(&self) -> String {
        let mut s = String::new();
        if let Some(t) = &self.title {
            let _ = writeln!(s, "TITLE \"{t}\"");
        }
        let dm = self.domain_min;
        let dx = self.domain_max;
        let _ = writeln!(s, "DOMAIN_MIN {:.6} {:.6} {:.6}", dm[0], dm[1], dm[2]);
        let _ = writeln!(s, "DOMAIN_MAX {:.6} {:.6} {:.6}", dx[0], dx[1], dx[2]);
        let _ = writeln!(s, "LUT_3D_SIZE {}", self.size);
        for v in &self.samples {
            let _ = writeln!(s, "{:.6} {:.6} {:.6}", v[0], v[1], v[2]);
        }
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_cube_string()).map_err(|e| Error::io(path, e))
    }
}

/// Lattice coordinate `i / (n - 1)` as it would be stored in an image.
pub fn lattice_coord(i: usize, n: usize) -> f64 {
    (i as f64 / (n - 1) as f64) as f32 as f64
}

fn parse_triplet<'a>(mut tokens: impl Iterator<Item = &'a str>) -> std::result::Result<[f64; 3], String> {
    let mut v = [0.0; 3];
    for slot in &mut v {
        let t = tokens.next().ok_or("expected three values")?;
        *slot = t.parse::<f64>().map_err(|e| format!("{t:?}: {e}"))?;
    }
    if tokens.next().is_some() {
        return Err("more than three values on a row".into());
    }
    Ok(v)
}

pub fn make_identity_lut(size: usize) -> Result<Lut3D> {
    Lut3D::identity(size)
}
