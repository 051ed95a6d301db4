//! Full-reference quality metrics and the TMO scatter analysis.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{Beta, Continuous, ContinuousCDF, Normal};

use crate::colorimetry::{self, Lab, BT2020_LUMA, BT709_LUMA};
use crate::error::{Error, Result};
use crate::image::{Gamut, Image, Transfer};
use crate::tmo::Tmo;

/// Reported for identical inputs so CSVs stay finite.
pub const PSNR_CAP: f64 = 99.0;
pub const MPSNR_STOPS: [i32; 5] = [-2, -1, 0, 1, 2];
pub const MPSNR_GAMMA: f64 = 2.2;
/// Linear HDR value mapped to 1.0 before the exposure scaling, in nits.
pub const MPSNR_WHITE_NITS: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
/// Smallest side accepted by the five-scale metrics.
pub const MS_MIN_SIZE: usize = SSIM_WINDOW << 4;

fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

fn same_layout(a: &Image, b: &Image) -> Result<()> {
    a.require_same_size(b)?;
    b.require_tags(a.gamut(), a.transfer())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    same_layout(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// PSNR over all channel values, peak 1.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

fn exposure_code(pq: f32, stop: i32) -> f64 {
    let linear = colorimetry::pq_eotf(pq as f64) * colorimetry::pq::PEAK_NITS / MPSNR_WHITE_NITS;
    (linear * 2f64.powi(stop)).powf(1.0 / MPSNR_GAMMA).clamp(0.0, 1.0)
}

/// Multi-exposure PSNR of two PQ BT.2020 frames.
pub fn mpsnr(a: &Image, b: &Image, stops: &[i32]) -> Result<f64> {
    if stops.is_empty() {
        return Err(Error::InvalidParameter("mPSNR needs at least one stop".into()));
    }
    a.require_tags(Gamut::Bt2020, Transfer::Pq)?;
    same_layout(a, b)?;
    let n = a.data().len() as f64;
    let mean_mse = stops
        .iter()
        .map(|&stop| {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| {
                    let d = exposure_code(x, stop) - exposure_code(y, stop);
                    d * d
                })
                .sum::<f64>()
                / n
        })
        .sum::<f64>()
        / stops.len() as f64;
    Ok(psnr_from_mse(mean_mse))
}

/// Single-channel f64 plane, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::SizeMismatch(format!(
                "{} values for a {width}x{height} plane",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// 2×2 mean pooling; an odd trailing row or column is dropped.
    pub fn downsample(&self) -> Plane {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let s = self.at(2 * x, 2 * y)
                    + self.at(2 * x + 1, 2 * y)
                    + self.at(2 * x, 2 * y + 1)
                    + self.at(2 * x + 1, 2 * y + 1);
                data.push(s / 4.0);
            }
        }
        Plane { width: w, height: h, data }
    }

    fn zip_map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Plane { width: self.width, height: self.height, data }
    }
}

/// Luma of the encoded values with the weights of the frame's gamut.
pub fn luma_plane(img: &Image) -> Plane {
    let w = match img.gamut() {
        Gamut::Bt709 => BT709_LUMA,
        Gamut::Bt2020 => BT2020_LUMA,
    };
    let data = img
        .pixels()
        .map(|p| colorimetry::luma(w, p.map(|v| v as f64)))
        .collect();
    Plane { width: img.width(), height: img.height(), data }
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable filtering over the valid region only.
fn filter_valid(p: &Plane, taps: &[f64]) -> Plane {
    let k = taps.len();
    let (ow, oh) = (p.width + 1 - k, p.height + 1 - k);
    let mut rows = vec![0.0; ow * p.height];
    for y in 0..p.height {
        let src = &p.data[y * p.width..(y + 1) * p.width];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut data = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            data[y * ow + x] = taps.iter().enumerate().map(|(j, t)| t * rows[(y + j) * ow + x]).sum();
        }
    }
    Plane { width: ow, height: oh, data }
}

/// Windowed first and second moments of a plane pair.
struct Moments {
    mu_a: Plane,
    mu_b: Plane,
    var_a: Plane,
    var_b: Plane,
    cov: Plane,
}

fn moments(a: &Plane, b: &Plane, taps: &[f64]) -> Moments {
    let mu_a = filter_valid(a, taps);
    let mu_b = filter_valid(b, taps);
    let e_aa = filter_valid(&a.zip_map(a, |x, y| x * y), taps);
    let e_bb = filter_valid(&b.zip_map(b, |x, y| x * y), taps);
    let e_ab = filter_valid(&a.zip_map(b, |x, y| x * y), taps);
    Moments {
        var_a: e_aa.zip_map(&mu_a, |e, m| e - m * m),
        var_b: e_bb.zip_map(&mu_b, |e, m| e - m * m),
        cov: e_ab.zip_map(&mu_a.zip_map(&mu_b, |x, y| x * y), |e, m| e - m),
        mu_a,
        mu_b,
    }
}

/// Mean luminance term and mean contrast-structure term.
fn ssim_terms(a: &Plane, b: &Plane) -> (f64, f64) {
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let m = moments(a, b, &taps);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = m.mu_a.data.len() as f64;
    let (mut full, mut cs) = (0.0, 0.0);
    for i in 0..m.mu_a.data.len() {
        let (ma, mb) = (m.mu_a.data[i], m.mu_b.data[i]);
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        let c = (2.0 * m.cov.data[i] + c2) / (m.var_a.data[i] + m.var_b.data[i] + c2);
        full += l * c;
        cs += c;
    }
    (full / n, cs / n)
}

fn require_min_size(a: &Image, min: usize, what: &str) -> Result<()> {
    if a.width() < min || a.height() < min {
        return Err(Error::InvalidParameter(format!(
            "{what} needs at least {min}x{min} pixels, got {}x{}",
            a.width(),
            a.height()
        )));
    }
    Ok(())
}

/// Gaussian-window SSIM on luma, clamped to [0, 1].
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_layout(a, b)?;
    require_min_size(a, SSIM_WINDOW, "SSIM")?;
    Ok(ssim_terms(&luma_plane(a), &luma_plane(b)).0.clamp(0.0, 1.0))
}

/// Five-scale SSIM. Negative per-scale terms are clamped to zero before
/// the weighted product.
pub fn ms_ssim(a: &Image, b: &Image) -> Result<f64> {
    same_layout(a, b)?;
    require_min_size(a, MS_MIN_SIZE, "MS-SSIM")?;
    let (mut pa, mut pb) = (luma_plane(a), luma_plane(b));
    let mut q = 1.0;
    for (scale, w) in MS_SSIM_WEIGHTS.iter().enumerate() {
        let (full, cs) = ssim_terms(&pa, &pb);
        let term = if scale + 1 == MS_SSIM_WEIGHTS.len() { full } else { cs };
        q *= term.max(0.0).powf(*w);
        pa = pa.downsample();
        pb = pb.downsample();
    }
    Ok(q.clamp(0.0, 1.0))
}

/// CIEDE2000 difference between two Lab colors, kL = kC = kH = 1.
pub fn ciede2000_lab(x: Lab, y: Lab) -> f64 {
    let pow7 = |v: f64| v.powi(7);
    let c1 = x.a.hypot(x.b);
    let c2 = y.a.hypot(y.b);
    let c_bar = (c1 + c2) / 2.0;
    let g = 0.5 * (1.0 - (pow7(c_bar) / (pow7(c_bar) + pow7(25.0))).sqrt());
    let a1 = (1.0 + g) * x.a;
    let a2 = (1.0 + g) * y.a;
    let c1p = a1.hypot(x.b);
    let c2p = a2.hypot(y.b);
    let hue = |b: f64, a: f64| {
        if a == 0.0 && b == 0.0 {
            0.0
        } else {
            b.atan2(a).to_degrees().rem_euclid(360.0)
        }
    };
    let h1 = hue(x.b, a1);
    let h2 = hue(y.b, a2);

    let dl = y.l - x.l;
    let dc = c2p - c1p;
    let dh_angle = if c1p * c2p == 0.0 {
        0.0
    } else if (h2 - h1).abs() <= 180.0 {
        h2 - h1
    } else if h2 - h1 > 180.0 {
        h2 - h1 - 360.0
    } else {
        h2 - h1 + 360.0
    };
    let dh = 2.0 * (c1p * c2p).sqrt() * (dh_angle.to_radians() / 2.0).sin();

    let l_bar = (x.l + y.l) / 2.0;
    let cp_bar = (c1p + c2p) / 2.0;
    let h_bar = if c1p * c2p == 0.0 {
        h1 + h2
    } else if (h1 - h2).abs() <= 180.0 {
        (h1 + h2) / 2.0
    } else if h1 + h2 < 360.0 {
        (h1 + h2 + 360.0) / 2.0
    } else {
        (h1 + h2 - 360.0) / 2.0
    };
    let t = 1.0 - 0.17 * (h_bar - 30.0).to_radians().cos()
        + 0.24 * (2.0 * h_bar).to_radians().cos()
        + 0.32 * (3.0 * h_bar + 6.0).to_radians().cos()
        - 0.20 * (4.0 * h_bar - 63.0).to_radians().cos();
    let d_theta = 30.0 * (-((h_bar - 275.0) / 25.0).powi(2)).exp();
    let r_c = 2.0 * (pow7(cp_bar) / (pow7(cp_bar) + pow7(25.0))).sqrt();
    let l50 = (l_bar - 50.0).powi(2);
    let s_l = 1.0 + 0.015 * l50 / (20.0 + l50).sqrt();
    let s_c = 1.0 + 0.045 * cp_bar;
    let s_h = 1.0 + 0.015 * cp_bar * t;
    let r_t = -(2.0 * d_theta).to_radians().sin() * r_c;

    let (tl, tc, th) = (dl / s_l, dc / s_c, dh / s_h);
    (tl * tl + tc * tc + th * th + r_t * tc * th).sqrt()
}

/// Mean CIEDE2000 over the pixels of two BT.709 frames.
pub fn ciede2000(a: &Image, b: &Image) -> Result<f64> {
    a.require_tags(Gamut::Bt709, Transfer::Gamma709)?;
    same_layout(a, b)?;
    let la = colorimetry::rgb_to_lab(a)?;
    let lb = colorimetry::rgb_to_lab(b)?;
    let sum: f64 = la.iter().zip(&lb).map(|(&x, &y)| ciede2000_lab(x, y)).sum();
    Ok(sum / la.len() as f64)
}

pub fn delta_e_itp_pixel(x: colorimetry::Ictcp, y: colorimetry::Ictcp) -> f64 {
    let di = x.i - y.i;
    let dt = (x.ct - y.ct) / 2.0;
    let dp = x.cp - y.cp;
    720.0 * (di * di + dt * dt + dp * dp).sqrt()
}

/// Mean ΔE_ITP over the pixels of two PQ BT.2020 frames.
pub fn delta_e_itp(a: &Image, b: &Image) -> Result<f64> {
    a.require_tags(Gamut::Bt2020, Transfer::Pq)?;
    same_layout(a, b)?;
    let ia = colorimetry::rgb_to_ictcp(a)?;
    let ib = colorimetry::rgb_to_ictcp(b)?;
    let sum: f64 = ia.iter().zip(&ib).map(|(&x, &y)| delta_e_itp_pixel(x, y)).sum();
    Ok(sum / ia.len() as f64)
}

/// TMQI parameterization. HDR luminance is linear BT.2020 luminance rescaled
/// to `[0, 2^32 - 1]`; SDR luminance is BT.709 luma of the codes on a
/// 0..255 scale. Structural fidelity uses the SSIM window over five
/// scales with 2×2 mean pooling; naturalness uses non-overlapping 11×11
/// blocks (partial edge blocks skipped, sample standard deviation).
pub mod tmqi_params {
    pub const A: f64 = 0.8012;
    pub const ALPHA: f64 = 0.3046;
    pub const BETA: f64 = 0.7088;
    pub const C1: f64 = 0.01;
    pub const C2: f64 = 10.0;
    /// Spatial frequency of the finest scale, halved at each coarser one.
    pub const FINEST_FREQ: f64 = 16.0;
    pub const HDR_RANGE: f64 = 4_294_967_295.0;
    pub const SDR_RANGE: f64 = 255.0;
    pub const BLOCK: usize = 11;
    pub const CONTRAST_SHAPE: (f64, f64) = (4.4, 10.1);
    pub const CONTRAST_SCALE: f64 = 64.29;
    pub const BRIGHTNESS_MEAN: f64 = 115.94;
    pub const BRIGHTNESS_STD: f64 = 27.99;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tmqi {
    pub q: f64,
    pub s: f64,
    pub n: f64,
}

/// Contrast visibility threshold of the contrast sensitivity model at
/// spatial frequency `f`.
fn visibility_mean(f: f64) -> f64 {
    let csf = 100.0 * 2.6 * (0.0192 + 0.114 * f) * (-(0.114 * f).powf(1.1)).exp();
    128.0 / (1.4 * csf)
}

fn local_fidelity(hdr: &Plane, sdr: &Plane, freq: f64) -> f64 {
    use tmqi_params::{C1, C2};
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let m = moments(hdr, sdr, &taps);
    let mu = visibility_mean(freq);
    let vis = Normal::new(mu, mu / 3.0).expect("positive spread");
    let n = m.cov.data.len();
    let sum: f64 = (0..n)
        .map(|i| {
            let s1 = m.var_a.data[i].max(0.0).sqrt();
            let s2 = m.var_b.data[i].max(0.0).sqrt();
            let p1 = vis.cdf(s1);
            let p2 = vis.cdf(s2);
            (2.0 * p1 * p2 + C1) / (p1 * p1 + p2 * p2 + C1) * (m.cov.data[i] + C2) / (s1 * s2 + C2)
        })
        .sum();
    sum / n as f64
}

fn naturalness(sdr: &Plane) -> f64 {
    use tmqi_params::*;
    let mean = sdr.data.iter().sum::<f64>() / sdr.data.len() as f64;
    let (bx, by) = (sdr.width / BLOCK, sdr.height / BLOCK);
    let mut stds = Vec::with_capacity(bx * by);
    let k = (BLOCK * BLOCK) as f64;
    for j in 0..by {
        for i in 0..bx {
            let vals = (0..BLOCK).flat_map(|y| (0..BLOCK).map(move |x| (i * BLOCK + x, j * BLOCK + y)));
            let m = vals.clone().map(|(x, y)| sdr.at(x, y)).sum::<f64>() / k;
            let v = vals.map(|(x, y)| (sdr.at(x, y) - m).powi(2)).sum::<f64>() / (k - 1.0);
            stds.push(v.sqrt());
        }
    }
    let sigma = stds.iter().sum::<f64>() / stds.len() as f64;
    let (p, q) = CONTRAST_SHAPE;
    let beta = Beta::new(p, q).expect("valid shape");
    let mode = (p - 1.0) / (p + q - 2.0);
    let pc = beta.pdf(sigma / CONTRAST_SCALE) / beta.pdf(mode);
    let pb = (-(mean - BRIGHTNESS_MEAN).powi(2) / (2.0 * BRIGHTNESS_STD * BRIGHTNESS_STD)).exp();
    pb * pc
}

fn hdr_luminance(hdr: &Image) -> Plane {
    let l: Vec<f64> = hdr
        .pixels()
        .map(|p| colorimetry::luma(BT2020_LUMA, p.map(|v| colorimetry::pq_eotf(v as f64))))
        .collect();
    let lo = l.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { tmqi_params::HDR_RANGE / (hi - lo) } else { 0.0 };
    Plane {
        width: hdr.width(),
        height: hdr.height(),
        data: l.into_iter().map(|v| (v - lo) * scale).collect(),
    }
}

/// Tone-mapped image quality of `sdr` as a rendering of `hdr`.
pub fn tmqi(hdr: &Image, sdr: &Image) -> Result<Tmqi> {
    use tmqi_params::*;
    hdr.require_tags(Gamut::Bt2020, Transfer::Pq)?;
    sdr.require_tags(Gamut::Bt709, Transfer::Gamma709)?;
    hdr.require_same_size(sdr)?;
    require_min_size(hdr, MS_MIN_SIZE, "TMQI")?;
    let mut ph = hdr_luminance(hdr);
    let mut ps = luma_plane(sdr);
    ps.data.iter_mut().for_each(|v| *v *= SDR_RANGE);
    let n = naturalness(&ps);
    let mut s = 1.0;
    let mut freq = FINEST_FREQ;
    for w in MS_SSIM_WEIGHTS {
        s *= local_fidelity(&ph, &ps, freq).max(0.0).powf(w);
        ph = ph.downsample();
        ps = ps.downsample();
        freq /= 2.0;
    }
    let q = A * s.powf(ALPHA) + (1.0 - A) * n.powf(BETA);
    Ok(Tmqi { q, s, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Metric {
    Psnr,
    Mpsnr,
    Ssim,
    MsSsim,
    Ciede2000,
    DeltaEItp,
    Tmqi,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Psnr,
        Metric::Mpsnr,
        Metric::Ssim,
        Metric::MsSsim,
        Metric::Ciede2000,
        Metric::DeltaEItp,
        Metric::Tmqi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Psnr => "psnr",
            Metric::Mpsnr => "mpsnr",
            Metric::Ssim => "ssim",
            Metric::MsSsim => "ms_ssim",
            Metric::Ciede2000 => "ciede2000",
            Metric::DeltaEItp => "delta_e_itp",
            Metric::Tmqi => "tmqi",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidParameter(format!("unknown metric {s:?}")))
    }

    /// Evaluates a candidate against a reference. mPSNR and ΔE_ITP expect
    /// HDR frames; TMQI takes the HDR source as `reference`.
    pub fn eval(self, candidate: &Image, reference: &Image) -> Result<f64> {
        match self {
            Metric::Psnr => psnr(candidate, reference),
            Metric::Mpsnr => mpsnr(candidate, reference, &MPSNR_STOPS),
            Metric::Ssim => ssim(candidate, reference),
            Metric::MsSsim => ms_ssim(candidate, reference),
            Metric::Ciede2000 => ciede2000(candidate, reference),
            Metric::DeltaEItp => delta_e_itp(candidate, reference),
            Metric::Tmqi => Ok(tmqi(reference, candidate)?.q),
        }
    }
}

/// Named metric values for one image pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub candidate: String,
    pub reference: String,
    pub values: Vec<(Metric, f64)>,
}

impl MetricReport {
    pub fn compute(
        candidate_id: &str,
        reference_id: &str,
        candidate: &Image,
        reference: &Image,
        metrics: &[Metric],
    ) -> Result<Self> {
        let values = metrics
            .iter()
            .map(|&m| Ok((m, m.eval(candidate, reference)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            candidate: candidate_id.to_string(),
            reference: reference_id.to_string(),
            values,
        })
    }

    pub fn get(&self, m: Metric) -> Option<f64> {
        self.values.iter().find(|(k, _)| *k == m).map(|(_, v)| *v)
    }
}

/// Formats with six significant digits.
pub fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let digits = 5 - v.abs().log10().floor() as i32;
    if (0..=17).contains(&digits) {
        format!("{:.*}", digits as usize, v)
    } else {
        format!("{v:.5e}")
    }
}

/// Long-format report: one row per pair per metric, then one mean row per
/// metric.
pub fn write_report_csv<W: std::io::Write>(mut w: W, reports: &[MetricReport], metrics: &[Metric]) -> std::io::Result<()> {
    writeln!(w, "candidate,reference,metric,value")?;
    for r in reports {
        for &(m, v) in &r.values {
            writeln!(w, "{},{},{},{}", r.candidate, r.reference, m.name(), sig6(v))?;
        }
    }
    for &m in metrics {
        let vals: Vec<f64> = reports.iter().filter_map(|r| r.get(m)).collect();
        if !vals.is_empty() {
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            writeln!(w, "mean,mean,{},{}", m.name(), sig6(mean))?;
        }
    }
    Ok(())
}

/// One point of the TMQI versus distance scatter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterRow {
    pub tmo: String,
    pub tmqi: f64,
    pub psnr: f64,
    pub ciede2000: f64,
}

struct PairScores {
    tmqi: f64,
    psnr: f64,
    ciede: f64,
}

/// Mean TMQI against the HDR source and mean PSNR and CIEDE2000 against
/// the ground-truth SDR, per TMO.
pub fn analyze_tmos(hdr: &[Image], sdr_gt: &[Image], tmos: &[Tmo]) -> Result<Vec<ScatterRow>> {
    if hdr.len() != sdr_gt.len() {
        return Err(Error::SizeMismatch(format!(
            "{} HDR frames but {} SDR frames",
            hdr.len(),
            sdr_gt.len()
        )));
    }
    if hdr.is_empty() || tmos.is_empty() {
        return Err(Error::InvalidParameter("analysis needs at least one pair and one TMO".into()));
    }
    tmos.iter()
        .map(|tmo| {
            let scores = hdr
                .par_iter()
                .zip(sdr_gt)
                .map(|(h, gt)| {
                    let s = tmo.apply(h)?;
                    Ok(PairScores {
                        tmqi: tmqi(h, &s)?.q,
                        psnr: psnr(&s, gt)?,
                        ciede: ciede2000(&s, gt)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let n = scores.len() as f64;
            Ok(ScatterRow {
                tmo: tmo.name().to_string(),
                tmqi: scores.iter().map(|p| p.tmqi).sum::<f64>() / n,
                psnr: scores.iter().map(|p| p.psnr).sum::<f64>() / n,
                ciede2000: scores.iter().map(|p| p.ciede).sum::<f64>() / n,
            })
        })
        .collect()
}

/// Scatter rows at full round-trip precision.
pub fn write_scatter_csv<W: std::io::Write>(mut w: W, rows: &[ScatterRow]) -> std::io::Result<()> {
    writeln!(w, "tmo,tmqi,psnr,ciede2000")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.tmo, r.tmqi, r.psnr, r.ciede2000)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sdr(w: usize, h: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> Image {
        Image::from_fn(w, h, Gamut::Bt709, Transfer::Gamma709, f).unwrap()
    }

    fn random_sdr(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<[f32; 3]> = (0..w * h).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        sdr(w, h, |x, y| v[y * w + x])
    }

    #[test]
    fn psnr_cases() {
        let a = random_sdr(1, 8, 8);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let x = sdr(4, 4, |_, _| [0.5; 3]);
        let y = sdr(4, 4, |_, _| [0.6; 3]);
        assert!((psnr(&x, &y).unwrap() - 20.0).abs() < 1e-5);
    }

    #[test]
    fn psnr_matches_direct_sum() {
        let a = random_sdr(2, 9, 7);
        let b = random_sdr(3, 9, 7);
        let mut s = 0.0;
        for (x, y) in a.data().iter().zip(b.data()) {
            s += (*x as f64 - *y as f64).powi(2);
        }
        let want = 10.0 * (1.0 / (s / (9.0 * 7.0 * 3.0))).log10();
        assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn size_mismatch_rejected() {
        let a = random_sdr(1, 8, 8);
        let b = random_sdr(1, 8, 9);
        assert!(matches!(psnr(&a, &b), Err(Error::SizeMismatch(_))));
        assert!(ssim(&a, &b).is_err());
    }

    fn hdr_from_nits(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> Image {
        Image::from_fn(w, h, Gamut::Bt2020, Transfer::Pq, |x, y| {
            [colorimetry::pq_oetf(f(x, y) / colorimetry::pq::PEAK_NITS) as f32; 3]
        })
        .unwrap()
    }

    #[test]
    fn mpsnr_two_pixel_chain() {
        let a = hdr_from_nits(2, 1, |x, _| [50.0, 200.0][x]);
        let b = hdr_from_nits(2, 1, |x, _| [60.0, 100.0][x]);
        let code = |pq: f32, s: i32| {
            let lin = colorimetry::pq_eotf(pq as f64) * 100.0 * 2f64.powi(s);
            lin.powf(1.0 / 2.2).min(1.0)
        };
        let mut total = 0.0;
        for s in MPSNR_STOPS {
            let mut e = 0.0;
            for (x, y) in a.data().iter().zip(b.data()) {
                e += (code(*x, s) - code(*y, s)).powi(2);
            }
            total += e / 6.0;
        }
        let want = 10.0 * (5.0 / total).log10();
        assert!((mpsnr(&a, &b, &MPSNR_STOPS).unwrap() - want).abs() < 1e-9);
        assert_eq!(mpsnr(&a, &a, &MPSNR_STOPS).unwrap(), PSNR_CAP);
        assert!(mpsnr(&a, &b, &[]).is_err());
    }

    #[test]
    fn mpsnr_single_stop_is_psnr_of_gamma_codes() {
        let a = hdr_from_nits(3, 3, |x, y| 5.0 + 10.0 * (x + y) as f64);
        let b = hdr_from_nits(3, 3, |x, y| 8.0 + 9.0 * (x * y) as f64);
        let enc = |img: &Image| {
            let d: Vec<f32> = img.data().iter().map(|&v| exposure_code(v, 0) as f32).collect();
            Image::new(3, 3, d, Gamut::Bt2020, Transfer::Linear).unwrap()
        };
        let (ea, eb) = (enc(&a), enc(&b));
        let mut s = 0.0;
        for (x, y) in a.data().iter().zip(b.data()) {
            s += (exposure_code(*x, 0) - exposure_code(*y, 0)).powi(2);
        }
        let direct = 10.0 * (1.0 / (s / 27.0)).log10();
        assert!((mpsnr(&a, &b, &[0]).unwrap() - direct).abs() < 1e-9);
        assert!((psnr(&ea, &eb).unwrap() - direct).abs() < 1e-4);
    }

    /// Direct windowed sums with the 2-D Gaussian, no separability.
    fn ssim_oracle(a: &Image, b: &Image) -> f64 {
        let (pa, pb) = (luma_plane(a), luma_plane(b));
        let t = gaussian_taps(11, 1.5);
        let (c1, c2) = (1e-4, 9e-4);
        let (ow, oh) = (pa.width - 10, pa.height - 10);
        let mut total = 0.0;
        for y0 in 0..oh {
            for x0 in 0..ow {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let w = t[i] * t[j];
                        let (u, v) = (pa.at(x0 + i, y0 + j), pb.at(x0 + i, y0 + j));
                        ma += w * u;
                        mb += w * v;
                        saa += w * u * u;
                        sbb += w * v * v;
                        sab += w * u * v;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
        total / (ow * oh) as f64
    }

    #[test]
    fn ssim_matches_windowed_oracle() {
        let a = random_sdr(10, 32, 32);
        let b = random_sdr(11, 32, 32);
        let blend = Image::new(
            32,
            32,
            a.data().iter().zip(b.data()).map(|(x, y)| 0.7 * x + 0.3 * y).collect(),
            Gamut::Bt709,
            Transfer::Gamma709,
        )
        .unwrap();
        let want = ssim_oracle(&a, &blend);
        assert!(want > 0.0);
        assert!((ssim(&a, &blend).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = random_sdr(4, 24, 20);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = sdr(24, 20, |x, y| a.pixel(x, y).map(|v| 1.0 - v));
        let s = ssim(&a, &inv).unwrap();
        assert!(s < 1.0);
        assert_eq!(s, ssim(&inv, &a).unwrap());
        assert!(ssim(&random_sdr(1, 10, 10), &random_sdr(2, 10, 10)).is_err());
    }

    #[test]
    fn ms_ssim_identity_symmetry_and_size() {
        let a = random_sdr(5, 176, 180);
        let b = sdr(176, 180, |x, y| a.pixel(x, y).map(|v| (v * 0.8 + 0.1 * ((x + y) % 3) as f32).min(1.0)));
        assert!((ms_ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let q = ms_ssim(&a, &b).unwrap();
        assert!(q > 0.0 && q < 1.0);
        assert_eq!(q, ms_ssim(&b, &a).unwrap());
        assert!(ms_ssim(&random_sdr(1, 175, 200), &random_sdr(2, 175, 200)).is_err());
    }

    #[test]
    fn ciede2000_reference_pairs() {
        // Published test pairs: (L1, a1, b1, L2, a2, b2, ΔE00).
        let pairs: [[f64; 7]; 34] = [
            [50.0, 2.6772, -79.7751, 50.0, 0.0, -82.7485, 2.0425],
            [50.0, 3.1571, -77.2803, 50.0, 0.0, -82.7485, 2.8615],
            [50.0, 2.8361, -74.0200, 50.0, 0.0, -82.7485, 3.4412],
            [50.0, -1.3802, -84.2814, 50.0, 0.0, -82.7485, 1.0000],
            [50.0, -1.1848, -84.8006, 50.0, 0.0, -82.7485, 1.0000],
            [50.0, -0.9009, -85.5211, 50.0, 0.0, -82.7485, 1.0000],
            [50.0, 0.0, 0.0, 50.0, -1.0, 2.0, 2.3669],
            [50.0, -1.0, 2.0, 50.0, 0.0, 0.0, 2.3669],
            [50.0, 2.4900, -0.0010, 50.0, -2.4900, 0.0009, 7.1792],
            [50.0, 2.4900, -0.0010, 50.0, -2.4900, 0.0010, 7.1792],
            [50.0, 2.4900, -0.0010, 50.0, -2.4900, 0.0011, 7.2195],
            [50.0, 2.4900, -0.0010, 50.0, -2.4900, 0.0012, 7.2195],
            [50.0, -0.0010, 2.4900, 50.0, 0.0009, -2.4900, 4.8045],
            [50.0, -0.0010, 2.4900, 50.0, 0.0010, -2.4900, 4.8045],
            [50.0, -0.0010, 2.4900, 50.0, 0.0011, -2.4900, 4.7461],
            [50.0, 2.5, 0.0, 50.0, 0.0, -2.5, 4.3065],
            [50.0, 2.5, 0.0, 73.0, 25.0, -18.0, 27.1492],
            [50.0, 2.5, 0.0, 61.0, -5.0, 29.0, 22.8977],
            [50.0, 2.5, 0.0, 56.0, -27.0, -3.0, 31.9030],
            [50.0, 2.5, 0.0, 58.0, 24.0, 15.0, 19.4535],
            [50.0, 2.5, 0.0, 50.0, 3.1736, 0.5854, 1.0000],
            [50.0, 2.5, 0.0, 50.0, 3.2972, 0.0, 1.0000],
            [50.0, 2.5, 0.0, 50.0, 1.8634, 0.5757, 1.0000],
            [50.0, 2.5, 0.0, 50.0, 3.2592, 0.3350, 1.0000],
            [60.2574, -34.0099, 36.2677, 60.4626, -34.1751, 39.4387, 1.2644],
            [63.0109, -31.0961, -5.8663, 62.8187, -29.7946, -4.0864, 1.2630],
            [61.2901, 3.7196, -5.3901, 61.4292, 2.2480, -4.9620, 1.8731],
            [35.0831, -44.1164, 3.7933, 35.0232, -40.0716, 1.5901, 1.8645],
            [22.7233, 20.0904, -46.6940, 23.0331, 14.9730, -42.5619, 2.0373],
            [36.4612, 47.8580, 18.3852, 36.2715, 50.5065, 21.2231, 1.4146],
            [90.8027, -2.0831, 1.4410, 91.1528, -1.6435, 0.0447, 1.4441],
            [90.9257, -0.5406, -0.9208, 88.6381, -0.8985, -0.7239, 1.5381],
            [6.7747, -0.2908, -2.4247, 5.8714, -0.0985, -2.2286, 0.6377],
            [2.0776, 0.0795, -1.1350, 0.9033, -0.0636, -0.5514, 0.9082],
        ];
        for (i, p) in pairs.iter().enumerate() {
            let x = Lab { l: p[0], a: p[1], b: p[2] };
            let y = Lab { l: p[3], a: p[4], b: p[5] };
            let d = ciede2000_lab(x, y);
            assert!((d - p[6]).abs() < 1e-4, "pair {}: {d} vs {}", i + 1, p[6]);
            assert!((ciede2000_lab(y, x) - d).abs() < 1e-12);
        }
    }

    #[test]
    fn ciede2000_image_mean() {
        let a = sdr(2, 1, |x, _| [[0.2, 0.4, 0.6], [0.9, 0.1, 0.3]][x]);
        let b = sdr(2, 1, |x, _| [[0.25, 0.35, 0.6], [0.7, 0.2, 0.3]][x]);
        let la = colorimetry::rgb_to_lab(&a).unwrap();
        let lb = colorimetry::rgb_to_lab(&b).unwrap();
        let want = (ciede2000_lab(la[0], lb[0]) + ciede2000_lab(la[1], lb[1])) / 2.0;
        assert!((ciede2000(&a, &b).unwrap() - want).abs() < 1e-12);
        assert_eq!(ciede2000(&a, &a).unwrap(), 0.0);
        let wrong = a.clone().retag(Gamut::Bt2020, Transfer::Pq).unwrap();
        assert!(matches!(ciede2000(&wrong, &wrong), Err(Error::WrongTags { .. })));
    }

    #[test]
    fn delta_e_itp_cases() {
        let a = hdr_from_nits(2, 2, |x, y| 10.0 + 40.0 * (x + 2 * y) as f64);
        assert_eq!(delta_e_itp(&a, &a).unwrap(), 0.0);
        let x = colorimetry::Ictcp { i: 0.3, ct: 0.01, cp: -0.02 };
        let y = colorimetry::Ictcp { i: 0.25, ct: 0.01, cp: -0.02 };
        assert!((delta_e_itp_pixel(x, y) - 720.0 * 0.05).abs() < 1e-12);

        // One colored pair through the scalar chain.
        let p = [0.55f32, 0.40, 0.30];
        let q = [0.50f32, 0.45, 0.35];
        let img = |c: [f32; 3]| Image::new(1, 1, c.to_vec(), Gamut::Bt2020, Transfer::Pq).unwrap();
        let ictcp = |c: [f32; 3]| {
            let lin = c.map(|v| colorimetry::pq_eotf(v as f64));
            let lms = [
                (1688.0 * lin[0] + 2146.0 * lin[1] + 262.0 * lin[2]) / 4096.0,
                (683.0 * lin[0] + 2951.0 * lin[1] + 462.0 * lin[2]) / 4096.0,
                (99.0 * lin[0] + 309.0 * lin[1] + 3688.0 * lin[2]) / 4096.0,
            ]
            .map(colorimetry::pq_oetf);
            [
                0.5 * lms[0] + 0.5 * lms[1],
                (6610.0 * lms[0] - 13613.0 * lms[1] + 7003.0 * lms[2]) / 4096.0,
                (17933.0 * lms[0] - 17390.0 * lms[1] - 543.0 * lms[2]) / 4096.0,
            ]
        };
        let (u, v) = (ictcp(p), ictcp(q));
        let want = 720.0 * ((u[0] - v[0]).powi(2) + ((u[1] - v[1]) / 2.0).powi(2) + (u[2] - v[2]).powi(2)).sqrt();
        let got = delta_e_itp(&img(p), &img(q)).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} {want}");
        assert_eq!(got, delta_e_itp(&img(q), &img(p)).unwrap());
    }

    #[test]
    fn tmqi_properties() {
        let h = crate::synthetic::synthetic_hdr(3, 192, 192).unwrap();
        let hable = crate::tmo::tmo_hable(&h).unwrap();
        let t = tmqi(&h, &hable).unwrap();
        assert!((0.0..=1.0).contains(&t.q) && (0.0..=1.0).contains(&t.s) && (0.0..=1.0).contains(&t.n));

        let flat = sdr(192, 192, |_, _| [0.5; 3]);
        assert!(tmqi(&h, &flat).unwrap().s < 0.2);

        // Crush everything above a low level to white.
        let clipped = hable.map_pixels(Gamut::Bt709, Transfer::Gamma709, |p| p.map(|v| (v * 4.0).min(1.0))).unwrap();
        assert!(tmqi(&h, &clipped).unwrap().s < t.s);
    }

    #[test]
    fn tmqi_is_asymmetric() {
        let h = crate::synthetic::synthetic_hdr(4, 176, 176).unwrap();
        let s = crate::tmo::tmo_reinhard(&h).unwrap();
        // Same codes with the roles swapped.
        let h2 = s.clone().retag(Gamut::Bt2020, Transfer::Pq).unwrap();
        let s2 = h.clone().retag(Gamut::Bt709, Transfer::Gamma709).unwrap();
        assert_ne!(tmqi(&h, &s).unwrap().q, tmqi(&h2, &s2).unwrap().q);
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(sig6(99.0), "99.0000");
        assert_eq!(sig6(0.123456789), "0.123457");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(1234567.0), "1.23457e6");
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(Metric::parse(m.name()).unwrap(), m);
        }
        assert!(Metric::parse("vdp3").is_err());
    }
}
