//! Python bindings. Images cross the boundary as file paths.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use sdrsynth::colorimetry::{self, Lab};
use sdrsynth::io::{load_image, save_image, BitDepth};
use sdrsynth::metrics::Metric;
use sdrsynth::region::{self, HtmpConfig, Thresholds};
use sdrsynth::synthnet::{self, weights_io};
use sdrsynth::tmo::{self, Exposure};
use sdrsynth::{Error, Gamut, Image, Lut3D, Tmo, Transfer};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(format!("{}: {e}", e.kind())),
    }
}

fn load_hdr(p: &PathBuf) -> PyResult<Image> {
    load_image(p, Gamut::Bt2020, Transfer::Pq).map_err(py_err)
}

fn depth(bits: u32) -> PyResult<BitDepth> {
    BitDepth::from_bits(bits).map_err(py_err)
}

fn lut_or_standin(lut: Option<PathBuf>) -> PyResult<Arc<Lut3D>> {
    Ok(Arc::new(match lut {
        Some(p) => Lut3D::load(p).map_err(py_err)?,
        None => tmo::standin_lut(),
    }))
}

fn build_tmo(name: &str, mu: f64, exposure: Option<f64>, lut: Option<PathBuf>) -> PyResult<Tmo> {
    let exp = exposure.map_or(Exposure::GeometricMean, Exposure::Fixed);
    Ok(match name {
        "clip" => Tmo::clip(),
        "linear" => Tmo::linear(),
        "reinhard" => Tmo::Reinhard(exp),
        "hable" => Tmo::Hable(exp),
        "mulaw-cgm" => Tmo::mulaw_cgm(mu).map_err(py_err)?,
        "lut" => match lut {
            Some(p) => Tmo::Lut(Arc::new(Lut3D::load(p).map_err(py_err)?)),
            None => return Err(PyValueError::new_err("tmo 'lut' needs a lut path")),
        },
        other => return Err(PyValueError::new_err(format!("unknown tmo '{other}'"))),
    })
}

#[pyfunction]
fn pq_eotf(code: f64) -> f64 {
    colorimetry::pq_eotf(code)
}

#[pyfunction]
fn pq_oetf(linear: f64) -> f64 {
    colorimetry::pq_oetf(linear)
}

#[pyfunction]
fn gamma709_oetf(linear: f64) -> f64 {
    colorimetry::gamma709_oetf(linear)
}

#[pyfunction]
fn gamma709_eotf(code: f64) -> f64 {
    colorimetry::gamma709_eotf(code)
}

/// CIEDE2000 between two CIELAB triplets.
#[pyfunction]
fn ciede2000(lab1: (f64, f64, f64), lab2: (f64, f64, f64)) -> f64 {
    sdrsynth::metrics::ciede2000_lab(
        Lab { l: lab1.0, a: lab1.1, b: lab1.2 },
        Lab { l: lab2.0, a: lab2.1, b: lab2.2 },
    )
}

/// Tone-map a PQ BT.2020 image to a BT.709 SDR PNG.
#[pyfunction]
#[pyo3(signature = (input, output, tmo, mu=5000.0, exposure=None, lut=None, bits=16))]
fn convert(
    input: PathBuf,
    output: PathBuf,
    tmo: &str,
    mu: f64,
    exposure: Option<f64>,
    lut: Option<PathBuf>,
    bits: u32,
) -> PyResult<()> {
    let t = build_tmo(tmo, mu, exposure, lut)?;
    let s = t.apply(&load_hdr(&input)?).map_err(py_err)?;
    save_image(&s, output, depth(bits)?).map_err(py_err)
}

/// Region-aware SDR target. Returns the high/mid/low pixel fractions.
#[pyfunction]
#[pyo3(signature = (input, output, a=95.0, b=5.0, alpha=None, beta=None, mu=5000.0, lut=None, bits=16))]
#[allow(clippy::too_many_arguments)]
fn htmp_target(
    input: PathBuf,
    output: PathBuf,
    a: f64,
    b: f64,
    alpha: Option<f64>,
    beta: Option<f64>,
    mu: f64,
    lut: Option<PathBuf>,
    bits: u32,
) -> PyResult<(f64, f64, f64)> {
    let thresholds = match (alpha, beta) {
        (Some(alpha), Some(beta)) => Thresholds::Fixed { alpha, beta },
        (None, None) => Thresholds::Percentile { a, b },
        _ => return Err(PyValueError::new_err("alpha and beta must be given together")),
    };
    let cfg = HtmpConfig {
        thresholds,
        mu: colorimetry::MuLaw::new(mu).map_err(py_err)?,
        lut: lut_or_standin(lut)?,
        ..Default::default()
    };
    cfg.validate().map_err(py_err)?;
    let h = load_hdr(&input)?;
    let sup = region::HtmpSupervision::new(&h, &cfg).map_err(py_err)?;
    let st = sup.stats();
    save_image(&sup.target, output, depth(bits)?).map_err(py_err)?;
    Ok((st.high_fraction, st.mid_fraction, st.low_fraction))
}

/// Run a trained generator on one HDR frame.
#[pyfunction]
#[pyo3(signature = (input, weights, output, lut=None, bits=16))]
fn synthesize(input: PathBuf, weights: PathBuf, output: PathBuf, lut: Option<PathBuf>, bits: u32) -> PyResult<()> {
    let gen = weights_io::load_generator(weights).map_err(py_err)?;
    let s = synthnet::synthesize(&gen, &load_hdr(&input)?, &*lut_or_standin(lut)?).map_err(py_err)?;
    save_image(&s, output, depth(bits)?).map_err(py_err)
}

/// One metric between two files. mPSNR and ΔE_ITP compare PQ HDR frames;
/// for TMQI the candidate is SDR and the reference is the PQ HDR source.
#[pyfunction]
fn metric(name: &str, candidate: PathBuf, reference: PathBuf) -> PyResult<f64> {
    let m = Metric::parse(name).map_err(py_err)?;
    let sdr = |p: &PathBuf| load_image(p, Gamut::Bt709, Transfer::Gamma709).map_err(py_err);
    let (c, r) = match m {
        Metric::Mpsnr | Metric::DeltaEItp => (load_hdr(&candidate)?, load_hdr(&reference)?),
        Metric::Tmqi => (sdr(&candidate)?, load_hdr(&reference)?),
        _ => (sdr(&candidate)?, sdr(&reference)?),
    };
    m.eval(&c, &r).map_err(py_err)
}

#[pymodule]
#[pyo3(name = "sdrsynth")]
fn sdrsynth_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(pq_eotf, m)?)?;
    m.add_function(wrap_pyfunction!(pq_oetf, m)?)?;
    m.add_function(wrap_pyfunction!(gamma709_oetf, m)?)?;
    m.add_function(wrap_pyfunction!(gamma709_eotf, m)?)?;
    m.add_function(wrap_pyfunction!(ciede2000, m)?)?;
    m.add_function(wrap_pyfunction!(convert, m)?)?;
    m.add_function(wrap_pyfunction!(htmp_target, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(metric, m)?)?;
    Ok(())
}
