//! PNG (8/16-bit RGB) and PFM (float RGB) file I/O.
//!
//! Integer codes are normalized by `2^bits - 1`. PFM files are written
//! little-endian (scale `-1.0`) with rows stored bottom-to-top as the format
//! requires.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Gamut, Image, Transfer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            other => Err(Error::UnsupportedFormat(format!("{other}-bit output"))),
        }
    }

    pub fn max_code(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

fn is_pfm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pfm"))
}

/// Loads a PNG or PFM file and attaches the given tags.
pub fn load_image(path: impl AsRef<Path>, gamut: Gamut, transfer: Transfer) -> Result<Image> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    if is_pfm(path) {
        read_pfm(reader, gamut, transfer)
    } else {
        read_png(reader, gamut, transfer)
    }
}

/// Writes `img` to `path`. `.pfm` paths ignore `depth` and store float data.
pub fn save_image(img: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    if is_pfm(path) {
        write_pfm(img, &mut writer).map_err(|e| Error::io(path, e))?;
    } else {
        write_png(img, &mut writer, depth)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Quantizes a normalized value with round-half-up.
pub fn quantize(v: f32, depth: BitDepth) -> u16 {
    let max = depth.max_code();
    ((v.clamp(0.0, 1.0) as f64) * max + 0.5).floor().min(max) as u16
}

fn read_png<R: BufRead + std::io::Seek>(reader: R, gamut: Gamut, transfer: Transfer) -> Result<Image> {
    let decoder = png::Decoder::new(reader);
    let mut reader = decoder.read_info()?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Rgb {
        return Err(Error::UnsupportedFormat(format!(
            "expected 3-channel RGB PNG, got {color:?}"
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::UnsupportedFormat("png too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let n = w * h * 3;
    let data: Vec<f32> = match depth {
        png::BitDepth::Eight => buf[..n].iter().map(|&c| c as f32 / 255.0).collect(),
        png::BitDepth::Sixteen => buf[..n * 2]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 65535.0)
            .collect(),
        other => {
            return Err(Error::UnsupportedFormat(format!("{other:?} bit depth")));
        }
    };
    Image::new(w, h, data, gamut, transfer)
}

fn write_png<W: Write>(img: &Image, writer: W, depth: BitDepth) -> Result<()> {
    let mut encoder = png::Encoder::new(writer, img.width() as u32, img.height() as u32);
    encoder.set_color(png::ColorType::Rgb);
    let bytes: Vec<u8> = match depth {
        BitDepth::Eight => {
            encoder.set_depth(png::BitDepth::Eight);
            img.data().iter().map(|&v| quantize(v, depth) as u8).collect()
        }
        BitDepth::Sixteen => {
            encoder.set_depth(png::BitDepth::Sixteen);
            img.data()
                .iter()
                .flat_map(|&v| quantize(v, depth).to_be_bytes())
                .collect()
        }
    };
    let mut writer = encoder.write_header()?;
    writer.write_image_data(&bytes)?;
    writer.finish()?;
    Ok(())
}

fn read_pfm<R: BufRead>(mut reader: R, gamut: Gamut, transfer: Transfer) -> Result<Image> {
    let mut header = Vec::new();
    // Three whitespace-separated header tokens after the magic, each line-terminated.
    for _ in 0..3 {
        let mut line = String::new();
        reader
            .read_line(&mut line)
            .map_err(|e| Error::UnsupportedFormat(format!("pfm header: {e}")))?;
        header.push(line);
    }
    if header[0].trim() != "PF" {
        return Err(Error::UnsupportedFormat(format!(
            "pfm magic {:?} (only 3-channel 'PF' supported)",
            header[0].trim()
        )));
    }
    let dims: Vec<usize> = header[1]
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::UnsupportedFormat(format!("pfm dimensions: {e}")))?;
    if dims.len() != 2 {
        return Err(Error::UnsupportedFormat("pfm dimensions line".into()));
    }
    let scale: f32 = header[2]
        .trim()
        .parse()
        .map_err(|e| Error::UnsupportedFormat(format!("pfm scale: {e}")))?;
    let little = scale < 0.0;
    let (w, h) = (dims[0], dims[1]);
    let mut raw = vec![0u8; w * h * 12];
    reader
        .read_exact(&mut raw)
        .map_err(|e| Error::UnsupportedFormat(format!("pfm payload: {e}")))?;
    let mut data = vec![0f32; w * h * 3];
    for (row_in_file, chunk) in raw.chunks_exact(w * 12).enumerate() {
        let y = h - 1 - row_in_file;
        for (i, b) in chunk.chunks_exact(4).enumerate() {
            let bytes = [b[0], b[1], b[2], b[3]];
            data[y * w * 3 + i] = if little {
                f32::from_le_bytes(bytes)
            } else {
                f32::from_be_bytes(bytes)
            };
        }
    }
    Image::new(w, h, data, gamut, transfer)
}

fn write_pfm<W: Write>(img: &Image, w: &mut W) -> std::io::Result<()> {
    write!(w, "PF\n{} {}\n-1.0\n", img.width(), img.height())?;
    let row = img.width() * 3;
    for y in (0..img.height()).rev() {
        for v in &img.data()[y * row..(y + 1) * row] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Image {
        Image::from_fn(7, 5, Gamut::Bt2020, Transfer::Pq, |x, y| {
            let t = (x * 5 + y) as f32 / 34.0;
            [t, (t * 3.7).fract(), 1.0 - t]
        })
        .unwrap()
    }

    #[test]
    fn quantize_rules() {
        assert_eq!(quantize(0.0, BitDepth::Sixteen), 0);
        assert_eq!(quantize(1.0, BitDepth::Sixteen), 65535);
        assert_eq!(quantize(0.5, BitDepth::Sixteen), 32768);
        assert_eq!(quantize(1.0, BitDepth::Eight), 255);
    }

    #[test]
    fn png16_full_scale_and_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::new(2, 1, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0], Gamut::Bt2020, Transfer::Pq)
            .unwrap();
        save_image(&img, &p, BitDepth::Sixteen).unwrap();
        let back = load_image(&p, Gamut::Bt2020, Transfer::Pq).unwrap();
        assert_eq!(back.data(), img.data());
    }

    #[test]
    fn png8_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::filled(1, 1, [128.0 / 255.0; 3], Gamut::Bt709, Transfer::Gamma709).unwrap();
        save_image(&img, &p, BitDepth::Eight).unwrap();
        let back = load_image(&p, Gamut::Bt709, Transfer::Gamma709).unwrap();
        assert!((back.data()[0] - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn png16_round_trip_error_bound() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = sample();
        save_image(&img, &p, BitDepth::Sixteen).unwrap();
        let back = load_image(&p, Gamut::Bt2020, Transfer::Pq).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() as f64 <= 0.5 / 65535.0 + 1e-9);
        }
    }

    #[test]
    fn pfm_round_trip_exact_and_orientation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pfm");
        let img = Image::from_fn(3, 2, Gamut::Bt709, Transfer::Linear, |x, y| {
            [x as f32 * 10.0, y as f32 - 0.5, 1e-3]
        })
        .unwrap();
        save_image(&img, &p, BitDepth::Sixteen).unwrap();
        let back = load_image(&p, Gamut::Bt709, Transfer::Linear).unwrap();
        assert_eq!(back, img);
        // First stored row is the bottom row.
        let raw = std::fs::read(&p).unwrap();
        let header_len = "PF\n3 2\n-1.0\n".len();
        let first = f32::from_le_bytes(raw[header_len + 4..header_len + 8].try_into().unwrap());
        assert_eq!(first, 0.5);
    }

    #[test]
    fn rejects_non_rgb_png() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let f = File::create(&p).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(f), 2, 2);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[0, 1, 2, 3]).unwrap();
        w.finish().unwrap();
        let err = load_image(&p, Gamut::Bt709, Transfer::Gamma709).unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat(_)));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_image("/nonexistent/x.png", Gamut::Bt709, Transfer::Gamma709).unwrap_err();
        assert_eq!(err.kind(), "io");
    }
}
