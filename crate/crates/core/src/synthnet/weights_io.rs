//! Weight files: a text header followed by raw little-endian `f32` values.
//!
//! ```text
//! sdrsynth-weights 1
//! endian little
//! dtype f32
//! arch generator features=32 cond_channels=16,32,64 ...
//! tensor cond.0.weight 16 12 7 7
//! ...
//! end
//! <payload>
//! ```
//!
//! The payload holds the tensors in directory order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::discriminator::Discriminator;
use super::layers::ParamLayout;
use super::network::{ArchConfig, Generator};
use crate::error::{Error, Result};

pub const MAGIC: &str = "sdrsynth-weights";
pub const VERSION: u32 = 1;

pub fn write_weights<W: Write>(mut w: W, arch: &str, layout: &ParamLayout, theta: &[f64]) -> std::io::Result<()> {
    writeln!(w, "{MAGIC} {VERSION}")?;
    writeln!(w, "endian little")?;
    writeln!(w, "dtype f32")?;
    writeln!(w, "arch {arch}")?;
    for t in &layout.tensors {
        let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        writeln!(w, "tensor {} {}", t.name, dims.join(" "))?;
    }
    writeln!(w, "end")?;
    for v in theta {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Parsed file: architecture line, directory and values in directory order.
pub struct WeightsFile {
    pub arch: String,
    pub tensors: Vec<(String, Vec<usize>)>,
    pub values: Vec<f64>,
}

fn header_line<R: BufRead>(r: &mut R, line_no: &mut usize) -> Result<String> {
    let mut line = String::new();
    *line_no += 1;
    let n = r
        .read_line(&mut line)
        .map_err(|e| Error::Weights(format!("header line {line_no}: {e}")))?;
    if n == 0 {
        return Err(Error::Weights(format!("header ends early at line {line_no}")));
    }
    Ok(line.trim_end_matches(['\n', '\r']).to_string())
}

pub fn read_weights<R: BufRead>(mut r: R) -> Result<WeightsFile> {
    let mut line_no = 0;
    let magic = header_line(&mut r, &mut line_no)?;
    if magic != format!("{MAGIC} {VERSION}") {
        return Err(Error::Weights(format!("unsupported header {magic:?}")));
    }
    if header_line(&mut r, &mut line_no)? != "endian little" {
        return Err(Error::Weights("only little-endian payloads are supported".into()));
    }
    if header_line(&mut r, &mut line_no)? != "dtype f32" {
        return Err(Error::Weights("only f32 payloads are supported".into()));
    }
    let arch = header_line(&mut r, &mut line_no)?
        .strip_prefix("arch ")
        .ok_or_else(|| Error::Weights("missing arch line".into()))?
        .to_string();
    let mut tensors = Vec::new();
    loop {
        let line = header_line(&mut r, &mut line_no)?;
        if line == "end" {
            break;
        }
        let mut words = line.split_whitespace();
        if words.next() != Some("tensor") {
            return Err(Error::Weights(format!("line {line_no}: expected tensor entry, got {line:?}")));
        }
        let name = words
            .next()
            .ok_or_else(|| Error::Weights(format!("line {line_no}: tensor without name")))?
            .to_string();
        let shape = words
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Weights(format!("line {line_no}: {e}")))?;
        tensors.push((name, shape));
    }
    let mut values = Vec::new();
    for (name, shape) in &tensors {
        let n: usize = shape.iter().product();
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf)
            .map_err(|_| Error::Weights(format!("truncated payload in tensor {name}")))?;
        values.extend(
            buf.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64),
        );
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::Weights(e.to_string()))? != 0 {
        return Err(Error::Weights("trailing bytes after payload".into()));
    }
    Ok(WeightsFile { arch, tensors, values })
}

fn check_directory(file: &WeightsFile, layout: &ParamLayout) -> Result<()> {
    if file.tensors.len() != layout.tensors.len() {
        return Err(Error::Weights(format!(
            "file has {} tensors, architecture expects {}",
            file.tensors.len(),
            layout.tensors.len()
        )));
    }
    for ((name, shape), spec) in file.tensors.iter().zip(&layout.tensors) {
        if *name != spec.name || *shape != spec.shape {
            return Err(Error::Weights(format!(
                "tensor {name} {shape:?} does not match architecture ({} {:?})",
                spec.name, spec.shape
            )));
        }
    }
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn save_generator(g: &Generator, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    write_weights(&mut w, &g.arch.describe(), &g.layout, &g.theta).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn generator_from_reader<R: BufRead>(r: R) -> Result<Generator> {
    let file = read_weights(r)?;
    let mut g = Generator::zeroed(ArchConfig::parse(&file.arch)?);
    check_directory(&file, &g.layout)?;
    g.theta = file.values;
    Ok(g)
}

pub fn load_generator(path: impl AsRef<Path>) -> Result<Generator> {
    generator_from_reader(open(path.as_ref())?)
}

pub fn save_discriminator(d: &Discriminator, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    write_weights(&mut w, Discriminator::DESCRIPTION, &d.layout, &d.theta).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_discriminator(path: impl AsRef<Path>) -> Result<Discriminator> {
    let file = read_weights(open(path.as_ref())?)?;
    if file.arch != Discriminator::DESCRIPTION {
        return Err(Error::Weights(format!("unexpected discriminator architecture {:?}", file.arch)));
    }
    let mut d = Discriminator::zeroed();
    check_directory(&file, &d.layout)?;
    d.theta = file.values;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes(g: &Generator) -> Vec<u8> {
        let mut v = Vec::new();
        write_weights(&mut v, &g.arch.describe(), &g.layout, &g.theta).unwrap();
        v
    }

    #[test]
    fn round_trip_bitwise() {
        let g = Generator::init(ArchConfig::default(), 11);
        let back = generator_from_reader(&bytes(&g)[..]).unwrap();
        assert_eq!(back.theta, g.theta);
        assert_eq!(back.arch, g.arch);
    }

    #[test]
    fn edited_channel_count_rejected() {
        let g = Generator::init(ArchConfig::default(), 1);
        let text = String::from_utf8_lossy(&bytes(&g)).into_owned();
        let edited = text.replacen("tensor global.0.weight 32 3 1 1", "tensor global.0.weight 33 3 1 1", 1);
        assert_ne!(edited, text);
        assert!(matches!(generator_from_reader(edited.as_bytes()), Err(Error::Weights(_))));
        let arch_edit = text.replacen("features=32", "features=16", 1);
        assert!(generator_from_reader(arch_edit.as_bytes()).is_err());
    }

    #[test]
    fn truncation_names_tensor() {
        let g = Generator::init(ArchConfig::default(), 2);
        let b = bytes(&g);
        let err = generator_from_reader(&b[..b.len() - 4]).err().unwrap();
        let last = &g.layout.tensors.last().unwrap().name;
        assert!(err.to_string().contains(last.as_str()), "{err}");
    }

    #[test]
    fn discriminator_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.weights");
        let d = Discriminator::init(4);
        save_discriminator(&d, &p).unwrap();
        assert_eq!(load_discriminator(&p).unwrap().theta, d.theta);
        assert!(load_generator(&p).is_err());
    }
}
