//! Frame files: PNG (8/16-bit), Radiance `.hdr`, and a raw float format.
//!
//! The raw `.lcat` layout is a 16-byte header (`b"LCAT"`, then height, width
//! and channel count as little-endian `u32`) followed by `f32` little-endian
//! samples in channel-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::codecs::hdr::HdrEncoder;
use image::{ImageReader, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RAW_MAGIC: &[u8; 4] = b"LCAT";
pub const RAW_EXTENSION: &str = "lcat";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameFormat {
    Png,
    Hdr,
    Raw,
}

impl FrameFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "png" => Some(Self::Png),
            "hdr" => Some(Self::Hdr),
            RAW_EXTENSION => Some(Self::Raw),
            _ => None,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn codec_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Codec {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn from_interleaved(width: usize, height: usize, rgb: &[f32]) -> Tensor {
    let n = width * height;
    let mut data = vec![0.0; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            data[c * n + i] = f64::from(rgb[3 * i + c]);
        }
    }
    Tensor::from_vec(&[3, height, width], data).expect("length matches")
}

/// Decode a PNG or `.hdr` image to a `[3, h, w]` tensor. PNG samples are
/// normalized to `[0, 1]` without any transfer curve applied.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let img = ImageReader::open(path)
        .map_err(|e| io_err(path, e))?
        .with_guessed_format()
        .map_err(|e| io_err(path, e))?
        .decode()
        .map_err(|e| codec_err(path, e))?;
    let rgb = img.to_rgb32f();
    Ok(from_interleaved(rgb.width() as usize, rgb.height() as usize, rgb.as_raw()))
}

/// Write values in `[0, 1]` as an 8-bit RGB PNG, rounding to nearest.
pub fn write_png8(path: &Path, x: &Tensor) -> Result<()> {
    let (c, h, w) = x.dims3()?;
    if c != 3 {
        return Err(Error::Shape(format!("PNG output needs 3 channels, got {c}")));
    }
    let n = h * w;
    let img = RgbImage::from_fn(w as u32, h as u32, |px, py| {
        let i = py as usize * w + px as usize;
        let q = |ch: usize| (x.data()[ch * n + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([q(0), q(1), q(2)])
    });
    img.save(path).map_err(|e| codec_err(path, e))
}

pub fn write_hdr(path: &Path, x: &Tensor) -> Result<()> {
    let (c, h, w) = x.dims3()?;
    if c != 3 {
        return Err(Error::Shape(format!("HDR output needs 3 channels, got {c}")));
    }
    let n = h * w;
    let pixels: Vec<Rgb<f32>> = (0..n)
        .map(|i| Rgb([0, 1, 2].map(|ch| x.data()[ch * n + i].max(0.0) as f32)))
        .collect();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    HdrEncoder::new(BufWriter::new(file))
        .encode(&pixels, w, h)
        .map_err(|e| codec_err(path, e))
}

pub fn write_raw(path: &Path, x: &Tensor) -> Result<()> {
    let (c, h, w) = x.dims3()?;
    let mut bytes = Vec::with_capacity(16 + 4 * x.len());
    bytes.extend_from_slice(RAW_MAGIC);
    for d in [h, w, c] {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in x.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&bytes).map_err(|e| io_err(path, e))
}

pub fn read_raw(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| io_err(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != RAW_MAGIC {
        return Err(codec_err(path, "missing LCAT header"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(4), dim(8), dim(12));
    let n = h * w * c;
    if bytes.len() != 16 + 4 * n {
        return Err(codec_err(path, format!("expected {} payload bytes, found {}", 4 * n, bytes.len() - 16)));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    Tensor::from_vec(&[c, h, w], data)
}

/// Read any supported frame file without transfer-curve conversion.
pub fn read_frame(path: &Path) -> Result<Tensor> {
    match FrameFormat::from_path(path) {
        Some(FrameFormat::Raw) => read_raw(path),
        Some(_) => read_image(path),
        None => Err(codec_err(path, "unsupported frame extension")),
    }
}
