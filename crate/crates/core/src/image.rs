//! Dense images and their file formats.
//!
//! Pixels are stored row-major with interleaved channels. Two on-disk formats
//! are supported: 8-bit PNG for previews (values clamped to `[0, 1]` then
//! scaled by 255) and little-endian 32-bit float PFM for exact export.
//!
//! The PFM writer follows the usual convention: header `Pf` (one channel) or
//! `PF` (three channels), then `width height`, then a scale line whose
//! negative sign marks little-endian data. Rows are written bottom to top.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    /// Single channel `c` as its own image.
    pub fn channel(&self, c: usize) -> Image {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn write_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tag = match self.channels {
            1 => "Pf",
            3 => "PF",
            c => return Err(Error::Invalid(format!("PFM supports 1 or 3 channels, got {c}"))),
        };
        let mut buf = Vec::with_capacity(32 + self.data.len() * 4);
        write!(buf, "{tag}\n{} {}\n-1.0\n", self.width, self.height).unwrap();
        for y in (0..self.height).rev() {
            let row = y * self.width * self.channels;
            for v in &self.data[row..row + self.width * self.channels] {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        write_atomic(path, &buf)
    }

    pub fn read_pfm(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let malformed = |line, reason: &str| Error::Malformed {
            path: path.to_path_buf(),
            line,
            reason: reason.to_string(),
        };
        // header: three whitespace-terminated lines
        let mut pos = 0;
        let mut lines = Vec::new();
        for _ in 0..3 {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| malformed(lines.len() + 1, "truncated header"))?;
            lines.push(String::from_utf8_lossy(&bytes[pos..pos + end]).trim().to_string());
            pos += end + 1;
        }
        let channels = match lines[0].as_str() {
            "Pf" => 1,
            "PF" => 3,
            _ => return Err(malformed(1, "expected Pf or PF")),
        };
        let dims: Vec<usize> = lines[1]
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| malformed(2, "bad dimensions")))
            .collect::<Result<_>>()?;
        if dims.len() != 2 {
            return Err(malformed(2, "bad dimensions"));
        }
        let scale: f64 = lines[2].parse().map_err(|_| malformed(3, "bad scale"))?;
        let (width, height) = (dims[0], dims[1]);
        let n = width * height * channels;
        let payload = &bytes[pos..];
        if payload.len() != n * 4 {
            return Err(malformed(4, "payload size does not match header"));
        }
        let mut data = vec![0.0; n];
        for (i, chunk) in payload.chunks_exact(4).enumerate() {
            let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if scale < 0.0 {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            let row = i / (width * channels);
            let col = i % (width * channels);
            data[(height - 1 - row) * width * channels + col] = v as f64;
        }
        Image::from_data(width, height, channels, data)
    }

    /// 8-bit PNG preview; values are clamped to `[0, 1]`.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let color = match self.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            c => return Err(Error::Invalid(format!("PNG export supports 1 or 3 channels, got {c}"))),
        };
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(color);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc
                .write_header()
                .map_err(|e| Error::Invalid(format!("png encode: {e}")))?;
            w.write_image_data(&bytes)
                .map_err(|e| Error::Invalid(format!("png encode: {e}")))?;
        }
        write_atomic(path, &out)
    }

    /// Reads an 8-bit PNG, linearized by `/255`.
    pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
        decoder.set_transformations(png::Transformations::normalize_to_color8());
        let mut reader = decoder.read_info().map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: 0,
            reason: e.to_string(),
        })?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: 0,
            reason: e.to_string(),
        })?;
        let src_channels = info.color_type.samples();
        let channels = if src_channels >= 3 { 3 } else { 1 };
        let (w, h) = (info.width as usize, info.height as usize);
        let mut data = Vec::with_capacity(w * h * channels);
        for px in buf[..info.buffer_size()].chunks_exact(src_channels) {
            for c in 0..channels {
                data.push(px[c] as f64 / 255.0);
            }
        }
        Image::from_data(w, h, channels, data)
    }

    /// Reads `.pfm` or `.png` by extension.
    pub fn read(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some("pfm") => Image::read_pfm(path),
            Some("png") => Image::read_png(path),
            _ => Err(Error::Invalid(format!("unsupported image file {}", path.display()))),
        }
    }
}

/// Writes to a temporary sibling and renames it over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(e) => format!("{}.tmp", e.to_string_lossy()),
        None => "tmp".to_string(),
    });
    {
        let f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
