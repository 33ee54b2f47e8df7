//! PFM / PGM / PPM readers and writers.
//!
//! PFM is written little-endian (scale `-1.0`) with rows stored bottom-to-top as the
//! format prescribes; values are stored as `f32`. Masks are binary PGM (`P5`, maxval 255,
//! 255 = set) and images binary PPM (`P6`, maxval 255).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{Image, RegionLabel, RegionMask, ScalarField, Vec3, VectorField};

fn fmt_err(format: &'static str, reason: impl Into<String>) -> Error {
    Error::Format {
        format,
        reason: reason.into(),
    }
}

/// Reads header tokens of a Netpbm/PFM stream, skipping `#` comments.
struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn token(&mut self, format: &'static str) -> Result<&'a str> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(fmt_err(format, "truncated header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| fmt_err(format, "non-ASCII header"))
    }

    fn number<T: std::str::FromStr>(&mut self, format: &'static str, what: &str) -> Result<T> {
        let tok = self.token(format)?;
        tok.parse()
            .map_err(|_| fmt_err(format, format!("invalid {what}: {tok:?}")))
    }

    /// Consumes the single whitespace byte that separates header from raster.
    fn payload(self, format: &'static str) -> Result<&'a [u8]> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(&self.bytes[self.pos + 1..]),
            _ => Err(fmt_err(format, "missing raster")),
        }
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    Ok(buf)
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

/// Raw PFM contents: `channels` interleaved values per pixel, top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Pfm {
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "PF" } else { "Pf" };
        let mut out = format!("{magic}\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        let row = self.width * self.channels;
        for i in (0..self.height).rev() {
            for v in &self.data[i * row..(i + 1) * row] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        const F: &str = "PFM";
        let mut h = HeaderReader::new(bytes);
        let channels = match h.token(F)? {
            "PF" => 3,
            "Pf" => 1,
            other => return Err(fmt_err(F, format!("bad magic {other:?}"))),
        };
        let width: usize = h.number(F, "width")?;
        let height: usize = h.number(F, "height")?;
        let scale: f32 = h.number(F, "scale")?;
        if width == 0 || height == 0 || scale == 0.0 || !scale.is_finite() {
            return Err(fmt_err(F, "zero size or scale"));
        }
        let little = scale < 0.0;
        let raster = h.payload(F)?;
        let n = width * height * channels;
        if raster.len() < n * 4 {
            return Err(fmt_err(F, format!("raster has {} bytes, need {}", raster.len(), n * 4)));
        }
        let row = width * channels;
        let mut data = vec![0f32; n];
        for (k, chunk) in raster[..n * 4].chunks_exact(4).enumerate() {
            let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
            // stored bottom row first
            let (r, c) = (k / row, k % row);
            data[(height - 1 - r) * row + c] = v;
        }
        Ok(Pfm {
            width,
            height,
            channels,
            data,
        })
    }
}

pub fn encode_scalar_pfm(field: &ScalarField) -> Vec<u8> {
    Pfm {
        width: field.width(),
        height: field.height(),
        channels: 1,
        data: field.data().iter().map(|&v| v as f32).collect(),
    }
    .encode()
}

pub fn decode_scalar_pfm(bytes: &[u8]) -> Result<ScalarField> {
    let pfm = Pfm::decode(bytes)?;
    if pfm.channels != 1 {
        return Err(fmt_err("PFM", "expected single-channel Pf"));
    }
    ScalarField::new(pfm.width, pfm.height, pfm.data.iter().map(|&v| v as f64).collect())
}

pub fn encode_vector_pfm(field: &VectorField) -> Vec<u8> {
    Pfm {
        width: field.width(),
        height: field.height(),
        channels: 3,
        data: field
            .data()
            .iter()
            .flat_map(|v| [v.x as f32, v.y as f32, v.z as f32])
            .collect(),
    }
    .encode()
}

pub fn decode_vector_pfm(bytes: &[u8]) -> Result<VectorField> {
    let pfm = Pfm::decode(bytes)?;
    if pfm.channels != 3 {
        return Err(fmt_err("PFM", "expected three-channel PF"));
    }
    let data = pfm
        .data
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
        .collect();
    VectorField::new(pfm.width, pfm.height, data)
}

pub fn write_scalar_pfm(path: impl AsRef<Path>, field: &ScalarField) -> Result<()> {
    write_all(path.as_ref(), &encode_scalar_pfm(field))
}

pub fn read_scalar_pfm(path: impl AsRef<Path>) -> Result<ScalarField> {
    decode_scalar_pfm(&read_all(path.as_ref())?)
}

pub fn write_vector_pfm(path: impl AsRef<Path>, field: &VectorField) -> Result<()> {
    write_all(path.as_ref(), &encode_vector_pfm(field))
}

pub fn read_vector_pfm(path: impl AsRef<Path>) -> Result<VectorField> {
    decode_vector_pfm(&read_all(path.as_ref())?)
}

fn decode_netpbm<'a>(bytes: &'a [u8], magic: &str, format: &'static str) -> Result<(usize, usize, &'a [u8])> {
    let mut h = HeaderReader::new(bytes);
    let m = h.token(format)?;
    if m != magic {
        return Err(fmt_err(format, format!("bad magic {m:?}, expected {magic}")));
    }
    let width: usize = h.number(format, "width")?;
    let height: usize = h.number(format, "height")?;
    let maxval: u32 = h.number(format, "maxval")?;
    if maxval != 255 {
        return Err(fmt_err(format, format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(fmt_err(format, "zero size"));
    }
    Ok((width, height, h.payload(format)?))
}

pub fn encode_pgm_mask(mask: &RegionMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

/// Any non-zero sample counts as set.
pub fn decode_pgm_mask(bytes: &[u8], label: RegionLabel) -> Result<RegionMask> {
    let (w, h, raster) = decode_netpbm(bytes, "P5", "PGM")?;
    if raster.len() < w * h {
        return Err(fmt_err("PGM", "truncated raster"));
    }
    RegionMask::new(w, h, raster[..w * h].iter().map(|&b| b != 0).collect(), label)
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    for px in img.data() {
        for c in px {
            out.push((c * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let (w, h, raster) = decode_netpbm(bytes, "P6", "PPM")?;
    if raster.len() < w * h * 3 {
        return Err(fmt_err("PPM", "truncated raster"));
    }
    let data = raster[..w * h * 3]
        .chunks_exact(3)
        .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
        .collect();
    Image::new(w, h, data)
}

pub fn write_pgm_mask(path: impl AsRef<Path>, mask: &RegionMask) -> Result<()> {
    write_all(path.as_ref(), &encode_pgm_mask(mask))
}

pub fn read_pgm_mask(path: impl AsRef<Path>, label: RegionLabel) -> Result<RegionMask> {
    decode_pgm_mask(&read_all(path.as_ref())?, label)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    write_all(path.as_ref(), &encode_ppm(img))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    decode_ppm(&read_all(path.as_ref())?)
}
