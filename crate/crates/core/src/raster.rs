//! Flat multi-band raster container and file formats.
//!
//! Values are f32, band-major `(C, H, W)`. Two formats are supported:
//!
//! - `PTRS`: the native binary raster. Little-endian header
//!   `magic "PTRS" | version u8 | dtype u8 | reserved u16 | C u32 | H u32 |
//!   W u32` followed by `C*H*W` f32 values, band-major. Round-trips are
//!   bit-exact.
//! - PGM (`P5`): single-band import (8-bit and 16-bit big-endian, scaled by
//!   maxval to `[0,1]`) and 8-bit export with round-half-away-from-zero.

use crate::tensor::{Shape, Tensor};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const PTRS_MAGIC: &[u8; 4] = b"PTRS";
pub const PTRS_VERSION: u8 = 1;
pub const PTRS_DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected \"PTRS\"")]
    BadMagic,
    #[error("unsupported PTRS version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported PTRS dtype {0}")]
    UnsupportedDtype(u8),
    #[error("file truncated or oversized: expected {want} data bytes, found {got}")]
    DataSize { want: usize, got: usize },
    #[error("raster dims must be non-zero, got {c}x{h}x{w}")]
    ZeroDim { c: usize, h: usize, w: usize },
    #[error("data length {got} does not match {c}x{h}x{w} = {want}")]
    DataLength { c: usize, h: usize, w: usize, want: usize, got: usize },
    #[error("PGM parse error: {0}")]
    Pgm(String),
    #[error("band index {band} out of range ({bands} bands)")]
    BandRange { band: usize, bands: usize },
}

/// A multi-band image: `bands` planes of `h x w` f32 values, band-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    pub bands: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl RasterImage {
    pub fn new(bands: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self, RasterError> {
        if bands == 0 || h == 0 || w == 0 {
            return Err(RasterError::ZeroDim { c: bands, h, w });
        }
        let want = bands * h * w;
        if data.len() != want {
            return Err(RasterError::DataLength { c: bands, h, w, want, got: data.len() });
        }
        Ok(RasterImage { bands, h, w, data })
    }

    pub fn zeros(bands: usize, h: usize, w: usize) -> Self {
        RasterImage { bands, h, w, data: vec![0.0; bands * h * w] }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let p = self.plane();
        &self.data[b * p..(b + 1) * p]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f32] {
        let p = self.plane();
        &mut self.data[b * p..(b + 1) * p]
    }

    /// Clamp every value into `[lo, hi]`.
    pub fn clamp(&mut self, lo: f32, hi: f32) {
        for v in self.data.iter_mut() {
            *v = v.clamp(lo, hi);
        }
    }

    /// View as a batch-1 tensor `(1, C, H, W)`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(Shape::new(1, self.bands, self.h, self.w), self.data.clone(), false)
            .expect("raster data length matches its dims")
    }

    /// Stack images with identical dims into a `(B, C, H, W)` tensor.
    pub fn stack_to_tensor(images: &[&RasterImage]) -> Result<Tensor, RasterError> {
        let first = images.first().expect("at least one image");
        let (c, h, w) = (first.bands, first.h, first.w);
        let mut data = Vec::with_capacity(images.len() * c * h * w);
        for img in images {
            if img.bands != c || img.h != h || img.w != w {
                return Err(RasterError::DataLength {
                    c,
                    h,
                    w,
                    want: c * h * w,
                    got: img.data.len(),
                });
            }
            data.extend_from_slice(&img.data);
        }
        Ok(Tensor::from_vec(Shape::new(images.len(), c, h, w), data, false)
            .expect("stacked length matches"))
    }

    /// Split a `(B, C, H, W)` tensor back into per-batch rasters.
    pub fn from_tensor(t: &Tensor) -> Vec<RasterImage> {
        let sh = t.shape();
        let per = sh.c * sh.h * sh.w;
        (0..sh.b)
            .map(|b| RasterImage {
                bands: sh.c,
                h: sh.h,
                w: sh.w,
                data: t.data()[b * per..(b + 1) * per].to_vec(),
            })
            .collect()
    }

    // ----- PTRS -------------------------------------------------------------

    pub fn write_ptrs(&self, path: &Path) -> Result<(), RasterError> {
        let mut buf = Vec::with_capacity(20 + self.data.len() * 4);
        buf.extend_from_slice(PTRS_MAGIC);
        buf.push(PTRS_VERSION);
        buf.push(PTRS_DTYPE_F32);
        buf.extend_from_slice(&0u16.to_le_bytes());
        buf.extend_from_slice(&(self.bands as u32).to_le_bytes());
        buf.extend_from_slice(&(self.h as u32).to_le_bytes());
        buf.extend_from_slice(&(self.w as u32).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn read_ptrs(path: &Path) -> Result<Self, RasterError> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_ptrs_bytes(&bytes)
    }

    pub fn from_ptrs_bytes(bytes: &[u8]) -> Result<Self, RasterError> {
        if bytes.len() < 20 {
            return Err(RasterError::DataSize { want: 20, got: bytes.len() });
        }
        if &bytes[0..4] != PTRS_MAGIC {
            return Err(RasterError::BadMagic);
        }
        if bytes[4] != PTRS_VERSION {
            return Err(RasterError::UnsupportedVersion(bytes[4]));
        }
        if bytes[5] != PTRS_DTYPE_F32 {
            return Err(RasterError::UnsupportedDtype(bytes[5]));
        }
        let c = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        if c == 0 || h == 0 || w == 0 {
            return Err(RasterError::ZeroDim { c, h, w });
        }
        let want = c * h * w * 4;
        if bytes.len() - 20 != want {
            return Err(RasterError::DataSize { want, got: bytes.len() - 20 });
        }
        let mut data = Vec::with_capacity(c * h * w);
        for chunk in bytes[20..].chunks_exact(4) {
            data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        Ok(RasterImage { bands: c, h, w, data })
    }

    // ----- PGM --------------------------------------------------------------

    /// Read a binary PGM (`P5`), 8-bit or 16-bit big-endian, as a single-band
    /// raster scaled to `[0,1]`.
    pub fn read_pgm(path: &Path) -> Result<Self, RasterError> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_pgm_bytes(&bytes)
    }

    pub fn from_pgm_bytes(bytes: &[u8]) -> Result<Self, RasterError> {
        let mut pos = 0usize;
        let mut next_token = |bytes: &[u8]| -> Result<String, RasterError> {
            // Skip whitespace and '#' comments.
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(RasterError::Pgm("unexpected end of header".into()));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };

        let magic = next_token(bytes)?;
        if magic != "P5" {
            return Err(RasterError::Pgm(format!("expected P5, got {magic}")));
        }
        let w: usize = next_token(bytes)?
            .parse()
            .map_err(|_| RasterError::Pgm("bad width".into()))?;
        let h: usize = next_token(bytes)?
            .parse()
            .map_err(|_| RasterError::Pgm("bad height".into()))?;
        let maxval: usize = next_token(bytes)?
            .parse()
            .map_err(|_| RasterError::Pgm("bad maxval".into()))?;
        if maxval == 0 || maxval > 65535 {
            return Err(RasterError::Pgm(format!("maxval {maxval} out of range")));
        }
        if w == 0 || h == 0 {
            return Err(RasterError::ZeroDim { c: 1, h, w });
        }
        // Exactly one whitespace byte separates the header from the data.
        pos += 1;
        let body = &bytes[pos.min(bytes.len())..];
        let scale = 1.0f32 / maxval as f32;
        let data: Vec<f32> = if maxval < 256 {
            if body.len() != w * h {
                return Err(RasterError::DataSize { want: w * h, got: body.len() });
            }
            body.iter().map(|&b| b as f32 * scale).collect()
        } else {
            if body.len() != w * h * 2 {
                return Err(RasterError::DataSize { want: w * h * 2, got: body.len() });
            }
            body.chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 * scale)
                .collect()
        };
        Ok(RasterImage { bands: 1, h, w, data })
    }

    /// Write one band as an 8-bit binary PGM. Values are clamped to `[0,1]`
    /// and quantized with round-half-away-from-zero.
    pub fn write_pgm(&self, band: usize, path: &Path) -> Result<(), RasterError> {
        if band >= self.bands {
            return Err(RasterError::BandRange { band, bands: self.bands });
        }
        let mut buf = Vec::with_capacity(32 + self.plane());
        buf.extend_from_slice(format!("P5\n{} {}\n255\n", self.w, self.h).as_bytes());
        for &v in self.band(band) {
            let q = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            buf.push(q);
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }
}
