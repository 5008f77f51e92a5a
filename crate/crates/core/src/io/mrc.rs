//! Reader for MRC/MRCS particle stacks (modes 0, 1 and 2).
//!
//! Header words follow the MRC2014 layout: nx, ny, nz at bytes 0/4/8, mode at
//! 12, mx at 28, cella.x at 40, nsymbt at 92 and the machine stamp at 212. The
//! image data starts after the 1024-byte header and `nsymbt` bytes of extended
//! header, with x varying fastest.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use thiserror::Error;

pub const HEADER_LEN: usize = 1024;

#[derive(Debug, Error)]
pub enum MrcError {
    #[error("file is {len} bytes, shorter than the {HEADER_LEN}-byte MRC header")]
    ShortFile { len: usize },

    #[error("invalid dimensions in header words nx/ny/nz: {nx} × {ny} × {nz}")]
    InvalidDimensions { nx: i32, ny: i32, nz: i32 },

    #[error("unsupported data type in header word `mode`: {0} (supported: 0, 1, 2)")]
    UnsupportedMode(i32),

    #[error("negative extended header size in header word `nsymbt`: {0}")]
    InvalidExtendedHeader(i32),

    #[error("data region (nx·ny·nz·size + 1024 + nsymbt = {needed} bytes) exceeds file length {available}")]
    Truncated { needed: u128, available: usize },

    #[error("non-finite pixel in image {image} at offset {offset}")]
    NonFinitePixel { image: usize, offset: usize },

    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

impl ByteOrder {
    fn stamp(self) -> [u8; 4] {
        match self {
            ByteOrder::Little => [0x44, 0x44, 0x00, 0x00],
            ByteOrder::Big => [0x11, 0x11, 0x00, 0x00],
        }
    }

    fn i32_at(self, bytes: &[u8], at: usize) -> i32 {
        let b: [u8; 4] = bytes[at..at + 4].try_into().expect("4-byte slice");
        match self {
            ByteOrder::Little => i32::from_le_bytes(b),
            ByteOrder::Big => i32::from_be_bytes(b),
        }
    }

    fn f32_at(self, bytes: &[u8], at: usize) -> f32 {
        let b: [u8; 4] = bytes[at..at + 4].try_into().expect("4-byte slice");
        match self {
            ByteOrder::Little => f32::from_le_bytes(b),
            ByteOrder::Big => f32::from_be_bytes(b),
        }
    }

    fn i16_at(self, bytes: &[u8], at: usize) -> i16 {
        let b: [u8; 2] = bytes[at..at + 2].try_into().expect("2-byte slice");
        match self {
            ByteOrder::Little => i16::from_le_bytes(b),
            ByteOrder::Big => i16::from_be_bytes(b),
        }
    }
}

/// N images of identical H×W size. Each image is an H×W matrix (row = y).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    pub images: Vec<DMatrix<f64>>,
    /// Å per pixel, when the header carries a cell size.
    pub pixel_size: Option<f64>,
    pub source: String,
}

impl ImageStack {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// (H, W) of the images, or None for an empty stack.
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.images.first().map(|m| m.shape())
    }
}

fn detect_byte_order(header: &[u8]) -> ByteOrder {
    match (header[212], header[213]) {
        (0x44, 0x44) | (0x44, 0x41) => ByteOrder::Little,
        (0x11, 0x11) => ByteOrder::Big,
        (a, b) => {
            log::warn!("MRC machine stamp {a:#04x} {b:#04x} not recognized, assuming little-endian");
            ByteOrder::Little
        }
    }
}

/// Parses an in-memory MRC file.
pub fn parse_mrc(bytes: &[u8], source: impl Into<String>) -> Result<ImageStack, MrcError> {
    if bytes.len() < HEADER_LEN {
        return Err(MrcError::ShortFile { len: bytes.len() });
    }
    let order = detect_byte_order(bytes);
    let nx = order.i32_at(bytes, 0);
    let ny = order.i32_at(bytes, 4);
    let nz = order.i32_at(bytes, 8);
    let mode = order.i32_at(bytes, 12);
    let nsymbt = order.i32_at(bytes, 92);
    if nx <= 0 || ny <= 0 || nz <= 0 {
        return Err(MrcError::InvalidDimensions { nx, ny, nz });
    }
    let sample_bytes = match mode {
        0 => 1,
        1 => 2,
        2 => 4,
        other => return Err(MrcError::UnsupportedMode(other)),
    };
    if nsymbt < 0 {
        return Err(MrcError::InvalidExtendedHeader(nsymbt));
    }
    let (w, h, n) = (nx as usize, ny as usize, nz as usize);
    let needed = (w as u128) * (h as u128) * (n as u128) * sample_bytes as u128
        + HEADER_LEN as u128
        + nsymbt as u128;
    if needed > bytes.len() as u128 {
        return Err(MrcError::Truncated {
            needed,
            available: bytes.len(),
        });
    }

    let data = &bytes[HEADER_LEN + nsymbt as usize..];
    let per_image = w * h;
    let mut images = Vec::with_capacity(n);
    for z in 0..n {
        let mut img = DMatrix::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let offset = z * per_image + y * w + x;
                let v = match mode {
                    0 => data[offset] as i8 as f64,
                    1 => order.i16_at(data, 2 * offset) as f64,
                    _ => order.f32_at(data, 4 * offset) as f64,
                };
                if !v.is_finite() {
                    return Err(MrcError::NonFinitePixel {
                        image: z,
                        offset: y * w + x,
                    });
                }
                img[(y, x)] = v;
            }
        }
        images.push(img);
    }

    let mx = order.i32_at(bytes, 28);
    let cella = order.f32_at(bytes, 40) as f64;
    let pixel_size = (mx > 0 && cella > 0.0).then(|| cella / mx as f64);
    Ok(ImageStack {
        images,
        pixel_size,
        source: source.into(),
    })
}

pub fn read_mrc_stack(path: impl AsRef<Path>) -> Result<ImageStack, MrcError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| MrcError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_mrc(&bytes, path.display().to_string())
}

/// Encodes a stack as a mode-2 (32-bit float) MRC file with no extended header.
pub fn encode_mrc(stack: &ImageStack, order: ByteOrder) -> Vec<u8> {
    let (h, w) = stack.shape().unwrap_or((0, 0));
    let n = stack.len();
    let mut out = vec![0u8; HEADER_LEN];
    let put_i32 = |buf: &mut [u8], at: usize, v: i32| {
        let b = match order {
            ByteOrder::Little => v.to_le_bytes(),
            ByteOrder::Big => v.to_be_bytes(),
        };
        buf[at..at + 4].copy_from_slice(&b);
    };
    let put_f32 = |buf: &mut [u8], at: usize, v: f32| {
        let b = match order {
            ByteOrder::Little => v.to_le_bytes(),
            ByteOrder::Big => v.to_be_bytes(),
        };
        buf[at..at + 4].copy_from_slice(&b);
    };
    put_i32(&mut out, 0, w as i32);
    put_i32(&mut out, 4, h as i32);
    put_i32(&mut out, 8, n as i32);
    put_i32(&mut out, 12, 2);
    // mx, my, mz sampling equal to the image size; cell edges in Å.
    put_i32(&mut out, 28, w as i32);
    put_i32(&mut out, 32, h as i32);
    put_i32(&mut out, 36, n as i32);
    let apix = stack.pixel_size.unwrap_or(1.0) as f32;
    put_f32(&mut out, 40, apix * w as f32);
    put_f32(&mut out, 44, apix * h as f32);
    put_f32(&mut out, 48, apix * n as f32);
    for (at, axis) in [(64, 1), (68, 2), (72, 3)] {
        put_i32(&mut out, at, axis);
    }
    out[208..212].copy_from_slice(b"MAP ");
    out[212..216].copy_from_slice(&order.stamp());
    out.reserve(n * h * w * 4);
    for img in &stack.images {
        for y in 0..h {
            for x in 0..w {
                let v = img[(y, x)] as f32;
                let b = match order {
                    ByteOrder::Little => v.to_le_bytes(),
                    ByteOrder::Big => v.to_be_bytes(),
                };
                out.extend_from_slice(&b);
            }
        }
    }
    out
}

pub fn write_mrc_stack(
    path: impl AsRef<Path>,
    stack: &ImageStack,
    order: ByteOrder,
) -> Result<(), MrcError> {
    let path = path.as_ref();
    std::fs::write(path, encode_mrc(stack, order)).map_err(|source| MrcError::Io {
        path: path.to_path_buf(),
        source,
    })
}
