//! Binary dataset container: magic `UOSD`, version u32, N u64, L u64, then the
//! N vectors as row-major f64. All integers and floats are little-endian.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::Dataset;

pub const MAGIC: &[u8; 4] = b"UOSD";
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 4 + 4 + 8 + 8;

pub fn encode_dataset(data: &Dataset) -> Vec<u8> {
    let (n, l) = (data.len(), data.dim());
    let mut out = Vec::with_capacity(PREAMBLE + 8 * n * l);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(l as u64).to_le_bytes());
    // Columns of the L×N matrix are the rows of the file.
    for v in data.matrix().as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_dataset(bytes: &[u8], origin: &str) -> Result<Dataset> {
    let bad = |msg: String| Error::Input(format!("{origin}: {msg}"));
    if bytes.len() < PREAMBLE {
        return Err(bad(format!("{} bytes is too short for a dataset header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("missing UOSD magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported dataset version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let l = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
    let expected = n
        .checked_mul(l)
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(PREAMBLE));
    if expected != Some(bytes.len()) {
        return Err(bad(format!(
            "header declares N = {n}, L = {l} but the payload is {} bytes",
            bytes.len() - PREAMBLE
        )));
    }
    let values: Vec<f64> = bytes[PREAMBLE..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Dataset::from_columns(DMatrix::from_vec(l, n, values))
}

pub fn write_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_dataset(data)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes, &path.display().to_string())
}
