//! Image and field files.
//!
//! Scalar images are read from binary PGM (`P5`, maxval 255 or 65535) and
//! rescaled to `[0, 1]`. Fields of any order go to a raw container:
//!
//! ```text
//! "TDVF" | u32 version = 1 | u32 height | u32 width | u32 order | f64 data...
//! ```
//!
//! with every number little-endian and the data in the [`TensorField`] layout.

use std::fs;
use std::path::Path;

use crate::error::{Result, TdvError};
use crate::tensor::{components, Grid, TensorField};

pub const TDVF_MAGIC: &[u8; 4] = b"TDVF";
pub const TDVF_VERSION: u32 = 1;

/// Reads a binary PGM as an order-0 field with values in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<TensorField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| TdvError::io(path, e))?;
    decode_pgm(&bytes).map_err(|reason| TdvError::format(path, reason))
}

/// Reads either a PGM image or a TDVF container, told apart by magic bytes.
pub fn load_field(path: impl AsRef<Path>) -> Result<TensorField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| TdvError::io(path, e))?;
    let decoded = if bytes.starts_with(TDVF_MAGIC) {
        decode_tdvf(&bytes)
    } else {
        decode_pgm(&bytes)
    };
    decoded.map_err(|reason| TdvError::format(path, reason))
}

/// Writes `field`. Paths ending in `.pgm` get an 8-bit PGM (order 0 only,
/// values clamped to `[0, 1]`); anything else gets a TDVF container.
pub fn save_field(path: impl AsRef<Path>, field: &TensorField) -> Result<()> {
    let path = path.as_ref();
    let is_pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let bytes = if is_pgm {
        if field.order() != 0 {
            return Err(TdvError::Rank(format!(
                "PGM holds scalar images only; field has order {}",
                field.order()
            )));
        }
        encode_pgm(field)
    } else {
        encode_tdvf(field)
    };
    fs::write(path, bytes).map_err(|e| TdvError::io(path, e))
}

/// 8-bit P5 encoding of a scalar field.
pub fn encode_pgm(field: &TensorField) -> Vec<u8> {
    let g = field.grid();
    let mut out = format!("P5\n{} {}\n255\n", g.width(), g.height()).into_bytes();
    out.extend(
        field
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<TensorField, String> {
    if !bytes.starts_with(b"P5") {
        return Err("not a binary PGM (expected magic P5)".into());
    }
    let mut pos = 2;
    let mut header = [0usize; 3];
    for slot in header.iter_mut() {
        *slot = next_header_number(bytes, &mut pos)?;
    }
    let [width, height, maxval] = header;
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("malformed header".into());
    }
    pos += 1;
    let sample = match maxval {
        255 => 1,
        65535 => 2,
        m => return Err(format!("unsupported maxval {m}")),
    };
    let grid = Grid::new(height, width).map_err(|e| e.to_string())?;
    let need = grid.pixels() * sample;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(format!("truncated payload: {} of {need} bytes", payload.len()));
    }
    let scale = maxval as f64;
    let data = payload[..need]
        .chunks_exact(sample)
        .map(|c| match c {
            [b] => *b as f64 / scale,
            [hi, lo] => u16::from_be_bytes([*hi, *lo]) as f64 / scale,
            _ => unreachable!(),
        })
        .collect();
    TensorField::from_data(grid, 0, data).map_err(|e| e.to_string())
}

fn next_header_number(bytes: &[u8], pos: &mut usize) -> std::result::Result<usize, String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|b| *b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err("truncated header".into()),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| b.is_ascii_digit()) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| "malformed header".to_string())
}

pub fn encode_tdvf(field: &TensorField) -> Vec<u8> {
    let g = field.grid();
    let mut out = Vec::with_capacity(20 + 8 * field.data().len());
    out.extend_from_slice(TDVF_MAGIC);
    for v in [TDVF_VERSION, g.height() as u32, g.width() as u32, field.order() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in field.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tdvf(bytes: &[u8]) -> std::result::Result<TensorField, String> {
    if bytes.len() < 20 || &bytes[..4] != TDVF_MAGIC {
        return Err("not a TDVF container".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    let version = word(0);
    if version != TDVF_VERSION {
        return Err(format!("unsupported TDVF version {version} (expected {TDVF_VERSION})"));
    }
    let (height, width, order) = (word(1) as usize, word(2) as usize, word(3) as usize);
    if order > 16 {
        return Err(format!("implausible order {order}"));
    }
    let grid = Grid::new(height, width).map_err(|e| e.to_string())?;
    let count = grid.pixels() * components(order);
    let payload = &bytes[20..];
    if payload.len() != 8 * count {
        return Err(format!("payload holds {} bytes, expected {}", payload.len(), 8 * count));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    TensorField::from_data(grid, order, data).map_err(|e| e.to_string())
}
