//! Raster files: binary 8-bit PGM for images, masks and label maps, and a
//! little-endian `f64` raster for lossless intermediates.
//!
//! The float raster layout is a 16-byte header followed by `width × height`
//! row-major `f64` values:
//!
//! | bytes  | content                       |
//! |--------|-------------------------------|
//! | 0..8   | magic `b"JSEGF64\0"`          |
//! | 8..12  | width, `u32` little-endian    |
//! | 12..16 | height, `u32` little-endian   |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::model::IndicatorSet;

pub const RASTER_MAGIC: [u8; 8] = *b"JSEGF64\0";

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Splits a P5 header into its four tokens and the offset of the pixel data.
fn pgm_header(bytes: &[u8], path: &Path) -> Result<([usize; 3], usize)> {
    let mut pos = 0;
    let mut tokens: Vec<String> = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated PGM header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if tokens[0] != "P5" {
        return Err(format_err(
            path,
            format!("expected binary PGM (P5), found magic {:?}", tokens[0]),
        ));
    }
    let mut nums = [0usize; 3];
    for (n, t) in nums.iter_mut().zip(&tokens[1..]) {
        *n = t
            .parse()
            .map_err(|_| format_err(path, format!("bad PGM header field {t:?}")))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(format_err(path, "PGM header not terminated"));
    }
    Ok((nums, pos + 1))
}

fn read_pgm_bytes(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ([w, h, maxval], offset) = pgm_header(&bytes, path)?;
    if w == 0 || h == 0 {
        return Err(format_err(path, "PGM has a zero dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(format_err(
            path,
            format!("only 8-bit PGM is supported (maxval {maxval})"),
        ));
    }
    let data = &bytes[offset..];
    if data.len() < w * h {
        return Err(format_err(
            path,
            format!("expected {} pixel bytes, found {}", w * h, data.len()),
        ));
    }
    Ok((w, h, data[..w * h].to_vec()))
}

/// Pixel values as read, in `[0, maxval]`.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<ScalarField> {
    let path = path.as_ref();
    let (w, h, data) = read_pgm_bytes(path)?;
    ScalarField::new(w, h, data.into_iter().map(f64::from).collect())
}

fn write_pgm_bytes(path: &Path, w: usize, h: usize, data: &[u8]) -> Result<()> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(data);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Rounds to the nearest integer and clamps to `[0, 255]`, so values already
/// in range survive within half a quantization step.
pub fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn write_pgm(path: impl AsRef<Path>, field: &ScalarField) -> Result<()> {
    let data: Vec<u8> = field.values().iter().map(|v| quantize(*v)).collect();
    write_pgm_bytes(path.as_ref(), field.width(), field.height(), &data)
}

/// A 0/1 mask written as 0/255.
pub fn write_mask(path: impl AsRef<Path>, mask: &ScalarField) -> Result<()> {
    let data: Vec<u8> = mask
        .values()
        .iter()
        .map(|v| if *v > 0.5 { 255 } else { 0 })
        .collect();
    write_pgm_bytes(path.as_ref(), mask.width(), mask.height(), &data)
}

/// Any nonzero pixel counts as inside.
pub fn read_mask(path: impl AsRef<Path>) -> Result<ScalarField> {
    Ok(read_pgm(path)?.map(|v| if v > 0.0 { 1.0 } else { 0.0 }))
}

/// Pixel value = phase index.
pub fn write_labels(path: impl AsRef<Path>, u: &IndicatorSet) -> Result<()> {
    let path = path.as_ref();
    if u.n_phases() > 256 {
        return Err(format_err(path, "an 8-bit label map holds at most 256 phases"));
    }
    let data: Vec<u8> = u.labels().iter().map(|l| *l as u8).collect();
    write_pgm_bytes(path, u.width(), u.height(), &data)
}

/// Reads an index map; `n_phases` must exceed every stored index.
pub fn read_labels(path: impl AsRef<Path>, n_phases: usize) -> Result<IndicatorSet> {
    let path = path.as_ref();
    let (w, h, data) = read_pgm_bytes(path)?;
    if let Some(&m) = data.iter().max() {
        if m as usize >= n_phases {
            return Err(format_err(
                path,
                format!("label {m} does not fit {n_phases} phases"),
            ));
        }
    }
    IndicatorSet::from_labels(w, h, n_phases, data.into_iter().map(u16::from).collect())
}

pub fn write_raster(path: impl AsRef<Path>, field: &ScalarField) -> Result<()> {
    let path = path.as_ref();
    let dim = |n: usize| {
        u32::try_from(n).map_err(|_| format_err(path, "raster dimension exceeds u32"))
    };
    let mut out = Vec::with_capacity(16 + 8 * field.len());
    out.extend_from_slice(&RASTER_MAGIC);
    out.extend_from_slice(&dim(field.width())?.to_le_bytes());
    out.extend_from_slice(&dim(field.height())?.to_le_bytes());
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<ScalarField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || bytes[..8] != RASTER_MAGIC {
        return Err(format_err(path, "not a float raster (bad magic)"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (w, h) = (word(8), word(12));
    let body = &bytes[16..];
    if body.len() != 8 * w * h {
        return Err(format_err(
            path,
            format!("{w}x{h} raster needs {} data bytes, found {}", 8 * w * h, body.len()),
        ));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ScalarField::new(w, h, data).map_err(|e| format_err(path, e.to_string()))
}
