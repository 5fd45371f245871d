//! Binary formats: bit-packed color maps and raw segment id maps.
//!
//! Packed map: `"QNQ1"`, u32 LE width, u32 LE height, u8 bits per code,
//! then codes MSB-first in one bitstream, zero-padded to a byte boundary.
//!
//! Label map: `"SEG1"`, u32 LE width, u32 LE height, then one u32 LE id per
//! pixel in row-major order.

use crate::error::{QnqError, Result};
use crate::naming::{ColorMap, COARSE_LEVELS, FINE_LEVELS};
use crate::segmentation::LabelMap;

pub const MAP_MAGIC: &[u8; 4] = b"QNQ1";
pub const MAP_HEADER_BYTES: usize = 13;
pub const LABEL_MAGIC: &[u8; 4] = b"SEG1";
pub const LABEL_HEADER_BYTES: usize = 12;

pub fn bits_for_levels(levels: usize) -> Result<u8> {
    match levels {
        FINE_LEVELS => Ok(6),
        COARSE_LEVELS => Ok(4),
        _ => Err(QnqError::invalid(format!(
            "packed maps hold {FINE_LEVELS} or {COARSE_LEVELS} levels, got {levels}"
        ))),
    }
}

fn levels_for_bits(bits: u8) -> Option<usize> {
    match bits {
        6 => Some(FINE_LEVELS),
        4 => Some(COARSE_LEVELS),
        _ => None,
    }
}

pub fn packed_len(pixels: usize, bits: u8) -> usize {
    MAP_HEADER_BYTES + (pixels * usize::from(bits)).div_ceil(8)
}

fn header(magic: &[u8; 4], width: usize, height: usize) -> Result<Vec<u8>> {
    let (w, h) = match (u32::try_from(width), u32::try_from(height)) {
        (Ok(w), Ok(h)) => (w, h),
        _ => return Err(QnqError::capacity("dimensions exceed u32")),
    };
    let mut out = magic.to_vec();
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    Ok(out)
}

fn read_header(bytes: &[u8], magic: &[u8; 4]) -> Result<(usize, usize)> {
    if bytes.len() < 12 {
        return Err(QnqError::format("truncated header"));
    }
    if &bytes[..4] != magic {
        return Err(QnqError::format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if w == 0 || h == 0 {
        return Err(QnqError::format("zero dimension in header"));
    }
    Ok((w, h))
}

pub fn pack_colormap(map: &ColorMap) -> Result<Vec<u8>> {
    let bits = bits_for_levels(map.levels())?;
    let mut out = header(MAP_MAGIC, map.width(), map.height())?;
    out.push(bits);
    out.reserve(packed_len(map.codes().len(), bits) - MAP_HEADER_BYTES);
    let limit = 1u32 << bits;
    let mut acc = 0u32;
    let mut filled = 0u8;
    for &c in map.codes() {
        if u32::from(c) >= limit {
            return Err(QnqError::integrity(format!("code {c} does not fit {bits} bits")));
        }
        acc = (acc << bits) | u32::from(c);
        filled += bits;
        while filled >= 8 {
            filled -= 8;
            out.push((acc >> filled) as u8);
        }
        acc &= (1 << filled) - 1;
    }
    if filled > 0 {
        out.push((acc << (8 - filled)) as u8);
    }
    Ok(out)
}

pub fn unpack_colormap(bytes: &[u8]) -> Result<ColorMap> {
    let (w, h) = read_header(bytes, MAP_MAGIC)?;
    let bits = *bytes
        .get(12)
        .ok_or_else(|| QnqError::format("truncated header"))?;
    let levels = levels_for_bits(bits)
        .ok_or_else(|| QnqError::format(format!("unsupported code width {bits}")))?;
    let n = w
        .checked_mul(h)
        .ok_or_else(|| QnqError::format("dimensions overflow"))?;
    let expected = packed_len(n, bits);
    if bytes.len() < expected {
        return Err(QnqError::format(format!(
            "truncated payload: {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(QnqError::format("trailing bytes after payload"));
    }
    let payload = &bytes[MAP_HEADER_BYTES..];
    let mut codes = Vec::with_capacity(n);
    let mut acc = 0u32;
    let mut avail = 0u8;
    let mask = (1u32 << bits) - 1;
    let mut iter = payload.iter();
    while codes.len() < n {
        while avail < bits {
            acc = (acc << 8) | u32::from(*iter.next().expect("length checked"));
            avail += 8;
        }
        avail -= bits;
        let code = ((acc >> avail) & mask) as u8;
        acc &= (1 << avail) - 1;
        if usize::from(code) >= levels {
            return Err(QnqError::format(format!("code {code} out of range for {levels} levels")));
        }
        codes.push(code);
    }
    ColorMap::new(w, h, levels, codes)
}

pub fn encode_labels(labels: &LabelMap) -> Result<Vec<u8>> {
    let mut out = header(LABEL_MAGIC, labels.width(), labels.height())?;
    out.reserve(labels.labels().len() * 4);
    for &l in labels.labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_labels(bytes: &[u8]) -> Result<LabelMap> {
    let (w, h) = read_header(bytes, LABEL_MAGIC)?;
    let n = w
        .checked_mul(h)
        .ok_or_else(|| QnqError::format("dimensions overflow"))?;
    if bytes.len() != LABEL_HEADER_BYTES + 4 * n {
        return Err(QnqError::format(format!(
            "label payload is {} bytes, expected {}",
            bytes.len() - LABEL_HEADER_BYTES,
            4 * n
        )));
    }
    let labels = bytes[LABEL_HEADER_BYTES..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    LabelMap::new(w, h, labels).map_err(|e| QnqError::format(e.to_string()))
}
