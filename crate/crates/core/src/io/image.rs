//! PFM depth rasters and binary PGM masks.
//!
//! PFM rows are stored bottom-to-top. Invalid depth is written as `0.0`; on
//! read any value `<= 0` or non-finite is invalid. Depth is stored as `f32`.

use std::path::Path;

use super::{read_bytes, write_bytes, IoError, Result};
use crate::depth::DepthFrame;
use crate::tracks::ToolMask;

/// Splits `count` whitespace-separated header tokens off the front of `bytes`
/// (skipping `#` comments), returning them and the offset of the payload.
fn header_tokens(bytes: &[u8], count: usize, path: &Path) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(IoError::format(path, "truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the payload.
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(IoError::format(path, "missing payload"));
    }
    Ok((tokens, i + 1))
}

fn parse_dim(token: &str, path: &Path) -> Result<usize> {
    token.parse().map_err(|_| IoError::format(path, format!("bad dimension {token:?}")))
}

pub fn pfm_bytes(frame: &DepthFrame) -> Vec<u8> {
    let (w, h) = (frame.width(), frame.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for row in (0..h).rev() {
        for col in 0..w {
            let i = row * w + col;
            let v = if frame.valid()[i] { frame.values()[i] as f32 } else { 0.0 };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_pfm(path: &Path, frame: &DepthFrame) -> Result<()> {
    write_bytes(path, &pfm_bytes(frame))
}

pub fn parse_pfm(bytes: &[u8], path: &Path) -> Result<DepthFrame> {
    let (tok, offset) = header_tokens(bytes, 4, path)?;
    match tok[0].as_str() {
        "Pf" => {}
        "PF" => return Err(IoError::format(path, "colour PFM is not a depth map")),
        other => return Err(IoError::format(path, format!("not a PFM file (magic {other:?})"))),
    }
    let w = parse_dim(&tok[1], path)?;
    let h = parse_dim(&tok[2], path)?;
    let scale: f64 = tok[3].parse().map_err(|_| IoError::format(path, "bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(IoError::format(path, "scale must be non-zero"));
    }
    let little = scale < 0.0;
    let payload = &bytes[offset..];
    if payload.len() != w * h * 4 {
        return Err(IoError::format(path, format!("expected {} payload bytes, found {}", w * h * 4, payload.len())));
    }
    let mut values = vec![0.0; w * h];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (row_from_bottom, col) = (k / w, k % w);
        values[(h - 1 - row_from_bottom) * w + col] = v as f64;
    }
    DepthFrame::new(w, h, values).map_err(|e| IoError::format(path, e.to_string()))
}

pub fn read_pfm(path: &Path) -> Result<DepthFrame> {
    parse_pfm(&read_bytes(path)?, path)
}

/// Binary 8-bit PGM; `true` pixels are written as 255.
pub fn pgm_bytes(width: usize, height: usize, on: &[bool]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(on.iter().map(|b| if *b { 255u8 } else { 0 }));
    out
}

pub fn write_pgm(path: &Path, width: usize, height: usize, on: &[bool]) -> Result<()> {
    write_bytes(path, &pgm_bytes(width, height, on))
}

/// Reads a binary PGM and thresholds it: value > 127 (or above half of
/// `maxval` for other depths) is `true`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let bytes = read_bytes(path)?;
    let (tok, offset) = header_tokens(&bytes, 4, path)?;
    if tok[0] != "P5" {
        return Err(IoError::format(path, format!("not a binary PGM (magic {:?})", tok[0])));
    }
    let w = parse_dim(&tok[1], path)?;
    let h = parse_dim(&tok[2], path)?;
    let maxval: u32 = tok[3].parse().map_err(|_| IoError::format(path, "bad maxval"))?;
    if maxval == 0 || maxval > 65535 {
        return Err(IoError::format(path, "maxval out of range"));
    }
    let threshold = if maxval == 255 { 127 } else { maxval / 2 };
    let payload = &bytes[offset..];
    let wide = maxval > 255;
    let need = w * h * if wide { 2 } else { 1 };
    if payload.len() != need {
        return Err(IoError::format(path, format!("expected {need} payload bytes, found {}", payload.len())));
    }
    let on = if wide {
        payload.chunks_exact(2).map(|c| u32::from(u16::from_be_bytes([c[0], c[1]])) > threshold).collect()
    } else {
        payload.iter().map(|v| u32::from(*v) > threshold).collect()
    };
    Ok((w, h, on))
}

pub fn write_tool_mask(path: &Path, mask: &ToolMask) -> Result<()> {
    write_pgm(path, mask.width, mask.height, mask.tool())
}

pub fn read_tool_mask(path: &Path, frame: usize) -> Result<ToolMask> {
    let (w, h, on) = read_pgm(path)?;
    ToolMask::new(w, h, frame, on).map_err(|e| IoError::format(path, e.to_string()))
}

/// Depth from a PFM, optionally intersected with a PGM validity mask.
pub fn read_depth(pfm: &Path, validity: Option<&Path>) -> Result<DepthFrame> {
    let frame = read_pfm(pfm)?;
    let Some(mask_path) = validity else { return Ok(frame) };
    let (w, h, on) = read_pgm(mask_path)?;
    if (w, h) != (frame.width(), frame.height()) {
        return Err(IoError::format(mask_path, format!("mask is {w}x{h}, depth is {}x{}", frame.width(), frame.height())));
    }
    let valid = frame.valid().iter().zip(&on).map(|(a, b)| *a && *b).collect();
    DepthFrame::with_mask(w, h, frame.values().to_vec(), valid).map_err(|e| IoError::format(pfm, e.to_string()))
}
