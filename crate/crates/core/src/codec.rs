//! PFM and ASCII PLY codecs.
//!
//! PFM files store rows bottom-to-top; the flip happens here and nowhere else.
//! Writing always produces little-endian payloads (scale `-1.0`); reading accepts
//! either endianness.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::raster::{Grid2D, PointCloud, Unit};

/// Decodes a single-channel PFM. Returns the grid (top-left origin) and the header scale.
pub fn read_pfm(bytes: &[u8]) -> Result<(Grid2D, f64)> {
    let mut cursor = HeaderCursor { bytes, pos: 0 };
    match cursor.token()? {
        "Pf" => {}
        "PF" => return Err(Error::UnsupportedChannels),
        other => return Err(Error::MalformedPfm(format!("unknown magic {other:?}"))),
    }
    let width: usize = cursor.parse("width")?;
    let height: usize = cursor.parse("height")?;
    let scale: f64 = cursor.parse("scale")?;
    // Exactly one whitespace byte separates the header from the payload.
    match bytes.get(cursor.pos) {
        Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
        _ => return Err(Error::MalformedPfm("missing separator after scale".into())),
    }
    if width == 0 || height == 0 {
        return Err(Error::MalformedPfm(format!("empty raster {width}x{height}")));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::MalformedPfm(format!("invalid scale {scale}")));
    }

    let payload = &bytes[cursor.pos..];
    let expected = width * height * 4;
    if payload.len() != expected {
        return Err(Error::MalformedPfm(format!(
            "{width}x{height} needs {expected} payload bytes, found {}",
            payload.len()
        )));
    }

    let little = scale < 0.0;
    let mut values = vec![0.0; width * height];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let file_row = k / width;
        let x = k % width;
        let y = height - 1 - file_row;
        values[y * width + x] = v as f64;
    }
    Ok((Grid2D::new(width, height, values, Unit::Dimensionless)?, scale))
}

/// Encodes a grid as little-endian single-channel PFM.
pub fn write_pfm(grid: &Grid2D) -> Result<Vec<u8>> {
    let (width, height) = grid.dims();
    if let Some(i) = grid.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidPixel {
            x: i % width,
            y: i / width,
            value: grid.values()[i],
            reason: "PFM payload must be finite",
        });
    }
    let header = format!("Pf\n{width} {height}\n-1.0\n");
    let mut out = Vec::with_capacity(header.len() + width * height * 4);
    out.extend_from_slice(header.as_bytes());
    for y in (0..height).rev() {
        for x in 0..width {
            out.extend_from_slice(&(grid.get(x, y) as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_ply_ascii(cloud: &PointCloud) -> Vec<u8> {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for [x, y, z] in cloud.points() {
        let _ = writeln!(out, "{x} {y} {z}");
    }
    out.into_bytes()
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn token(&mut self) -> Result<&'a str> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::MalformedPfm("truncated header".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::MalformedPfm("non-ASCII header".into()))
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| Error::MalformedPfm(format!("bad {what}: {tok:?}")))
    }
}
