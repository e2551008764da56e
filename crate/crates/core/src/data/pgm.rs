use std::path::Path;

use crate::error::{Error, Result};

/// A binary greymap. `maxval <= 255` stores one byte per pixel, larger
/// values two bytes big-endian.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PgmGrid {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub values: Vec<u16>,
}

fn parse_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse(msg.into()))
}

pub fn encode_pgm(grid: &PgmGrid) -> Result<Vec<u8>> {
    if grid.values.len() != grid.width * grid.height || grid.maxval == 0 {
        return parse_err("grid size does not match its header");
    }
    if grid.values.iter().any(|&v| v > grid.maxval) {
        return parse_err("grid value exceeds maxval");
    }
    let mut out = format!("P5\n{} {}\n{}\n", grid.width, grid.height, grid.maxval).into_bytes();
    for &v in &grid.values {
        if grid.maxval > 255 {
            out.extend_from_slice(&v.to_be_bytes());
        } else {
            out.push(v as u8);
        }
    }
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<PgmGrid> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return parse_err("not a binary PGM (missing P5 magic)");
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments between header tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return parse_err("malformed PGM header");
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse("PGM header value out of range".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return parse_err("malformed PGM header");
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return parse_err(format!("unsupported PGM header {width}x{height} maxval {maxval}"));
    }
    let wide = maxval > 255;
    let need = width * height * if wide { 2 } else { 1 };
    let payload = &bytes[pos..];
    if payload.len() != need {
        return parse_err(format!("PGM payload has {} bytes, expected {need}", payload.len()));
    }
    let values: Vec<u16> = if wide {
        payload.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        payload.iter().map(|&b| b as u16).collect()
    };
    if values.iter().any(|&v| v as usize > maxval) {
        return parse_err("PGM value exceeds maxval");
    }
    Ok(PgmGrid {
        width,
        height,
        maxval: maxval as u16,
        values,
    })
}

pub fn write_pgm(path: &Path, grid: &PgmGrid) -> Result<()> {
    std::fs::write(path, encode_pgm(grid)?)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<PgmGrid> {
    decode_pgm(&std::fs::read(path)?)
}
