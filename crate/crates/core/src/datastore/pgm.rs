use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes a binary (P5) PGM with 0/1 pixels stored as 0/255.
pub fn write_binary_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::shape("write_pgm", format!("{} pixels for {width}x{height}", pixels.len())));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&p| if p > 0 { 255 } else { 0 }));
    fs::write(path, out)?;
    Ok(())
}

/// Reads a P5 PGM, thresholding at half the maximum value.
pub fn read_binary_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let corrupt = |msg: &str| Error::Corrupt { path: path.to_path_buf(), line: 1, msg: msg.to_string() };
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
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
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(corrupt("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| corrupt("non-ascii header"))?.to_string());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(corrupt("not a binary PGM"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| corrupt("bad header number"));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max == 0 || max > 255 {
        return Err(corrupt("unsupported max value"));
    }
    let data = bytes.get(pos..pos + w * h).ok_or_else(|| corrupt("truncated pixel data"))?;
    Ok((w, h, data.iter().map(|&v| u8::from(2 * v as usize > max)).collect()))
}
