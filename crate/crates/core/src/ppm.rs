//! Binary PPM (P6, maxval 255) image files.
//!
//! Pixels live in `[0, 255]` as `f64` everywhere in memory and are quantized
//! to bytes only here, at the file boundary.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::Tensor;

/// Serializes an `[H, W, 3]` tensor as P6 bytes.
pub fn encode(image: &Tensor) -> Result<Vec<u8>> {
    let shape = image.shape();
    if image.rank() != 3 || shape[2] != 3 {
        return Err(Error::shape("ppm encode", "[H, W, 3]", format!("{shape:?}")));
    }
    let (h, w) = (shape[0], shape[1]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(image.numel());
    for &v in image.data() {
        out.push(quantize(v));
    }
    Ok(out)
}

/// Parses P6 bytes into an `[H, W, 3]` tensor.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P6" {
        return Err(Error::Format("ppm: missing P6 magic".into()));
    }
    let w = parse_dim(next_token(bytes, &mut pos)?)?;
    let h = parse_dim(next_token(bytes, &mut pos)?)?;
    let maxval = parse_dim(next_token(bytes, &mut pos)?)?;
    if maxval != 255 {
        return Err(Error::Format(format!("ppm: unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from pixel data.
    pos += 1;
    let expected = h * w * 3;
    let raster = bytes
        .get(pos..pos + expected)
        .ok_or_else(|| Error::Format("ppm: truncated pixel data".into()))?;
    Tensor::from_vec(vec![h, w, 3], raster.iter().map(|&b| f64::from(b)).collect())
}

pub fn write_file(path: &Path, image: &Tensor) -> Result<()> {
    let bytes = encode(image)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Rounds and clamps one pixel component to a byte.
pub fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    // Skip whitespace and `#` comment lines.
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("ppm: truncated header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn parse_dim(token: &[u8]) -> Result<usize> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::Format("ppm: bad header field".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_byte_valued_pixels() {
        let image = Tensor::from_fn(vec![4, 5, 3], |i| ((i * 13) % 256) as f64).unwrap();
        let decoded = decode(&encode(&image).unwrap()).unwrap();
        assert_eq!(decoded, image);
    }

    #[test]
    fn quantization_rounds_and_clamps() {
        assert_eq!(quantize(-4.0), 0);
        assert_eq!(quantize(254.9), 255);
        assert_eq!(quantize(127.4), 127);
        assert_eq!(quantize(300.0), 255);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let image = Tensor::zeros(vec![4, 4, 3]);
        let mut bytes = encode(&image).unwrap();
        bytes.truncate(bytes.len() - 5);
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_wrong_magic() {
        assert!(matches!(decode(b"P5\n2 2\n255\n0000"), Err(Error::Format(_))));
    }
}
