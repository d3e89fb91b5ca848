//! Binary PGM (P5) reading and writing, plus 8-bit heatmap scaling.

use std::fs;
use std::path::Path;

use crate::error::{ArmError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major samples, each ≤ `maxval`.
    pub pixels: Vec<u16>,
}

impl GrayImage {
    pub fn from_u8(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), width * height);
        GrayImage {
            width,
            height,
            maxval: 255,
            pixels: pixels.into_iter().map(u16::from).collect(),
        }
    }

    /// Samples scaled to `[0, 1]`.
    pub fn normalized(&self) -> Vec<f32> {
        let m = self.maxval as f32;
        self.pixels.iter().map(|&p| p as f32 / m).collect()
    }
}

pub fn encode(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.maxval < 256 {
        out.extend(img.pixels.iter().map(|&p| p as u8));
    } else {
        for &p in &img.pixels {
            out.extend_from_slice(&p.to_be_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut pos = 0;
    let mut next_token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if next_token()? != "P5" {
        return Err("not a binary PGM (P5)".into());
    }
    let mut num = |what: &str| -> std::result::Result<usize, String> {
        next_token()?
            .parse::<usize>()
            .map_err(|_| format!("bad {what}"))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} outside 1..=65535"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let raster = &bytes[(pos + 1).min(bytes.len())..];
    let n = width * height;
    let pixels: Vec<u16> = if maxval < 256 {
        if raster.len() < n {
            return Err(format!("raster has {} bytes, expected {n}", raster.len()));
        }
        raster[..n].iter().map(|&b| u16::from(b)).collect()
    } else {
        if raster.len() < 2 * n {
            return Err(format!("raster has {} bytes, expected {}", raster.len(), 2 * n));
        }
        raster[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    if pixels.iter().any(|&p| p as usize > maxval) {
        return Err("sample exceeds maxval".into());
    }
    Ok(GrayImage {
        width,
        height,
        maxval: maxval as u16,
        pixels,
    })
}

pub fn read(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| ArmError::io(path, e))?;
    decode(&bytes).map_err(|msg| ArmError::format(path, msg))
}

pub fn write(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(img)).map_err(|e| ArmError::io(path, e))
}

/// Linear scaling with the map maximum at 255; an all-zero (or non-positive) map stays black.
pub fn heatmap(width: usize, height: usize, values: &[f64]) -> GrayImage {
    assert_eq!(values.len(), width * height);
    let max = values.iter().copied().fold(0.0f64, f64::max);
    let pixels = values
        .iter()
        .map(|&v| {
            if max > 0.0 {
                (v.max(0.0) / max * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    GrayImage::from_u8(width, height, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_8_and_16_bit() {
        let img = GrayImage::from_u8(3, 2, vec![0, 1, 2, 253, 254, 255]);
        assert_eq!(decode(&encode(&img)).unwrap(), img);
        let wide = GrayImage {
            width: 2,
            height: 1,
            maxval: 1000,
            pixels: vec![0, 1000],
        };
        assert_eq!(decode(&encode(&wide)).unwrap(), wide);
        assert_eq!(wide.normalized(), vec![0.0, 1.0]);
    }

    #[test]
    fn header_with_comments() {
        let bytes = b"P5\n# made by hand\n2 1\n# max\n255\n\x07\x09";
        let img = decode(bytes).unwrap();
        assert_eq!(img.pixels, vec![7, 9]);
    }

    #[test]
    fn rejects_ascii_and_short_raster() {
        assert!(decode(b"P2\n1 1\n255\n0").is_err());
        assert!(decode(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode(b"P5\n1 1\n10\n\x0b").is_err());
    }

    #[test]
    fn heatmap_scaling() {
        let img = heatmap(3, 1, &[0.0, 4.5, 9.0]);
        assert_eq!(img.pixels, vec![0, 128, 255]);
        assert_eq!(heatmap(2, 1, &[0.0, 0.0]).pixels, vec![0, 0]);
    }
}
