//! RGB rasters and binary PPM (P6) serialization.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

pub type Rgb = [u8; 3];

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("pixel buffer holds {got} bytes, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("malformed PPM: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Row-major RGB image, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Image {
    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&color);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageError> {
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(ImageError::BufferSize {
                expected,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn as_bytes_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, col: u32, row: u32) -> Rgb {
        let i = self.index(col, row);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, col: u32, row: u32, c: Rgb) {
        let i = self.index(col, row);
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    fn index(&self, col: u32, row: u32) -> usize {
        assert!(col < self.width && row < self.height, "pixel out of bounds");
        (row as usize * self.width as usize + col as usize) * 3
    }

    /// Iterates `(col, row, rgb)` in row-major order.
    pub fn enumerate(&self) -> impl Iterator<Item = (u32, u32, Rgb)> + '_ {
        let w = self.width;
        self.pixels.chunks_exact(3).enumerate().map(move |(i, p)| {
            let i = i as u32;
            (i % w, i / w, [p[0], p[1], p[2]])
        })
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Parses a P6 file with maxval 255. Comments in the header are accepted.
    pub fn from_ppm(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut pos = 0usize;
        let mut fields = [0u64; 3];
        let magic = next_token(bytes, &mut pos)?;
        if magic != b"P6" {
            return Err(ImageError::Malformed("magic is not P6".into()));
        }
        for f in fields.iter_mut() {
            let tok = next_token(bytes, &mut pos)?;
            *f = std::str::from_utf8(tok)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ImageError::Malformed("non-numeric header field".into()))?;
        }
        let [w, h, maxval] = fields;
        if maxval != 255 {
            return Err(ImageError::Malformed(format!("unsupported maxval {maxval}")));
        }
        if w == 0 || h == 0 || w > u32::MAX as u64 || h > u32::MAX as u64 {
            return Err(ImageError::Malformed("bad dimensions".into()));
        }
        // exactly one whitespace byte separates the header from the raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(ImageError::Malformed("missing raster separator".into()));
        }
        let data = &bytes[pos + 1..];
        let expected = (w * h * 3) as usize;
        if data.len() != expected {
            return Err(ImageError::Malformed(format!(
                "raster has {} bytes, expected {expected}",
                data.len()
            )));
        }
        Self::from_raw(w as u32, h as u32, data.to_vec())
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        fs::write(path, self.to_ppm())?;
        Ok(())
    }

    pub fn load_ppm(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        Self::from_ppm(&fs::read(path)?)
    }
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], ImageError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(ImageError::Malformed("truncated header".into()));
    }
    Ok(&bytes[start..*pos])
}

/// `max(0, r - max(g, b)) / 255`.
pub fn red_dominance(c: Rgb) -> f64 {
    (c[0] as f64 - c[1].max(c[2]) as f64).max(0.0) / 255.0
}

/// Rec. 601 luma on the 0..=255 scale.
pub fn luminance(c: Rgb) -> f64 {
    0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_header_is_exact() {
        let img = Image::filled(3, 2, [1, 2, 3]);
        let bytes = img.to_ppm();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
        assert_eq!(Image::from_ppm(&bytes).unwrap(), img);
    }

    #[test]
    fn ppm_rejects_garbage() {
        assert!(Image::from_ppm(b"P5\n1 1\n255\n\0").is_err());
        assert!(Image::from_ppm(b"P6\n2 2\n255\n\0\0\0").is_err());
        assert!(Image::from_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
        assert!(Image::from_ppm(b"P6\n1").is_err());
    }

    #[test]
    fn ppm_accepts_comments() {
        let img = Image::from_ppm(b"P6\n# made by hand\n1 1\n255\n\x01\x02\x03").unwrap();
        assert_eq!(img.get(0, 0), [1, 2, 3]);
    }

    #[test]
    fn buffer_length_is_checked() {
        assert!(Image::from_raw(2, 2, vec![0; 11]).is_err());
    }

    #[test]
    fn color_measures() {
        assert_eq!(red_dominance([255, 0, 0]), 1.0);
        assert_eq!(red_dominance([10, 200, 0]), 0.0);
        assert!((luminance([255, 255, 255]) - 255.0).abs() < 1e-9);
    }
}
