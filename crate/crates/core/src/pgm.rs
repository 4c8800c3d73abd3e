//! Binary portable graymap (P5, maxval 255) reading and writing.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Graymap {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0;
        let mut fields = [0usize; 3];
        if bytes.get(..2) != Some(b"P5") {
            return Err("missing P5 magic".into());
        }
        pos += 2;
        for f in &mut fields {
            // Whitespace and '#' comments may separate header fields.
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
            *f = std::str::from_utf8(&bytes[start..pos])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or("malformed header field")?;
        }
        // Exactly one whitespace byte precedes the raster.
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err("missing separator before raster".into());
        }
        pos += 1;
        let [width, height, maxval] = fields;
        if width == 0 || height == 0 {
            return Err("zero image dimension".into());
        }
        if maxval != 255 {
            return Err(format!("unsupported maxval {maxval}"));
        }
        let data = &bytes[pos..];
        if data.len() != width * height {
            return Err(format!(
                "raster has {} bytes, expected {}",
                data.len(),
                width * height
            ));
        }
        Ok(Graymap {
            width,
            height,
            data: data.to_vec(),
        })
    }
}

/// Maps `[0, 1]` to `0..=255` by rounding.
pub fn quantize<T: Scalar>(v: T) -> u8 {
    (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_pgm(path: impl AsRef<Path>, map: &Graymap) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, map.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Graymap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Graymap::decode(&bytes).map_err(|reason| Error::Pgm {
        path: path.to_path_buf(),
        reason,
    })
}

/// Writes a single-channel image.
pub fn write_image<T: Scalar>(path: impl AsRef<Path>, image: &Image<T>) -> Result<()> {
    if image.channels() != 1 {
        return Err(Error::invalid("P5 holds single-channel images only"));
    }
    write_pgm(
        path,
        &Graymap {
            width: image.width(),
            height: image.height(),
            data: image.pixels().iter().map(|&p| quantize(p)).collect(),
        },
    )
}

pub fn read_image<T: Scalar>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let g = read_pgm(path)?;
    Image::new(
        g.width,
        g.height,
        1,
        g.data.iter().map(|&b| T::lit(f64::from(b) / 255.0)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_with_comment() {
        let g = Graymap::decode(b"P5\n# made by hand\n2 1\n255\n\x00\xff").unwrap();
        assert_eq!((g.width, g.height), (2, 1));
        assert_eq!(g.data, vec![0, 255]);
    }

    #[test]
    fn rejects_malformed() {
        assert!(Graymap::decode(b"P2\n2 1\n255\n\x00\xff").is_err());
        assert!(Graymap::decode(b"P5\n2 1\n255\n\x00").is_err());
        assert!(Graymap::decode(b"P5\n2 1\n65535\n\x00\x00\x00\x00").is_err());
        assert!(Graymap::decode(b"P5\n2").is_err());
    }

    #[test]
    fn quantized_images_roundtrip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let px: Vec<f64> = (0..12).map(|i| f64::from(i * 20) / 255.0).collect();
        let img = Image::new(4, 3, 1, px).unwrap();
        write_image(&path, &img).unwrap();
        let back: Image<f64> = read_image(&path).unwrap();
        assert_eq!(back, img);
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
    }
}
