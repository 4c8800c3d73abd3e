use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pixel grid with values in `[0, 1]`.
///
/// Flat index of `(channel, y, x)` is `(channel * height + y) * width + x`
/// everywhere in the crate.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<T>) -> Result<Self> {
        let img = Self::new_unit_unchecked(width, height, channels, pixels)?;
        if let Some(i) = img
            .pixels
            .iter()
            .position(|&p| !(p >= T::zero() && p <= T::one()))
        {
            return Err(Error::invalid(format!(
                "pixel {i} = {} outside [0, 1]",
                img.pixels[i]
            )));
        }
        Ok(img)
    }

    /// Checks dimensions only; used for gradient maps that share the image layout.
    pub fn new_unit_unchecked(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<T>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        let n = width * height * channels;
        if pixels.len() != n {
            return Err(Error::LengthMismatch {
                what: "image pixels",
                expected: n,
                actual: pixels.len(),
            });
        }
        Ok(Image {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        Image {
            width,
            height,
            channels,
            pixels: vec![value; width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [T] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<T> {
        self.pixels
    }

    #[inline]
    pub fn index(&self, channel: usize, y: usize, x: usize) -> usize {
        (channel * self.height + y) * self.width + x
    }

    pub fn get(&self, channel: usize, y: usize, x: usize) -> T {
        self.pixels[self.index(channel, y, x)]
    }

    /// Copies the `width x height` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(Error::invalid(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(width * height * self.channels);
        for c in 0..self.channels {
            for y in y0..y0 + height {
                let start = self.index(c, y, x0);
                pixels.extend_from_slice(&self.pixels[start..start + width]);
            }
        }
        Ok(Image {
            width,
            height,
            channels: self.channels,
            pixels,
        })
    }

    pub fn center_offset(&self, width: usize, height: usize) -> (usize, usize) {
        (
            self.width.saturating_sub(width) / 2,
            self.height.saturating_sub(height) / 2,
        )
    }

    pub fn center_crop(&self, width: usize, height: usize) -> Result<Self> {
        let (x0, y0) = self.center_offset(width, height);
        self.crop(x0, y0, width, height)
    }

    /// Writes `patch` into `self` at `(x0, y0)`; the inverse placement of [`Image::crop`].
    pub fn paste(&mut self, patch: &Image<T>, x0: usize, y0: usize) -> Result<()> {
        if patch.channels != self.channels
            || x0 + patch.width > self.width
            || y0 + patch.height > self.height
        {
            return Err(Error::invalid("paste outside image bounds"));
        }
        for c in 0..self.channels {
            for y in 0..patch.height {
                let dst = self.index(c, y0 + y, x0);
                let src = patch.index(c, y, 0);
                self.pixels[dst..dst + patch.width]
                    .copy_from_slice(&patch.pixels[src..src + patch.width]);
            }
        }
        Ok(())
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(
            vec![self.channels, self.height, self.width],
            self.pixels.clone(),
        )
        .expect("image dimensions are positive and consistent")
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            pixels: self.pixels.iter().map(|p| U::lit(p.to_f64_lossy())).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Image<U>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_bad_length() {
        assert!(Image::new(2, 1, 1, vec![0.0f64, 1.5]).is_err());
        assert!(Image::new(2, 1, 1, vec![0.0f64, f64::NAN]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0f64; 3]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.5f64; 4]).is_ok());
    }

    #[test]
    fn flat_index_is_channel_major() {
        let img = Image::new(3, 2, 2, (0..12).map(|i| i as f64 / 12.0).collect()).unwrap();
        assert_eq!(img.index(1, 1, 2), 11);
        assert_eq!(img.index(0, 1, 0), 3);
    }

    #[test]
    fn center_crop_then_paste_roundtrips() {
        let img = Image::new(5, 5, 1, (0..25).map(|i| i as f64 / 25.0).collect()).unwrap();
        let c = img.center_crop(3, 3).unwrap();
        assert_eq!(c.get(0, 0, 0), img.get(0, 1, 1));
        let mut canvas = Image::filled(5, 5, 1, 0.0);
        canvas.paste(&c, 1, 1).unwrap();
        assert_eq!(canvas.get(0, 3, 3), img.get(0, 3, 3));
        assert_eq!(canvas.get(0, 0, 0), 0.0);
        assert!(img.crop(3, 3, 3, 3).is_err());
    }
}
