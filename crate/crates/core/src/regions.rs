//! Region decomposition of an image and the linear mask function over it.
//!
//! A [`RegionSet`] holds `K` index sets `r_k` that jointly cover every pixel.
//! The masked image for a transparency vector `x ∈ [0,1]^K` is
//!
//! ```text
//! f(x)(i) = I(i) * C(i) * sum_{k : i ∈ r_k} x_k,    C(i) = 1 / #{k : i ∈ r_k}
//! ```
//!
//! so `f(1) = I`. The map is linear in `x`; [`mask_gradient`] applies its
//! transpose Jacobian without materializing the `K x N` matrix.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

/// How a region set was produced; this is what gets serialized.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionGeometry {
    /// Square sliding windows; the last row/column is clamped to the border.
    Grid { window: usize, stride: usize },
    /// One region per spatial location.
    Pixel,
    /// Arbitrary index sets, stored verbatim.
    Explicit { regions: Vec<Vec<usize>> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionFile {
    width: usize,
    height: usize,
    channels: usize,
    geometry: RegionGeometry,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionSet {
    width: usize,
    height: usize,
    channels: usize,
    regions: Vec<Vec<usize>>,
    coverage: Vec<u32>,
    geometry: RegionGeometry,
}

/// Window origins along one axis: the stride lattice plus a final origin
/// clamped to `extent - window` when the lattice stops short of the edge.
pub fn lattice(extent: usize, window: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=extent - window).step_by(stride).collect();
    if out.last().is_some_and(|&p| p + window < extent) {
        out.push(extent - window);
    }
    out
}

impl RegionSet {
    pub fn grid(
        width: usize,
        height: usize,
        channels: usize,
        window: usize,
        stride: usize,
    ) -> Result<Self> {
        check_dims(width, height, channels)?;
        if window == 0 || window > width.min(height) {
            return Err(Error::invalid(format!(
                "window {window} must be in 1..={}",
                width.min(height)
            )));
        }
        if stride == 0 || stride > window {
            return Err(Error::invalid(format!(
                "stride {stride} must be in 1..={window} to avoid coverage holes"
            )));
        }
        let mut regions = Vec::new();
        for &y0 in &lattice(height, window, stride) {
            for &x0 in &lattice(width, window, stride) {
                let mut r = Vec::with_capacity(window * window * channels);
                for c in 0..channels {
                    for y in y0..y0 + window {
                        let row = (c * height + y) * width;
                        r.extend(row + x0..row + x0 + window);
                    }
                }
                regions.push(r);
            }
        }
        Self::build(width, height, channels, regions, RegionGeometry::Grid { window, stride })
    }

    pub fn pixels(width: usize, height: usize, channels: usize) -> Result<Self> {
        check_dims(width, height, channels)?;
        let plane = width * height;
        let regions = (0..plane)
            .map(|p| (0..channels).map(|c| c * plane + p).collect())
            .collect();
        Self::build(width, height, channels, regions, RegionGeometry::Pixel)
    }

    /// Validates arbitrary index sets (sorted on the way in).
    pub fn explicit(
        width: usize,
        height: usize,
        channels: usize,
        mut regions: Vec<Vec<usize>>,
    ) -> Result<Self> {
        check_dims(width, height, channels)?;
        for r in &mut regions {
            r.sort_unstable();
        }
        let geometry = RegionGeometry::Explicit {
            regions: regions.clone(),
        };
        Self::build(width, height, channels, regions, geometry)
    }

    fn build(
        width: usize,
        height: usize,
        channels: usize,
        regions: Vec<Vec<usize>>,
        geometry: RegionGeometry,
    ) -> Result<Self> {
        let n = width * height * channels;
        if regions.is_empty() {
            return Err(Error::invalid("region set is empty"));
        }
        let mut coverage = vec![0u32; n];
        for (k, r) in regions.iter().enumerate() {
            if r.is_empty() {
                return Err(Error::invalid(format!("region {k} is empty")));
            }
            if r.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!("region {k} has duplicate indices")));
            }
            if let Some(&bad) = r.iter().find(|&&i| i >= n) {
                return Err(Error::invalid(format!(
                    "region {k} index {bad} outside {n} pixels"
                )));
            }
            for &i in r {
                coverage[i] += 1;
            }
        }
        if let Some(hole) = coverage.iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!("pixel {hole} is not covered by any region")));
        }
        Ok(RegionSet {
            width,
            height,
            channels,
            regions,
            coverage,
            geometry,
        })
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn pixel_count(&self) -> usize {
        self.coverage.len()
    }

    pub fn regions(&self) -> &[Vec<usize>] {
        &self.regions
    }

    pub fn coverage(&self) -> &[u32] {
        &self.coverage
    }

    pub fn geometry(&self) -> &RegionGeometry {
        &self.geometry
    }

    /// `C(i) = 1 / coverage(i)`.
    pub fn normalization<T: Scalar>(&self) -> Vec<T> {
        self.coverage
            .iter()
            .map(|&c| T::one() / T::lit(f64::from(c)))
            .collect()
    }

    /// Per-pixel mask weight `C(i) * sum_{k ∋ i} x_k`, so `f(x) = I ⊙ weights(x)`.
    pub fn pixel_weights<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_mask(x)?;
        let mut acc = vec![T::zero(); self.pixel_count()];
        for (r, &xk) in self.regions.iter().zip(x) {
            for &i in r {
                acc[i] += xk;
            }
        }
        // Dividing by the integer count keeps f(1) = I bit-exact.
        for (a, &c) in acc.iter_mut().zip(&self.coverage) {
            *a /= T::lit(f64::from(c));
        }
        Ok(acc)
    }

    /// [`pixel_weights`](Self::pixel_weights) averaged over channels: one value per
    /// spatial location, row-major.
    pub fn spread<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        let w = self.pixel_weights(x)?;
        let plane = self.width * self.height;
        let scale = T::lit(self.channels as f64);
        Ok((0..plane)
            .map(|p| (0..self.channels).map(|c| w[c * plane + p]).sum::<T>() / scale)
            .collect())
    }

    fn check_mask<T: Scalar>(&self, x: &[T]) -> Result<()> {
        if x.len() != self.len() {
            return Err(Error::LengthMismatch {
                what: "mask vector",
                expected: self.len(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn check_image<T>(&self, image: &Image<T>) -> Result<()>
    where
        T: Scalar,
    {
        if image.dims() != (self.width, self.height, self.channels) {
            return Err(Error::invalid(format!(
                "image {:?} does not match regions {:?}",
                image.dims(),
                self.dims()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = RegionFile {
            width: self.width,
            height: self.height,
            channels: self.channels,
            geometry: self.geometry.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: RegionFile = serde_json::from_str(text)?;
        match f.geometry {
            RegionGeometry::Grid { window, stride } => {
                Self::grid(f.width, f.height, f.channels, window, stride)
            }
            RegionGeometry::Pixel => Self::pixels(f.width, f.height, f.channels),
            RegionGeometry::Explicit { regions } => {
                Self::explicit(f.width, f.height, f.channels, regions)
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn check_dims(width: usize, height: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 || channels == 0 {
        return Err(Error::invalid(format!(
            "dimensions must be positive, got {width}x{height}x{channels}"
        )));
    }
    Ok(())
}

fn check_unit_box<T: Scalar>(x: &[T]) -> Result<()> {
    if let Some(k) = x.iter().position(|&v| !(v >= T::zero() && v <= T::one())) {
        return Err(Error::invalid(format!("mask component {k} = {} outside [0, 1]", x[k])));
    }
    Ok(())
}

/// Masked pixel values for raw (not necessarily unit-range) intensities.
pub fn mask_values<T: Scalar>(pixels: &[T], regions: &RegionSet, x: &[T]) -> Result<Vec<T>> {
    if pixels.len() != regions.pixel_count() {
        return Err(Error::LengthMismatch {
            what: "pixels",
            expected: regions.pixel_count(),
            actual: pixels.len(),
        });
    }
    let w = regions.pixel_weights(x)?;
    Ok(pixels.iter().zip(w).map(|(&p, w)| p * w).collect())
}

/// `f_I(x)`; requires `x ∈ [0,1]^K`, so the output stays within `[0, I(i)]`.
pub fn apply_mask<T: Scalar>(image: &Image<T>, regions: &RegionSet, x: &[T]) -> Result<Image<T>> {
    regions.check_image(image)?;
    check_unit_box(x)?;
    let values = mask_values(image.pixels(), regions, x)?;
    let (w, h, c) = image.dims();
    // Weights are convex combinations, but rounding may overshoot 1 by an ulp.
    let values = values.into_iter().map(|v| v.min(T::one())).collect();
    Image::new(w, h, c, values)
}

/// Transpose-Jacobian of the mask map applied to `g` over raw pixel values:
/// `out_k = sum_{i ∈ r_k} I(i) C(i) g(i)`.
pub fn mask_gradient_values<T: Scalar>(
    pixels: &[T],
    regions: &RegionSet,
    grad_wrt_masked: &[T],
) -> Result<Vec<T>> {
    let n = regions.pixel_count();
    for (what, len) in [("pixels", pixels.len()), ("masked-image gradient", grad_wrt_masked.len())] {
        if len != n {
            return Err(Error::LengthMismatch {
                what,
                expected: n,
                actual: len,
            });
        }
    }
    let h: Vec<T> = pixels
        .iter()
        .zip(grad_wrt_masked)
        .zip(&regions.coverage)
        .map(|((&p, &g), &c)| p * g / T::lit(f64::from(c)))
        .collect();
    Ok(regions
        .regions
        .iter()
        .map(|r| r.iter().map(|&i| h[i]).sum())
        .collect())
}

pub fn mask_gradient<T: Scalar>(
    image: &Image<T>,
    regions: &RegionSet,
    grad_wrt_masked: &Image<T>,
) -> Result<Vec<T>> {
    regions.check_image(image)?;
    if !image.same_dims(grad_wrt_masked) {
        return Err(Error::invalid("gradient image does not match the source image"));
    }
    mask_gradient_values(image.pixels(), regions, grad_wrt_masked.pixels())
}
