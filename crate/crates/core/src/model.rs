//! The small coin classifier: architecture, geometry and center-crop evaluation.

use serde::{Deserialize, Serialize};

use crate::classifier::{network_input_gradient, Classifier, InputGradient, Objective};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{LayerSpec, Network};
use crate::scalar::Scalar;

/// Storage and crop sizes. Training sees random crops, evaluation the center crop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub channels: usize,
    pub storage_width: usize,
    pub storage_height: usize,
    pub crop_width: usize,
    pub crop_height: usize,
}

impl Geometry {
    pub const fn new(channels: usize, storage: usize, crop: usize) -> Self {
        Geometry {
            channels,
            storage_width: storage,
            storage_height: storage,
            crop_width: crop,
            crop_height: crop,
        }
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.channels, self.crop_height, self.crop_width]
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.crop_width == 0 || self.crop_height == 0 {
            return Err(Error::invalid("geometry dimensions must be positive"));
        }
        if self.crop_width >= self.storage_width || self.crop_height >= self.storage_height {
            return Err(Error::invalid(format!(
                "crop {}x{} must be smaller than storage {}x{}",
                self.crop_width, self.crop_height, self.storage_width, self.storage_height
            )));
        }
        Ok(())
    }
}

impl Default for Geometry {
    /// 40x40 grayscale storage, 32x32 crops.
    fn default() -> Self {
        Geometry::new(1, 40, 40 - 8)
    }
}

/// conv5 -> relu -> pool2 -> conv3 -> relu -> pool2 -> dense -> relu -> dense(classes).
pub fn architecture(num_classes: usize, input_shape: &[usize]) -> Result<Vec<LayerSpec>> {
    if num_classes < 2 {
        return Err(Error::invalid(format!("need at least 2 classes, got {num_classes}")));
    }
    let channels = match input_shape {
        &[c, _, _] => c,
        _ => return Err(Error::invalid(format!("input shape {input_shape:?} is not [c, h, w]"))),
    };
    let mut specs = vec![
        LayerSpec::Conv2d { in_channels: channels, out_channels: 6, kernel: 5, stride: 1 },
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 2, stride: 2 },
        LayerSpec::Conv2d { in_channels: 6, out_channels: 12, kernel: 3, stride: 1 },
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 2, stride: 2 },
    ];
    let mut shape = input_shape.to_vec();
    for (i, s) in specs.iter().enumerate() {
        shape = s.output_shape(&shape).map_err(|reason| {
            Error::invalid(format!("input {input_shape:?} too small at layer {i}: {reason}"))
        })?;
    }
    let flat: usize = shape.iter().product();
    specs.extend([
        LayerSpec::Dense { inputs: flat, outputs: 48 },
        LayerSpec::Relu,
        LayerSpec::Dense { inputs: 48, outputs: num_classes },
    ]);
    Ok(specs)
}

/// Untrained network with seeded uniform Glorot weights.
pub fn build_model<T: Scalar>(
    num_classes: usize,
    input_shape: &[usize],
    seed: u64,
) -> Result<Network<T>> {
    let mut net = Network::new(input_shape.to_vec(), architecture(num_classes, input_shape)?)?;
    net.init_uniform(seed);
    Ok(net)
}

/// A network plus its label vocabulary and image geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct CoinModel<T> {
    pub network: Network<T>,
    pub labels: Vec<String>,
    pub geometry: Geometry,
}

impl<T: Scalar> CoinModel<T> {
    pub fn build(labels: Vec<String>, geometry: Geometry, seed: u64) -> Result<Self> {
        geometry.validate()?;
        let network = build_model(labels.len(), &geometry.input_shape(), seed)?;
        Self::new(network, labels, geometry)
    }

    pub fn new(network: Network<T>, labels: Vec<String>, geometry: Geometry) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(Error::Vocabulary(format!("duplicate label {dup:?}")));
        }
        if network.input_shape() != geometry.input_shape().as_slice() {
            return Err(Error::invalid(format!(
                "network input {:?} does not match crop geometry {:?}",
                network.input_shape(),
                geometry.input_shape()
            )));
        }
        if network.output_shape().iter().product::<usize>() != labels.len() {
            return Err(Error::Vocabulary(format!(
                "network has {:?} outputs but {} labels",
                network.output_shape(),
                labels.len()
            )));
        }
        Ok(CoinModel {
            network,
            labels,
            geometry,
        })
    }

    /// The crop the network sees: the image itself at crop size, the
    /// center crop at storage size. Returns the crop offset too.
    pub fn model_view(&self, image: &Image<T>) -> Result<(Image<T>, Option<(usize, usize)>)> {
        let g = &self.geometry;
        if image.channels() != g.channels {
            return Err(Error::invalid(format!(
                "image has {} channels, model expects {}",
                image.channels(),
                g.channels
            )));
        }
        match (image.width(), image.height()) {
            (w, h) if w == g.crop_width && h == g.crop_height => Ok((image.clone(), None)),
            (w, h) if w == g.storage_width && h == g.storage_height => {
                let off = image.center_offset(g.crop_width, g.crop_height);
                Ok((image.crop(off.0, off.1, g.crop_width, g.crop_height)?, Some(off)))
            }
            (w, h) => Err(Error::invalid(format!(
                "image is {w}x{h}; model accepts {}x{} or {}x{}",
                g.crop_width, g.crop_height, g.storage_width, g.storage_height
            ))),
        }
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

impl<T: Scalar> Classifier<T> for CoinModel<T> {
    fn num_classes(&self) -> usize {
        self.labels.len()
    }

    fn scores(&self, image: &Image<T>) -> Result<Vec<T>> {
        let (view, _) = self.model_view(image)?;
        self.network.scores(&view)
    }

    fn input_gradient(&self, image: &Image<T>, objective: Objective) -> Result<InputGradient<T>> {
        let (view, offset) = self.model_view(image)?;
        let mut out = network_input_gradient(&self.network, &view, objective)?;
        if let Some((x0, y0)) = offset {
            // Pixels outside the center crop do not reach the network.
            let (w, h, c) = image.dims();
            let mut full = Image::new_unit_unchecked(w, h, c, vec![T::zero(); w * h * c])?;
            full.paste(&out.grad, x0, y0)?;
            out.grad = full;
        }
        Ok(out)
    }
}
