//! Sparse-mask landmark discovery for image classifiers.
//!
//! A small reverse-mode CNN stack is trained on coin-like images; for a given
//! image and class, [`landmark::discover`] then finds the sparsest mask over
//! image regions that keeps the class probability within `epsilon` of the
//! unmasked prediction. Occlusion and saliency baselines, two-level
//! (obverse/reverse) prediction, a synthetic benchmark with planted ground
//! truth and a cross-validation harness complete the toolkit.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below pin the common instantiations.

pub mod baselines;
pub mod checkpoint;
pub mod classifier;
pub mod error;
pub mod eval;
pub mod hierarchy;
pub mod image;
pub mod landmark;
pub mod manifest;
pub mod model;
pub mod nn;
pub mod pgm;
pub mod regions;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod train;

pub use baselines::{occlusion_map, rank_agreement, saliency_map, Heatmap};
pub use classifier::{Classifier, Objective};
pub use error::{Error, Result};
pub use hierarchy::{flat_predict, hierarchical_predict, HierarchyTree};
pub use image::Image;
pub use landmark::{discover, DiscoveryConfig, LandmarkResult};
pub use model::{CoinModel, Geometry};
pub use regions::{apply_mask, mask_gradient, RegionSet};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Image64 = image::Image<f64>;
pub type Image32 = image::Image<f32>;
pub type Network64 = nn::Network<f64>;
pub type Network32 = nn::Network<f32>;
pub type CoinModel64 = model::CoinModel<f64>;
pub type CoinModel32 = model::CoinModel<f32>;
pub type Heatmap64 = baselines::Heatmap<f64>;
pub type LandmarkResult64 = landmark::LandmarkResult<f64>;
