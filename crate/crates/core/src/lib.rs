//! Multi-view 2.5D segmentation: per-view encoder-decoder CNNs over axial,
//! sagittal and coronal slices, fused in 3D by robust-region weighting.
//!
//! Network, loss and trainer are generic over [`Real`]; training runs in
//! `f32` and gradient verification in `f64`. The aliases below name the
//! concrete instantiations.

pub mod augment;
pub mod error;
pub mod fusion;
pub mod kv;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod phantom;
pub mod pipeline;
pub mod scalar;
pub mod train;
pub mod volgrid;

pub use error::{Error, Result};
pub use scalar::Real;

pub type FeatureMap32 = net::FeatureMap<f32>;
pub type FeatureMap64 = net::FeatureMap<f64>;
pub type NetworkParams32 = net::NetworkParams<f32>;
pub type NetworkParams64 = net::NetworkParams<f64>;
pub type NetworkGrads32 = net::NetworkGrads<f32>;
pub type NetworkGrads64 = net::NetworkGrads<f64>;
pub type Trainer32 = train::Trainer<f32>;
pub type Trainer64 = train::Trainer<f64>;
pub type Sample32 = train::Sample<f32>;
pub type Sample64 = train::Sample<f64>;
pub type Image2D32 = volgrid::Image2D<f32>;
pub type Image2D64 = volgrid::Image2D<f64>;
