//! Voxel grids, their on-disk format, view slicing and slice preprocessing.

mod cvol;
mod diffusion;
mod histogram;
mod slices;
mod volume;

pub use cvol::{decode_cvol, encode_cvol, read_cvol, write_cvol, CvolVolume, CVOL_MAGIC};
pub use diffusion::{anisotropic_diffuse, DiffusionParams};
pub use histogram::{histogram_match, match_values, ReferenceHistogram, HISTOGRAM_BINS};
pub use slices::{parse_view, restack_view, Image2D, SliceStack, ViewAxis};
pub use volume::{LabelVolume, Volume, Volume3D, Voxel};
