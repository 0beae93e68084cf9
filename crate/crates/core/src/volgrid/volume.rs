use crate::error::{Error, Result};

/// Element type stored in a [`Volume`].
pub trait Voxel: Copy + PartialEq + std::fmt::Debug + Send + Sync + 'static {
    /// CVL1 dtype code.
    const DTYPE: u8;
    const BYTES: usize;

    fn check(self) -> bool;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Voxel for f32 {
    const DTYPE: u8 = 0;
    const BYTES: usize = 4;

    fn check(self) -> bool {
        self.is_finite()
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Voxel for u8 {
    const DTYPE: u8 = 1;
    const BYTES: usize = 1;

    fn check(self) -> bool {
        self <= 1
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }

    fn read_le(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

/// Dense voxel grid with physical spacing in mm, stored x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<V> {
    dims: [usize; 3],
    spacing: [f32; 3],
    voxels: Vec<V>,
}

/// Scalar intensity volume.
pub type Volume3D = Volume<f32>;
/// Binary mask volume: 0 background, 1 foreground.
pub type LabelVolume = Volume<u8>;

impl<V: Voxel> Volume<V> {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], voxels: Vec<V>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::validation(format!("spacing must be positive, got {spacing:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if voxels.len() != n {
            return Err(Error::shape(format!("{} voxels for dims {dims:?}", voxels.len())));
        }
        if let Some(i) = voxels.iter().position(|v| !v.check()) {
            let msg = format!("voxel {i} holds invalid value {:?}", voxels[i]);
            return Err(if V::DTYPE == f32::DTYPE { Error::NonFinite(msg) } else { Error::validation(msg) });
        }
        Ok(Self { dims, spacing, voxels })
    }

    pub fn filled(dims: [usize; 3], spacing: [f32; 3], value: V) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, spacing, vec![value; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn voxels(&self) -> &[V] {
        &self.voxels
    }

    pub fn into_voxels(self) -> Vec<V> {
        self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> V {
        self.voxels[self.index(x, y, z)]
    }

    /// Applies `f` to every voxel, re-validating the result.
    pub fn map<W: Voxel>(&self, f: impl Fn(V) -> W) -> Result<Volume<W>> {
        Volume::new(self.dims, self.spacing, self.voxels.iter().map(|&v| f(v)).collect())
    }

    pub fn same_grid<W>(&self, other: &Volume<W>) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }
}

impl LabelVolume {
    pub fn foreground_count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v == 1).count()
    }

    /// Thresholds a probability volume: foreground where `p >= threshold`.
    pub fn from_threshold(prob: &Volume3D, threshold: f32) -> Self {
        Self {
            dims: prob.dims,
            spacing: prob.spacing,
            voxels: prob.voxels.iter().map(|&p| u8::from(p >= threshold)).collect(),
        }
    }
}
