//! Axial / sagittal / coronal slicing of a volume and its exact inverse.

use std::fmt;
use std::str::FromStr;

use super::volume::{Volume, Voxel};
use crate::error::{Error, Result};

/// Row-major 2D image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Image2D<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!("{} pixels for a {height}x{width} image", data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Image2D<U> {
        Image2D { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// Anatomical slicing direction. A slices along z, S along x, C along y.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ViewAxis {
    A,
    S,
    C,
}

impl ViewAxis {
    pub const ALL: [ViewAxis; 3] = [ViewAxis::A, ViewAxis::S, ViewAxis::C];

    /// `(slice count, slice height, slice width)` for a volume of `dims`.
    pub fn slice_geometry(self, [nx, ny, nz]: [usize; 3]) -> (usize, usize, usize) {
        match self {
            ViewAxis::A => (nz, ny, nx),
            ViewAxis::S => (nx, ny, nz),
            ViewAxis::C => (ny, nx, nz),
        }
    }

    /// Volume coordinates of pixel `(row, col)` in slice `s`.
    #[inline]
    pub fn voxel(self, s: usize, row: usize, col: usize) -> (usize, usize, usize) {
        match self {
            ViewAxis::A => (col, row, s),
            ViewAxis::S => (s, row, col),
            ViewAxis::C => (row, s, col),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ViewAxis::A => "a",
            ViewAxis::S => "s",
            ViewAxis::C => "c",
        }
    }
}

impl fmt::Display for ViewAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViewAxis::A => "A",
            ViewAxis::S => "S",
            ViewAxis::C => "C",
        })
    }
}

impl FromStr for ViewAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "a" | "A" => Ok(ViewAxis::A),
            "s" | "S" => Ok(ViewAxis::S),
            "c" | "C" => Ok(ViewAxis::C),
            other => Err(Error::Parameter(format!("unknown view {other:?}"))),
        }
    }
}

/// Slices of one volume along one view, with what is needed to restack them.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceStack<V> {
    pub view: ViewAxis,
    pub slice_dims: (usize, usize),
    pub source_dims: [usize; 3],
    pub spacing: [f32; 3],
    pub slices: Vec<Image2D<V>>,
}

impl<V> SliceStack<V> {
    pub fn count(&self) -> usize {
        self.slices.len()
    }
}

pub fn parse_view<V: Voxel>(volume: &Volume<V>, view: ViewAxis) -> SliceStack<V> {
    let (count, h, w) = view.slice_geometry(volume.dims());
    let slices = (0..count)
        .map(|s| {
            let mut data = Vec::with_capacity(h * w);
            for row in 0..h {
                for col in 0..w {
                    let (x, y, z) = view.voxel(s, row, col);
                    data.push(volume.get(x, y, z));
                }
            }
            Image2D { height: h, width: w, data }
        })
        .collect();
    SliceStack { view, slice_dims: (h, w), source_dims: volume.dims(), spacing: volume.spacing(), slices }
}

pub fn restack_view<V: Voxel>(stack: &SliceStack<V>) -> Result<Volume<V>> {
    let dims = stack.source_dims;
    let (count, h, w) = stack.view.slice_geometry(dims);
    if stack.slices.len() != count || stack.slice_dims != (h, w) {
        return Err(Error::shape(format!(
            "{} slices of {:?} cannot restack to {dims:?} along {}",
            stack.slices.len(),
            stack.slice_dims,
            stack.view
        )));
    }
    if let Some(bad) = stack.slices.iter().position(|s| s.height != h || s.width != w || s.data.len() != h * w) {
        return Err(Error::shape(format!("slice {bad} is not {h}x{w}")));
    }
    let first = stack.slices.first().map(|s| s.data[0]).expect("dims are positive");
    let mut voxels = vec![first; dims.iter().product()];
    let [nx, ny, _] = dims;
    for (s, slice) in stack.slices.iter().enumerate() {
        for row in 0..h {
            for col in 0..w {
                let (x, y, z) = stack.view.voxel(s, row, col);
                voxels[x + nx * (y + ny * z)] = slice.at(row, col);
            }
        }
    }
    Volume::new(dims, stack.spacing, voxels)
}
