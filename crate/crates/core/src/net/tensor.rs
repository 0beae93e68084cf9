use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volgrid::Image2D;

/// Channel-major activation tensor for one image: `channels × height × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![T::zero(); channels * height * width] }
    }

    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape(format!("feature map dims must be positive: {channels}x{height}x{width}")));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "{} values for a {channels}x{height}x{width} feature map",
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn from_image(image: &Image2D<T>) -> Result<Self> {
        Self::new(1, image.height, image.width, image.data.clone())
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn cast<U: Real>(&self) -> FeatureMap<U> {
        FeatureMap {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::from(*v).expect("finite cast")).collect(),
        }
    }
}

/// Zero padding applied to bring an image to a multiple-of-4 size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

fn split_pad(size: usize, multiple: usize) -> (usize, usize) {
    let target = size.div_ceil(multiple) * multiple;
    let total = target - size;
    (total / 2, target)
}

/// Pads symmetrically with zeros so both dims become multiples of `multiple`.
pub fn pad_to_multiple<T: Real>(image: &Image2D<T>, multiple: usize) -> (FeatureMap<T>, Padding) {
    let (top, ph) = split_pad(image.height, multiple);
    let (left, pw) = split_pad(image.width, multiple);
    let mut out = FeatureMap::zeros(1, ph, pw);
    for r in 0..image.height {
        let src = &image.data[r * image.width..(r + 1) * image.width];
        out.data[(r + top) * pw + left..(r + top) * pw + left + image.width].copy_from_slice(src);
    }
    (out, Padding { top, left, height: image.height, width: image.width })
}

/// Crops channel `channel` of a padded map back to the original image size.
pub fn crop_to<T: Real>(map: &FeatureMap<T>, channel: usize, pad: &Padding) -> Image2D<T> {
    let plane = map.plane(channel);
    let mut data = Vec::with_capacity(pad.height * pad.width);
    for r in 0..pad.height {
        let start = (r + pad.top) * map.width + pad.left;
        data.extend_from_slice(&plane[start..start + pad.width]);
    }
    Image2D { height: pad.height, width: pad.width, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pad_then_crop_round_trips() {
        let img = Image2D::new(5, 110, (0..550).map(|i| i as f32).collect()).unwrap();
        let (map, pad) = pad_to_multiple(&img, 4);
        assert_eq!((map.height, map.width), (8, 112));
        assert_eq!((pad.top, pad.left), (1, 1));
        assert_eq!(map.at(0, 0, 0), 0.0);
        assert_eq!(map.at(0, 1, 1), 0.0 + img.at(0, 0));
        assert_eq!(crop_to(&map, 0, &pad), img);
    }

    #[test]
    fn aligned_images_are_untouched() {
        let img = Image2D::new(4, 8, (0..32).map(|i| i as f64).collect()).unwrap();
        let (map, pad) = pad_to_multiple(&img, 4);
        assert_eq!(map.data, img.data);
        assert_eq!((pad.top, pad.left), (0, 0));
    }
}
