//! Offline translation / rotation expansion of (image, label) slice pairs.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volgrid::Image2D;

pub const MAX_SHIFT: i32 = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShiftAxis {
    X,
    Y,
}

/// A single geometric transform, applied to an image and its mask alike.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentOp {
    Translate { axis: ShiftAxis, pixels: i32 },
    /// Rotation by `steps × 45°` about the image centre.
    Rotate { steps: i32 },
}

impl AugmentOp {
    pub fn translate(axis: ShiftAxis, pixels: i32) -> Result<Self> {
        check_shift(pixels)?;
        Ok(AugmentOp::Translate { axis, pixels })
    }

    pub fn rotate(steps: i32) -> Result<Self> {
        check_steps(steps)?;
        Ok(AugmentOp::Rotate { steps })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AugmentOp::Translate { pixels, .. } => check_shift(pixels),
            AugmentOp::Rotate { steps } => check_steps(steps),
        }
    }

    pub fn apply<T: Real>(&self, image: &Image2D<T>, label: &Image2D<u8>) -> Result<(Image2D<T>, Image2D<u8>)> {
        match *self {
            AugmentOp::Translate { axis, pixels } => {
                Ok((translate_slice(image, pixels, axis)?, translate_slice(label, pixels, axis)?))
            }
            AugmentOp::Rotate { steps } => Ok((rotate_slice(image, steps)?, rotate_label(label, steps)?)),
        }
    }
}

fn check_shift(pixels: i32) -> Result<()> {
    if pixels.abs() > MAX_SHIFT {
        return Err(Error::Parameter(format!("translation {pixels} outside [-{MAX_SHIFT}, {MAX_SHIFT}]")));
    }
    Ok(())
}

fn check_steps(steps: i32) -> Result<()> {
    if !matches!(steps, -2 | -1 | 1 | 2) {
        return Err(Error::Parameter(format!("rotation step {steps} not in {{-2, -1, 1, 2}}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPlan {
    pub ops: Vec<AugmentOp>,
    pub include_original: bool,
}

impl Default for AugmentPlan {
    /// Shifts of ±10 and ±20 pixels on each axis plus all four rotations.
    fn default() -> Self {
        let mut ops = Vec::with_capacity(12);
        for axis in [ShiftAxis::X, ShiftAxis::Y] {
            for pixels in [-20, -10, 10, 20] {
                ops.push(AugmentOp::Translate { axis, pixels });
            }
        }
        ops.extend([-2, -1, 1, 2].map(|steps| AugmentOp::Rotate { steps }));
        Self { ops, include_original: true }
    }
}

impl AugmentPlan {
    pub fn none() -> Self {
        Self { ops: Vec::new(), include_original: true }
    }

    pub fn multiplicity(&self) -> usize {
        self.ops.len() + usize::from(self.include_original)
    }
}

/// Shifts content by `pixels` along `axis`; vacated pixels become zero.
pub fn translate_slice<T: Copy + Default>(image: &Image2D<T>, pixels: i32, axis: ShiftAxis) -> Result<Image2D<T>> {
    check_shift(pixels)?;
    let (h, w) = (image.height, image.width);
    let mut out = Image2D::filled(h, w, T::default());
    let (dr, dc) = match axis {
        ShiftAxis::X => (0, pixels as isize),
        ShiftAxis::Y => (pixels as isize, 0),
    };
    for r in 0..h {
        let sr = r as isize - dr;
        if sr < 0 || sr >= h as isize {
            continue;
        }
        for c in 0..w {
            let sc = c as isize - dc;
            if sc >= 0 && sc < w as isize {
                out.set(r, c, image.at(sr as usize, sc as usize));
            }
        }
    }
    Ok(out)
}

/// Exact (cos, sin) of `steps × 45°`.
fn rotation(steps: i32) -> (f64, f64) {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    match steps {
        -2 => (0.0, -1.0),
        -1 => (h, -h),
        1 => (h, h),
        2 => (0.0, 1.0),
        _ => unreachable!("validated"),
    }
}

/// For every output pixel, the (col, row) it samples in the input.
fn source_coords(h: usize, w: usize, steps: i32) -> impl Iterator<Item = (usize, usize, f64, f64)> {
    let (cos, sin) = rotation(steps);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    (0..h).flat_map(move |r| {
        (0..w).map(move |c| {
            let dx = c as f64 - cx;
            let dy = r as f64 - cy;
            (r, c, cx + cos * dx + sin * dy, cy - sin * dx + cos * dy)
        })
    })
}

/// Rotation with bilinear interpolation; out-of-frame samples read as zero.
pub fn rotate_slice<T: Real>(image: &Image2D<T>, steps: i32) -> Result<Image2D<T>> {
    check_steps(steps)?;
    let (h, w) = (image.height, image.width);
    let mut out = Image2D::filled(h, w, T::zero());
    let fetch = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            image.at(y as usize, x as usize).to_f64().unwrap_or(0.0)
        }
    };
    for (r, c, sx, sy) in source_coords(h, w, steps) {
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let mut v = 0.0;
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let weight = wx * wy;
                if weight != 0.0 {
                    v += weight * fetch(x0 + dx, y0 + dy);
                }
            }
        }
        out.set(r, c, T::lit(v));
    }
    Ok(out)
}

/// Rotation of a mask with nearest-neighbour sampling, so it stays binary.
pub fn rotate_label(label: &Image2D<u8>, steps: i32) -> Result<Image2D<u8>> {
    check_steps(steps)?;
    let (h, w) = (label.height, label.width);
    let mut out = Image2D::filled(h, w, 0u8);
    for (r, c, sx, sy) in source_coords(h, w, steps) {
        let (x, y) = (sx.round(), sy.round());
        if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
            out.set(r, c, label.at(y as usize, x as usize));
        }
    }
    Ok(out)
}

/// Originals first (when requested), then one block per op in plan order.
pub fn expand_dataset<T: Real>(
    pairs: &[(Image2D<T>, Image2D<u8>)],
    plan: &AugmentPlan,
) -> Result<Vec<(Image2D<T>, Image2D<u8>)>> {
    for op in &plan.ops {
        op.validate()?;
    }
    let mut out = Vec::with_capacity(pairs.len() * plan.multiplicity());
    if plan.include_original {
        out.extend(pairs.iter().cloned());
    }
    for op in &plan.ops {
        let block: Result<Vec<_>> = pairs.par_iter().map(|(img, lbl)| op.apply(img, lbl)).collect();
        out.extend(block?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize) -> Image2D<f64> {
        Image2D::new(h, w, (0..h * w).map(|i| i as f64 + 1.0).collect()).unwrap()
    }

    fn disk(n: usize, radius: f64) -> Image2D<u8> {
        let c = (n as f64 - 1.0) / 2.0;
        let mut img = Image2D::filled(n, n, 0u8);
        for r in 0..n {
            for col in 0..n {
                let d = ((r as f64 - c).powi(2) + (col as f64 - c).powi(2)).sqrt();
                img.set(r, col, u8::from(d <= radius));
            }
        }
        img
    }

    fn dice(a: &Image2D<u8>, b: &Image2D<u8>) -> f64 {
        let inter = a.data.iter().zip(&b.data).filter(|(x, y)| **x == 1 && **y == 1).count();
        let total = a.data.iter().chain(&b.data).filter(|&&v| v == 1).count();
        2.0 * inter as f64 / total as f64
    }

    #[test]
    fn zero_shift_is_identity() {
        let img = grid(6, 5);
        assert_eq!(translate_slice(&img, 0, ShiftAxis::X).unwrap(), img);
        assert_eq!(translate_slice(&img, 0, ShiftAxis::Y).unwrap(), img);
    }

    #[test]
    fn single_pixel_moves_by_shift() {
        let mut img = Image2D::filled(12, 12, 0.0f32);
        img.set(5, 5, 9.0);
        let out = translate_slice(&img, 3, ShiftAxis::X).unwrap();
        assert_eq!(out.at(5, 8), 9.0);
        assert_eq!(out.data.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn shift_and_back_leaves_zero_bands() {
        let img = grid(8, 12);
        let there = translate_slice(&img, 5, ShiftAxis::X).unwrap();
        let back = translate_slice(&there, -5, ShiftAxis::X).unwrap();
        for r in 0..8 {
            for c in 0..12 {
                if c >= 12 - 5 {
                    assert_eq!(back.at(r, c), 0.0);
                } else {
                    assert_eq!(back.at(r, c), img.at(r, c));
                }
            }
        }
        // Composed with the opposite order the band sits on the other border.
        let other = translate_slice(&translate_slice(&img, -5, ShiftAxis::X).unwrap(), 5, ShiftAxis::X).unwrap();
        assert!((0..8).all(|r| (0..5).all(|c| other.at(r, c) == 0.0)));
    }

    #[test]
    fn out_of_range_parameters_are_rejected() {
        let img = grid(4, 4);
        assert!(matches!(translate_slice(&img, 21, ShiftAxis::Y), Err(Error::Parameter(_))));
        assert!(matches!(rotate_slice(&img, 0), Err(Error::Parameter(_))));
        assert!(matches!(rotate_slice(&img, 3), Err(Error::Parameter(_))));
        assert!(AugmentOp::rotate(-3).is_err());
        assert!(AugmentOp::translate(ShiftAxis::X, -20).is_ok());
    }

    #[test]
    fn quarter_turn_is_exact_permutation() {
        let img = grid(7, 7);
        let out = rotate_slice(&img, 2).unwrap();
        let mut a = img.data.clone();
        let mut b = out.data.clone();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
        // Even sizes put the centre between pixels; still exact.
        let img = grid(6, 6);
        let mut b = rotate_slice(&img, -2).unwrap().data;
        b.sort_by(f64::total_cmp);
        assert_eq!(b, img.data);
    }

    #[test]
    fn two_quarter_turns_reverse_indices() {
        for n in [5, 6] {
            let img = grid(n, n);
            let half = rotate_slice(&rotate_slice(&img, 2).unwrap(), 2).unwrap();
            let reversed: Vec<f64> = img.data.iter().rev().copied().collect();
            assert_eq!(half.data, reversed);
            let lbl = img.map(|v| u8::from(v as usize % 3 == 0));
            let half = rotate_label(&rotate_label(&lbl, -2).unwrap(), -2).unwrap();
            assert_eq!(half.data, lbl.data.iter().rev().copied().collect::<Vec<_>>());
        }
    }

    #[test]
    fn eighth_turn_preserves_centered_disk() {
        let d = disk(64, 20.0);
        let rotated = rotate_label(&d, 1).unwrap();
        assert!(dice(&d, &rotated) >= 0.98);
        let img = d.map(f64::from);
        let smooth = rotate_slice(&img, 1).unwrap().map(|v| u8::from(v >= 0.5));
        assert!(dice(&d, &smooth) >= 0.98);
    }

    #[test]
    fn expansion_counts_and_order() {
        let pairs: Vec<_> = (0..10)
            .map(|i| {
                let img = Image2D::filled(8, 8, i as f32);
                let lbl = Image2D::filled(8, 8, (i % 2) as u8);
                (img, lbl)
            })
            .collect();
        let ops = vec![
            AugmentOp::translate(ShiftAxis::X, 2).unwrap(),
            AugmentOp::translate(ShiftAxis::Y, -3).unwrap(),
            AugmentOp::rotate(1).unwrap(),
            AugmentOp::rotate(-2).unwrap(),
            AugmentOp::rotate(2).unwrap(),
        ];
        let plan = AugmentPlan { ops: ops.clone(), include_original: true };
        let out = expand_dataset(&pairs, &plan).unwrap();
        assert_eq!(out.len(), 60);
        assert_eq!(&out[..10], &pairs[..]);
        assert_eq!(out[10], ops[0].apply(&pairs[0].0, &pairs[0].1).unwrap());
        assert_eq!(out[59], ops[4].apply(&pairs[9].0, &pairs[9].1).unwrap());
        assert_eq!(expand_dataset(&pairs, &plan).unwrap(), out);
        assert_eq!(expand_dataset(&pairs, &AugmentPlan::none()).unwrap(), pairs);
    }

    #[test]
    fn default_plan_multiplicity() {
        let plan = AugmentPlan::default();
        assert_eq!(plan.ops.len(), 12);
        assert!(plan.ops.iter().all(|op| op.validate().is_ok()));
        // 80 axial slices from each of 10 volumes.
        assert_eq!(80 * 10 * plan.multiplicity(), 10_400);
    }

    #[test]
    fn labels_stay_binary_and_pairs_move_together() {
        let d = disk(32, 9.0);
        let img = d.map(|v| f64::from(v) * 100.0);
        for op in AugmentPlan::default().ops {
            let (i, l) = op.apply(&img, &d).unwrap();
            assert!(l.data.iter().all(|&v| v <= 1));
            if let AugmentOp::Translate { .. } = op {
                assert_eq!(i.map(|v| u8::from(v > 50.0)), l);
            }
        }
    }
}
