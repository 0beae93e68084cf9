//! End-to-end glue: slice preprocessing, training-set assembly, per-view
//! inference and fused segmentation.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::augment::expand_dataset;
use crate::error::{Error, Result};
use crate::fusion::{adaptive_fuse, linear_fuse, Connectivity, FusedVolume, ViewPrediction};
use crate::net::{pad_to_multiple, predict_foreground, ArchitectureSpec, NetworkParams};
use crate::train::{Checkpoint, Sample, TrainConfig};
use crate::volgrid::{
    anisotropic_diffuse, match_values, parse_view, restack_view, DiffusionParams, Image2D, LabelVolume,
    ReferenceHistogram, SliceStack, ViewAxis, Volume3D,
};

/// Slices of `volume` along `view`, each smoothed in-plane.
pub fn smooth_stack(volume: &Volume3D, view: ViewAxis, diffusion: &DiffusionParams) -> Result<SliceStack<f32>> {
    let mut stack = parse_view(volume, view);
    stack.slices = stack.slices.par_iter().map(|s| anisotropic_diffuse(s, diffusion)).collect::<Result<_>>()?;
    Ok(stack)
}

/// Histogram-matching target: the smoothed intensities of one volume.
pub fn build_reference(volume: &Volume3D, view: ViewAxis, diffusion: &DiffusionParams) -> Result<ReferenceHistogram> {
    let stack = smooth_stack(volume, view, diffusion)?;
    let values: Vec<f64> = stack.slices.iter().flat_map(|s| s.data.iter().map(|&v| f64::from(v))).collect();
    ReferenceHistogram::from_values(&values)
}

/// Network input: smoothed slices, matched to `reference` over the whole
/// volume, then scaled so the reference range maps onto [0, 1].
pub fn preprocess(
    volume: &Volume3D,
    view: ViewAxis,
    diffusion: &DiffusionParams,
    reference: &ReferenceHistogram,
) -> Result<SliceStack<f32>> {
    let mut stack = smooth_stack(volume, view, diffusion)?;
    let flat: Vec<f32> = stack.slices.iter().flat_map(|s| s.data.iter().copied()).collect();
    let matched = match_values(&flat, reference)?;
    let (lo, span) = (reference.lo(), reference.hi() - reference.lo());
    let scale = |v: f32| if span > 0.0 { ((f64::from(v) - lo) / span) as f32 } else { 0.0 };
    let per_slice = stack.slice_dims.0 * stack.slice_dims.1;
    for (slice, chunk) in stack.slices.iter_mut().zip(matched.chunks(per_slice.max(1))) {
        slice.data = chunk.iter().map(|&v| scale(v)).collect();
    }
    Ok(stack)
}

/// Keeps slices with foreground plus every `stride`-th empty slice.
fn keep_slice(index: usize, label: &Image2D<u8>, stride: usize) -> bool {
    label.data.contains(&1) || index % stride == 0
}

/// Padded, augmented training samples of one view from image/label pairs.
pub fn training_samples(
    pairs: &[(Volume3D, LabelVolume)],
    config: &TrainConfig,
    reference: &ReferenceHistogram,
) -> Result<Vec<Sample<f32>>> {
    let mut slices = Vec::new();
    for (image, label) in pairs {
        if image.dims() != label.dims() {
            return Err(Error::shape(format!("image dims {:?} vs label dims {:?}", image.dims(), label.dims())));
        }
        let stack = preprocess(image, config.view, &config.diffusion, reference)?;
        let labels = parse_view(label, config.view);
        for (k, (img, lbl)) in stack.slices.into_iter().zip(labels.slices).enumerate() {
            if keep_slice(k, &lbl, config.empty_slice_stride) {
                slices.push((img, lbl));
            }
        }
    }
    let expanded = expand_dataset(&slices, &config.augment.plan())?;
    Ok(expanded
        .into_par_iter()
        .map(|(img, lbl)| {
            let (image, pad) = pad_to_multiple(&img, ArchitectureSpec::SIZE_MULTIPLE);
            let (lbl_map, _) = pad_to_multiple(&lbl.map(f32::from), ArchitectureSpec::SIZE_MULTIPLE);
            debug_assert_eq!(pad.height, lbl.height);
            let labels = lbl_map.data.iter().map(|&v| u8::from(v > 0.5)).collect();
            Sample { image, labels }
        })
        .collect())
}

/// Everything needed to run one trained view network.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewModel {
    pub view: ViewAxis,
    pub arch: ArchitectureSpec,
    pub params: NetworkParams<f32>,
    pub diffusion: DiffusionParams,
    pub reference: ReferenceHistogram,
    pub source_dims: [usize; 3],
}

impl From<Checkpoint> for ViewModel {
    fn from(c: Checkpoint) -> Self {
        Self {
            view: c.config.view,
            arch: c.arch,
            params: c.params,
            diffusion: c.config.diffusion,
            reference: c.reference,
            source_dims: c.source_dims,
        }
    }
}

/// Slices per inference chunk; bounds peak activation memory.
const INFER_CHUNK: usize = 16;

impl ViewModel {
    /// Foreground probability volume on the grid of `image`.
    pub fn predict(&self, image: &Volume3D) -> Result<Volume3D> {
        let mut stack = preprocess(image, self.view, &self.diffusion, &self.reference)?;
        let mut probs = Vec::with_capacity(stack.count());
        for chunk in stack.slices.chunks(INFER_CHUNK) {
            probs.extend(predict_foreground(&self.arch, &self.params, chunk)?);
        }
        stack.slices = probs;
        let mut volume = restack_view(&stack)?;
        // Softmax output can round a hair outside [0, 1] in f32.
        volume = volume.map(|p| p.clamp(0.0, 1.0))?;
        Ok(volume)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    Single,
    Linear,
    Adaptive,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Single => "single",
            FusionMode::Linear => "linear",
            FusionMode::Adaptive => "adaptive",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "single" => Ok(FusionMode::Single),
            "linear" => Ok(FusionMode::Linear),
            "adaptive" => Ok(FusionMode::Adaptive),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub prob: Volume3D,
    pub mask: LabelVolume,
    /// Robust weights in A, S, C order (adaptive mode only).
    pub weights: Option<[f64; 3]>,
    pub fallback: bool,
}

/// Orders three models as A, S, C; each view must appear once.
fn by_view(models: &[ViewModel]) -> Result<[&ViewModel; 3]> {
    let find = |v: ViewAxis| {
        let mut it = models.iter().filter(|m| m.view == v);
        match (it.next(), it.next()) {
            (Some(m), None) => Ok(m),
            _ => Err(Error::Config(format!("need exactly one checkpoint for view {v}"))),
        }
    };
    if models.len() != 3 {
        return Err(Error::Config(format!("fusion needs 3 checkpoints, got {}", models.len())));
    }
    Ok([find(ViewAxis::A)?, find(ViewAxis::S)?, find(ViewAxis::C)?])
}

/// Per-view probabilities in A, S, C order.
pub fn predict_views(image: &Volume3D, models: &[ViewModel]) -> Result<[Volume3D; 3]> {
    let [a, s, c] = by_view(models)?;
    let out: Vec<Volume3D> = [a, s, c].par_iter().map(|m| m.predict(image)).collect::<Result<_>>()?;
    Ok(out.try_into().expect("three views"))
}

/// Fuses per-view probabilities (A, S, C order) with the given mode.
pub fn fuse_views(probs: [Volume3D; 3], mode: FusionMode, connectivity: Connectivity) -> Result<Segmentation> {
    let [a, s, c] = probs;
    let preds = [
        ViewPrediction::new(ViewAxis::A, a, connectivity)?,
        ViewPrediction::new(ViewAxis::S, s, connectivity)?,
        ViewPrediction::new(ViewAxis::C, c, connectivity)?,
    ];
    let weights = [preds[0].weight, preds[1].weight, preds[2].weight];
    let fused: FusedVolume = match mode {
        FusionMode::Adaptive => adaptive_fuse(&preds)?,
        FusionMode::Linear => linear_fuse(&preds)?,
        FusionMode::Single => return Err(Error::Config("single mode does not fuse".into())),
    };
    Ok(Segmentation {
        prob: fused.prob,
        mask: fused.mask,
        weights: (mode == FusionMode::Adaptive).then_some(weights),
        fallback: fused.fallback,
    })
}

/// Runs the models on `image`. Single mode takes one model; the fusing modes
/// take one per view. Every model must expect the image's dims.
pub fn segment(image: &Volume3D, models: &[ViewModel], mode: FusionMode, connectivity: Connectivity) -> Result<Segmentation> {
    if let Some(m) = models.iter().find(|m| m.source_dims != image.dims()) {
        return Err(Error::shape(format!(
            "image dims {:?} differ from the {:?} expected by the view {} checkpoint",
            image.dims(),
            m.source_dims,
            m.view
        )));
    }
    match mode {
        FusionMode::Single => {
            let [model] = models else {
                return Err(Error::Config(format!("single mode needs 1 checkpoint, got {}", models.len())));
            };
            let prob = model.predict(image)?;
            let mask = LabelVolume::from_threshold(&prob, 0.5);
            Ok(Segmentation { prob, mask, weights: None, fallback: false })
        }
        _ => fuse_views(predict_views(image, models)?, mode, connectivity),
    }
}
