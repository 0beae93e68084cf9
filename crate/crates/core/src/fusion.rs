//! Multi-view fusion: connected components, robust-region weights and the
//! weighted combination of per-view probability volumes.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volgrid::{LabelVolume, ViewAxis, Volume3D};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Connectivity {
    /// Face neighbours.
    Six,
    /// Face, edge and corner neighbours.
    #[default]
    TwentySix,
}

impl Connectivity {
    /// Neighbour offsets that precede a voxel in x-fastest scan order.
    fn backward_offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let earlier = (dz, dy, dx) < (0, 0, 0);
                    if earlier && (self == Connectivity::TwentySix || manhattan == 1) {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Connectivity::Six => "6",
            Connectivity::TwentySix => "26",
        })
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "6" => Ok(Connectivity::Six),
            "26" => Ok(Connectivity::TwentySix),
            other => Err(Error::Config(format!("connectivity must be 6 or 26, got {other:?}"))),
        }
    }
}

/// Labelled foreground. Component `k` (1-based) has size `sizes[k - 1]`;
/// sizes are non-increasing, ties broken by the smallest voxel index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentSet {
    pub dims: [usize; 3],
    /// Component id per voxel, 0 for background, x-fastest.
    pub labels: Vec<u32>,
    pub sizes: Vec<usize>,
}

impl ComponentSet {
    pub fn n(&self) -> usize {
        self.sizes.len()
    }

    pub fn foreground(&self) -> usize {
        self.sizes.iter().sum()
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn find(&mut self, mut a: u32) -> u32 {
        while self.parent[a as usize] != a {
            let up = self.parent[self.parent[a as usize] as usize];
            self.parent[a as usize] = up;
            a = up;
        }
        a
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        // The smaller provisional label (earlier voxel) stays the root.
        if ra < rb {
            self.parent[rb as usize] = ra;
        } else if rb < ra {
            self.parent[ra as usize] = rb;
        }
    }
}

/// Two-pass union-find labelling.
pub fn connected_components(mask: &LabelVolume, connectivity: Connectivity) -> ComponentSet {
    let dims = mask.dims();
    let [nx, ny, nz] = dims;
    let voxels = mask.voxels();
    let offsets = connectivity.backward_offsets();
    let mut provisional = vec![u32::MAX; voxels.len()];
    let mut sets = DisjointSet { parent: Vec::new() };

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = (z * ny + y) * nx + x;
                if voxels[i] == 0 {
                    continue;
                }
                let mut label = u32::MAX;
                for &[dx, dy, dz] in &offsets {
                    let (qx, qy, qz) = (x as isize + dx, y as isize + dy, z as isize + dz);
                    if qx < 0 || qy < 0 || qz < 0 || qx >= nx as isize || qy >= ny as isize {
                        continue;
                    }
                    let q = provisional[(qz as usize * ny + qy as usize) * nx + qx as usize];
                    if q == u32::MAX {
                        continue;
                    }
                    if label == u32::MAX {
                        label = q;
                    } else {
                        sets.union(label, q);
                    }
                }
                if label == u32::MAX {
                    label = sets.parent.len() as u32;
                    sets.parent.push(label);
                }
                provisional[i] = label;
            }
        }
    }

    // Roots are the smallest provisional label of their set, so first
    // appearance in scan order equals first appearance of the root.
    let mut root_size = vec![0usize; sets.parent.len()];
    let mut root_first = vec![usize::MAX; sets.parent.len()];
    for (i, p) in provisional.iter_mut().enumerate() {
        if *p != u32::MAX {
            *p = sets.find(*p);
            root_size[*p as usize] += 1;
            root_first[*p as usize] = root_first[*p as usize].min(i);
        }
    }
    let mut roots: Vec<usize> = (0..root_size.len()).filter(|&r| root_size[r] > 0).collect();
    roots.sort_by_key(|&r| (std::cmp::Reverse(root_size[r]), root_first[r]));
    let mut final_id = vec![0u32; root_size.len()];
    for (k, &r) in roots.iter().enumerate() {
        final_id[r] = k as u32 + 1;
    }
    let labels = provisional.iter().map(|&p| if p == u32::MAX { 0 } else { final_id[p as usize] }).collect();
    ComponentSet { dims, labels, sizes: roots.iter().map(|&r| root_size[r]).collect() }
}

/// Share of the foreground held by the largest component; 0 for an empty mask.
pub fn robust_weight(components: &ComponentSet) -> f64 {
    match components.sizes.first() {
        Some(&largest) => largest as f64 / components.foreground() as f64,
        None => 0.0,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewPrediction {
    pub view: ViewAxis,
    pub prob: Volume3D,
    pub weight: f64,
}

impl ViewPrediction {
    /// Weight taken from the components of the 0.5-binarised probabilities.
    pub fn new(view: ViewAxis, prob: Volume3D, connectivity: Connectivity) -> Result<Self> {
        let mask = LabelVolume::from_threshold(&prob, 0.5);
        let weight = robust_weight(&connected_components(&mask, connectivity));
        Self::with_weight(view, prob, weight)
    }

    pub fn with_weight(view: ViewAxis, prob: Volume3D, weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::validation(format!("view weight {weight} outside [0, 1]")));
        }
        if prob.voxels().iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::validation("probabilities must lie in [0, 1]"));
        }
        Ok(Self { view, prob, weight })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedVolume {
    pub prob: Volume3D,
    pub mask: LabelVolume,
    /// Weights actually applied, in input order.
    pub weights: [f64; 3],
    /// Set when every weight was 0 and the unweighted mean was used.
    pub fallback: bool,
}

fn fuse_with(predictions: &[ViewPrediction; 3], weights: [f64; 3]) -> Result<FusedVolume> {
    let first = &predictions[0].prob;
    if predictions.iter().any(|p| !p.prob.same_grid(first)) {
        return Err(Error::shape("view probability volumes differ in dims or spacing"));
    }
    let total: f64 = weights.iter().sum();
    let (weights, fallback) = if total > 0.0 { (weights, false) } else { ([1.0; 3], true) };
    let total: f64 = weights.iter().sum();
    let [a, b, c] = [predictions[0].prob.voxels(), predictions[1].prob.voxels(), predictions[2].prob.voxels()];
    let fused: Vec<f32> = (0..a.len())
        .into_par_iter()
        .map(|i| {
            let s = weights[0] * f64::from(a[i]) + weights[1] * f64::from(b[i]) + weights[2] * f64::from(c[i]);
            (s / total) as f32
        })
        .collect();
    let prob = Volume3D::new(first.dims(), first.spacing(), fused)?;
    let mask = LabelVolume::from_threshold(&prob, 0.5);
    Ok(FusedVolume { prob, mask, weights, fallback })
}

/// Robust-region weighted mean of the three views, thresholded at 0.5.
pub fn adaptive_fuse(predictions: &[ViewPrediction; 3]) -> Result<FusedVolume> {
    fuse_with(predictions, [predictions[0].weight, predictions[1].weight, predictions[2].weight])
}

/// Plain mean of the three views, thresholded at 0.5.
pub fn linear_fuse(predictions: &[ViewPrediction; 3]) -> Result<FusedVolume> {
    fuse_with(predictions, [1.0 / 3.0; 3])
}
