//! Synthetic atrium-like volumes: an ellipsoid body with four short tubes
//! attached at random surface points, two-level intensities and Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fusion::{connected_components, Connectivity};
use crate::kv::KeyValues;
use crate::volgrid::{LabelVolume, Volume3D};

const MAX_ATTEMPTS: usize = 20;
/// Radii shrink by this factor on every retry.
const SHRINK: f64 = 0.9;
const MARGIN_VOXELS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomParams {
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    /// Range of the body's semi-axes in mm.
    pub body_semi_axes_mm: (f64, f64),
    pub tube_radius_mm: (f64, f64),
    pub tube_length_mm: f64,
    pub tube_count: usize,
    pub foreground_mean: f32,
    pub background_mean: f32,
    pub noise_sigma: f32,
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            dims: [64, 64, 64],
            spacing: [1.25, 1.25, 2.7],
            body_semi_axes_mm: (16.0, 22.0),
            tube_radius_mm: (2.5, 4.0),
            tube_length_mm: 10.0,
            tube_count: 4,
            foreground_mean: 100.0,
            background_mean: 20.0,
            noise_sigma: 15.0,
            seed: 0,
        }
    }
}

const KEYS: [&str; 10] = [
    "dims",
    "spacing",
    "body_semi_axes_mm",
    "tube_radius_mm",
    "tube_length_mm",
    "tube_count",
    "foreground_mean",
    "background_mean",
    "noise_sigma",
    "seed",
];

fn parse_list<T: std::str::FromStr>(kv: &KeyValues, key: &str) -> Result<Option<Vec<T>>> {
    kv.get(key)
        .map(|v| {
            v.split(',')
                .map(|p| p.trim().parse::<T>().map_err(|_| Error::Config(format!("bad value {v:?} for {key}"))))
                .collect()
        })
        .transpose()
}

fn fixed<T: Copy, const N: usize>(v: Vec<T>, key: &str) -> Result<[T; N]> {
    v.try_into().map_err(|_| Error::Config(format!("{key} needs {N} comma-separated values")))
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dims.iter().any(|&d| d < 2 * MARGIN_VOXELS + 3) {
            return bad("phantom dims too small for the border margin");
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad("spacing must be positive");
        }
        let (lo, hi) = self.body_semi_axes_mm;
        let (rlo, rhi) = self.tube_radius_mm;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) || !(rlo > 0.0 && rlo <= rhi && rhi.is_finite()) {
            return bad("semi-axis and radius ranges need 0 < min ≤ max");
        }
        if !(self.tube_length_mm > 0.0 && self.tube_length_mm.is_finite()) {
            return bad("tube length must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be ≥ 0");
        }
        if !self.foreground_mean.is_finite() || !self.background_mean.is_finite() || self.foreground_mean == self.background_mean {
            return bad("foreground and background means must differ");
        }
        Ok(())
    }

    pub fn overlay(mut self, kv: &KeyValues) -> Result<Self> {
        kv.check_keys(&KEYS)?;
        if let Some(v) = parse_list(kv, "dims")? {
            self.dims = fixed(v, "dims")?;
        }
        if let Some(v) = parse_list(kv, "spacing")? {
            self.spacing = fixed(v, "spacing")?;
        }
        if let Some(v) = parse_list(kv, "body_semi_axes_mm")? {
            let [a, b] = fixed(v, "body_semi_axes_mm")?;
            self.body_semi_axes_mm = (a, b);
        }
        if let Some(v) = parse_list(kv, "tube_radius_mm")? {
            let [a, b] = fixed(v, "tube_radius_mm")?;
            self.tube_radius_mm = (a, b);
        }
        if let Some(v) = kv.get_parsed("tube_length_mm")? {
            self.tube_length_mm = v;
        }
        if let Some(v) = kv.get_parsed::<usize>("tube_count")? {
            if v != 4 {
                return Err(Error::Config("tube_count is fixed at 4".into()));
            }
        }
        if let Some(v) = kv.get_parsed("foreground_mean")? {
            self.foreground_mean = v;
        }
        if let Some(v) = kv.get_parsed("background_mean")? {
            self.background_mean = v;
        }
        if let Some(v) = kv.get_parsed("noise_sigma")? {
            self.noise_sigma = v;
        }
        if let Some(v) = kv.get_parsed("seed")? {
            self.seed = v;
        }
        self.validate()?;
        Ok(self)
    }
}

struct Tube {
    start: [f64; 3],
    axis: [f64; 3],
    radius: f64,
}

struct Shape {
    centre: [f64; 3],
    semi: [f64; 3],
    tubes: Vec<Tube>,
    length: f64,
}

impl Shape {
    fn draw(p: &PhantomParams, rng: &mut ChaCha8Rng, scale: f64) -> Self {
        let extent: [f64; 3] = std::array::from_fn(|a| (p.dims[a] - 1) as f64 * f64::from(p.spacing[a]));
        let (lo, hi) = p.body_semi_axes_mm;
        let semi: [f64; 3] = std::array::from_fn(|_| rng.random_range(lo..=hi) * scale);
        let centre: [f64; 3] = std::array::from_fn(|a| extent[a] / 2.0 + rng.random_range(-2.0..=2.0));
        let tubes = (0..p.tube_count)
            .map(|_| {
                let u: [f64; 3] = UnitSphere.sample(rng);
                let surface: [f64; 3] = std::array::from_fn(|a| centre[a] + semi[a] * u[a]);
                let normal: [f64; 3] = std::array::from_fn(|a| u[a] / semi[a]);
                let len = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
                let (rlo, rhi) = p.tube_radius_mm;
                Tube { start: surface, axis: normal.map(|v| v / len), radius: rng.random_range(rlo..=rhi) * scale }
            })
            .collect();
        Shape { centre, semi, tubes, length: p.tube_length_mm }
    }

    fn contains(&self, q: [f64; 3]) -> bool {
        let body: f64 = (0..3).map(|a| ((q[a] - self.centre[a]) / self.semi[a]).powi(2)).sum();
        if body <= 1.0 {
            return true;
        }
        self.tubes.iter().any(|t| {
            let d: [f64; 3] = std::array::from_fn(|a| q[a] - t.start[a]);
            let along: f64 = (0..3).map(|a| d[a] * t.axis[a]).sum();
            // Starting one radius inside the surface keeps the tube attached.
            if along < -t.radius || along > self.length {
                return false;
            }
            let perp2 = d.iter().map(|v| v * v).sum::<f64>() - along * along;
            perp2 <= t.radius * t.radius
        })
    }

    fn rasterize(&self, p: &PhantomParams) -> Vec<u8> {
        let [nx, ny, nz] = p.dims;
        let s = p.spacing.map(f64::from);
        (0..nz)
            .into_par_iter()
            .flat_map_iter(|z| {
                (0..ny).flat_map(move |y| {
                    (0..nx).map(move |x| u8::from(self.contains([x as f64 * s[0], y as f64 * s[1], z as f64 * s[2]])))
                })
            })
            .collect()
    }
}

fn clear_of_border(label: &LabelVolume) -> bool {
    let [nx, ny, nz] = label.dims();
    let m = MARGIN_VOXELS;
    label.voxels().iter().enumerate().all(|(i, &v)| {
        let [x, y, z] = label.coords(i);
        v == 0 || (x >= m && y >= m && z >= m && x + m < nx && y + m < ny && z + m < nz)
    })
}

/// Deterministic per seed. Retries with shrunken radii while the shape
/// touches the border margin or fails to be one 26-connected piece.
pub fn generate_phantom(params: &PhantomParams) -> Result<(Volume3D, LabelVolume)> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut scale = 1.0;
    for _ in 0..MAX_ATTEMPTS {
        let shape = Shape::draw(params, &mut rng, scale);
        let label = LabelVolume::new(params.dims, params.spacing, shape.rasterize(params))?;
        if clear_of_border(&label) && connected_components(&label, Connectivity::TwentySix).n() == 1 {
            let noise = Normal::new(0.0f32, params.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
            let image = label
                .voxels()
                .iter()
                .map(|&l| {
                    let mean = if l == 1 { params.foreground_mean } else { params.background_mean };
                    if params.noise_sigma > 0.0 {
                        mean + noise.sample(&mut rng)
                    } else {
                        mean
                    }
                })
                .collect();
            return Ok((Volume3D::new(params.dims, params.spacing, image)?, label));
        }
        scale *= SHRINK;
    }
    Err(Error::Config(format!("phantom does not fit the volume after {MAX_ATTEMPTS} attempts")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_seed_7() {
        let (image, label) = generate_phantom(&PhantomParams { seed: 7, ..Default::default() }).unwrap();
        assert_eq!(connected_components(&label, Connectivity::TwentySix).n(), 1);
        let frac = label.foreground_count() as f64 / label.len() as f64;
        assert!((0.01..=0.20).contains(&frac), "{frac}");
        assert!(clear_of_border(&label));
        assert_eq!(image.dims(), [64, 64, 64]);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let p = PhantomParams { dims: [32, 32, 24], seed: 3, ..Default::default() };
        let a = generate_phantom(&p).unwrap();
        assert_eq!(a, generate_phantom(&p).unwrap());
        assert_ne!(a.0, generate_phantom(&PhantomParams { seed: 4, ..p }).unwrap().0);
    }

    #[test]
    fn noiseless_has_two_levels() {
        let (image, label) = generate_phantom(&PhantomParams { noise_sigma: 0.0, seed: 1, ..Default::default() }).unwrap();
        let mut values: Vec<u32> = image.voxels().iter().map(|v| v.to_bits()).collect();
        values.sort_unstable();
        values.dedup();
        assert_eq!(values.len(), 2);
        for (&v, &l) in image.voxels().iter().zip(label.voxels()) {
            assert_eq!(v, if l == 1 { 100.0 } else { 20.0 });
        }
    }

    #[test]
    fn tubes_reach_out_of_the_body() {
        // Label strictly larger than the bare ellipsoid it was drawn from.
        let p = PhantomParams { seed: 9, noise_sigma: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let shape = Shape::draw(&p, &mut rng, 1.0);
        let body = Shape { tubes: Vec::new(), ..shape };
        let (_, label) = generate_phantom(&p).unwrap();
        let bare: usize = body.rasterize(&p).iter().map(|&v| v as usize).sum();
        assert!(label.foreground_count() > bare);
    }

    #[test]
    fn impossible_fit_is_an_error() {
        let p = PhantomParams { dims: [8, 8, 8], body_semi_axes_mm: (200.0, 200.0), ..Default::default() };
        assert!(matches!(generate_phantom(&p), Err(Error::Config(_))));
    }

    #[test]
    fn intensity_separation() {
        let p = PhantomParams::default();
        assert!(p.foreground_mean - p.background_mean >= 3.0 * p.noise_sigma);
        let (image, label) = generate_phantom(&PhantomParams { seed: 2, ..p }).unwrap();
        let mean = |want: u8| {
            let v: Vec<f64> = image.voxels().iter().zip(label.voxels()).filter(|(_, &l)| l == want).map(|(&x, _)| f64::from(x)).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(1) - mean(0) >= 3.0 * 15.0);
    }

    #[test]
    fn overlay_from_text() {
        let kv = KeyValues::parse("dims=32,32,16\nnoise_sigma=5\nbody_semi_axes_mm=8,10\n").unwrap();
        let p = PhantomParams::default().overlay(&kv).unwrap();
        assert_eq!((p.dims, p.noise_sigma, p.body_semi_axes_mm), ([32, 32, 16], 5.0, (8.0, 10.0)));
        assert!(PhantomParams::default().overlay(&KeyValues::parse("dims=3,3").unwrap()).is_err());
        assert!(PhantomParams::default().overlay(&KeyValues::parse("colour=red").unwrap()).is_err());
        assert!(PhantomParams::default().overlay(&KeyValues::parse("tube_count=3").unwrap()).is_err());
    }
}
