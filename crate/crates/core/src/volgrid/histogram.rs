//! Histogram matching against a 256-bin reference distribution.

use super::slices::Image2D;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const HISTOGRAM_BINS: usize = 256;
const CDF_TOLERANCE: f64 = 1e-12;

/// Cumulative histogram over `[lo, hi]`. Bin `j` stands for intensity
/// `lo + j (hi - lo) / 255`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceHistogram {
    lo: f64,
    hi: f64,
    cdf: Vec<f64>,
}

fn bin_of(v: f64, lo: f64, hi: f64) -> usize {
    if hi <= lo {
        return 0;
    }
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    (t * (HISTOGRAM_BINS - 1) as f64).round() as usize
}

fn cumulative(values: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut counts = vec![0usize; HISTOGRAM_BINS];
    for &v in values {
        counts[bin_of(v, lo, hi)] += 1;
    }
    let total = values.len() as f64;
    let mut acc = 0usize;
    counts
        .into_iter()
        .map(|c| {
            acc += c;
            acc as f64 / total
        })
        .collect()
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

impl ReferenceHistogram {
    pub fn new(lo: f64, hi: f64, cdf: Vec<f64>) -> Result<Self> {
        if cdf.len() != HISTOGRAM_BINS {
            return Err(Error::validation(format!("reference CDF needs {HISTOGRAM_BINS} bins, got {}", cdf.len())));
        }
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::validation(format!("bad reference range [{lo}, {hi}]")));
        }
        if cdf.iter().any(|c| !(0.0..=1.0 + CDF_TOLERANCE).contains(c)) || cdf.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::validation("reference CDF must be non-decreasing within [0, 1]"));
        }
        if (cdf[HISTOGRAM_BINS - 1] - 1.0).abs() > 1e-9 {
            return Err(Error::validation("reference CDF must end at 1"));
        }
        Ok(Self { lo, hi, cdf })
    }

    /// Empirical reference built from sample intensities.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("reference samples must be non-empty and finite"));
        }
        let (lo, hi) = min_max(values);
        Self::new(lo, hi, cumulative(values, lo, hi))
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        let cdf = (1..=HISTOGRAM_BINS).map(|j| j as f64 / HISTOGRAM_BINS as f64).collect();
        Self::new(lo, hi, cdf)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    pub fn bin_value(&self, bin: usize) -> f64 {
        self.lo + bin as f64 * (self.hi - self.lo) / (HISTOGRAM_BINS - 1) as f64
    }

    /// Smallest bin whose cumulative mass reaches `q`.
    pub fn quantile_bin(&self, q: f64) -> usize {
        self.cdf.partition_point(|&c| c < q - CDF_TOLERANCE).min(HISTOGRAM_BINS - 1)
    }
}

/// Maps each value to the reference intensity at the same quantile of the
/// input's own 256-bin distribution.
pub fn match_values<T: Real>(values: &[T], reference: &ReferenceHistogram) -> Result<Vec<T>> {
    let vals: Vec<f64> = values.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("histogram matching input contains non-finite values"));
    }
    if vals.is_empty() {
        return Ok(Vec::new());
    }
    let (lo, hi) = min_max(&vals);
    let own = cumulative(&vals, lo, hi);
    let lut: Vec<T> = own.iter().map(|&q| T::lit(reference.bin_value(reference.quantile_bin(q)))).collect();
    Ok(vals.iter().map(|&v| lut[bin_of(v, lo, hi)]).collect())
}

pub fn histogram_match<T: Real>(image: &Image2D<T>, reference: &ReferenceHistogram) -> Result<Image2D<T>> {
    Image2D::new(image.height, image.width, match_values(&image.data, reference)?)
}
