//! Segmentation scores: Dice, symmetric surface distance and confusion rates.

use std::fmt;

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::volgrid::LabelVolume;

fn check_pair(pred: &LabelVolume, truth: &LabelVolume) -> Result<()> {
    if pred.dims() != truth.dims() {
        return Err(Error::shape(format!("mask dims {:?} vs {:?}", pred.dims(), truth.dims())));
    }
    Ok(())
}

/// Voxelwise confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn tally(pred: &LabelVolume, truth: &LabelVolume) -> Result<Self> {
        check_pair(pred, truth)?;
        let mut c = Confusion::default();
        for (&p, &t) in pred.voxels().iter().zip(truth.voxels()) {
            match (p, t) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fp += 1,
                (_, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// 1 when both masks are empty.
    pub fn dice(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    pub fn sensitivity(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }
}

fn ratio(num: u64, denom: u64) -> Option<f64> {
    (denom > 0).then(|| num as f64 / denom as f64)
}

pub fn dice(pred: &LabelVolume, truth: &LabelVolume) -> Result<f64> {
    Ok(Confusion::tally(pred, truth)?.dice())
}

/// Foreground voxels with a background face neighbour; outside the grid is background.
pub fn surface_voxels(mask: &LabelVolume) -> Vec<usize> {
    let [nx, ny, nz] = mask.dims();
    let v = mask.voxels();
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = (z * ny + y) * nx + x;
                if v[i] == 0 {
                    continue;
                }
                let border = x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz;
                if border
                    || v[i - 1] == 0
                    || v[i + 1] == 0
                    || v[i - nx] == 0
                    || v[i + nx] == 0
                    || v[i - nx * ny] == 0
                    || v[i + nx * ny] == 0
                {
                    out.push(i);
                }
            }
        }
    }
    out
}

/// In-place 1D squared distance transform over samples `spacing` apart
/// (lower envelope of parabolas). `f` holds squared distances or infinity.
fn edt_1d(f: &mut [f64], spacing: f64, v: &mut Vec<usize>, z: &mut Vec<f64>, out: &mut Vec<f64>) {
    let n = f.len();
    let pos = |q: usize| q as f64 * spacing;
    v.clear();
    z.clear();
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
                    if s <= *z.last().expect("paired with v") {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        return;
    }
    out.clear();
    let mut k = 0;
    for q in 0..n {
        while k + 1 < v.len() && z[k + 1] < pos(q) {
            k += 1;
        }
        let d = pos(q) - pos(v[k]);
        out.push(d * d + f[v[k]]);
    }
    f.copy_from_slice(out);
}

/// Exact squared physical distance from every voxel to the nearest site.
pub fn squared_distance_field(dims: [usize; 3], spacing: [f64; 3], sites: &[usize]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let mut field = vec![f64::INFINITY; nx * ny * nz];
    for &s in sites {
        field[s] = 0.0;
    }
    let (mut v, mut z, mut out) = (Vec::new(), Vec::new(), Vec::new());
    let mut line = Vec::new();
    let strides = [1, nx, nx * ny];
    for axis in 0..3 {
        let len = dims[axis];
        let stride = strides[axis];
        for start in 0..field.len() {
            if (start / stride) % len != 0 {
                continue;
            }
            line.clear();
            line.extend((0..len).map(|k| field[start + k * stride]));
            edt_1d(&mut line, spacing[axis], &mut v, &mut z, &mut out);
            for (k, &d) in line.iter().enumerate() {
                field[start + k * stride] = d;
            }
        }
    }
    field
}

/// Mean distance in mm over the surface voxels of both masks, each to the
/// nearest surface voxel of the other.
pub fn s2s_distance(pred: &LabelVolume, truth: &LabelVolume) -> Result<f64> {
    check_pair(pred, truth)?;
    if pred.spacing() != truth.spacing() {
        return Err(Error::shape("mask spacings differ"));
    }
    if pred.foreground_count() == 0 || truth.foreground_count() == 0 {
        return Err(Error::UndefinedMetric("surface distance needs two non-empty masks".into()));
    }
    let spacing = pred.spacing().map(f64::from);
    let (sp, st) = (surface_voxels(pred), surface_voxels(truth));
    let (to_truth, to_pred) = rayon::join(
        || squared_distance_field(pred.dims(), spacing, &st),
        || squared_distance_field(pred.dims(), spacing, &sp),
    );
    let total: f64 = sp.iter().map(|&i| to_truth[i].sqrt()).sum::<f64>() + st.iter().map(|&i| to_pred[i].sqrt()).sum::<f64>();
    Ok(total / (sp.len() + st.len()) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub confusion: Confusion,
    pub dice: f64,
    /// `None` when either mask is empty.
    pub s2s_mm: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
}

pub fn confusion_rates(pred: &LabelVolume, truth: &LabelVolume) -> Result<MetricsReport> {
    let c = Confusion::tally(pred, truth)?;
    Ok(MetricsReport {
        confusion: c,
        dice: c.dice(),
        s2s_mm: None,
        sensitivity: c.sensitivity(),
        specificity: c.specificity(),
        precision: c.precision(),
    })
}

/// Every metric; surface distance left undefined for empty masks.
pub fn evaluate(pred: &LabelVolume, truth: &LabelVolume) -> Result<MetricsReport> {
    let mut report = confusion_rates(pred, truth)?;
    report.s2s_mm = match s2s_distance(pred, truth) {
        Ok(d) => Some(d),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(report)
}

const UNDEFINED: &str = "undefined";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| x.to_string())
}

fn parse_opt(kv: &KeyValues, key: &str) -> Result<Option<f64>> {
    match kv.get(key) {
        Some(UNDEFINED) => Ok(None),
        _ => kv.require(key).map(Some),
    }
}

impl MetricsReport {
    /// One `key=value` line per metric; values round-trip exactly.
    pub fn to_kv_string(&self) -> String {
        let c = &self.confusion;
        [
            format!("dice={}", self.dice),
            format!("s2s_mm={}", opt(self.s2s_mm)),
            format!("sensitivity={}", opt(self.sensitivity)),
            format!("specificity={}", opt(self.specificity)),
            format!("precision={}", opt(self.precision)),
            format!("tp={}", c.tp),
            format!("fp={}", c.fp),
            format!("tn={}", c.tn),
            format!("fn={}", c.fn_),
        ]
        .iter()
        .map(|l| format!("{l}\n"))
        .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.check_keys(&["dice", "s2s_mm", "sensitivity", "specificity", "precision", "tp", "fp", "tn", "fn"])?;
        Ok(Self {
            confusion: Confusion { tp: kv.require("tp")?, fp: kv.require("fp")?, tn: kv.require("tn")?, fn_: kv.require("fn")? },
            dice: kv.require("dice")?,
            s2s_mm: parse_opt(&kv, "s2s_mm")?,
            sensitivity: parse_opt(&kv, "sensitivity")?,
            specificity: parse_opt(&kv, "specificity")?,
            precision: parse_opt(&kv, "precision")?,
        })
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or_else(|| UNDEFINED.to_string(), |x| format!("{x:.4}"));
        let c = &self.confusion;
        writeln!(f, "{:<12} {:>10}", "metric", "value")?;
        writeln!(f, "{:<12} {:>10.4}", "dice", self.dice)?;
        writeln!(f, "{:<12} {:>10}", "s2s (mm)", show(self.s2s_mm))?;
        writeln!(f, "{:<12} {:>10}", "sensitivity", show(self.sensitivity))?;
        writeln!(f, "{:<12} {:>10}", "specificity", show(self.specificity))?;
        writeln!(f, "{:<12} {:>10}", "precision", show(self.precision))?;
        write!(f, "{:<12} tp={} fp={} tn={} fn={}", "counts", c.tp, c.fp, c.tn, c.fn_)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ANISO: [f32; 3] = [1.25, 1.25, 2.7];

    fn mask(dims: [usize; 3], spacing: [f32; 3], on: impl Fn(usize, usize, usize) -> bool) -> LabelVolume {
        let [nx, ny, nz] = dims;
        let mut v = Vec::with_capacity(nx * ny * nz);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    v.push(u8::from(on(x, y, z)));
                }
            }
        }
        LabelVolume::new(dims, spacing, v).unwrap()
    }

    fn random(seed: u64, n: usize, density: f64) -> LabelVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..n * n * n).map(|_| u8::from(rng.random_bool(density))).collect();
        LabelVolume::new([n, n, n], ANISO, v).unwrap()
    }

    /// All-pairs surface distance.
    fn brute_s2s(p: &LabelVolume, t: &LabelVolume) -> f64 {
        let s = p.spacing().map(f64::from);
        let pts = |m: &LabelVolume| -> Vec<[f64; 3]> {
            surface_voxels(m).iter().map(|&i| { let c = m.coords(i); [c[0] as f64 * s[0], c[1] as f64 * s[1], c[2] as f64 * s[2]] }).collect()
        };
        let (a, b) = (pts(p), pts(t));
        let nearest = |q: &[f64; 3], set: &[[f64; 3]]| {
            set.iter().map(|r| ((q[0] - r[0]).powi(2) + (q[1] - r[1]).powi(2) + (q[2] - r[2]).powi(2)).sqrt()).fold(f64::INFINITY, f64::min)
        };
        let total: f64 = a.iter().map(|q| nearest(q, &b)).sum::<f64>() + b.iter().map(|q| nearest(q, &a)).sum::<f64>();
        total / (a.len() + b.len()) as f64
    }

    #[test]
    fn dice_cases() {
        let a = mask([10, 10, 2], ANISO, |x, _, z| x < 5 && z == 0);
        let b = mask([10, 10, 2], ANISO, |x, _, z| x >= 5 && z == 0);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let c = mask([10, 10, 2], ANISO, |x, y, z| (x < 5 && z == 0 && y < 5) || (x >= 5 && z == 0 && y >= 5));
        assert_eq!(dice(&a, &c).unwrap(), 0.5);
        let empty = mask([2, 2, 2], ANISO, |_, _, _| false);
        assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
        assert!(matches!(dice(&a, &empty), Err(Error::Shape(_))));
    }

    #[test]
    fn s2s_cases() {
        let a = mask([3, 3, 4], ANISO, |x, y, z| (x, y, z) == (1, 1, 1));
        let b = mask([3, 3, 4], ANISO, |x, y, z| (x, y, z) == (1, 1, 2));
        assert!((s2s_distance(&a, &b).unwrap() - 2.7).abs() < 1e-6);
        let blob = random(3, 8, 0.4);
        assert_eq!(s2s_distance(&blob, &blob).unwrap(), 0.0);
        let empty = mask([3, 3, 4], ANISO, |_, _, _| false);
        assert!(matches!(s2s_distance(&a, &empty), Err(Error::UndefinedMetric(_))));
        assert!(evaluate(&a, &empty).unwrap().s2s_mm.is_none());
    }

    #[test]
    fn surface_of_solid_cube() {
        let cube = mask([5, 5, 5], ANISO, |x, y, z| (1..4).contains(&x) && (1..4).contains(&y) && (1..4).contains(&z));
        assert_eq!(surface_voxels(&cube).len(), 26);
        let full = mask([3, 3, 3], ANISO, |_, _, _| true);
        assert_eq!(surface_voxels(&full).len(), 26);
    }

    #[test]
    fn s2s_matches_brute_force() {
        for seed in 0..6 {
            let (p, t) = (random(seed, 10, 0.2), random(seed + 100, 10, 0.05));
            let d = s2s_distance(&p, &t).unwrap();
            assert!((d - brute_s2s(&p, &t)).abs() <= 1e-9);
            assert!((d - s2s_distance(&t, &p).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn rates() {
        let truth = mask([4, 4, 1], ANISO, |x, _, _| x < 2);
        let all = mask([4, 4, 1], ANISO, |_, _, _| true);
        let r = confusion_rates(&all, &truth).unwrap();
        assert_eq!((r.sensitivity, r.specificity, r.precision), (Some(1.0), Some(0.0), Some(0.5)));
        let same = confusion_rates(&truth, &truth).unwrap();
        assert_eq!((same.sensitivity, same.specificity, same.precision), (Some(1.0), Some(1.0), Some(1.0)));
        let empty = mask([4, 4, 1], ANISO, |_, _, _| false);
        let r = confusion_rates(&empty, &empty).unwrap();
        assert_eq!((r.sensitivity, r.precision, r.specificity), (None, None, Some(1.0)));
        assert_eq!(r.confusion.total(), 16);
    }

    #[test]
    fn report_round_trip() {
        let r = evaluate(&random(1, 6, 0.3), &random(2, 6, 0.3)).unwrap();
        assert_eq!(MetricsReport::parse(&r.to_kv_string()).unwrap(), r);
        let empty = mask([2, 2, 2], ANISO, |_, _, _| false);
        let u = evaluate(&empty, &empty).unwrap();
        let text = u.to_kv_string();
        assert!(text.contains("s2s_mm=undefined\n"));
        assert_eq!(MetricsReport::parse(&text).unwrap(), u);
        assert!(MetricsReport::parse(&(text + "extra=1\n")).is_err());
        assert!(r.to_string().contains("dice"));
    }

    proptest! {
        #[test]
        fn symmetric_and_translation_consistent(seed in any::<u64>(), dx in 0usize..3, dz in 0usize..2) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 6;
            let a: Vec<bool> = (0..n * n * n).map(|_| rng.random_bool(0.3)).collect();
            let b: Vec<bool> = (0..n * n * n).map(|_| rng.random_bool(0.3)).collect();
            let at = |m: &Vec<bool>, ox: usize, oz: usize| mask([12, 8, 10], ANISO, move |x, y, z| {
                x >= 2 + ox && x < 2 + ox + n && y >= 1 && y < 1 + n && z >= 2 + oz && z < 2 + oz + n
                    && m[((z - 2 - oz) * n + (y - 1)) * n + (x - 2 - ox)]
            });
            let (p0, t0, p1, t1) = (at(&a, 0, 0), at(&b, 0, 0), at(&a, dx, dz), at(&b, dx, dz));
            prop_assert_eq!(dice(&p0, &t0).unwrap(), dice(&t0, &p0).unwrap());
            prop_assert_eq!(confusion_rates(&p0, &t0).unwrap(), confusion_rates(&p1, &t1).unwrap());
            if p0.foreground_count() > 0 && t0.foreground_count() > 0 {
                let d = s2s_distance(&p0, &t0).unwrap();
                prop_assert!((d - s2s_distance(&t0, &p0).unwrap()).abs() < 1e-12);
                prop_assert!((d - s2s_distance(&p1, &t1).unwrap()).abs() < 1e-9);
                prop_assert_eq!(s2s_distance(&p0, &p0).unwrap(), 0.0);
            }
            prop_assert_eq!(dice(&p0, &t0).unwrap() == 1.0, p0 == t0);
        }
    }
}
