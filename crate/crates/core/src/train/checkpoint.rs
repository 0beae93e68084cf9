//! CKP1 checkpoint container.
//!
//! `CKP1` magic, `u32` LE header length, UTF-8 header, then every tensor of
//! the manifest as `f32` LE in manifest order, then the 256-bin reference CDF
//! as `f64` LE. Header lines are `key=value` entries plus one
//! `tensor <name> <d0>x<d1>...` line per payload tensor.

use std::fs;
use std::path::Path;

use super::config::TrainConfig;
use super::trainer::Trainer;
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::net::{ArchitectureSpec, NetworkParams};
use crate::volgrid::{ReferenceHistogram, HISTOGRAM_BINS};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKP1";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub arch: ArchitectureSpec,
    pub params: NetworkParams<f32>,
    /// Momentum state, so a resumed run continues the same trajectory.
    pub velocity: Vec<Vec<f32>>,
    /// Histogram-matching target used for this view's preprocessing.
    pub reference: ReferenceHistogram,
    /// Dims of the training volumes.
    pub source_dims: [usize; 3],
    pub epoch: usize,
}

struct Manifest {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer<f32>, reference: ReferenceHistogram, source_dims: [usize; 3]) -> Self {
        Self {
            config: trainer.config.clone(),
            arch: trainer.arch,
            params: trainer.params.clone(),
            velocity: trainer.velocity.clone(),
            reference,
            source_dims,
            epoch: trainer.epoch,
        }
    }

    pub fn into_trainer(self) -> Result<Trainer<f32>> {
        Trainer::from_parts(self.config, self.params, self.velocity, self.epoch)
    }

    fn manifest(&self) -> (Manifest, Vec<&[f32]>) {
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut data: Vec<&[f32]> = Vec::new();
        for (i, conv) in self.params.convs.iter().enumerate() {
            names.push(format!("conv{i:02}.weight"));
            shapes.push(vec![conv.out_channels, conv.in_channels, 3, 3]);
            data.push(&conv.weight);
            names.push(format!("conv{i:02}.bias"));
            shapes.push(vec![conv.out_channels]);
            data.push(&conv.bias);
            if let Some(bn) = self.params.norms.get(i) {
                for (field, t) in
                    [("gamma", &bn.gamma), ("beta", &bn.beta), ("running_mean", &bn.running_mean), ("running_var", &bn.running_var)]
                {
                    names.push(format!("bn{i:02}.{field}"));
                    shapes.push(vec![t.len()]);
                    data.push(t);
                }
            }
        }
        let trainable = self.params.trainable();
        for ((name, v), p) in self.params.trainable_names().into_iter().zip(&self.velocity).zip(trainable) {
            names.push(format!("velocity.{name}"));
            let idx = names.iter().position(|n| *n == name).expect("trainable tensor is in manifest");
            shapes.push(if p.len() == v.len() { shapes[idx].clone() } else { vec![v.len()] });
            data.push(v);
        }
        (Manifest { names, shapes }, data)
    }

    fn header(&self, manifest: &Manifest) -> String {
        let mut kv = KeyValues::default();
        kv.set("version", VERSION);
        kv.set("base_filters", self.arch.base_filters);
        kv.set("in_channels", self.arch.in_channels);
        kv.set("num_classes", self.arch.num_classes);
        kv.set("epoch", self.epoch);
        let [x, y, z] = self.source_dims;
        kv.set("source_dims", format!("{x},{y},{z}"));
        kv.set("ref_lo", self.reference.lo());
        kv.set("ref_hi", self.reference.hi());
        let config = self.config.to_kv();
        let mut text = String::new();
        for key in kv.keys() {
            text.push_str(&format!("{key}={}\n", kv.get(key).expect("present")));
        }
        for key in config.keys() {
            text.push_str(&format!("config.{key}={}\n", config.get(key).expect("present")));
        }
        for (name, shape) in manifest.names.iter().zip(&manifest.shapes) {
            let dims: Vec<String> = shape.iter().map(ToString::to_string).collect();
            text.push_str(&format!("tensor {name} {}\n", dims.join("x")));
        }
        text
    }

    pub fn encode(&self) -> Vec<u8> {
        let (manifest, data) = self.manifest();
        let header = self.header(&manifest);
        let floats: usize = data.iter().map(|d| d.len()).sum();
        let mut out = Vec::with_capacity(8 + header.len() + 4 * floats + 8 * HISTOGRAM_BINS);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for t in data {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for c in self.reference.cdf() {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("missing CKP1 magic".into()));
        }
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let header_end = 8usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or(Error::Length { expected: 8 + header_len, found: bytes.len() })?;
        let text = std::str::from_utf8(&bytes[8..header_end])
            .map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;

        let mut plain = String::new();
        let mut config_text = String::new();
        let mut manifest = Manifest { names: Vec::new(), shapes: Vec::new() };
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("tensor ") {
                let (name, dims) = rest
                    .split_once(' ')
                    .ok_or_else(|| Error::Format(format!("bad manifest line {line:?}")))?;
                let shape = dims
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::Format(format!("bad tensor shape {dims:?}")))?;
                manifest.names.push(name.to_string());
                manifest.shapes.push(shape);
            } else if let Some(rest) = line.strip_prefix("config.") {
                config_text.push_str(rest);
                config_text.push('\n');
            } else {
                plain.push_str(line);
                plain.push('\n');
            }
        }
        let kv = KeyValues::parse(&plain)?;
        let version: u32 = kv.require("version")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let config = TrainConfig::from_kv(&KeyValues::parse(&config_text)?)?;
        let arch = ArchitectureSpec {
            base_filters: kv.require("base_filters")?,
            in_channels: kv.require("in_channels")?,
            num_classes: kv.require("num_classes")?,
        };
        if arch != ArchitectureSpec::new(config.base_filters)? {
            return Err(Error::Format("checkpoint architecture disagrees with its config".into()));
        }
        let dims: Vec<usize> = kv
            .require::<String>("source_dims")?
            .split(',')
            .map(|d| d.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format("bad source_dims".into()))?;
        let source_dims: [usize; 3] = dims.try_into().map_err(|_| Error::Format("source_dims needs 3 values".into()))?;

        // Rebuild the expected layout from a template and demand an exact match.
        let template_params = NetworkParams::<f32>::init(&arch, 0);
        let template = Checkpoint {
            config: config.clone(),
            arch,
            velocity: template_params.trainable().iter().map(|t| vec![0.0; t.len()]).collect(),
            params: template_params,
            reference: ReferenceHistogram::uniform(0.0, 1.0)?,
            source_dims,
            epoch: 0,
        };
        let (expected, _) = template.manifest();
        if expected.names != manifest.names || expected.shapes != manifest.shapes {
            return Err(Error::Format("tensor manifest does not match the architecture".into()));
        }
        let floats: usize = manifest.shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        let total = header_end + 4 * floats + 8 * HISTOGRAM_BINS;
        if bytes.len() != total {
            return Err(Error::Length { expected: total, found: bytes.len() });
        }
        let mut cursor = header_end;
        let mut tensors = manifest.shapes.iter().map(|shape| {
            let n: usize = shape.iter().product();
            let t: Vec<f32> = bytes[cursor..cursor + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            cursor += 4 * n;
            t
        });
        let mut params = template.params;
        for i in 0..params.convs.len() {
            params.convs[i].weight = tensors.next().expect("manifest checked");
            params.convs[i].bias = tensors.next().expect("manifest checked");
            if let Some(bn) = params.norms.get_mut(i) {
                bn.gamma = tensors.next().expect("manifest checked");
                bn.beta = tensors.next().expect("manifest checked");
                bn.running_mean = tensors.next().expect("manifest checked");
                bn.running_var = tensors.next().expect("manifest checked");
            }
        }
        let velocity: Vec<Vec<f32>> = tensors.collect();
        params.check_arch(&arch)?;
        let cdf: Vec<f64> = bytes[cursor..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let reference = ReferenceHistogram::new(kv.require("ref_lo")?, kv.require("ref_hi")?, cdf)?;
        Ok(Self { config, arch, params, velocity, reference, source_dims, epoch: kv.require("epoch")? })
    }

    /// Writes via a sibling temporary file so a failed save leaves nothing behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("ckp.partial");
        fs::write(&tmp, self.encode())?;
        fs::rename(&tmp, path).inspect_err(|_| {
            let _ = fs::remove_file(&tmp);
        })?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LossKind;
    use crate::train::Sample;
    use crate::net::FeatureMap;

    fn trained(epochs: usize) -> Trainer<f32> {
        let config = TrainConfig { base_filters: 2, batch: 2, lr: 0.05, seed: 3, ..TrainConfig::default() };
        let mut t = Trainer::new(config).unwrap();
        let data: Vec<Sample<f32>> = (0..4)
            .map(|k| {
                let labels: Vec<u8> = (0..64).map(|i| u8::from((i + k) % 3 == 0)).collect();
                let image = FeatureMap::new(1, 8, 8, labels.iter().map(|&l| f32::from(l) * 2.0 - 0.5).collect()).unwrap();
                Sample { image, labels }
            })
            .collect();
        for _ in 0..epochs {
            t.train_epoch(&data).unwrap();
        }
        t
    }

    #[test]
    fn round_trip_is_exact() {
        let t = trained(2);
        let reference = ReferenceHistogram::from_values(&[0.0, 1.5, 3.25, 3.25, 9.0]).unwrap();
        let ck = Checkpoint::from_trainer(&t, reference, [64, 64, 48]);
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode(), bytes);
        assert_eq!(back.epoch, 2);
        assert_eq!(back.into_trainer().unwrap(), t);
    }

    #[test]
    fn cross_entropy_config_survives() {
        let mut t = trained(0);
        t.config.loss = LossKind::CrossEntropy;
        let ck = Checkpoint::from_trainer(&t, ReferenceHistogram::uniform(0.0, 255.0).unwrap(), [8, 8, 8]);
        assert_eq!(Checkpoint::decode(&ck.encode()).unwrap().config.loss, LossKind::CrossEntropy);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let ck = Checkpoint::from_trainer(&trained(0), ReferenceHistogram::uniform(0.0, 1.0).unwrap(), [8, 8, 8]);
        let bytes = ck.encode();
        assert!(matches!(Checkpoint::decode(b"CKP2...."), Err(Error::Format(_))));
        assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 3]), Err(Error::Length { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Checkpoint::decode(&extra), Err(Error::Length { .. })));
        let text = String::from_utf8_lossy(&bytes).replace("tensor conv00.bias 2", "tensor conv00.bias 3");
        assert!(Checkpoint::decode(text.as_bytes()).is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckp");
        let ck = Checkpoint::from_trainer(&trained(1), ReferenceHistogram::uniform(0.0, 1.0).unwrap(), [8, 8, 8]);
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(ck.save(dir.path().join("missing/a.ckp")).is_err());
    }
}
