use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use cardiacnet::fusion::Connectivity;
use cardiacnet::kv::KeyValues;
use cardiacnet::metrics::evaluate;
use cardiacnet::phantom::{generate_phantom, PhantomParams};
use cardiacnet::pipeline::{build_reference, segment as run_segment, training_samples, FusionMode, ViewModel};
use cardiacnet::train::{Checkpoint, TrainConfig, Trainer};
use cardiacnet::volgrid::{read_cvol, LabelVolume, ViewAxis, Volume3D};
use cardiacnet::Error;
use rayon::prelude::*;

use crate::output::Staged;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Unpaired(String),
    Divergence(String),
    Dims(String),
    EmptySurface(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Unpaired(_) => 4,
            CliError::Divergence(_) => 5,
            CliError::Dims(_) => 6,
            CliError::EmptySurface(_) => 7,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m)
            | CliError::Io(m)
            | CliError::Unpaired(m)
            | CliError::Divergence(m)
            | CliError::Dims(m)
            | CliError::EmptySurface(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io(_) | Error::Format(_) | Error::Length { .. } => CliError::Io(msg),
            Error::Shape(_) => CliError::Dims(msg),
            Error::Divergence(_) | Error::NonFinite(_) => CliError::Divergence(msg),
            Error::UndefinedMetric(_) => CliError::EmptySurface(msg),
            Error::Config(_) | Error::Parameter(_) | Error::Validation(_) | Error::State(_) => CliError::Config(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn read_kv(path: Option<&Path>) -> CliResult<KeyValues> {
    let Some(path) = path else {
        return Ok(KeyValues::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(KeyValues::parse(&text)?)
}

fn read_image(path: &Path) -> CliResult<Volume3D> {
    let context = |e: Error| CliError::from(e).with_path(path);
    read_cvol(path).and_then(|v| v.into_intensity()).map_err(context)
}

fn read_label(path: &Path) -> CliResult<LabelVolume> {
    let context = |e: Error| CliError::from(e).with_path(path);
    read_cvol(path).and_then(|v| v.into_label()).map_err(context)
}

impl CliError {
    fn with_path(self, path: &Path) -> Self {
        let p = path.display();
        match self {
            CliError::Config(m) => CliError::Config(format!("{p}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{p}: {m}")),
            CliError::Unpaired(m) => CliError::Unpaired(format!("{p}: {m}")),
            CliError::Divergence(m) => CliError::Divergence(format!("{p}: {m}")),
            CliError::Dims(m) => CliError::Dims(format!("{p}: {m}")),
            CliError::EmptySurface(m) => CliError::EmptySurface(format!("{p}: {m}")),
        }
    }
}

pub fn phantom(count: usize, out: &Path, seed: Option<u64>, config: Option<&Path>) -> CliResult {
    let mut params = PhantomParams::default().overlay(&read_kv(config)?)?;
    if let Some(s) = seed {
        params.seed = s;
    }
    let volumes: Vec<_> = (0..count)
        .into_par_iter()
        .map(|i| generate_phantom(&PhantomParams { seed: params.seed.wrapping_add(i as u64), ..params.clone() }))
        .collect::<Result<_, _>>()?;
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let mut staged = Staged::default();
    for (i, (image, label)) in volumes.iter().enumerate() {
        staged.volume(&out.join(format!("p{i:03}_img.cvl")), image)?;
        staged.volume(&out.join(format!("p{i:03}_lbl.cvl")), label)?;
    }
    staged.commit()?;
    println!("wrote {count} phantom pair(s) to {}", out.display());
    Ok(())
}

/// `<stem>_img.cvl` / `<stem>_lbl.cvl` pairs in name order.
fn find_pairs(dir: &Path) -> CliResult<Vec<(PathBuf, PathBuf)>> {
    let mut stems: BTreeMap<String, (Option<PathBuf>, Option<PathBuf>)> = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if let Some(stem) = name.strip_suffix("_img.cvl") {
            stems.entry(stem.to_string()).or_default().0 = Some(path.clone());
        } else if let Some(stem) = name.strip_suffix("_lbl.cvl") {
            stems.entry(stem.to_string()).or_default().1 = Some(path.clone());
        }
    }
    let mut pairs = Vec::new();
    for (stem, pair) in stems {
        match pair {
            (Some(img), Some(lbl)) => pairs.push((img, lbl)),
            _ => return Err(CliError::Unpaired(format!("{stem}: missing image or label file"))),
        }
    }
    if pairs.is_empty() {
        return Err(CliError::Unpaired(format!("no *_img.cvl / *_lbl.cvl pairs in {}", dir.display())));
    }
    Ok(pairs)
}

pub fn train(data_dir: &Path, view: ViewAxis, out: &Path, config: Option<&Path>, seed: Option<u64>) -> CliResult {
    let mut cfg = TrainConfig::overlay(TrainConfig::default(), &read_kv(config)?)?;
    cfg.view = view;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let pairs = find_pairs(data_dir)?
        .iter()
        .map(|(img, lbl)| Ok((read_image(img)?, read_label(lbl)?)))
        .collect::<CliResult<Vec<_>>>()?;
    let dims = pairs[0].0.dims();
    if let Some((img, _)) = pairs.iter().find(|(img, lbl)| img.dims() != dims || lbl.dims() != img.dims()) {
        return Err(CliError::Dims(format!("volume dims {:?} differ from {dims:?}", img.dims())));
    }
    let reference = build_reference(&pairs[0].0, view, &cfg.diffusion)?;
    let samples = training_samples(&pairs, &cfg, &reference)?;
    let mut trainer = Trainer::<f32>::new(cfg.clone())?;
    for _ in 0..cfg.epochs {
        let report = trainer.train_epoch(&samples)?;
        println!("epoch={} loss={}", report.epoch, report.mean_loss);
    }
    let mut staged = Staged::default();
    staged.bytes(out, &Checkpoint::from_trainer(&trainer, reference, dims).encode())?;
    staged.commit()?;
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn segment(image: &Path, ckpts: &[PathBuf], mode: &str, out: &Path, config: Option<&Path>) -> CliResult {
    let mode: FusionMode = mode.parse()?;
    let kv = read_kv(config)?;
    kv.check_keys(&["connectivity"])?;
    let connectivity: Connectivity = kv.get_parsed("connectivity")?.unwrap_or_default();
    let volume = read_image(image)?;
    let models = ckpts
        .iter()
        .map(|p| Checkpoint::load(p).map(ViewModel::from).map_err(|e| CliError::from(e).with_path(p)))
        .collect::<CliResult<Vec<_>>>()?;
    let result = run_segment(&volume, &models, mode, connectivity)?;
    let mut staged = Staged::default();
    staged.volume(&with_suffix(out, ".prob.cvl"), &result.prob)?;
    staged.volume(&with_suffix(out, ".mask.cvl"), &result.mask)?;
    staged.commit()?;
    if let Some([a, s, c]) = result.weights {
        println!("w_A={a} w_S={s} w_C={c}");
    }
    if result.fallback {
        println!("all view weights were 0; used the unweighted mean");
    }
    println!("foreground voxels: {}", result.mask.foreground_count());
    Ok(())
}

pub fn eval(pred: &Path, truth: &Path, out: &Path) -> CliResult {
    let (p, t) = (read_label(pred)?, read_label(truth)?);
    if !p.same_grid(&t) {
        return Err(CliError::Dims(format!(
            "prediction {:?} @ {:?} vs truth {:?} @ {:?}",
            p.dims(),
            p.spacing(),
            t.dims(),
            t.spacing()
        )));
    }
    let report = evaluate(&p, &t)?;
    let mut staged = Staged::default();
    staged.bytes(out, report.to_kv_string().as_bytes())?;
    staged.commit()?;
    println!("{report}");
    println!("dice={}", report.dice);
    match report.s2s_mm {
        Some(_) => Ok(()),
        None => Err(CliError::EmptySurface("surface distance undefined: a mask is empty".into())),
    }
}
