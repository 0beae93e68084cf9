use std::fmt;
use std::str::FromStr;

use crate::augment::AugmentPlan;
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::loss::{LossKind, ZLossParams};
use crate::volgrid::{DiffusionParams, ViewAxis};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentSetting {
    None,
    Default,
}

impl AugmentSetting {
    pub fn plan(self) -> AugmentPlan {
        match self {
            AugmentSetting::None => AugmentPlan::none(),
            AugmentSetting::Default => AugmentPlan::default(),
        }
    }
}

impl fmt::Display for AugmentSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AugmentSetting::None => "none",
            AugmentSetting::Default => "default",
        })
    }
}

impl FromStr for AugmentSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AugmentSetting::None),
            "default" => Ok(AugmentSetting::Default),
            other => Err(Error::Config(format!("unknown augment setting {other:?}"))),
        }
    }
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub view: ViewAxis,
    pub loss: LossKind,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub base_filters: usize,
    pub diffusion: DiffusionParams,
    pub augment: AugmentSetting,
    /// Keep every n-th slice without foreground (1 keeps all).
    pub empty_slice_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            view: ViewAxis::A,
            loss: LossKind::ZLoss(ZLossParams::default()),
            lr: 1e-3,
            momentum: 0.9,
            batch: 8,
            epochs: 1,
            seed: 0,
            base_filters: 16,
            diffusion: DiffusionParams::default(),
            augment: AugmentSetting::Default,
            empty_slice_stride: 1,
        }
    }
}

const KEYS: &[&str] = &[
    "view",
    "loss",
    "lr",
    "momentum",
    "batch",
    "epochs",
    "seed",
    "base_filters",
    "zloss_a",
    "zloss_b",
    "diffusion_iterations",
    "diffusion_kappa",
    "diffusion_dt",
    "augment",
    "empty_slice_stride",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch < 2 {
            return Err(Error::Config("batch must be at least 2".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.base_filters < 1 {
            return Err(Error::Config("base_filters must be at least 1".into()));
        }
        if self.empty_slice_stride < 1 {
            return Err(Error::Config("empty_slice_stride must be at least 1".into()));
        }
        if let LossKind::ZLoss(p) = &self.loss {
            p.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.diffusion.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Overlays keys present in `kv` on the defaults.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        Self::overlay(Self::default(), kv)
    }

    pub fn overlay(base: Self, kv: &KeyValues) -> Result<Self> {
        kv.check_keys(KEYS)?;
        let mut c = base;
        if let Some(v) = kv.get("view") {
            c.view = v.parse().map_err(|_| Error::Config(format!("bad view {v:?}")))?;
        }
        let (mut a, mut b) = match c.loss {
            LossKind::ZLoss(p) => (p.a, p.b),
            LossKind::CrossEntropy => (1.0, 1.0),
        };
        a = kv.get_parsed("zloss_a")?.unwrap_or(a);
        b = kv.get_parsed("zloss_b")?.unwrap_or(b);
        let name = kv.get("loss").unwrap_or(c.loss.name());
        c.loss = match name.parse::<LossKind>()? {
            LossKind::ZLoss(_) => LossKind::ZLoss(ZLossParams { a, b, ..ZLossParams::default() }),
            ce => ce,
        };
        c.lr = kv.get_parsed("lr")?.unwrap_or(c.lr);
        c.momentum = kv.get_parsed("momentum")?.unwrap_or(c.momentum);
        c.batch = kv.get_parsed("batch")?.unwrap_or(c.batch);
        c.epochs = kv.get_parsed("epochs")?.unwrap_or(c.epochs);
        c.seed = kv.get_parsed("seed")?.unwrap_or(c.seed);
        c.base_filters = kv.get_parsed("base_filters")?.unwrap_or(c.base_filters);
        c.diffusion.iterations = kv.get_parsed("diffusion_iterations")?.unwrap_or(c.diffusion.iterations);
        c.diffusion.kappa = kv.get_parsed("diffusion_kappa")?.unwrap_or(c.diffusion.kappa);
        c.diffusion.dt = kv.get_parsed("diffusion_dt")?.unwrap_or(c.diffusion.dt);
        c.augment = kv.get_parsed("augment")?.unwrap_or(c.augment);
        c.empty_slice_stride = kv.get_parsed("empty_slice_stride")?.unwrap_or(c.empty_slice_stride);
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("view", self.view.tag());
        kv.set("loss", self.loss.name());
        if let LossKind::ZLoss(p) = &self.loss {
            kv.set("zloss_a", p.a);
            kv.set("zloss_b", p.b);
        }
        kv.set("lr", self.lr);
        kv.set("momentum", self.momentum);
        kv.set("batch", self.batch);
        kv.set("epochs", self.epochs);
        kv.set("seed", self.seed);
        kv.set("base_filters", self.base_filters);
        kv.set("diffusion_iterations", self.diffusion.iterations);
        kv.set("diffusion_kappa", self.diffusion.kappa);
        kv.set("diffusion_dt", self.diffusion.dt);
        kv.set("augment", self.augment);
        kv.set("empty_slice_stride", self.empty_slice_stride);
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn kv_round_trip() {
        let kv = KeyValues::parse("view=s\nloss=cross_entropy\nlr=0.0125\nbatch=4\nseed=99\naugment=none").unwrap();
        let c = TrainConfig::from_kv(&kv).unwrap();
        assert_eq!(c.view, ViewAxis::S);
        assert_eq!(c.loss, LossKind::CrossEntropy);
        assert_eq!(c.lr, 0.0125);
        assert_eq!(TrainConfig::from_kv(&c.to_kv()).unwrap(), c);

        let z = TrainConfig::from_kv(&KeyValues::parse("zloss_a=2.5\nzloss_b=0.1").unwrap()).unwrap();
        assert_eq!(z.loss, LossKind::ZLoss(ZLossParams::new(2.5, 0.1).unwrap()));
        assert_eq!(TrainConfig::from_kv(&z.to_kv()).unwrap(), z);
    }

    #[test]
    fn rejects_invalid_settings() {
        for bad in ["lr=0", "batch=1", "epochs=0", "momentum=1.0", "view=x", "loss=hinge", "colour=red", "zloss_a=-1"] {
            let kv = KeyValues::parse(bad).unwrap();
            assert!(matches!(TrainConfig::from_kv(&kv), Err(Error::Config(_))), "{bad}");
        }
    }
}
