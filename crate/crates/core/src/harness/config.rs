//! Run configuration and its `key=value` file form.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::controller::{stats, ControllerConfig, DecaySchedule, Strategy};
use crate::filter::BilateralConfig;
use crate::harness::dataset::SceneParams;
use crate::losses::{FocalConfig, LossConfig, LossKind, TverskyConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("key '{key}': invalid value '{value}'")]
    Value { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Auxiliary loss added with the decaying factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AuxLoss {
    None,
    Tversky,
    Focal,
    CbDice,
}

impl AuxLoss {
    pub const ALL: [AuxLoss; 4] = [AuxLoss::Tversky, AuxLoss::Focal, AuxLoss::CbDice, AuxLoss::None];

    pub fn kind(self) -> Option<LossKind> {
        match self {
            AuxLoss::None => None,
            AuxLoss::Tversky => Some(LossKind::Tversky),
            AuxLoss::Focal => Some(LossKind::Focal),
            AuxLoss::CbDice => Some(LossKind::CbDice),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AuxLoss::None => "none",
            AuxLoss::Tversky => "tversky",
            AuxLoss::Focal => "focal",
            AuxLoss::CbDice => "cbdice",
        }
    }
}

impl fmt::Display for AuxLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AuxLoss {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(AuxLoss::None),
            "tversky" => Ok(AuxLoss::Tversky),
            "focal" => Ok(AuxLoss::Focal),
            "cbdice" | "cb_dice" | "cb-dice" => Ok(AuxLoss::CbDice),
            _ => Err(ConfigError::Value {
                key: "aux".into(),
                value: s.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub strategy: Strategy,
    /// Bypass the controller and use `1/N` throughout.
    pub fixed_weights: bool,
    pub base_losses: Vec<LossKind>,
    pub aux: AuxLoss,
    pub gamma0: f64,
    /// `None` picks the rate that brings `gamma` to 5% of `gamma0` at half
    /// the run.
    pub tau: Option<f64>,
    pub learning_rate: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub scenes: usize,
    pub scene: SceneParams,
    pub history: usize,
    pub warmup: u64,
    pub priors: Option<Vec<f64>>,
    /// Bilateral preprocessing; `None` feeds raw images to the model.
    pub filter: Option<BilateralConfig>,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    pub losses: LossConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Variance,
            fixed_weights: false,
            base_losses: vec![LossKind::CrossEntropy, LossKind::MeanIou, LossKind::MeanDice],
            aux: AuxLoss::CbDice,
            gamma0: 1.0,
            tau: None,
            learning_rate: 0.5,
            steps: 2000,
            batch_size: 8,
            seed: 1,
            scenes: 100,
            scene: SceneParams::default(),
            history: 64,
            warmup: 5,
            priors: None,
            filter: Some(BilateralConfig::default()),
            split: [0.70, 0.15, 0.15],
            losses: LossConfig::default(),
        }
    }
}

fn parse_f64_list(key: &str, raw: &str) -> Result<Vec<f64>, ConfigError> {
    raw.split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|_| ConfigError::Value {
                key: key.into(),
                value: raw.into(),
            })
        })
        .collect()
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn tau(&self) -> f64 {
        self.tau
            .unwrap_or_else(|| DecaySchedule::tau_for(0.05, self.steps / 2))
    }

    pub fn decay(&self) -> DecaySchedule {
        if self.aux == AuxLoss::None {
            DecaySchedule::disabled()
        } else {
            DecaySchedule {
                gamma0: self.gamma0,
                tau: self.tau(),
            }
        }
    }

    pub fn controller_config(&self) -> ControllerConfig {
        ControllerConfig {
            strategy: self.strategy,
            priors: self.priors.clone(),
            history_capacity: self.history,
            warmup_steps: self.warmup,
            epsilon: 1e-12,
            decay: self.decay(),
        }
    }

    /// Short label such as `variance+cbdice` or `fixed`.
    pub fn label(&self) -> String {
        if self.fixed_weights {
            match self.aux {
                AuxLoss::None => "fixed".into(),
                aux => format!("fixed+{aux}"),
            }
        } else {
            format!("{}+{}", self.strategy, self.aux)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.into()));
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (sum - 1.0).abs() > 1e-9 {
            return invalid("split fractions must be in [0, 1] and sum to 1");
        }
        if self.base_losses.is_empty() {
            return invalid("at least one base loss is required");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid("learning rate must be positive");
        }
        if self.batch_size == 0 || self.steps == 0 {
            return invalid("steps and batch size must be positive");
        }
        if self.history < 2 {
            return invalid("history must hold at least 2 values");
        }
        let test_count = self.split_counts().2;
        if self.split_counts().0 == 0 || test_count == 0 {
            return invalid("too few scenes for the train/test split");
        }
        if let Some(p) = &self.priors {
            if p.len() != self.base_losses.len() || stats::validate_simplex(p).is_err() {
                return invalid("priors must be a simplex with one entry per base loss");
            }
        }
        if !(self.gamma0 >= 0.0 && self.gamma0.is_finite()) || self.tau().is_nan() || self.tau() < 0.0 {
            return invalid("gamma0 and tau must be non-negative");
        }
        if let Some(f) = &self.filter {
            BilateralConfig::new(f.sigma_s, f.sigma_r).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let s = &self.scene;
        if s.width < 8 || s.height < 8 {
            return invalid("scenes must be at least 8x8");
        }
        Ok(())
    }

    /// Scene counts for train, validation and test.
    pub fn split_counts(&self) -> (usize, usize, usize) {
        let n = self.scenes;
        let train = (self.split[0] * n as f64).round() as usize;
        let val = ((self.split[1] * n as f64).round() as usize).min(n - train.min(n));
        (train.min(n), val, n - train.min(n) - val)
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::Value {
            key: key.into(),
            value: value.into(),
        };
        let v = value.trim();
        macro_rules! num {
            () => {
                v.parse().map_err(|_| bad())?
            };
        }
        match key.trim() {
            "strategy" => self.strategy = v.parse().map_err(|_| bad())?,
            "fixed_weights" => self.fixed_weights = v.parse().map_err(|_| bad())?,
            "base_losses" => {
                self.base_losses = v
                    .split(',')
                    .map(|s| s.parse::<LossKind>().map_err(|_| bad()))
                    .collect::<Result<_, _>>()?
            }
            "aux" => self.aux = v.parse()?,
            "gamma0" => self.gamma0 = num!(),
            "tau" => self.tau = if v == "auto" { None } else { Some(num!()) },
            "lr" => self.learning_rate = num!(),
            "steps" => self.steps = num!(),
            "batch" => self.batch_size = num!(),
            "seed" => self.seed = num!(),
            "scenes" => self.scenes = num!(),
            "width" => self.scene.width = num!(),
            "height" => self.scene.height = num!(),
            "contrast" => self.scene.contrast = num!(),
            "speckle" => self.scene.speckle = num!(),
            "history" => self.history = num!(),
            "warmup" => self.warmup = num!(),
            "priors" => {
                self.priors = if v.is_empty() || v == "uniform" {
                    None
                } else {
                    Some(parse_f64_list(key, v)?)
                }
            }
            "filter" => {
                let on: bool = v.parse().map_err(|_| bad())?;
                self.filter = match (on, self.filter) {
                    (true, None) => Some(BilateralConfig::default()),
                    (true, f) => f,
                    (false, _) => None,
                };
            }
            "sigma_s" => self.filter.get_or_insert_with(BilateralConfig::default).sigma_s = num!(),
            "sigma_r" => self.filter.get_or_insert_with(BilateralConfig::default).sigma_r = num!(),
            "split" => {
                let parts = parse_f64_list(key, v)?;
                self.split = parts.try_into().map_err(|_| bad())?;
            }
            "focal_gamma" => self.losses.focal.gamma = num!(),
            "focal_alpha" => {
                self.losses.focal.alpha = if v.is_empty() {
                    None
                } else {
                    Some(parse_f64_list(key, v)?)
                }
            }
            "tversky_alpha" => self.losses.tversky.alpha = num!(),
            "tversky_beta" => self.losses.tversky.beta = num!(),
            "cb_dice_weight_mode" => self.losses.class_weight_mode = v.parse().map_err(|_| bad())?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Parses a `key=value` file on top of the defaults.
    pub fn from_kv(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    pub fn apply_kv(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let names: Vec<&str> = self.base_losses.iter().map(|k| k.name()).collect();
        let LossConfig {
            focal: FocalConfig { alpha, gamma },
            tversky: TverskyConfig { alpha: ta, beta: tb },
            class_weight_mode,
            ..
        } = &self.losses;
        let mut lines = vec![
            format!("strategy={}", self.strategy),
            format!("fixed_weights={}", self.fixed_weights),
            format!("base_losses={}", names.join(",")),
            format!("aux={}", self.aux),
            format!("gamma0={:?}", self.gamma0),
            format!("tau={}", self.tau.map_or("auto".into(), |t| format!("{t:?}"))),
            format!("lr={:?}", self.learning_rate),
            format!("steps={}", self.steps),
            format!("batch={}", self.batch_size),
            format!("seed={}", self.seed),
            format!("scenes={}", self.scenes),
            format!("width={}", self.scene.width),
            format!("height={}", self.scene.height),
            format!("contrast={:?}", self.scene.contrast),
            format!("speckle={:?}", self.scene.speckle),
            format!("history={}", self.history),
            format!("warmup={}", self.warmup),
            format!("priors={}", self.priors.as_deref().map_or("uniform".into(), join)),
            format!("filter={}", self.filter.is_some()),
        ];
        if let Some(f) = &self.filter {
            lines.push(format!("sigma_s={:?}", f.sigma_s));
            lines.push(format!("sigma_r={:?}", f.sigma_r));
        }
        lines.extend([
            format!("split={}", join(&self.split)),
            format!("focal_gamma={gamma:?}"),
            format!("focal_alpha={}", alpha.as_deref().map_or(String::new(), join)),
            format!("tversky_alpha={ta:?}"),
            format!("tversky_beta={tb:?}"),
            format!("cb_dice_weight_mode={class_weight_mode}"),
        ]);
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}
