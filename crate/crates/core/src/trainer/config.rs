use std::collections::BTreeMap;
use std::path::Path;

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, INIT_SCALE};

/// Training hyperparameters plus the model shape they apply to.
///
/// Read from a flat `key = value` file; `#` starts a comment. Every key is
/// echoed into the checkpoint manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// Stops after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub seed: u64,
    /// Cut gradients through the clue between lines.
    pub detach_clue: bool,
    /// Lines are always decoded against the gold targets; only `true` is accepted.
    pub teacher_forcing: bool,
    /// Validation loss is computed every this many steps (0 = only at the end).
    pub validation_interval: usize,
    /// Poems held out from the end of the corpus file.
    pub validation_poems: usize,
    pub init_scale: f64,
    /// Worker threads for the per-poem forward/backward passes.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 10,
            max_steps: None,
            seed: 0,
            detach_clue: false,
            teacher_forcing: true,
            validation_interval: 0,
            validation_poems: 0,
            init_scale: INIT_SCALE,
            jobs: 1,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.model.set(key, value)? {
            return Ok(());
        }
        match key {
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "max_steps" => {
                self.max_steps = match value {
                    "" | "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "seed" => self.seed = parse(key, value)?,
            "detach_clue" => self.detach_clue = parse(key, value)?,
            "teacher_forcing" => self.teacher_forcing = parse(key, value)?,
            "validation_interval" => self.validation_interval = parse(key, value)?,
            "validation_poems" => self.validation_poems = parse(key, value)?,
            "init_scale" => self.init_scale = parse(key, value)?,
            "jobs" => self.jobs = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut model = self.model.clone();
        model.vocab_size = model.vocab_size.max(1);
        model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if !self.teacher_forcing {
            return Err(Error::Config("only teacher-forced training is supported".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("init_scale must be a finite non-negative number".into()));
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Every setting, as written back by [`TrainConfig::parse`].
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = self.model.to_map();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_owned(), v);
        };
        put("batch_size", self.batch_size.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("beta1", self.beta1.to_string());
        put("beta2", self.beta2.to_string());
        put("epsilon", self.epsilon.to_string());
        put("epochs", self.epochs.to_string());
        put("max_steps", self.max_steps.map_or("none".into(), |s| s.to_string()));
        put("seed", self.seed.to_string());
        put("detach_clue", self.detach_clue.to_string());
        put("teacher_forcing", self.teacher_forcing.to_string());
        put("validation_interval", self.validation_interval.to_string());
        put("validation_poems", self.validation_poems.to_string());
        put("init_scale", self.init_scale.to_string());
        put("jobs", self.jobs.to_string());
        m
    }

    /// Rebuilds a configuration from a checkpoint echo.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in map {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}
