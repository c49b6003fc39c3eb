use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::Precision;
use crate::optimizer::AdadeltaConfig;
use crate::sflstm::{MaskMode, Variant};

/// Everything that determines a training run, echoed into checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seq_len: usize,
    pub batch: usize,
    pub chunk_len: usize,
    pub hidden: usize,
    pub variant: Variant,
    pub tau: f64,
    pub seed: u64,
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    /// Global gradient norm bound; 0 disables clipping.
    pub clip: f64,
    pub eval_mask: MaskMode,
    pub steps: u64,
    pub precision: Precision,
    /// Symbols of the validation split scored during training; 0 means all.
    pub valid_prefix: usize,
    pub log_every: u64,
    /// 0 writes a checkpoint only at the end.
    pub checkpoint_every: u64,
    /// Bytes of the corpus file to use; 0 means the whole file.
    pub corpus_bytes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seq_len: 100,
            batch: 32,
            chunk_len: 10_000,
            hidden: 256,
            variant: Variant::Adaptive,
            tau: 0.05,
            seed: 1,
            lr: 1.0,
            rho: 0.95,
            eps: 1e-6,
            clip: 5.0,
            eval_mask: MaskMode::Expected,
            steps: 10_000,
            precision: Precision::F32,
            valid_prefix: 100_000,
            log_every: 1_000,
            checkpoint_every: 0,
            corpus_bytes: 1_000_000,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 18] = [
        "seq_len",
        "batch",
        "chunk_len",
        "hidden",
        "variant",
        "tau",
        "seed",
        "lr",
        "rho",
        "eps",
        "clip",
        "eval_mask",
        "steps",
        "precision",
        "valid_prefix",
        "log_every",
        "checkpoint_every",
        "corpus_bytes",
    ];

    pub fn optimizer(&self) -> AdadeltaConfig {
        AdadeltaConfig { lr: self.lr, rho: self.rho, eps: self.eps }
    }

    pub fn windows_per_chunk(&self) -> usize {
        self.chunk_len / self.seq_len
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "seq_len" => self.seq_len = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "chunk_len" => self.chunk_len = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "variant" => self.variant = value.parse()?,
            "tau" => self.tau = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "clip" => self.clip = parse(key, value)?,
            "eval_mask" => self.eval_mask = value.parse()?,
            "steps" => self.steps = parse(key, value)?,
            "precision" => self.precision = value.parse()?,
            "valid_prefix" => self.valid_prefix = parse(key, value)?,
            "log_every" => self.log_every = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "corpus_bytes" => self.corpus_bytes = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seq_len" => self.seq_len.to_string(),
            "batch" => self.batch.to_string(),
            "chunk_len" => self.chunk_len.to_string(),
            "hidden" => self.hidden.to_string(),
            "variant" => self.variant.to_string(),
            "tau" => format!("{:?}", self.tau),
            "seed" => self.seed.to_string(),
            "lr" => format!("{:?}", self.lr),
            "rho" => format!("{:?}", self.rho),
            "eps" => format!("{:?}", self.eps),
            "clip" => format!("{:?}", self.clip),
            "eval_mask" => self.eval_mask.to_string(),
            "steps" => self.steps.to_string(),
            "precision" => self.precision.to_string(),
            "valid_prefix" => self.valid_prefix.to_string(),
            "log_every" => self.log_every.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "corpus_bytes" => self.corpus_bytes.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).unwrap_or_default());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("seq_len", self.seq_len),
            ("batch", self.batch),
            ("chunk_len", self.chunk_len),
            ("hidden", self.hidden),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be positive")));
            }
        }
        if !self.chunk_len.is_multiple_of(self.seq_len) {
            return Err(Error::Config(format!(
                "chunk_len {} is not a multiple of seq_len {}",
                self.chunk_len, self.seq_len
            )));
        }
        self.variant.validate()?;
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::Config(format!("tau must be finite and nonnegative, got {}", self.tau)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.clip >= 0.0 && self.clip.is_finite()) {
            return Err(Error::Config(format!("clip must be nonnegative, got {}", self.clip)));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        Ok(())
    }
}
