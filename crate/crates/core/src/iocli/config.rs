//! `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are a
//! usage error so typos do not silently fall back to defaults.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::toyworld::{TrainConfig, DEFAULT_GRID, DEFAULT_IMAGE_SIZE};

use super::binfmt::read_file;

/// Every setting the command-line tools read.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub identities: usize,
    pub samples_per_identity: usize,
    pub grid: (usize, usize),
    pub image_size: (usize, usize),
    pub train: TrainConfig,
    pub alphas: Vec<f64>,
    pub ps: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            identities: 64,
            samples_per_identity: 4,
            grid: DEFAULT_GRID,
            image_size: DEFAULT_IMAGE_SIZE,
            train: TrainConfig::default(),
            alphas: vec![0.3],
            ps: vec![0.1],
        }
    }
}

pub const CONFIG_KEYS: [&str; 25] = [
    "seed",
    "identities",
    "samples_per_identity",
    "grid_h",
    "grid_w",
    "image_h",
    "image_w",
    "tau_part",
    "tau_tal",
    "margin_tal",
    "lambda_part",
    "lambda_cov",
    "warmup_epochs",
    "base_temperature",
    "learning_rate",
    "lr_decay",
    "decay_every",
    "epochs",
    "batch_size",
    "identities_per_batch",
    "dim",
    "hash_dim",
    "phrase_slots",
    "alpha",
    "p",
];

/// Parses `key = value` lines. Later duplicates win.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::usage(format!("config line {}: expected key=value", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::usage(format!("config value for {key} is not valid: {v:?}")))
}

/// Comma-separated reals.
pub fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    let list = v
        .split(',')
        .map(|s| num::<f64>(key, s.trim()))
        .collect::<Result<Vec<_>>>()?;
    if list.is_empty() {
        return Err(Error::usage(format!("{key} list is empty")));
    }
    Ok(list)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "seed" => self.seed = num(key, v)?,
            "identities" => self.identities = num(key, v)?,
            "samples_per_identity" => self.samples_per_identity = num(key, v)?,
            "grid_h" => self.grid.0 = num(key, v)?,
            "grid_w" => self.grid.1 = num(key, v)?,
            "image_h" => self.image_size.0 = num(key, v)?,
            "image_w" => self.image_size.1 = num(key, v)?,
            "tau_part" => t.loss.tau_part = num(key, v)?,
            "tau_tal" => t.loss.tau_tal = num(key, v)?,
            "margin_tal" => t.loss.margin_tal = num(key, v)?,
            "lambda_part" => t.loss.lambda_part = num(key, v)?,
            "lambda_cov" => t.loss.lambda_cov = num(key, v)?,
            "warmup_epochs" => t.loss.warmup_epochs = num(key, v)?,
            "base_temperature" => t.base_temperature = num(key, v)?,
            "learning_rate" => t.learning_rate = num(key, v)?,
            "lr_decay" => t.lr_decay = num(key, v)?,
            "decay_every" => t.decay_every = num(key, v)?,
            "epochs" => t.epochs = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "identities_per_batch" => t.identities_per_batch = num(key, v)?,
            "dim" => t.dim = num(key, v)?,
            "hash_dim" => t.hash_dim = num(key, v)?,
            "phrase_slots" => t.phrase_slots = num(key, v)?,
            "alpha" => self.alphas = parse_list(key, v)?,
            "p" => self.ps = parse_list(key, v)?,
            _ => return Err(Error::usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn apply(&mut self, entries: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in entries {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&parse_key_values(text)?)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = String::from_utf8(read_file(path)?)
            .map_err(|_| Error::usage(format!("config {} is not UTF-8", path.display())))?;
        Self::from_text(&text)
    }

    /// Renders every key so the output parses back to the same config.
    pub fn render(&self) -> String {
        let t = &self.train;
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let pairs: [(&str, String); 25] = [
            ("seed", self.seed.to_string()),
            ("identities", self.identities.to_string()),
            ("samples_per_identity", self.samples_per_identity.to_string()),
            ("grid_h", self.grid.0.to_string()),
            ("grid_w", self.grid.1.to_string()),
            ("image_h", self.image_size.0.to_string()),
            ("image_w", self.image_size.1.to_string()),
            ("tau_part", t.loss.tau_part.to_string()),
            ("tau_tal", t.loss.tau_tal.to_string()),
            ("margin_tal", t.loss.margin_tal.to_string()),
            ("lambda_part", t.loss.lambda_part.to_string()),
            ("lambda_cov", t.loss.lambda_cov.to_string()),
            ("warmup_epochs", t.loss.warmup_epochs.to_string()),
            ("base_temperature", t.base_temperature.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("lr_decay", t.lr_decay.to_string()),
            ("decay_every", t.decay_every.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("identities_per_batch", t.identities_per_batch.to_string()),
            ("dim", t.dim.to_string()),
            ("hash_dim", t.hash_dim.to_string()),
            ("phrase_slots", t.phrase_slots.to_string()),
            ("alpha", list(&self.alphas)),
            ("p", list(&self.ps)),
        ];
        pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let cfg = RunConfig::from_text("# toy run\nseed = 7\n\nlambda_part=0\nalpha=0.1, 0.3\nepochs=3\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.loss.lambda_part, 0.0);
        assert_eq!(cfg.alphas, vec![0.1, 0.3]);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.ps, vec![0.1]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(RunConfig::from_text("lamda=1"), Err(Error::Usage(_))));
        assert!(matches!(RunConfig::from_text("epochs=many"), Err(Error::Usage(_))));
        assert!(matches!(RunConfig::from_text("no equals sign"), Err(Error::Usage(_))));
        assert!(matches!(RunConfig::from_text("p="), Err(Error::Usage(_))));
    }

    #[test]
    fn render_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.train.loss.lambda_cov = 0.25;
        cfg.ps = vec![0.0, 0.5, 1.0];
        let text = cfg.render();
        assert_eq!(text.lines().count(), CONFIG_KEYS.len());
        for (line, key) in text.lines().zip(CONFIG_KEYS) {
            assert!(line.starts_with(&format!("{key}=")));
        }
        assert_eq!(RunConfig::from_text(&text).unwrap(), cfg);
    }
}
