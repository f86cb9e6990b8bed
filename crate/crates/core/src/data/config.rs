//! `key = value` run configuration files.
//!
//! ```text
//! # comments run to the end of the line
//! epochs = 60
//! image_size = 64x64
//! channels = 16,16,32,32,32
//! ```
//!
//! Every key is optional; unknown or repeated keys are rejected.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {message}")]
    BadValue {
        line: usize,
        key: String,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// `input_shape` and `num_classes` are placeholders until
    /// [`RunConfig::model_for`] fills them in.
    pub model: ModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let model = ModelConfig::reference_default(train.feature_shape(), 2);
        Self { train, model }
    }
}

/// Parses `HxW`.
pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("`{s}` is not of the form HxW"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{s}`: {e}"));
    Ok((parse(h)?, parse(w)?))
}

fn parse<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| e.to_string())
}

fn parse_list(v: &str) -> Result<Vec<usize>, String> {
    v.split(',').map(|p| parse(p.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub(crate) fn train_entries(t: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("epochs", t.epochs.to_string()),
        ("batch_size", t.batch_size.to_string()),
        ("learning_rate", t.learning_rate.to_string()),
        ("momentum", t.momentum.to_string()),
        ("weight_decay", t.weight_decay.to_string()),
        ("seed", t.seed.to_string()),
        ("feature_mode", t.feature_mode.to_string()),
        ("filter", t.filter.to_string()),
        ("eval_every", t.eval_every.to_string()),
        (
            "image_size",
            format!("{}x{}", t.image_size.0, t.image_size.1),
        ),
        ("train_ratio", t.train_ratio.to_string()),
        ("val_ratio", t.val_ratio.to_string()),
    ]
}

/// Architecture keys; the input shape and class count are left out.
pub(crate) fn model_entries(m: &ModelConfig) -> Vec<(&'static str, String)> {
    vec![
        ("block_convs", join(&m.block_convs)),
        ("channels", join(&m.channels)),
        ("skip_mode", m.skip_mode.to_string()),
        ("stem", m.stem.to_string()),
        ("maxpool_after", join(&m.maxpool_after)),
        ("kernel_size", m.kernel_size.to_string()),
        ("reference_layout", m.reference_layout.to_string()),
    ]
}

/// `Ok(false)` when the key is not a training key.
pub(crate) fn set_train(t: &mut TrainConfig, key: &str, v: &str) -> Result<bool, String> {
    match key {
        "epochs" => t.epochs = parse(v)?,
        "batch_size" => t.batch_size = parse(v)?,
        "learning_rate" => t.learning_rate = parse(v)?,
        "momentum" => t.momentum = parse(v)?,
        "weight_decay" => t.weight_decay = parse(v)?,
        "seed" => t.seed = parse(v)?,
        "feature_mode" => t.feature_mode = parse(v)?,
        "filter" => t.filter = v.parse().map_err(|e| format!("{e}"))?,
        "eval_every" => t.eval_every = parse(v)?,
        "image_size" => t.image_size = parse_size(v)?,
        "train_ratio" => t.train_ratio = parse(v)?,
        "val_ratio" => t.val_ratio = parse(v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

pub(crate) fn set_model(m: &mut ModelConfig, key: &str, v: &str) -> Result<bool, String> {
    match key {
        "block_convs" => m.block_convs = parse_list(v)?,
        "channels" => m.channels = parse_list(v)?,
        "skip_mode" => m.skip_mode = parse(v)?,
        "stem" => m.stem = parse(v)?,
        "maxpool_after" => m.maxpool_after = parse_list(v)?,
        "kernel_size" => m.kernel_size = parse(v)?,
        "reference_layout" => m.reference_layout = parse(v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Yields `(line number, key, value)` for every non-blank line.
pub(crate) fn key_values(
    text: &str,
) -> impl Iterator<Item = Result<(usize, &str, &str), ConfigError>> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            return None;
        }
        Some(match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() && !v.trim().is_empty() => {
                Ok((i + 1, k.trim(), v.trim()))
            }
            _ => Err(ConfigError::Syntax { line: i + 1 }),
        })
    })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for entry in key_values(text) {
            let (line, key, value) = entry?;
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.into(),
                });
            }
            let bad = |message| ConfigError::BadValue {
                line,
                key: key.into(),
                message,
            };
            let known = set_train(&mut cfg.train, key, value).map_err(bad)?
                || set_model(&mut cfg.model, key, value).map_err(bad)?;
            if !known {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.into(),
                });
            }
        }
        cfg.train
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.model.input_shape = cfg.train.feature_shape();
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Every key with its current value, in file syntax.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in train_entries(&self.train)
            .into_iter()
            .chain(model_entries(&self.model))
        {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// The model config for a dataset with `num_classes` classes.
    pub fn model_for(&self, num_classes: usize) -> ModelConfig {
        ModelConfig {
            input_shape: self.train.feature_shape(),
            num_classes,
            ..self.model.clone()
        }
    }
}
