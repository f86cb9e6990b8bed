//! Checkpoint files.
//!
//! Layout: the line `WPAD1`, a `key = value` header (model and training
//! config, best validation accuracy, class names, removed skips), the line
//! `tensors = N`, one `name dim...` line per tensor, the line `end`, then
//! every tensor's values as little-endian `f64` in the declared order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::config::{key_values, model_entries, set_model, set_train, train_entries, ConfigError};
use crate::model::{Model, ModelConfig, ModelError};
use crate::tensor::Tensor;
use crate::train::TrainConfig;

const MAGIC: &str = "WPAD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version `{0}`")]
    UnsupportedVersion(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("payload has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("tensor `{name}`: file declares {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor list does not match the model: {0}")]
    TensorList(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train: TrainConfig,
    pub best_val_accuracy: f64,
    pub class_names: Vec<String>,
}

fn named_tensors(model: &Model) -> Vec<(String, &Tensor)> {
    model
        .layers()
        .iter()
        .enumerate()
        .flat_map(|(i, layer)| {
            layer
                .state()
                .into_iter()
                .map(move |(name, t)| (format!("layer{i}.{name}"), t))
        })
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>, CheckpointError> {
    if let Some(bad) = ck
        .class_names
        .iter()
        .find(|n| n.is_empty() || n.contains([',', '\n', '#', '=']))
    {
        return Err(CheckpointError::Header(format!(
            "class name `{bad}` cannot be stored"
        )));
    }
    let cfg = ck.model.config();
    let (c, h, w) = cfg.input_shape;
    let removed: Vec<usize> = (0..ck.model.units().len())
        .filter(|&u| !ck.model.units()[u].skip)
        .collect();

    let mut head = format!("{MAGIC}{FORMAT_VERSION}\n");
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(head, "{k} = {v}");
    };
    kv("input_shape", format!("{c},{h},{w}"));
    kv("num_classes", cfg.num_classes.to_string());
    for (k, v) in model_entries(cfg)
        .into_iter()
        .chain(train_entries(&ck.train))
    {
        kv(k, v);
    }
    kv("best_val_accuracy", ck.best_val_accuracy.to_string());
    kv("class_names", ck.class_names.join(","));
    kv(
        "removed_skips",
        if removed.is_empty() {
            "none".into()
        } else {
            join(&removed)
        },
    );

    let tensors = named_tensors(&ck.model);
    kv("tensors", tensors.len().to_string());
    for (name, t) in &tensors {
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        let _ = writeln!(head, "{name} {}", dims.join(" "));
    }
    head.push_str("end\n");

    let mut out = head.into_bytes();
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn header_err(m: impl Into<String>) -> CheckpointError {
    CheckpointError::Header(m.into())
}

fn parse_list(v: &str) -> Result<Vec<usize>, CheckpointError> {
    v.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| header_err(format!("bad number list `{v}`")))
        })
        .collect()
}

/// Splits off the next `\n`-terminated line.
fn next_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str, CheckpointError> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| header_err("header ends before `end`"))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| header_err("header is not UTF-8"))
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if !bytes.starts_with(MAGIC.as_bytes()) {
        return Err(CheckpointError::BadMagic);
    }
    let mut pos = 0;
    let first = next_line(bytes, &mut pos).map_err(|_| CheckpointError::BadMagic)?;
    let version = &first[MAGIC.len()..];
    if version != FORMAT_VERSION.to_string() {
        return Err(CheckpointError::UnsupportedVersion(version.to_string()));
    }

    // key = value lines up to and including `tensors = N`
    let mut text = String::new();
    let count: usize = loop {
        let line = next_line(bytes, &mut pos)?;
        if let Some(n) = line.strip_prefix("tensors = ") {
            break n
                .parse()
                .map_err(|_| header_err(format!("bad tensor count `{n}`")))?;
        }
        text.push_str(line);
        text.push('\n');
    };
    let mut descriptors = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next_line(bytes, &mut pos)?;
        let mut parts = line.split(' ');
        let name = parts.next().unwrap_or_default().to_string();
        let dims = parts
            .map(|d| {
                d.parse::<usize>()
                    .map_err(|_| header_err(format!("bad descriptor `{line}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        descriptors.push((name, dims));
    }
    if next_line(bytes, &mut pos)? != "end" {
        return Err(header_err("missing `end` after tensor descriptors"));
    }

    let mut model_cfg = ModelConfig::reference_default((1, 4, 4), 2);
    let mut train = TrainConfig::default();
    let (mut best, mut classes, mut removed) = (None, None, None);
    let mut seen_shape = false;
    for entry in key_values(&text) {
        let (_, key, value) = entry.map_err(|e: ConfigError| header_err(e.to_string()))?;
        let bad = |m: String| header_err(format!("`{key}`: {m}"));
        match key {
            "input_shape" => {
                let v = parse_list(value)?;
                let [c, h, w] = v[..] else {
                    return Err(bad("expected C,H,W".into()));
                };
                model_cfg.input_shape = (c, h, w);
                seen_shape = true;
            }
            "num_classes" => {
                model_cfg.num_classes = value.parse().map_err(|_| bad(value.into()))?
            }
            "best_val_accuracy" => {
                best = Some(value.parse::<f64>().map_err(|_| bad(value.into()))?)
            }
            "class_names" => {
                classes = Some(value.split(',').map(str::to_string).collect::<Vec<_>>())
            }
            "removed_skips" => {
                removed = Some(if value == "none" {
                    Vec::new()
                } else {
                    parse_list(value)?
                });
            }
            _ => {
                let known = set_model(&mut model_cfg, key, value).map_err(bad)?
                    || set_train(&mut train, key, value).map_err(bad)?;
                if !known {
                    return Err(header_err(format!("unknown key `{key}`")));
                }
            }
        }
    }
    if !seen_shape {
        return Err(header_err("missing input_shape"));
    }
    let best_val_accuracy = best.ok_or_else(|| header_err("missing best_val_accuracy"))?;
    let class_names = classes.ok_or_else(|| header_err("missing class_names"))?;
    let removed = removed.ok_or_else(|| header_err("missing removed_skips"))?;

    let mut model = Model::build(model_cfg, 0)?;
    for &u in &removed {
        if u >= model.units().len() {
            return Err(header_err(format!("removed skip {u} names a missing unit")));
        }
        model.remove_skip(u);
    }

    // check the declared list against the model before touching the payload
    let expected: Vec<(String, Vec<usize>)> = named_tensors(&model)
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != descriptors.len() {
        return Err(CheckpointError::TensorList(format!(
            "file declares {} tensors, model has {}",
            descriptors.len(),
            expected.len()
        )));
    }
    for ((name, dims), (exp_name, exp_dims)) in descriptors.iter().zip(&expected) {
        if name != exp_name {
            return Err(CheckpointError::TensorList(format!(
                "found `{name}` where `{exp_name}` belongs"
            )));
        }
        if dims != exp_dims {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                expected: exp_dims.clone(),
                found: dims.clone(),
            });
        }
    }
    let values: usize = expected
        .iter()
        .map(|(_, d)| d.iter().product::<usize>())
        .sum();
    let payload = &bytes[pos..];
    if payload.len() < values * 8 {
        return Err(CheckpointError::Truncated {
            expected: values * 8,
            found: payload.len(),
        });
    }
    if payload.len() > values * 8 {
        return Err(CheckpointError::TrailingBytes(payload.len() - values * 8));
    }

    let mut chunks = payload.chunks_exact(8);
    for layer in model.layers_mut() {
        for (_, t) in layer.state_mut() {
            for v in t.data_mut() {
                let raw = chunks.next().expect("length checked above");
                *v = f64::from_le_bytes(raw.try_into().expect("8-byte chunk"));
            }
        }
    }
    Ok(Checkpoint {
        model,
        train,
        best_val_accuracy,
        class_names,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CheckpointError> {
    let bytes = encode(ck)?;
    fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SkipMode;

    fn small() -> Checkpoint {
        let cfg = ModelConfig {
            input_shape: (2, 8, 8),
            num_classes: 2,
            block_convs: vec![2, 2, 2],
            channels: vec![4, 6, 6],
            skip_mode: SkipMode::SingleLayer,
            stem: true,
            maxpool_after: vec![1, 2],
            kernel_size: 3,
            reference_layout: false,
        };
        let mut model = Model::build(cfg, 11).unwrap();
        model.remove_skip(1);
        Checkpoint {
            model,
            train: TrainConfig::default(),
            best_val_accuracy: 0.1 + 0.2,
            class_names: vec!["real".into(), "fake".into()],
        }
    }

    #[test]
    fn canonical_round_trip() {
        let ck = small();
        let bytes = encode(&ck).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn distinct_errors() {
        let bytes = encode(&small()).unwrap();
        assert!(matches!(decode(b"PNG..."), Err(CheckpointError::BadMagic)));
        let mut v2 = bytes.clone();
        v2[4] = b'2';
        assert!(matches!(
            decode(&v2),
            Err(CheckpointError::UnsupportedVersion(_))
        ));
        assert!(matches!(
            decode(&bytes[..bytes.len() - 1]),
            Err(CheckpointError::Truncated { .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            decode(&long),
            Err(CheckpointError::TrailingBytes(1))
        ));

        let split = bytes.windows(5).position(|w| w == b"\nend\n").unwrap() + 5;
        let head = std::str::from_utf8(&bytes[..split]).unwrap();
        let reshaped = head.replacen("layer0.weight 4 2 3 3", "layer0.weight 4 2 3 1", 1);
        assert_ne!(reshaped, head);
        let mut file = reshaped.into_bytes();
        file.extend_from_slice(&bytes[split..]);
        assert!(matches!(
            decode(&file),
            Err(CheckpointError::ShapeMismatch { .. })
        ));
    }
}
