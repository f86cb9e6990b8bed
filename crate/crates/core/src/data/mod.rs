//! Images, datasets, run configuration and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod pgm;
pub mod synth;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use config::{ConfigError, RunConfig};
pub use synth::synth_dataset;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("decode: {0}")]
    Decode(String),
    #[error("class directory `{0}` holds no readable images")]
    EmptyClass(String),
    #[error("{0} has no class subdirectories")]
    NoClasses(PathBuf),
    #[error("{0}: color image given but grayscale conversion is off")]
    Color(PathBuf),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `(H, W)` grayscale in `[0, 1]`.
    pub image: Tensor,
    pub label: usize,
    pub source_path: Option<PathBuf>,
}

/// Disjoint index lists covering every sample.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    All,
    Train,
    Val,
    Test,
    /// Validation and test together.
    HeldOut,
}

impl std::str::FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(SplitName::All),
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            "heldout" => Ok(SplitName::HeldOut),
            _ => Err(format!(
                "unknown split `{s}` (all, train, val, test, heldout)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub class_names: Vec<String>,
    pub splits: Splits,
    /// Files that could not be decoded while loading.
    pub skipped: usize,
}

impl Dataset {
    /// Wraps samples with a default stratified 70/15/15 split (seed 0).
    pub fn new(samples: Vec<Sample>, class_names: Vec<String>) -> Result<Self, DataError> {
        if let Some(s) = samples.iter().find(|s| s.label >= class_names.len()) {
            return Err(DataError::Invalid(format!(
                "label {} with only {} classes",
                s.label,
                class_names.len()
            )));
        }
        let mut ds = Self {
            samples,
            class_names,
            splits: Splits::default(),
            skipped: 0,
        };
        ds.split_stratified(0.7, 0.15, 0);
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Per-class shuffle and cut. Each class contributes `round(n * ratio)`
    /// samples to train and validation (train keeps at least one); the rest
    /// go to test. Indices inside each split are sorted.
    pub fn split_stratified(&mut self, train_ratio: f64, val_ratio: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut splits = Splits::default();
        for class in 0..self.class_names.len() {
            let mut idx: Vec<usize> = (0..self.samples.len())
                .filter(|&i| self.samples[i].label == class)
                .collect();
            idx.shuffle(&mut rng);
            let n = idx.len();
            let n_train = ((n as f64 * train_ratio).round() as usize).clamp(n.min(1), n);
            let n_val = ((n as f64 * val_ratio).round() as usize).min(n - n_train);
            splits.train.extend_from_slice(&idx[..n_train]);
            splits.val.extend_from_slice(&idx[n_train..n_train + n_val]);
            splits.test.extend_from_slice(&idx[n_train + n_val..]);
        }
        splits.train.sort_unstable();
        splits.val.sort_unstable();
        splits.test.sort_unstable();
        self.splits = splits;
    }

    pub fn split_indices(&self, split: SplitName) -> Vec<usize> {
        match split {
            SplitName::All => (0..self.len()).collect(),
            SplitName::Train => self.splits.train.clone(),
            SplitName::Val => self.splits.val.clone(),
            SplitName::Test => self.splits.test.clone(),
            SplitName::HeldOut => {
                let mut v = [self.splits.val.as_slice(), self.splits.test.as_slice()].concat();
                v.sort_unstable();
                v
            }
        }
    }

    /// Writes `<dir>/<class>/<class>_NNN.pgm` 8-bit graymaps.
    pub fn write_pgm_tree(&self, dir: &Path) -> Result<(), DataError> {
        let mut counters = vec![0usize; self.class_names.len()];
        for name in &self.class_names {
            let d = dir.join(name);
            fs::create_dir_all(&d).map_err(io_err(&d))?;
        }
        for s in &self.samples {
            let name = &self.class_names[s.label];
            let path = dir
                .join(name)
                .join(format!("{name}_{:03}.pgm", counters[s.label]));
            counters[s.label] += 1;
            write_pgm(&path, &s.image)?;
        }
        Ok(())
    }
}

/// Channel-average grayscale in `[0, 1]`.
pub fn read_image(path: &Path, grayscale: bool) -> Result<Tensor, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P2") {
        let g = pgm::decode(&bytes)?;
        let scale = 1.0 / g.maxval as f64;
        let data = g.pixels.iter().map(|&p| p as f64 * scale).collect();
        return Ok(Tensor::from_values(&[g.height, g.width], data)?);
    }
    decode_other(path, &bytes, grayscale)
}

#[cfg(feature = "png")]
fn decode_other(path: &Path, bytes: &[u8], grayscale: bool) -> Result<Tensor, DataError> {
    let img = image::load_from_memory(bytes).map_err(|e| DataError::Decode(e.to_string()))?;
    let channels = img.color().channel_count() as usize;
    let color = img.color().has_color();
    if color && !grayscale {
        return Err(DataError::Color(path.to_path_buf()));
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let rgba = img.to_rgba32f();
    let used = if color { 3 } else { 1 };
    let _ = channels;
    let data = rgba
        .pixels()
        .map(|p| p.0[..used].iter().map(|&v| v as f64).sum::<f64>() / used as f64)
        .collect();
    Ok(Tensor::from_values(&[h, w], data)?)
}

#[cfg(not(feature = "png"))]
fn decode_other(path: &Path, _bytes: &[u8], _grayscale: bool) -> Result<Tensor, DataError> {
    Err(DataError::Decode(format!(
        "{}: only PGM is supported in this build",
        path.display()
    )))
}

/// Quantizes `[0, 1]` values to 8 bits (values outside are clamped).
pub fn to_u8(image: &Tensor) -> Vec<u8> {
    image
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

pub fn write_pgm(path: &Path, image: &Tensor) -> Result<(), DataError> {
    let (h, w) = image.dims2()?;
    fs::write(path, pgm::encode_u8(w, h, &to_u8(image))).map_err(io_err(path))
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor, DataError> {
    let (h, w) = image.dims2()?;
    if (h, w) == (out_h, out_w) {
        return Ok(image.clone());
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let rows = axis(out_h, h);
    let cols = axis(out_w, w);
    let d = image.data();
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            let top = d[r0 * w + c0] * (1.0 - fc) + d[r0 * w + c1] * fc;
            let bottom = d[r1 * w + c0] * (1.0 - fc) + d[r1 * w + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    Ok(Tensor::from_values(&[out_h, out_w], out)?)
}

fn is_image(path: &Path) -> bool {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    matches!(ext.as_deref(), Some("pgm" | "pnm" | "png"))
}

/// Class order: `real` then `fake` when both exist, then the remaining
/// directory names sorted.
fn order_classes(mut names: Vec<String>) -> Vec<String> {
    names.sort();
    let mut ordered = Vec::with_capacity(names.len());
    for fixed in ["real", "fake"] {
        if let Some(i) = names.iter().position(|n| n == fixed) {
            ordered.push(names.remove(i));
        }
    }
    ordered.extend(names);
    ordered
}

/// Loads a class-per-directory image tree. Samples are ordered by class,
/// then by path. Undecodable files are skipped with a warning and counted.
pub fn load_dataset(
    root: &Path,
    resize_to: (usize, usize),
    grayscale: bool,
) -> Result<Dataset, DataError> {
    let mut names = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        if entry.path().is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    if names.is_empty() {
        return Err(DataError::NoClasses(root.to_path_buf()));
    }
    let class_names = order_classes(names);

    let mut samples = Vec::new();
    let mut skipped = 0;
    for (label, name) in class_names.iter().enumerate() {
        let dir = root.join(name);
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        files.sort();
        let before = samples.len();
        for path in files {
            let image = match read_image(&path, grayscale) {
                Ok(img) => img,
                Err(e @ DataError::Color(_)) => return Err(e),
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    skipped += 1;
                    continue;
                }
            };
            let image = resize_bilinear(&image, resize_to.0, resize_to.1)?;
            samples.push(Sample {
                image,
                label,
                source_path: Some(path),
            });
        }
        if samples.len() == before {
            return Err(DataError::EmptyClass(name.clone()));
        }
    }
    let mut ds = Dataset::new(samples, class_names)?;
    ds.skipped = skipped;
    Ok(ds)
}
