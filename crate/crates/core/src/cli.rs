//! Command-line entry points behind the `wpad` binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric abort.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::data::config::parse_size;
use crate::data::{
    load_checkpoint, load_dataset, read_image, save_checkpoint, synth_dataset, write_pgm,
    Checkpoint, Dataset, RunConfig, SplitName,
};
use crate::metrics::{cmc, evaluate};
use crate::model::Model;
use crate::train::{feature_set, predict_set, train, TrainError};
use crate::wavelet::{dwt2d, FeatureMode, FilterKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "wpad",
    version,
    about = "Wavelet + residual CNN presentation-attack detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split an image into its four level-1 subbands.
    Dwt {
        image: PathBuf,
        #[arg(long, default_value = "haar")]
        filter: FilterKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic real/fake dataset as PGM files.
    Synth {
        /// Images per class.
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value = "64x64", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier and save the best-validation checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Overrides the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint on a dataset; writes roc.csv, cmc.csv and summary.csv.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// all, train, val, test or heldout (val + test), using the split
        /// recorded in the checkpoint.
        #[arg(long, default_value = "all")]
        split: SplitName,
    },
    /// Print the layer counts and settings of a checkpoint.
    Info {
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Train the raw-pixel and wavelet variants and tabulate test accuracy
    /// and training time.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
}

#[derive(Debug)]
enum Failure {
    Data(String),
    Numeric(String),
}

impl Failure {
    fn data(e: impl std::fmt::Display) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

/// Runs one command; `args[0]` is the program name.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Dwt { image, filter, out } => dwt(&image, filter, &out),
        Command::Synth { n, size, seed, out } => synth(n, size, seed, &out),
        Command::Train {
            data,
            config,
            out,
            log,
            epochs,
        } => train_cmd(&data, config.as_deref(), &out, log.as_deref(), epochs),
        Command::Eval {
            ckpt,
            data,
            out,
            split,
        } => eval(&ckpt, &data, &out, split),
        Command::Info { ckpt } => info(&ckpt),
        Command::Compare {
            data,
            config,
            out,
            epochs,
        } => compare(&data, config.as_deref(), &out, epochs),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            EXIT_DATA
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("numeric abort: {m}");
            EXIT_NUMERIC
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Outcome {
    fs::write(path, contents).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))
}

fn dwt(image: &Path, filter: FilterKind, out: &Path) -> Outcome {
    let img = read_image(image, true).map_err(Failure::data)?;
    let bands = dwt2d(&img, &filter.filters()).map_err(Failure::data)?;
    create_dir(out)?;
    let (h, w) = bands.source_shape;
    let mut header = format!("source_shape = {h}x{w}\nfilter = {filter}\n");
    for (name, band) in bands.bands() {
        // magnitudes scaled so the strongest coefficient is white
        let peak = band.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scaled = if peak > 0.0 {
            band.map(|v| v.abs() / peak)
        } else {
            band.map(|_| 0.0)
        };
        write_pgm(&out.join(format!("{name}.pgm")), &scaled).map_err(Failure::data)?;
        let _ = writeln!(header, "{name}_max_abs = {peak}");
    }
    write_file(&out.join("subbands.txt"), &header)?;
    println!("wrote 4 subbands of a {h}x{w} image to {}", out.display());
    Ok(())
}

fn synth(n: usize, size: (usize, usize), seed: u64, out: &Path) -> Outcome {
    let ds = synth_dataset(n, size, seed).map_err(Failure::data)?;
    create_dir(out)?;
    ds.write_pgm_tree(out).map_err(Failure::data)?;
    println!(
        "wrote {} images ({}x{}) to {}",
        ds.len(),
        size.0,
        size.1,
        out.display()
    );
    Ok(())
}

fn load_config(path: Option<&Path>, epochs: Option<usize>) -> Result<RunConfig, Failure> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_file(p).map_err(Failure::data)?,
        None => RunConfig::default(),
    };
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    Ok(cfg)
}

fn load_split_dataset(data: &Path, cfg: &crate::train::TrainConfig) -> Result<Dataset, Failure> {
    let mut ds = load_dataset(data, cfg.image_size, true).map_err(Failure::data)?;
    if ds.skipped > 0 {
        eprintln!("warning: skipped {} unreadable files", ds.skipped);
    }
    ds.split_stratified(cfg.train_ratio, cfg.val_ratio, cfg.seed);
    Ok(ds)
}

fn train_cmd(
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    log: Option<&Path>,
    epochs: Option<usize>,
) -> Outcome {
    let cfg = load_config(config, epochs)?;
    let ds = load_split_dataset(data, &cfg.train)?;
    let model =
        Model::build(cfg.model_for(ds.class_names.len()), cfg.train.seed).map_err(Failure::data)?;
    println!(
        "training on {} images ({} train / {} val / {} test), {}",
        ds.len(),
        ds.splits.train.len(),
        ds.splits.val.len(),
        ds.splits.test.len(),
        model.count_layers()
    );
    let fit = train(model, &ds, &cfg.train)?;
    if let Some(path) = log {
        write_file(path, &fit.log.to_csv())?;
    }
    let last = fit.log.records.last().expect("at least one epoch");
    println!(
        "epoch {}: train loss {:.4}, train acc {:.4}; best val acc {:.4} at epoch {}",
        last.epoch, last.train_loss, last.train_accuracy, fit.best_val_accuracy, fit.best_epoch
    );
    let ck = Checkpoint {
        model: fit.model,
        train: cfg.train,
        best_val_accuracy: fit.best_val_accuracy,
        class_names: ds.class_names,
    };
    save_checkpoint(out, &ck).map_err(Failure::data)?;
    println!("saved {}", out.display());
    Ok(())
}

/// Positive class for binary metrics: `fake` when present, else class 1.
fn positive_class(class_names: &[String]) -> usize {
    class_names.iter().position(|n| n == "fake").unwrap_or(1)
}

struct Scores {
    probs: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

fn score(ck: &Checkpoint, ds: &Dataset, indices: &[usize]) -> Result<Scores, Failure> {
    let set = feature_set(ds, indices, &ck.train)?;
    let probs = predict_set(&ck.model, &set, ck.train.batch_size).map_err(Failure::data)?;
    Ok(Scores {
        probs,
        labels: set.labels,
    })
}

fn eval(ckpt: &Path, data: &Path, out: &Path, split: SplitName) -> Outcome {
    let ck = load_checkpoint(ckpt).map_err(Failure::data)?;
    let ds = load_split_dataset(data, &ck.train)?;
    if ds.class_names != ck.class_names {
        return Err(Failure::Data(format!(
            "dataset classes {:?} differ from checkpoint classes {:?}",
            ds.class_names, ck.class_names
        )));
    }
    let indices = ds.split_indices(split);
    if indices.is_empty() {
        return Err(Failure::Data(format!("the {split:?} split is empty")));
    }
    let s = score(&ck, &ds, &indices)?;
    let pos = positive_class(&ck.class_names);
    let binary: Vec<(f64, usize)> = s
        .probs
        .iter()
        .zip(&s.labels)
        .map(|(p, &l)| (p[pos], usize::from(l == pos)))
        .collect();
    let report = evaluate(&binary).map_err(Failure::data)?;
    let cmc = cmc(&s.probs, &s.labels).map_err(Failure::data)?;
    // rank-1 identification equals top-1 accuracy for any class count
    let accuracy = cmc[0].1;

    create_dir(out)?;
    let mut roc_csv = String::from("fpr,tpr\n");
    if let Some(roc) = &report.roc {
        for p in &roc.points {
            let _ = writeln!(roc_csv, "{},{}", p.fpr, p.tpr);
        }
    }
    write_file(&out.join("roc.csv"), &roc_csv)?;
    let mut cmc_csv = String::from("rank,rate\n");
    for (rank, rate) in &cmc {
        let _ = writeln!(cmc_csv, "{rank},{rate}");
    }
    write_file(&out.join("cmc.csv"), &cmc_csv)?;
    let auc = report.auc().map(|a| a.to_string()).unwrap_or_default();
    let summary = format!(
        "accuracy,auc,error_rate\n{accuracy},{auc},{}\n",
        1.0 - accuracy
    );
    write_file(&out.join("summary.csv"), &summary)?;

    let c = report.confusion;
    println!(
        "{} samples: accuracy {accuracy:.4}, auc {}, tp {} fp {} tn {} fn {}",
        indices.len(),
        if auc.is_empty() { "n/a".into() } else { auc },
        c.tp,
        c.fp,
        c.tn,
        c.fn_
    );
    Ok(())
}

fn info(ckpt: &Path) -> Outcome {
    let ck = load_checkpoint(ckpt).map_err(Failure::data)?;
    let cfg = ck.model.config();
    println!("{}", ck.model.count_layers());
    let (c, h, w) = cfg.input_shape;
    println!("input {c}x{h}x{w}, classes {}", ck.class_names.join(","));
    println!(
        "blocks {:?}, channels {:?}, skip {}, pools after {:?}",
        cfg.block_convs, cfg.channels, cfg.skip_mode, cfg.maxpool_after
    );
    let removed = ck.model.units().iter().filter(|u| !u.skip).count();
    println!(
        "residual units {} ({removed} without skip)",
        ck.model.units().len()
    );
    println!(
        "features {} / {}, best val accuracy {}",
        ck.train.feature_mode, ck.train.filter, ck.best_val_accuracy
    );
    Ok(())
}

fn compare(data: &Path, config: Option<&Path>, out: &Path, epochs: Option<usize>) -> Outcome {
    let base = load_config(config, epochs)?;
    let ds = load_split_dataset(data, &base.train)?;
    let eval_split = if ds.splits.test.is_empty() {
        SplitName::Val
    } else {
        SplitName::Test
    };
    let variants = [
        ("resnet", FeatureMode::Raw),
        ("dwt-resnet", FeatureMode::StackedSubbands),
        ("dwt-approx-resnet", FeatureMode::ApproxOnly),
    ];
    let mut csv = String::from("model,feature_mode,accuracy,train_time_s\n");
    for (name, mode) in variants {
        let mut cfg = base.clone();
        cfg.train.feature_mode = mode;
        let model = Model::build(cfg.model_for(ds.class_names.len()), cfg.train.seed)
            .map_err(Failure::data)?;
        let start = Instant::now();
        let fit = train(model, &ds, &cfg.train)?;
        let seconds = start.elapsed().as_secs_f64();
        let ck = Checkpoint {
            model: fit.model,
            train: cfg.train,
            best_val_accuracy: fit.best_val_accuracy,
            class_names: ds.class_names.clone(),
        };
        let s = score(&ck, &ds, &ds.split_indices(eval_split))?;
        let accuracy = cmc(&s.probs, &s.labels).map_err(Failure::data)?[0].1;
        println!("{name:>18} ({mode}): accuracy {accuracy:.4}, {seconds:.1} s");
        let _ = writeln!(csv, "{name},{mode},{accuracy},{seconds:.3}");
    }
    write_file(out, &csv)
}
