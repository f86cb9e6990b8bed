//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::grad::{check_toy_model, layer_cases};
use common::{rng, toy_config, uniform};
use rand::Rng;
use wpad::data::checkpoint::{decode, encode};
use wpad::data::{synth_dataset, Checkpoint};
use wpad::metrics::{cmc, roc_curve};
use wpad::model::{Model, ModelConfig, SkipMode};
use wpad::nn::{Layer, Network};
use wpad::train::{feature_set, fit, TrainConfig};
use wpad::wavelet::{dwt2d, idwt2d, FilterKind};
use wpad::Tensor;

type Verdict = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn wpad(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_wpad"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`wpad {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn random_image(h: usize, w: usize, rng: &mut impl Rng) -> Tensor {
    uniform(&[h, w], -1.0, 1.0, rng)
}

fn perfect_reconstruction() -> Verdict {
    const LIMIT: Duration = Duration::from_secs(30);
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    let mut parities = [false; 4];
    for i in 0..1000 {
        let (h, w) = (r.random_range(2..=128), r.random_range(2..=128));
        parities[(h % 2) * 2 + w % 2] = true;
        let x = random_image(h, w, &mut r);
        let f = if i % 2 == 0 {
            FilterKind::Haar
        } else {
            FilterKind::Bior22
        }
        .filters();
        let back =
            idwt2d(&dwt2d(&x, &f).map_err(|e| e.to_string())?, &f).map_err(|e| e.to_string())?;
        worst = worst.max(back.max_abs_diff(&x).map_err(|e| e.to_string())?);
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-10 && elapsed < LIMIT && parities.iter().all(|&p| p),
        format!("1000 images, haar + bior2.2: max error {worst:.2e} (< 1e-10) in {elapsed:.1?} (< 30 s)"),
    )
}

fn haar_energy() -> Verdict {
    let mut r = rng(2);
    let haar = FilterKind::Haar.filters();
    let mut worst: f64 = 0.0;
    for _ in 0..300 {
        let (h, w) = (2 * r.random_range(1..=64), 2 * r.random_range(1..=64));
        let x = random_image(h, w, &mut r);
        let e = x.sum_squares();
        let bands = dwt2d(&x, &haar).map_err(|e| e.to_string())?;
        worst = worst.max((bands.energy() - e).abs() / e);
    }
    check(
        worst < 1e-9,
        format!("300 even-size images: max relative energy error {worst:.2e} (< 1e-9)"),
    )
}

fn gradient_checks() -> Verdict {
    const LIMIT: Duration = Duration::from_secs(120);
    let start = Instant::now();
    let mut layer_worst: f64 = 0.0;
    let mut kinds = 0;
    for seed in 0..10 {
        let cases = layer_cases(seed);
        kinds = cases.len();
        for (_, e) in cases {
            layer_worst = layer_worst.max(e);
        }
    }
    let model_worst =
        check_toy_model(0, SkipMode::SingleLayer).max(check_toy_model(1, SkipMode::DoubleLayer));
    let elapsed = start.elapsed();
    check(
        layer_worst < 1e-4 && model_worst < 1e-3 && elapsed < LIMIT,
        format!(
            "{kinds} layer cases x 10 seeds: {layer_worst:.2e} (< 1e-4); 3-block model: {model_worst:.2e} (< 1e-3); {elapsed:.1?} (< 2 min)"
        ),
    )
}

fn default_checkpoint(seed: u64) -> Result<Checkpoint, String> {
    let train = TrainConfig::default();
    let model = Model::build(
        ModelConfig::reference_default(train.feature_shape(), 2),
        seed,
    )
    .map_err(|e| e.to_string())?;
    Ok(Checkpoint {
        model,
        train,
        best_val_accuracy: 0.0,
        class_names: vec!["real".into(), "fake".into()],
    })
}

fn architecture(dir: &Path) -> Verdict {
    let ck = default_checkpoint(0)?;
    let counts = ck.model.count_layers();
    let file = dir.join("default.wpad");
    fs::write(&file, encode(&ck).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let printed = wpad(&["info", "--ckpt", path(&file)])?;
    let first = printed.lines().next().unwrap_or_default().to_string();
    check(
        (counts.convs, counts.pools, counts.fcs) == (32, 2, 1) && first == "convs=32 pools=2 fcs=1",
        format!("default model {counts}; `info` prints \"{first}\""),
    )
}

fn identity_at_init() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut units = 0;
    let default = ModelConfig::reference_default((4, 32, 32), 2);
    let models = [
        (default, (2, 4, 32, 32)),
        (toy_config((3, 8, 8), SkipMode::SingleLayer), (3, 3, 8, 8)),
        (toy_config((3, 8, 8), SkipMode::DoubleLayer), (3, 3, 8, 8)),
    ];
    for (i, (cfg, (n, c, h, w))) in models.into_iter().enumerate() {
        let model = Model::build(cfg, 10 + i as u64).map_err(|e| e.to_string())?;
        let x = uniform(&[n, c, h, w], -3.0, 3.0, &mut rng(i as u64));
        for t in model.trace_units(&x).map_err(|e| e.to_string())? {
            worst = worst.max(
                t.output
                    .max_abs_diff(&t.shortcut)
                    .map_err(|e| e.to_string())?,
            );
            units += 1;
        }
    }
    check(
        worst < 1e-10,
        format!("{units} residual units: max |unit(x) - shortcut(x)| {worst:.2e} (< 1e-10)"),
    )
}

fn auc_oracle() -> Verdict {
    let mut r = rng(6);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = r.random_range(2..120);
        let levels = r.random_range(2..40);
        let mut scores: Vec<(f64, usize)> = (0..n)
            .map(|_| {
                (
                    r.random_range(0..levels) as f64 / levels as f64,
                    r.random_range(0..2),
                )
            })
            .collect();
        scores[0].1 = 0;
        scores[1].1 = 1;
        let (mut wins, mut pairs) = (0.0, 0.0);
        for &(p, lp) in &scores {
            for &(q, lq) in &scores {
                if lp == 1 && lq == 0 {
                    pairs += 1.0;
                    wins += if p > q {
                        1.0
                    } else if p == q {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        let auc = roc_curve(&scores).map_err(|e| e.to_string())?.auc;
        worst = worst.max((auc - wins / pairs).abs());
    }
    check(
        worst < 1e-12,
        format!("200 tied score sets: max |trapezoid - pair count| {worst:.2e} (< 1e-12)"),
    )
}

fn cmc_properties() -> Verdict {
    let fixture = vec![
        vec![0.7, 0.2, 0.1],
        vec![0.5, 0.3, 0.2],
        vec![0.4, 0.35, 0.25],
    ];
    let curve = cmc(&fixture, &[0, 1, 2]).map_err(|e| e.to_string())?;
    let rates: Vec<f64> = curve.iter().map(|c| c.1).collect();
    let fixture_ok = rates.len() == 3
        && (rates[0] - 1.0 / 3.0).abs() < 1e-15
        && (rates[1] - 2.0 / 3.0).abs() < 1e-15
        && rates[2] == 1.0;

    let mut r = rng(7);
    let mut random_ok = true;
    for _ in 0..200 {
        let (n, k) = (r.random_range(1..40), r.random_range(1..10));
        let m: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|_| r.random_range(0..4) as f64).collect())
            .collect();
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let c = cmc(&m, &truth).map_err(|e| e.to_string())?;
        random_ok &= c.windows(2).all(|w| w[1].1 >= w[0].1) && c.last().map(|l| l.1) == Some(1.0);
    }
    check(
        fixture_ok && random_ok,
        format!("fixture {rates:.4?} (expect 1/3, 2/3, 1); 200 random matrices monotone ending at 1.0: {random_ok}"),
    )
}

fn read_summary(dir: &Path) -> Result<(f64, String), String> {
    let text = fs::read_to_string(dir.join("summary.csv")).map_err(|e| e.to_string())?;
    let row = text.lines().nth(1).ok_or("summary.csv has no data row")?;
    let mut fields = row.split(',');
    let acc = fields
        .next()
        .unwrap_or_default()
        .parse::<f64>()
        .map_err(|e| e.to_string())?;
    Ok((acc, fields.next().unwrap_or_default().to_string()))
}

fn end_to_end(dir: &Path) -> Verdict {
    const LIMIT: Duration = Duration::from_secs(600);
    let start = Instant::now();
    let data = dir.join("synth");
    let ckpt = dir.join("e2e.wpad");
    wpad(&[
        "synth",
        "--n",
        "32",
        "--size",
        "64x64",
        "--seed",
        "7",
        "--out",
        path(&data),
    ])?;
    wpad(&[
        "train",
        "--data",
        path(&data),
        "--out",
        path(&ckpt),
        "--log",
        path(&dir.join("e2e_log.csv")),
    ])?;
    let epochs = fs::read_to_string(dir.join("e2e_log.csv"))
        .map_err(|e| e.to_string())?
        .lines()
        .count()
        - 1;
    let mut accs = Vec::new();
    for split in ["train", "heldout"] {
        let out = dir.join(format!("eval_{split}"));
        wpad(&[
            "eval",
            "--ckpt",
            path(&ckpt),
            "--data",
            path(&data),
            "--out",
            path(&out),
            "--split",
            split,
        ])?;
        accs.push(read_summary(&out)?);
    }
    let elapsed = start.elapsed();
    check(
        epochs <= 200 && accs[0].0 >= 0.95 && accs[1].0 >= 0.80 && elapsed < LIMIT,
        format!(
            "{epochs} epochs: train accuracy {:.3} (>= 0.95), held-out accuracy {:.3} (>= 0.80, auc {}), {elapsed:.1?} (< 10 min)",
            accs[0].0, accs[1].0, accs[1].1
        ),
    )
}

fn determinism() -> Verdict {
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let ds = synth_dataset(32, cfg.image_size, 7).map_err(|e| e.to_string())?;
    let train = feature_set(&ds, &ds.splits.train, &cfg).map_err(|e| e.to_string())?;
    let val = feature_set(&ds, &ds.splits.val, &cfg).map_err(|e| e.to_string())?;
    let run = || -> Result<Vec<u64>, String> {
        let model = Model::build(
            ModelConfig::reference_default(cfg.feature_shape(), 2),
            cfg.seed,
        )
        .map_err(|e| e.to_string())?;
        let out = fit(model, &train, &val, &cfg).map_err(|e| e.to_string())?;
        Ok(out.log.losses().into_iter().map(f64::to_bits).collect())
    };
    let (a, b) = (run()?, run()?);
    check(
        a == b && !a.is_empty(),
        format!(
            "two default-model runs, seed {}: loss sequences bit-identical = {}",
            cfg.seed,
            a == b
        ),
    )
}

fn checkpoint_round_trip() -> Verdict {
    let mut ck = default_checkpoint(3)?;
    let mut r = rng(3);
    for layer in ck.model.layers_mut() {
        if let Layer::BatchNorm(bn) = layer {
            let c = bn.channels();
            bn.gamma = uniform(&[c], 0.5, 1.5, &mut r);
            bn.running_mean = uniform(&[c], -0.2, 0.2, &mut r);
            bn.running_var = uniform(&[c], 0.5, 2.0, &mut r);
        }
    }
    ck.best_val_accuracy = 0.1 + 0.2;
    let bytes = encode(&ck).map_err(|e| e.to_string())?;
    let back = decode(&bytes).map_err(|e| e.to_string())?;
    let again = encode(&back).map_err(|e| e.to_string())?;
    let params_equal = ck
        .model
        .layers()
        .iter()
        .zip(back.model.layers())
        .all(|(a, b)| {
            a.state().iter().zip(b.state()).all(|((_, x), (_, y))| {
                x.data()
                    .iter()
                    .zip(y.data())
                    .all(|(p, q)| p.to_bits() == q.to_bits())
            })
        });
    let x = uniform(&[4, 4, 32, 32], 0.0, 1.0, &mut r);
    let before = ck.model.infer(&x).map_err(|e| e.to_string())?;
    let after = back.model.infer(&x).map_err(|e| e.to_string())?;
    let logits_equal = before
        .data()
        .iter()
        .zip(after.data())
        .all(|(p, q)| p.to_bits() == q.to_bits());
    check(
        params_equal && logits_equal && bytes == again && back == ck,
        format!(
            "{} bytes: tensors bit-identical {params_equal}, logits bit-identical {logits_equal}, re-save identical {}",
            bytes.len(),
            bytes == again
        ),
    )
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<Criterion<'_>> = vec![
        (
            "DWT perfect reconstruction",
            Box::new(perfect_reconstruction),
        ),
        ("Haar energy preservation", Box::new(haar_energy)),
        ("gradient checks", Box::new(gradient_checks)),
        (
            "architecture arithmetic",
            Box::new(|| architecture(dir.path())),
        ),
        ("identity at init", Box::new(identity_at_init)),
        ("AUC oracle equivalence", Box::new(auc_oracle)),
        ("CMC properties", Box::new(cmc_properties)),
        ("end-to-end overfit", Box::new(|| end_to_end(dir.path()))),
        ("determinism", Box::new(determinism)),
        ("checkpoint round trip", Box::new(checkpoint_round_trip)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let (tag, detail) = match run() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] {:>2}. {name}: {detail}", i + 1);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
