//! Finite-difference gradient checks for single layers and whole models.

use rand::Rng;
use wpad::model::{Model, SkipMode};
use wpad::nn::{softmax_ce, BatchNorm, Conv2d, Layer, Linear, MaxPool2d, Network};
use wpad::Tensor;

use super::{away_from_zero, numeric_grad, project, rel_error, rng, toy_config, uniform};

/// Worst relative error over the input gradient and every parameter
/// gradient of `layer` in training mode, for the loss `sum(y * r)`.
pub fn check_layer(layer: &Layer, x: &Tensor, seed: u64) -> f64 {
    let mut rng = rng(seed ^ 0x5eed);
    let (y, cache) = layer.clone().forward_train(x.clone()).unwrap();
    let r = uniform(y.shape(), -1.0, 1.0, &mut rng);
    let (gx, gparams) = layer.backward(&cache, &r).unwrap();

    let loss_at =
        |l: &Layer, x: &Tensor| project(&l.clone().forward_train(x.clone()).unwrap().0, &r);
    let mut worst = rel_error(
        gx.data(),
        &numeric_grad(&mut x.clone(), |x| loss_at(layer, x)),
    );
    for (j, analytic) in gparams.iter().enumerate() {
        let mut p = layer.params()[j].clone();
        let numeric = numeric_grad(&mut p, |p| {
            let mut l = layer.clone();
            *l.params_mut()[j] = p.clone();
            loss_at(&l, x)
        });
        worst = worst.max(rel_error(analytic.data(), &numeric));
    }
    worst
}

fn shuffled_grid(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    // distinct values 1/len apart, so no pooling window holds a near-tie
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 - 0.5).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
    Tensor::from_values(shape, v).unwrap()
}

/// `(layer name, worst relative error)` for one seed of every layer kind.
pub fn layer_cases(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = rng(seed);
    let mut out = Vec::new();

    let mut conv = Conv2d::he_init(3, 4, 3, 1, 1, &mut rng).unwrap();
    conv.bias = uniform(&[4], -0.5, 0.5, &mut rng);
    let x = uniform(&[2, 3, 5, 6], -1.0, 1.0, &mut rng);
    out.push(("conv2d 3x3", check_layer(&Layer::Conv2d(conv), &x, seed)));

    let strided = Conv2d::he_init(2, 3, 3, 2, 1, &mut rng).unwrap();
    let x = uniform(&[2, 2, 7, 5], -1.0, 1.0, &mut rng);
    out.push((
        "conv2d 3x3 stride 2",
        check_layer(&Layer::Conv2d(strided), &x, seed),
    ));

    let pointwise = Conv2d::he_init(3, 2, 1, 1, 0, &mut rng).unwrap();
    let x = uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
    out.push((
        "conv2d 1x1",
        check_layer(&Layer::Conv2d(pointwise), &x, seed),
    ));

    let mut bn = BatchNorm::new(3).unwrap();
    bn.gamma = uniform(&[3], 0.5, 1.5, &mut rng);
    bn.beta = uniform(&[3], -0.5, 0.5, &mut rng);
    let x = uniform(&[4, 3, 3, 3], -2.0, 2.0, &mut rng);
    out.push(("batchnorm", check_layer(&Layer::BatchNorm(bn), &x, seed)));

    let x = away_from_zero(&[2, 3, 4, 4], 1e-2, &mut rng);
    out.push(("relu", check_layer(&Layer::Relu, &x, seed)));

    let x = shuffled_grid(&[2, 2, 6, 4], &mut rng);
    out.push((
        "maxpool",
        check_layer(&Layer::MaxPool2d(MaxPool2d::default()), &x, seed),
    ));

    let fc = Linear::new(
        uniform(&[3, 12], -0.5, 0.5, &mut rng),
        uniform(&[3], -0.5, 0.5, &mut rng),
    )
    .unwrap();
    let x = uniform(&[4, 3, 2, 2], -1.0, 1.0, &mut rng);
    out.push((
        "fully connected",
        check_layer(&Layer::FullyConnected(fc), &x, seed),
    ));

    let mut logits = uniform(&[5, 3], -3.0, 3.0, &mut rng);
    let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..3)).collect();
    let (_, analytic) = softmax_ce(&logits, &labels).unwrap();
    let numeric = numeric_grad(&mut logits, |l| softmax_ce(l, &labels).unwrap().0);
    out.push((
        "softmax cross-entropy",
        rel_error(analytic.data(), &numeric),
    ));
    out
}

/// Worst relative error over all parameters of a 3-block toy model on
/// 8x8 inputs, trained-mode forward, cross-entropy loss. Batch norm scales
/// and shifts are randomized so no branch starts switched off.
pub fn check_toy_model(seed: u64, skip_mode: SkipMode) -> f64 {
    let mut rng = rng(seed);
    let mut model = Model::build(toy_config((2, 8, 8), skip_mode), seed).unwrap();
    for layer in model.layers_mut() {
        if let Layer::BatchNorm(bn) = layer {
            let c = bn.channels();
            bn.gamma = uniform(&[c], 0.5, 1.5, &mut rng);
            bn.beta = uniform(&[c], -0.3, 0.3, &mut rng);
        }
    }
    let x = uniform(&[3, 2, 8, 8], -1.0, 1.0, &mut rng);
    let labels = [0, 1, 1];
    let loss_of = |m: &Model| {
        let mut m = m.clone();
        let (logits, _) = m.forward_train(&x).unwrap();
        softmax_ce(&logits, &labels).unwrap().0
    };

    let (logits, tape) = model.clone().forward_train(&x).unwrap();
    let (_, grad) = softmax_ce(&logits, &labels).unwrap();
    let analytic = model.backward(tape, &grad).unwrap();

    let mut worst: f64 = 0.0;
    for (j, a) in analytic.iter().enumerate() {
        let mut p = model.params()[j].clone();
        let numeric = numeric_grad(&mut p, |p| {
            let mut m = model.clone();
            *m.params_mut()[j] = p.clone();
            loss_of(&m)
        });
        worst = worst.max(rel_error(a.data(), &numeric));
    }
    worst
}
