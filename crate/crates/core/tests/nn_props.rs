use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wpad::nn::{softmax, BatchNorm, Conv2d};
use wpad::Tensor;

fn tensor(shape: Vec<usize>, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    let len: usize = shape.iter().product();
    prop::collection::vec(lo..hi, len).prop_map(move |v| Tensor::from_values(&shape, v).unwrap())
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(logits in (1usize..6, 2usize..6).prop_flat_map(|(n, k)| tensor(vec![n, k], -50.0, 50.0))) {
        let k = logits.shape()[1];
        let p = softmax(&logits).unwrap();
        for row in p.data().chunks(k) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn conv_is_linear_without_bias(
        seed in any::<u64>(),
        alpha in -4.0f64..4.0,
        stride in 1usize..3,
        x in tensor(vec![2, 3, 7, 7], -1.0, 1.0),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = Conv2d::he_init(3, 4, 3, stride, 1, &mut rng).unwrap();
        let scaled = conv.forward(&x.scale(alpha)).unwrap();
        let expected = conv.forward(&x).unwrap().scale(alpha);
        prop_assert!(scaled.max_abs_diff(&expected).unwrap() < 1e-10);
    }

    #[test]
    fn batchnorm_inference_is_deterministic(
        x in tensor(vec![3, 2, 4, 4], -3.0, 3.0),
        warm in tensor(vec![4, 2, 4, 4], -3.0, 3.0),
    ) {
        let mut bn = BatchNorm::new(2).unwrap();
        bn.forward(&warm, true).unwrap();
        let a = bn.infer(&x).unwrap();
        let b = bn.infer(&x).unwrap();
        prop_assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
