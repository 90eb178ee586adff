use bss_vision::autograd::{Tape, Tensor};
use bss_vision::nn::{conv2d, maxpool2d_with_indices, maxunpool2d, BatchNorm2d, Mode};
use proptest::prelude::*;

fn tensor4(shape: [usize; 4], lo: f32, hi: f32) -> impl Strategy<Value = Tensor> {
    let n = shape.iter().product::<usize>();
    prop::collection::vec(lo..hi, n).prop_map(move |d| Tensor::new(shape, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pool_unpool_round_trip_is_bit_exact(x in tensor4([2, 3, 6, 8], 0.0, 10.0)) {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let (p, idx) = maxpool2d_with_indices(&mut tape, xv).unwrap();
        let u = maxunpool2d(&mut tape, p, &idx).unwrap();
        let (q, idx2) = maxpool2d_with_indices(&mut tape, u).unwrap();
        prop_assert_eq!(tape.data(p), tape.data(q));
        prop_assert_eq!(idx.offsets(), idx2.offsets());
    }

    #[test]
    fn identity_kernel_is_bit_exact(x in tensor4([2, 3, 5, 4], -100.0, 100.0)) {
        let mut w = vec![0.0f32; 9];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(Tensor::new([3, 3, 1, 1], w).unwrap());
        let bv = tape.constant(Tensor::zeros([3]));
        let y = conv2d(&mut tape, xv, wv, Some(bv), 1, 0).unwrap();
        prop_assert_eq!(tape.data(y), x.data());
    }

    #[test]
    fn batchnorm_train_standardizes(x in tensor4([4, 2, 3, 3], -5.0, 5.0)) {
        // Degenerate near-constant channels are not meaningful here.
        let spread = x.data().iter().cloned().fold(f32::MIN, f32::max) - x.data().iter().cloned().fold(f32::MAX, f32::min);
        prop_assume!(spread > 1.0);
        let mut bn = BatchNorm2d::new("bn", 2);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = bn.forward(&mut tape, xv, Mode::Train).unwrap();
        let yd = tape.data(y);
        for c in 0..2 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|n| (0..9).map(move |i| (n * 2 + c) * 9 + i))
                .map(|i| yd[i] as f64)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            prop_assert!(mean.abs() < 1e-4, "mean {}", mean);
            prop_assert!((var - 1.0).abs() < 1e-2, "var {}", var);
        }
        prop_assert!(bn.running_var.value.data().iter().all(|&v| v > 0.0));
    }
}

/// The round trip needs non-negative maps: unpooling writes zeros beside
/// each winner, and a zero beats a negative winner on the second pool.
#[test]
fn round_trip_breaks_for_negative_windows() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new([1, 1, 2, 2], vec![-3.0, -1.0, -2.0, -4.0]).unwrap());
    let (p, idx) = maxpool2d_with_indices(&mut tape, x).unwrap();
    let u = maxunpool2d(&mut tape, p, &idx).unwrap();
    let (q, _) = maxpool2d_with_indices(&mut tape, u).unwrap();
    assert_eq!(tape.data(p), &[-1.0]);
    assert_eq!(tape.data(q), &[0.0]);
}
