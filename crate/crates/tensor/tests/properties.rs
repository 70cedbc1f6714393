use proptest::prelude::*;
use xlm_tensor::ops::norm::softmax_forward;
use xlm_tensor::ops::pool::pool_forward;
use xlm_tensor::{inverse_permutation, Graph, PoolKind, RngStream, Tensor};

fn tensor4() -> impl Strategy<Value = Tensor<f32>> {
    (1usize..3, 1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(b, c, h, w)| {
        proptest::collection::vec(-100.0f32..100.0, b * 4 * c * h * w)
            .prop_map(move |d| Tensor::new(&[b, 4 * c, h, w], d).unwrap())
    })
}

proptest! {
    #[test]
    fn split_concat_round_trip_is_bit_exact(x in tensor4(), n in prop::sample::select(vec![1usize, 2, 4])) {
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let parts = g.split_channels(v, n).unwrap();
        let back = g.concat_channels(&parts).unwrap();
        prop_assert!(g.value(back).bit_eq(&x));
    }

    #[test]
    fn permute_round_trip_is_bit_exact(x in tensor4(), perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle()) {
        let y = x.permute(&perm).unwrap();
        prop_assert!(y.permute(&inverse_permutation(&perm)).unwrap().bit_eq(&x));
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant(
        v in proptest::collection::vec(-30.0f64..30.0, 2..12),
        shift in -50.0f64..50.0,
    ) {
        let n = v.len();
        let x = Tensor::new(&[1, n], v.clone()).unwrap();
        let y = softmax_forward(&x).unwrap();
        prop_assert!((y.sum() - 1.0).abs() <= 1e-7);
        prop_assert!(y.data().iter().all(|&p| p >= 0.0));
        let xs = Tensor::new(&[1, n], v.iter().map(|a| a + shift).collect()).unwrap();
        let ys = softmax_forward(&xs).unwrap();
        prop_assert!(y.max_abs_diff(&ys).unwrap() <= 1e-7);
    }

    #[test]
    fn le_bytes_round_trip(v in proptest::collection::vec(any::<f32>(), 1..64)) {
        let x = Tensor::new(&[v.len()], v).unwrap();
        let back = Tensor::<f32>::from_le_bytes(x.shape(), &x.to_le_bytes()).unwrap();
        prop_assert!(back.bit_eq(&x));
    }

    #[test]
    fn pooling_constant_input_returns_constant(c in -5.0f64..5.0, h in 1usize..6, w in 1usize..6) {
        let x = Tensor::full(&[1, 3, h, w], c);
        for kind in [PoolKind::AdaptiveAvg { oh: 1, ow: 1 }, PoolKind::GlobalAvg, PoolKind::ChannelMax, PoolKind::ChannelAvg] {
            let (y, _) = pool_forward(&x, kind).unwrap();
            prop_assert!(y.data().iter().all(|&v| (v - c).abs() <= 1e-12));
        }
    }
}

#[test]
fn adaptive_pool_to_one_is_mean() {
    let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    let (y, _) = pool_forward(&x, PoolKind::AdaptiveAvg { oh: 1, ow: 1 }).unwrap();
    assert_eq!(y.data(), &[2.5]);
}

#[test]
fn identical_rng_state_gives_identical_draws() {
    let mut a = RngStream::new(99);
    let mut b = RngStream::new(99);
    for _ in 0..10 {
        a.next_u64();
    }
    for _ in 0..10 {
        b.next_u64();
    }
    assert_eq!(a.draws(), b.draws());
    let xa: Vec<f64> = (0..100).map(|_| a.normal()).collect();
    let xb: Vec<f64> = (0..100).map(|_| b.normal()).collect();
    assert_eq!(xa, xb);
}

#[test]
fn forward_pass_is_bit_identical_for_identical_rng_state() {
    let run = || {
        let mut rng = RngStream::new(5);
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_fn(&[4, 8], |_| rng.normal() as f32));
        let w = g.constant(Tensor::from_fn(&[3, 8], |_| rng.normal() as f32));
        let y = g.linear(x, w, None).unwrap();
        let y = g.gelu(y);
        let y = g.softmax(y).unwrap();
        g.value(y).clone()
    };
    assert!(run().bit_eq(&run()));
}
