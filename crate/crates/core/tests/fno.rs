use proptest::prelude::*;
use xlm_core::head::{fno_init, gram_identity_error, hadamard_matrix, Head, HeadConfig, HeadLayer, HeadPreset};
use xlm_core::params::{Builder, ParamStore, Session};
use xlm_core::train::{OptimConfig, Optimizer, OptimizerKind};
use xlm_tensor::{RngStream, Tensor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn fno_is_balanced_nonnegative_orthonormal(d in 2usize..12, extra in 0usize..200, seed in any::<u64>()) {
        let f = d + extra;
        let m = fno_init(f, d, &mut RngStream::new(seed), true).unwrap();
        prop_assert_eq!(m.w.shape(), &[f, d]);
        prop_assert!(gram_identity_error(&m.w) <= 1e-6);
        prop_assert!(m.w.data().iter().all(|&v| v >= 0.0));
        let mut sizes = vec![0usize; d];
        for i in 0..f {
            let row = &m.w.data()[i * d..(i + 1) * d];
            let nz: Vec<usize> = (0..d).filter(|&c| row[c] != 0.0).collect();
            prop_assert_eq!(nz, vec![m.groups[i]]);
            sizes[m.groups[i]] += 1;
        }
        let (lo, hi) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
        prop_assert!(hi - lo <= 1 && lo >= 1);
    }

    #[test]
    fn fno_rows_carry_group_weight(d in 2usize..6, f in 6usize..40, seed in any::<u64>()) {
        let m = fno_init(f.max(d), d, &mut RngStream::new(seed), true).unwrap();
        for i in 0..m.features() {
            let c = m.groups[i];
            let size = m.groups.iter().filter(|&&g| g == c).count();
            prop_assert!((m.w.data()[i * d + c] - 1.0 / (size as f64).sqrt()).abs() < 1e-15);
        }
    }
}

#[test]
fn fno_rejects_bad_sizes() {
    assert!(fno_init(3, 4, &mut RngStream::new(0), true).is_err());
    assert!(fno_init(5, 1, &mut RngStream::new(0), true).is_err());
}

#[test]
fn hadamard_power_of_two_is_orthonormal() {
    for (f, d) in [(2, 2), (8, 2), (16, 8), (64, 16)] {
        assert!(gram_identity_error(&hadamard_matrix(f, d).unwrap()) < 1e-12);
    }
    assert!(hadamard_matrix(6, 4).is_err());
}

fn fixed_layers(head: &Head) -> Vec<(xlm_core::ParamId, xlm_core::ParamId)> {
    head.layers
        .iter()
        .filter_map(|l| match l {
            HeadLayer::Fixed { w, rho, .. } => Some((*w, *rho)),
            _ => None,
        })
        .collect()
}

#[test]
fn fixed_layers_have_one_trainable_scalar() {
    for preset in HeadPreset::ALL {
        let cfg = HeadConfig::preset(preset, &[16, 8, 8, 8, 4, 2]).unwrap();
        let mut store = ParamStore::<f64>::new();
        let head = Head::new(&mut Builder::new(&mut store, &mut RngStream::new(1)), &cfg).unwrap();
        let layers = fixed_layers(&head);
        assert!(!layers.is_empty());
        for (w, rho) in layers {
            assert!(!store.get(w).trainable);
            assert!(store.get(rho).trainable);
            assert_eq!(store.value(rho).numel(), 1);
        }
    }
}

#[test]
fn fixed_weights_survive_a_thousand_steps() {
    let cfg = HeadConfig::preset(HeadPreset::ThreeLinearTwoFno, &[12, 8, 8, 8, 4, 2]).unwrap();
    let mut store = ParamStore::<f64>::new();
    let head = Head::new(&mut Builder::new(&mut store, &mut RngStream::new(2)), &cfg).unwrap();
    let before: Vec<Tensor<f64>> = fixed_layers(&head).iter().map(|&(w, _)| store.value(w).clone()).collect();
    let rho_before: Vec<f64> = fixed_layers(&head).iter().map(|&(_, r)| store.value(r).item()).collect();
    let mut rng = RngStream::new(3);
    let x = Tensor::from_fn(&[8, 12], |_| rng.normal());
    let target = Tensor::from_fn(&[8, 2], |i| if (i / 2) % 2 == i % 2 { 1.0 } else { 0.0 });
    for kind in [OptimizerKind::Sgd, OptimizerKind::AdamW] {
        let mut opt = Optimizer::new(OptimConfig { kind, momentum: 0.9, ..OptimConfig::default() }, &store).unwrap();
        for _ in 0..500 {
            let mut s = Session::new(&store, true);
            let xv = s.g.constant(x.clone());
            let out = head.forward(&mut s, xv).unwrap();
            let t = s.g.constant(target.clone());
            let d = s.g.sub(out.logits, t).unwrap();
            let sq = s.g.square(d);
            let loss = s.g.mean(sq);
            let (_, grads) = s.param_grads(&store, loss).unwrap();
            opt.step(&mut store, &grads, 1e-2).unwrap();
        }
    }
    for ((w, _), b) in fixed_layers(&head).iter().zip(&before) {
        assert!(store.value(*w).bit_eq(b));
    }
    let rho_after: Vec<f64> = fixed_layers(&head).iter().map(|&(_, r)| store.value(r).item()).collect();
    assert_ne!(rho_before, rho_after, "the logit scale should still train");
}
