mod common;

use common::*;
use xlm_core::blocks::{ConvNextBlock, Mamba, MambaCfg, Pvm, Scab};
use xlm_core::head::{Head, HeadConfig, HeadPreset};
use xlm_core::params::{Builder, ParamStore};
use xlm_tensor::RngStream;

const TOL: f64 = 1e-4;
const H: f64 = 1e-3;
// Channel max has kinks; keep the stencil well inside one linear piece.
const H_MAX: f64 = 1e-5;

fn check(name: &str, seed: u64, err: f64) {
    assert!(err <= TOL, "{name} seed {seed}: relative error {err:e}");
}

#[test]
fn convnext_gradients() {
    for seed in 0..10 {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(seed);
        let blk = ConvNextBlock::new(&mut Builder::new(&mut store, &mut rng), 4, 0.0).unwrap();
        randomize(&mut store, &mut rng, 0.5);
        let x = rand_tensor(&[2, 4, 4, 4], &mut rng, 1.0);
        let err = block_gradcheck(&store, &[x], seed, H, |s, v| blk.forward(s, v[0], false, &mut RngStream::new(0)));
        check("convnext", seed, err);
    }
}

#[test]
fn mamba_gradients() {
    for seed in 0..10 {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(seed);
        let cfg = MambaCfg { state: 3, expand: 1, conv: 3 };
        let m = Mamba::new(&mut Builder::new(&mut store, &mut rng), 3, cfg).unwrap();
        randomize(&mut store, &mut rng, 0.5);
        let x = rand_tensor(&[2, 5, 3], &mut rng, 1.0);
        let err = block_gradcheck(&store, &[x], seed, H, |s, v| {
            let (g, p) = s.split();
            m.forward(g, p, v[0])
        });
        check("mamba", seed, err);
    }
}

#[test]
fn pvm_gradients() {
    for seed in 0..10 {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(seed);
        let p =
            Pvm::new(&mut Builder::new(&mut store, &mut rng), 8, MambaCfg { state: 2, expand: 1, conv: 2 }).unwrap();
        randomize(&mut store, &mut rng, 0.5);
        let x = rand_tensor(&[1, 8, 2, 3], &mut rng, 1.0);
        let err = block_gradcheck(&store, &[x], seed, H, |s, v| p.forward(s, v[0]));
        check("pvm", seed, err);
    }
}

#[test]
fn scab_gradients() {
    for seed in 0..10 {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(seed);
        let sc = Scab::new(&mut Builder::new(&mut store, &mut rng), &[3, 4], 2).unwrap();
        randomize(&mut store, &mut rng, 0.5);
        let xs = [rand_tensor(&[2, 3, 5, 5], &mut rng, 1.0), rand_tensor(&[2, 4, 2, 2], &mut rng, 1.0)];
        let err = block_gradcheck(&store, &xs, seed, H_MAX, |s, v| {
            let outs = sc.forward(s, v)?;
            let a = s.g.reshape(outs[0], &[2, 75])?;
            let b = s.g.reshape(outs[1], &[2, 16])?;
            Ok(s.g.concat(&[a, b], 1)?)
        });
        check("scab", seed, err);
    }
}

#[test]
fn head_preset_gradients() {
    for preset in HeadPreset::ALL {
        let cfg = HeadConfig::preset(preset, &[16, 8, 8, 8, 4, 2]).unwrap();
        for seed in 0..10 {
            let mut store = ParamStore::new();
            let mut rng = RngStream::new(seed);
            let head = Head::new(&mut Builder::new(&mut store, &mut rng), &cfg).unwrap();
            randomize(&mut store, &mut rng, 0.5);
            let x = rand_tensor(&[3, 16], &mut rng, 1.0);
            let err = block_gradcheck(&store, &[x], seed, H, |s, v| Ok(head.forward(s, v[0])?.logits));
            check(preset.name(), seed, err);
        }
    }
}
