mod common;

use common::*;
use xlm_core::blocks::{ConvNextBlock, Mamba, MambaCfg, Pvm, Scab, LN_EPS};
use xlm_core::params::{Builder, ParamStore, Session};
use xlm_core::CoreError;
use xlm_tensor::{RngStream, Tensor};

fn convnext(c: usize, seed: u64) -> (ParamStore<f64>, ConvNextBlock) {
    let mut store = ParamStore::new();
    let mut rng = RngStream::new(seed);
    let blk = ConvNextBlock::new(&mut Builder::new(&mut store, &mut rng), c, 0.0).unwrap();
    (store, blk)
}

fn mamba(c: usize, cfg: MambaCfg, seed: u64) -> (ParamStore<f64>, Mamba) {
    let mut store = ParamStore::new();
    let mut rng = RngStream::new(seed);
    let m = Mamba::new(&mut Builder::new(&mut store, &mut rng), c, cfg).unwrap();
    (store, m)
}

fn pvm(c: usize, seed: u64) -> (ParamStore<f64>, Pvm) {
    let mut store = ParamStore::new();
    let mut rng = RngStream::new(seed);
    let p = Pvm::new(&mut Builder::new(&mut store, &mut rng), c, MambaCfg { state: 4, ..MambaCfg::default() }).unwrap();
    (store, p)
}

fn run_convnext(store: &ParamStore<f64>, blk: &ConvNextBlock, x: &Tensor<f64>) -> Tensor<f64> {
    let mut s = Session::new(store, false);
    let xv = s.g.constant(x.clone());
    let y = blk.forward(&mut s, xv, false, &mut RngStream::new(0)).unwrap();
    s.g.value(y).clone()
}

fn run_mamba(store: &ParamStore<f64>, m: &Mamba, x: &Tensor<f64>) -> Tensor<f64> {
    let mut s = Session::new(store, false);
    let xv = s.g.constant(x.clone());
    let (g, p) = s.split();
    let y = m.forward(g, p, xv).unwrap();
    g.value(y).clone()
}

fn run_pvm(store: &ParamStore<f64>, p: &Pvm, x: &Tensor<f64>) -> Tensor<f64> {
    let mut s = Session::new(store, false);
    let xv = s.g.constant(x.clone());
    let y = p.forward(&mut s, xv).unwrap();
    s.g.value(y).clone()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn convnext_reference(store: &ParamStore<f64>, blk: &ConvNextBlock, x: &Tensor<f64>) -> Vec<f64> {
    let &[bs, c, h, w] = x.shape() else { unreachable!() };
    let v = |id| store.value(id).data().to_vec();
    let (dw, dwb, ng, nb) = (v(blk.dw_w), v(blk.dw_b), v(blk.norm_g), v(blk.norm_b));
    let (f1, f1b, f2, f2b, gamma) = (v(blk.fc1_w), v(blk.fc1_b), v(blk.fc2_w), v(blk.fc2_b), v(blk.gamma_scale));
    let xd = x.data();
    let mut out = xd.to_vec();
    for b in 0..bs {
        for i in 0..h {
            for j in 0..w {
                let token: Vec<f64> = (0..c)
                    .map(|ch| {
                        let mut acc = dwb[ch];
                        for ki in 0..7 {
                            for kj in 0..7 {
                                let (yi, xj) = (i as isize + ki as isize - 3, j as isize + kj as isize - 3);
                                if yi >= 0 && xj >= 0 && (yi as usize) < h && (xj as usize) < w {
                                    acc += dw[ch * 49 + ki * 7 + kj]
                                        * xd[((b * c + ch) * h + yi as usize) * w + xj as usize];
                                }
                            }
                        }
                        acc
                    })
                    .collect();
                let t = layer_norm(&token, &ng, &nb, LN_EPS);
                let hdn: Vec<f64> = matvec(&f1, &t, Some(&f1b)).into_iter().map(gelu).collect();
                let y = matvec(&f2, &hdn, Some(&f2b));
                for ch in 0..c {
                    out[((b * c + ch) * h + i) * w + j] += gamma[ch] * y[ch];
                }
            }
        }
    }
    out
}

/// One sequence (L,C) through the straight-line Mamba equations.
fn mamba_reference(store: &ParamStore<f64>, m: &Mamba, x: &[f64], l: usize) -> Vec<f64> {
    let v = |id| store.value(id).data().to_vec();
    let (c, e, n, k) = (m.width, m.inner, m.cfg.state, m.cfg.conv);
    let (inw, cw, cb, dtw, dtb) = (v(m.in_w), v(m.conv_w), v(m.conv_b), v(m.dt_w), v(m.dt_b));
    let (bw, cmw, loga, d, outw) = (v(m.b_w), v(m.c_w), v(m.log_a), v(m.d), v(m.out_w));
    let proj: Vec<Vec<f64>> = (0..l).map(|t| matvec(&inw, &x[t * c..(t + 1) * c], None)).collect();
    let mut h = vec![0.0; e * n];
    let mut out = Vec::with_capacity(l * c);
    for t in 0..l {
        let xc: Vec<f64> = (0..e)
            .map(|ei| {
                let mut acc = cb[ei];
                for j in 0..k {
                    let src = t as isize - (k - 1) as isize + j as isize;
                    if src >= 0 {
                        acc += cw[ei * k + j] * proj[src as usize][ei];
                    }
                }
                silu(acc)
            })
            .collect();
        let dt: Vec<f64> = matvec(&dtw, &xc, Some(&dtb)).into_iter().map(softplus).collect();
        let bm = matvec(&bw, &xc, None);
        let cm = matvec(&cmw, &xc, None);
        let y: Vec<f64> = (0..e)
            .map(|ei| {
                let mut acc = d[ei] * xc[ei];
                for j in 0..n {
                    let a = -loga[ei * n + j].exp();
                    h[ei * n + j] = (dt[ei] * a).exp() * h[ei * n + j] + dt[ei] * bm[j] * xc[ei];
                    acc += cm[j] * h[ei * n + j];
                }
                acc * silu(proj[t][e + ei])
            })
            .collect();
        out.extend(matvec(&outw, &y, None));
    }
    out
}

fn pvm_reference(store: &ParamStore<f64>, p: &Pvm, x: &Tensor<f64>) -> Vec<f64> {
    let &[bs, c, h, w] = x.shape() else { unreachable!() };
    let v = |id| store.value(id).data().to_vec();
    let (g1, b1, g2, b2, pw, pb) = (v(p.norm1_g), v(p.norm1_b), v(p.norm2_g), v(p.norm2_b), v(p.proj_w), v(p.proj_b));
    let theta = store.value(p.theta).item();
    let (l, q) = (h * w, c / 4);
    let mut out = vec![0.0; x.numel()];
    for b in 0..bs {
        let tokens: Vec<Vec<f64>> = (0..l)
            .map(|t| {
                let tok: Vec<f64> = (0..c).map(|ch| x.data()[(b * c + ch) * l + t]).collect();
                layer_norm(&tok, &g1, &b1, LN_EPS)
            })
            .collect();
        let mut joined = vec![vec![0.0; c]; l];
        for k in 0..4 {
            let seq: Vec<f64> = tokens.iter().flat_map(|t| t[k * q..(k + 1) * q].to_vec()).collect();
            let m = mamba_reference(store, &p.mamba, &seq, l);
            for t in 0..l {
                for i in 0..q {
                    joined[t][k * q + i] = m[t * q + i] + theta * seq[t * q + i];
                }
            }
        }
        for (t, tok) in joined.iter().enumerate() {
            let y = matvec(&pw, &layer_norm(tok, &g2, &b2, LN_EPS), Some(&pb));
            for ch in 0..c {
                out[(b * c + ch) * l + t] = y[ch];
            }
        }
    }
    out
}

#[test]
fn convnext_zero_gamma_is_identity() {
    for (seed, shape) in [(0, [2, 4, 5, 5]), (1, [1, 8, 3, 7]), (2, [3, 2, 1, 1])] {
        let (mut store, blk) = convnext(shape[1], seed);
        let mut rng = RngStream::new(seed + 100);
        randomize(&mut store, &mut rng, 0.5);
        store.set(blk.gamma_scale, Tensor::zeros(&[shape[1]])).unwrap();
        let x = rand_tensor(&shape, &mut rng, 2.0);
        let y = run_convnext(&store, &blk, &x);
        assert!(y.bit_eq(&x), "seed {seed}");
    }
}

#[test]
fn convnext_matches_reference() {
    for seed in 0..5 {
        let (mut store, blk) = convnext(4, seed);
        let mut rng = RngStream::new(seed + 7);
        randomize(&mut store, &mut rng, 0.5);
        let x = rand_tensor(&[2, 4, 8, 8], &mut rng, 1.0);
        let y = run_convnext(&store, &blk, &x);
        assert_eq!(y.shape(), x.shape());
        assert!(max_diff(y.data(), &convnext_reference(&store, &blk, &x)) <= 1e-6);
    }
}

#[test]
fn convnext_rejects_wrong_channels() {
    let (store, blk) = convnext(4, 0);
    let mut s = Session::new(&store, false);
    let x = s.g.constant(Tensor::zeros(&[1, 3, 4, 4]));
    assert!(matches!(blk.forward(&mut s, x, false, &mut RngStream::new(0)), Err(CoreError::Dimension(_))));
}

#[test]
fn mamba_zero_out_projection_gives_zero() {
    let (mut store, m) = mamba(4, MambaCfg::default(), 3);
    let mut rng = RngStream::new(4);
    randomize(&mut store, &mut rng, 0.5);
    store.set(m.out_w, Tensor::zeros(&[4, 4])).unwrap();
    let y = run_mamba(&store, &m, &rand_tensor(&[2, 9, 4], &mut rng, 1.0));
    assert_eq!(y.shape(), &[2, 9, 4]);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn mamba_matches_reference() {
    for seed in 0..5 {
        let cfg = MambaCfg { state: 3, expand: 2, conv: 4 };
        let (mut store, m) = mamba(4, cfg, seed);
        let mut rng = RngStream::new(seed + 11);
        randomize(&mut store, &mut rng, 0.5);
        let x = rand_tensor(&[1, 6, 4], &mut rng, 1.0);
        let y = run_mamba(&store, &m, &x);
        assert!(max_diff(y.data(), &mamba_reference(&store, &m, x.data(), 6)) <= 1e-6);
    }
}

#[test]
fn mamba_is_causal() {
    let (mut store, m) = mamba(4, MambaCfg::default(), 5);
    let mut rng = RngStream::new(6);
    randomize(&mut store, &mut rng, 0.5);
    let x = rand_tensor(&[1, 12, 4], &mut rng, 1.0);
    let base = run_mamba(&store, &m, &x);
    for t in [0, 5, 11] {
        let mut xp = x.clone();
        xp.data_mut()[t * 4 + 2] += 0.75;
        let y = run_mamba(&store, &m, &xp);
        assert_eq!(&y.data()[..t * 4], &base.data()[..t * 4], "outputs before {t} changed");
        assert_ne!(&y.data()[t * 4..], &base.data()[t * 4..]);
    }
}

#[test]
fn pvm_zero_mamba_is_projected_double_norm() {
    let (mut store, p) = pvm(8, 1);
    let mut rng = RngStream::new(2);
    randomize(&mut store, &mut rng, 0.5);
    store.set(p.mamba.out_w, Tensor::zeros(&[2, 2])).unwrap();
    store.set(p.theta, Tensor::ones(&[1])).unwrap();
    let x = rand_tensor(&[2, 8, 3, 3], &mut rng, 1.0);
    let y = run_pvm(&store, &p, &x);
    let v = |id| store.value(id).data().to_vec();
    let mut want = vec![0.0; x.numel()];
    for b in 0..2 {
        for t in 0..9 {
            let tok: Vec<f64> = (0..8).map(|ch| x.data()[(b * 8 + ch) * 9 + t]).collect();
            let n1 = layer_norm(&tok, &v(p.norm1_g), &v(p.norm1_b), LN_EPS);
            let n2 = layer_norm(&n1, &v(p.norm2_g), &v(p.norm2_b), LN_EPS);
            let o = matvec(&v(p.proj_w), &n2, Some(&v(p.proj_b)));
            for ch in 0..8 {
                want[(b * 8 + ch) * 9 + t] = o[ch];
            }
        }
    }
    assert!(max_diff(y.data(), &want) <= 1e-9);
}

#[test]
fn pvm_matches_reference() {
    for seed in 0..3 {
        let (mut store, p) = pvm(16, seed);
        let mut rng = RngStream::new(seed + 20);
        randomize(&mut store, &mut rng, 0.5);
        let x = rand_tensor(&[2, 16, 3, 4], &mut rng, 1.0);
        let y = run_pvm(&store, &p, &x);
        assert_eq!(y.shape(), x.shape());
        assert!(max_diff(y.data(), &pvm_reference(&store, &p, &x)) <= 1e-6);
    }
}

#[test]
fn pvm_splits_into_four_branches() {
    let (_, p) = pvm(32, 0);
    assert_eq!(p.mamba.width, 8);
    let mut store = ParamStore::<f64>::new();
    let mut rng = RngStream::new(0);
    let err = Pvm::new(&mut Builder::new(&mut store, &mut rng), 30, MambaCfg::default()).unwrap_err();
    assert!(matches!(err, CoreError::Config(_)));
}

fn scab(widths: &[usize], seed: u64) -> (ParamStore<f64>, Scab) {
    let mut store = ParamStore::new();
    let mut rng = RngStream::new(seed);
    let s = Scab::new(&mut Builder::new(&mut store, &mut rng), widths, 3).unwrap();
    (store, s)
}

fn scab_reference(store: &ParamStore<f64>, sc: &Scab, feats: &[Tensor<f64>]) -> Vec<Vec<f64>> {
    let v = |id| store.value(id).data().to_vec();
    let sw = v(sc.spatial_w);
    let bs = feats[0].shape()[0];
    let spatial: Vec<Vec<f64>> = feats
        .iter()
        .map(|x| {
            let &[_, c, h, w] = x.shape() else { unreachable!() };
            let mut out = x.data().to_vec();
            for b in 0..bs {
                let at = |ch: usize, i: usize, j: usize| x.data()[((b * c + ch) * h + i) * w + j];
                let planes: Vec<Vec<f64>> = vec![
                    (0..h * w)
                        .map(|k| (0..c).map(|ch| at(ch, k / w, k % w)).fold(f64::NEG_INFINITY, f64::max))
                        .collect(),
                    (0..h * w).map(|k| (0..c).map(|ch| at(ch, k / w, k % w)).sum::<f64>() / c as f64).collect(),
                ];
                for i in 0..h {
                    for j in 0..w {
                        let mut acc = 0.0;
                        for (pc, plane) in planes.iter().enumerate() {
                            for ki in 0..7 {
                                for kj in 0..7 {
                                    let (yi, xj) = (i as isize + 3 * ki as isize - 9, j as isize + 3 * kj as isize - 9);
                                    if yi >= 0 && xj >= 0 && (yi as usize) < h && (xj as usize) < w {
                                        acc += sw[pc * 49 + ki * 7 + kj] * plane[yi as usize * w + xj as usize];
                                    }
                                }
                            }
                        }
                        let m = sigmoid(acc);
                        for ch in 0..c {
                            out[((b * c + ch) * h + i) * w + j] *= 1.0 + m;
                        }
                    }
                }
            }
            out
        })
        .collect();
    let mut result = spatial.clone();
    for b in 0..bs {
        let mut gap = Vec::new();
        for (x, t) in feats.iter().zip(&spatial) {
            let (c, hw) = (x.shape()[1], x.shape()[2] * x.shape()[3]);
            for ch in 0..c {
                gap.push(t[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().sum::<f64>() / hw as f64);
            }
        }
        let hidden: Vec<f64> = matvec(&v(sc.fc_w), &gap, Some(&v(sc.fc_b))).into_iter().map(gelu).collect();
        for (k, (x, r)) in feats.iter().zip(result.iter_mut()).enumerate() {
            let (c, hw) = (x.shape()[1], x.shape()[2] * x.shape()[3]);
            let (hw_id, hb_id) = sc.heads[k];
            let a: Vec<f64> = matvec(&v(hw_id), &hidden, Some(&v(hb_id))).into_iter().map(sigmoid).collect();
            for ch in 0..c {
                for val in &mut r[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                    *val *= 1.0 + a[ch];
                }
            }
        }
    }
    result
}

fn run_scab(store: &ParamStore<f64>, sc: &Scab, feats: &[Tensor<f64>]) -> Vec<Tensor<f64>> {
    let mut s = Session::new(store, false);
    let vs: Vec<_> = feats.iter().map(|f| s.g.constant(f.clone())).collect();
    let out = sc.forward(&mut s, &vs).unwrap();
    out.into_iter().map(|v| s.g.value(v).clone()).collect()
}

fn stage_feats(rng: &mut RngStream) -> Vec<Tensor<f64>> {
    vec![
        rand_tensor(&[2, 4, 9, 9], rng, 1.0),
        rand_tensor(&[2, 6, 5, 5], rng, 1.0),
        rand_tensor(&[2, 8, 1, 1], rng, 1.0),
    ]
}

#[test]
fn scab_matches_reference() {
    for seed in 0..3 {
        let (mut store, sc) = scab(&[4, 6, 8], seed);
        let mut rng = RngStream::new(seed + 40);
        randomize(&mut store, &mut rng, 0.5);
        let feats = stage_feats(&mut rng);
        let got = run_scab(&store, &sc, &feats);
        for (g, w) in got.iter().zip(scab_reference(&store, &sc, &feats)) {
            assert!(max_diff(g.data(), &w) <= 1e-6);
        }
    }
}

#[test]
fn scab_zero_weights_scale_by_one_and_a_half() {
    let (mut store, sc) = scab(&[4, 6, 8], 0);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let shape = store.value(id).shape().to_vec();
        store.set(id, Tensor::zeros(&shape)).unwrap();
    }
    let mut rng = RngStream::new(1);
    let feats = stage_feats(&mut rng);
    let mut s = Session::new(&store, false);
    let vs: Vec<_> = feats.iter().map(|f| s.g.constant(f.clone())).collect();
    let m = sc.spatial_map(&mut s, vs[0]).unwrap();
    assert!(s.g.value(m).data().iter().all(|&v| v == 0.5));
    let maps = sc.channel_maps(&mut s, &vs).unwrap();
    assert!(maps.iter().all(|&a| s.g.value(a).data().iter().all(|&v| v == 0.5)));
    let bridged = sc.channel_attention_bridge(&mut s, &vs).unwrap();
    for (b, f) in bridged.iter().zip(&feats) {
        assert!(max_diff(s.g.value(*b).data(), &f.map(|v| 1.5 * v).into_data()) == 0.0);
    }
    for (o, f) in run_scab(&store, &sc, &feats).iter().zip(&feats) {
        assert!(max_diff(o.data(), &f.map(|v| 2.25 * v).into_data()) <= 1e-15);
    }
}

#[test]
fn scab_maps_are_open_unit_interval() {
    let (mut store, sc) = scab(&[4, 6, 8], 2);
    let mut rng = RngStream::new(3);
    randomize(&mut store, &mut rng, 2.0);
    let feats = stage_feats(&mut rng);
    let mut s = Session::new(&store, false);
    let vs: Vec<_> = feats.iter().map(|f| s.g.constant(f.clone())).collect();
    let mut all = Vec::new();
    for &v in &vs {
        let m = sc.spatial_map(&mut s, v).unwrap();
        all.extend(s.g.value(m).data().to_vec());
    }
    for a in sc.channel_maps(&mut s, &vs).unwrap() {
        all.extend(s.g.value(a).data().to_vec());
    }
    assert!(all.iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn scab_constant_input_gives_uniform_interior_map() {
    let (mut store, sc) = scab(&[4], 5);
    randomize(&mut store, &mut RngStream::new(6), 0.5);
    let (h, w) = (24, 24);
    let x = Tensor::from_fn(&[1, 4, h, w], |i| [0.3, -1.2, 2.0, 0.7][i / (h * w)]);
    let mut s = Session::new(&store, false);
    let xv = s.g.constant(x);
    let mx = s.g.channel_max(xv).unwrap();
    let av = s.g.channel_mean(xv).unwrap();
    assert!(s.g.value(mx).data().iter().all(|&v| v == 2.0));
    assert!(s.g.value(av).data().iter().all(|&v| (v - 0.45).abs() < 1e-15));
    let m = sc.spatial_map(&mut s, xv).unwrap();
    let md = s.g.value(m).data().to_vec();
    // Zero padding only affects positions within 9 of a border.
    let first = md[9 * w + 9];
    for i in 9..h - 9 {
        for j in 9..w - 9 {
            assert!((md[i * w + j] - first).abs() < 1e-15);
        }
    }
}

#[test]
fn scab_channel_gap_of_constant_channel() {
    let (store, sc) = scab(&[2], 0);
    let x = Tensor::from_fn(&[1, 2, 3, 3], |i| if i < 9 { 4.0 } else { -1.5 });
    let mut s = Session::new(&store, false);
    let xv = s.g.constant(x);
    let gap = s.g.global_avg_pool(xv).unwrap();
    assert_eq!(s.g.value(gap).data(), &[4.0, -1.5]);
    let err = sc.channel_maps(&mut s, &[xv, xv]).unwrap_err();
    assert!(matches!(err, CoreError::Config(_)));
}
