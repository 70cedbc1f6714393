#![allow(dead_code)]

use xlm_core::params::{ParamStore, Session};
use xlm_core::Result;
use xlm_tensor::{relative_error, RngStream, Tensor, Var};

pub fn rand_tensor(shape: &[usize], rng: &mut RngStream, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform_range(-scale, scale))
}

/// Replaces every parameter (trainable or not, except fixed classifier
/// matrices) with uniform values in [-scale, scale].
pub fn randomize(store: &mut ParamStore<f64>, rng: &mut RngStream, scale: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if !store.get(id).trainable {
            continue;
        }
        let shape = store.value(id).shape().to_vec();
        store.set(id, rand_tensor(&shape, rng, scale)).unwrap();
    }
}

// Straight-line reference maths on flat f64 slices.

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `w (out,in) * x (in)`, plus bias.
pub fn matvec(w: &[f64], x: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let n = x.len();
    (0..w.len() / n).map(|o| (0..n).map(|i| w[o * n + i] * x[i]).sum::<f64>() + b.map_or(0.0, |b| b[o])).collect()
}

pub fn layer_norm(x: &[f64], g: &[f64], b: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter().enumerate().map(|(i, v)| (v - mean) / (var + eps).sqrt() * g[i] + b[i]).collect()
}

/// Reduces an output to a scalar with fixed random weights.
pub fn weighted_sum(s: &mut Session<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = s.g.shape(out).to_vec();
    let mut rng = RngStream::new(seed ^ 0xABCD);
    let r = s.g.constant(rand_tensor(&shape, &mut rng, 1.0));
    let p = s.g.mul(out, r)?;
    Ok(s.g.sum(p))
}

/// Relative error, treating absolute agreement below round-off as exact.
pub fn grad_error(analytic: f64, numeric: f64) -> f64 {
    if (analytic - numeric).abs() <= ABS_FLOOR {
        0.0
    } else {
        relative_error(analytic, numeric)
    }
}

pub const ABS_FLOOR: f64 = 1e-9;

/// Five-point derivative estimate at offset 0.
pub fn stencil(h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h)
}

/// Five-point finite-difference check of a block over every trainable parameter and
/// every input element; returns the largest relative error.
pub fn block_gradcheck<F>(store: &ParamStore<f64>, inputs: &[Tensor<f64>], seed: u64, h: f64, f: F) -> f64
where
    F: Fn(&mut Session<f64>, &[Var]) -> Result<Var>,
{
    let eval = |st: &ParamStore<f64>, xs: &[Tensor<f64>]| -> f64 {
        let mut s = Session::new(st, false);
        let vs: Vec<Var> = xs.iter().map(|t| s.g.constant(t.clone())).collect();
        let out = f(&mut s, &vs).unwrap();
        let l = weighted_sum(&mut s, out, seed).unwrap();
        s.g.value(l).item()
    };
    let mut s = Session::new(store, true);
    let vs: Vec<Var> = inputs.iter().map(|t| s.g.leaf(t.clone(), true)).collect();
    let out = f(&mut s, &vs).unwrap();
    let loss = weighted_sum(&mut s, out, seed).unwrap();
    let (grads, per) = s.param_grads(store, loss).unwrap();
    let mut worst = 0.0f64;
    let mut probe = store.clone();
    for (id, g) in store.ids().zip(&per) {
        let Some(g) = g else { continue };
        for i in 0..g.numel() {
            let orig = store.value(id).data()[i];
            let num = stencil(h, |d| {
                probe.value_mut(id).data_mut()[i] = orig + d;
                eval(&probe, inputs)
            });
            probe.value_mut(id).data_mut()[i] = orig;
            worst = worst.max(grad_error(g.data()[i], num));
        }
    }
    let mut xs = inputs.to_vec();
    for (k, v) in vs.iter().enumerate() {
        let g = grads.wrt(*v);
        for i in 0..g.numel() {
            let orig = inputs[k].data()[i];
            let num = stencil(h, |d| {
                xs[k].data_mut()[i] = orig + d;
                eval(store, &xs)
            });
            xs[k].data_mut()[i] = orig;
            worst = worst.max(grad_error(g.data()[i], num));
        }
    }
    worst
}
