//! Fused selective state-space scan.
//!
//! Discretisation happens inside the kernel: with `dA = exp(delta * A)`,
//! `h_t = dA * h_{t-1} + delta * B_t * x_t` and `y_t = C_t . h_t + D * x_t`.
//! All hidden states are kept for the adjoint sweep, so memory is
//! `B * L * E * N` and linear in sequence length.

use crate::error::{dim_err, Result};
use crate::float::Float;
use crate::graph::{Accum, Graph, Op, Var};
use crate::tensor::Tensor;

struct Dims {
    b: usize,
    l: usize,
    e: usize,
    n: usize,
}

fn dims<T: Float>(
    delta: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    c: &Tensor<T>,
    d: &Tensor<T>,
    x: &Tensor<T>,
) -> Result<Dims> {
    let &[bs, l, e] = x.shape() else {
        return dim_err(format!("scan input must be (B,L,E), got {:?}", x.shape()));
    };
    let &[ea, n] = a.shape() else {
        return dim_err(format!("scan A must be (E,N), got {:?}", a.shape()));
    };
    if delta.shape() != x.shape() {
        return dim_err(format!("scan delta {:?} vs input {:?}", delta.shape(), x.shape()));
    }
    if ea != e || d.shape() != [e] {
        return dim_err(format!("scan A {:?} / D {:?} do not match E={e}", a.shape(), d.shape()));
    }
    if b.shape() != [bs, l, n] || c.shape() != [bs, l, n] {
        return dim_err(format!("scan B {:?} / C {:?}, expected [{bs}, {l}, {n}]", b.shape(), c.shape()));
    }
    Ok(Dims { b: bs, l, e, n })
}

/// Runs the scan; returns `y` of shape (B,L,E) and the hidden states laid
/// out as `[b][t][e][n]`.
pub fn selective_scan_forward<T: Float>(
    delta: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    c: &Tensor<T>,
    d: &Tensor<T>,
    x: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    let Dims { b: bs, l, e, n } = dims(delta, a, b, c, d, x)?;
    let (dd, ad, bd, cd, dv, xd) = (delta.data(), a.data(), b.data(), c.data(), d.data(), x.data());
    let mut y = vec![T::zero(); bs * l * e];
    let mut states = vec![T::zero(); bs * l * e * n];
    // Time-outer so every buffer is walked sequentially.
    let mut h = vec![T::zero(); e * n];
    for bi in 0..bs {
        h.iter_mut().for_each(|v| *v = T::zero());
        for t in 0..l {
            let r = (bi * l + t) * n;
            let (brow, crow) = (&bd[r..][..n], &cd[r..][..n]);
            for ei in 0..e {
                let k = (bi * l + t) * e + ei;
                let (dt, xv) = (dd[k], xd[k]);
                let arow = &ad[ei * n..][..n];
                let hs = &mut h[ei * n..][..n];
                let mut acc = dv[ei] * xv;
                let dx = dt * xv;
                for j in 0..n {
                    hs[j] = (dt * arow[j]).exp() * hs[j] + dx * brow[j];
                    acc += crow[j] * hs[j];
                }
                y[k] = acc;
                states[k * n..][..n].copy_from_slice(hs);
            }
        }
    }
    Ok((Tensor::new(&[bs, l, e], y)?, states))
}

pub(crate) fn selective_scan_backward<T: Float>(
    gr: &Graph<T>,
    inputs: &[Var; 6],
    states: &[T],
    g: &[T],
    acc: &mut Accum<'_, T>,
) {
    let [delta, a, b, c, d, x] = *inputs;
    let (dd, ad, bd, cd, dv, xd) = (
        gr.value(delta).data(),
        gr.value(a).data(),
        gr.value(b).data(),
        gr.value(c).data(),
        gr.value(d).data(),
        gr.value(x).data(),
    );
    let s = gr.value(x).shape();
    let (bs, l, e) = (s[0], s[1], s[2]);
    let n = gr.value(a).shape()[1];
    let mut gdelta = vec![T::zero(); dd.len()];
    let mut ga = vec![T::zero(); ad.len()];
    let mut gb = vec![T::zero(); bd.len()];
    let mut gc = vec![T::zero(); cd.len()];
    let mut gd = vec![T::zero(); dv.len()];
    let mut gx = vec![T::zero(); xd.len()];
    let mut gh = vec![T::zero(); e * n];
    for bi in 0..bs {
        gh.iter_mut().for_each(|v| *v = T::zero());
        for t in (0..l).rev() {
            let r = (bi * l + t) * n;
            for ei in 0..e {
                let k = (bi * l + t) * e + ei;
                let (dt, xv, gy) = (dd[k], xd[k], g[k]);
                let arow = &ad[ei * n..][..n];
                let h = &states[k * n..][..n];
                gd[ei] += gy * xv;
                let mut gxk = gy * dv[ei];
                let mut gdt = T::zero();
                for j in 0..n {
                    let q = ei * n + j;
                    gc[r + j] += gy * h[j];
                    gh[q] += gy * cd[r + j];
                    let da = (dt * arow[j]).exp();
                    let hp = if t > 0 { states[(k - e) * n + j] } else { T::zero() };
                    let ghj = gh[q];
                    gdt += ghj * (arow[j] * da * hp + bd[r + j] * xv);
                    ga[q] += ghj * dt * da * hp;
                    gb[r + j] += ghj * dt * xv;
                    gxk += ghj * dt * bd[r + j];
                    gh[q] = ghj * da;
                }
                gdelta[k] += gdt;
                gx[k] += gxk;
            }
        }
    }
    acc.add_slice(delta, &gdelta);
    acc.add_slice(a, &ga);
    acc.add_slice(b, &gb);
    acc.add_slice(c, &gc);
    acc.add_slice(d, &gd);
    acc.add_slice(x, &gx);
}

impl<T: Float> Graph<T> {
    /// Selective scan with input-dependent step `delta` (B,L,E), state
    /// matrix `a` (E,N), input/output projections `b`,`c` (B,L,N), skip `d`
    /// (E) and input `x` (B,L,E).
    pub fn selective_scan(&mut self, delta: Var, a: Var, b: Var, c: Var, d: Var, x: Var) -> Result<Var> {
        let (y, states) = selective_scan_forward(
            self.value(delta),
            self.value(a),
            self.value(b),
            self.value(c),
            self.value(d),
            self.value(x),
        )?;
        let inputs = [delta, a, b, c, d, x];
        Ok(self.push(y, Op::SelectiveScan { inputs, states }, &inputs))
    }
}
