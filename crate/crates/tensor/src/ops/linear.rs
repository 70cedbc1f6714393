use crate::error::{dim_err, Result};
use crate::float::Float;
use crate::graph::{Accum, Graph, Op, Var};
use crate::tensor::Tensor;

/// `y = x·wᵀ + b` over the last axis; leading axes are treated as a batch.
pub fn linear_forward<T: Float>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    if w.rank() != 2 {
        return dim_err(format!("linear weight must be (Fout, Fin), got {:?}", w.shape()));
    }
    let (fout, fin) = (w.shape()[0], w.shape()[1]);
    let xs = x.shape();
    if xs.last() != Some(&fin) {
        return dim_err(format!("linear: input {xs:?} last axis does not match Fin={fin}"));
    }
    if let Some(bias) = b {
        if bias.shape() != [fout] {
            return dim_err(format!("bias shape {:?}, expected [{fout}]", bias.shape()));
        }
    }
    let rows = x.numel() / fin;
    let (xd, wd) = (x.data(), w.data());
    let mut out = Vec::with_capacity(rows * fout);
    for r in 0..rows {
        let xr = &xd[r * fin..][..fin];
        for o in 0..fout {
            let wr = &wd[o * fin..][..fin];
            let mut s = b.map_or(T::zero(), |bb| bb.data()[o]);
            for (a, c) in xr.iter().zip(wr) {
                s += *a * *c;
            }
            out.push(s);
        }
    }
    let mut shape = xs.to_vec();
    *shape.last_mut().expect("rank >= 1") = fout;
    Tensor::new(&shape, out)
}

pub(crate) fn linear_backward<T: Float>(
    gr: &Graph<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    g: &[T],
    acc: &mut Accum<'_, T>,
) {
    let xv = gr.value(x);
    let wv = gr.value(w);
    let (fout, fin) = (wv.shape()[0], wv.shape()[1]);
    let rows = xv.numel() / fin;
    if let Some(bv) = b {
        acc.add_with(bv, |d| {
            for r in 0..rows {
                for (o, &gi) in d.iter_mut().zip(&g[r * fout..][..fout]) {
                    *o += gi;
                }
            }
        });
    }
    let (xd, wd) = (xv.data(), wv.data());
    acc.add_with(x, |d| {
        for r in 0..rows {
            let dr = &mut d[r * fin..][..fin];
            for o in 0..fout {
                let gi = g[r * fout + o];
                if gi == T::zero() {
                    continue;
                }
                for (a, &c) in dr.iter_mut().zip(&wd[o * fin..][..fin]) {
                    *a += gi * c;
                }
            }
        }
    });
    acc.add_with(w, |d| {
        for r in 0..rows {
            let xr = &xd[r * fin..][..fin];
            for o in 0..fout {
                let gi = g[r * fout + o];
                if gi == T::zero() {
                    continue;
                }
                for (a, &c) in d[o * fin..][..fin].iter_mut().zip(xr) {
                    *a += gi * c;
                }
            }
        }
    });
}

impl<T: Float> Graph<T> {
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = linear_forward(self.value(x), self.value(w), b.map(|v| self.value(v)))?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Linear { x, w, b }, &inputs))
    }
}
