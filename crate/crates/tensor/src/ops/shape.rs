use crate::error::{config_err, dim_err, Result};
use crate::float::Float;
use crate::graph::{Accum, Graph, Op, Var};
use crate::tensor::{check_permutation, inverse_permutation, Tensor};

/// (outer, axis length, inner) factorisation of a shape around `axis`.
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn permute_backward<T: Float>(
    gr: &Graph<T>,
    x: Var,
    order: &[usize],
    y: &Tensor<T>,
    g: &[T],
    acc: &mut Accum<'_, T>,
) {
    let gt = Tensor::new(y.shape(), g.to_vec()).expect("shape");
    let back = gt.permute(&inverse_permutation(order)).expect("valid permutation");
    debug_assert_eq!(back.shape(), gr.shape(x));
    acc.add_slice(x, back.data());
}

pub(crate) fn narrow_backward<T: Float>(
    gr: &Graph<T>,
    x: Var,
    axis: usize,
    start: usize,
    y: &Tensor<T>,
    g: &[T],
    acc: &mut Accum<'_, T>,
) {
    let (outer, full, inner) = around(gr.shape(x), axis);
    let len = y.shape()[axis];
    acc.add_with(x, |d| {
        for o in 0..outer {
            let src = &g[o * len * inner..(o + 1) * len * inner];
            let dst = &mut d[(o * full + start) * inner..(o * full + start + len) * inner];
            for (a, &b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    });
}

pub(crate) fn concat_backward<T: Float>(
    gr: &Graph<T>,
    xs: &[Var],
    axis: usize,
    y: &Tensor<T>,
    g: &[T],
    acc: &mut Accum<'_, T>,
) {
    let (outer, total, inner) = around(y.shape(), axis);
    let mut offset = 0;
    for &x in xs {
        let len = gr.shape(x)[axis];
        acc.add_with(x, |d| {
            for o in 0..outer {
                let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                let dst = &mut d[o * len * inner..(o + 1) * len * inner];
                for (a, &b) in dst.iter_mut().zip(src) {
                    *a += b;
                }
            }
        });
        offset += len;
    }
}

pub(crate) fn pad2d_backward<T: Float>(
    gr: &Graph<T>,
    x: Var,
    pads: [usize; 4],
    y: &Tensor<T>,
    g: &[T],
    acc: &mut Accum<'_, T>,
) {
    let s = gr.shape(x);
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let (oh, ow) = (y.shape()[2], y.shape()[3]);
    let [top, _, left, _] = pads;
    acc.add_with(x, |d| {
        for p in 0..planes {
            for i in 0..h {
                for j in 0..w {
                    d[(p * h + i) * w + j] += g[(p * oh + i + top) * ow + j + left];
                }
            }
        }
    });
}

impl<T: Float> Graph<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn permute(&mut self, x: Var, order: &[usize]) -> Result<Var> {
        check_permutation(order, self.value(x).rank())?;
        let out = self.value(x).permute(order)?;
        Ok(self.push(out, Op::Permute(x, order.to_vec()), &[x]))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return dim_err(format!("axis {axis} out of range for {shape:?}"));
        }
        if len == 0 || start + len > shape[axis] {
            return dim_err(format!("narrow [{start}, {}) exceeds axis {axis} of {shape:?}", start + len));
        }
        let (outer, full, inner) = around(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&src[(o * full + start) * inner..(o * full + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(out, Op::Narrow { x, axis, start }, &[x]))
    }

    /// Splits `axis` into `n` equal contiguous groups, in order.
    pub fn split(&mut self, x: Var, axis: usize, n: usize) -> Result<Vec<Var>> {
        let size = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| crate::TensorError::Dimension(format!("axis {axis} out of range")))?;
        if n == 0 || size % n != 0 {
            return config_err(format!("axis of length {size} cannot be split into {n} equal groups"));
        }
        let len = size / n;
        (0..n).map(|i| self.narrow(x, axis, i * len, len)).collect()
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return dim_err("concat of an empty list");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return dim_err(format!("axis {axis} out of range for {base:?}"));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return dim_err(format!("concat along {axis}: {s:?} does not match {base:?}"));
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = around(&out_shape, axis);
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis];
                let src = self.value(x).data();
                data.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(out, Op::Concat { xs: xs.to_vec(), axis }, xs))
    }

    /// Splits (B, C, H, W) into `n` contiguous channel groups.
    pub fn split_channels(&mut self, x: Var, n: usize) -> Result<Vec<Var>> {
        if self.value(x).rank() != 4 {
            return dim_err(format!("split_channels expects (B,C,H,W), got {:?}", self.shape(x)));
        }
        self.split(x, 1, n)
    }

    /// Concatenates (B, Ci, H, W) tensors along channels in list order.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        for &x in xs {
            if self.value(x).rank() != 4 {
                return dim_err(format!("concat_channels expects (B,C,H,W), got {:?}", self.shape(x)));
            }
        }
        self.concat(xs, 1)
    }

    /// Zero padding of a (B, C, H, W) tensor: `[top, bottom, left, right]`.
    pub fn pad2d(&mut self, x: Var, pads: [usize; 4]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return dim_err(format!("pad2d expects (B,C,H,W), got {s:?}"));
        }
        let [top, bottom, left, right] = pads;
        let (h, w) = (s[2], s[3]);
        let (oh, ow) = (h + top + bottom, w + left + right);
        let src = self.value(x).data();
        let mut data = vec![T::zero(); s[0] * s[1] * oh * ow];
        for p in 0..s[0] * s[1] {
            for i in 0..h {
                let dst = (p * oh + i + top) * ow + left;
                data[dst..dst + w].copy_from_slice(&src[(p * h + i) * w..(p * h + i + 1) * w]);
            }
        }
        let out = Tensor::new(&[s[0], s[1], oh, ow], data)?;
        Ok(self.push(out, Op::Pad2d { x, pads }, &[x]))
    }
}
