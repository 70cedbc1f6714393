use crate::error::{dim_err, Result};
use crate::float::Float;
use crate::graph::{Accum, Graph, Op, Var};
use crate::tensor::Tensor;

fn last_axis<T: Float>(x: &Tensor<T>) -> Result<(usize, usize)> {
    let c = *x.shape().last().unwrap_or(&0);
    if c == 0 {
        return dim_err("normalisation over an empty last axis");
    }
    Ok((x.numel() / c, c))
}

/// Layer normalisation over the last axis; returns output, means and
/// reciprocal standard deviations.
pub fn layer_norm_forward<T: Float>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let (rows, c) = last_axis(x)?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return dim_err(format!("layer_norm affine shapes {:?}/{:?}, expected [{c}]", gamma.shape(), beta.shape()));
    }
    let inv_c = T::one() / T::c(c as f64);
    let (xd, gd, bd) = (x.data(), gamma.data(), beta.data());
    let mut out = Vec::with_capacity(x.numel());
    let mut means = Vec::with_capacity(rows);
    let mut rstds = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &xd[r * c..][..c];
        let mean = row.iter().copied().sum::<T>() * inv_c;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
        let rstd = T::one() / (var + eps).sqrt();
        for i in 0..c {
            out.push((row[i] - mean) * rstd * gd[i] + bd[i]);
        }
        means.push(mean);
        rstds.push(rstd);
    }
    Ok((Tensor::new(x.shape(), out)?, means, rstds))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_backward<T: Float>(
    gr: &Graph<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    mean: &[T],
    rstd: &[T],
    g: &[T],
    acc: &mut Accum<'_, T>,
) {
    let xv = gr.value(x);
    let c = *xv.shape().last().expect("rank >= 1");
    let rows = xv.numel() / c;
    let (xd, gd) = (xv.data(), gr.value(gamma).data());
    let inv_c = T::one() / T::c(c as f64);
    acc.add_with(beta, |d| {
        for r in 0..rows {
            for i in 0..c {
                d[i] += g[r * c + i];
            }
        }
    });
    acc.add_with(gamma, |d| {
        for r in 0..rows {
            for i in 0..c {
                d[i] += g[r * c + i] * (xd[r * c + i] - mean[r]) * rstd[r];
            }
        }
    });
    acc.add_with(x, |d| {
        let mut gxhat = vec![T::zero(); c];
        for r in 0..rows {
            let mut s1 = T::zero();
            let mut s2 = T::zero();
            for i in 0..c {
                let xhat = (xd[r * c + i] - mean[r]) * rstd[r];
                gxhat[i] = g[r * c + i] * gd[i];
                s1 += gxhat[i];
                s2 += gxhat[i] * xhat;
            }
            for i in 0..c {
                let xhat = (xd[r * c + i] - mean[r]) * rstd[r];
                d[r * c + i] += rstd[r] * (gxhat[i] - s1 * inv_c - xhat * s2 * inv_c);
            }
        }
    });
}

pub fn softmax_forward<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, c) = last_axis(x)?;
    let xd = x.data();
    let mut out = Vec::with_capacity(x.numel());
    for r in 0..rows {
        let row = &xd[r * c..][..c];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut z = T::zero();
        for &v in row {
            let e = (v - m).exp();
            z += e;
            out.push(e);
        }
        for o in &mut out[start..] {
            *o /= z;
        }
    }
    Tensor::new(x.shape(), out)
}

pub(crate) fn softmax_backward<T: Float>(x: Var, y: &Tensor<T>, g: &[T], acc: &mut Accum<'_, T>) {
    let c = *y.shape().last().expect("rank >= 1");
    let yd = y.data();
    acc.add_with(x, |d| {
        for r in 0..yd.len() / c {
            let yr = &yd[r * c..][..c];
            let gr = &g[r * c..][..c];
            let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
            for i in 0..c {
                d[r * c + i] += yr[i] * (gr[i] - dot);
            }
        }
    });
}

/// Scales each last-axis vector to unit L2 norm; all-zero vectors pass
/// through unchanged.
pub fn l2_normalize_forward<T: Float>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
    let (rows, c) = last_axis(x)?;
    let xd = x.data();
    let mut out = Vec::with_capacity(x.numel());
    let mut norms = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &xd[r * c..][..c];
        let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        let scale = if n > T::zero() { T::one() / n } else { T::one() };
        out.extend(row.iter().map(|&v| v * scale));
        norms.push(n);
    }
    Ok((Tensor::new(x.shape(), out)?, norms))
}

pub(crate) fn l2_normalize_backward<T: Float>(x: Var, norms: &[T], y: &Tensor<T>, g: &[T], acc: &mut Accum<'_, T>) {
    let c = *y.shape().last().expect("rank >= 1");
    let yd = y.data();
    acc.add_with(x, |d| {
        for (r, &n) in norms.iter().enumerate() {
            let yr = &yd[r * c..][..c];
            let gr = &g[r * c..][..c];
            if n > T::zero() {
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for i in 0..c {
                    d[r * c + i] += (gr[i] - yr[i] * dot) / n;
                }
            } else {
                for i in 0..c {
                    d[r * c + i] += gr[i];
                }
            }
        }
    });
}

impl<T: Float> Graph<T> {
    /// Layer normalisation over the last (channel) axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (out, mean, rstd) = layer_norm_forward(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(out, Op::LayerNorm { x, g: gamma, b: beta, mean, rstd }, &[x, gamma, beta]))
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = softmax_forward(self.value(x))?;
        Ok(self.push(out, Op::Softmax(x), &[x]))
    }

    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let (out, norms) = l2_normalize_forward(self.value(x))?;
        Ok(self.push(out, Op::L2Normalize { x, norms }, &[x]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_norm_constant_and_unit_inputs() {
        let ones = Tensor::<f64>::ones(&[2]);
        let zeros = Tensor::<f64>::zeros(&[2]);
        let x = Tensor::full(&[3, 2], 4.0);
        let (y, _, _) = layer_norm_forward(&x, &ones, &zeros, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let x = Tensor::from_f64(&[1, 2], &[1.0, -1.0]).unwrap();
        let (y, _, _) = layer_norm_forward(&x, &ones, &zeros, 0.0).unwrap();
        assert_eq!(y.data(), &[1.0, -1.0]);
    }

    #[test]
    fn softmax_fixed_values() {
        let x = Tensor::<f64>::from_f64(&[2, 2], &[0.0, 0.0, 2f64.ln(), 0.0]).unwrap();
        let y = softmax_forward(&x).unwrap();
        assert_eq!(&y.data()[..2], &[0.5, 0.5]);
        assert!((y.data()[2] - 2.0 / 3.0).abs() < 1e-15);
        assert!((y.data()[3] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn l2_normalize_bypasses_zero_vectors() {
        let x = Tensor::<f64>::from_f64(&[2, 2], &[3.0, 4.0, 0.0, 0.0]).unwrap();
        let (y, _) = l2_normalize_forward(&x).unwrap();
        let want = [0.6, 0.8, 0.0, 0.0];
        assert!(y.data().iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15));
    }
}
