use crate::error::{config_err, dim_err, Result};
use crate::float::Float;
use crate::graph::{Accum, Graph, Op, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    /// Average over bins `[floor(i*H/oh), ceil((i+1)*H/oh))`; output (B,C,oh,ow).
    AdaptiveAvg { oh: usize, ow: usize },
    /// Spatial mean, output (B,C).
    GlobalAvg,
    /// Max over channels, output (B,1,H,W).
    ChannelMax,
    /// Mean over channels, output (B,1,H,W).
    ChannelAvg,
}

fn bin(i: usize, n: usize, out: usize) -> (usize, usize) {
    (i * n / out, ((i + 1) * n).div_ceil(out))
}

fn dims4<T: Float>(x: &Tensor<T>) -> Result<[usize; 4]> {
    match x.shape() {
        &[b, c, h, w] => Ok([b, c, h, w]),
        s => dim_err(format!("pooling expects (B,C,H,W), got {s:?}")),
    }
}

/// Returns the pooled tensor and, for channel max, the winning channel per
/// output element.
pub fn pool_forward<T: Float>(x: &Tensor<T>, kind: PoolKind) -> Result<(Tensor<T>, Vec<u32>)> {
    let [b, c, h, w] = dims4(x)?;
    let xd = x.data();
    let hw = h * w;
    match kind {
        PoolKind::AdaptiveAvg { oh, ow } => {
            if oh == 0 || ow == 0 || oh > h || ow > w {
                return config_err(format!("adaptive pool output {oh}x{ow} does not fit input {h}x{w}"));
            }
            let mut out = Vec::with_capacity(b * c * oh * ow);
            for bc in 0..b * c {
                let plane = &xd[bc * hw..][..hw];
                for i in 0..oh {
                    let (h0, h1) = bin(i, h, oh);
                    for j in 0..ow {
                        let (w0, w1) = bin(j, w, ow);
                        let mut s = T::zero();
                        for y in h0..h1 {
                            for v in &plane[y * w + w0..y * w + w1] {
                                s += *v;
                            }
                        }
                        out.push(s / T::c(((h1 - h0) * (w1 - w0)) as f64));
                    }
                }
            }
            Ok((Tensor::new(&[b, c, oh, ow], out)?, Vec::new()))
        }
        PoolKind::GlobalAvg => {
            let n = T::c(hw as f64);
            let out = (0..b * c).map(|bc| xd[bc * hw..][..hw].iter().copied().sum::<T>() / n).collect();
            Ok((Tensor::new(&[b, c], out)?, Vec::new()))
        }
        PoolKind::ChannelMax => {
            let mut out = vec![T::neg_infinity(); b * hw];
            let mut arg = vec![0u32; b * hw];
            for bi in 0..b {
                for ci in 0..c {
                    let plane = &xd[(bi * c + ci) * hw..][..hw];
                    for p in 0..hw {
                        if plane[p] > out[bi * hw + p] {
                            out[bi * hw + p] = plane[p];
                            arg[bi * hw + p] = ci as u32;
                        }
                    }
                }
            }
            Ok((Tensor::new(&[b, 1, h, w], out)?, arg))
        }
        PoolKind::ChannelAvg => {
            let mut out = vec![T::zero(); b * hw];
            let n = T::c(c as f64);
            for bi in 0..b {
                for ci in 0..c {
                    let plane = &xd[(bi * c + ci) * hw..][..hw];
                    for p in 0..hw {
                        out[bi * hw + p] += plane[p];
                    }
                }
            }
            for o in &mut out {
                *o /= n;
            }
            Ok((Tensor::new(&[b, 1, h, w], out)?, Vec::new()))
        }
    }
}

pub(crate) fn pool_backward<T: Float>(
    gr: &Graph<T>,
    x: Var,
    kind: PoolKind,
    argmax: &[u32],
    g: &[T],
    acc: &mut Accum<'_, T>,
) {
    let s = gr.value(x).shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let hw = h * w;
    acc.add_with(x, |d| match kind {
        PoolKind::AdaptiveAvg { oh, ow } => {
            for bc in 0..b * c {
                for i in 0..oh {
                    let (h0, h1) = bin(i, h, oh);
                    for j in 0..ow {
                        let (w0, w1) = bin(j, w, ow);
                        let gv = g[(bc * oh + i) * ow + j] / T::c(((h1 - h0) * (w1 - w0)) as f64);
                        for y in h0..h1 {
                            for o in &mut d[bc * hw + y * w + w0..bc * hw + y * w + w1] {
                                *o += gv;
                            }
                        }
                    }
                }
            }
        }
        PoolKind::GlobalAvg => {
            let n = T::c(hw as f64);
            for bc in 0..b * c {
                let gv = g[bc] / n;
                for o in &mut d[bc * hw..][..hw] {
                    *o += gv;
                }
            }
        }
        PoolKind::ChannelMax => {
            for bi in 0..b {
                for p in 0..hw {
                    let ci = argmax[bi * hw + p] as usize;
                    d[(bi * c + ci) * hw + p] += g[bi * hw + p];
                }
            }
        }
        PoolKind::ChannelAvg => {
            let n = T::c(c as f64);
            for bi in 0..b {
                for ci in 0..c {
                    for p in 0..hw {
                        d[(bi * c + ci) * hw + p] += g[bi * hw + p] / n;
                    }
                }
            }
        }
    });
}

impl<T: Float> Graph<T> {
    pub fn pool(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let (out, argmax) = pool_forward(self.value(x), kind)?;
        Ok(self.push(out, Op::Pool { x, kind, argmax }, &[x]))
    }

    pub fn adaptive_avg_pool2d(&mut self, x: Var, out_hw: (usize, usize)) -> Result<Var> {
        self.pool(x, PoolKind::AdaptiveAvg { oh: out_hw.0, ow: out_hw.1 })
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.pool(x, PoolKind::GlobalAvg)
    }

    pub fn channel_max(&mut self, x: Var) -> Result<Var> {
        self.pool(x, PoolKind::ChannelMax)
    }

    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        self.pool(x, PoolKind::ChannelAvg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_pool_unequal_bins() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 1, 3], &[1.0, 2.0, 4.0]).unwrap();
        let (y, _) = pool_forward(&x, PoolKind::AdaptiveAvg { oh: 1, ow: 2 }).unwrap();
        // bins [0,2) and [1,3)
        assert_eq!(y.data(), &[1.5, 3.0]);
    }

    #[test]
    fn adaptive_pool_larger_than_input_is_config_error() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        assert!(matches!(pool_forward(&x, PoolKind::AdaptiveAvg { oh: 3, ow: 1 }), Err(crate::TensorError::Config(_))));
    }

    #[test]
    fn channel_reductions() {
        let x = Tensor::<f64>::from_f64(&[1, 2, 1, 2], &[1.0, 5.0, 3.0, -1.0]).unwrap();
        let (m, arg) = pool_forward(&x, PoolKind::ChannelMax).unwrap();
        assert_eq!(m.data(), &[3.0, 5.0]);
        assert_eq!(arg, vec![1, 0]);
        let (a, _) = pool_forward(&x, PoolKind::ChannelAvg).unwrap();
        assert_eq!(a.data(), &[2.0, 2.0]);
        let (gap, _) = pool_forward(&x, PoolKind::GlobalAvg).unwrap();
        assert_eq!(gap.shape(), &[1, 2]);
        assert_eq!(gap.data(), &[3.0, 1.0]);
    }
}
