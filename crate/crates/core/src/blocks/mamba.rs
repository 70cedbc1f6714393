use xlm_tensor::{Float, Graph, Tensor, Var};

use crate::error::{config, CoreError, Result};
use crate::params::{Bound, Builder, ParamId};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MambaCfg {
    /// State size N.
    pub state: usize,
    /// Inner width E as a multiple of the model width.
    pub expand: usize,
    /// Causal depthwise conv length.
    pub conv: usize,
}

impl Default for MambaCfg {
    fn default() -> Self {
        Self { state: 8, expand: 1, conv: 4 }
    }
}

/// Gated selective state-space block over (B,L,C) sequences.
#[derive(Clone, Debug)]
pub struct Mamba {
    pub width: usize,
    pub inner: usize,
    pub cfg: MambaCfg,
    pub in_w: ParamId,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub dt_w: ParamId,
    pub dt_b: ParamId,
    pub b_w: ParamId,
    pub c_w: ParamId,
    pub log_a: ParamId,
    pub d: ParamId,
    pub out_w: ParamId,
}

const DT_MIN: f64 = 1e-3;
const DT_MAX: f64 = 1e-1;

impl Mamba {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, width: usize, cfg: MambaCfg) -> Result<Self> {
        if width == 0 || cfg.state == 0 || cfg.expand == 0 || cfg.conv == 0 {
            return config(format!("mamba sizes must be positive: width {width}, {cfg:?}"));
        }
        let (c, e, n, k) = (width, width * cfg.expand, cfg.state, cfg.conv);
        let in_w = b.uniform("in.w", &[2 * e, c], 1.0 / (c as f64).sqrt())?;
        let conv_w = b.uniform("conv.w", &[e, k], 1.0 / (k as f64).sqrt())?;
        let conv_b = b.uniform("conv.b", &[e], 1.0 / (k as f64).sqrt())?;
        let dt_w = b.uniform("dt.w", &[e, e], 1.0 / (e as f64).sqrt())?;
        // Step sizes start log-uniform in [DT_MIN, DT_MAX] through the
        // softplus inverse.
        let rng = b.rng();
        let dt_b = Tensor::from_fn(&[e], |_| {
            let dt = (rng.uniform() * (DT_MAX.ln() - DT_MIN.ln()) + DT_MIN.ln()).exp();
            T::c(dt + (-(-dt).exp_m1()).ln())
        });
        let dt_b = b.add("dt.b", dt_b, true)?;
        let b_w = b.uniform("B.w", &[n, e], 1.0 / (e as f64).sqrt())?;
        let c_w = b.uniform("C.w", &[n, e], 1.0 / (e as f64).sqrt())?;
        let log_a = b.add("log_A", Tensor::from_fn(&[e, n], |i| T::c(((i % n) + 1) as f64).ln()), true)?;
        let d = b.constant("D", &[e], 1.0)?;
        let out_w = b.uniform("out.w", &[c, e], 1.0 / (e as f64).sqrt())?;
        Ok(Self { width, inner: e, cfg, in_w, conv_w, conv_b, dt_w, dt_b, b_w, c_w, log_a, d, out_w })
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 3 || shape[2] != self.width {
            return Err(CoreError::Dimension(format!("mamba expects (B,L,{}), got {shape:?}", self.width)));
        }
        let e = self.inner;
        let xz = g.linear(x, p[self.in_w], None)?;
        let xa = g.narrow(xz, 2, 0, e)?;
        let z = g.narrow(xz, 2, e, e)?;
        let xc = g.causal_conv1d(xa, p[self.conv_w], Some(p[self.conv_b]))?;
        let xc = g.silu(xc);
        let dt = g.linear(xc, p[self.dt_w], Some(p[self.dt_b]))?;
        let dt = g.softplus(dt);
        let bm = g.linear(xc, p[self.b_w], None)?;
        let cm = g.linear(xc, p[self.c_w], None)?;
        let a = g.exp(p[self.log_a]);
        let a = g.neg(a);
        let y = g.selective_scan(dt, a, bm, cm, p[self.d], xc)?;
        let gate = g.silu(z);
        let y = g.mul(y, gate)?;
        Ok(g.linear(y, p[self.out_w], None)?)
    }
}
