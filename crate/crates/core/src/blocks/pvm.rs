use xlm_tensor::{Float, Var};

use super::{Mamba, MambaCfg, LN_EPS};
use crate::error::{config, CoreError, Result};
use crate::params::{Builder, ParamId, Session};

pub const BRANCHES: usize = 4;

/// Parallel vision Mamba layer: norm, four-way channel split through one
/// Mamba with a theta-scaled skip, concat, norm, projection.
///
/// The four branches share a single Mamba parameter set.
#[derive(Clone, Debug)]
pub struct Pvm {
    pub channels: usize,
    pub norm1_g: ParamId,
    pub norm1_b: ParamId,
    pub mamba: Mamba,
    pub theta: ParamId,
    pub norm2_g: ParamId,
    pub norm2_b: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
}

impl Pvm {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, channels: usize, mcfg: MambaCfg) -> Result<Self> {
        if channels == 0 || !channels.is_multiple_of(BRANCHES) {
            return config(format!("PVM channels {channels} not divisible by {BRANCHES}"));
        }
        let c = channels;
        Ok(Self {
            channels,
            norm1_g: b.constant("norm1.g", &[c], 1.0)?,
            norm1_b: b.constant("norm1.b", &[c], 0.0)?,
            mamba: Mamba::new(&mut b.scope("mamba"), c / BRANCHES, mcfg)?,
            theta: b.constant("theta", &[1], 1.0)?,
            norm2_g: b.constant("norm2.g", &[c], 1.0)?,
            norm2_b: b.constant("norm2.b", &[c], 0.0)?,
            proj_w: b.uniform("proj.w", &[c, c], 1.0 / (c as f64).sqrt())?,
            proj_b: b.uniform("proj.b", &[c], 1.0 / (c as f64).sqrt())?,
        })
    }

    /// (B,C,H,W) in and out; positions are scanned in row-major order.
    pub fn forward<T: Float>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let shape = s.g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(CoreError::Dimension(format!("PVM expects (B,{},H,W), got {shape:?}", self.channels)));
        }
        let (bs, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let (g, p) = s.split();
        let seq = g.permute(x, &[0, 2, 3, 1])?;
        let seq = g.reshape(seq, &[bs, h * w, c])?;
        let seq = g.layer_norm(seq, p[self.norm1_g], p[self.norm1_b], T::c(LN_EPS))?;
        // The shared Mamba runs once over the branches stacked on the batch axis.
        let parts = g.split(seq, 2, BRANCHES)?;
        let stacked = g.concat(&parts, 0)?;
        let m = self.mamba.forward(g, p, stacked)?;
        let skip = g.mul(stacked, p[self.theta])?;
        let vm = g.add(m, skip)?;
        let branches = g.split(vm, 0, BRANCHES)?;
        let y = g.concat(&branches, 2)?;
        let y = g.layer_norm(y, p[self.norm2_g], p[self.norm2_b], T::c(LN_EPS))?;
        let y = g.linear(y, p[self.proj_w], Some(p[self.proj_b]))?;
        let y = g.reshape(y, &[bs, h, w, c])?;
        Ok(g.permute(y, &[0, 3, 1, 2])?)
    }
}
