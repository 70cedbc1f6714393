use xlm_tensor::{Conv2dCfg, Float, RngStream, Var};

use super::{drop_path, LN_EPS};
use crate::error::{config, CoreError, Result};
use crate::params::{Builder, ParamId, Session};

pub const GAMMA_SCALE_INIT: f64 = 1e-6;

/// Depthwise 7x7 conv, channel-last layer norm, 4x MLP with GELU, per-channel
/// scale, stochastic depth, residual.
#[derive(Clone, Debug)]
pub struct ConvNextBlock {
    pub channels: usize,
    pub dw_w: ParamId,
    pub dw_b: ParamId,
    pub norm_g: ParamId,
    pub norm_b: ParamId,
    pub fc1_w: ParamId,
    pub fc1_b: ParamId,
    pub fc2_w: ParamId,
    pub fc2_b: ParamId,
    pub gamma_scale: ParamId,
    pub drop_path: f64,
}

impl ConvNextBlock {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, channels: usize, drop_path: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&drop_path) {
            return config(format!("drop_path rate {drop_path} outside [0,1)"));
        }
        let c = channels;
        let hidden = 4 * c;
        let dw_bound = 1.0 / 49f64.sqrt();
        Ok(Self {
            channels,
            dw_w: b.uniform("dw.w", &[c, 1, 7, 7], dw_bound)?,
            dw_b: b.uniform("dw.b", &[c], dw_bound)?,
            norm_g: b.constant("norm.g", &[c], 1.0)?,
            norm_b: b.constant("norm.b", &[c], 0.0)?,
            fc1_w: b.uniform("fc1.w", &[hidden, c], 1.0 / (c as f64).sqrt())?,
            fc1_b: b.uniform("fc1.b", &[hidden], 1.0 / (c as f64).sqrt())?,
            fc2_w: b.uniform("fc2.w", &[c, hidden], 1.0 / (hidden as f64).sqrt())?,
            fc2_b: b.uniform("fc2.b", &[c], 1.0 / (hidden as f64).sqrt())?,
            gamma_scale: b.constant("gamma", &[c], GAMMA_SCALE_INIT)?,
            drop_path,
        })
    }

    pub fn forward<T: Float>(&self, s: &mut Session<T>, x: Var, training: bool, rng: &mut RngStream) -> Result<Var> {
        let shape = s.g.shape(x);
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(CoreError::Dimension(format!(
                "convnext block expects (B,{},H,W), got {shape:?}",
                self.channels
            )));
        }
        let (g, p) = s.split();
        let y = g.conv2d(x, p[self.dw_w], Some(p[self.dw_b]), Conv2dCfg::new(1, 3, self.channels))?;
        let y = g.permute(y, &[0, 2, 3, 1])?;
        let y = g.layer_norm(y, p[self.norm_g], p[self.norm_b], T::c(LN_EPS))?;
        let y = g.linear(y, p[self.fc1_w], Some(p[self.fc1_b]))?;
        let y = g.gelu(y);
        let y = g.linear(y, p[self.fc2_w], Some(p[self.fc2_b]))?;
        let y = g.mul(y, p[self.gamma_scale])?;
        let mut y = g.permute(y, &[0, 3, 1, 2])?;
        if training && self.drop_path > 0.0 {
            y = drop_path(g, y, self.drop_path, rng)?;
        }
        Ok(g.add(x, y)?)
    }
}
