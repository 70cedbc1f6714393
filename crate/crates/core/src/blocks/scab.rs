//! Spatial and channel attention bridge over several stage outputs.

use xlm_tensor::{Conv2dCfg, Float, Var};

use crate::error::{config, CoreError, Result};
use crate::params::{Builder, ParamId, Session};

pub const SPATIAL_KERNEL: usize = 7;
pub const SPATIAL_DILATION: usize = 3;

#[derive(Clone, Debug)]
pub struct Scab {
    pub widths: Vec<usize>,
    pub hidden: usize,
    /// (1,2,7,7), shared by every bridged stage.
    pub spatial_w: ParamId,
    pub fc_w: ParamId,
    pub fc_b: ParamId,
    pub heads: Vec<(ParamId, ParamId)>,
}

impl Scab {
    /// `hidden` is the width of the shared channel-attention layer.
    pub fn new<T: Float>(b: &mut Builder<'_, T>, widths: &[usize], hidden: usize) -> Result<Self> {
        if widths.is_empty() || hidden == 0 || widths.contains(&0) {
            return config(format!("SCAB widths {widths:?} / hidden {hidden} must be non-empty and positive"));
        }
        let total: usize = widths.iter().sum();
        let k = SPATIAL_KERNEL;
        let spatial_w = b.uniform("spatial.w", &[1, 2, k, k], 1.0 / ((2 * k * k) as f64).sqrt())?;
        let fc_w = b.uniform("fc.w", &[hidden, total], 1.0 / (total as f64).sqrt())?;
        let fc_b = b.uniform("fc.b", &[hidden], 1.0 / (total as f64).sqrt())?;
        let bound = 1.0 / (hidden as f64).sqrt();
        let heads = widths
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                Ok((
                    b.uniform(&format!("head{}.w", i + 1), &[c, hidden], bound)?,
                    b.uniform(&format!("head{}.b", i + 1), &[c], bound)?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(Self { widths: widths.to_vec(), hidden, spatial_w, fc_w, fc_b, heads })
    }

    /// Spatial attention map `sigmoid(conv([max_c x, mean_c x]))`, shape (B,1,H,W).
    pub fn spatial_map<T: Float>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let (g, p) = s.split();
        let mx = g.channel_max(x)?;
        let av = g.channel_mean(x)?;
        let pooled = g.concat_channels(&[mx, av])?;
        let pad = SPATIAL_DILATION * (SPATIAL_KERNEL - 1) / 2;
        let cfg = Conv2dCfg::new(1, pad, 1).with_dilation(SPATIAL_DILATION);
        let m = g.conv2d(pooled, p[self.spatial_w], None, cfg)?;
        Ok(g.sigmoid(m))
    }

    /// `x + x * m` with the shared spatial map.
    pub fn spatial_attention<T: Float>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let m = self.spatial_map(s, x)?;
        let xm = s.g.mul(x, m)?;
        Ok(s.g.add(x, xm)?)
    }

    /// Per-stage channel attention vectors, each (B,Ci,1,1).
    pub fn channel_maps<T: Float>(&self, s: &mut Session<T>, feats: &[Var]) -> Result<Vec<Var>> {
        if feats.len() != self.widths.len() {
            return config(format!("SCAB bridges {} stages, got {}", self.widths.len(), feats.len()));
        }
        let (g, p) = s.split();
        let mut gaps = Vec::with_capacity(feats.len());
        for (&f, &c) in feats.iter().zip(&self.widths) {
            let shape = g.shape(f);
            if shape.len() != 4 || shape[1] != c {
                return Err(CoreError::Dimension(format!("SCAB stage expects {c} channels, got {shape:?}")));
            }
            gaps.push(g.global_avg_pool(f)?);
        }
        let bs = g.shape(feats[0])[0];
        let joined = g.concat(&gaps, 1)?;
        let hidden = g.linear(joined, p[self.fc_w], Some(p[self.fc_b]))?;
        let hidden = g.gelu(hidden);
        let mut maps = Vec::with_capacity(feats.len());
        for (&(w, b), &c) in self.heads.iter().zip(&self.widths) {
            let a = g.linear(hidden, p[w], Some(p[b]))?;
            let a = g.sigmoid(a);
            maps.push(g.reshape(a, &[bs, c, 1, 1])?);
        }
        Ok(maps)
    }

    /// `x_i + x_i * a_i` for every stage.
    pub fn channel_attention_bridge<T: Float>(&self, s: &mut Session<T>, feats: &[Var]) -> Result<Vec<Var>> {
        let maps = self.channel_maps(s, feats)?;
        feats
            .iter()
            .zip(maps)
            .map(|(&x, a)| {
                let xa = s.g.mul(x, a)?;
                Ok(s.g.add(x, xa)?)
            })
            .collect()
    }

    /// Spatial refinement of every stage, then the channel bridge across them.
    pub fn forward<T: Float>(&self, s: &mut Session<T>, feats: &[Var]) -> Result<Vec<Var>> {
        let spatial = feats.iter().map(|&x| self.spatial_attention(s, x)).collect::<Result<Vec<_>>>()?;
        self.channel_attention_bridge(s, &spatial)
    }
}
