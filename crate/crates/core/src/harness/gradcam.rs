//! Class activation maps from gradients at a named layer.

use std::path::Path;

use xlm_tensor::{Float, RngStream, Tensor};

use super::tile::TileFile;
use crate::error::{config, contract, CoreError, Result};
use crate::model::{Mode, Model};
use crate::params::Session;

pub const DEFAULT_CAM_LAYER: &str = "stage5";

/// Values in [0,1] at the input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatMap {
    /// (H,W)
    pub values: Tensor<f64>,
    pub layer: String,
    pub target: usize,
}

impl HeatMap {
    pub fn max(&self) -> f64 {
        self.values.data().iter().cloned().fold(0.0, f64::max)
    }

    pub fn to_tile(&self) -> Result<TileFile> {
        let label = u8::try_from(self.target).ok().filter(|&l| l <= 1);
        let Some(label) = label else {
            return contract(format!("heat map target {} cannot be stored as a tile label", self.target));
        };
        let [h, w] = [self.values.shape()[0], self.values.shape()[1]];
        TileFile::new(label, &self.values.reshape(&[1, h, w])?)
    }

    /// 8-bit binary portable graymap.
    pub fn to_pgm(&self) -> Vec<u8> {
        let [h, w] = [self.values.shape()[0], self.values.shape()[1]];
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        out.extend(self.values.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }

    /// Writes `<stem>.xlmt` and `<stem>.pgm`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        self.to_tile()?.save(&dir.join(format!("{stem}.xlmt")))?;
        let pgm = dir.join(format!("{stem}.pgm"));
        std::fs::write(&pgm, self.to_pgm()).map_err(|e| CoreError::io(&pgm, e))
    }
}

/// Bilinear resize of an (h,w) plane with half-pixel centres and edge clamping.
pub fn bilinear_resize(src: &[f64], (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<f64> {
    let coord = |o: usize, n_in: usize, n_out: usize| {
        let c = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = c.floor() as usize;
        (i0, (i0 + 1).min(n_in - 1), c - i0 as f64)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let (y0, y1, fy) = coord(oy, h, oh);
        for ox in 0..ow {
            let (x0, x1, fx) = coord(ox, w, ow);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Map from one activation (K,h,w) and its gradient: channel weights are
/// spatial gradient means, the weighted sum is rectified, resized to `out`
/// and divided by its maximum when that is positive.
pub fn cam_from_activation(activation: &Tensor<f64>, grad: &Tensor<f64>, out: (usize, usize)) -> Result<Tensor<f64>> {
    let &[k, h, w] = activation.shape() else {
        return Err(CoreError::Dimension(format!("activation must be (K,h,w), got {:?}", activation.shape())));
    };
    if grad.shape() != activation.shape() {
        return Err(CoreError::Dimension(format!(
            "gradient {:?} vs activation {:?}",
            grad.shape(),
            activation.shape()
        )));
    }
    let hw = h * w;
    let mut map = vec![0.0; hw];
    for c in 0..k {
        let g = &grad.data()[c * hw..(c + 1) * hw];
        let weight = g.iter().sum::<f64>() / hw as f64;
        for (m, a) in map.iter_mut().zip(&activation.data()[c * hw..(c + 1) * hw]) {
            *m += weight * a;
        }
    }
    for m in map.iter_mut() {
        *m = m.max(0.0);
    }
    let mut up = bilinear_resize(&map, (h, w), out);
    let max = up.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for v in up.iter_mut() {
            *v = (*v / max).clamp(0.0, 1.0);
        }
    }
    Ok(Tensor::new(&[out.0, out.1], up)?)
}

/// Grad-CAM of `target`'s logit for a single (C,H,W) or (1,C,H,W) input.
pub fn grad_cam<T: Float>(model: &Model<T>, input: &Tensor<T>, target: usize, layer: &str) -> Result<HeatMap> {
    if model.mode != Mode::Eval {
        return contract("grad_cam needs a model in eval mode");
    }
    if !model.tap_names().iter().any(|n| n == layer) {
        return config(format!("unknown layer {layer:?}; available: {}", model.tap_names().join(", ")));
    }
    if target >= model.cfg.num_classes {
        return contract(format!("target class {target} outside {} classes", model.cfg.num_classes));
    }
    let x = match input.rank() {
        3 => {
            let s = input.shape();
            input.reshape(&[1, s[0], s[1], s[2]])?
        }
        4 if input.shape()[0] == 1 => input.clone(),
        _ => return Err(CoreError::Dimension(format!("grad_cam takes one image, got {:?}", input.shape()))),
    };
    let (ih, iw) = (x.shape()[2], x.shape()[3]);
    let mut s = Session::new(&model.store, true);
    let xv = s.g.leaf(x, true);
    let out = model.forward(&mut s, xv, &mut RngStream::new(0))?;
    let act = out.tap(layer).expect("checked above");
    if s.g.shape(act).len() != 4 {
        return config(format!("layer {layer:?} is not a 4-D activation"));
    }
    let logit = s.g.narrow(out.logits, 1, target, 1)?;
    let logit = s.g.sum(logit);
    let grads = s.g.backward(logit)?;
    let a = s.g.value(act).cast::<f64>();
    let sh = a.shape().to_vec();
    let a = a.reshape(&sh[1..])?;
    let g = grads.wrt(act).cast::<f64>().reshape(&sh[1..])?;
    Ok(HeatMap { values: cam_from_activation(&a, &g, (ih, iw))?, layer: layer.to_string(), target })
}
