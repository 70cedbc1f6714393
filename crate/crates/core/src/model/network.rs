//! Stem, six stages with downsampling, attention bridge, pooling and head.

use xlm_tensor::{Conv2dCfg, Float, RngStream, Tensor, Var};

use super::config::{ModelConfig, StageKind};
use crate::blocks::{layer_norm_nchw, ConvNextBlock, Pvm, Scab};
use crate::error::{CoreError, Result};
use crate::head::{Head, HeadOut};
use crate::params::{Builder, ParamId, ParamStore, Session};
use crate::train::noise::inject_salt_pepper_latent;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub enum StageBlock {
    ConvNext(ConvNextBlock),
    Pvm(Pvm),
}

/// Channel-last layer norm, right/bottom zero pad to even size, 2x2
/// depthwise conv with stride 2, then a 1x1 conv to the next width.
#[derive(Clone, Debug)]
pub struct Downsample {
    pub cin: usize,
    pub cout: usize,
    pub norm_g: ParamId,
    pub norm_b: ParamId,
    pub dw_w: ParamId,
    pub dw_b: ParamId,
    pub pw_w: ParamId,
    pub pw_b: ParamId,
}

impl Downsample {
    fn new<T: Float>(b: &mut Builder<'_, T>, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self {
            cin,
            cout,
            norm_g: b.constant("norm.g", &[cin], 1.0)?,
            norm_b: b.constant("norm.b", &[cin], 0.0)?,
            dw_w: b.uniform("dw.w", &[cin, 1, 2, 2], 0.5)?,
            dw_b: b.uniform("dw.b", &[cin], 0.5)?,
            pw_w: b.uniform("pw.w", &[cout, cin, 1, 1], 1.0 / (cin as f64).sqrt())?,
            pw_b: b.uniform("pw.b", &[cout], 1.0 / (cin as f64).sqrt())?,
        })
    }

    fn forward<T: Float>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let (g, p) = s.split();
        let y = layer_norm_nchw(g, x, p[self.norm_g], p[self.norm_b])?;
        let (h, w) = (g.shape(y)[2], g.shape(y)[3]);
        let y = if h % 2 == 1 || w % 2 == 1 { g.pad2d(y, [0, h % 2, 0, w % 2])? } else { y };
        let y = g.conv2d(y, p[self.dw_w], Some(p[self.dw_b]), Conv2dCfg::new(2, 0, self.cin))?;
        Ok(g.conv2d(y, p[self.pw_w], Some(p[self.pw_b]), Conv2dCfg::default())?)
    }
}

/// An instantiated network and its parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Float> {
    pub cfg: ModelConfig,
    pub store: ParamStore<T>,
    pub mode: Mode,
    pub stem_w: ParamId,
    pub stem_b: ParamId,
    pub stages: Vec<Vec<StageBlock>>,
    pub downsamples: Vec<Downsample>,
    pub scab: Option<Scab>,
    pub head: Head,
}

/// Outputs of one forward pass.
pub struct Forward {
    pub logits: Var,
    /// Named 4-D activations: `stem`, `stage1..`, `scab1..`.
    pub taps: Vec<(String, Var)>,
    /// Pooled, concatenated features fed to the head, (B,F).
    pub features: Var,
    /// Input of the final head layer, (B,F').
    pub penultimate: Var,
}

impl Forward {
    pub fn tap(&self, name: &str) -> Option<Var> {
        self.taps.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }
}

impl<T: Float> Model<T> {
    pub fn build(cfg: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, rng);
        let (cin, c0, k) = (cfg.in_channels, cfg.stage_channels[0], cfg.stem_patch);
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        let stem_w = b.scope("stem").uniform("w", &[c0, cin, k, k], bound)?;
        let stem_b = b.scope("stem").uniform("b", &[c0], bound)?;
        let mut stages = Vec::new();
        let mut downsamples = Vec::new();
        for (i, (&c, &kind)) in cfg.stage_channels.iter().zip(&cfg.stage_kinds).enumerate() {
            if i > 0 {
                let mut sb = b.scope(&format!("down{}", i + 1));
                downsamples.push(Downsample::new(&mut sb, cfg.stage_channels[i - 1], c)?);
            }
            let mut blocks = Vec::new();
            for j in 0..cfg.blocks_per_stage {
                let name = if cfg.blocks_per_stage == 1 {
                    format!("stage{}", i + 1)
                } else {
                    format!("stage{}.{}", i + 1, j + 1)
                };
                let mut sb = b.scope(&name);
                blocks.push(match kind {
                    StageKind::ConvNext => StageBlock::ConvNext(ConvNextBlock::new(&mut sb, c, cfg.drop_path)?),
                    StageKind::Pvm => StageBlock::Pvm(Pvm::new(&mut sb, c, cfg.mamba)?),
                });
            }
            stages.push(blocks);
        }
        let scab = if cfg.scab_stages.is_empty() {
            None
        } else {
            let widths: Vec<usize> = cfg.scab_stages.iter().map(|&s| cfg.stage_channels[s - 1]).collect();
            Some(Scab::new(&mut b.scope("scab"), &widths, cfg.scab_hidden)?)
        };
        let head = Head::new(&mut b.scope("head"), &cfg.head)?;
        Ok(Self { cfg: cfg.clone(), store, mode: Mode::Eval, stem_w, stem_b, stages, downsamples, scab, head })
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn tap_names(&self) -> Vec<String> {
        let mut names = vec!["stem".to_string()];
        names.extend((1..=self.stages.len()).map(|i| format!("stage{i}")));
        names.extend(self.cfg.scab_stages.iter().map(|i| format!("scab{i}")));
        names
    }

    /// Forward pass on a (B,C,H,W) input. `rng` drives drop path and latent
    /// noise, which are active only in train mode.
    pub fn forward(&self, s: &mut Session<T>, x: Var, rng: &mut RngStream) -> Result<Forward> {
        let cfg = &self.cfg;
        let shape = s.g.shape(x);
        let want = [cfg.in_channels, cfg.input_size, cfg.input_size];
        if shape.len() != 4 || shape[1..] != want {
            return Err(CoreError::Dimension(format!(
                "model expects (B,{},{},{}), got {shape:?}",
                want[0], want[1], want[2]
            )));
        }
        let training = self.mode == Mode::Train;
        let mut taps = Vec::new();
        let k = cfg.stem_patch;
        let x = s.g.affine(x, T::c(1.0 / cfg.input_std), T::c(-cfg.input_mean / cfg.input_std));
        let mut h = s.g.conv2d(x, s.p[self.stem_w], Some(s.p[self.stem_b]), Conv2dCfg::new(k, 0, 1))?;
        taps.push(("stem".to_string(), h));
        let mut outputs = Vec::with_capacity(self.stages.len());
        for (i, blocks) in self.stages.iter().enumerate() {
            if i > 0 {
                h = self.downsamples[i - 1].forward(s, h)?;
            }
            for block in blocks {
                h = match block {
                    StageBlock::ConvNext(b) => b.forward(s, h, training, rng)?,
                    StageBlock::Pvm(b) => b.forward(s, h)?,
                };
            }
            if training && cfg.noise_stage == i + 1 {
                h = inject_salt_pepper_latent(&mut s.g, h, cfg.noise_salt, cfg.noise_pepper, rng)?;
            }
            taps.push((format!("stage{}", i + 1), h));
            outputs.push(h);
        }
        // The bridge reads stage outputs; the trunk above used them unrefined.
        let mut pooled_src = outputs.clone();
        if let Some(scab) = &self.scab {
            let feats: Vec<Var> = cfg.scab_stages.iter().map(|&i| outputs[i - 1]).collect();
            let refined = scab.forward(s, &feats)?;
            for (&i, r) in cfg.scab_stages.iter().zip(refined) {
                taps.push((format!("scab{i}"), r));
                pooled_src[i - 1] = r;
            }
        }
        let pooled = pooled_src.iter().map(|&v| Ok(s.g.global_avg_pool(v)?)).collect::<Result<Vec<_>>>()?;
        let features = s.g.concat(&pooled, 1)?;
        let HeadOut { logits, penultimate } = self.head.forward(s, features)?;
        Ok(Forward { logits, taps, features, penultimate })
    }

    /// Logits for a batch without gradient tracking.
    pub fn predict(&self, x: &Tensor<T>, rng: &mut RngStream) -> Result<Tensor<T>> {
        let mut s = Session::new(&self.store, false);
        let xv = s.g.constant(x.clone());
        let out = self.forward(&mut s, xv, rng)?;
        Ok(s.g.value(out.logits).clone())
    }

    /// Pooled head input and penultimate activations for a batch.
    pub fn embed(&self, x: &Tensor<T>, rng: &mut RngStream) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let mut s = Session::new(&self.store, false);
        let xv = s.g.constant(x.clone());
        let out = self.forward(&mut s, xv, rng)?;
        Ok((s.g.value(out.logits).clone(), s.g.value(out.features).clone(), s.g.value(out.penultimate).clone()))
    }

    /// Fixed (F,D) matrix of the final head layer, if it is a fixed layer.
    pub fn final_classifier(&self) -> Option<Tensor<f64>> {
        match self.head.layers.last()? {
            crate::head::HeadLayer::Fixed { w, .. } => Some(self.store.value(*w).cast()),
            _ => None,
        }
    }
}
