//! Hybrid classifier stacks of learnable and fixed layers.

use std::fmt;
use std::str::FromStr;

use xlm_tensor::{Float, Tensor, Var};

use super::fixed::{fno_init, hadamard_matrix, project};
use crate::error::{config, CoreError, Result};
use crate::params::{Builder, ParamId, Session};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Linear,
    Fno,
    Hadamard,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Linear => "linear",
            LayerKind::Fno => "fno",
            LayerKind::Hadamard => "hadamard",
        }
    }
}

impl FromStr for LayerKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(LayerKind::Linear),
            "fno" => Ok(LayerKind::Fno),
            "hadamard" => Ok(LayerKind::Hadamard),
            other => config(format!("unknown head layer kind {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_width: usize,
    pub out_width: usize,
}

/// Ordered head layers; GELU follows every layer but the last.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    pub layers: Vec<LayerSpec>,
    /// Unit-normalise the input of fixed layers.
    pub normalize_input: bool,
}

pub const DEFAULT_HEAD_WIDTHS: [usize; 6] = [192, 16, 16, 16, 8, 2];

/// Named head layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadPreset {
    ThreeLinearTwoFno,
    AllFno,
    ThreeLinearTwoHadamard,
    AllHadamard,
}

impl HeadPreset {
    pub const ALL: [HeadPreset; 4] = [
        HeadPreset::ThreeLinearTwoFno,
        HeadPreset::AllFno,
        HeadPreset::ThreeLinearTwoHadamard,
        HeadPreset::AllHadamard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HeadPreset::ThreeLinearTwoFno => "3L2FNO",
            HeadPreset::AllFno => "AllFNO",
            HeadPreset::ThreeLinearTwoHadamard => "3L2Hadamard",
            HeadPreset::AllHadamard => "AllHadamard",
        }
    }

    pub fn kinds(self) -> [LayerKind; 5] {
        use LayerKind::*;
        match self {
            HeadPreset::ThreeLinearTwoFno => [Linear, Linear, Linear, Fno, Fno],
            HeadPreset::AllFno => [Fno; 5],
            HeadPreset::ThreeLinearTwoHadamard => [Linear, Linear, Linear, Hadamard, Hadamard],
            HeadPreset::AllHadamard => [Hadamard; 5],
        }
    }
}

impl FromStr for HeadPreset {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        HeadPreset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CoreError::Config(format!("unknown head preset {s:?}")))
    }
}

impl fmt::Display for HeadPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl HeadConfig {
    /// Chains `widths[i] -> widths[i+1]` through `kinds[i]`.
    pub fn new(kinds: &[LayerKind], widths: &[usize], normalize_input: bool) -> Result<Self> {
        if kinds.is_empty() || widths.len() != kinds.len() + 1 {
            return config(format!(
                "{} head layers need {} widths, got {}",
                kinds.len(),
                kinds.len() + 1,
                widths.len()
            ));
        }
        let layers = kinds
            .iter()
            .zip(widths.windows(2))
            .map(|(&kind, w)| LayerSpec { kind, in_width: w[0], out_width: w[1] })
            .collect();
        let cfg = Self { layers, normalize_input };
        cfg.validate(*widths.last().unwrap())?;
        Ok(cfg)
    }

    pub fn preset(preset: HeadPreset, widths: &[usize]) -> Result<Self> {
        Self::new(&preset.kinds(), widths, true)
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].in_width
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_width)
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(|l| l.kind).collect()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.in_width()];
        w.extend(self.layers.iter().map(|l| l.out_width));
        w
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.layers.is_empty() {
            return config("head has no layers");
        }
        for pair in self.layers.windows(2) {
            if pair[0].out_width != pair[1].in_width {
                return config(format!("head width chain broken: {} -> {}", pair[0].out_width, pair[1].in_width));
            }
        }
        if self.out_width() != classes {
            return config(format!("head ends at width {}, expected {classes} classes", self.out_width()));
        }
        for l in &self.layers {
            if l.in_width == 0 || l.out_width == 0 {
                return config("head widths must be positive");
            }
            match l.kind {
                LayerKind::Linear => {}
                LayerKind::Fno if l.in_width < l.out_width || l.out_width < 2 => {
                    return config(format!("fno layer {}->{} needs F >= D >= 2", l.in_width, l.out_width));
                }
                LayerKind::Fno => {}
                LayerKind::Hadamard => {
                    hadamard_matrix(l.in_width, l.out_width)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum HeadLayer {
    Linear {
        w: ParamId,
        b: ParamId,
    },
    /// Fixed (F,D) matrix with logit scale `softplus(rho)`.
    Fixed {
        kind: LayerKind,
        w: ParamId,
        rho: ParamId,
        normalize: bool,
    },
}

/// `rho` such that `softplus(rho) = 1`.
pub fn unit_gamma_rho() -> f64 {
    (std::f64::consts::E - 1.0).ln()
}

#[derive(Clone, Debug)]
pub struct Head {
    pub cfg: HeadConfig,
    pub layers: Vec<HeadLayer>,
}

pub struct HeadOut {
    pub logits: Var,
    /// Input of the final layer as that layer sees it (after normalisation
    /// for fixed layers).
    pub penultimate: Var,
}

impl Head {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, cfg: &HeadConfig) -> Result<Self> {
        let mut layers = Vec::with_capacity(cfg.layers.len());
        for (i, l) in cfg.layers.iter().enumerate() {
            let mut s = b.scope(&format!("layer{}", i + 1));
            let layer = match l.kind {
                LayerKind::Linear => {
                    let bound = 1.0 / (l.in_width as f64).sqrt();
                    HeadLayer::Linear {
                        w: s.uniform("w", &[l.out_width, l.in_width], bound)?,
                        b: s.uniform("b", &[l.out_width], bound)?,
                    }
                }
                LayerKind::Fno | LayerKind::Hadamard => {
                    let w = if l.kind == LayerKind::Fno {
                        let mut rng = s.rng().fork(i as u64);
                        fno_init(l.in_width, l.out_width, &mut rng, cfg.normalize_input)?.w
                    } else {
                        hadamard_matrix(l.in_width, l.out_width)?
                    };
                    HeadLayer::Fixed {
                        kind: l.kind,
                        w: s.add("W", w.cast(), false)?,
                        rho: s.add("rho", Tensor::scalar(T::c(unit_gamma_rho())), true)?,
                        normalize: cfg.normalize_input,
                    }
                }
            };
            layers.push(layer);
        }
        Ok(Self { cfg: cfg.clone(), layers })
    }

    pub fn forward<T: Float>(&self, s: &mut Session<T>, x: Var) -> Result<HeadOut> {
        let (g, p) = s.split();
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.cfg.in_width() {
            return Err(CoreError::Dimension(format!("head expects (B,{}), got {shape:?}", self.cfg.in_width())));
        }
        let mut h = x;
        let mut penultimate = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = match *layer {
                HeadLayer::Linear { w, b } => {
                    penultimate = h;
                    g.linear(h, p[w], Some(p[b]))?
                }
                HeadLayer::Fixed { w, rho, normalize, .. } => {
                    let input = if normalize { g.l2_normalize(h)? } else { h };
                    penultimate = input;
                    let gamma = g.softplus(p[rho]);
                    project(g, input, p[w], gamma, false)?
                }
            };
            if i < last {
                h = g.gelu(h);
            }
        }
        Ok(HeadOut { logits: h, penultimate })
    }
}
