use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::blocks::pvm::BRANCHES;
use crate::blocks::MambaCfg;
use crate::error::{config, CoreError, Result};
use crate::harness::kv::{join, KvMap};
use crate::head::{HeadConfig, HeadPreset, LayerKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageKind {
    ConvNext,
    Pvm,
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageKind::ConvNext => "convnext",
            StageKind::Pvm => "pvm",
        })
    }
}

impl FromStr for StageKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "convnext" => Ok(StageKind::ConvNext),
            "pvm" => Ok(StageKind::Pvm),
            other => config(format!("unknown stage kind {other:?}")),
        }
    }
}

/// Full architecture description.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub stage_channels: Vec<usize>,
    pub stage_kinds: Vec<StageKind>,
    pub blocks_per_stage: usize,
    /// Stem conv kernel and stride.
    pub stem_patch: usize,
    /// 1-based stages whose outputs pass through the attention bridge.
    pub scab_stages: Vec<usize>,
    pub scab_hidden: usize,
    pub head: HeadConfig,
    pub input_size: usize,
    pub in_channels: usize,
    /// Fixed input standardisation `(x - mean) / std` applied before the stem.
    pub input_mean: f64,
    pub input_std: f64,
    pub num_classes: usize,
    pub mamba: MambaCfg,
    pub drop_path: f64,
    /// 1-based stage whose output receives latent salt-and-pepper noise in
    /// training; 0 disables it.
    pub noise_stage: usize,
    pub noise_salt: f64,
    pub noise_pepper: f64,
    pub seed: u64,
}

pub const MODEL_KEYS: &[&str] = &[
    "stage_channels",
    "stage_kinds",
    "blocks_per_stage",
    "stem_patch",
    "scab_stages",
    "scab_hidden",
    "head",
    "head_widths",
    "head_normalize",
    "input_size",
    "in_channels",
    "input_mean",
    "input_std",
    "num_classes",
    "mamba_state",
    "mamba_expand",
    "mamba_conv",
    "drop_path",
    "noise_stage",
    "noise_salt",
    "noise_pepper",
    "seed",
];

impl Default for ModelConfig {
    fn default() -> Self {
        let channels = vec![8, 16, 24, 32, 48, 64];
        let mut widths = crate::head::DEFAULT_HEAD_WIDTHS.to_vec();
        widths[0] = channels.iter().sum();
        Self {
            stage_kinds: vec![
                StageKind::ConvNext,
                StageKind::ConvNext,
                StageKind::ConvNext,
                StageKind::Pvm,
                StageKind::Pvm,
                StageKind::Pvm,
            ],
            stage_channels: channels,
            blocks_per_stage: 1,
            stem_patch: 4,
            scab_stages: vec![1, 2, 3, 4, 5],
            scab_hidden: 4,
            head: HeadConfig::preset(HeadPreset::ThreeLinearTwoFno, &widths).expect("default head"),
            input_size: 224,
            in_channels: 3,
            input_mean: 0.5,
            input_std: 0.25,
            num_classes: 2,
            mamba: MambaCfg::default(),
            drop_path: 0.0,
            noise_stage: 3,
            noise_salt: 0.05,
            noise_pepper: 0.05,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// The 64x64 configuration used for desk-scale runs.
    pub fn desk() -> Self {
        Self { input_size: 64, ..Self::default() }
    }

    pub fn feature_width(&self) -> usize {
        self.stage_channels.iter().sum()
    }

    /// Spatial side of each stage output.
    pub fn stage_sizes(&self) -> Vec<usize> {
        let mut s = self.input_size / self.stem_patch.max(1);
        let mut out = Vec::with_capacity(self.stage_channels.len());
        for i in 0..self.stage_channels.len() {
            if i > 0 {
                s = s.div_ceil(2);
            }
            out.push(s);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.stage_channels.len();
        if n == 0 || self.stage_kinds.len() != n {
            return config(format!("{} stage kinds for {n} stage widths", self.stage_kinds.len()));
        }
        if self.stage_channels.contains(&0) || self.blocks_per_stage == 0 {
            return config("stage widths and blocks per stage must be positive");
        }
        for (i, (&c, &k)) in self.stage_channels.iter().zip(&self.stage_kinds).enumerate() {
            if k == StageKind::Pvm && c % BRANCHES != 0 {
                return config(format!("stage {} is PVM with {c} channels, not divisible by {BRANCHES}", i + 1));
            }
        }
        if self.stem_patch == 0 || self.input_size < self.stem_patch {
            return config(format!("input {} smaller than stem patch {}", self.input_size, self.stem_patch));
        }
        if self.in_channels == 0 || self.num_classes < 2 {
            return config("need at least one input channel and two classes");
        }
        let mut seen = vec![false; n];
        for &s in &self.scab_stages {
            if s == 0 || s > n || std::mem::replace(&mut seen[s - 1], true) {
                return config(format!("bad SCAB stage list {:?}", self.scab_stages));
            }
        }
        if !self.scab_stages.is_empty() && self.scab_hidden == 0 {
            return config("SCAB hidden width must be positive");
        }
        if self.head.in_width() != self.feature_width() {
            return config(format!(
                "head input width {} does not match pooled feature width {}",
                self.head.in_width(),
                self.feature_width()
            ));
        }
        self.head.validate(self.num_classes)?;
        if !(self.input_std > 0.0 && self.input_std.is_finite() && self.input_mean.is_finite()) {
            return config(format!("input standardisation mean {} std {} invalid", self.input_mean, self.input_std));
        }
        if !(0.0..1.0).contains(&self.drop_path) {
            return config(format!("drop_path {} outside [0,1)", self.drop_path));
        }
        crate::train::noise::check_probabilities(self.noise_salt, self.noise_pepper)?;
        if self.noise_stage > n {
            return config(format!("noise stage {} beyond {n} stages", self.noise_stage));
        }
        Ok(())
    }

    /// Applies recognised keys from `kv` over `self`.
    pub fn apply_kv(&mut self, kv: &KvMap) -> Result<()> {
        if let Some(v) = kv.parse_list("stage_channels")? {
            self.stage_channels = v;
        }
        if let Some(v) = kv.parse_list("stage_kinds")? {
            self.stage_kinds = v;
        }
        self.blocks_per_stage = kv.parse_or("blocks_per_stage", self.blocks_per_stage)?;
        self.stem_patch = kv.parse_or("stem_patch", self.stem_patch)?;
        if let Some(v) = kv.get("scab_stages") {
            self.scab_stages =
                if v.is_empty() || v == "none" { Vec::new() } else { kv.parse_list("scab_stages")?.unwrap() };
        }
        self.scab_hidden = kv.parse_or("scab_hidden", self.scab_hidden)?;
        self.input_size = kv.parse_or("input_size", self.input_size)?;
        self.in_channels = kv.parse_or("in_channels", self.in_channels)?;
        self.input_mean = kv.parse_or("input_mean", self.input_mean)?;
        self.input_std = kv.parse_or("input_std", self.input_std)?;
        self.num_classes = kv.parse_or("num_classes", self.num_classes)?;
        self.mamba.state = kv.parse_or("mamba_state", self.mamba.state)?;
        self.mamba.expand = kv.parse_or("mamba_expand", self.mamba.expand)?;
        self.mamba.conv = kv.parse_or("mamba_conv", self.mamba.conv)?;
        self.drop_path = kv.parse_or("drop_path", self.drop_path)?;
        self.noise_stage = kv.parse_or("noise_stage", self.noise_stage)?;
        self.noise_salt = kv.parse_or("noise_salt", self.noise_salt)?;
        self.noise_pepper = kv.parse_or("noise_pepper", self.noise_pepper)?;
        self.seed = kv.parse_or("seed", self.seed)?;

        let kinds = match kv.get("head") {
            Some(v) => match v.parse::<HeadPreset>() {
                Ok(p) => p.kinds().to_vec(),
                Err(_) => kv.parse_list::<LayerKind>("head")?.unwrap(),
            },
            None => self.head.kinds(),
        };
        let widths = match kv.parse_list::<usize>("head_widths")? {
            Some(w) => w,
            None => {
                let mut w = self.head.widths();
                w[0] = self.feature_width();
                w
            }
        };
        let normalize = kv.parse_or("head_normalize", self.head.normalize_input)?;
        self.head = HeadConfig::new(&kinds, &widths, normalize)?;
        Ok(())
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(kv)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Architecture keys only (no seed), in a fixed order.
    pub fn architecture_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("stage_channels", join(&self.stage_channels));
        kv.set("stage_kinds", join(&self.stage_kinds));
        kv.set("blocks_per_stage", self.blocks_per_stage);
        kv.set("stem_patch", self.stem_patch);
        kv.set("scab_stages", if self.scab_stages.is_empty() { "none".to_string() } else { join(&self.scab_stages) });
        kv.set("scab_hidden", self.scab_hidden);
        kv.set("head", self.head.kinds().iter().map(|k| k.name()).collect::<Vec<_>>().join(","));
        kv.set("head_widths", join(&self.head.widths()));
        kv.set("head_normalize", self.head.normalize_input);
        kv.set("input_size", self.input_size);
        kv.set("in_channels", self.in_channels);
        kv.set("input_mean", self.input_mean);
        kv.set("input_std", self.input_std);
        kv.set("num_classes", self.num_classes);
        kv.set("mamba_state", self.mamba.state);
        kv.set("mamba_expand", self.mamba.expand);
        kv.set("mamba_conv", self.mamba.conv);
        kv.set("drop_path", self.drop_path);
        kv.set("noise_stage", self.noise_stage);
        kv.set("noise_salt", self.noise_salt);
        kv.set("noise_pepper", self.noise_pepper);
        kv
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = self.architecture_kv();
        kv.set("seed", self.seed);
        kv
    }

    /// SHA-256 of the canonical architecture text.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.architecture_kv().to_text().as_bytes()).into()
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_with_192_features() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.head.in_width(), 192);
        assert_eq!(cfg.stage_sizes(), vec![56, 28, 14, 7, 4, 2]);
        assert_eq!(ModelConfig::desk().stage_sizes(), vec![16, 8, 4, 2, 1, 1]);
    }

    #[test]
    fn pvm_width_not_divisible_by_four() {
        let mut cfg = ModelConfig::default();
        cfg.stage_channels[3] = 30;
        let mut w = cfg.head.widths();
        w[0] = cfg.feature_width();
        cfg.head = HeadConfig::new(&cfg.head.kinds(), &w, true).unwrap();
        assert!(matches!(cfg.validate(), Err(CoreError::Config(_))));
    }

    #[test]
    fn kv_round_trip_and_hash() {
        let cfg = ModelConfig::desk();
        let back = ModelConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.seed = 9;
        assert_eq!(other.hash(), cfg.hash());
        assert_ne!(ModelConfig::default().hash(), cfg.hash());
    }

    #[test]
    fn head_preset_key() {
        let mut kv = KvMap::new();
        kv.set("head", "AllHadamard");
        let cfg = ModelConfig::from_kv(&kv).unwrap();
        assert_eq!(cfg.head.kinds(), vec![LayerKind::Hadamard; 5]);
    }
}
