//! Resolution of the flat key=value config plus command-line overrides.

use std::path::Path;

use xlm_core::harness::{KvMap, SyntheticSpec, SYNTH_KEYS};
use xlm_core::model::config::MODEL_KEYS;
use xlm_core::train::{TrainConfig, TRAIN_KEYS};
use xlm_core::{CoreError, Result};

pub const CONFIG_NAME: &str = "config.txt";

const EXTRA_KEYS: &[&str] = &["profile", "precision"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(CoreError::Config(format!("precision must be f32 or f64, got {other:?}"))),
        }
    }
}

/// Default values the config is applied over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// 224px input, 100 epochs, batch 256, lr 1e-5.
    Full,
    /// 64px input, 30 epochs, batch 32, lr 3e-3, 2000 tiles per class.
    Desk,
}

impl Profile {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "desk" => Ok(Profile::Desk),
            other => Err(CoreError::Config(format!("profile must be full or desk, got {other:?}"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Profile::Full => "full",
            Profile::Desk => "desk",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Settings {
    pub profile: Profile,
    pub precision: Precision,
    pub seed: u64,
    pub model: xlm_core::model::ModelConfig,
    pub train: TrainConfig,
    pub synth: SyntheticSpec,
}

impl Settings {
    /// File first, then `--set` pairs, then the dedicated flags.
    pub fn resolve(
        path: Option<&Path>,
        sets: &[String],
        seed: Option<u64>,
        precision: Option<Precision>,
    ) -> Result<Self> {
        let mut kv = match path {
            Some(p) => KvMap::load(p)?,
            None => KvMap::new(),
        };
        for s in sets {
            let Some((k, v)) = s.split_once('=') else {
                return Err(CoreError::Config(format!("--set expects key=value, got {s:?}")));
            };
            kv.set(k.trim(), v.trim());
        }
        let known: Vec<&str> =
            MODEL_KEYS.iter().chain(TRAIN_KEYS).chain(SYNTH_KEYS).chain(EXTRA_KEYS).copied().collect();
        kv.reject_unknown(&known)?;
        let profile = Profile::parse(kv.get("profile").unwrap_or("full"))?;
        let (mut model, mut train, mut synth) = match profile {
            Profile::Full => Default::default(),
            Profile::Desk => (xlm_core::model::ModelConfig::desk(), TrainConfig::desk(), SyntheticSpec::desk()),
        };
        model.apply_kv(&kv)?;
        model.validate()?;
        train.apply_kv(&kv)?;
        synth.apply_kv(&kv)?;
        let seed = seed.unwrap_or(model.seed);
        model.seed = seed;
        train.seed = seed;
        synth.seed = seed;
        let precision = match precision {
            Some(p) => p,
            None => Precision::parse(kv.get("precision").unwrap_or("f32"))?,
        };
        Ok(Self { profile, precision, seed, model, train, synth })
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("profile", self.profile.name());
        kv.set("precision", self.precision.name());
        kv.merge(&self.model.to_kv());
        kv.merge(&self.train.to_kv());
        kv.merge(&self.synth.to_kv());
        kv
    }

    /// Writes the resolved config as `config.txt` in `dir`.
    pub fn save_into(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CoreError::Io { path: dir.display().to_string(), source: e })?;
        self.to_kv().save(&dir.join(CONFIG_NAME))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_config_round_trips() {
        let sets = vec!["profile=desk".to_string(), "epochs=3".to_string(), "head=AllFNO".to_string()];
        let s = Settings::resolve(None, &sets, Some(9), Some(Precision::F64)).unwrap();
        assert_eq!((s.train.epochs, s.train.seed, s.synth.seed, s.model.input_size), (3, 9, 9, 64));
        let dir = std::env::temp_dir().join(format!("xlm-settings-{}", std::process::id()));
        s.save_into(&dir).unwrap();
        let back = Settings::resolve(Some(&dir.join(CONFIG_NAME)), &[], None, None).unwrap();
        std::fs::remove_dir_all(&dir).unwrap();
        assert_eq!(back.to_kv(), s.to_kv());
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        assert!(Settings::resolve(None, &["epoch=3".into()], None, None).is_err());
        assert!(Settings::resolve(None, &["momentum=1.5".into()], None, None).is_err());
        assert!(Settings::resolve(None, &["precision=f16".into()], None, None).is_err());
        assert!(Settings::resolve(None, &["noequals".into()], None, None).is_err());
    }
}
