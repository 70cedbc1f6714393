//! Two-class sinusoidal grating textures.

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};

use xlm_tensor::{RngStream, Tensor};

use super::kv::KvMap;
use super::manifest::{split_dataset, DatasetManifest, Entry};
use super::tile::TileFile;
use crate::error::{config, CoreError, Result};

pub const MANIFEST_NAME: &str = "manifest.txt";

pub const SYNTH_KEYS: &[&str] =
    &["per_class", "size", "channels", "period0", "period1", "amplitude0", "amplitude1", "noise_sigma"];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub per_class: usize,
    pub size: usize,
    pub channels: usize,
    /// Grating period in pixels for each class.
    pub periods: [f64; 2],
    pub amplitudes: [f64; 2],
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            per_class: 100,
            size: 224,
            channels: 3,
            periods: [16.0, 8.0],
            amplitudes: [1.0, 1.0],
            noise_sigma: 0.25,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn desk() -> Self {
        Self { per_class: 2000, size: 64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_class < 20 {
            return config(format!("samples per class {} below 20", self.per_class));
        }
        if self.size < 4 || self.channels == 0 {
            return config("image size must be at least 4 and channels positive");
        }
        if self.periods.iter().any(|&p| !(p >= 2.0)) {
            return config("grating periods must be at least 2 pixels");
        }
        if self.periods[0] == self.periods[1] && self.amplitudes[0] == self.amplitudes[1] {
            return config("class textures must differ in period or amplitude");
        }
        if !(self.noise_sigma >= 0.0) {
            return config("noise sigma must be non-negative");
        }
        Ok(())
    }

    pub fn apply_kv(&mut self, kv: &KvMap) -> Result<()> {
        self.per_class = kv.parse_or("per_class", self.per_class)?;
        self.size = kv.parse_or("size", self.size)?;
        self.channels = kv.parse_or("channels", self.channels)?;
        self.periods[0] = kv.parse_or("period0", self.periods[0])?;
        self.periods[1] = kv.parse_or("period1", self.periods[1])?;
        self.amplitudes[0] = kv.parse_or("amplitude0", self.amplitudes[0])?;
        self.amplitudes[1] = kv.parse_or("amplitude1", self.amplitudes[1])?;
        self.noise_sigma = kv.parse_or("noise_sigma", self.noise_sigma)?;
        self.validate()
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("per_class", self.per_class);
        kv.set("size", self.size);
        kv.set("channels", self.channels);
        kv.set("period0", self.periods[0]);
        kv.set("period1", self.periods[1]);
        kv.set("amplitude0", self.amplitudes[0]);
        kv.set("amplitude1", self.amplitudes[1]);
        kv.set("noise_sigma", self.noise_sigma);
        kv
    }

    /// Sample `index` of class `label`: one oriented grating shared by all
    /// channels, independent Gaussian pixel noise per channel, then min-max
    /// scaled to [0,1].
    pub fn sample(&self, label: u8, index: usize) -> Tensor<f32> {
        let mut rng = RngStream::with_stream(self.seed, 31).fork(((index as u64) << 1) | label as u64);
        let theta = rng.uniform() * PI;
        let phase = rng.uniform() * TAU;
        let k = TAU / self.periods[label as usize];
        let (kx, ky) = (k * theta.cos(), k * theta.sin());
        let amp = self.amplitudes[label as usize] / 2.0;
        let n = self.size;
        let mut v = vec![0.0f64; self.channels * n * n];
        for (i, out) in v.iter_mut().enumerate() {
            let (y, x) = ((i / n) % n, i % n);
            *out = amp * (kx * x as f64 + ky * y as f64 + phase).sin() + self.noise_sigma * rng.normal();
        }
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        Tensor::from_fn(&[self.channels, n, n], |i| ((v[i] - lo) / span) as f32)
    }
}

pub fn tile_name(label: u8, index: usize) -> String {
    format!("c{label}-{index:05}.xlmt")
}

/// Writes every tile plus a stratified manifest into `dir`.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec, dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let mut entries = Vec::with_capacity(2 * spec.per_class);
    for label in 0..=1u8 {
        for i in 0..spec.per_class {
            let name = tile_name(label, i);
            TileFile::new(label, &spec.sample(label, i))?.save(&dir.join(&name))?;
            entries.push(Entry { path: PathBuf::from(name), label, split: None });
        }
    }
    let manifest = split_dataset(&entries, spec.seed)?;
    manifest.save(&dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

/// Period in pixels of the strongest non-DC component of an (H,W) plane,
/// from a direct 2-D DFT.
pub fn dominant_period(plane: &[f64], n: usize) -> f64 {
    let mean = plane.iter().sum::<f64>() / plane.len() as f64;
    let mut best = (0.0, 1.0);
    let half = n as isize / 2;
    for u in -half..half {
        for v in 0..=half {
            if (u, v) == (0, 0) || (v == 0 && u < 0) {
                continue;
            }
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..n {
                for x in 0..n {
                    let a = -TAU * (u as f64 * y as f64 + v as f64 * x as f64) / n as f64;
                    let p = plane[y * n + x] - mean;
                    re += p * a.cos();
                    im += p * a.sin();
                }
            }
            let power = re * re + im * im;
            if power > best.0 {
                best = (power, n as f64 / ((u * u + v * v) as f64).sqrt());
            }
        }
    }
    best.1
}
