//! Dataset manifests and the stratified train/val/test split.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use xlm_tensor::{Float, RngStream};

use super::kv::KvMap;
use super::tile::TileFile;
use crate::error::{contract, format, CoreError, Result};
use crate::train::Dataset;

const SPLIT_STREAM: u64 = 21;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
    pub const FRACTIONS: [f64; 3] = [0.70, 0.15, 0.15];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL.into_iter().find(|v| v.name() == s).map_or_else(|| format(format!("unknown split {s:?}")), Ok)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    /// Relative to the manifest directory unless absolute.
    pub path: PathBuf,
    pub label: u8,
    pub split: Option<Split>,
}

/// Ordered entries with their split assignment. Text form: `key=value`
/// header lines, a `---` separator, then one `label split path` line per
/// entry (`-` for an unassigned split).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<Entry>,
    pub split_seed: Option<u64>,
}

impl DatasetManifest {
    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for e in &self.entries {
            if let Some(s) = e.split {
                c[s as usize] += 1;
            }
        }
        c
    }

    /// Per split, the number of entries of each label.
    pub fn class_counts(&self) -> [[usize; 2]; 3] {
        let mut c = [[0; 2]; 3];
        for e in &self.entries {
            if let Some(s) = e.split {
                c[s as usize][e.label as usize] += 1;
            }
        }
        c
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.split == Some(split))
    }

    pub fn to_text(&self) -> String {
        let mut kv = KvMap::new();
        kv.set("format", "xlm-manifest-1");
        if let Some(s) = self.split_seed {
            kv.set("split_seed", s);
        }
        for (s, n) in Split::ALL.iter().zip(self.counts()) {
            kv.set(s.name(), n);
        }
        let mut out = kv.to_text();
        out.push_str("---\n");
        for e in &self.entries {
            let split = e.split.map_or("-", Split::name);
            out.push_str(&format!("{} {} {}\n", e.label, split, e.path.display()));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let Some((head, body)) = text.split_once("---\n") else {
            return format("manifest: missing `---` separator");
        };
        let kv = KvMap::parse(head).map_err(|e| CoreError::Format(format!("manifest header: {e}")))?;
        if kv.get("format") != Some("xlm-manifest-1") {
            return format("manifest: unknown format tag");
        }
        let split_seed = kv.parse_opt::<u64>("split_seed").map_err(|e| CoreError::Format(e.to_string()))?;
        let mut entries = Vec::new();
        for (n, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, ' ');
            let (Some(label), Some(split), Some(path)) = (parts.next(), parts.next(), parts.next()) else {
                return format(format!("manifest entry {}: expected `label split path`", n + 1));
            };
            let label = match label {
                "0" => 0,
                "1" => 1,
                other => return format(format!("manifest entry {}: label {other:?}", n + 1)),
            };
            let split = if split == "-" { None } else { Some(split.parse()?) };
            entries.push(Entry { path: PathBuf::from(path), label, split });
        }
        let m = Self { entries, split_seed };
        for (s, n) in Split::ALL.iter().zip(m.counts()) {
            if let Some(want) = kv.parse_opt::<usize>(s.name()).map_err(|e| CoreError::Format(e.to_string()))? {
                if want != n {
                    return format(format!("manifest: header says {want} {s} entries, found {n}"));
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::parse(&text)
    }

    /// Reads every tile of `split` into memory; `root` resolves relative paths.
    pub fn load_split<T: Float>(&self, root: &Path, split: Split) -> Result<Dataset<T>> {
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        let mut chw = None;
        for e in self.entries_in(split) {
            let path = if e.path.is_absolute() { e.path.clone() } else { root.join(&e.path) };
            let tile = TileFile::load(&path)?;
            if tile.label != e.label {
                return format(format!(
                    "{}: tile label {} disagrees with manifest {}",
                    path.display(),
                    tile.label,
                    e.label
                ));
            }
            match chw {
                None => chw = Some(tile.dims()),
                Some(d) if d != tile.dims() => {
                    return format(format!("{}: dims {:?} differ from {d:?}", path.display(), tile.dims()))
                }
                _ => {}
            }
            pixels.extend(tile.data.to_typed::<T>().into_data());
            labels.push(e.label as usize);
        }
        match chw {
            Some(chw) => Dataset::new(chw, pixels, labels),
            None => contract(format!("manifest has no {split} entries")),
        }
    }
}

/// Splits `total` by `fractions` with largest-remainder rounding; ties go
/// to the earlier split.
pub fn largest_remainder(total: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    apportion(&quotas, total)
}

fn apportion(scores: &[f64], total: usize) -> Vec<usize> {
    let mut out: Vec<usize> = scores.iter().map(|q| q.floor().max(0.0) as usize).collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| (scores[b] - scores[b].floor()).total_cmp(&(scores[a] - scores[a].floor())).then(a.cmp(&b)));
    let assigned: usize = out.iter().sum();
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}

/// Stratified 70/15/15 assignment, shuffled per class by `seed`. Classes
/// are apportioned in label order while tracking the running global
/// deficit, so every split total stays within one of its quota.
pub fn split_dataset(entries: &[Entry], seed: u64) -> Result<DatasetManifest> {
    if entries.len() < 10 {
        return contract(format!("need at least 10 entries to split, got {}", entries.len()));
    }
    let rng = RngStream::with_stream(seed, SPLIT_STREAM);
    let mut out: Vec<Entry> = entries.iter().cloned().map(|e| Entry { split: None, ..e }).collect();
    let mut deficit = [0.0f64; 3];
    for label in 0..=1u8 {
        let mut members: Vec<usize> = (0..out.len()).filter(|&i| out[i].label == label).collect();
        if members.len() < 3 {
            return contract(format!("class {label} has {} entries; at least 3 are needed", members.len()));
        }
        rng.fork(label as u64).shuffle(&mut members);
        let n = members.len();
        let scores: Vec<f64> = Split::FRACTIONS.iter().zip(&deficit).map(|(f, d)| f * n as f64 + d).collect();
        let sizes = apportion(&scores, n);
        for (k, d) in deficit.iter_mut().enumerate() {
            *d = scores[k] - sizes[k] as f64;
        }
        let mut it = members.into_iter();
        for (split, size) in Split::ALL.into_iter().zip(sizes) {
            for i in it.by_ref().take(size) {
                out[i].split = Some(split);
            }
        }
    }
    Ok(DatasetManifest { entries: out, split_seed: Some(seed) })
}
