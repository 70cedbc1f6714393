//! Single labelled image records.

use std::path::Path;

use xlm_tensor::{Float, Precision};

use crate::codec::{put_u16, put_u32, AnyTensor, Reader};
use crate::error::{format, CoreError, Result};

pub const TILE_MAGIC: &[u8; 4] = b"XLMT";
pub const TILE_VERSION: u16 = 1;

/// A (C,H,W) image with a binary label.
#[derive(Clone, Debug, PartialEq)]
pub struct TileFile {
    pub label: u8,
    pub data: AnyTensor,
}

impl TileFile {
    pub fn new<T: Float>(label: u8, data: &xlm_tensor::Tensor<T>) -> Result<Self> {
        let tile = Self { label, data: AnyTensor::from_typed(data) };
        tile.check()?;
        Ok(tile)
    }

    fn check(&self) -> Result<()> {
        if self.label > 1 {
            return format(format!("label {} outside {{0,1}}", self.label));
        }
        if self.data.shape().len() != 3 {
            return Err(CoreError::Dimension(format!("tile must be (C,H,W), got {:?}", self.data.shape())));
        }
        Ok(())
    }

    pub fn precision(&self) -> Precision {
        self.data.precision()
    }

    /// (C,H,W)
    pub fn dims(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[0], s[1], s[2]]
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.check()?;
        let mut out = Vec::new();
        out.extend_from_slice(TILE_MAGIC);
        put_u16(&mut out, TILE_VERSION);
        for d in self.dims() {
            put_u32(&mut out, u32::try_from(d).map_err(|_| CoreError::Format(format!("dimension {d} exceeds u32")))?);
        }
        out.push(self.label);
        out.push(self.precision().code());
        out.extend(self.data.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(TILE_MAGIC)?;
        let version = r.u16("version")?;
        if version != TILE_VERSION {
            return format(format!("version: unsupported tile version {version}"));
        }
        let dims = [r.u32("channels")? as usize, r.u32("height")? as usize, r.u32("width")? as usize];
        let label = r.u8("label")?;
        if label > 1 {
            return format(format!("label: {label} outside {{0,1}}"));
        }
        let precision = r.precision("precision")?;
        let want = dims.iter().try_fold(precision.bytes(), |acc, &d| acc.checked_mul(d));
        let Some(want) = want else {
            return format(format!("payload: dimensions {dims:?} overflow"));
        };
        if r.remaining() != want {
            return format(format!("payload: expected {want} bytes for {dims:?}, found {}", r.remaining()));
        }
        let payload = r.bytes(want, "payload")?;
        Ok(Self { label, data: AnyTensor::from_le_bytes(precision, &dims, payload)? })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            CoreError::Format(m) => CoreError::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
