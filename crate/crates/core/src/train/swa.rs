use xlm_tensor::{Float, Tensor};

use crate::error::{contract, Result};
use crate::params::ParamStore;

/// Running arithmetic mean of parameter snapshots, accumulated in f64.
#[derive(Clone, Debug)]
pub struct Swa {
    pub start_epoch: usize,
    avg: Vec<Vec<f64>>,
    count: usize,
}

/// First 1-based epoch whose end-of-epoch weights are averaged.
pub fn swa_start_epoch(epochs: usize, fraction: f64) -> usize {
    (fraction * epochs as f64).floor() as usize + 1
}

impl Swa {
    pub fn new(start_epoch: usize) -> Self {
        Self { start_epoch, avg: Vec::new(), count: 0 }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn active(&self, epoch: usize) -> bool {
        epoch >= self.start_epoch
    }

    pub fn update<T: Float>(&mut self, store: &ParamStore<T>) -> Result<()> {
        if self.count == 0 {
            self.avg = store.iter().map(|(_, p)| p.value.to_f64_vec()).collect();
        } else {
            if self.avg.len() != store.len() {
                return contract("parameter set changed between SWA updates");
            }
            let n = self.count as f64;
            for (a, (_, p)) in self.avg.iter_mut().zip(store.iter()) {
                if a.len() != p.value.numel() {
                    return contract(format!("{} changed size between SWA updates", p.name));
                }
                for (ai, &w) in a.iter_mut().zip(p.value.data()) {
                    *ai = (*ai * n + w.as_f64()) / (n + 1.0);
                }
            }
        }
        self.count += 1;
        Ok(())
    }

    /// Copy of `store` with trainable values replaced by the average.
    pub fn finalize<T: Float>(&self, store: &ParamStore<T>) -> Result<ParamStore<T>> {
        if self.count == 0 {
            return contract("SWA finalize before any update");
        }
        let mut out = store.clone();
        for (id, a) in store.ids().zip(&self.avg) {
            if out.get(id).trainable {
                let shape = out.value(id).shape().to_vec();
                out.set(id, Tensor::from_fn(&shape, |i| T::c(a[i])))?;
            }
        }
        Ok(out)
    }
}
