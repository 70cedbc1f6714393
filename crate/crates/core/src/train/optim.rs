use std::fmt;
use std::str::FromStr;

use xlm_tensor::{Float, Tensor};

use crate::error::{config, contract, CoreError, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
    AdamW,
}

impl FromStr for OptimizerKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "adamw" => Ok(OptimizerKind::AdamW),
            other => config(format!("unknown optimizer {other:?}")),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adamw",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    /// Heavy-ball momentum for SGD.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay; used by AdamW only.
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { kind: OptimizerKind::Sgd, momentum: 0.99, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.momentum) {
            return config(format!("momentum {} outside [0,1]", self.momentum));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return config("Adam betas must lie in [0,1) and eps must be positive");
        }
        if self.weight_decay < 0.0 {
            return config("weight decay must be non-negative");
        }
        Ok(())
    }
}

/// Optimizer state; buffers exist only for trainable parameters.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    pub cfg: OptimConfig,
    /// SGD velocity or Adam first moment.
    first: Vec<Option<Vec<T>>>,
    second: Vec<Option<Vec<T>>>,
    pub steps: u64,
}

impl<T: Float> Optimizer<T> {
    pub fn new(cfg: OptimConfig, store: &ParamStore<T>) -> Result<Self> {
        cfg.validate()?;
        let buf =
            || store.iter().map(|(_, p)| p.trainable.then(|| vec![T::zero(); p.value.numel()])).collect::<Vec<_>>();
        let first = buf();
        let second = if cfg.kind == OptimizerKind::Sgd { vec![None; store.len()] } else { buf() };
        Ok(Self { cfg, first, second, steps: 0 })
    }

    /// Velocity / first-moment buffer of a parameter.
    pub fn buffer(&self, index: usize) -> Option<&[T]> {
        self.first[index].as_deref()
    }

    /// One update with learning rate `lr`; fixed parameters are skipped.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) -> Result<()> {
        if grads.len() != store.len() {
            return contract(format!("{} gradients for {} parameters", grads.len(), store.len()));
        }
        for (id, g) in store.ids().zip(grads) {
            let p = store.get(id);
            match (p.trainable, g) {
                (false, _) => continue,
                (true, None) => return contract(format!("missing gradient for {}", p.name)),
                (true, Some(g)) if g.shape() != p.value.shape() => {
                    return contract(format!("{}: gradient shape {:?} vs {:?}", p.name, g.shape(), p.value.shape()))
                }
                _ => {}
            }
        }
        self.steps += 1;
        let lr_t = T::c(lr);
        let t = self.steps as i32;
        let c = self.cfg;
        let bc1 = T::c(1.0 - c.beta1.powi(t));
        let bc2 = T::c(1.0 - c.beta2.powi(t));
        for (id, g) in store.ids().collect::<Vec<_>>().into_iter().zip(grads) {
            let Some(g) = g else { continue };
            if !store.get(id).trainable {
                continue;
            }
            let w = store.value_mut(id).data_mut();
            let m = self.first[id.index()].as_mut().expect("trainable buffer");
            match c.kind {
                OptimizerKind::Sgd => {
                    let mu = T::c(c.momentum);
                    for ((wi, vi), &gi) in w.iter_mut().zip(m.iter_mut()).zip(g.data()) {
                        *vi = mu * *vi + gi;
                        *wi -= lr_t * *vi;
                    }
                }
                OptimizerKind::Adam | OptimizerKind::AdamW => {
                    let v = self.second[id.index()].as_mut().expect("trainable buffer");
                    let (b1, b2, eps) = (T::c(c.beta1), T::c(c.beta2), T::c(c.eps));
                    let decay = if c.kind == OptimizerKind::AdamW { T::c(c.weight_decay) } else { T::zero() };
                    for (((wi, mi), vi), &gi) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                        *mi = b1 * *mi + (T::one() - b1) * gi;
                        *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *wi -= lr_t * decay * *wi;
                        *wi -= lr_t * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(trainable: bool) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(&[1]), trainable).unwrap();
        s
    }

    #[test]
    fn heavy_ball_recurrence() {
        let mut s = one_param(true);
        let cfg = OptimConfig { momentum: 0.9, ..OptimConfig::default() };
        let mut opt = Optimizer::new(cfg, &s).unwrap();
        let g = vec![Some(Tensor::ones(&[1]))];
        opt.step(&mut s, &g, 0.1).unwrap();
        assert!((s.value(crate::ParamId(0)).item() + 0.1).abs() < 1e-15);
        opt.step(&mut s, &g, 0.1).unwrap();
        assert!((opt.buffer(0).unwrap()[0] - 1.9).abs() < 1e-15);
        assert!((s.value(crate::ParamId(0)).item() + 0.29).abs() < 1e-15);
    }

    #[test]
    fn fixed_parameters_are_untouched() {
        let mut s = one_param(false);
        let mut opt = Optimizer::new(OptimConfig::default(), &s).unwrap();
        for _ in 0..100 {
            opt.step(&mut s, &[None], 0.5).unwrap();
        }
        assert_eq!(s.value(crate::ParamId(0)).item(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let mut s = one_param(true);
        let mut opt = Optimizer::new(OptimConfig::default(), &s).unwrap();
        let g = vec![Some(Tensor::ones(&[2]))];
        assert!(matches!(opt.step(&mut s, &g, 0.1), Err(CoreError::Contract(_))));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for kind in [OptimizerKind::Adam, OptimizerKind::AdamW] {
            let mut s = one_param(true);
            let mut opt = Optimizer::new(OptimConfig { kind, ..OptimConfig::default() }, &s).unwrap();
            opt.step(&mut s, &[Some(Tensor::full(&[1], 3.0))], 0.01).unwrap();
            assert!((s.value(crate::ParamId(0)).item() + 0.01).abs() < 1e-8);
        }
    }
}
