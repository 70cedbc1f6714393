use std::f64::consts::PI;

use crate::error::{config, contract, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OneCycle {
    pub total_steps: usize,
    pub max_lr: f64,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

impl OneCycle {
    pub fn new(total_steps: usize, max_lr: f64) -> Result<Self> {
        Self { total_steps, max_lr, pct_start: 0.3, div_factor: 25.0, final_div_factor: 1e4 }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.total_steps == 0 {
            return config("schedule needs at least one step");
        }
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return config(format!("max_lr {} must be positive", self.max_lr));
        }
        if !(self.pct_start > 0.0 && self.pct_start < 1.0) {
            return config(format!("pct_start {} outside (0,1)", self.pct_start));
        }
        if self.div_factor <= 1.0 || self.final_div_factor <= 1.0 {
            return config("div factors must exceed 1");
        }
        Ok(self)
    }

    pub fn initial_lr(&self) -> f64 {
        self.max_lr / self.div_factor
    }

    pub fn final_lr(&self) -> f64 {
        self.max_lr / self.final_div_factor
    }

    /// Step index of the peak (may be fractional).
    pub fn peak_step(&self) -> f64 {
        self.pct_start * self.total_steps as f64
    }

    pub fn lr(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return contract(format!("step {step} beyond total {}", self.total_steps));
        }
        let s = step as f64;
        let peak = self.peak_step();
        let anneal = |from: f64, to: f64, frac: f64| to + (from - to) * 0.5 * (1.0 + (PI * frac).cos());
        Ok(if s <= peak {
            anneal(self.initial_lr(), self.max_lr, s / peak)
        } else {
            anneal(self.max_lr, self.final_lr(), (s - peak) / (self.total_steps as f64 - peak))
        })
    }

    /// Largest possible change between consecutive steps: slope of a half
    /// cosine of amplitude Δ over the shorter phase.
    pub fn max_step_change(&self) -> f64 {
        let t = self.total_steps as f64;
        let up = (self.max_lr - self.initial_lr()) / (self.pct_start * t);
        let down = (self.max_lr - self.final_lr()) / ((1.0 - self.pct_start) * t);
        PI / 2.0 * up.max(down)
    }
}
