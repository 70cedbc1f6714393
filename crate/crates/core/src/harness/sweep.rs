//! One-axis ablation runs over a shared base configuration.

use std::fmt;
use std::str::FromStr;

use xlm_tensor::{Float, RngStream};

use crate::error::{config, CoreError, Result};
use crate::head::{HeadConfig, HeadPreset};
use crate::model::{count_parameters, Model, ModelConfig};
use crate::train::{evaluate, train, Dataset, MetricsReport, OptimizerKind, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Momentum,
    Lr,
    Optimizer,
    HeadConfig,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Momentum => "momentum",
            SweepAxis::Lr => "lr",
            SweepAxis::Optimizer => "optimizer",
            SweepAxis::HeadConfig => "head_config",
        }
    }

    /// Grid used when no values are given.
    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            SweepAxis::Momentum => &["0.8", "0.85", "0.9", "0.95", "0.99", "1.0"],
            SweepAxis::Lr => &["1e-7", "1e-6", "1e-5", "1e-4", "1e-3"],
            SweepAxis::Optimizer => &["sgd", "adam", "adamw"],
            SweepAxis::HeadConfig => &["3L2FNO", "AllFNO", "3L2Hadamard", "AllHadamard"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    /// Base configurations with `value` applied along this axis.
    pub fn apply(self, value: &str, model: &ModelConfig, run: &TrainConfig) -> Result<(ModelConfig, TrainConfig)> {
        let (mut m, mut t) = (model.clone(), run.clone());
        let bad = |e: &dyn fmt::Display| CoreError::Config(format!("{} value {value:?}: {e}", self.name()));
        match self {
            SweepAxis::Momentum => t.optim.momentum = value.parse().map_err(|e| bad(&e))?,
            SweepAxis::Lr => t.max_lr = value.parse().map_err(|e| bad(&e))?,
            SweepAxis::Optimizer => t.optim.kind = value.parse::<OptimizerKind>().map_err(|e| bad(&e))?,
            SweepAxis::HeadConfig => {
                let preset: HeadPreset = value.parse().map_err(|e| bad(&e))?;
                m.head = HeadConfig::preset(preset, &m.head.widths())?;
            }
        }
        m.validate().map_err(|e| bad(&e))?;
        t.validate().map_err(|e| bad(&e))?;
        Ok((m, t))
    }
}

impl FromStr for SweepAxis {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "momentum" => Ok(SweepAxis::Momentum),
            "lr" => Ok(SweepAxis::Lr),
            "optimizer" => Ok(SweepAxis::Optimizer),
            "head_config" | "head" => Ok(SweepAxis::HeadConfig),
            other => config(format!("unknown sweep axis {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub report: MetricsReport,
    pub param_count: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Values that were skipped, with the reason.
    pub failures: Vec<(String, String)>,
}

pub const SWEEP_HEADER: &str = "value\taccuracy\tf1\tprecision\trecall\tparam_count";

impl SweepResult {
    /// Tab-separated table with a header row.
    pub fn table(&self) -> String {
        let mut out = format!("{SWEEP_HEADER}\n");
        for r in &self.rows {
            let m = &r.report;
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.value, m.accuracy, m.f1, m.precision, m.recall, r.param_count
            ));
        }
        out
    }
}

pub struct SweepData<'a, T> {
    pub train: &'a Dataset<T>,
    pub val: Option<&'a Dataset<T>>,
    pub test: &'a Dataset<T>,
}

/// Trains and evaluates one model per value with identical seeds. Values
/// that fail to configure or train are recorded and skipped.
pub fn sweep<T: Float>(
    axis: SweepAxis,
    values: &[String],
    model: &ModelConfig,
    run: &TrainConfig,
    data: &SweepData<'_, T>,
    mut on_row: impl FnMut(&SweepRow),
) -> SweepResult {
    let mut result = SweepResult::default();
    for value in values {
        let job = || -> Result<SweepRow> {
            let (m, t) = axis.apply(value, model, run)?;
            let mut net = Model::<T>::build(&m, &mut RngStream::new(m.seed))?;
            train(&mut net, data.train, data.val, &t, |_| {})?;
            let report = evaluate(&net, data.test, t.eval_batch)?;
            Ok(SweepRow { value: value.clone(), report, param_count: count_parameters(&net).trainable })
        };
        match job() {
            Ok(row) => {
                on_row(&row);
                result.rows.push(row);
            }
            Err(e) => result.failures.push((value.clone(), e.to_string())),
        }
    }
    result
}
