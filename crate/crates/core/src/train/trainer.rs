use xlm_tensor::{Float, RngStream, Tensor};

use super::data::Dataset;
use super::loss::bce_loss;
use super::metrics::MetricsReport;
use super::optim::{OptimConfig, Optimizer, OptimizerKind};
use super::schedule::OneCycle;
use super::swa::{swa_start_epoch, Swa};
use crate::error::{config, contract, Result};
use crate::harness::kv::KvMap;
use crate::head::{nc_metrics, NcReport};
use crate::model::{Mode, Model};
use crate::params::Session;

const ORDER_STREAM: u64 = 11;
const NOISE_STREAM: u64 = 12;

pub const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "optimizer",
    "momentum",
    "lr",
    "pct_start",
    "div_factor",
    "final_div_factor",
    "weight_decay",
    "swa_start",
    "nc_samples",
    "eval_batch",
];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    /// Peak learning rate of the one-cycle schedule.
    pub max_lr: f64,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    /// Fraction of epochs before averaging starts; 1 or more disables SWA.
    pub swa_start: f64,
    /// Training examples used for the collapse diagnostics.
    pub nc_samples: usize,
    pub eval_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            optim: OptimConfig::default(),
            max_lr: 1e-5,
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
            swa_start: 0.75,
            nc_samples: 512,
            eval_batch: 128,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale recipe for the 64x64 synthetic task.
    pub fn desk() -> Self {
        Self { epochs: 30, batch_size: 32, max_lr: 3e-3, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch == 0 {
            return config("epochs, batch_size and eval_batch must be positive");
        }
        if !(self.swa_start > 0.0) {
            return config(format!("swa_start {} must be positive", self.swa_start));
        }
        self.optim.validate()?;
        self.schedule(1).map(|_| ())
    }

    pub fn schedule(&self, total_steps: usize) -> Result<OneCycle> {
        OneCycle {
            total_steps,
            max_lr: self.max_lr,
            pct_start: self.pct_start,
            div_factor: self.div_factor,
            final_div_factor: self.final_div_factor,
        }
        .validated()
    }

    pub fn apply_kv(&mut self, kv: &KvMap) -> Result<()> {
        self.epochs = kv.parse_or("epochs", self.epochs)?;
        self.batch_size = kv.parse_or("batch_size", self.batch_size)?;
        self.optim.kind = kv.parse_or("optimizer", self.optim.kind)?;
        self.optim.momentum = kv.parse_or("momentum", self.optim.momentum)?;
        self.optim.weight_decay = kv.parse_or("weight_decay", self.optim.weight_decay)?;
        self.max_lr = kv.parse_or("lr", self.max_lr)?;
        self.pct_start = kv.parse_or("pct_start", self.pct_start)?;
        self.div_factor = kv.parse_or("div_factor", self.div_factor)?;
        self.final_div_factor = kv.parse_or("final_div_factor", self.final_div_factor)?;
        self.swa_start = kv.parse_or("swa_start", self.swa_start)?;
        self.nc_samples = kv.parse_or("nc_samples", self.nc_samples)?;
        self.eval_batch = kv.parse_or("eval_batch", self.eval_batch)?;
        self.validate()
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("optimizer", self.optim.kind);
        kv.set("momentum", self.optim.momentum);
        kv.set("weight_decay", self.optim.weight_decay);
        kv.set("lr", self.max_lr);
        kv.set("pct_start", self.pct_start);
        kv.set("div_factor", self.div_factor);
        kv.set("final_div_factor", self.final_div_factor);
        kv.set("swa_start", self.swa_start);
        kv.set("nc_samples", self.nc_samples);
        kv.set("eval_batch", self.eval_batch);
        kv
    }

    pub fn is_sgd(&self) -> bool {
        self.optim.kind == OptimizerKind::Sgd
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    /// Learning rate used by each optimizer step of the epoch.
    pub lrs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Learning rate of the last step in the epoch.
    pub lr: f64,
    pub val_accuracy: f64,
    pub val_f1: f64,
}

impl EpochLog {
    pub fn to_line(&self) -> String {
        format!(
            "epoch={} mean_loss={} lr={} val_accuracy={} val_f1={}",
            self.epoch, self.mean_loss, self.lr, self.val_accuracy, self.val_f1
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub logs: Vec<EpochLog>,
    pub lr_trace: Vec<f64>,
    pub nc_first: NcReport,
    pub nc_last: NcReport,
    pub swa_snapshots: usize,
}

/// Random streams owned by a training run.
#[derive(Clone, Debug)]
pub struct TrainRng {
    pub order: RngStream,
    pub noise: RngStream,
}

impl TrainRng {
    pub fn new(seed: u64) -> Self {
        Self { order: RngStream::with_stream(seed, ORDER_STREAM), noise: RngStream::with_stream(seed, NOISE_STREAM) }
    }
}

pub fn steps_per_epoch(examples: usize, batch_size: usize) -> usize {
    examples.div_ceil(batch_size)
}

/// One pass over `data` in a shuffled order, one optimizer step per batch.
/// `step` is the global schedule position and is advanced per batch.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch<T: Float>(
    model: &mut Model<T>,
    data: &Dataset<T>,
    opt: &mut Optimizer<T>,
    sched: &OneCycle,
    step: &mut usize,
    batch_size: usize,
    rng: &mut TrainRng,
) -> Result<EpochStats> {
    if data.is_empty() {
        return contract("training on an empty dataset");
    }
    if model.mode != Mode::Train {
        return contract("train_epoch needs a model in train mode");
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    rng.order.shuffle(&mut order);
    let mut total = 0.0;
    let mut lrs = Vec::with_capacity(order.len().div_ceil(batch_size));
    for idx in order.chunks(batch_size) {
        let (x, labels) = data.batch(idx)?;
        let mut s = Session::new(&model.store, true);
        let xv = s.g.constant(x);
        let out = model.forward(&mut s, xv, &mut rng.noise)?;
        let loss = bce_loss(&mut s.g, out.logits, &labels)?;
        let value = s.g.value(loss).item().as_f64();
        if !value.is_finite() {
            return contract(format!("non-finite loss at step {}", *step));
        }
        total += value * idx.len() as f64;
        let (_, grads) = s.param_grads(&model.store, loss)?;
        drop(s);
        let lr = sched.lr(*step)?;
        opt.step(&mut model.store, &grads, lr)?;
        lrs.push(lr);
        *step += 1;
    }
    Ok(EpochStats { mean_loss: total / data.len() as f64, lrs })
}

/// Predicted classes for every example, in order.
pub fn predict_all<T: Float>(model: &Model<T>, data: &Dataset<T>, batch: usize) -> Result<Vec<usize>> {
    let mut rng = RngStream::new(0);
    let mut out = Vec::with_capacity(data.len());
    for idx in data.chunks(batch) {
        let (x, _) = data.batch(&idx)?;
        let logits = model.predict(&x, &mut rng)?;
        let k = logits.shape()[1];
        out.extend(logits.data().chunks(k).map(argmax));
    }
    Ok(out)
}

fn argmax<T: Float>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate<T: Float>(model: &Model<T>, data: &Dataset<T>, batch: usize) -> Result<MetricsReport> {
    if data.is_empty() {
        return contract("evaluating an empty dataset");
    }
    if model.mode != Mode::Eval {
        return contract("evaluate needs a model in eval mode");
    }
    let predicted = predict_all(model, data, batch)?;
    MetricsReport::from_predictions(&predicted, data.labels())
}

/// Penultimate features (as seen by the final head layer) and logits.
pub fn penultimate_features<T: Float>(
    model: &Model<T>,
    data: &Dataset<T>,
    batch: usize,
) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let mut rng = RngStream::new(0);
    let (mut feats, mut logits) = (Vec::new(), Vec::new());
    let mut width = (0, 0);
    for idx in data.chunks(batch) {
        let (x, _) = data.batch(&idx)?;
        let (l, _, p) = model.embed(&x, &mut rng)?;
        width = (p.shape()[1], l.shape()[1]);
        feats.extend(p.to_f64_vec());
        logits.extend(l.to_f64_vec());
    }
    Ok((Tensor::new(&[data.len(), width.0], feats)?, Tensor::new(&[data.len(), width.1], logits)?))
}

/// Up to `samples` indices, taking the first examples of each class in turn.
pub fn balanced_indices(labels: &[usize], samples: usize) -> Vec<usize> {
    let classes = labels.iter().max().map_or(0, |&l| l + 1);
    let mut per: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        per[l].push(i);
    }
    let mut out = Vec::with_capacity(samples.min(labels.len()));
    for round in 0.. {
        let before = out.len();
        for p in &per {
            if out.len() < samples && round < p.len() {
                out.push(p[round]);
            }
        }
        if out.len() == before {
            break;
        }
    }
    out.sort_unstable();
    out
}

/// Collapse diagnostics at the penultimate layer over a class-balanced
/// subset of `data`.
pub fn penultimate_nc<T: Float>(model: &Model<T>, data: &Dataset<T>, samples: usize, batch: usize) -> Result<NcReport> {
    let sub = data.subset(&balanced_indices(data.labels(), samples))?;
    let (feats, _) = penultimate_features(model, &sub, batch)?;
    nc_metrics(&feats, sub.labels(), None, model.final_classifier().as_ref())
}

/// Full run: one-cycle schedule over all steps, validation after each
/// epoch, collapse diagnostics after the first and last epochs, and SWA
/// over the trailing epochs. The model is left in eval mode holding the
/// averaged weights when any snapshot was taken.
pub fn train<T: Float>(
    model: &mut Model<T>,
    data: &Dataset<T>,
    val: Option<&Dataset<T>>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return contract("training on an empty dataset");
    }
    let total = cfg.epochs * steps_per_epoch(data.len(), cfg.batch_size);
    let sched = cfg.schedule(total)?;
    let mut opt = Optimizer::new(cfg.optim, &model.store)?;
    let mut rng = TrainRng::new(cfg.seed);
    let mut swa = Swa::new(swa_start_epoch(cfg.epochs, cfg.swa_start));
    let mut step = 0;
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut lr_trace = Vec::with_capacity(total);
    let (mut nc_first, mut nc_last) = (None, None);
    for epoch in 1..=cfg.epochs {
        model.set_mode(Mode::Train);
        let stats = train_epoch(model, data, &mut opt, &sched, &mut step, cfg.batch_size, &mut rng)?;
        model.set_mode(Mode::Eval);
        let (val_accuracy, val_f1) = match val {
            Some(v) if !v.is_empty() => {
                let m = evaluate(model, v, cfg.eval_batch)?;
                (m.accuracy, m.f1)
            }
            _ => (f64::NAN, f64::NAN),
        };
        if epoch == 1 || epoch == cfg.epochs {
            let nc = penultimate_nc(model, data, cfg.nc_samples, cfg.eval_batch)?;
            if epoch == 1 {
                nc_first = Some(nc.clone());
            }
            if epoch == cfg.epochs {
                nc_last = Some(nc);
            }
        }
        if swa.active(epoch) {
            swa.update(&model.store)?;
        }
        let log =
            EpochLog { epoch, mean_loss: stats.mean_loss, lr: *stats.lrs.last().unwrap_or(&0.0), val_accuracy, val_f1 };
        on_epoch(&log);
        logs.push(log);
        lr_trace.extend(stats.lrs);
    }
    if swa.count() > 0 {
        model.store = swa.finalize(&model.store)?;
    }
    model.set_mode(Mode::Eval);
    Ok(TrainOutcome {
        logs,
        lr_trace,
        nc_first: nc_first.expect("epoch 1 ran"),
        nc_last: nc_last.expect("final epoch ran"),
        swa_snapshots: swa.count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_subset_alternates_classes() {
        assert_eq!(balanced_indices(&[0, 0, 0, 1, 1], 4), vec![0, 1, 3, 4]);
        assert_eq!(balanced_indices(&[0, 0, 0, 1], 10), vec![0, 1, 2, 3]);
    }
}
