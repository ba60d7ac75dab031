//! ADADELTA training with weight decay, deterministic scheduling, and
//! checkpointing.
//!
//! The update, per parameter element with gradient `g`:
//!
//! ```text
//! g'      = g + weight_decay·param          (decay on conv/fc weights only)
//! E[g²]   ← ρ·E[g²] + (1−ρ)·g'²
//! Δx      = −( sqrt(E[Δx²]+ε) / sqrt(E[g²]+ε) )·g'
//! E[Δx²]  ← ρ·E[Δx²] + (1−ρ)·Δx²
//! param   ← param + lr·Δx
//! ```
//!
//! Epoch shuffles are pure functions of `(shuffle_seed, epoch)`, so a
//! resumed run replays exactly the batches an uninterrupted run would see.

use std::path::Path;

use crate::container::{Container, OptimSection};
use crate::data::{assemble_batch, epoch_batches, PatchStore, PairList, TaggedPair};
use crate::error::{Error, Result};
use crate::loss::margin_from_distances;
use crate::model::{Gradients, Model};
use crate::preprocess::{expand_training_set, AugmentTag, PreprocessPipeline, ALL_TAGS};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdadeltaConfig {
    pub rho: f64,
    pub eps: f64,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        AdadeltaConfig {
            rho: 0.9,
            eps: 1e-6,
            lr: 0.01,
            weight_decay: 0.001,
        }
    }
}

/// One parameter tensor's update, shared by every precision.
pub fn adadelta_step_slice<S: Scalar>(
    param: &mut [S],
    grad: &[S],
    eg2: &mut [S],
    edx2: &mut [S],
    cfg: &AdadeltaConfig,
    decay: bool,
) {
    debug_assert!(param.len() == grad.len() && grad.len() == eg2.len() && eg2.len() == edx2.len());
    let rho = S::from_f64(cfg.rho);
    let one_minus_rho = S::ONE - rho;
    let eps = S::from_f64(cfg.eps);
    let lr = S::from_f64(cfg.lr);
    let wd = S::from_f64(if decay { cfg.weight_decay } else { 0.0 });
    for i in 0..param.len() {
        let g = grad[i] + wd * param[i];
        eg2[i] = rho * eg2[i] + one_minus_rho * g * g;
        let dx = -((edx2[i] + eps).sqrt() / (eg2[i] + eps).sqrt()) * g;
        edx2[i] = rho * edx2[i] + one_minus_rho * dx * dx;
        param[i] += lr * dx;
    }
}

/// Per-parameter accumulators `E[g²]` and `E[Δx²]`, zero-initialized.
#[derive(Debug, Clone)]
pub struct AdadeltaState<S = f32> {
    pub cfg: AdadeltaConfig,
    eg2: Vec<Tensor<S>>,
    edx2: Vec<Tensor<S>>,
    decay: Vec<bool>,
}

impl<S: Scalar> AdadeltaState<S> {
    pub fn new(model: &Model<S>, cfg: AdadeltaConfig) -> Self {
        let mut eg2 = Vec::with_capacity(model.param_count());
        model.visit_params(|_, t| eg2.push(Tensor::zeros(t.shape())));
        let edx2 = eg2.clone();
        let decay = model.param_metas().iter().map(|m| m.decay).collect();
        AdadeltaState {
            cfg,
            eg2,
            edx2,
            decay,
        }
    }

    pub fn accumulators(&self) -> (&[Tensor<S>], &[Tensor<S>]) {
        (&self.eg2, &self.edx2)
    }
}

/// Applies one ADADELTA step to every model parameter.
pub fn adadelta_step<S: Scalar>(
    model: &mut Model<S>,
    grads: &Gradients<S>,
    state: &mut AdadeltaState<S>,
) -> Result<()> {
    if grads.len() != state.eg2.len() {
        return Err(Error::Dim(format!(
            "gradient slots ({}) do not match optimizer state ({})",
            grads.len(),
            state.eg2.len()
        )));
    }
    let mut status = Ok(());
    model.visit_params_mut(|i, param| {
        let g = grads.slot(i);
        if g.shape() != param.shape() {
            status = Err(Error::Dim(format!(
                "gradient slot {i} has shape {:?}, parameter has {:?}",
                g.shape(),
                param.shape()
            )));
            return;
        }
        adadelta_step_slice(
            param.data_mut(),
            g.data(),
            state.eg2[i].data_mut(),
            state.edx2[i].data_mut(),
            &state.cfg,
            state.decay[i],
        );
    });
    status
}

/// Training run description. `epochs` is the absolute target epoch count,
/// so resuming a checkpointed trainer with the same schedule finishes the
/// remaining epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSchedule {
    pub epochs: u64,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub margin: f64,
    /// Write a checkpoint every this many epochs (0 = never).
    pub checkpoint_every: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            epochs: 40,
            batch_size: 100,
            shuffle_seed: 0,
            margin: 1.0,
            checkpoint_every: 0,
        }
    }
}

/// What a training run consumes.
pub struct TrainData<'a> {
    pub store: &'a PatchStore,
    pub pairs: &'a PairList,
    pub pipeline: &'a PreprocessPipeline,
    /// Expand pairs with the 12 rotation/flip variants.
    pub augment: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: u64,
    pub epoch: u64,
    pub mean_loss: f64,
}

/// Model + optimizer state + progress counters; the unit of checkpointing.
pub struct Trainer {
    pub model: Model<f32>,
    pub state: AdadeltaState<f32>,
    pub schedule: TrainSchedule,
    pub epoch: u64,
    pub iteration: u64,
    pub trace: Vec<TraceRow>,
}

impl Trainer {
    pub fn new(model: Model<f32>, cfg: AdadeltaConfig, schedule: TrainSchedule) -> Result<Self> {
        if schedule.margin <= 0.0 {
            return Err(Error::Arg(format!(
                "margin must be positive, got {}",
                schedule.margin
            )));
        }
        if schedule.batch_size < 2 {
            return Err(Error::Arg(
                "batch size must be at least 2 (batch statistics)".into(),
            ));
        }
        let state = AdadeltaState::new(&model, cfg);
        Ok(Trainer {
            model,
            state,
            schedule,
            epoch: 0,
            iteration: 0,
            trace: Vec::new(),
        })
    }

    /// Runs epochs `self.epoch..schedule.epochs`. Deterministic given the
    /// seeds; aborts with diagnostics on a non-finite loss.
    pub fn run(&mut self, data: &TrainData<'_>, checkpoint_dir: Option<&Path>, metadata: &str) -> Result<()> {
        data.pairs.require_train("training")?;
        let tags: &[AugmentTag] = if data.augment {
            &ALL_TAGS
        } else {
            std::slice::from_ref(&AugmentTag::IDENTITY)
        };
        let stream: Vec<TaggedPair> = expand_training_set(&data.pairs.pairs, tags);
        if stream.is_empty() {
            return Err(Error::Arg("training needs a non-empty pair list".into()));
        }
        let margin = self.schedule.margin as f32;
        while self.epoch < self.schedule.epochs {
            let epoch = self.epoch;
            let batches = epoch_batches(
                stream.len(),
                self.schedule.batch_size,
                self.schedule.shuffle_seed,
                epoch,
                true,
            );
            for rows in &batches {
                let batch = assemble_batch::<f32>(&stream, rows, data.store, data.pipeline);
                let (loss, grads) = self.model.siamese_forward_backward(
                    &batch.x1,
                    &batch.x2,
                    &batch.labels,
                    margin,
                )?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss {loss} at iteration {} (epoch {epoch}, batch rows {:?})",
                        self.iteration, rows
                    )));
                }
                adadelta_step(&mut self.model, &grads, &mut self.state)?;
                self.trace.push(TraceRow {
                    iteration: self.iteration,
                    epoch,
                    mean_loss: loss as f64,
                });
                self.iteration += 1;
            }
            self.epoch += 1;
            if self.schedule.checkpoint_every > 0
                && self.epoch % self.schedule.checkpoint_every == 0
            {
                if let Some(dir) = checkpoint_dir {
                    std::fs::create_dir_all(dir)?;
                    self.save_checkpoint(
                        &dir.join(format!("checkpoint-epoch{:04}.pdck", self.epoch)),
                        metadata,
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Model container plus optimizer section; the round-trip is bit-exact.
    pub fn save_checkpoint(&self, path: &Path, metadata: &str) -> Result<()> {
        let mut container = self.model.to_container(metadata);
        let metas = self.model.param_metas();
        let mut tensors = Vec::with_capacity(metas.len() * 2);
        for (i, m) in metas.iter().enumerate() {
            tensors.push((format!("{}.eg2", m.name), self.state.eg2[i].clone()));
            tensors.push((format!("{}.edx2", m.name), self.state.edx2[i].clone()));
        }
        container.optim = Some(OptimSection {
            rho: self.state.cfg.rho,
            eps: self.state.cfg.eps,
            lr: self.state.cfg.lr,
            weight_decay: self.state.cfg.weight_decay,
            epoch: self.epoch,
            iteration: self.iteration,
            margin: self.schedule.margin,
            tensors,
        });
        container.write(path)
    }

    /// Restores a checkpoint. The schedule supplies run configuration
    /// (epoch target, batching, seeds); margin and optimizer
    /// hyperparameters come from the file so the resumed run cannot
    /// diverge from the saved one.
    pub fn load_checkpoint(path: &Path, mut schedule: TrainSchedule) -> Result<(Self, String)> {
        let container = Container::read(path)?;
        let optim = container
            .optim
            .clone()
            .ok_or_else(|| Error::Format("not a checkpoint: optimizer section missing".into()))?;
        let model = Model::from_container(&container)?;
        let cfg = AdadeltaConfig {
            rho: optim.rho,
            eps: optim.eps,
            lr: optim.lr,
            weight_decay: optim.weight_decay,
        };
        let mut state = AdadeltaState::new(&model, cfg);
        let by_name: std::collections::HashMap<&str, &Tensor<f32>> = optim
            .tensors
            .iter()
            .map(|(n, t)| (n.as_str(), t))
            .collect();
        for (i, m) in model.param_metas().iter().enumerate() {
            for (suffix, slot) in [("eg2", &mut state.eg2[i]), ("edx2", &mut state.edx2[i])] {
                let name = format!("{}.{suffix}", m.name);
                let t = by_name.get(name.as_str()).ok_or_else(|| {
                    Error::Format(format!("checkpoint missing accumulator `{name}`"))
                })?;
                if t.shape() != slot.shape() {
                    return Err(Error::Format(format!(
                        "accumulator `{name}` has shape {:?}, expected {:?}",
                        t.shape(),
                        slot.shape()
                    )));
                }
                *slot = (*t).clone();
            }
        }
        schedule.margin = optim.margin;
        Ok((
            Trainer {
                model,
                state,
                schedule,
                epoch: optim.epoch,
                iteration: optim.iteration,
                trace: Vec::new(),
            },
            container.metadata,
        ))
    }

    /// Loss trace as CSV (`iteration,epoch,mean_loss`), with `#`-prefixed
    /// metadata lines.
    pub fn trace_csv(&self, metadata: &str) -> String {
        let mut out = String::new();
        for line in metadata.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out.push_str("iteration,epoch,mean_loss\n");
        for row in &self.trace {
            out.push_str(&format!("{},{},{}\n", row.iteration, row.epoch, row.mean_loss));
        }
        out
    }
}

/// Batch-statistics calibration over the first `n_batches` unaugmented
/// training batches; both pair members feed the statistics, matching what
/// the training forward sees.
pub fn calibrate_on_pairs(
    model: &mut Model<f32>,
    store: &PatchStore,
    pairs: &PairList,
    pipeline: &PreprocessPipeline,
    n_batches: usize,
    batch_size: usize,
) -> Result<()> {
    pairs.require_train("batch-statistics calibration")?;
    let stream: Vec<TaggedPair> = pairs
        .pairs
        .iter()
        .map(|&pair| TaggedPair {
            pair,
            tag: AugmentTag::IDENTITY,
        })
        .collect();
    if stream.is_empty() {
        return Err(Error::Arg("calibration needs a non-empty pair list".into()));
    }
    let (h, w) = model.input_hw();
    let mut batches = Vec::new();
    let mut row = 0;
    for _ in 0..n_batches {
        if row >= stream.len() {
            break;
        }
        let hi = (row + batch_size).min(stream.len());
        let rows: Vec<usize> = (row..hi).collect();
        let b = assemble_batch::<f32>(&stream, &rows, store, pipeline);
        let n = rows.len();
        let mut stacked = Tensor::zeros(&[2 * n, 1, h, w]);
        stacked.data_mut()[..n * h * w].copy_from_slice(b.x1.data());
        stacked.data_mut()[n * h * w..].copy_from_slice(b.x2.data());
        batches.push(stacked);
        row = hi;
    }
    model.calibrate_batch_stats(&batches)
}

/// The margin heuristic over a training pair list: twice the mean
/// descriptor distance of up to `sample_cap` unaugmented pairs, measured on
/// the untrained model.
pub fn auto_margin(
    model: &Model<f32>,
    store: &PatchStore,
    pairs: &PairList,
    pipeline: &PreprocessPipeline,
    sample_cap: usize,
) -> Result<f64> {
    pairs.require_train("margin estimation")?;
    let n = pairs.len().min(if sample_cap == 0 { pairs.len() } else { sample_cap });
    if n == 0 {
        return Err(Error::Arg("margin estimation needs a non-empty sample".into()));
    }
    let stream: Vec<TaggedPair> = pairs.pairs[..n]
        .iter()
        .map(|&pair| TaggedPair {
            pair,
            tag: AugmentTag::IDENTITY,
        })
        .collect();
    let mut distances = Vec::with_capacity(n);
    let chunk = 64;
    let mut row = 0;
    while row < n {
        let hi = (row + chunk).min(n);
        let rows: Vec<usize> = (row..hi).collect();
        let batch = assemble_batch::<f32>(&stream, &rows, store, pipeline);
        let d1 = model.describe(&batch.x1)?;
        let d2 = model.describe(&batch.x2)?;
        let dim = d1.shape()[1];
        for i in 0..rows.len() {
            let dist = crate::loss::pair_distance(
                &d1.data()[i * dim..(i + 1) * dim],
                &d2.data()[i * dim..(i + 1) * dim],
            )?;
            distances.push(dist as f64);
        }
        row = hi;
    }
    margin_from_distances(&distances)
}
