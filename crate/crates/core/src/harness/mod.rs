//! Training runs, the preset mix-and-match matrix, and sample grids.

mod grid;
mod matrix;
mod params;

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use crate::data::{make_batches, Dataset};
use crate::error::{shape_err, Error, Result};
use crate::models::{train_step, ProcessKind, StepMetrics};
use crate::rng::RngStream;
use crate::spec::{Pairing, ResolvedModel};

pub use grid::{encode_png, sample_grid, write_sample_grid, SampleGrid};
pub use matrix::{format_sig, run_matrix, MatrixOptions, MatrixReport, MatrixRow, RowStatus, MATRIX_GENERATORS, MATRIX_DISCRIMINATORS};
pub use params::{load_params, save_params};

pub const REPORT_VERSION: &str = "1";

/// Substream ids under the run seed. Initialization uses
/// [`crate::spec::INIT_STREAM`].
pub const SHUFFLE_STREAM: u64 = 2;
pub const NOISE_STREAM: u64 = 3;
pub const SAMPLE_STREAM: u64 = 4;

/// One completed training step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepEvent {
    /// 1-based.
    pub epoch: usize,
    /// 1-based within the epoch.
    pub step: usize,
    pub batch_size: usize,
    pub metrics: StepMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Arithmetic mean over the epoch's steps.
    pub gen_loss: f64,
    pub disc_loss: f64,
    pub steps: usize,
    pub wall_seconds: f64,
}

/// Receives progress during [`train`] and can request cancellation.
pub trait MetricSink {
    fn on_step(&mut self, _event: &StepEvent) {}
    fn on_epoch(&mut self, _stats: &EpochStats) {}
    /// Polled before every step.
    fn cancelled(&self) -> bool {
        false
    }
}

impl MetricSink for () {}

/// Keeps every event in memory.
#[derive(Clone, Debug, Default)]
pub struct Recorder {
    pub steps: Vec<StepEvent>,
    pub epochs: Vec<EpochStats>,
}

impl MetricSink for Recorder {
    fn on_step(&mut self, event: &StepEvent) {
        self.steps.push(event.clone());
    }

    fn on_epoch(&mut self, stats: &EpochStats) {
        self.epochs.push(stats.clone());
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub generator: String,
    pub discriminator: String,
    pub process: ProcessKind,
    pub seed: u64,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub pairing: Pairing,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainingReport {
    pub report_version: &'static str,
    pub config: ConfigEcho,
    pub epochs: Vec<EpochStats>,
    pub total_steps: usize,
    /// Where the trained generator was saved, once it has been.
    pub generator_params: Option<PathBuf>,
}

impl TrainingReport {
    pub fn final_gen_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.gen_loss)
    }

    pub fn final_disc_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.disc_loss)
    }

    /// Total epoch wall time divided by the epoch count.
    pub fn avg_epoch_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.wall_seconds).sum::<f64>() / self.epochs.len().max(1) as f64
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn check_dataset(model: &ResolvedModel, ds: &Dataset) -> Result<()> {
    if ds.data_shape() != model.data_shape.as_slice() {
        return shape_err(format!("dataset samples are {:?} but the model expects {:?}", ds.data_shape(), model.data_shape));
    }
    let needs_labels = model.conditioning.is_some() || model.process.kind == ProcessKind::Conditional;
    if needs_labels {
        let count = model.conditioning.map_or(model.process.label_count, |c| c.label_count);
        let labels = ds.labels.as_ref().ok_or_else(|| Error::Contract("conditional training needs a labels file".into()))?;
        if let Some(bad) = labels.iter().find(|&&l| l >= count) {
            return Err(Error::Contract(format!("label {bad} is outside [0, {count})")));
        }
    }
    Ok(())
}

/// Runs `epochs` passes over `ds` (shuffled per epoch), one
/// [`train_step`] per batch. Deterministic for a fixed model seed.
///
/// A non-finite loss aborts with [`Error::Numeric`] naming the epoch and
/// step; a cancelled sink aborts with [`Error::Cancelled`].
pub fn train(model: &mut ResolvedModel, ds: &Dataset, epochs: usize, sink: &mut dyn MetricSink) -> Result<TrainingReport> {
    run(model, ds, epochs, None, sink)
}

/// Like [`train`], but stops after exactly `steps` steps; the last epoch
/// may be partial and its means cover only the steps it ran.
pub fn train_steps(model: &mut ResolvedModel, ds: &Dataset, steps: usize, sink: &mut dyn MetricSink) -> Result<TrainingReport> {
    let per_epoch = ds.len().div_ceil(model.batch_size.max(1));
    run(model, ds, steps.div_ceil(per_epoch.max(1)), Some(steps), sink)
}

fn run(model: &mut ResolvedModel, ds: &Dataset, epochs: usize, limit: Option<usize>, sink: &mut dyn MetricSink) -> Result<TrainingReport> {
    check_dataset(model, ds)?;
    let root = RngStream::new(model.seed);
    let mut shuffle = root.substream(SHUFFLE_STREAM);
    let mut noise = root.substream(NOISE_STREAM);
    let process = model.process.clone();
    let mut report = TrainingReport {
        report_version: REPORT_VERSION,
        config: ConfigEcho {
            generator: model.pairing.generator.clone(),
            discriminator: model.pairing.discriminator.clone(),
            process: process.kind,
            seed: model.seed,
            batch_size: model.batch_size,
            latent_dim: model.latent_dim,
            pairing: model.pairing.clone(),
        },
        epochs: Vec::with_capacity(epochs),
        total_steps: 0,
        generator_params: None,
    };
    for epoch in 1..=epochs {
        let start = Instant::now();
        let batches = make_batches(ds, model.batch_size, &mut shuffle, true)?;
        let (mut gen_sum, mut disc_sum) = (0.0, 0.0);
        let budget = limit.map_or(batches.len(), |l| (l - report.total_steps).min(batches.len()));
        for (i, batch) in batches.iter().take(budget).enumerate() {
            if sink.cancelled() {
                return Err(Error::Cancelled);
            }
            let step = i + 1;
            let metrics = train_step(&process, model, &batch.images, batch.labels.as_deref(), &mut noise).map_err(|e| match e {
                Error::Numeric { what, .. } => Error::Numeric { epoch, step, what },
                other => other,
            })?;
            gen_sum += metrics.gen_loss;
            disc_sum += metrics.disc_loss;
            report.total_steps += 1;
            sink.on_step(&StepEvent { epoch, step, batch_size: batch.indices.len(), metrics });
        }
        let steps = budget;
        let stats = EpochStats {
            epoch,
            gen_loss: gen_sum / steps as f64,
            disc_loss: disc_sum / steps as f64,
            steps,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        sink.on_epoch(&stats);
        report.epochs.push(stats);
    }
    Ok(report)
}
