//! Shared path from a spec to trained artifacts, used by `train` and by the
//! service's job workers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gan_core::data::{load_dataset, write_atomic, Dataset};
use gan_core::harness::{save_params, train, write_sample_grid, MetricSink, StepEvent, TrainingReport, SAMPLE_STREAM};
use gan_core::spec::{resolve, GanSpec, ResolvedModel};
use gan_core::{Result, RngStream};
use serde::Deserialize;

pub const REPORT_FILE: &str = "report.json";
pub const STEPS_FILE: &str = "steps.csv";
pub const SAMPLES_FILE: &str = "samples.png";
pub const GENERATOR_FILE: &str = "generator.json";

/// Command-line or request-level replacements for `GAN_model` fields.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub epochs: Option<u64>,
    pub seed: Option<u64>,
    pub batch_size: Option<u64>,
    /// Train on the first `limit` samples only.
    pub limit: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, spec: &mut GanSpec) {
        let m = &mut spec.gan_model;
        m.epochs = self.epochs.or(m.epochs);
        m.seed = self.seed.or(m.seed);
        m.batch_size = self.batch_size.or(m.batch_size);
    }
}

fn under(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads the spec's data (paths relative to `base`), truncated to `limit`.
pub fn load_data(spec: &GanSpec, base: &Path, limit: Option<usize>) -> Result<Dataset> {
    let labels = spec.labels_path.as_deref().map(|l| under(base, l));
    let ds = load_dataset(&under(base, &spec.data_path), labels.as_deref())?;
    Ok(match limit {
        Some(n) => ds.take(n),
        None => ds,
    })
}

/// Applies overrides, loads data and resolves the model against it.
pub fn prepare(spec: &GanSpec, base: &Path, overrides: &Overrides) -> Result<(ResolvedModel, Dataset)> {
    let mut spec = spec.clone();
    overrides.apply(&mut spec);
    let data = load_data(&spec, base, overrides.limit)?;
    let model = resolve(&spec, data.data_shape())?;
    Ok((model, data))
}

/// Per-step losses in training order, forwarding to an inner sink.
struct StepLog<'a> {
    csv: String,
    inner: &'a mut dyn MetricSink,
}

impl MetricSink for StepLog<'_> {
    fn on_step(&mut self, e: &StepEvent) {
        // `{}` prints the shortest representation that round-trips exactly.
        let _ = writeln!(self.csv, "{},{},{},{}", e.epoch, e.step, e.metrics.gen_loss, e.metrics.disc_loss);
        self.inner.on_step(e);
    }

    fn on_epoch(&mut self, stats: &gan_core::harness::EpochStats) {
        self.inner.on_epoch(stats);
    }

    fn cancelled(&self) -> bool {
        self.inner.cancelled()
    }
}

/// Trains for `model.epochs` and writes, under `out`: `steps.csv`,
/// `generator.json`, `samples.png` (image data only) and finally
/// `report.json`. Every file is written then renamed into place, so an
/// aborted run leaves no report.
pub fn train_to_dir(model: &mut ResolvedModel, data: &Dataset, out: &Path, samples: usize, sink: &mut dyn MetricSink) -> Result<TrainingReport> {
    fs::create_dir_all(out)?;
    let mut log = StepLog { csv: String::from("epoch,step,gen_loss,disc_loss\n"), inner: sink };
    let epochs = model.epochs;
    let mut report = train(model, data, epochs, &mut log)?;
    write_atomic(&out.join(STEPS_FILE), log.csv.as_bytes())?;
    save_params(&model.generator, &out.join(GENERATOR_FILE))?;
    report.generator_params = Some(PathBuf::from(GENERATOR_FILE));
    if model.data_shape.len() == 3 && samples > 0 {
        let mut rng = RngStream::new(model.seed).substream(SAMPLE_STREAM);
        write_sample_grid(model, samples, &mut rng, &out.join(SAMPLES_FILE))?;
    }
    write_atomic(&out.join(REPORT_FILE), report.to_json_string().as_bytes())?;
    Ok(report)
}
