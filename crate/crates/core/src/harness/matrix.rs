use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::Serialize;

use crate::data::{write_atomic, Dataset};
use crate::error::{Error, Result};
use crate::spec::{resolve, GanSpec, Pairing, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS};

use super::{train, EpochStats, MetricSink, StepEvent, REPORT_VERSION};

/// Generator presets in the order of the reference comparison.
pub const MATRIX_GENERATORS: [&str; 4] = ["gan", "wgan", "wgan_gp", "dcgan"];
/// Discriminator presets in the order of the reference comparison.
pub const MATRIX_DISCRIMINATORS: [&str; 4] = ["gan", "dcgan", "wgan", "wgan_gp"];

pub const CSV_HEADER: &str = "generator,discriminator,final_gen_loss,final_disc_loss,avg_epoch_seconds,status";

#[derive(Clone, Debug)]
pub struct MatrixOptions {
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub latent_dim: Option<u64>,
    pub learning_rate: Option<f64>,
    /// Checked before every training step of every row.
    pub cancel: Option<Arc<AtomicBool>>,
}

impl Default for MatrixOptions {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            seed: 0,
            batch_size: DEFAULT_BATCH_SIZE,
            latent_dim: None,
            learning_rate: None,
            cancel: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RowStatus {
    Ok,
    NumericFailure { epoch: usize, step: usize, message: String },
    Error { message: String },
}

impl RowStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::NumericFailure { .. } => "numeric_failure",
            RowStatus::Error { .. } => "error",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatrixRow {
    /// 1-based position in the enumeration.
    pub index: usize,
    pub generator: String,
    pub discriminator: String,
    pub final_gen_loss: Option<f64>,
    pub final_disc_loss: Option<f64>,
    pub avg_epoch_seconds: Option<f64>,
    pub status: RowStatus,
    /// Which family governed losses, optimizers and process.
    pub pairing: Option<Pairing>,
    pub epochs: Vec<EpochStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatrixReport {
    pub report_version: &'static str,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dataset: String,
    pub samples: usize,
    pub rows: Vec<MatrixRow>,
}

impl MatrixReport {
    pub fn row(&self, generator: &str, discriminator: &str) -> Option<&MatrixRow> {
        self.rows.iter().find(|r| r.generator == generator && r.discriminator == discriminator)
    }

    /// Floats use 6 significant digits; failed rows leave them empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let num = |x: Option<f64>| x.map(|v| format_sig(v, 6)).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.generator,
                r.discriminator,
                num(r.final_gen_loss),
                num(r.final_disc_loss),
                num(r.avg_epoch_seconds),
                r.status.label()
            );
        }
        out
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `<stem>.csv` and `<stem>.json`, each via write-then-rename.
    pub fn write(&self, stem: &Path) -> Result<()> {
        write_atomic(&stem.with_extension("csv"), self.to_csv().as_bytes())?;
        write_atomic(&stem.with_extension("json"), self.to_json_string().as_bytes())
    }
}

/// `x` with `digits` significant digits, in the shortest of fixed or
/// exponent notation (like C's `%g`).
pub fn format_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = format!("{:.*e}", digits - 1, x);
    let (mantissa, e) = exp.split_once('e').expect("exponent form");
    let e: i32 = e.parse().expect("integer exponent");
    let trim = |s: &str| if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_string() } else { s.to_string() };
    if e < -4 || e >= digits as i32 {
        format!("{}e{}", trim(mantissa), e)
    } else {
        trim(&format!("{:.*}", (digits as i32 - 1 - e).max(0) as usize, x))
    }
}

struct CancelFlag(Option<Arc<AtomicBool>>);

impl MetricSink for CancelFlag {
    fn on_step(&mut self, _: &StepEvent) {}

    fn cancelled(&self) -> bool {
        self.0.as_ref().is_some_and(|f| f.load(Ordering::Relaxed))
    }
}

/// Trains every `(generator, discriminator)` preset pair, generator-major,
/// on the same data with the same seed. Rows run one after another so epoch
/// timings are uncontended. Failures are recorded per row; only
/// cancellation aborts the whole matrix.
pub fn run_matrix(generators: &[&str], discriminators: &[&str], ds: &Dataset, opts: &MatrixOptions) -> Result<MatrixReport> {
    let mut rows = Vec::with_capacity(generators.len() * discriminators.len());
    let mut sink = CancelFlag(opts.cancel.clone());
    for gen in generators {
        for disc in discriminators {
            let mut spec = GanSpec::from_presets(gen, disc, "matrix.gfd");
            spec.gan_model.epochs = Some(opts.epochs as u64);
            spec.gan_model.batch_size = Some(opts.batch_size as u64);
            spec.gan_model.seed = Some(opts.seed);
            spec.gan_model.latent_dim = opts.latent_dim;
            spec.gan_model.learning_rate = opts.learning_rate;
            let mut row = MatrixRow {
                index: rows.len() + 1,
                generator: gen.to_string(),
                discriminator: disc.to_string(),
                final_gen_loss: None,
                final_disc_loss: None,
                avg_epoch_seconds: None,
                status: RowStatus::Ok,
                pairing: None,
                epochs: Vec::new(),
            };
            let outcome = resolve(&spec, ds.data_shape()).and_then(|mut model| {
                row.pairing = Some(model.pairing.clone());
                train(&mut model, ds, opts.epochs, &mut sink)
            });
            match outcome {
                Ok(report) => {
                    row.final_gen_loss = report.final_gen_loss();
                    row.final_disc_loss = report.final_disc_loss();
                    row.avg_epoch_seconds = Some(report.avg_epoch_seconds());
                    row.epochs = report.epochs;
                }
                Err(Error::Cancelled) => return Err(Error::Cancelled),
                Err(Error::Numeric { epoch, step, what }) => {
                    let message = Error::Numeric { epoch, step, what }.to_string();
                    row.status = RowStatus::NumericFailure { epoch, step, message };
                }
                Err(e) => row.status = RowStatus::Error { message: e.to_string() },
            }
            rows.push(row);
        }
    }
    Ok(MatrixReport {
        report_version: REPORT_VERSION,
        seed: opts.seed,
        epochs: opts.epochs,
        batch_size: opts.batch_size,
        dataset: ds.source.display().to_string(),
        samples: ds.len(),
        rows,
    })
}
