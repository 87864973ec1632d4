//! `authorgan` subcommands. [`run`] returns the process exit code: 0 on
//! success, 1 for invalid specs or failed runs, 2 for usage errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use gan_core::data::{load_dataset, synth_digits, write_idx_images, write_idx_labels, Dataset};
use gan_core::harness::{run_matrix, MatrixOptions, Recorder, MATRIX_DISCRIMINATORS, MATRIX_GENERATORS};
use gan_core::spec::{parse_spec, validate, Diagnostic, GanSpec};
use gan_core::{Error, RngStream};

use crate::run::{prepare, train_to_dir, Overrides};
use crate::server::{self, ServerConfig};

#[derive(Debug, Parser)]
#[command(name = "authorgan", version, about = "Author, validate and train GANs from JSON specifications")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a spec and print its diagnostics.
    Validate {
        spec: PathBuf,
        /// Sample shape for expanding presets, e.g. `1,28,28`.
        #[arg(long, value_delimiter = ',')]
        data_shape: Option<Vec<usize>>,
    },
    /// Train a spec, writing report.json, steps.csv, generator.json and samples.png.
    Train {
        spec: PathBuf,
        #[arg(long)]
        epochs: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        batch_size: Option<u64>,
        /// Use only the first N samples.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Images in the sample grid.
        #[arg(long, default_value_t = 16)]
        samples: usize,
    },
    /// Train every generator/discriminator preset pair and tabulate final losses and epoch times.
    Matrix {
        /// IDX or GFD1 images; synthetic digits when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 512)]
        limit: usize,
        #[arg(long, value_delimiter = ',', default_values_t = MATRIX_GENERATORS.map(String::from))]
        generators: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = MATRIX_DISCRIMINATORS.map(String::from))]
        discriminators: Vec<String>,
        /// Writes <out>/matrix.csv and <out>/matrix.json.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "AUTHORGAN_PORT", default_value_t = 8080)]
        port: u16,
        /// Concurrent training jobs.
        #[arg(long, env = "AUTHORGAN_MAX_JOBS", default_value_t = 1)]
        jobs: usize,
        /// Relative data paths resolve here; job outputs go to <dir>/jobs/<id>.
        #[arg(long, env = "AUTHORGAN_DATA_DIR", default_value = ".")]
        data_dir: PathBuf,
    },
    /// Print the layer palette as JSON.
    Palette,
    /// Write labelled synthetic digit images as IDX files (an MNIST stand-in).
    Digits {
        #[arg(long, default_value_t = 512)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Writes <out>/digits-images-idx3-ubyte and <out>/digits-labels-idx1-ubyte.
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return if code == 0 { 0 } else { 2 };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> gan_core::Result<i32> {
    match command {
        Command::Validate { spec, data_shape } => cmd_validate(&spec, data_shape, out),
        Command::Train { spec, epochs, seed, batch_size, limit, out: dir, samples } => {
            let overrides = Overrides { epochs, seed, batch_size, limit };
            cmd_train(&spec, &overrides, &dir, samples, out, err)
        }
        Command::Matrix { data, epochs, seed, batch_size, limit, generators, discriminators, out: dir } => {
            let ds = match &data {
                Some(p) => load_dataset(p, None)?.take(limit),
                None => {
                    let _ = writeln!(err, "no --data given: using {limit} synthetic digit images");
                    synth_digits(limit, 28, &mut RngStream::new(seed))?.0
                }
            };
            cmd_matrix(&ds, epochs, seed, batch_size, &generators, &discriminators, &dir, out)
        }
        Command::Serve { port, jobs, data_dir } => {
            let cfg = ServerConfig { port, max_jobs: jobs.max(1), data_dir, ..ServerConfig::default() };
            server::serve_blocking(cfg)?;
            Ok(0)
        }
        Command::Palette => {
            writeln!(out, "{}", serde_json::to_string_pretty(&server::palette_document())?)?;
            Ok(0)
        }
        Command::Digits { n, seed, out: dir } => {
            let (ds, bytes) = synth_digits(n, 28, &mut RngStream::new(seed))?;
            fs::create_dir_all(&dir)?;
            write_idx_images(&dir.join("digits-images-idx3-ubyte"), n, 28, 28, &bytes)?;
            let labels: Vec<u8> = ds.labels.unwrap_or_default().iter().map(|&l| l as u8).collect();
            write_idx_labels(&dir.join("digits-labels-idx1-ubyte"), &labels)?;
            writeln!(out, "wrote {n} digits to {}", dir.display())?;
            Ok(0)
        }
    }
}

fn print_diagnostics(diags: &[Diagnostic], out: &mut dyn Write) -> std::io::Result<()> {
    for d in diags {
        writeln!(out, "{d}")?;
    }
    let errors = diags.iter().filter(|d| d.is_error()).count();
    let warnings = diags.len() - errors;
    match warnings {
        0 => writeln!(out, "{errors} errors"),
        _ => writeln!(out, "{errors} errors, {warnings} warnings"),
    }
}

fn read_spec(path: &Path, out: &mut dyn Write) -> gan_core::Result<Result<GanSpec, i32>> {
    let text = fs::read_to_string(path)?;
    match parse_spec(&text) {
        Ok(s) => Ok(Ok(s)),
        Err(diags) => {
            print_diagnostics(&diags, out)?;
            Ok(Err(1))
        }
    }
}

fn cmd_validate(path: &Path, data_shape: Option<Vec<usize>>, out: &mut dyn Write) -> gan_core::Result<i32> {
    let mut spec = match read_spec(path, out)? {
        Ok(s) => s,
        Err(code) => return Ok(code),
    };
    if data_shape.is_some() {
        spec.gan_model.data_shape = data_shape;
    }
    let diags = validate(&spec);
    print_diagnostics(&diags, out)?;
    Ok(if diags.iter().any(Diagnostic::is_error) { 1 } else { 0 })
}

fn cmd_train(path: &Path, overrides: &Overrides, dir: &Path, samples: usize, out: &mut dyn Write, err: &mut dyn Write) -> gan_core::Result<i32> {
    let spec = match read_spec(path, out)? {
        Ok(s) => s,
        Err(code) => return Ok(code),
    };
    let base = path.parent().unwrap_or(Path::new("."));
    let (mut model, data) = match prepare(&spec, base, overrides) {
        Ok(p) => p,
        Err(Error::Diagnostics(diags)) => {
            print_diagnostics(&diags, out)?;
            return Ok(1);
        }
        Err(e) => return Err(e),
    };
    let _ = writeln!(
        err,
        "training {} x {} ({:?}) on {} samples of {:?} for {} epochs",
        model.pairing.generator, model.pairing.discriminator, model.process.kind, data.len(), data.data_shape(), model.epochs
    );
    let report = train_to_dir(&mut model, &data, dir, samples, &mut Recorder::default())?;
    for e in &report.epochs {
        writeln!(out, "epoch {}: gen_loss {:.6} disc_loss {:.6} ({:.2}s)", e.epoch, e.gen_loss, e.disc_loss, e.wall_seconds)?;
    }
    writeln!(out, "wrote {}", dir.display())?;
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_matrix(
    ds: &Dataset,
    epochs: usize,
    seed: u64,
    batch_size: usize,
    generators: &[String],
    discriminators: &[String],
    dir: &Path,
    out: &mut dyn Write,
) -> gan_core::Result<i32> {
    let gens: Vec<&str> = generators.iter().map(String::as_str).collect();
    let discs: Vec<&str> = discriminators.iter().map(String::as_str).collect();
    let opts = MatrixOptions { epochs, seed, batch_size, ..MatrixOptions::default() };
    let report = run_matrix(&gens, &discs, ds, &opts)?;
    fs::create_dir_all(dir)?;
    report.write(&dir.join("matrix"))?;
    write!(out, "{}", report.to_csv())?;
    Ok(0)
}
