//! End-to-end acceptance run. Prints one `PASS`/`FAIL` line per criterion and
//! exits non-zero when any criterion fails.
//!
//! Real MNIST is used when `AUTHORGAN_MNIST_DIR` points at a directory with
//! `train-images-idx3-ubyte` (and optionally `train-labels-idx1-ubyte`);
//! otherwise a synthetic digit set of the same shape stands in.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use authorgan::run::{REPORT_FILE, SAMPLES_FILE, STEPS_FILE};
use authorgan::server::{router_with, AppState, ServerConfig};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use gan_core::data::{load_idx, make_batches, synth_digits, synth_gaussian, write_gfd1, write_idx_images, write_idx_labels, Dataset};
use gan_core::gradcheck::check_suite;
use gan_core::harness::{self, train_steps, SAMPLE_STREAM};
use gan_core::layers::{LayerKind, LayerSpec, Mode, Network, ParamValue};
use gan_core::models::{gradient_penalty, train_step, ProcessKind};
use gan_core::spec::{resolve, GanSpec};
use gan_core::{Graph, RngStream, Tensor};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

/// The zero-code configuration, verbatim.
const REFERENCE_CONFIG: &str = r#"{
    "GAN_model":{
        "epochs":"50"
    },
    "generator":{
        "choice":"dcgan"
    },
    "discriminator":{
        "choice":"dcgan"
    },
    "data_path":"dataset/mnistData.pkl"
}"#;

const SUBSET: usize = 512;

type Outcome = Result<String, String>;

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let data = mnist_subset(work.path());
    let mut matrix_report = None;
    let mut failures = 0;
    let mut report = |id: u32, name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(l)) if secs > l => Err(format!("took {:.1}s, limit {}s", secs.as_secs_f64(), l.as_secs())),
            (o, _) => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if outcome.is_err() {
            failures += 1;
        }
        println!("AC{id} {tag} {name}: {detail} [{:.1}s]", secs.as_secs_f64());
    };

    report(1, "zero-code config trains end to end", Some(Duration::from_secs(600)), &mut || zero_code(work.path()));
    report(2, "gradient suite", Some(Duration::from_secs(300)), &mut gradient_suite);
    report(3, "matrix reproduction", Some(Duration::from_secs(1800)), &mut || {
        let r = matrix_run(&data.images)?;
        let summary = format!("{} rows", r.rows.len());
        matrix_report = Some(r);
        Ok(summary)
    });
    report(4, "dcgan epochs slower than gan", None, &mut || timing(matrix_report.as_ref()));
    report(5, "vanilla gan learns a gaussian", Some(Duration::from_secs(300)), &mut learning_sanity);
    report(6, "wgan clip bound after every step", None, &mut clip_invariant);
    report(7, "gradient penalty analytic values", None, &mut penalty_analytic);
    report(8, "cli train is deterministic", None, &mut || determinism(work.path()));
    report(9, "palette contract", None, &mut palette_contract);

    println!("{} of 9 criteria passed (data: {})", 9 - failures, data.origin);
    if failures > 0 {
        std::process::exit(1);
    }
}

struct Subset {
    images: Dataset,
    origin: &'static str,
}

/// Writes a 512-image subset next to the reference config's data path and
/// returns it. The `.pkl` name resolves to the sibling `.idx`/`.gfd` file.
fn mnist_subset(root: &Path) -> Subset {
    let dir = root.join("dataset");
    fs::create_dir_all(&dir).unwrap();
    if let Some(mnist) = std::env::var_os("AUTHORGAN_MNIST_DIR").map(PathBuf::from) {
        let labels = mnist.join("train-labels-idx1-ubyte");
        let ds = load_idx(&mnist.join("train-images-idx3-ubyte"), labels.exists().then_some(labels.as_path()))
            .expect("AUTHORGAN_MNIST_DIR must hold train-images-idx3-ubyte")
            .take(SUBSET);
        write_gfd1(&dir.join("mnistData.gfd"), &ds.images).unwrap();
        if let Some(l) = &ds.labels {
            let bytes: Vec<u8> = l.iter().map(|&v| v as u8).collect();
            write_idx_labels(&dir.join("mnistData.labels.idx"), &bytes).unwrap();
        }
        return Subset { images: ds, origin: "MNIST" };
    }
    let (ds, bytes) = synth_digits(SUBSET, 28, &mut RngStream::new(2024)).unwrap();
    write_idx_images(&dir.join("mnistData.idx"), SUBSET, 28, 28, &bytes).unwrap();
    let labels: Vec<u8> = ds.labels.as_ref().unwrap().iter().map(|&v| v as u8).collect();
    write_idx_labels(&dir.join("mnistData.labels.idx"), &labels).unwrap();
    Subset { images: ds, origin: "synthetic digits" }
}

fn cli(args: &[&str]) -> Result<String, String> {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut full = vec!["authorgan"];
    full.extend_from_slice(args);
    let code = authorgan::cli::run(full, &mut out, &mut err);
    let out = String::from_utf8_lossy(&out).into_owned();
    if code != 0 {
        return Err(format!("exit {code}: {}", String::from_utf8_lossy(&err).trim()));
    }
    Ok(out)
}

fn train_reference(root: &Path, out: &str) -> Result<PathBuf, String> {
    let config = root.join("config.json");
    fs::write(&config, REFERENCE_CONFIG).unwrap();
    let out_dir = root.join(out);
    cli(&["train", config.to_str().unwrap(), "--epochs", "1", "--out", out_dir.to_str().unwrap()])?;
    Ok(out_dir)
}

fn zero_code(root: &Path) -> Outcome {
    let out = train_reference(root, "zero-code")?;
    let report: Value = serde_json::from_slice(&fs::read(out.join(REPORT_FILE)).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let epochs = report["epochs"].as_array().ok_or("report has no epochs")?;
    if epochs.len() != 1 {
        return Err(format!("{} epochs recorded, expected 1", epochs.len()));
    }
    let g = epochs[0]["gen_loss"].as_f64().ok_or("gen_loss missing")?;
    let d = epochs[0]["disc_loss"].as_f64().ok_or("disc_loss missing")?;
    if !(g.is_finite() && d.is_finite()) {
        return Err(format!("non-finite losses {g} {d}"));
    }
    let png = fs::read(out.join(SAMPLES_FILE)).map_err(|e| format!("sample grid: {e}"))?;
    if !png.starts_with(b"\x89PNG\r\n\x1a\n") {
        return Err("samples file is not a PNG".into());
    }
    Ok(format!("{} steps, gen {g:.4}, disc {d:.4}, grid {} bytes", report["total_steps"], png.len()))
}

fn gradient_suite() -> Outcome {
    let results = check_suite(1e-5).map_err(|e| e.to_string())?;
    let worst = results.iter().max_by(|a, b| a.error.total_cmp(&b.error)).ok_or("empty suite")?;
    let bad: Vec<String> = results.iter().filter(|r| !(r.error < 1e-4)).map(|r| format!("{} {:.2e}", r.name, r.error)).collect();
    if !bad.is_empty() {
        return Err(bad.join(", "));
    }
    Ok(format!("{} cases, worst {} at {:.2e}", results.len(), worst.name, worst.error))
}

fn matrix_run(images: &Dataset) -> Result<harness::MatrixReport, String> {
    let opts = harness::MatrixOptions { epochs: 1, seed: 0, batch_size: 64, ..Default::default() };
    let report = harness::run_matrix(&harness::MATRIX_GENERATORS, &harness::MATRIX_DISCRIMINATORS, images, &opts).map_err(|e| e.to_string())?;
    let expected: Vec<(&str, &str)> =
        harness::MATRIX_GENERATORS.iter().flat_map(|g| harness::MATRIX_DISCRIMINATORS.iter().map(move |d| (*g, *d))).collect();
    if report.rows.len() != 16 {
        return Err(format!("{} rows", report.rows.len()));
    }
    for (row, (g, d)) in report.rows.iter().zip(&expected) {
        if (row.generator.as_str(), row.discriminator.as_str()) != (*g, *d) {
            return Err(format!("row {} is ({}, {}), expected ({g}, {d})", row.index, row.generator, row.discriminator));
        }
        let finite = row.final_gen_loss.is_some_and(f64::is_finite) && row.final_disc_loss.is_some_and(f64::is_finite);
        if !finite {
            return Err(format!("({g}, {d}) {}: {:?} {:?}", row.status.label(), row.final_gen_loss, row.final_disc_loss));
        }
    }
    Ok(report)
}

fn timing(report: Option<&harness::MatrixReport>) -> Outcome {
    let report = report.ok_or("matrix did not complete")?;
    let secs = |g, d| report.row(g, d).and_then(|r| r.avg_epoch_seconds).ok_or(format!("no timing for ({g}, {d})"));
    let (dc, gan) = (secs("dcgan", "dcgan")?, secs("gan", "gan")?);
    let ratio = dc / gan;
    let detail = format!("dcgan {dc:.2}s, gan {gan:.2}s, ratio {ratio:.1}");
    if ratio >= 1.5 { Ok(detail) } else { Err(detail) }
}

fn learning_sanity() -> Outcome {
    let target = [0.3, 0.3];
    let mut hits = 0;
    let mut means = Vec::new();
    for seed in 0..5u64 {
        let mut spec = GanSpec::from_presets("gan", "gan", "gaussian.gfd");
        spec.gan_model.seed = Some(seed);
        spec.gan_model.batch_size = Some(64);
        let ds = synth_gaussian(5000, &target, 0.05, &mut RngStream::new(seed).substream(9)).map_err(|e| e.to_string())?;
        let mut model = resolve(&spec, &[2]).map_err(|e| e.to_string())?;
        train_steps(&mut model, &ds, 2000, &mut ()).map_err(|e| e.to_string())?;
        let z = RngStream::new(seed).substream(SAMPLE_STREAM).normal(&[1000, model.latent_dim], 0.0, 1.0).unwrap();
        let out = model.generator.predict(&z, None, Mode::Eval, None).map_err(|e| e.to_string())?;
        let m: Vec<f64> = (0..2).map(|c| out.data().iter().skip(c).step_by(2).sum::<f64>() / 1000.0).collect();
        if m.iter().zip(target).all(|(a, b)| (a - b).abs() <= 0.3) {
            hits += 1;
        }
        means.push(format!("({:.3}, {:.3})", m[0], m[1]));
    }
    let detail = format!("{hits}/5 seeds within 0.3; means {}", means.join(" "));
    if hits >= 3 { Ok(detail) } else { Err(detail) }
}

fn clip_invariant() -> Outcome {
    let spec = GanSpec::from_presets("wgan", "wgan", "gaussian.gfd");
    let mut model = resolve(&spec, &[2]).map_err(|e| e.to_string())?;
    if model.process.kind != ProcessKind::WganClip {
        return Err(format!("wgan pairing runs {:?}", model.process.kind));
    }
    let clip = model.process.clip_value;
    let ds = synth_gaussian(2000, &[0.3, 0.3], 0.05, &mut RngStream::new(1)).map_err(|e| e.to_string())?;
    let (mut shuffle, mut noise) = (RngStream::new(2), RngStream::new(3));
    let process = model.process.clone();
    let mut steps = 0;
    let mut worst = 0.0f64;
    while steps < 200 {
        for batch in make_batches(&ds, model.batch_size, &mut shuffle, true).map_err(|e| e.to_string())? {
            if steps == 200 {
                break;
            }
            train_step(&process, &mut model, &batch.images, None, &mut noise).map_err(|e| e.to_string())?;
            steps += 1;
            let max = model.discriminator.params().map(Tensor::max_abs).fold(0.0, f64::max);
            worst = worst.max(max);
            if max > clip {
                return Err(format!("step {steps}: max |w| = {max} > {clip}"));
            }
        }
    }
    Ok(format!("{steps} steps, max |w| = {worst} <= {clip}"))
}

fn penalty_analytic() -> Outcome {
    let linear = |w: &[f64]| {
        let spec = LayerSpec::with(LayerKind::Dense, &[("units", ParamValue::Int(1)), ("bias", ParamValue::Bool(false))]);
        let mut net = Network::build(&[spec], &[w.len()], &mut RngStream::new(0)).unwrap();
        net.layers[0].params[0].value = Tensor::new(&[w.len(), 1], w.to_vec()).unwrap();
        net
    };
    let value = |mut net: Network, d: usize| {
        let mut rng = RngStream::new(8);
        let real = rng.normal(&[16, d], 0.0, 1.0).unwrap();
        let fake = rng.normal(&[16, d], 0.0, 1.0).unwrap();
        let mut g = Graph::new();
        let bound = net.bind(&mut g, true);
        let p = gradient_penalty(&mut g, &mut net, &bound, &real, &fake, 10.0, &mut rng).unwrap();
        g.value(p).item()
    };
    // Unit norm: the four weights are each 1/2.
    let zero = value(linear(&[0.5, -0.5, 0.5, 0.5]), 4);
    // Norm 2: (1.2, 1.6) has length 2.
    let ten = value(linear(&[1.2, 1.6]), 2);
    let detail = format!("unit norm -> {zero:e}, norm 2 -> {ten}");
    if zero.abs() <= 1e-9 && (ten - 10.0).abs() <= 1e-9 { Ok(detail) } else { Err(detail) }
}

fn read_steps(dir: &Path) -> Result<Vec<Vec<f64>>, String> {
    let text = fs::read_to_string(dir.join(STEPS_FILE)).map_err(|e| e.to_string())?;
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|f| f.parse::<f64>().map_err(|e| format!("{l}: {e}"))).collect())
        .collect()
}

fn determinism(root: &Path) -> Outcome {
    let a = read_steps(&train_reference(root, "determinism-a")?)?;
    let b = read_steps(&train_reference(root, "determinism-b")?)?;
    if a.is_empty() || a.len() != b.len() {
        return Err(format!("{} vs {} rows", a.len(), b.len()));
    }
    let mut worst = 0.0f64;
    for (ra, rb) in a.iter().zip(&b) {
        for (x, y) in ra.iter().zip(rb) {
            worst = worst.max((x - y).abs());
        }
    }
    let detail = format!("{} steps, max |diff| = {worst:e}", a.len());
    if worst <= 1e-12 { Ok(detail) } else { Err(detail) }
}

fn palette_contract() -> Outcome {
    const CATEGORIES: [&str; 7] = ["convolutional", "recurrent", "core", "activation", "loss", "optimization", "normalization"];
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ServerConfig { data_dir: dir.path().to_path_buf(), ..ServerConfig::default() };
    let app = router_with(Arc::new(AppState::new(&cfg)), cfg.body_limit);
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().map_err(|e| e.to_string())?;
    let (status, body) = rt.block_on(async {
        let resp = app.oneshot(Request::get("/palette").body(Body::empty()).unwrap()).await.unwrap();
        let status = resp.status();
        (status, resp.into_body().collect().await.unwrap().to_bytes())
    });
    if status != StatusCode::OK {
        return Err(format!("status {status}"));
    }
    let doc: Value = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
    let entries = doc["entries"].as_array().ok_or("no entries")?;
    let mut seen: Vec<&str> = entries.iter().filter_map(|e| e["category"].as_str()).collect();
    seen.sort_unstable();
    seen.dedup();
    let mut want = CATEGORIES.to_vec();
    want.sort_unstable();
    let listed: Vec<&str> = doc["categories"].as_array().ok_or("no categories")?.iter().filter_map(Value::as_str).collect();
    let detail = format!("{} entries in {} categories", entries.len(), seen.len());
    if entries.len() == 31 && seen == want && listed == CATEGORIES { Ok(detail) } else { Err(format!("{detail}: {seen:?}")) }
}
