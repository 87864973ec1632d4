//! In-memory job table with a bounded FIFO worker pool.

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread::JoinHandle;

use gan_core::harness::{sample_grid, MetricSink, StepEvent, TrainingReport, SAMPLE_STREAM};
use gan_core::spec::{GanSpec, ResolvedModel};
use gan_core::{Error, RngStream};
use serde::Serialize;

use crate::run::{prepare, train_to_dir, Overrides};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Completed,
    Failed,
    Cancelled,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Completed | JobState::Failed | JobState::Cancelled)
    }
}

/// One training step as seen by pollers; `index` is 1-based over the run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub index: usize,
    pub epoch: usize,
    pub step: usize,
    pub gen_loss: f64,
    pub disc_loss: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct JobView {
    pub id: String,
    pub state: JobState,
    pub progress: Progress,
    pub report: Option<TrainingReport>,
    pub error: Option<String>,
    pub spec: serde_json::Value,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Progress {
    pub epoch: usize,
    pub step: usize,
    pub total_steps: usize,
}

struct Status {
    state: JobState,
    progress: Progress,
    report: Option<TrainingReport>,
    error: Option<String>,
}

pub struct Job {
    pub id: String,
    spec: GanSpec,
    overrides: Overrides,
    out_dir: PathBuf,
    cancel: AtomicBool,
    status: RwLock<Status>,
    /// Appended only by the worker; read by any number of pollers.
    metrics: RwLock<Vec<MetricRow>>,
    model: Mutex<Option<ResolvedModel>>,
}

impl Job {
    pub fn view(&self) -> JobView {
        let s = self.status.read().expect("status lock");
        JobView {
            id: self.id.clone(),
            state: s.state,
            progress: s.progress,
            report: s.report.clone(),
            error: s.error.clone(),
            spec: self.spec.to_json(),
        }
    }

    pub fn state(&self) -> JobState {
        self.status.read().expect("status lock").state
    }

    /// Rows with `index > since`.
    pub fn metrics_since(&self, since: usize) -> Vec<MetricRow> {
        let rows = self.metrics.read().expect("metrics lock");
        // Indices are dense from 1, so row `since` sits at position `since`.
        rows.get(since.min(rows.len())..).unwrap_or_default().to_vec()
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// PNG grid of `n` samples from the trained generator; `None` until the
    /// job has completed.
    pub fn samples(&self, n: usize) -> Option<gan_core::Result<Vec<u8>>> {
        let mut guard = self.model.lock().expect("model lock");
        let model = guard.as_mut()?;
        let mut rng = RngStream::new(model.seed).substream(SAMPLE_STREAM);
        Some(sample_grid(model, n, &mut rng).map(|g| g.png))
    }

    fn set(&self, f: impl FnOnce(&mut Status)) {
        f(&mut self.status.write().expect("status lock"));
    }
}

struct JobSink<'a> {
    job: &'a Job,
}

impl MetricSink for JobSink<'_> {
    fn on_step(&mut self, e: &StepEvent) {
        let index = {
            let mut rows = self.job.metrics.write().expect("metrics lock");
            let index = rows.len() + 1;
            rows.push(MetricRow { index, epoch: e.epoch, step: e.step, gen_loss: e.metrics.gen_loss, disc_loss: e.metrics.disc_loss });
            index
        };
        self.job.set(|s| {
            s.progress.epoch = e.epoch;
            s.progress.step = index;
        });
    }

    fn cancelled(&self) -> bool {
        self.job.cancel.load(Ordering::Relaxed)
    }
}

struct Shared {
    jobs: Mutex<HashMap<String, Arc<Job>>>,
    queue: Mutex<VecDeque<Arc<Job>>>,
    wake: Condvar,
    shutdown: AtomicBool,
    data_dir: PathBuf,
}

/// At most `workers` jobs train concurrently; queued jobs start in
/// submission order.
pub struct JobPool {
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
}

impl JobPool {
    /// Data paths resolve against `data_dir`; outputs go to `data_dir/jobs/<id>`.
    pub fn new(workers: usize, data_dir: impl Into<PathBuf>) -> Self {
        let shared = Arc::new(Shared {
            jobs: Mutex::new(HashMap::new()),
            queue: Mutex::new(VecDeque::new()),
            wake: Condvar::new(),
            shutdown: AtomicBool::new(false),
            data_dir: data_dir.into(),
        });
        let workers = (0..workers.max(1))
            .map(|i| {
                let shared = Arc::clone(&shared);
                std::thread::Builder::new().name(format!("job-worker-{i}")).spawn(move || worker(&shared)).expect("spawn worker")
            })
            .collect();
        Self { shared, workers }
    }

    pub fn submit(&self, spec: GanSpec, overrides: Overrides) -> Arc<Job> {
        let id = uuid::Uuid::new_v4().to_string();
        let job = Arc::new(Job {
            out_dir: self.shared.data_dir.join("jobs").join(&id),
            id: id.clone(),
            spec,
            overrides,
            cancel: AtomicBool::new(false),
            status: RwLock::new(Status { state: JobState::Queued, progress: Progress::default(), report: None, error: None }),
            metrics: RwLock::new(Vec::new()),
            model: Mutex::new(None),
        });
        self.shared.jobs.lock().expect("jobs lock").insert(id, Arc::clone(&job));
        self.shared.queue.lock().expect("queue lock").push_back(Arc::clone(&job));
        self.shared.wake.notify_one();
        job
    }

    pub fn get(&self, id: &str) -> Option<Arc<Job>> {
        self.shared.jobs.lock().expect("jobs lock").get(id).cloned()
    }

    /// Cooperative: a queued job is cancelled at once and never runs; a
    /// running job stops before its next step. Terminal jobs are unchanged.
    pub fn cancel(&self, id: &str) -> Option<JobState> {
        let job = self.get(id)?;
        job.cancel.store(true, Ordering::Relaxed);
        let mut status = job.status.write().expect("status lock");
        if status.state == JobState::Queued {
            status.state = JobState::Cancelled;
        }
        Some(status.state)
    }
}

impl Drop for JobPool {
    fn drop(&mut self) {
        self.shared.shutdown.store(true, Ordering::Relaxed);
        for job in self.shared.jobs.lock().expect("jobs lock").values() {
            job.cancel.store(true, Ordering::Relaxed);
        }
        self.shared.wake.notify_all();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn worker(shared: &Shared) {
    loop {
        let job = {
            let mut queue = shared.queue.lock().expect("queue lock");
            loop {
                if shared.shutdown.load(Ordering::Relaxed) {
                    return;
                }
                if let Some(j) = queue.pop_front() {
                    break j;
                }
                queue = shared.wake.wait(queue).expect("queue lock");
            }
        };
        {
            let mut s = job.status.write().expect("status lock");
            if s.state != JobState::Queued {
                continue;
            }
            s.state = JobState::Running;
        }
        let outcome = run_job(&job, &shared.data_dir);
        job.set(|s| match outcome {
            Ok(report) => {
                s.state = JobState::Completed;
                s.report = Some(report);
            }
            Err(Error::Cancelled) => s.state = JobState::Cancelled,
            Err(e) => {
                s.state = JobState::Failed;
                s.error = Some(e.to_string());
            }
        });
    }
}

fn run_job(job: &Job, data_dir: &Path) -> gan_core::Result<TrainingReport> {
    let (mut model, data) = prepare(&job.spec, data_dir, &job.overrides)?;
    let per_epoch = data.len().div_ceil(model.batch_size);
    job.set(|s| s.progress.total_steps = per_epoch * model.epochs);
    let mut sink = JobSink { job };
    let report = train_to_dir(&mut model, &data, &job.out_dir, 16, &mut sink)?;
    *job.model.lock().expect("model lock") = Some(model);
    Ok(report)
}
