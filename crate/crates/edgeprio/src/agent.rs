//! Edge agent: watches a directory, processes files with the image operator
//! on `M` worker threads and uploads them to the gateway on `N` more.
//!
//! The queue, the spline and both policies live behind one mutex. Every
//! scheduling decision, state transition and spline update happens while it
//! is held; the operator and the network run outside it. Workers sleep on a
//! condition variable and are woken on every queue change.
//!
//! A file is picked up once two consecutive polls see the same size and
//! modification time. Its stream index is the last run of digits in the file
//! stem; files without digits, or whose number is taken, get one past the
//! largest index so far. A name seen before is never enqueued again.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant, SystemTime};

use edgeprio_core::document::reduction_ratio;
use edgeprio_core::seed::derive;
use edgeprio_core::{
    DocIndex, Document, DocumentState, EventKind, LifecycleError, LifecycleEvent, ProcessChooser,
    ProcessPolicy, ProcessScheduler, QueueEntry, RatioSpline, TraceEvent, UploadChooser,
    UploadPolicy, UploadScheduler,
};
use thiserror::Error;

use crate::operator::{process_file, FillSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts per upload, including the first.
    pub attempts: u32,
    /// Delay after the first failure; doubles after each further one.
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub watch_dir: PathBuf,
    /// Where processed files are written. Must not be inside `watch_dir`.
    /// Defaults to a fresh directory under the system temp dir.
    pub work_dir: Option<PathBuf>,
    pub gateway_url: String,
    pub stream_id: String,
    pub process_workers: usize,
    pub upload_workers: usize,
    pub process_policy: ProcessPolicy,
    pub upload_policy: UploadPolicy,
    pub poll_interval: Duration,
    pub fill: FillSettings,
    pub seed: u64,
    pub retry: RetryPolicy,
    /// Paces each transfer to at most this many bytes per second.
    pub upload_rate: Option<f64>,
    /// Stop watching after this many documents have been enqueued.
    pub max_docs: Option<usize>,
    /// Stop watching once nothing new has appeared for this long and every
    /// enqueued document is uploaded.
    pub idle_exit: Option<Duration>,
}

impl AgentConfig {
    pub fn new(
        watch_dir: impl Into<PathBuf>,
        gateway_url: impl Into<String>,
        stream_id: impl Into<String>,
    ) -> Self {
        AgentConfig {
            watch_dir: watch_dir.into(),
            work_dir: None,
            gateway_url: gateway_url.into(),
            stream_id: stream_id.into(),
            process_workers: 1,
            upload_workers: 4,
            process_policy: ProcessPolicy::splines(),
            upload_policy: UploadPolicy::InversePriority,
            poll_interval: Duration::from_millis(250),
            fill: FillSettings::default(),
            seed: 0,
            retry: RetryPolicy::default(),
            upload_rate: None,
            max_docs: None,
            idle_exit: None,
        }
    }

    fn process_threads(&self) -> usize {
        if self.process_policy == ProcessPolicy::NoProcessing {
            0
        } else {
            self.process_workers
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.upload_workers == 0 {
            return Err(AgentError::Config("need at least one upload worker".into()));
        }
        if self.process_policy != ProcessPolicy::NoProcessing && self.process_workers == 0 {
            return Err(AgentError::Config(
                "processing needs at least one process worker".into(),
            ));
        }
        if self.poll_interval.is_zero() {
            return Err(AgentError::Config("poll interval must be positive".into()));
        }
        if self
            .upload_rate
            .is_some_and(|r| !(r > 0.0) || !r.is_finite())
        {
            return Err(AgentError::Config("upload rate must be positive".into()));
        }
        if self.retry.attempts == 0 {
            return Err(AgentError::Config(
                "need at least one upload attempt".into(),
            ));
        }
        if self.stream_id.is_empty() {
            return Err(AgentError::Config("stream id must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("cannot watch {path}: {source}")]
    Watch {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("work directory {path}: {source}")]
    WorkDir {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("upload of document {index} failed after {attempts} attempts: {message}")]
    Upload {
        index: DocIndex,
        attempts: u32,
        message: String,
    },
    #[error("cannot read {path} for upload: {source}")]
    ReadForUpload {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
    #[error("worker thread panicked")]
    WorkerPanic,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionReport {
    /// Session life cycle; times are seconds since the agent started.
    pub trace: Vec<TraceEvent>,
    /// File name of every enqueued document.
    pub files: BTreeMap<DocIndex, String>,
    pub uploaded: usize,
    pub processed: usize,
    pub processing_failures: usize,
}

/// A session that ended in error, with whatever it achieved before.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct AgentFailure {
    #[source]
    pub error: AgentError,
    pub report: SessionReport,
}

struct Entry {
    doc: Document,
    source: PathBuf,
    name: String,
    output: Option<PathBuf>,
}

struct State {
    started: Instant,
    entries: BTreeMap<DocIndex, Entry>,
    queued: BTreeSet<DocIndex>,
    spline: RatioSpline,
    chooser: ProcessScheduler,
    uploader: UploadScheduler,
    trace: Vec<TraceEvent>,
    processing: usize,
    uploaded: usize,
    processing_failures: usize,
    intake_done: bool,
    fatal: Option<AgentError>,
}

impl State {
    fn now(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    fn push(&mut self, index: DocIndex, kind: EventKind, detail: f64) -> f64 {
        let t = self.now();
        self.trace.push(TraceEvent::new(t, index, kind, detail));
        t
    }

    fn snapshot(&self, raw_only: bool) -> Vec<QueueEntry> {
        self.queued
            .iter()
            .map(|i| &self.entries[i].doc)
            .filter(|d| !raw_only || d.state == DocumentState::QueuedRaw)
            .map(|d| QueueEntry {
                index: d.index,
                arrival_time: d.arrival_time,
                processed_at: if d.is_processed() {
                    d.timestamps.processing_finished
                } else {
                    None
                },
            })
            .collect()
    }

    fn has_raw(&self) -> bool {
        self.queued
            .iter()
            .any(|i| self.entries[i].doc.state == DocumentState::QueuedRaw)
    }

    fn fail(&mut self, e: AgentError) {
        if self.fatal.is_none() {
            log::error!("{e}");
            self.fatal = Some(e);
        }
    }
}

struct Shared {
    state: Mutex<State>,
    changed: Condvar,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn wait<'a>(&self, guard: MutexGuard<'a, State>) -> MutexGuard<'a, State> {
        self.changed.wait(guard).unwrap_or_else(|p| p.into_inner())
    }
}

/// Stream index from the last run of ASCII digits in the file stem.
pub fn index_from_name(name: &str) -> Option<DocIndex> {
    let stem = Path::new(name).file_stem()?.to_str()?;
    let bytes = stem.as_bytes();
    let end = bytes.iter().rposition(u8::is_ascii_digit)? + 1;
    let start = bytes[..end]
        .iter()
        .rposition(|b| !b.is_ascii_digit())
        .map_or(0, |p| p + 1);
    stem[start..end].parse().ok()
}

/// Watches the directory and assigns stream indices.
struct Intake {
    dir: PathBuf,
    candidates: HashMap<String, (u64, SystemTime)>,
    seen: HashMap<String, (u64, SystemTime)>,
    warned: HashSet<String>,
    used: BTreeSet<DocIndex>,
}

impl Intake {
    fn new(dir: PathBuf) -> Self {
        Intake {
            dir,
            candidates: HashMap::new(),
            seen: HashMap::new(),
            warned: HashSet::new(),
            used: BTreeSet::new(),
        }
    }

    /// One poll: returns newly stable files as (index, name, path, size), in
    /// index order.
    fn poll(&mut self) -> Result<Vec<(DocIndex, String, PathBuf, u64)>, AgentError> {
        let watch_err = |source| AgentError::Watch {
            path: self.dir.clone(),
            source,
        };
        let mut present = HashSet::new();
        let mut stable = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(watch_err)? {
            let Ok(entry) = entry else { continue };
            let path = entry.path();
            let Ok(meta) = entry.metadata() else { continue };
            let name = entry.file_name().to_string_lossy().into_owned();
            if !meta.is_file() || name.starts_with('.') {
                continue;
            }
            let sig = (
                meta.len(),
                meta.modified().unwrap_or(SystemTime::UNIX_EPOCH),
            );
            present.insert(name.clone());
            if let Some(first) = self.seen.get(&name) {
                if *first != sig && self.warned.insert(name.clone()) {
                    log::warn!(
                        "{name} was rewritten after it was enqueued; ignoring the new contents"
                    );
                }
                continue;
            }
            match self.candidates.insert(name.clone(), sig) {
                Some(prev) if prev == sig && sig.0 > 0 => stable.push((name, path, sig)),
                _ => {}
            }
        }
        self.candidates.retain(|n, _| present.contains(n));

        stable.sort_by(|a, b| {
            let key = |n: &str| index_from_name(n).unwrap_or(DocIndex::MAX);
            key(&a.0).cmp(&key(&b.0)).then_with(|| a.0.cmp(&b.0))
        });
        let mut out = Vec::with_capacity(stable.len());
        for (name, path, sig) in stable {
            self.candidates.remove(&name);
            self.seen.insert(name.clone(), sig);
            let index = match index_from_name(&name) {
                Some(i) if !self.used.contains(&i) => i,
                parsed => {
                    let next = self.used.last().map_or(0, |&m| m + 1);
                    if parsed.is_some() {
                        log::warn!(
                            "{name}: index {} already taken, using {next}",
                            parsed.unwrap_or(0)
                        );
                    }
                    next
                }
            };
            self.used.insert(index);
            out.push((index, name, path, sig.0));
        }
        Ok(out)
    }

    fn pending(&self) -> bool {
        !self.candidates.is_empty()
    }
}

/// Runs one agent session until a stop condition holds and every enqueued
/// document is uploaded, or `stop` is set and the queue has drained.
pub fn run(config: &AgentConfig, stop: &AtomicBool) -> Result<SessionReport, AgentFailure> {
    let fail = |error| AgentFailure {
        error,
        report: SessionReport::default(),
    };
    config.validate().map_err(fail)?;
    let watch = fs::canonicalize(&config.watch_dir).map_err(|source| {
        fail(AgentError::Watch {
            path: config.watch_dir.clone(),
            source,
        })
    })?;
    let (work_dir, owned_work_dir) = prepare_work_dir(config, &watch).map_err(fail)?;

    let shared = Shared {
        state: Mutex::new(State {
            started: Instant::now(),
            entries: BTreeMap::new(),
            queued: BTreeSet::new(),
            spline: RatioSpline::new(),
            chooser: ProcessScheduler::new(config.process_policy, derive(config.seed, 1)),
            uploader: UploadScheduler::new(config.upload_policy, derive(config.seed, 2)),
            trace: Vec::new(),
            processing: 0,
            uploaded: 0,
            processing_failures: 0,
            intake_done: false,
            fatal: None,
        }),
        changed: Condvar::new(),
    };
    let http: ureq::Agent = ureq::Agent::config_builder()
        .timeout_connect(Some(Duration::from_secs(10)))
        .build()
        .into();

    let panicked = thread::scope(|s| {
        let mut handles = Vec::new();
        for w in 0..config.process_threads() {
            let (shared, work_dir) = (&shared, work_dir.as_path());
            handles.push(
                thread::Builder::new()
                    .name(format!("process-{w}"))
                    .spawn_scoped(s, move || process_worker(shared, config, work_dir))
                    .expect("spawn process worker"),
            );
        }
        for w in 0..config.upload_workers {
            let (shared, http) = (&shared, http.clone());
            handles.push(
                thread::Builder::new()
                    .name(format!("upload-{w}"))
                    .spawn_scoped(s, move || upload_worker(shared, config, &http))
                    .expect("spawn upload worker"),
            );
        }

        intake_loop(&shared, config, &watch, stop);
        let mut st = shared.lock();
        st.intake_done = true;
        drop(st);
        shared.changed.notify_all();
        handles
            .into_iter()
            .map(|h| h.join().is_err())
            .fold(false, |a, b| a | b)
    });

    if owned_work_dir {
        let _ = fs::remove_dir_all(&work_dir);
    }
    let mut st = shared.into_inner_state();
    let processed = st.entries.values().filter(|e| e.doc.is_processed()).count();
    let report = SessionReport {
        trace: std::mem::take(&mut st.trace),
        files: st
            .entries
            .iter()
            .map(|(&i, e)| (i, e.name.clone()))
            .collect(),
        uploaded: st.uploaded,
        processed,
        processing_failures: st.processing_failures,
    };
    let error = if panicked {
        Some(AgentError::WorkerPanic)
    } else {
        st.fatal.take()
    };
    match error {
        Some(error) => Err(AgentFailure { error, report }),
        None => Ok(report),
    }
}

impl Shared {
    fn into_inner_state(self) -> State {
        self.state.into_inner().unwrap_or_else(|p| p.into_inner())
    }
}

fn prepare_work_dir(config: &AgentConfig, watch: &Path) -> Result<(PathBuf, bool), AgentError> {
    let (dir, owned) = match &config.work_dir {
        Some(d) => (d.clone(), false),
        None => {
            let nanos = SystemTime::now()
                .duration_since(SystemTime::UNIX_EPOCH)
                .map_or(0, |d| d.as_nanos());
            let d =
                std::env::temp_dir().join(format!("edgeprio-agent-{}-{nanos}", std::process::id()));
            (d, true)
        }
    };
    let io = |source| AgentError::WorkDir {
        path: dir.clone(),
        source,
    };
    fs::create_dir_all(&dir).map_err(io)?;
    let dir = fs::canonicalize(&dir).map_err(io)?;
    if dir.starts_with(watch) {
        return Err(AgentError::Config(
            "work dir must be outside the watch dir".into(),
        ));
    }
    Ok((dir, owned))
}

fn intake_loop(shared: &Shared, config: &AgentConfig, watch: &Path, stop: &AtomicBool) {
    let mut intake = Intake::new(watch.to_path_buf());
    let mut enqueued = 0usize;
    let mut last_activity = Instant::now();
    loop {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let ready = match intake.poll() {
            Ok(r) => r,
            Err(e) => {
                shared.lock().fail(e);
                shared.changed.notify_all();
                break;
            }
        };
        let room = config.max_docs.map_or(usize::MAX, |m| m - enqueued);
        let mut st = shared.lock();
        if st.fatal.is_some() {
            break;
        }
        if !ready.is_empty() || intake.pending() {
            last_activity = Instant::now();
        }
        for (index, name, source, size) in ready.into_iter().take(room) {
            let now = st.now();
            log::debug!("enqueue {name} as {index}");
            st.entries.insert(
                index,
                Entry {
                    doc: Document::new(index, now, size),
                    source,
                    name,
                    output: None,
                },
            );
            st.queued.insert(index);
            st.push(index, EventKind::Arrive, size as f64);
            enqueued += 1;
        }
        shared.changed.notify_all();
        if config.max_docs.is_some_and(|m| enqueued >= m) {
            break;
        }
        let drained = st.uploaded == st.entries.len();
        if config
            .idle_exit
            .is_some_and(|idle| drained && last_activity.elapsed() >= idle)
        {
            break;
        }
        // Notifications only end the wait early on a fatal error.
        let deadline = Instant::now() + config.poll_interval;
        while st.fatal.is_none() {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                break;
            }
            st = shared
                .changed
                .wait_timeout(st, left)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }
}

fn process_worker(shared: &Shared, config: &AgentConfig, work_dir: &Path) {
    loop {
        let (index, source, name) = {
            let mut st = shared.lock();
            let sel = loop {
                if st.fatal.is_some() {
                    return;
                }
                let queue = st.snapshot(true);
                if !queue.is_empty() {
                    let st = &mut *st;
                    if let Some(sel) = st.chooser.choose(&queue, &st.spline) {
                        break sel;
                    }
                } else if st.intake_done {
                    return;
                }
                st = shared.wait(st);
            };
            let estimate = st.spline.estimate(sel.index);
            let now = st.now();
            let entry = st.entries.get_mut(&sel.index).expect("chosen from queue");
            if let Err(e) = entry
                .doc
                .transition(LifecycleEvent::StartProcessing { at: now })
            {
                st.fail(e.into());
                shared.changed.notify_all();
                return;
            }
            let claim = (sel.index, entry.source.clone(), entry.name.clone());
            st.queued.remove(&sel.index);
            st.processing += 1;
            st.push(sel.index, EventKind::ProcStart(sel.kind), estimate);
            claim
        };

        let ext = Path::new(&name)
            .extension()
            .map(|e| format!(".{}", e.to_string_lossy()))
            .unwrap_or_default();
        let out_path = work_dir.join(format!("{index}{ext}"));
        let result = process_file(&source, &out_path, config.fill);

        let mut st = shared.lock();
        st.processing -= 1;
        let now = st.now();
        let outcome = match result {
            Ok(report) => {
                let entry = st.entries.get_mut(&index).expect("claimed entry");
                let original = entry.doc.original_size;
                // Output no smaller than the input is discarded; the original
                // is uploaded and the observation is a zero ratio.
                let processed_size = if report.processed_size < original {
                    entry.output = Some(out_path.clone());
                    report.processed_size
                } else {
                    let _ = fs::remove_file(&out_path);
                    original
                };
                let cpu_cost = report.cpu_seconds.max(1e-6);
                entry
                    .doc
                    .transition(LifecycleEvent::ProcessingDone {
                        at: now,
                        processed_size,
                        cpu_cost,
                    })
                    .map(|()| reduction_ratio(original, processed_size, cpu_cost))
                    .map_err(AgentError::from)
                    .and_then(|ratio| {
                        st.spline.observe(index, ratio).map_err(|e| {
                            AgentError::Config(format!("spline rejected observation: {e}"))
                        })?;
                        st.push(index, EventKind::ProcEnd, ratio);
                        Ok(())
                    })
            }
            Err(e) => {
                log::warn!("operator failed on {name}: {e}; uploading the original");
                let _ = fs::remove_file(&out_path);
                st.processing_failures += 1;
                let entry = st.entries.get_mut(&index).expect("claimed entry");
                entry
                    .doc
                    .transition(LifecycleEvent::ProcessingFailed { at: now })
                    .map(|()| {
                        st.push(index, EventKind::ProcFail, 0.0);
                    })
                    .map_err(AgentError::from)
            }
        };
        match outcome {
            Ok(()) => {
                st.queued.insert(index);
            }
            Err(e) => st.fail(e),
        }
        drop(st);
        shared.changed.notify_all();
    }
}

struct UploadJob {
    index: DocIndex,
    path: PathBuf,
    name: String,
    processed: bool,
    original_size: u64,
}

fn upload_worker(shared: &Shared, config: &AgentConfig, http: &ureq::Agent) {
    loop {
        let job = {
            let mut st = shared.lock();
            let index = loop {
                if st.fatal.is_some() {
                    return;
                }
                let queue = st.snapshot(false);
                if !queue.is_empty() {
                    let st = &mut *st;
                    if let Some(i) = st.uploader.choose(&queue, &st.spline) {
                        break i;
                    }
                } else if st.intake_done && st.processing == 0 && !st.has_raw() {
                    return;
                }
                st = shared.wait(st);
            };
            if !st.queued.remove(&index) {
                st.fail(AgentError::Config(format!(
                    "upload policy chose {index}, which is not queued"
                )));
                shared.changed.notify_all();
                return;
            }
            let now = st.now();
            let entry = st.entries.get_mut(&index).expect("queued entry");
            if let Err(e) = entry
                .doc
                .transition(LifecycleEvent::StartUpload { at: now })
            {
                st.fail(e.into());
                shared.changed.notify_all();
                return;
            }
            let job = UploadJob {
                index,
                path: entry.output.clone().unwrap_or_else(|| entry.source.clone()),
                name: entry.name.clone(),
                processed: entry.output.is_some(),
                original_size: entry.doc.original_size,
            };
            let size = entry.doc.upload_size();
            st.push(index, EventKind::UploadStart, size as f64);
            job
        };

        let result = send(http, config, &job);

        let mut st = shared.lock();
        match result {
            Ok(bytes) => {
                let now = st.now();
                let entry = st.entries.get_mut(&job.index).expect("uploading entry");
                match entry.doc.transition(LifecycleEvent::UploadDone { at: now }) {
                    Ok(()) => {
                        if job.processed {
                            let _ = fs::remove_file(&job.path);
                        }
                        st.uploaded += 1;
                        st.push(job.index, EventKind::UploadEnd, bytes as f64);
                    }
                    Err(e) => st.fail(e.into()),
                }
            }
            Err(e) => st.fail(e),
        }
        drop(st);
        shared.changed.notify_all();
    }
}

fn send(http: &ureq::Agent, config: &AgentConfig, job: &UploadJob) -> Result<u64, AgentError> {
    let body = fs::read(&job.path).map_err(|source| AgentError::ReadForUpload {
        path: job.path.clone(),
        source,
    })?;
    if let Some(rate) = config.upload_rate {
        thread::sleep(Duration::from_secs_f64(body.len() as f64 / rate));
    }
    let url = format!(
        "{}/v1/streams/{}/documents/{}",
        config.gateway_url.trim_end_matches('/'),
        config.stream_id,
        job.index
    );
    let mut backoff = config.retry.initial_backoff;
    let mut last = String::new();
    for attempt in 1..=config.retry.attempts {
        let res = http
            .post(&url)
            .header("X-Original-Name", &job.name)
            .header("X-Processed", if job.processed { "1" } else { "0" })
            .header("X-Original-Size", job.original_size.to_string())
            .send(&body[..]);
        match res {
            Ok(_) => return Ok(body.len() as u64),
            Err(e) => {
                last = e.to_string();
                log::warn!("upload of {} attempt {attempt} failed: {last}", job.index);
            }
        }
        if attempt < config.retry.attempts {
            thread::sleep(backoff);
            backoff *= 2;
        }
    }
    Err(AgentError::Upload {
        index: job.index,
        attempts: config.retry.attempts,
        message: last,
    })
}
