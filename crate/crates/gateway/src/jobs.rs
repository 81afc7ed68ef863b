use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use richtx::regionfuse::{GenerationConfig, Preview, SpanLoss};
use richtx::richdoc::{FsImageResolver, RichTextDocument};
use richtx::tensor::{encode_rgb_png, Grid};
use richtx::{toy_engine, Engine, GenerateOptions};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::{watch, Semaphore};

use crate::artifacts::write_result;
use crate::config::{merge_json, GatewayConfig};
use crate::error::ServiceError;

/// Builds the engine for a submitted document.
pub type EngineFactory = Arc<dyn Fn(&RichTextDocument) -> richtx::Result<Engine> + Send + Sync>;

/// Toy backend laid out per document.
pub fn toy_engines(image: Grid) -> EngineFactory {
    Arc::new(move |doc| toy_engine(doc, image))
}

/// The same engine for every document.
pub fn fixed_engine(engine: Engine) -> EngineFactory {
    Arc::new(move |_| Ok(engine.clone()))
}

/// Job identifier: a ULID, 26 Crockford base32 characters.
pub type JobId = String;

/// Monotonic ULIDs, so ids stay unique within a millisecond.
#[derive(Default)]
pub struct JobIdGenerator {
    inner: Mutex<ulid::Generator>,
}

impl fmt::Debug for JobIdGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("JobIdGenerator")
    }
}

impl JobIdGenerator {
    pub fn next_id(&self) -> JobId {
        let mut g = self.inner.lock().expect("id generator lock");
        loop {
            match g.generate() {
                Ok(id) => return id.to_string(),
                // random part overflowed within this millisecond
                Err(_) => std::thread::yield_now(),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn can_become(self, next: JobState) -> bool {
        use JobState::*;
        matches!((self, next), (Queued, Running) | (Running, Done) | (Running, Failed))
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JobState::Queued => "queued",
            JobState::Running => "running",
            JobState::Done => "done",
            JobState::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum StreamEvent {
    Preview {
        job_id: JobId,
        step: usize,
        t_norm: f64,
        /// Base64 PNG of the clean-image prediction.
        preview: String,
        /// Guidance losses keyed by span id.
        losses: BTreeMap<usize, SpanLoss>,
    },
    Done {
        job_id: JobId,
    },
    Failed {
        job_id: JobId,
        error: String,
    },
}

impl StreamEvent {
    pub fn step(&self) -> Option<usize> {
        match self {
            StreamEvent::Preview { step, .. } => Some(*step),
            _ => None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        !matches!(self, StreamEvent::Preview { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            StreamEvent::Preview { .. } => "preview",
            StreamEvent::Done { .. } => "done",
            StreamEvent::Failed { .. } => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultView {
    pub image: String,
    pub plain_image: String,
    pub tokenmaps: String,
    pub diagnostics: String,
    /// Token-map PNGs and their index, by file name.
    pub token_map_files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub job_id: JobId,
    pub state: JobState,
    pub config: GenerationConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<ResultView>,
}

#[derive(Debug)]
struct JobInner {
    state: JobState,
    error: Option<String>,
    events: Vec<StreamEvent>,
    token_map_files: Vec<String>,
}

#[derive(Debug)]
pub struct Job {
    pub id: JobId,
    pub doc: RichTextDocument,
    pub config: GenerationConfig,
    inner: Mutex<JobInner>,
    /// Bumped whenever an event is appended.
    version: watch::Sender<usize>,
}

impl Job {
    fn new(id: JobId, doc: RichTextDocument, config: GenerationConfig) -> Self {
        Job {
            id,
            doc,
            config,
            inner: Mutex::new(JobInner {
                state: JobState::Queued,
                error: None,
                events: Vec::new(),
                token_map_files: Vec::new(),
            }),
            version: watch::channel(0).0,
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, JobInner> {
        self.inner.lock().expect("job lock")
    }

    pub fn state(&self) -> JobState {
        self.lock().state
    }

    fn transition(&self, next: JobState) -> Result<(), ServiceError> {
        let mut inner = self.lock();
        if !inner.state.can_become(next) {
            return Err(ServiceError::BadRequest(format!(
                "job {} cannot go from {} to {next}",
                self.id, inner.state
            )));
        }
        inner.state = next;
        Ok(())
    }

    fn push_event(&self, event: StreamEvent) {
        let n = {
            let mut inner = self.lock();
            inner.events.push(event);
            inner.events.len()
        };
        self.version.send_replace(n);
    }

    fn finish(&self, outcome: Result<Vec<String>, String>) {
        {
            let mut inner = self.lock();
            match &outcome {
                Ok(files) => {
                    inner.state = JobState::Done;
                    inner.token_map_files = files.clone();
                }
                Err(e) => {
                    inner.state = JobState::Failed;
                    inner.error = Some(e.clone());
                }
            }
        }
        self.push_event(match outcome {
            Ok(_) => StreamEvent::Done {
                job_id: self.id.clone(),
            },
            Err(error) => StreamEvent::Failed {
                job_id: self.id.clone(),
                error,
            },
        });
    }

    /// Events from index `from` on, and whether the stream has ended.
    pub fn events_from(&self, from: usize) -> (Vec<StreamEvent>, bool) {
        let inner = self.lock();
        let events = inner.events.get(from..).unwrap_or_default().to_vec();
        let ended = inner.events.last().is_some_and(StreamEvent::is_terminal);
        (events, ended)
    }

    pub fn subscribe(&self) -> watch::Receiver<usize> {
        self.version.subscribe()
    }

    pub fn view(&self) -> JobView {
        let inner = self.lock();
        let base = format!("/v1/jobs/{}", self.id);
        JobView {
            job_id: self.id.clone(),
            state: inner.state,
            config: self.config.clone(),
            error: inner.error.clone(),
            result: (inner.state == JobState::Done).then(|| ResultView {
                image: format!("{base}/image"),
                plain_image: format!("{base}/plain"),
                tokenmaps: format!("{base}/tokenmaps"),
                diagnostics: format!("{base}/diagnostics"),
                token_map_files: inner.token_map_files.clone(),
            }),
        }
    }
}

/// Job registry and scheduler. Each job runs once on a blocking worker; at
/// most `workers` run at a time.
pub struct JobService {
    config: GatewayConfig,
    engines: EngineFactory,
    ids: JobIdGenerator,
    jobs: RwLock<HashMap<JobId, Arc<Job>>>,
    idempotency: Mutex<HashMap<String, JobId>>,
    permits: Arc<Semaphore>,
    waiting: Arc<AtomicUsize>,
}

impl fmt::Debug for JobService {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JobService")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl JobService {
    pub fn new(config: GatewayConfig, engines: EngineFactory) -> Arc<Self> {
        let workers = config.workers.max(1);
        Arc::new(JobService {
            config,
            engines,
            ids: JobIdGenerator::default(),
            jobs: RwLock::new(HashMap::new()),
            idempotency: Mutex::new(HashMap::new()),
            permits: Arc::new(Semaphore::new(workers)),
            waiting: Arc::new(AtomicUsize::new(0)),
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn images_dir(&self) -> PathBuf {
        self.config.data_dir.join("images")
    }

    pub fn job_dir(&self, id: &str) -> PathBuf {
        self.config.data_dir.join("jobs").join(id)
    }

    /// Engine for `doc`, resolving image references against uploads.
    pub fn engine_for(&self, doc: &RichTextDocument) -> richtx::Result<Engine> {
        Ok((self.engines)(doc)?.with_images(Arc::new(FsImageResolver::new(self.images_dir()))))
    }

    /// The service defaults overlaid with `patch`.
    pub fn resolve_config(&self, patch: Option<&Value>) -> Result<GenerationConfig, ServiceError> {
        let mut base =
            serde_json::to_value(&self.config.defaults).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        if let Some(p) = patch {
            if !p.is_object() {
                return Err(ServiceError::BadRequest("config must be a JSON object".into()));
            }
            merge_json(&mut base, p);
        }
        let cfg: GenerationConfig =
            serde_json::from_value(base).map_err(|e| ServiceError::BadRequest(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn get(&self, id: &str) -> Result<Arc<Job>, ServiceError> {
        self.jobs
            .read()
            .expect("job table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    /// Validates and enqueues a job. A repeated idempotency key returns the
    /// original job id; the flag is true when a new job was created.
    pub fn submit(
        self: &Arc<Self>,
        doc: RichTextDocument,
        config: GenerationConfig,
        idempotency_key: Option<String>,
    ) -> Result<(JobId, bool), ServiceError> {
        doc.validate()?;
        config.validate()?;
        let mut keys = self.idempotency.lock().expect("idempotency lock");
        if let Some(id) = idempotency_key.as_ref().and_then(|k| keys.get(k)) {
            return Ok((id.clone(), false));
        }
        let waiting = self.waiting.load(Ordering::SeqCst);
        if waiting >= self.config.queue_capacity {
            return Err(ServiceError::QueueFull(waiting));
        }
        let id = self.ids.next_id();
        let job = Arc::new(Job::new(id.clone(), doc, config));
        self.jobs
            .write()
            .expect("job table lock")
            .insert(id.clone(), job.clone());
        if let Some(k) = idempotency_key {
            keys.insert(k, id.clone());
        }
        drop(keys);

        self.waiting.fetch_add(1, Ordering::SeqCst);
        let svc = self.clone();
        tokio::spawn(async move {
            let permit = svc
                .permits
                .clone()
                .acquire_owned()
                .await
                .expect("semaphore is never closed");
            svc.waiting.fetch_sub(1, Ordering::SeqCst);
            let runner = svc.clone();
            let job2 = job.clone();
            let joined = tokio::task::spawn_blocking(move || runner.run(&job2)).await;
            if let Err(e) = joined {
                job.finish(Err(format!("worker panicked: {e}")));
            }
            drop(permit);
        });
        Ok((id, true))
    }

    fn run(&self, job: &Job) {
        if job.transition(JobState::Running).is_err() {
            return;
        }
        tracing::info!(job = %job.id, "job started");
        let outcome = self.execute(job).map_err(|e| e.to_string());
        if let Err(e) = &outcome {
            tracing::warn!(job = %job.id, error = %e, "job failed");
        }
        job.finish(outcome);
    }

    fn execute(&self, job: &Job) -> Result<Vec<String>, ServiceError> {
        let engine = self.engine_for(&job.doc)?;
        let mut observer = |p: &Preview| match encode_rgb_png(&p.image) {
            Ok(png) => job.push_event(StreamEvent::Preview {
                job_id: job.id.clone(),
                step: p.step,
                t_norm: p.t_norm,
                preview: B64.encode(png),
                losses: p.losses.clone(),
            }),
            Err(e) => tracing::warn!(job = %job.id, error = %e, "preview not encodable"),
        };
        let res = engine.generate_with(&job.doc, &job.config, GenerateOptions::default(), &mut observer)?;
        Ok(write_result(&self.job_dir(&job.id), &res)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn ids_are_unique_and_well_formed() {
        let g = JobIdGenerator::default();
        let mut seen = HashSet::with_capacity(1_000_000);
        for _ in 0..1_000_000 {
            let id = g.next_id();
            assert_eq!(id.len(), 26);
            assert!(seen.insert(id));
        }
        let id = g.next_id();
        assert!(id.chars().all(|c| c.is_ascii_digit() || c.is_ascii_uppercase()));
        assert!(!id.contains(['I', 'L', 'O', 'U']));
    }

    fn state() -> impl Strategy<Value = JobState> {
        prop_oneof![
            Just(JobState::Queued),
            Just(JobState::Running),
            Just(JobState::Done),
            Just(JobState::Failed)
        ]
    }

    proptest! {
        #[test]
        fn only_forward_transitions(path in proptest::collection::vec(state(), 0..12)) {
            let job = Job::new("j".into(), RichTextDocument::new(vec![]), GenerationConfig::default());
            let mut history = vec![JobState::Queued];
            for next in path {
                let before = job.state();
                let ok = job.transition(next).is_ok();
                prop_assert_eq!(ok, before.can_become(next));
                if ok {
                    history.push(next);
                }
            }
            // the visited states are a prefix of queued → running → terminal
            prop_assert!(history.len() <= 3);
            if history.len() >= 2 {
                prop_assert_eq!(history[1], JobState::Running);
            }
            if history.len() == 3 {
                prop_assert!(history[2].is_terminal());
            }
        }
    }
}
