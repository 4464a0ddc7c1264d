//! Background train/backtest/compare jobs. Each job runs on the blocking
//! pool, appends progress events to an indexed in-memory log and wakes
//! subscribers through a watch channel. Lifecycle changes are journaled;
//! a job that was queued or running when the process died is marked
//! failed on restart.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use advisor_core::config::RunConfig;
use advisor_core::experiment::StrategyName;
use advisor_core::pipeline::{run_backtest, run_compare, run_train};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{watch, Semaphore};

use crate::error::{ServiceError, ServiceResult};
use crate::journal::{Journal, JournalEntry, JournalRecord};

/// Upper bound on progress events emitted for one backtest equity curve.
const MAX_EQUITY_EVENTS: usize = 250;
pub const INTERRUPTED: &str = "interrupted by shutdown";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Train,
    Backtest,
    Compare,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Done | Self::Failed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRequest {
    pub kind: JobKind,
    /// A run configuration document.
    pub config: Value,
    /// Backtest only; defaults to the first of the config's strategies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    /// Train only; risk-conditioned policy unless false.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub personalized: Option<bool>,
    /// Use this session's current risk vector as the run's investor
    /// profile. Resolved at submission; the journaled config carries the
    /// resolved profile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobStreamEvent {
    pub index: usize,
    /// `progress`, `done` or `failed`.
    pub event: String,
    pub data: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobSnapshot {
    pub job_id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub events: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JobJournalEvent {
    Submitted { request: JobRequest, timestamp: DateTime<Utc> },
    Started { timestamp: DateTime<Utc> },
    Finished { result: Value, timestamp: DateTime<Utc> },
    Failed { diagnostic: String, timestamp: DateTime<Utc> },
}

struct JobInner {
    snapshot: JobSnapshot,
    events: Vec<JobStreamEvent>,
}

pub struct JobHandle {
    inner: Mutex<JobInner>,
    tx: watch::Sender<usize>,
}

impl JobHandle {
    fn new(snapshot: JobSnapshot) -> Self {
        Self {
            inner: Mutex::new(JobInner {
                snapshot,
                events: Vec::new(),
            }),
            tx: watch::channel(0).0,
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, JobInner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn push(&self, event: &str, data: Value) {
        let count = {
            let mut inner = self.lock();
            let index = inner.events.len();
            inner.events.push(JobStreamEvent {
                index,
                event: event.to_string(),
                data,
            });
            inner.snapshot.events = inner.events.len();
            inner.events.len()
        };
        self.tx.send_replace(count);
    }

    fn set_state(&self, state: JobState, result: Option<Value>, diagnostic: Option<String>, at: DateTime<Utc>) {
        {
            let mut inner = self.lock();
            inner.snapshot.state = state;
            inner.snapshot.updated_at = at;
            if result.is_some() {
                inner.snapshot.result = result;
            }
            if diagnostic.is_some() {
                inner.snapshot.diagnostic = diagnostic;
            }
        }
        self.tx.send_modify(|_| {});
    }

    pub fn snapshot(&self) -> JobSnapshot {
        self.lock().snapshot.clone()
    }

    /// Events with index `>= from`, and whether the job has finished.
    pub fn events_from(&self, from: usize) -> (Vec<JobStreamEvent>, bool) {
        let inner = self.lock();
        let events = inner.events.get(from..).map(<[_]>::to_vec).unwrap_or_default();
        (events, inner.snapshot.state.is_terminal())
    }

    pub fn subscribe(&self) -> watch::Receiver<usize> {
        self.tx.subscribe()
    }
}

pub struct JobManager {
    jobs: RwLock<HashMap<String, Arc<JobHandle>>>,
    journal: Arc<Journal>,
    output_dir: PathBuf,
    permits: Arc<Semaphore>,
    stopping: Arc<AtomicBool>,
}

impl JobManager {
    pub fn new(journal: Arc<Journal>, output_dir: PathBuf, max_concurrent: usize) -> Self {
        Self {
            jobs: RwLock::new(HashMap::new()),
            journal,
            output_dir,
            permits: Arc::new(Semaphore::new(max_concurrent.max(1))),
            stopping: Arc::new(AtomicBool::new(false)),
        }
    }

    /// Rebuilds job states from journal records; unfinished jobs are failed.
    pub fn restore(&self, records: &[JournalRecord]) -> ServiceResult<()> {
        let mut order: Vec<String> = Vec::new();
        let mut restored: HashMap<String, JobSnapshot> = HashMap::new();
        for r in records {
            let JournalEntry::Job { job_id, event } = &r.entry else { continue };
            match event {
                JobJournalEvent::Submitted { request, timestamp } => {
                    order.push(job_id.clone());
                    restored.insert(
                        job_id.clone(),
                        JobSnapshot {
                            job_id: job_id.clone(),
                            kind: request.kind,
                            state: JobState::Queued,
                            created_at: *timestamp,
                            updated_at: *timestamp,
                            events: 0,
                            result: None,
                            diagnostic: None,
                        },
                    );
                }
                other => {
                    let Some(s) = restored.get_mut(job_id) else {
                        return Err(ServiceError::Journal(format!("job {job_id} has events before submission")));
                    };
                    match other {
                        JobJournalEvent::Started { timestamp } => {
                            s.state = JobState::Running;
                            s.updated_at = *timestamp;
                        }
                        JobJournalEvent::Finished { result, timestamp } => {
                            s.state = JobState::Done;
                            s.result = Some(result.clone());
                            s.updated_at = *timestamp;
                        }
                        JobJournalEvent::Failed { diagnostic, timestamp } => {
                            s.state = JobState::Failed;
                            s.diagnostic = Some(diagnostic.clone());
                            s.updated_at = *timestamp;
                        }
                        JobJournalEvent::Submitted { .. } => unreachable!(),
                    }
                }
            }
        }
        let mut jobs = self.jobs.write().unwrap_or_else(|p| p.into_inner());
        for id in order {
            let mut snap = restored.remove(&id).expect("restored job");
            if !snap.state.is_terminal() {
                let now = Utc::now();
                self.journal.append(JournalEntry::Job {
                    job_id: id.clone(),
                    event: JobJournalEvent::Failed {
                        diagnostic: INTERRUPTED.into(),
                        timestamp: now,
                    },
                })?;
                snap.state = JobState::Failed;
                snap.diagnostic = Some(INTERRUPTED.into());
                snap.updated_at = now;
            }
            let (event, data) = match snap.state {
                JobState::Done => ("done", snap.result.clone().unwrap_or(Value::Null)),
                _ => ("failed", json!({ "diagnostic": snap.diagnostic })),
            };
            let handle = JobHandle::new(snap);
            handle.push(event, data);
            jobs.insert(id, Arc::new(handle));
        }
        Ok(())
    }

    /// Validates the request, journals it and starts the job.
    pub fn submit(&self, request: JobRequest) -> ServiceResult<JobSnapshot> {
        let job_id = uuid::Uuid::new_v4().simple().to_string();
        let work = prepare(&request, &job_id, &self.output_dir)?;
        let now = Utc::now();
        self.journal.append(JournalEntry::Job {
            job_id: job_id.clone(),
            event: JobJournalEvent::Submitted {
                request: request.clone(),
                timestamp: now,
            },
        })?;
        let handle = Arc::new(JobHandle::new(JobSnapshot {
            job_id: job_id.clone(),
            kind: request.kind,
            state: JobState::Queued,
            created_at: now,
            updated_at: now,
            events: 0,
            result: None,
            diagnostic: None,
        }));
        self.jobs
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(job_id.clone(), handle.clone());

        let snapshot = handle.snapshot();
        let journal = self.journal.clone();
        let permits = self.permits.clone();
        let stopping = self.stopping.clone();
        tokio::spawn(async move {
            let _permit = permits.acquire_owned().await;
            let record = |event: JobJournalEvent| {
                if let Err(e) = journal.append(JournalEntry::Job {
                    job_id: job_id.clone(),
                    event,
                }) {
                    tracing::error!(job = %job_id, error = %e, "cannot journal job state");
                }
            };
            if stopping.load(Ordering::SeqCst) {
                fail(&handle, INTERRUPTED.into(), &record);
                return;
            }
            let now = Utc::now();
            record(JobJournalEvent::Started { timestamp: now });
            handle.set_state(JobState::Running, None, None, now);

            let worker = handle.clone();
            let outcome = tokio::task::spawn_blocking(move || work.execute(&worker, &stopping)).await;
            match outcome {
                Ok(Ok(result)) => {
                    let now = Utc::now();
                    record(JobJournalEvent::Finished {
                        result: result.clone(),
                        timestamp: now,
                    });
                    handle.set_state(JobState::Done, Some(result.clone()), None, now);
                    handle.push("done", result);
                }
                Ok(Err(diagnostic)) => fail(&handle, diagnostic, &record),
                Err(join) => fail(&handle, format!("worker crashed: {join}"), &record),
            }
        });
        Ok(snapshot)
    }

    pub fn get(&self, job_id: &str) -> ServiceResult<Arc<JobHandle>> {
        self.jobs
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(job_id)
            .cloned()
            .ok_or_else(|| ServiceError::JobNotFound(job_id.to_string()))
    }

    /// Asks running jobs to stop; they end in the failed state.
    pub fn shutdown(&self) {
        self.stopping.store(true, Ordering::SeqCst);
    }

    pub fn all_terminal(&self) -> bool {
        self.jobs
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .values()
            .all(|h| h.snapshot().state.is_terminal())
    }
}

fn fail(handle: &JobHandle, diagnostic: String, record: &impl Fn(JobJournalEvent)) {
    let now = Utc::now();
    record(JobJournalEvent::Failed {
        diagnostic: diagnostic.clone(),
        timestamp: now,
    });
    handle.set_state(JobState::Failed, None, Some(diagnostic.clone()), now);
    handle.push("failed", json!({ "diagnostic": diagnostic }));
}

enum Work {
    Train { cfg: RunConfig, personalized: bool },
    Backtest { cfg: RunConfig, strategy: StrategyName },
    Compare { cfg: RunConfig },
}

/// Everything that can be rejected up front is checked here, before the job exists.
fn prepare(request: &JobRequest, job_id: &str, output_dir: &std::path::Path) -> ServiceResult<Work> {
    let mut cfg = RunConfig::from_json(&request.config.to_string()).map_err(|e| ServiceError::Config(e.to_string()))?;
    cfg.check_paths().map_err(|e| ServiceError::Config(e.to_string()))?;
    cfg.output_dir = output_dir.to_path_buf();
    cfg.run_id = job_id.to_string();
    Ok(match request.kind {
        JobKind::Train => Work::Train {
            cfg,
            personalized: request.personalized.unwrap_or(true),
        },
        JobKind::Backtest => {
            let strategy = match &request.strategy {
                Some(s) => StrategyName::parse(s).map_err(|e| ServiceError::Config(e.to_string()))?,
                None => *cfg
                    .strategies
                    .first()
                    .ok_or_else(|| ServiceError::Config("no strategy to backtest".into()))?,
            };
            Work::Backtest { cfg, strategy }
        }
        JobKind::Compare => {
            if cfg.strategies.is_empty() {
                return Err(ServiceError::Config("no strategies to compare".into()));
            }
            Work::Compare { cfg }
        }
    })
}

impl Work {
    fn execute(self, handle: &JobHandle, stopping: &AtomicBool) -> Result<Value, String> {
        let stopped = || stopping.load(Ordering::SeqCst);
        let result = match self {
            Work::Train { cfg, personalized } => {
                let artifacts = run_train(&cfg, personalized, |rec| {
                    handle.push("progress", json!(rec));
                    !stopped()
                })
                .map_err(|e| e.to_string())?;
                if stopped() {
                    return Err(INTERRUPTED.into());
                }
                json!({
                    "checkpoint": artifacts.checkpoint,
                    "loss_curve": artifacts.loss_curve,
                    "updates": artifacts.records.len(),
                    "final": artifacts.records.last(),
                })
            }
            Work::Backtest { cfg, strategy } => {
                let bt = run_backtest(&cfg, strategy).map_err(|e| e.to_string())?;
                let stride = bt.equity.len().div_ceil(MAX_EQUITY_EVENTS).max(1);
                for (step, equity) in bt.equity.iter().enumerate() {
                    if step % stride == 0 || step + 1 == bt.equity.len() {
                        handle.push("progress", json!({ "step": step, "equity": equity }));
                    }
                }
                json!({ "strategy": bt.strategy, "report": bt.report })
            }
            Work::Compare { cfg } => {
                let out = run_compare(&cfg, &cfg.strategies, |name| {
                    handle.push("progress", json!({ "strategy": name.as_str(), "status": "running" }));
                })
                .map_err(|e| e.to_string())?;
                json!({ "rows": out.rows, "csv": out.csv })
            }
        };
        Ok(result)
    }
}
