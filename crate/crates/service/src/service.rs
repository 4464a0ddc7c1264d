//! The advisory service facade used by the HTTP layer and the CLI.
//!
//! Every mutation is journaled before it is applied, and each session sits
//! behind its own async mutex (FIFO), so requests to one session are applied
//! in arrival order while different sessions proceed independently.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use advisor_core::policy::Checkpoint;
use advisor_core::risk::{DialogueEncoding, FeedbackEvent, FeedbackKind, Lexicon, RiskHeadParams, RiskVector};
use advisor_core::Universe;
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Mutex;

use crate::backend::{BackendSettings, ContextDigest, LexiconBackend, ProfilerBackend};
use crate::error::{ServiceError, ServiceResult};
use crate::jobs::{JobHandle, JobManager, JobRequest, JobSnapshot};
use crate::journal::{Journal, JournalEntry};
use crate::recommend::{explanation_spans, Engine, ExplanationSpan, Recommendation, Recommender};
use crate::responder::{action_features, risk_features, select_response, Intent, ResponderParams, SelectMode, Slots};
use crate::session::{SessionEvent, SessionRecord};

pub struct ServiceSettings {
    /// Journal file; `None` keeps the journal in memory.
    pub journal: Option<PathBuf>,
    /// Market snapshot recommendations are made on.
    pub universe: Arc<Universe>,
    pub checkpoint: Option<PathBuf>,
    /// Feature window used when no checkpoint dictates one.
    pub window: usize,
    pub fallback_enabled: bool,
    /// Returns used for a recommendation's expected metrics.
    pub lookback: usize,
    pub lexicon: Lexicon,
    pub head: Option<RiskHeadParams>,
    pub responder: ResponderParams,
    pub reply_mode: SelectMode,
    pub backend: BackendSettings,
    pub job_output_dir: PathBuf,
    pub max_concurrent_jobs: usize,
}

impl ServiceSettings {
    pub fn new(universe: Arc<Universe>) -> Self {
        Self {
            journal: None,
            universe,
            checkpoint: None,
            window: 20,
            fallback_enabled: true,
            lookback: 60,
            lexicon: Lexicon::default(),
            head: None,
            responder: ResponderParams::default(),
            reply_mode: SelectMode::Argmax,
            backend: BackendSettings::Lexicon,
            job_output_dir: PathBuf::from("runs"),
            max_concurrent_jobs: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvisorReply {
    pub session_id: String,
    pub reply: String,
    pub intent: Intent,
    pub template: usize,
    pub previous_risk_vector: RiskVector,
    pub risk_vector: RiskVector,
    /// Profile the risk head infers from this utterance alone.
    pub inferred: RiskVector,
    pub attributions: Vec<ExplanationSpan>,
    pub degraded: bool,
}

type SessionMap = RwLock<HashMap<String, Arc<Mutex<SessionRecord>>>>;

pub struct AdvisoryService {
    lexicon: Arc<Lexicon>,
    head: RiskHeadParams,
    responder: ResponderParams,
    reply_mode: SelectMode,
    backend: Arc<dyn ProfilerBackend>,
    backend_timeout: Option<Duration>,
    fallback: LexiconBackend,
    recommender: Recommender,
    journal: Arc<Journal>,
    sessions: SessionMap,
    jobs: JobManager,
}

impl AdvisoryService {
    /// Opens the journal, rebuilds sessions and jobs from it, and loads the
    /// policy checkpoint if one is configured.
    pub fn open(settings: ServiceSettings) -> ServiceResult<Self> {
        let lexicon = Arc::new(settings.lexicon);
        let head = settings.head.unwrap_or_else(|| RiskHeadParams::from_lexicon(&lexicon));
        if head.feature_dim() != lexicon.dim() {
            return Err(ServiceError::Config(format!(
                "risk head expects {} features, lexicon has {}",
                head.feature_dim(),
                lexicon.dim()
            )));
        }
        settings.responder.validate()?;
        let (policy, window) = match &settings.checkpoint {
            Some(path) => {
                let ckpt = Checkpoint::load(path).map_err(|e| ServiceError::Config(e.to_string()))?;
                (Some(ckpt.policy()?), ckpt.env.window)
            }
            None => (None, settings.window),
        };
        let recommender = Recommender::new(
            settings.universe,
            policy,
            window,
            settings.fallback_enabled,
            settings.lookback,
        )?;
        let (journal, records) = match &settings.journal {
            Some(path) => Journal::open(path)?,
            None => (Journal::in_memory(), Vec::new()),
        };
        let journal = Arc::new(journal);

        let mut histories: Vec<(String, Vec<SessionEvent>)> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for r in &records {
            if let JournalEntry::Session { session_id, event } = &r.entry {
                let i = *index.entry(session_id.clone()).or_insert_with(|| {
                    histories.push((session_id.clone(), Vec::new()));
                    histories.len() - 1
                });
                histories[i].1.push(event.clone());
            }
        }
        let mut sessions = HashMap::new();
        for (id, events) in histories {
            let record = SessionRecord::replay(&events, &lexicon)?;
            sessions.insert(id, Arc::new(Mutex::new(record)));
        }
        let jobs = JobManager::new(journal.clone(), settings.job_output_dir, settings.max_concurrent_jobs);
        jobs.restore(&records)?;

        Ok(Self {
            backend: settings.backend.build(lexicon.clone())?,
            backend_timeout: settings.backend.timeout(),
            fallback: LexiconBackend::new(lexicon.clone()),
            lexicon,
            head,
            responder: settings.responder,
            reply_mode: settings.reply_mode,
            recommender,
            journal,
            sessions: RwLock::new(sessions),
            jobs,
        })
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn journal(&self) -> &Journal {
        &self.journal
    }

    fn session(&self, id: &str) -> ServiceResult<Arc<Mutex<SessionRecord>>> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::SessionNotFound(id.to_string()))
    }

    /// Journals `event` and, only if that succeeded, applies it.
    fn commit(&self, record: &mut SessionRecord, event: SessionEvent) -> ServiceResult<()> {
        self.journal.append(JournalEntry::Session {
            session_id: record.session_id.clone(),
            event: event.clone(),
        })?;
        record.apply(&event, &self.lexicon)
    }

    /// Encodes through the configured backend; on error or timeout falls
    /// back to the lexicon and reports the result as degraded.
    async fn encode(&self, text: &str, context: &ContextDigest) -> (DialogueEncoding, bool) {
        let call = self.backend.encode(text, context);
        let outcome = match self.backend_timeout {
            Some(limit) => tokio::time::timeout(limit, call)
                .await
                .unwrap_or_else(|_| Err(ServiceError::Backend(format!("no answer within {limit:?}")))),
            None => call.await,
        };
        match outcome {
            Ok(enc) => (enc, false),
            Err(e) => {
                tracing::warn!(backend = self.backend.name(), error = %e, "profiler backend failed; using lexicon");
                (self.fallback.encode_now(text), true)
            }
        }
    }

    fn digest(record: &SessionRecord) -> ContextDigest {
        ContextDigest {
            session_id: record.session_id.clone(),
            turns: record.turns.len(),
            risk_appetite: record.risk_vector.risk_appetite,
        }
    }

    pub async fn create_session(&self, intake: &[String]) -> ServiceResult<SessionRecord> {
        let session_id = uuid::Uuid::new_v4().simple().to_string();
        let created = Utc::now();
        let mut record = SessionRecord::new(session_id.clone(), created);
        let mut events = Vec::with_capacity(intake.len());
        for text in intake {
            let (encoding, degraded) = self.encode(text, &Self::digest(&record)).await;
            events.push(SessionEvent::UserMessage {
                text: text.clone(),
                encoding,
                timestamp: Utc::now(),
                degraded,
            });
        }
        self.journal.append(JournalEntry::Session {
            session_id: session_id.clone(),
            event: SessionEvent::Created {
                session_id: session_id.clone(),
                timestamp: created,
            },
        })?;
        for e in events {
            self.commit(&mut record, e)?;
        }
        self.sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(session_id, Arc::new(Mutex::new(record.clone())));
        Ok(record)
    }

    pub async fn get_session(&self, id: &str) -> ServiceResult<SessionRecord> {
        Ok(self.session(id)?.lock().await.clone())
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().unwrap_or_else(|p| p.into_inner()).keys().cloned().collect();
        ids.sort();
        ids
    }

    pub async fn handle_message(&self, id: &str, text: &str) -> ServiceResult<AdvisorReply> {
        let session = self.session(id)?;
        let mut record = session.lock().await;
        let (encoding, degraded) = self.encode(text, &Self::digest(&record)).await;
        let before = record.risk_vector;
        self.commit(
            &mut record,
            SessionEvent::UserMessage {
                text: text.to_string(),
                encoding: encoding.clone(),
                timestamp: Utc::now(),
                degraded,
            },
        )?;
        let after = record.risk_vector;
        let delta: [f64; 5] = std::array::from_fn(|k| after.to_array()[k] - before.to_array()[k]);

        // The action side of the reply features is the last served allocation.
        let (weights, exposure) = match record.recommendation_log.last() {
            Some(r) => (r.weights.clone(), r.exposure),
            None => {
                let n = self.recommender.n_assets();
                (vec![1.0 / n as f64; n], 0.0)
            }
        };
        let attributions = explanation_spans(text, &encoding, &self.lexicon, &self.head);
        let slots = Slots {
            appetite: after.risk_appetite,
            delta: delta[0],
            phrases: attributions.iter().map(|a| a.phrase.clone()).collect(),
        };
        let mode = match self.reply_mode {
            SelectMode::Sample { seed } => SelectMode::Sample {
                seed: seed ^ record.turns.len() as u64,
            },
            m => m,
        };
        let selection = select_response(
            &risk_features(delta, !encoding.is_empty()),
            &action_features(&weights, exposure),
            &self.responder,
            mode,
            &slots,
        )?;
        self.commit(
            &mut record,
            SessionEvent::AdvisorReply {
                text: selection.text.clone(),
                intent: selection.intent,
                timestamp: Utc::now(),
                degraded,
            },
        )?;
        Ok(AdvisorReply {
            session_id: id.to_string(),
            reply: selection.text,
            intent: selection.intent,
            template: selection.template,
            previous_risk_vector: before,
            risk_vector: after,
            inferred: self.head.infer(&encoding)?,
            attributions,
            degraded,
        })
    }

    pub async fn record_feedback(&self, id: &str, event: FeedbackEvent) -> ServiceResult<SessionRecord> {
        event.validate().map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let session = self.session(id)?;
        let mut record = session.lock().await;
        let encoding = match (&event.kind, &event.text) {
            (FeedbackKind::FreeText, Some(text)) => Some(self.encode(text, &Self::digest(&record)).await.0),
            _ => None,
        };
        self.commit(
            &mut record,
            SessionEvent::Feedback {
                event,
                encoding,
                timestamp: Utc::now(),
            },
        )?;
        Ok(record.clone())
    }

    /// Serves an allocation for the session. With `appetite_override` the
    /// result is a what-if preview: neither logged nor journaled.
    pub async fn recommend(
        &self,
        id: &str,
        engine: Option<Engine>,
        appetite_override: Option<f64>,
    ) -> ServiceResult<Recommendation> {
        let session = self.session(id)?;
        let mut record = session.lock().await;
        let mut risk = record.risk_vector;
        if let Some(a) = appetite_override {
            if !(0.0..=1.0).contains(&a) {
                return Err(ServiceError::Invalid(format!("risk_appetite override {a} outside [0, 1]")));
            }
            risk.risk_appetite = a;
        }
        let rec = self
            .recommender
            .recommend(risk, engine, record.last_evidence(), &self.lexicon, &self.head)?;
        if appetite_override.is_none() {
            self.commit(
                &mut record,
                SessionEvent::Recommended {
                    recommendation: rec.clone(),
                },
            )?;
        }
        Ok(rec)
    }

    /// Rebuilds a session purely from the journal.
    pub fn replay_session(&self, id: &str) -> ServiceResult<SessionRecord> {
        let events: Vec<SessionEvent> = self
            .journal
            .records()?
            .into_iter()
            .filter_map(|r| match r.entry {
                JournalEntry::Session { session_id, event } if session_id == id => Some(event),
                _ => None,
            })
            .collect();
        if events.is_empty() {
            return Err(ServiceError::SessionNotFound(id.to_string()));
        }
        SessionRecord::replay(&events, &self.lexicon)
    }

    pub async fn submit_job(&self, mut request: JobRequest) -> ServiceResult<JobSnapshot> {
        if let Some(id) = &request.session_id {
            let profile = self.get_session(id).await?.risk_vector.to_array();
            let Value::Object(cfg) = &mut request.config else {
                return Err(ServiceError::Config("job config must be a JSON object".into()));
            };
            let risk = cfg.entry("risk").or_insert_with(|| json!({}));
            match risk {
                Value::Object(r) => {
                    r.insert("profile".into(), json!(profile));
                }
                _ => return Err(ServiceError::Config("config `risk` must be an object".into())),
            }
        }
        self.jobs.submit(request)
    }

    pub fn job(&self, id: &str) -> ServiceResult<Arc<JobHandle>> {
        self.jobs.get(id)
    }

    /// Stops accepting job progress, waits up to `grace` for running jobs
    /// to settle, then syncs the journal.
    pub async fn shutdown(&self, grace: Duration) -> ServiceResult<()> {
        self.jobs.shutdown();
        let deadline = tokio::time::Instant::now() + grace;
        while !self.jobs.all_terminal() && tokio::time::Instant::now() < deadline {
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        self.journal.flush()
    }
}
