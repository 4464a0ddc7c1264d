//! Advisory service: event-sourced dialogue sessions, recommendations,
//! feedback capture and background train/backtest/compare jobs, exposed as
//! an HTTP + JSON API with server-sent progress streams.

pub mod backend;
pub mod error;
pub mod http;
pub mod jobs;
pub mod journal;
pub mod recommend;
pub mod responder;
pub mod service;
pub mod session;

/// Carried by every HTTP response body.
pub const SCHEMA_VERSION: u32 = 1;

pub use backend::{BackendSettings, ChatCompletionBackend, ContextDigest, LexiconBackend, ProfilerBackend};
pub use error::{ServiceError, ServiceResult};
pub use jobs::{JobKind, JobRequest, JobSnapshot, JobState, JobStreamEvent};
pub use journal::{Journal, JournalEntry, JournalRecord};
pub use recommend::{Engine, Explanation, Recommendation, Recommender};
pub use responder::{Intent, ResponderParams, SelectMode, Selection, Template};
pub use service::{AdvisorReply, AdvisoryService, ServiceSettings};
pub use session::{SessionEvent, SessionRecord, Speaker, Turn};
