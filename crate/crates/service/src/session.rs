//! Session state as a fold over journaled events. The same [`SessionRecord::apply`]
//! runs for live requests and for replay, which is what makes a rebuilt
//! session identical to the live one.
//!
//! Risk appetite is published as the mean of its Beta posterior; the other
//! four dimensions move by clamped steps in the direction of the evidence.

use advisor_core::risk::{
    apply_encoded_feedback, apply_feedback, encoding_directions, shift_clamped, DialogueEncoding, FeedbackEvent,
    FeedbackKind, Lexicon, RiskDimension, RiskPosterior, RiskVector, DEFAULT_FEEDBACK_MAGNITUDE,
};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};
use crate::recommend::Recommendation;
use crate::responder::Intent;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    Advisor,
    Feedback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoding: Option<DialogueEncoding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<Intent>,
    #[serde(default)]
    pub degraded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    Created {
        session_id: String,
        timestamp: DateTime<Utc>,
    },
    UserMessage {
        text: String,
        encoding: DialogueEncoding,
        timestamp: DateTime<Utc>,
        #[serde(default)]
        degraded: bool,
    },
    AdvisorReply {
        text: String,
        intent: Intent,
        timestamp: DateTime<Utc>,
        #[serde(default)]
        degraded: bool,
    },
    Feedback {
        event: FeedbackEvent,
        /// Encoding of free-text feedback, as produced by the backend.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        encoding: Option<DialogueEncoding>,
        timestamp: DateTime<Utc>,
    },
    Recommended {
        recommendation: Recommendation,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub risk_vector: RiskVector,
    pub posterior: RiskPosterior,
    pub turns: Vec<Turn>,
    pub feedback_log: Vec<FeedbackEvent>,
    pub recommendation_log: Vec<Recommendation>,
}

impl SessionRecord {
    pub fn new(session_id: String, created_at: DateTime<Utc>) -> Self {
        Self {
            session_id,
            created_at,
            risk_vector: RiskVector::neutral(),
            posterior: RiskPosterior::uniform(),
            turns: Vec::new(),
            feedback_log: Vec::new(),
            recommendation_log: Vec::new(),
        }
    }

    /// Rebuilds a session from its events; the first must be `Created`.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a SessionEvent>, lexicon: &Lexicon) -> ServiceResult<Self> {
        let mut events = events.into_iter();
        let mut record = match events.next() {
            Some(SessionEvent::Created { session_id, timestamp }) => Self::new(session_id.clone(), *timestamp),
            _ => return Err(ServiceError::Journal("session history must start with `created`".into())),
        };
        for e in events {
            record.apply(e, lexicon)?;
        }
        Ok(record)
    }

    pub fn apply(&mut self, event: &SessionEvent, lexicon: &Lexicon) -> ServiceResult<()> {
        match event {
            SessionEvent::Created { .. } => {
                return Err(ServiceError::Journal(format!("session {} created twice", self.session_id)));
            }
            SessionEvent::UserMessage {
                text,
                encoding,
                timestamp,
                degraded,
            } => {
                let mut directions = encoding_directions(encoding, lexicon);
                directions[RiskDimension::RiskAppetite.index()] = 0;
                self.risk_vector = shift_clamped(&self.risk_vector, directions, DEFAULT_FEEDBACK_MAGNITUDE);
                self.posterior = self.posterior.observe(encoding, lexicon);
                self.publish_appetite();
                self.turns.push(Turn {
                    speaker: Speaker::User,
                    text: text.clone(),
                    timestamp: *timestamp,
                    encoding: Some(encoding.clone()),
                    intent: None,
                    degraded: *degraded,
                });
            }
            SessionEvent::AdvisorReply {
                text,
                intent,
                timestamp,
                degraded,
            } => self.turns.push(Turn {
                speaker: Speaker::Advisor,
                text: text.clone(),
                timestamp: *timestamp,
                encoding: None,
                intent: Some(*intent),
                degraded: *degraded,
            }),
            SessionEvent::Feedback {
                event,
                encoding,
                timestamp,
            } => {
                let before = self.risk_vector;
                match (event.kind, encoding) {
                    (FeedbackKind::FreeText, Some(enc)) => {
                        self.posterior = self.posterior.observe(enc, lexicon);
                        self.risk_vector = apply_encoded_feedback(&before, enc, lexicon, event.magnitude);
                    }
                    _ => {
                        self.posterior = self.posterior.update(event, lexicon);
                        self.risk_vector = apply_feedback(&before, event, lexicon);
                    }
                }
                self.publish_appetite();
                self.feedback_log.push(event.clone());
                self.turns.push(Turn {
                    speaker: Speaker::Feedback,
                    text: event.text.clone().unwrap_or_else(|| feedback_label(event.kind).to_string()),
                    timestamp: *timestamp,
                    encoding: encoding.clone(),
                    intent: None,
                    degraded: false,
                });
            }
            SessionEvent::Recommended { recommendation } => self.recommendation_log.push(recommendation.clone()),
        }
        Ok(())
    }

    fn publish_appetite(&mut self) {
        self.risk_vector.risk_appetite = self.posterior.appetite_mean();
    }

    /// The most recent turn carrying lexicon evidence, if any.
    pub fn last_evidence(&self) -> Option<(&str, &DialogueEncoding)> {
        self.turns.iter().rev().find_map(|t| match &t.encoding {
            Some(e) if !e.is_empty() => Some((t.text.as_str(), e)),
            _ => None,
        })
    }
}

fn feedback_label(kind: FeedbackKind) -> &'static str {
    match kind {
        FeedbackKind::Safer => "safer",
        FeedbackKind::Riskier => "riskier",
        FeedbackKind::FreeText => "free_text",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn start() -> SessionRecord {
        SessionRecord::new("s".into(), DateTime::<Utc>::UNIX_EPOCH)
    }

    fn fb(event: FeedbackEvent) -> SessionEvent {
        SessionEvent::Feedback {
            event,
            encoding: None,
            timestamp: DateTime::<Utc>::UNIX_EPOCH,
        }
    }

    #[test]
    fn safer_message_lowers_appetite_to_posterior_mean() {
        let lex = Lexicon::default();
        let mut s = start();
        let text = "I prefer safer assets this month";
        s.apply(
            &SessionEvent::UserMessage {
                text: text.into(),
                encoding: lex.encode(text),
                timestamp: DateTime::<Utc>::UNIX_EPOCH,
                degraded: false,
            },
            &lex,
        )
        .unwrap();
        assert!((s.risk_vector.risk_appetite - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.posterior.appetite().beta, 2.0);
        assert_eq!(s.turns.len(), 1);
    }

    #[test]
    fn safer_then_riskier_returns_to_start() {
        let lex = Lexicon::default();
        let mut s = start();
        s.apply(&fb(FeedbackEvent::safer()), &lex).unwrap();
        assert!(s.risk_vector.risk_appetite < 0.5);
        s.apply(&fb(FeedbackEvent::riskier()), &lex).unwrap();
        assert_eq!(s.risk_vector, RiskVector::neutral());
        assert_eq!(s.feedback_log.len(), 2);
    }

    #[test]
    fn replay_requires_created_first() {
        let lex = Lexicon::default();
        assert!(SessionRecord::replay(&[fb(FeedbackEvent::safer())], &lex).is_err());
    }
}
