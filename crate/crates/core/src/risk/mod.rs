//! Risk profiling: dialogue text to a bounded risk vector.
//!
//! Utterances are encoded as per-category phrase counts over a [`Lexicon`]
//! and mapped through an affine-logistic head ([`RiskHeadParams`]) whose
//! outputs are bounded in `(0, 1)`. A session-level [`RiskPosterior`] keeps a
//! Beta belief over risk appetite, and [`apply_feedback`] applies clamped
//! shifts from explicit safer/riskier feedback.

mod feedback;
mod head;
mod lexicon;
mod posterior;
mod vector;

pub use feedback::{
    apply_encoded_feedback, apply_feedback, encoding_directions, shift_clamped, FeedbackEvent,
    FeedbackKind, DEFAULT_EVIDENCE_WEIGHT, DEFAULT_FEEDBACK_MAGNITUDE,
};
pub use head::{
    attribute, parse_labeled_dialogues, risk_head_loss_and_grad, train_risk_head, Attribution,
    RiskHeadHyper, RiskHeadParams, TrainedRiskHead,
};
pub use lexicon::{DialogueEncoding, Lexicon, LexiconCategory, TokenSpan};
pub use posterior::{BetaParams, RiskPosterior};
pub use vector::{RiskDimension, RiskVector};
