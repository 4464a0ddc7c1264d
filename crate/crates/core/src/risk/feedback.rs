use serde::{Deserialize, Serialize};

use super::{DialogueEncoding, Lexicon, RiskDimension, RiskVector};
use crate::error::{Error, Result};

pub const DEFAULT_FEEDBACK_MAGNITUDE: f64 = 0.1;
pub const DEFAULT_EVIDENCE_WEIGHT: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    Safer,
    Riskier,
    FreeText,
}

fn default_magnitude() -> f64 {
    DEFAULT_FEEDBACK_MAGNITUDE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub kind: FeedbackKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
}

impl FeedbackEvent {
    pub fn safer() -> Self {
        Self::new(FeedbackKind::Safer, None, DEFAULT_FEEDBACK_MAGNITUDE)
    }

    pub fn riskier() -> Self {
        Self::new(FeedbackKind::Riskier, None, DEFAULT_FEEDBACK_MAGNITUDE)
    }

    pub fn free_text(text: impl Into<String>) -> Self {
        Self::new(FeedbackKind::FreeText, Some(text.into()), DEFAULT_FEEDBACK_MAGNITUDE)
    }

    pub fn new(kind: FeedbackKind, text: Option<String>, magnitude: f64) -> Self {
        Self { kind, text, magnitude }
    }

    pub fn with_magnitude(mut self, magnitude: f64) -> Self {
        self.magnitude = magnitude;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.magnitude) {
            return Err(Error::Input(format!(
                "feedback magnitude {} outside [0, 0.5]",
                self.magnitude
            )));
        }
        if self.kind == FeedbackKind::FreeText && self.text.is_none() {
            return Err(Error::Input("free_text feedback needs a text".into()));
        }
        Ok(())
    }
}

/// Net direction (-1, 0, +1) per dimension implied by an encoding's hits.
pub fn encoding_directions(encoding: &DialogueEncoding, lexicon: &Lexicon) -> [i8; 5] {
    let mut net = [0.0f64; 5];
    for (f, count) in encoding.feature_counts.iter().enumerate() {
        if let Some(c) = lexicon.categories.get(f) {
            net[c.dimension.index()] += c.sign as f64 * count;
        }
    }
    net.map(|v| if v > 0.0 { 1 } else if v < 0.0 { -1 } else { 0 })
}

/// Shift each dimension by `direction * magnitude`, then clamp to `[0, 1]`.
pub fn shift_clamped(r: &RiskVector, directions: [i8; 5], magnitude: f64) -> RiskVector {
    let mut out = r.to_array();
    for (v, d) in out.iter_mut().zip(directions) {
        if d != 0 {
            *v = (*v + d as f64 * magnitude).clamp(0.0, 1.0);
        }
    }
    RiskVector::from_array_unchecked(out)
}

fn kind_directions(kind: FeedbackKind) -> [i8; 5] {
    let sign = match kind {
        FeedbackKind::Safer => -1,
        FeedbackKind::Riskier => 1,
        FeedbackKind::FreeText => 0,
    };
    let mut d = [0i8; 5];
    d[RiskDimension::RiskAppetite.index()] = sign;
    d[RiskDimension::VolatilityTolerance.index()] = sign;
    d
}

/// Clamp-form feedback `r' = clamp(r + delta)`. `safer`/`riskier` move risk
/// appetite and volatility tolerance; free text moves whichever dimensions
/// its lexicon hits point at. Untouched dimensions are returned unchanged.
pub fn apply_feedback(r: &RiskVector, event: &FeedbackEvent, lexicon: &Lexicon) -> RiskVector {
    let directions = match event.kind {
        FeedbackKind::FreeText => {
            let enc = lexicon.encode(event.text.as_deref().unwrap_or(""));
            encoding_directions(&enc, lexicon)
        }
        kind => kind_directions(kind),
    };
    shift_clamped(r, directions, event.magnitude)
}

/// Same as [`apply_feedback`] for a free-text event whose encoding was
/// produced elsewhere (e.g. by an external profiler backend).
pub fn apply_encoded_feedback(
    r: &RiskVector,
    encoding: &DialogueEncoding,
    lexicon: &Lexicon,
    magnitude: f64,
) -> RiskVector {
    shift_clamped(r, encoding_directions(encoding, lexicon), magnitude)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_at_upper_bound() {
        let lex = Lexicon::default();
        let r = RiskVector::with_appetite(0.95);
        let out = apply_feedback(&r, &FeedbackEvent::riskier().with_magnitude(0.2), &lex);
        assert_eq!(out.risk_appetite, 1.0);
    }

    #[test]
    fn safer_sample_utterance_lowers_appetite_by_default_step() {
        let lex = Lexicon::default();
        let r = RiskVector::neutral();
        let out = apply_feedback(&r, &FeedbackEvent::free_text("I prefer safer assets this month"), &lex);
        assert!((out.risk_appetite - 0.4).abs() < 1e-15);
        assert_eq!(out.horizon, 0.5);
        assert_eq!(out.volatility_tolerance, 0.5);
    }

    #[test]
    fn zero_magnitude_is_identity() {
        let lex = Lexicon::default();
        let r = RiskVector::new([0.3, 0.4, 0.6, 0.7, 0.1]).unwrap();
        for e in [FeedbackEvent::safer(), FeedbackEvent::riskier(), FeedbackEvent::free_text("bold and liquid")] {
            assert_eq!(apply_feedback(&r, &e.with_magnitude(0.0), &lex), r);
        }
    }

    #[test]
    fn magnitude_validation() {
        assert!(FeedbackEvent::safer().with_magnitude(0.6).validate().is_err());
        assert!(FeedbackEvent::safer().with_magnitude(-0.1).validate().is_err());
        assert!(FeedbackEvent::new(FeedbackKind::FreeText, None, 0.1).validate().is_err());
        assert!(FeedbackEvent::riskier().validate().is_ok());
    }

    #[test]
    fn event_json_defaults_magnitude() {
        let e: FeedbackEvent = serde_json::from_str(r#"{"kind":"safer"}"#).unwrap();
        assert_eq!(e.magnitude, DEFAULT_FEEDBACK_MAGNITUDE);
    }
}
