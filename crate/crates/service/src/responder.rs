//! Reply selection: a linear score per template over the concatenated
//! (risk features; action features), turned into a softmax. Argmax mode is
//! deterministic; sample mode draws from the softmax with a seeded generator.

use advisor_core::stats::softmax;
use advisor_core::Error as CoreError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

/// Δr (5 dims), evidence indicator, no-evidence indicator.
pub const RISK_FEATURES: usize = 7;
/// Bias, volatility exposure of the current allocation, its concentration (HHI).
pub const ACTION_FEATURES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    ExplainShiftSafer,
    ExplainShiftRiskier,
    ConfirmProfile,
    Clarify,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub intent: Intent,
    /// May contain `{appetite}`, `{delta}` and `{phrases}`.
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponderParams {
    pub templates: Vec<Template>,
    /// One row per template, `RISK_FEATURES + ACTION_FEATURES` columns.
    pub weights: Vec<Vec<f64>>,
}

impl Default for ResponderParams {
    fn default() -> Self {
        let t = |intent, text: &str| Template {
            intent,
            text: text.to_string(),
        };
        let templates = vec![
            t(
                Intent::ExplainShiftSafer,
                "Understood. Based on {phrases} I lowered your risk appetite to {appetite} ({delta}); the allocation now leans toward lower-volatility assets.",
            ),
            t(
                Intent::ExplainShiftRiskier,
                "Got it. Based on {phrases} I raised your risk appetite to {appetite} ({delta}); the allocation can now take on more volatile, higher-growth assets.",
            ),
            t(
                Intent::ConfirmProfile,
                "Thanks, I noted {phrases}. Your risk appetite stays at {appetite}.",
            ),
            t(
                Intent::Clarify,
                "I could not find a clear risk preference in that. Would you rather keep things safer, or take on more risk for growth?",
            ),
        ];
        let mut weights = vec![vec![0.0; RISK_FEATURES + ACTION_FEATURES]; 4];
        weights[0][0] = -100.0;
        weights[1][0] = 100.0;
        weights[2][5] = 0.5;
        weights[3][6] = 1.0;
        Self { templates, weights }
    }
}

impl ResponderParams {
    pub fn validate(&self) -> ServiceResult<()> {
        if self.templates.is_empty() {
            return Err(ServiceError::Config("responder needs at least one template".into()));
        }
        if self.weights.len() != self.templates.len() {
            return Err(CoreError::Dimension {
                context: "responder weight rows vs templates",
                expected: self.templates.len(),
                actual: self.weights.len(),
            }
            .into());
        }
        if let Some(row) = self.weights.iter().find(|r| r.len() != RISK_FEATURES + ACTION_FEATURES) {
            return Err(CoreError::Dimension {
                context: "responder weight columns",
                expected: RISK_FEATURES + ACTION_FEATURES,
                actual: row.len(),
            }
            .into());
        }
        if self.weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(ServiceError::Config("responder weights must be finite".into()));
        }
        Ok(())
    }
}

pub fn risk_features(delta: [f64; 5], evidence: bool) -> Vec<f64> {
    let mut f = delta.to_vec();
    f.push(if evidence { 1.0 } else { 0.0 });
    f.push(if evidence { 0.0 } else { 1.0 });
    f
}

pub fn action_features(weights: &[f64], exposure: f64) -> Vec<f64> {
    let hhi = weights.iter().map(|w| w * w).sum();
    vec![1.0, exposure, hhi]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SelectMode {
    Argmax,
    Sample { seed: u64 },
}

/// Values substituted into template slots.
#[derive(Clone, Debug, Default)]
pub struct Slots {
    pub appetite: f64,
    pub delta: f64,
    pub phrases: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub template: usize,
    pub intent: Intent,
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub text: String,
}

pub fn select_response(
    risk: &[f64],
    action: &[f64],
    params: &ResponderParams,
    mode: SelectMode,
    slots: &Slots,
) -> ServiceResult<Selection> {
    params.validate()?;
    let features: Vec<f64> = risk.iter().chain(action).copied().collect();
    if risk.len() != RISK_FEATURES || action.len() != ACTION_FEATURES {
        return Err(CoreError::Dimension {
            context: "responder features",
            expected: RISK_FEATURES + ACTION_FEATURES,
            actual: features.len(),
        }
        .into());
    }
    let scores: Vec<f64> = params
        .weights
        .iter()
        .map(|row| row.iter().zip(&features).map(|(w, x)| w * x).sum())
        .collect();
    if scores.iter().any(|s: &f64| !s.is_finite()) {
        return Err(ServiceError::Invalid("responder features must be finite".into()));
    }
    let probabilities = softmax(&scores);
    let template = match mode {
        SelectMode::Argmax => argmax_first(&scores),
        SelectMode::Sample { seed } => {
            let u: f64 = ChaCha8Rng::seed_from_u64(seed).random();
            let mut acc = 0.0;
            probabilities
                .iter()
                .position(|p| {
                    acc += p;
                    u < acc
                })
                .unwrap_or(probabilities.len() - 1)
        }
    };
    let chosen = &params.templates[template];
    Ok(Selection {
        template,
        intent: chosen.intent,
        text: fill(&chosen.text, slots),
        scores,
        probabilities,
    })
}

/// Index of the maximum; ties go to the lowest index.
fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn fill(template: &str, slots: &Slots) -> String {
    let phrases = if slots.phrases.is_empty() {
        "what you said".to_string()
    } else {
        slots.phrases.iter().map(|p| format!("\"{p}\"")).collect::<Vec<_>>().join(", ")
    };
    template
        .replace("{appetite}", &format!("{:.2}", slots.appetite))
        .replace("{delta}", &format!("{:+.2}", slots.delta))
        .replace("{phrases}", &phrases)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_params() -> ResponderParams {
        let mut p = ResponderParams::default();
        p.weights = vec![vec![0.0; RISK_FEATURES + ACTION_FEATURES]; p.templates.len()];
        p
    }

    #[test]
    fn zero_weights_tie_to_first_template() {
        let p = zero_params();
        let s = select_response(&[0.0; 7], &[1.0, 0.5, 0.2], &p, SelectMode::Argmax, &Slots::default()).unwrap();
        assert_eq!(s.template, 0);
        assert!(s.probabilities.iter().all(|q| (q - 0.25).abs() < 1e-12));
    }

    #[test]
    fn dominant_score_takes_the_mass() {
        let mut p = zero_params();
        // Bias column adds +10 to template 2 only.
        p.weights[2][RISK_FEATURES] = 10.0;
        let s = select_response(&[0.0; 7], &[1.0, 0.0, 0.0], &p, SelectMode::Argmax, &Slots::default()).unwrap();
        assert_eq!(s.template, 2);
        let oracle = 10f64.exp() / (10f64.exp() + 3.0);
        assert!((s.probabilities[2] - oracle).abs() < 1e-12);
        assert!(s.probabilities[2] > 0.99);
    }

    #[test]
    fn sampling_is_seeded() {
        let p = zero_params();
        let pick = |seed| {
            select_response(&[0.0; 7], &[1.0, 0.0, 0.0], &p, SelectMode::Sample { seed }, &Slots::default())
                .unwrap()
                .template
        };
        assert_eq!(pick(3), pick(3));
        let seen: std::collections::HashSet<usize> = (0..64).map(pick).collect();
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = ResponderParams::default();
        assert!(select_response(&[0.0; 6], &[1.0, 0.0, 0.0], &p, SelectMode::Argmax, &Slots::default()).is_err());
    }

    #[test]
    fn slots_are_filled() {
        let p = ResponderParams::default();
        let slots = Slots {
            appetite: 1.0 / 3.0,
            delta: -1.0 / 6.0,
            phrases: vec!["safer".into()],
        };
        let risk = risk_features([-1.0 / 6.0, 0.0, 0.0, 0.0, 0.0], true);
        let s = select_response(&risk, &action_features(&[0.5, 0.5], 0.3), &p, SelectMode::Argmax, &slots).unwrap();
        assert_eq!(s.intent, Intent::ExplainShiftSafer);
        assert!(s.text.contains("\"safer\"") && s.text.contains("0.33") && s.text.contains("-0.17"));
    }
}
