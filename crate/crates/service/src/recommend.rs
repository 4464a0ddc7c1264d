//! Allocation serving. With a policy checkpoint loaded the recommendation is
//! the policy's deterministic action (softmax of the logit mean) for the
//! latest market state conditioned on the session's risk vector; otherwise
//! long-only MVO with risk aversion interpolated from the risk appetite.

use std::sync::Arc;

use advisor_core::baselines::{estimate_moments, lambda_for_appetite, mvo_allocate, MvoInputs, DEFAULT_ESTIMATION_WINDOW};
use advisor_core::market::compute_state;
use advisor_core::policy::{sample_action, ActionMode, PolicyParams};
use advisor_core::reward::{alignment_sim, compute_metrics, exposure, MetricsReport, DEFAULT_PERIODS_PER_YEAR};
use advisor_core::risk::{attribute, DialogueEncoding, Lexicon, RiskDimension, RiskHeadParams};
use advisor_core::{Error as CoreError, RiskVector, Universe};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Policy,
    MvoFallback,
}

impl Engine {
    pub fn parse(s: &str) -> ServiceResult<Self> {
        match s {
            "policy" => Ok(Self::Policy),
            "mvo_fallback" | "mvo" => Ok(Self::MvoFallback),
            other => Err(ServiceError::Invalid(format!("unknown engine `{other}` (expected policy or mvo_fallback)"))),
        }
    }
}

/// One matched phrase and what it did to the risk profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSpan {
    pub phrase: String,
    pub start: usize,
    pub end: usize,
    pub category: String,
    pub dimension: RiskDimension,
    /// The phrase's additive share of the risk head's logit on `dimension`.
    pub contribution: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub text: String,
    /// The utterance the spans index into.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default)]
    pub spans: Vec<ExplanationSpan>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub weights: Vec<f64>,
    pub asset_ids: Vec<String>,
    pub engine: Engine,
    pub explanation: Explanation,
    /// Index of the state the allocation was made at (one past the last close).
    pub as_of: usize,
    pub risk_appetite: f64,
    pub exposure: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_risk: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_metrics: Option<MetricsReport>,
}

/// Spans of an utterance's encoding with their attribution on the dimension
/// their lexicon category points at.
pub fn explanation_spans(
    text: &str,
    encoding: &DialogueEncoding,
    lexicon: &Lexicon,
    head: &RiskHeadParams,
) -> Vec<ExplanationSpan> {
    let attributions = attribute(encoding, head);
    encoding
        .token_spans
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let dimension = lexicon.categories.get(s.feature)?.dimension;
            let contribution = attributions
                .iter()
                .find(|a| a.span == i && a.dimension == dimension)
                .map_or(0.0, |a| a.contribution);
            Some(ExplanationSpan {
                phrase: text.get(s.start..s.end).unwrap_or_default().to_string(),
                start: s.start,
                end: s.end,
                category: s.category.clone(),
                dimension,
                contribution,
            })
        })
        .collect()
}

pub struct Recommender {
    universe: Arc<Universe>,
    policy: Option<PolicyParams>,
    window: usize,
    fallback_enabled: bool,
    lookback: usize,
}

impl Recommender {
    pub fn new(
        universe: Arc<Universe>,
        policy: Option<PolicyParams>,
        window: usize,
        fallback_enabled: bool,
        lookback: usize,
    ) -> ServiceResult<Self> {
        if universe.len() < window + 1 {
            return Err(CoreError::SeriesTooShort {
                required: window + 1,
                actual: universe.len(),
            }
            .into());
        }
        if let Some(p) = &policy {
            let probe = compute_state(&universe, universe.len(), window, RiskVector::neutral())?;
            if p.n_assets != universe.n_assets() || p.input_dim != probe.feature_len() {
                return Err(ServiceError::Config(format!(
                    "checkpoint expects {} assets / {} features, market snapshot has {} / {}",
                    p.n_assets,
                    p.input_dim,
                    universe.n_assets(),
                    probe.feature_len()
                )));
            }
        }
        if policy.is_none() && !fallback_enabled {
            return Err(ServiceError::Config("no policy checkpoint and the MVO fallback is disabled".into()));
        }
        Ok(Self {
            universe,
            policy,
            window,
            fallback_enabled,
            lookback,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.universe.n_assets()
    }

    pub fn has_policy(&self) -> bool {
        self.policy.is_some()
    }

    pub fn default_engine(&self) -> ServiceResult<Engine> {
        match (&self.policy, self.fallback_enabled) {
            (Some(_), _) => Ok(Engine::Policy),
            (None, true) => Ok(Engine::MvoFallback),
            (None, false) => Err(ServiceError::Config("no policy checkpoint and the MVO fallback is disabled".into())),
        }
    }

    /// Allocation for `risk` on the latest snapshot. `evidence` is the
    /// utterance (and its encoding) the explanation should point at.
    pub fn recommend(
        &self,
        risk: RiskVector,
        engine: Option<Engine>,
        evidence: Option<(&str, &DialogueEncoding)>,
        lexicon: &Lexicon,
        head: &RiskHeadParams,
    ) -> ServiceResult<Recommendation> {
        let engine = match engine {
            Some(e) => e,
            None => self.default_engine()?,
        };
        let u = &*self.universe;
        let t = u.len();
        let state = compute_state(u, t, self.window, risk)?;
        let (weights, lambda_risk) = match engine {
            Engine::Policy => {
                let p = self
                    .policy
                    .as_ref()
                    .ok_or_else(|| ServiceError::Config("no policy checkpoint is loaded".into()))?;
                let out = p.forward(&p.state_features(&state))?;
                // Deterministic mode draws nothing from the generator.
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                (sample_action(&out, &mut rng, ActionMode::Deterministic).weights, None)
            }
            Engine::MvoFallback => {
                if !self.fallback_enabled {
                    return Err(ServiceError::Config("the MVO fallback is disabled".into()));
                }
                let est = DEFAULT_ESTIMATION_WINDOW.min(t - 1);
                if est < u.n_assets() + 2 {
                    return Err(ServiceError::Config(format!(
                        "snapshot too short for MVO: {est} returns for {} assets",
                        u.n_assets()
                    )));
                }
                let (mu, sigma) = estimate_moments(u, t, est)?;
                let lambda = lambda_for_appetite(risk.risk_appetite);
                (mvo_allocate(&MvoInputs { mu, sigma, lambda_risk: lambda })?, Some(lambda))
            }
        };
        let x = exposure(&weights, &state.rolling_vol);
        let expected_metrics = self.lookback_metrics(&weights, &risk, &state.rolling_vol)?;
        let asset_ids: Vec<String> = u.assets.iter().map(|a| a.asset_id.clone()).collect();
        let explanation = explain(engine, &risk, &weights, &asset_ids, x, evidence, lexicon, head);
        Ok(Recommendation {
            weights,
            asset_ids,
            engine,
            explanation,
            as_of: t,
            risk_appetite: risk.risk_appetite,
            exposure: x,
            lambda_risk,
            expected_metrics,
        })
    }

    /// Metrics of holding `weights` over the last `lookback` returns.
    fn lookback_metrics(&self, weights: &[f64], risk: &RiskVector, vols: &[f64]) -> ServiceResult<Option<MetricsReport>> {
        let u = &*self.universe;
        let n = self.lookback.min(u.len() - 1);
        if n < 2 {
            return Ok(None);
        }
        let mut returns = Vec::with_capacity(n);
        let mut bench = Vec::with_capacity(n);
        for t in u.len() - n..u.len() {
            let r = u.returns_at(t);
            returns.push(weights.iter().zip(&r).map(|(w, x)| w * x).sum());
            bench.push(r.iter().sum::<f64>() / r.len() as f64);
        }
        let sims = vec![alignment_sim(risk, weights, vols); n];
        Ok(Some(compute_metrics(&returns, &bench, &sims, DEFAULT_PERIODS_PER_YEAR)?))
    }
}

#[allow(clippy::too_many_arguments)]
fn explain(
    engine: Engine,
    risk: &RiskVector,
    weights: &[f64],
    asset_ids: &[String],
    exposure: f64,
    evidence: Option<(&str, &DialogueEncoding)>,
    lexicon: &Lexicon,
    head: &RiskHeadParams,
) -> Explanation {
    let source = match engine {
        Engine::Policy => "the trained allocation policy",
        Engine::MvoFallback => "mean-variance optimization",
    };
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    let top: Vec<String> = order
        .iter()
        .take(3)
        .filter(|&&i| weights[i] >= 0.005)
        .map(|&i| format!("{:.0}% {}", 100.0 * weights[i], asset_ids[i]))
        .collect();
    let mut text = format!(
        "Allocation from {source} for a risk appetite of {:.2}: {}. Volatility exposure {:.2}.",
        risk.risk_appetite,
        top.join(", "),
        exposure
    );
    let (spans, utterance) = match evidence {
        Some((utterance, enc)) => (explanation_spans(utterance, enc, lexicon, head), Some(utterance.to_string())),
        None => (Vec::new(), None),
    };
    if !spans.is_empty() {
        let cited: Vec<String> = spans
            .iter()
            .map(|s| format!("\"{}\" ({})", s.phrase, s.dimension.name()))
            .collect();
        text.push_str(&format!(" It reflects what you told me: {}.", cited.join(", ")));
    }
    Explanation {
        text,
        source: utterance,
        spans,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use advisor_core::policy::NetworkShape;

    fn two_assets() -> Arc<Universe> {
        // Low-vol asset with a small drift, high-vol asset with a larger one.
        let n = 200;
        let mut lo = vec![100.0];
        let mut hi = vec![100.0];
        for t in 1..n {
            let s = if t % 2 == 0 { 1.0 } else { -1.0 };
            lo.push(lo[t - 1] * (1.0 + 0.0002 + 0.01 * s));
            hi.push(hi[t - 1] * (1.0 + 0.003 + 0.05 * s));
        }
        Arc::new(Universe::from_closes(vec![("LO".into(), lo), ("HI".into(), hi)]).unwrap())
    }

    #[test]
    fn fallback_weight_on_high_vol_rises_with_appetite() {
        let rec = Recommender::new(two_assets(), None, 20, true, 60).unwrap();
        let (lex, head) = (Lexicon::default(), RiskHeadParams::from_lexicon(&Lexicon::default()));
        let w = |a: f64| {
            rec.recommend(RiskVector::with_appetite(a), None, None, &lex, &head).unwrap().weights[1]
        };
        assert!(w(1.0) > w(0.0));
        let again = rec.recommend(RiskVector::with_appetite(0.3), None, None, &lex, &head).unwrap();
        assert_eq!(again, rec.recommend(RiskVector::with_appetite(0.3), None, None, &lex, &head).unwrap());
        assert!(!again.explanation.text.is_empty());
        assert_eq!(again.engine, Engine::MvoFallback);
    }

    #[test]
    fn zero_policy_gives_equal_weights() {
        let u = two_assets();
        let shape = NetworkShape {
            input_dim: 2 * 20 + 2 + 1 + 5,
            hidden: vec![4],
            n_assets: 2,
        };
        let rec = Recommender::new(u, Some(PolicyParams::zeros(&shape)), 20, false, 60).unwrap();
        let (lex, head) = (Lexicon::default(), RiskHeadParams::from_lexicon(&Lexicon::default()));
        let r = rec.recommend(RiskVector::neutral(), None, None, &lex, &head).unwrap();
        assert_eq!(r.engine, Engine::Policy);
        assert_eq!(r.weights, vec![0.5, 0.5]);
        assert!(matches!(
            rec.recommend(RiskVector::neutral(), Some(Engine::MvoFallback), None, &lex, &head),
            Err(ServiceError::Config(_))
        ));
    }

    #[test]
    fn no_engine_available_is_a_config_error() {
        assert!(matches!(Recommender::new(two_assets(), None, 20, false, 60), Err(ServiceError::Config(_))));
    }
}
