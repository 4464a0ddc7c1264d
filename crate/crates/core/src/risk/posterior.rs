use serde::{Deserialize, Serialize};

use super::{DialogueEncoding, FeedbackEvent, FeedbackKind, Lexicon, RiskDimension};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub const UNIFORM: BetaParams = BetaParams { alpha: 1.0, beta: 1.0 };

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }
}

/// Conjugate Beta belief per risk dimension. Only the risk-appetite mean is
/// published into the risk vector; the other four track evidence for
/// inspection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskPosterior {
    pub dims: [BetaParams; 5],
    pub evidence_weight: f64,
}

impl Default for RiskPosterior {
    fn default() -> Self {
        Self::uniform()
    }
}

impl RiskPosterior {
    pub fn uniform() -> Self {
        Self {
            dims: [BetaParams::UNIFORM; 5],
            evidence_weight: super::DEFAULT_EVIDENCE_WEIGHT,
        }
    }

    pub fn with_appetite_prior(alpha: f64, beta: f64) -> Self {
        let mut p = Self::uniform();
        p.dims[RiskDimension::RiskAppetite.index()] = BetaParams { alpha, beta };
        p
    }

    pub fn appetite(&self) -> BetaParams {
        self.dims[RiskDimension::RiskAppetite.index()]
    }

    pub fn appetite_mean(&self) -> f64 {
        self.appetite().mean()
    }

    pub fn is_valid(&self) -> bool {
        self.dims.iter().all(|b| b.alpha >= 1.0 && b.beta >= 1.0 && b.alpha.is_finite() && b.beta.is_finite())
    }

    /// `safer` is a pseudo-failure on risk appetite, `riskier` a pseudo-success;
    /// free text is encoded with `lexicon` and routed to [`Self::observe`].
    pub fn update(&self, event: &FeedbackEvent, lexicon: &Lexicon) -> Self {
        let c = self.evidence_weight;
        let mut next = self.clone();
        let a = RiskDimension::RiskAppetite.index();
        match event.kind {
            FeedbackKind::Safer => next.dims[a].beta += c,
            FeedbackKind::Riskier => next.dims[a].alpha += c,
            FeedbackKind::FreeText => {
                let enc = lexicon.encode(event.text.as_deref().unwrap_or(""));
                next = next.observe(&enc, lexicon);
            }
        }
        next
    }

    /// Converts category hits into pseudo-counts on their dimension. Neutral
    /// categories (sign 0) split their weight between both parameters.
    pub fn observe(&self, encoding: &DialogueEncoding, lexicon: &Lexicon) -> Self {
        let c = self.evidence_weight;
        let mut next = self.clone();
        for (f, &count) in encoding.feature_counts.iter().enumerate() {
            let Some(cat) = lexicon.categories.get(f) else { continue };
            if count <= 0.0 {
                continue;
            }
            let b = &mut next.dims[cat.dimension.index()];
            match cat.sign {
                1 => b.alpha += c * count,
                -1 => b.beta += c * count,
                _ => {
                    b.alpha += 0.5 * c * count;
                    b.beta += 0.5 * c * count;
                }
            }
        }
        next
    }
}
