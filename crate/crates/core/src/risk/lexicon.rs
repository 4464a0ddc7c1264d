use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RiskDimension;
use crate::error::{Error, Result};

/// A phrase category: every hit is one unit of evidence on `dimension`
/// in the direction of `sign` (-1, 0 or +1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LexiconCategory {
    pub name: String,
    pub dimension: RiskDimension,
    pub sign: i8,
    pub phrases: Vec<String>,
}

/// Ordered category list. The category order fixes the feature layout of
/// [`DialogueEncoding::feature_counts`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub categories: Vec<LexiconCategory>,
}

/// One matched phrase. `start..end` are byte offsets into the utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub feature: usize,
    pub category: String,
    pub start: usize,
    pub end: usize,
}

/// Per-turn dialogue features: category hit counts plus where they matched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueEncoding {
    pub feature_counts: Vec<f64>,
    pub token_spans: Vec<TokenSpan>,
}

impl DialogueEncoding {
    pub fn zeros(dim: usize) -> Self {
        Self {
            feature_counts: vec![0.0; dim],
            token_spans: Vec::new(),
        }
    }

    pub fn total_hits(&self) -> f64 {
        self.feature_counts.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.feature_counts.iter().all(|&c| c == 0.0)
    }

    /// Elementwise sum of two encodings over the same lexicon. Spans of
    /// `other` are kept as-is (they refer to a different utterance).
    pub fn accumulate(&mut self, other: &DialogueEncoding) {
        for (a, b) in self.feature_counts.iter_mut().zip(&other.feature_counts) {
            *a += b;
        }
        self.token_spans.extend(other.token_spans.iter().cloned());
    }
}

fn cat(name: &str, dimension: RiskDimension, sign: i8, phrases: &[&str]) -> LexiconCategory {
    LexiconCategory {
        name: name.to_string(),
        dimension,
        sign,
        phrases: phrases.iter().map(|p| p.to_string()).collect(),
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        use RiskDimension::*;
        Lexicon {
            categories: vec![
                cat(
                    "safety_seeking",
                    RiskAppetite,
                    -1,
                    &[
                        "safer",
                        "safe",
                        "safest",
                        "low risk",
                        "low-risk",
                        "conservative",
                        "cautious",
                        "protect my capital",
                        "preserve capital",
                        "capital preservation",
                        "avoid losses",
                        "less risk",
                    ],
                ),
                cat(
                    "risk_seeking",
                    RiskAppetite,
                    1,
                    &[
                        "aggressive",
                        "riskier",
                        "high risk",
                        "high-risk",
                        "more risk",
                        "speculative",
                        "bold",
                        "take risks",
                    ],
                ),
                cat(
                    "balanced_risk",
                    RiskAppetite,
                    0,
                    &["balanced", "moderate", "middle of the road"],
                ),
                cat(
                    "return_seeking",
                    ReturnExpectation,
                    1,
                    &[
                        "high returns",
                        "maximize returns",
                        "beat the market",
                        "outperform",
                        "big gains",
                    ],
                ),
                cat(
                    "modest_return",
                    ReturnExpectation,
                    -1,
                    &["modest returns", "steady income", "reasonable returns"],
                ),
                cat(
                    "volatility_averse",
                    VolatilityTolerance,
                    -1,
                    &[
                        "hate volatility",
                        "avoid volatility",
                        "nervous",
                        "worried",
                        "big swings",
                        "sleep at night",
                    ],
                ),
                cat(
                    "volatility_tolerant",
                    VolatilityTolerance,
                    1,
                    &[
                        "ride out",
                        "tolerate volatility",
                        "don't mind volatility",
                        "comfortable with swings",
                    ],
                ),
                cat(
                    "long_horizon",
                    Horizon,
                    1,
                    &[
                        "long horizon",
                        "long term",
                        "long-term",
                        "retirement",
                        "decades",
                    ],
                ),
                cat(
                    "short_horizon",
                    Horizon,
                    -1,
                    &["short term", "short-term", "short horizon", "next year"],
                ),
                cat(
                    "liquidity_seeking",
                    LiquidityPreference,
                    1,
                    &[
                        "liquid",
                        "liquidity",
                        "access to cash",
                        "withdraw",
                        "emergency fund",
                    ],
                ),
                cat(
                    "illiquidity_ok",
                    LiquidityPreference,
                    -1,
                    &["lock up", "locked up", "illiquid", "don't need the money"],
                ),
            ],
        }
    }
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'\''
}

impl Lexicon {
    pub fn from_json(text: &str) -> Result<Self> {
        let lex: Lexicon = serde_json::from_str(text)?;
        lex.validated()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Normalizes phrases to lowercase and checks the category table.
    pub fn validated(mut self) -> Result<Self> {
        if self.categories.is_empty() {
            return Err(Error::Config("lexicon has no categories".into()));
        }
        let mut names = HashSet::new();
        for c in &mut self.categories {
            if !names.insert(c.name.clone()) {
                return Err(Error::Config(format!("duplicate lexicon category `{}`", c.name)));
            }
            if !(-1..=1).contains(&c.sign) {
                return Err(Error::Config(format!(
                    "category `{}` has sign {}, expected -1, 0 or 1",
                    c.name, c.sign
                )));
            }
            c.phrases = c
                .phrases
                .iter()
                .map(|p| p.trim().to_ascii_lowercase())
                .filter(|p| !p.is_empty())
                .collect();
            if c.phrases.is_empty() {
                return Err(Error::Config(format!("category `{}` has no phrases", c.name)));
            }
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.categories.len()
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.name == name)
    }

    /// Case-insensitive, word-bounded phrase matching. Longer phrases win
    /// over their prefixes ("safer" is not also counted as "safe") and
    /// matches never overlap.
    pub fn encode(&self, utterance: &str) -> DialogueEncoding {
        let mut phrases: Vec<(&[u8], usize)> = self
            .categories
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.phrases.iter().map(move |p| (p.as_bytes(), i)))
            .collect();
        phrases.sort_by(|a, b| b.0.len().cmp(&a.0.len()));

        let text = utterance.to_ascii_lowercase();
        let bytes = text.as_bytes();
        let mut enc = DialogueEncoding::zeros(self.dim());
        let mut i = 0;
        while i < bytes.len() {
            let at_word_start = i == 0 || !is_word_byte(bytes[i - 1]);
            if at_word_start && is_word_byte(bytes[i]) {
                let hit = phrases.iter().find(|(p, _)| {
                    let end = i + p.len();
                    bytes[i..].starts_with(p) && (end == bytes.len() || !is_word_byte(bytes[end]))
                });
                if let Some(&(p, feature)) = hit {
                    let end = i + p.len();
                    enc.feature_counts[feature] += 1.0;
                    enc.token_spans.push(TokenSpan {
                        feature,
                        category: self.categories[feature].name.clone(),
                        start: i,
                        end,
                    });
                    i = end;
                    continue;
                }
            }
            i += 1;
        }
        enc
    }
}
