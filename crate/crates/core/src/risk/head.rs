use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DialogueEncoding, Lexicon, RiskDimension, RiskVector};
use crate::error::{Error, Result};
use crate::stats::logistic;

/// Affine-logistic map from lexicon features to the risk vector:
/// `r = sigmoid(W h + b)` with `W` of shape 5 x feature dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskHeadParams {
    pub weights: Vec<Vec<f64>>,
    pub bias: [f64; 5],
}

impl RiskHeadParams {
    pub fn zeros(feature_dim: usize) -> Self {
        Self {
            weights: vec![vec![0.0; feature_dim]; RiskVector::DIM],
            bias: [0.0; 5],
        }
    }

    /// Hand-set head: each category pushes its own dimension by `sign * 0.8`
    /// per hit. Zero features map to the neutral profile.
    pub fn from_lexicon(lexicon: &Lexicon) -> Self {
        let mut p = Self::zeros(lexicon.dim());
        for (f, c) in lexicon.categories.iter().enumerate() {
            p.weights[c.dimension.index()][f] = 0.8 * c.sign as f64;
        }
        p
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != RiskVector::DIM {
            return Err(Error::Dimension {
                context: "risk head rows",
                expected: RiskVector::DIM,
                actual: self.weights.len(),
            });
        }
        let f = self.feature_dim();
        for row in &self.weights {
            if row.len() != f {
                return Err(Error::Dimension {
                    context: "risk head row width",
                    expected: f,
                    actual: row.len(),
                });
            }
        }
        let finite = self.weights.iter().flatten().chain(self.bias.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Input("risk head parameters must be finite".into()));
        }
        Ok(())
    }

    fn check_features(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.feature_dim() {
            return Err(Error::Dimension {
                context: "risk head features",
                expected: self.feature_dim(),
                actual: features.len(),
            });
        }
        Ok(())
    }

    /// Pre-sigmoid scores `W h + b`.
    pub fn logits(&self, features: &[f64]) -> Result<[f64; 5]> {
        self.check_features(features)?;
        let mut out = self.bias;
        for (k, row) in self.weights.iter().enumerate() {
            out[k] += row.iter().zip(features).map(|(w, h)| w * h).sum::<f64>();
        }
        Ok(out)
    }

    pub fn infer(&self, encoding: &DialogueEncoding) -> Result<RiskVector> {
        let z = self.logits(&encoding.feature_counts)?;
        Ok(RiskVector::from_array_unchecked(z.map(logistic)))
    }
}

/// One span's additive share of one dimension's logit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub span: usize,
    pub dimension: RiskDimension,
    pub contribution: f64,
}

/// Linear attribution of the head's logits to matched spans. A feature's
/// term `W[k, f] * h_f` is split evenly over the spans of feature `f`, so
/// contributions plus bias reconstruct the logit.
pub fn attribute(encoding: &DialogueEncoding, params: &RiskHeadParams) -> Vec<Attribution> {
    let f_dim = params.feature_dim();
    let mut spans_per_feature = vec![0usize; f_dim];
    for s in &encoding.token_spans {
        if s.feature < f_dim {
            spans_per_feature[s.feature] += 1;
        }
    }
    let mut out = Vec::new();
    for (i, s) in encoding.token_spans.iter().enumerate() {
        if s.feature >= f_dim {
            continue;
        }
        let share = encoding.feature_counts[s.feature] / spans_per_feature[s.feature] as f64;
        for dim in RiskDimension::ALL {
            out.push(Attribution {
                span: i,
                dimension: dim,
                contribution: params.weights[dim.index()][s.feature] * share,
            });
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RiskHeadHyper {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub init_scale: f64,
    pub seed: u64,
    /// Stop once the loss falls below this value.
    pub tolerance: f64,
}

impl Default for RiskHeadHyper {
    fn default() -> Self {
        Self {
            learning_rate: 2.0,
            max_epochs: 5_000,
            init_scale: 0.01,
            seed: 0,
            tolerance: 1e-10,
        }
    }
}

/// Mean squared error over examples and the five dimensions, with its
/// analytic gradient `(dW, db)`.
pub fn risk_head_loss_and_grad(
    params: &RiskHeadParams,
    features: &[Vec<f64>],
    targets: &[RiskVector],
) -> Result<(f64, Vec<Vec<f64>>, [f64; 5])> {
    if features.is_empty() {
        return Err(Error::Empty("risk head training set"));
    }
    let n = features.len() as f64;
    let scale = 2.0 / (n * RiskVector::DIM as f64);
    let mut loss = 0.0;
    let mut dw = vec![vec![0.0; params.feature_dim()]; RiskVector::DIM];
    let mut db = [0.0; 5];
    for (h, t) in features.iter().zip(targets) {
        let z = params.logits(h)?;
        let t = t.to_array();
        for k in 0..RiskVector::DIM {
            let r = logistic(z[k]);
            let err = r - t[k];
            loss += err * err;
            let g = scale * err * r * (1.0 - r);
            db[k] += g;
            for (d, x) in dw[k].iter_mut().zip(h) {
                *d += g * x;
            }
        }
    }
    Ok((loss / (n * RiskVector::DIM as f64), dw, db))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainedRiskHead {
    pub params: RiskHeadParams,
    pub final_loss: f64,
    pub epochs: usize,
}

/// Full-batch gradient descent on the mean squared error.
pub fn train_risk_head(
    labeled: &[(String, RiskVector)],
    lexicon: &Lexicon,
    hyper: &RiskHeadHyper,
) -> Result<TrainedRiskHead> {
    if labeled.is_empty() {
        return Err(Error::Empty("risk head training set"));
    }
    let features: Vec<Vec<f64>> = labeled.iter().map(|(u, _)| lexicon.encode(u).feature_counts).collect();
    let targets: Vec<RiskVector> = labeled.iter().map(|(_, t)| *t).collect();
    if targets.iter().any(|t| !t.is_bounded()) {
        return Err(Error::Input("training targets must lie in [0, 1]".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut params = RiskHeadParams::zeros(lexicon.dim());
    for w in params.weights.iter_mut().flatten() {
        *w = hyper.init_scale * (rng.random::<f64>() * 2.0 - 1.0);
    }

    let mut loss = f64::INFINITY;
    let mut epochs = 0;
    while epochs < hyper.max_epochs {
        let (l, dw, db) = risk_head_loss_and_grad(&params, &features, &targets)?;
        loss = l;
        if loss < hyper.tolerance {
            break;
        }
        for (row, grow) in params.weights.iter_mut().zip(&dw) {
            for (w, g) in row.iter_mut().zip(grow) {
                *w -= hyper.learning_rate * g;
            }
        }
        for (b, g) in params.bias.iter_mut().zip(db) {
            *b -= hyper.learning_rate * g;
        }
        epochs += 1;
    }
    if epochs == hyper.max_epochs {
        loss = risk_head_loss_and_grad(&params, &features, &targets)?.0;
    }
    Ok(TrainedRiskHead {
        params,
        final_loss: loss,
        epochs,
    })
}

#[derive(Deserialize)]
struct LabeledLine {
    text: String,
    target: Vec<f64>,
}

/// Parses the JSON-lines training format `{"text": ..., "target": [5 floats]}`.
pub fn parse_labeled_dialogues(text: &str) -> Result<Vec<(String, RiskVector)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LabeledLine = serde_json::from_str(line)
            .map_err(|e| Error::Input(format!("line {}: {e}", i + 1)))?;
        let target = RiskVector::from_slice(&parsed.target)
            .map_err(|e| Error::Input(format!("line {}: {e}", i + 1)))?;
        out.push((parsed.text, target));
    }
    Ok(out)
}
