use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::MarketState;
use crate::risk::RiskVector;

/// Fully connected layer, weights row-major `[out][in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn init(inputs: usize, outputs: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut d = Self::zeros(inputs, outputs);
        let bound = scale / (inputs.max(1) as f64).sqrt();
        for w in &mut d.weights {
            *w = bound * (2.0 * rng.random::<f64>() - 1.0);
        }
        d
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().enumerate().map(|(o, b)| {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>()
        }));
    }

    /// Accumulates parameter gradients for upstream `d_out` and returns the
    /// gradient with respect to the layer input when `want_input` is set.
    fn backward(&self, x: &[f64], d_out: &[f64], grad: &mut Dense, want_input: bool) -> Vec<f64> {
        let mut d_in = if want_input { vec![0.0; self.inputs] } else { Vec::new() };
        for (o, &g) in d_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let base = o * self.inputs;
            let grow = &mut grad.weights[base..base + self.inputs];
            for (gw, xi) in grow.iter_mut().zip(x) {
                *gw += g * xi;
            }
            if want_input {
                let row = &self.weights[base..base + self.inputs];
                for (di, w) in d_in.iter_mut().zip(row) {
                    *di += g * w;
                }
            }
        }
        d_in
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Actor-critic network: a tanh trunk shared by a linear mean head
/// (N logit means) and a linear value head, plus a state-independent
/// per-asset log standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub input_dim: usize,
    pub n_assets: usize,
    pub trunk: Vec<Dense>,
    pub mean_head: Dense,
    pub value_head: Dense,
    pub log_std: Vec<f64>,
    /// Fixed per-feature multiplier applied before the first layer.
    pub input_scale: Vec<f64>,
    /// When false the risk-vector block of the state is replaced by the
    /// neutral profile, so the policy cannot personalize.
    pub risk_conditioned: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutput {
    pub logit_mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub value: f64,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Scaled input followed by each trunk layer's tanh output.
    pub activations: Vec<Vec<f64>>,
    pub output: PolicyOutput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input_dim: usize,
    pub n_assets: usize,
    /// Hidden widths; zero entries are skipped, so `[0, 0]` is a linear map.
    pub hidden: Vec<usize>,
}

impl PolicyParams {
    pub fn zeros(shape: &NetworkShape) -> Self {
        let mut trunk = Vec::new();
        let mut width = shape.input_dim;
        for &h in shape.hidden.iter().filter(|h| **h > 0) {
            trunk.push(Dense::zeros(width, h));
            width = h;
        }
        Self {
            input_dim: shape.input_dim,
            n_assets: shape.n_assets,
            trunk,
            mean_head: Dense::zeros(width, shape.n_assets),
            value_head: Dense::zeros(width, 1),
            log_std: vec![0.0; shape.n_assets],
            input_scale: vec![1.0; shape.input_dim],
            risk_conditioned: true,
        }
    }

    /// Seeded initialization. The mean head starts small so the initial
    /// policy is close to uniform weights.
    pub fn init(shape: &NetworkShape, init_log_std: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(shape);
        let mut width = shape.input_dim;
        for layer in &mut p.trunk {
            *layer = Dense::init(width, layer.outputs, 1.0, &mut rng);
            width = layer.outputs;
        }
        p.mean_head = Dense::init(width, shape.n_assets, 0.01, &mut rng);
        p.value_head = Dense::init(width, 1, 1.0, &mut rng);
        p.log_std = vec![init_log_std; shape.n_assets];
        p
    }

    pub fn shape(&self) -> NetworkShape {
        NetworkShape {
            input_dim: self.input_dim,
            n_assets: self.n_assets,
            hidden: self.trunk.iter().map(|d| d.outputs).collect(),
        }
    }

    pub fn with_input_scale(mut self, scale: Vec<f64>) -> Result<Self> {
        if scale.len() != self.input_dim {
            return Err(Error::Dimension {
                context: "input scale",
                expected: self.input_dim,
                actual: scale.len(),
            });
        }
        self.input_scale = scale;
        Ok(self)
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = Self::zeros(&self.shape());
        g.input_scale = self.input_scale.clone();
        g.risk_conditioned = self.risk_conditioned;
        g.log_std = vec![0.0; self.n_assets];
        g
    }

    /// Network input for a state, honoring `risk_conditioned`.
    pub fn state_features(&self, state: &MarketState) -> Vec<f64> {
        let mut f = state.features();
        if !self.risk_conditioned {
            let n = f.len();
            if n >= RiskVector::DIM {
                f[n - RiskVector::DIM..].copy_from_slice(&RiskVector::neutral().to_array());
            }
        }
        f
    }

    pub fn forward(&self, features: &[f64]) -> Result<PolicyOutput> {
        Ok(self.forward_cached(features)?.output)
    }

    pub fn forward_cached(&self, features: &[f64]) -> Result<ForwardCache> {
        if features.len() != self.input_dim {
            return Err(Error::Dimension {
                context: "policy features",
                expected: self.input_dim,
                actual: features.len(),
            });
        }
        let mut activations = Vec::with_capacity(self.trunk.len() + 1);
        activations.push(features.iter().zip(&self.input_scale).map(|(x, s)| x * s).collect::<Vec<_>>());
        let mut buf = Vec::new();
        for layer in &self.trunk {
            layer.apply(activations.last().expect("input"), &mut buf);
            activations.push(buf.iter().map(|v| v.tanh()).collect());
        }
        let top = activations.last().expect("input");
        let mut logit_mean = Vec::new();
        self.mean_head.apply(top, &mut logit_mean);
        let mut value = Vec::new();
        self.value_head.apply(top, &mut value);
        Ok(ForwardCache {
            output: PolicyOutput {
                logit_mean,
                log_std: self.log_std.clone(),
                value: value[0],
            },
            activations,
        })
    }

    /// Backpropagates `d_mean` (per logit mean), `d_value` and `d_log_std`
    /// into `grad`.
    pub fn backward(&self, cache: &ForwardCache, d_mean: &[f64], d_value: f64, d_log_std: &[f64], grad: &mut PolicyParams) {
        let top = cache.activations.last().expect("input");
        let need_trunk = !self.trunk.is_empty();
        let mut d_top = self.mean_head.backward(top, d_mean, &mut grad.mean_head, need_trunk);
        let d_v = self.value_head.backward(top, &[d_value], &mut grad.value_head, need_trunk);
        for (a, b) in d_top.iter_mut().zip(d_v) {
            *a += b;
        }
        for (g, d) in grad.log_std.iter_mut().zip(d_log_std) {
            *g += d;
        }
        for (l, layer) in self.trunk.iter().enumerate().rev() {
            let out = &cache.activations[l + 1];
            let d_pre: Vec<f64> = d_top.iter().zip(out).map(|(d, y)| d * (1.0 - y * y)).collect();
            d_top = layer.backward(&cache.activations[l], &d_pre, &mut grad.trunk[l], l > 0);
        }
    }

    pub fn n_params(&self) -> usize {
        self.trunk.iter().map(Dense::n_params).sum::<usize>()
            + self.mean_head.n_params()
            + self.value_head.n_params()
            + self.log_std.len()
    }

    /// Named parameter blocks in flat order.
    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (i, l) in self.trunk.iter().enumerate() {
            out.push((format!("trunk{i}.weights"), &l.weights));
            out.push((format!("trunk{i}.bias"), &l.bias));
        }
        out.push(("mean_head.weights".into(), &self.mean_head.weights));
        out.push(("mean_head.bias".into(), &self.mean_head.bias));
        out.push(("value_head.weights".into(), &self.value_head.weights));
        out.push(("value_head.bias".into(), &self.value_head.bias));
        out.push(("log_std".into(), &self.log_std));
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for l in &mut self.trunk {
            out.push(&mut l.weights);
            out.push(&mut l.bias);
        }
        out.push(&mut self.mean_head.weights);
        out.push(&mut self.mean_head.bias);
        out.push(&mut self.value_head.weights);
        out.push(&mut self.value_head.bias);
        out.push(&mut self.log_std);
        out
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().into_iter().flat_map(|(_, b)| b.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Dimension {
                context: "flat parameters",
                expected: self.n_params(),
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for block in self.blocks_mut() {
            let n = block.len();
            block.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Name of the first block holding a non-finite entry.
    pub fn first_non_finite_block(&self) -> Option<String> {
        self.blocks()
            .into_iter()
            .find(|(_, b)| b.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }

    /// `self += scale * other`, blockwise.
    pub fn add_scaled(&mut self, other: &PolicyParams, scale: f64) {
        let src = other.to_flat();
        let mut offset = 0;
        for block in self.blocks_mut() {
            for v in block.iter_mut() {
                *v += scale * src[offset];
                offset += 1;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(hidden: Vec<usize>) -> NetworkShape {
        NetworkShape { input_dim: 4, n_assets: 3, hidden }
    }

    #[test]
    fn zero_params_give_zero_outputs() {
        let p = PolicyParams::zeros(&shape(vec![8, 8]));
        let out = p.forward(&[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(out.logit_mean, vec![0.0; 3]);
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn forward_is_pure() {
        let p = PolicyParams::init(&shape(vec![8, 5]), -0.5, 3);
        let x = [0.3, -0.1, 0.2, 0.9];
        assert_eq!(p.forward(&x).unwrap(), p.forward(&x).unwrap());
    }

    #[test]
    fn zero_hidden_weights_leave_output_bias() {
        let mut p = PolicyParams::init(&shape(vec![8, 8]), 0.0, 11);
        for l in &mut p.trunk {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        p.mean_head.bias = vec![0.3, -0.2, 0.1];
        p.value_head.bias = vec![1.5];
        let out = p.forward(&[5.0, 1.0, -3.0, 2.0]).unwrap();
        assert_eq!(out.logit_mean, vec![0.3, -0.2, 0.1]);
        assert_eq!(out.value, 1.5);
    }

    #[test]
    fn dimension_mismatch() {
        let p = PolicyParams::zeros(&shape(vec![2]));
        assert!(matches!(p.forward(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn flat_roundtrip_and_linear_shape() {
        let p = PolicyParams::init(&shape(vec![0, 0]), 0.0, 1);
        assert!(p.trunk.is_empty());
        assert_eq!(p.n_params(), 4 * 3 + 3 + 4 + 1 + 3);
        let mut q = p.zeros_like();
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(q.to_flat(), p.to_flat());
    }
}
