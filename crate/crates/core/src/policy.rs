//! Factored Bernoulli acquisition policy.
//!
//! A one-hidden-layer perceptron maps the `F` low-resolution features of a
//! tile to `S` independent acquisition probabilities:
//! `s = sigmoid(W2 tanh(W1 x + b1) + b2)`, clamped to `[eps, 1 - eps]`.
//! Exploration is controlled by temperature scaling, which pulls `s` towards
//! a fair coin: `alpha * s + (1 - alpha) * (1 - s)`.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{keyed_rng, stream};

/// Probability clamp.
pub const PROB_EPS: f64 = 1e-6;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub features: usize,
    pub hidden: usize,
    pub subtiles: usize,
}

impl PolicyShape {
    pub fn param_len(&self) -> usize {
        self.hidden * (self.features + 1) + self.subtiles * (self.hidden + 1)
    }

    // Flat layout: W1 (H x F, row-major), b1 (H), W2 (S x H, row-major), b2 (S).
    fn w1(&self) -> usize {
        0
    }
    fn b1(&self) -> usize {
        self.hidden * self.features
    }
    fn w2(&self) -> usize {
        self.b1() + self.hidden
    }
    fn b2(&self) -> usize {
        self.w2() + self.subtiles * self.hidden
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    shape: PolicyShape,
    theta: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(shape: PolicyShape) -> Self {
        PolicyParams {
            shape,
            theta: vec![0.0; shape.param_len()],
        }
    }

    pub fn from_theta(shape: PolicyShape, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != shape.param_len() {
            return Err(Error::Shape {
                what: "policy theta",
                expected: shape.param_len(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy theta".into()));
        }
        Ok(PolicyParams { shape, theta })
    }

    pub fn shape(&self) -> PolicyShape {
        self.shape
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub(crate) fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn output_bias(&self) -> &[f64] {
        &self.theta[self.shape.b2()..]
    }

    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let start = self.shape.b2();
        &mut self.theta[start..]
    }

    /// Indices into theta of the output-layer weights and biases.
    pub fn output_layer_range(&self) -> std::ops::Range<usize> {
        self.shape.w2()..self.shape.param_len()
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(features: usize, hidden: usize, subtiles: usize, seed: u64) -> Result<PolicyParams> {
    if features == 0 || hidden == 0 || subtiles == 0 {
        return Err(Error::Config("policy dimensions must be >= 1".into()));
    }
    let shape = PolicyShape {
        features,
        hidden,
        subtiles,
    };
    let mut params = PolicyParams::zeros(shape);
    let mut rng = keyed_rng(&[seed, stream::POLICY_INIT]);
    let r1 = (6.0 / (features + hidden) as f64).sqrt();
    let r2 = (6.0 / (hidden + subtiles) as f64).sqrt();
    let (w1, b1, w2, b2) = (shape.w1(), shape.b1(), shape.w2(), shape.b2());
    for v in &mut params.theta[w1..b1] {
        *v = rng.random_range(-r1..r1);
    }
    for v in &mut params.theta[w2..b2] {
        *v = rng.random_range(-r2..r2);
    }
    Ok(params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionProbs(Vec<f64>);

impl ActionProbs {
    /// Clamps into `[eps, 1 - eps]`; rejects non-finite input.
    pub fn new(mut s: Vec<f64>) -> Result<Self> {
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("action probabilities".into()));
        }
        for v in &mut s {
            *v = v.clamp(PROB_EPS, 1.0 - PROB_EPS);
        }
        Ok(ActionProbs(s))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActionVector(Vec<bool>);

impl ActionVector {
    pub fn from_bools(a: Vec<bool>) -> Self {
        ActionVector(a)
    }

    pub fn zeros(len: usize) -> Self {
        ActionVector(vec![false; len])
    }

    pub fn ones(len: usize) -> Self {
        ActionVector(vec![true; len])
    }

    /// The `k`-th of all `2^len` action vectors (bit `i` of `k` is `a_i`).
    pub fn from_index(k: u64, len: usize) -> Self {
        ActionVector((0..len).map(|i| (k >> i) & 1 == 1).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, k: usize) -> bool {
        self.0[k]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn acquired(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

struct ForwardPass {
    hidden: Vec<f64>,
    raw: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn forward_pass(params: &PolicyParams, x: &[f64]) -> Result<ForwardPass> {
    let sh = params.shape;
    if x.len() != sh.features {
        return Err(Error::Shape {
            what: "policy features",
            expected: sh.features,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("policy features".into()));
    }
    let th = &params.theta;
    let hidden: Vec<f64> = (0..sh.hidden)
        .map(|j| {
            let row = &th[sh.w1() + j * sh.features..sh.w1() + (j + 1) * sh.features];
            let z = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + th[sh.b1() + j];
            z.tanh()
        })
        .collect();
    let raw = (0..sh.subtiles)
        .map(|k| {
            let row = &th[sh.w2() + k * sh.hidden..sh.w2() + (k + 1) * sh.hidden];
            let z = row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + th[sh.b2() + k];
            sigmoid(z)
        })
        .collect();
    Ok(ForwardPass { hidden, raw })
}

pub fn forward(params: &PolicyParams, features: &[f64]) -> Result<ActionProbs> {
    ActionProbs::new(forward_pass(params, features)?.raw)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.5..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in [0.5, 1], got {alpha}")))
    }
}

#[inline]
fn scale(s: f64, alpha: f64) -> f64 {
    // alpha*s + (1-alpha)*(1-s), written around the fixed point 0.5 so the
    // sign of s - 0.5 survives rounding.
    0.5 + (2.0 * alpha - 1.0) * (s - 0.5)
}

pub fn temperature_scale(s: &ActionProbs, alpha: f64) -> Result<ActionProbs> {
    check_alpha(alpha)?;
    Ok(ActionProbs(s.0.iter().map(|&v| scale(v, alpha)).collect()))
}

pub fn sample_actions<R: Rng + ?Sized>(s: &ActionProbs, rng: &mut R) -> ActionVector {
    ActionVector(s.0.iter().map(|&p| rng.random::<f64>() < p).collect())
}

/// Acquire exactly where `s > 0.5`.
pub fn greedy_actions(s: &ActionProbs) -> ActionVector {
    ActionVector(s.0.iter().map(|&p| p > 0.5).collect())
}

pub fn log_likelihood(s: &ActionProbs, a: &ActionVector) -> Result<f64> {
    if s.len() != a.len() {
        return Err(Error::Shape {
            what: "action vector",
            expected: s.len(),
            got: a.len(),
        });
    }
    Ok(s.0
        .iter()
        .zip(&a.0)
        .map(|(&p, &act)| if act { p.ln() } else { (1.0 - p).ln() })
        .sum())
}

/// Gradient of `log pi(a | x)` with respect to theta, where the
/// probabilities are temperature-scaled by `alpha` exactly as in sampling.
///
/// Components whose raw sigmoid output was clamped contribute no gradient.
pub fn grad_log_likelihood(
    params: &PolicyParams,
    features: &[f64],
    a: &ActionVector,
    alpha: f64,
) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let sh = params.shape;
    if a.len() != sh.subtiles {
        return Err(Error::Shape {
            what: "action vector",
            expected: sh.subtiles,
            got: a.len(),
        });
    }
    let pass = forward_pass(params, features)?;
    let th = &params.theta;
    let slope = 2.0 * alpha - 1.0;

    let d_out: Vec<f64> = pass
        .raw
        .iter()
        .zip(&a.0)
        .map(|(&p, &act)| {
            if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                return 0.0;
            }
            let q = scale(p, alpha);
            let dlog_dq = if act { 1.0 / q } else { -1.0 / (1.0 - q) };
            dlog_dq * slope * p * (1.0 - p)
        })
        .collect();

    let mut grad = vec![0.0; sh.param_len()];
    let mut d_hidden = vec![0.0; sh.hidden];
    for (k, &dz) in d_out.iter().enumerate() {
        grad[sh.b2() + k] = dz;
        if dz == 0.0 {
            continue;
        }
        for j in 0..sh.hidden {
            grad[sh.w2() + k * sh.hidden + j] = dz * pass.hidden[j];
            d_hidden[j] += dz * th[sh.w2() + k * sh.hidden + j];
        }
    }
    for j in 0..sh.hidden {
        let dz = d_hidden[j] * (1.0 - pass.hidden[j] * pass.hidden[j]);
        grad[sh.b1() + j] = dz;
        for (i, &x) in features.iter().enumerate() {
            grad[sh.w1() + j * sh.features + i] = dz * x;
        }
    }
    Ok(grad)
}

/// Serialised policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    #[serde(rename = "F")]
    pub features: usize,
    #[serde(rename = "H")]
    pub hidden: usize,
    #[serde(rename = "S")]
    pub subtiles: usize,
    pub alpha_at_save: f64,
    pub theta: Vec<f64>,
    pub epoch: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl Checkpoint {
    pub fn new(params: &PolicyParams, alpha_at_save: f64, epoch: usize, seed: u64) -> Self {
        let sh = params.shape();
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            features: sh.features,
            hidden: sh.hidden,
            subtiles: sh.subtiles,
            alpha_at_save,
            theta: params.theta.clone(),
            epoch,
            seed,
            config_hash: None,
        }
    }

    pub fn params(&self) -> Result<PolicyParams> {
        PolicyParams::from_theta(
            PolicyShape {
                features: self.features,
                hidden: self.hidden,
                subtiles: self.subtiles,
            },
            self.theta.clone(),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Schema(format!("checkpoint: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("checkpoint: {e}")))?;
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "checkpoint schema version {}, this build reads {CHECKPOINT_SCHEMA_VERSION}",
                ck.schema_version
            )));
        }
        ck.params()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
