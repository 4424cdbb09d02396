//! Softmax observation model, context vectors and ground-truth environments.
//!
//! Labels and options are zero-based everywhere inside the crate. Wire
//! formats (JSON archives, HTTP payloads, CSV cell ids) use one-based
//! numbering and convert at the boundary.
//!
//! A parameter matrix `C x F` is flattened label-block first: the `C` weights
//! of label 0, then the `C` weights of label 1, and so on. Every Gaussian over
//! parameters in this crate uses that order.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seeded random stream. `stream` separates independent sequences derived
/// from the same seed (internal sensor, simulated human, policy, ...).
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Option-agnostic context plus one option-specific context per option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBundle {
    shared: Vec<f64>,
    per_option: Vec<Vec<f64>>,
}

impl ContextBundle {
    pub fn new(shared: Vec<f64>, per_option: Vec<Vec<f64>>) -> Result<Self> {
        let c = shared.len();
        if c == 0 {
            return Err(Error::InvalidDimensions("context dimension must be >= 1".into()));
        }
        if per_option.len() < 2 {
            return Err(Error::InvalidDimensions("at least two options required".into()));
        }
        if let Some(bad) = per_option.iter().find(|v| v.len() != c) {
            return Err(Error::DimensionMismatch { expected: c, got: bad.len() });
        }
        Ok(Self { shared, per_option })
    }

    pub fn dim(&self) -> usize {
        self.shared.len()
    }

    pub fn options(&self) -> usize {
        self.per_option.len()
    }

    pub fn shared(&self) -> &[f64] {
        &self.shared
    }

    pub fn per_option(&self) -> &[Vec<f64>] {
        &self.per_option
    }

    /// `x_c + x_k` for option `k`.
    pub fn effective(&self, k: usize) -> Result<Vec<f64>> {
        let specific = self
            .per_option
            .get(k)
            .ok_or(Error::OptionOutOfRange { option: k, options: self.options() })?;
        Ok(self.shared.iter().zip(specific).map(|(a, b)| a + b).collect())
    }

    pub fn all_effective(&self) -> Vec<Vec<f64>> {
        (0..self.options()).map(|k| self.effective(k).expect("in range")).collect()
    }
}

/// Softmax weights for one option, `C` context features by `F` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterMatrix {
    features: usize,
    labels: usize,
    // label-block order: data[label * features + feature]
    data: Vec<f64>,
}

impl ParameterMatrix {
    pub fn zeros(features: usize, labels: usize) -> Self {
        Self { features, labels, data: vec![0.0; features * labels] }
    }

    /// Builds from rows indexed by context feature, each holding `F` label weights.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let features = rows.len();
        let labels = rows.first().map(Vec::len).unwrap_or(0);
        if features == 0 || labels == 0 {
            return Err(Error::InvalidDimensions("empty parameter matrix".into()));
        }
        let mut m = Self::zeros(features, labels);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != labels {
                return Err(Error::DimensionMismatch { expected: labels, got: row.len() });
            }
            for (h, &v) in row.iter().enumerate() {
                m.set(i, h, v);
            }
        }
        Ok(m)
    }

    pub fn from_flat(features: usize, labels: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != features * labels {
            return Err(Error::DimensionMismatch { expected: features * labels, got: flat.len() });
        }
        Ok(Self { features, labels, data: flat.to_vec() })
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn get(&self, feature: usize, label: usize) -> f64 {
        self.data[label * self.features + feature]
    }

    pub fn set(&mut self, feature: usize, label: usize, value: f64) {
        self.data[label * self.features + feature] = value;
    }

    pub fn label_column(&self, label: usize) -> &[f64] {
        &self.data[label * self.features..(label + 1) * self.features]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flatten(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.data)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.features)
            .map(|i| (0..self.labels).map(|h| self.get(i, h)).collect())
            .collect()
    }
}

/// Logits `z_h = theta_h . x` for a flattened parameter vector.
pub(crate) fn logits_flat(theta: &[f64], features: usize, x: &[f64]) -> Vec<f64> {
    theta.chunks_exact(features).map(|col| dot(col, x)).collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// In-place softmax with max-logit subtraction.
pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

/// `log softmax(z)[label]`.
pub(crate) fn log_softmax_at(z: &[f64], label: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    z[label] - lse
}

fn check_context(theta: &ParameterMatrix, x: &[f64]) -> Result<()> {
    if x.len() != theta.features {
        return Err(Error::DimensionMismatch { expected: theta.features, got: x.len() });
    }
    Ok(())
}

/// Full label distribution `p(o = h | theta, x)` for every label `h`.
pub fn softmax_probs(theta: &ParameterMatrix, x: &[f64]) -> Result<Vec<f64>> {
    check_context(theta, x)?;
    let mut z = logits_flat(&theta.data, theta.features, x);
    softmax_in_place(&mut z);
    Ok(z)
}

/// `p(o = label | theta, x)`.
pub fn softmax_likelihood(theta: &ParameterMatrix, label: usize, x: &[f64]) -> Result<f64> {
    if label >= theta.labels {
        return Err(Error::LabelOutOfRange { label, labels: theta.labels });
    }
    Ok(softmax_probs(theta, x)?[label])
}

/// Draws a label from the softmax distribution by inverse CDF.
pub fn sample_outcome<R: Rng + ?Sized>(theta: &ParameterMatrix, x: &[f64], rng: &mut R) -> Result<usize> {
    let probs = softmax_probs(theta, x)?;
    Ok(sample_categorical(&probs, rng))
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (h, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return h;
        }
    }
    probs.len() - 1
}

/// Ground truth for one simulated bandit instance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentTruth {
    pub theta_true: Vec<ParameterMatrix>,
    pub contexts: ContextBundle,
    /// Zero-based preferred label.
    pub preferred: usize,
    pub psi: Vec<f64>,
    pub psi_star: f64,
}

impl EnvironmentTruth {
    pub fn new(theta_true: Vec<ParameterMatrix>, contexts: ContextBundle, preferred: usize) -> Result<Self> {
        let k = contexts.options();
        if theta_true.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: theta_true.len() });
        }
        let labels = theta_true[0].labels();
        if preferred >= labels {
            return Err(Error::LabelOutOfRange { label: preferred, labels });
        }
        for t in &theta_true {
            if t.features() != contexts.dim() || t.labels() != labels {
                return Err(Error::InvalidDimensions("inconsistent parameter matrix shape".into()));
            }
        }
        let psi = Self::success_probabilities(&theta_true, &contexts, preferred)?;
        let psi_star = psi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { theta_true, contexts, preferred, psi, psi_star })
    }

    fn success_probabilities(theta: &[ParameterMatrix], ctx: &ContextBundle, preferred: usize) -> Result<Vec<f64>> {
        theta
            .iter()
            .enumerate()
            .map(|(k, t)| softmax_likelihood(t, preferred, &ctx.effective(k)?))
            .collect()
    }

    /// Recomputes every `psi_k` from the stored parameters.
    pub fn recompute_psi(&self) -> Result<Vec<f64>> {
        Self::success_probabilities(&self.theta_true, &self.contexts, self.preferred)
    }

    pub fn options(&self) -> usize {
        self.contexts.options()
    }

    pub fn features(&self) -> usize {
        self.contexts.dim()
    }

    pub fn labels(&self) -> usize {
        self.theta_true[0].labels()
    }

    /// Number of hidden parameters across all options.
    pub fn parameter_count(&self) -> usize {
        self.options() * self.features() * self.labels()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&EnvironmentRecord::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: EnvironmentRecord = serde_json::from_str(s)?;
        rec.try_into()
    }
}

/// JSON archive layout of an [`EnvironmentTruth`]; `f_p` is one-based and
/// each `theta_true` entry is a list of `C` rows of `F` weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentRecord {
    pub k: usize,
    pub c: usize,
    pub f: usize,
    pub f_p: usize,
    pub theta_true: Vec<Vec<Vec<f64>>>,
    pub x_shared: Vec<f64>,
    pub x_per_option: Vec<Vec<f64>>,
    pub psi: Vec<f64>,
}

impl From<&EnvironmentTruth> for EnvironmentRecord {
    fn from(env: &EnvironmentTruth) -> Self {
        Self {
            k: env.options(),
            c: env.features(),
            f: env.labels(),
            f_p: env.preferred + 1,
            theta_true: env.theta_true.iter().map(ParameterMatrix::rows).collect(),
            x_shared: env.contexts.shared().to_vec(),
            x_per_option: env.contexts.per_option().to_vec(),
            psi: env.psi.clone(),
        }
    }
}

impl TryFrom<EnvironmentRecord> for EnvironmentTruth {
    type Error = Error;

    fn try_from(rec: EnvironmentRecord) -> Result<Self> {
        if rec.f_p == 0 || rec.f_p > rec.f {
            return Err(Error::LabelOutOfRange { label: rec.f_p, labels: rec.f });
        }
        let contexts = ContextBundle::new(rec.x_shared, rec.x_per_option)?;
        let theta = rec
            .theta_true
            .iter()
            .map(|rows| ParameterMatrix::from_rows(rows))
            .collect::<Result<Vec<_>>>()?;
        let env = EnvironmentTruth::new(theta, contexts, rec.f_p - 1)?;
        if env.options() != rec.k || env.features() != rec.c || env.labels() != rec.f {
            return Err(Error::InvalidDimensions("header does not match arrays".into()));
        }
        Ok(env)
    }
}

/// Random instance: weights i.i.d. `Uniform(0, 1)`, context entries i.i.d.
/// fair coin flips over `{0, 1}`.
pub fn generate_environment(options: usize, features: usize, labels: usize, preferred: usize, seed: u64) -> Result<EnvironmentTruth> {
    if options < 2 || features < 1 || labels < 2 {
        return Err(Error::InvalidDimensions(format!(
            "need K >= 2, C >= 1, F >= 2 (got K={options}, C={features}, F={labels})"
        )));
    }
    if preferred >= labels {
        return Err(Error::LabelOutOfRange { label: preferred, labels });
    }
    let mut rng = stream_rng(seed, 0);
    let theta = (0..options)
        .map(|_| {
            let flat: Vec<f64> = (0..features * labels).map(|_| rng.random::<f64>()).collect();
            ParameterMatrix::from_flat(features, labels, &flat)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut coin = |n: usize| -> Vec<f64> { (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect() };
    let shared = coin(features);
    let per_option = (0..options).map(|_| coin(features)).collect();
    EnvironmentTruth::new(theta, ContextBundle::new(shared, per_option)?, preferred)
}
