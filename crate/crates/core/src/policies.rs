//! Option-selection strategies: offline oracle, epsilon-greedy, UCB1,
//! Thompson sampling and active inference (minimum expected free energy).
//!
//! Every selector breaks ties toward the lowest option index.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::efe::{efe, EfeScore, EvolutionaryPrior};
use crate::error::{Error, Result};
use crate::gaussmix::ParameterBelief;
use crate::model::{log_softmax_at, logits_flat, EnvironmentTruth};
use crate::par::{try_map, Execution};

pub const DEFAULT_EPSILON: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Oracle,
    Egreedy,
    Ucb,
    Ts,
    Aif,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [Self::Oracle, Self::Egreedy, Self::Ucb, Self::Ts, Self::Aif];

    pub fn name(self) -> &'static str {
        match self {
            Self::Oracle => "oracle",
            Self::Egreedy => "egreedy",
            Self::Ucb => "ucb",
            Self::Ts => "ts",
            Self::Aif => "aif",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?}")))
    }
}

/// Hyperparameters shared by the belief-driven policies.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub epsilon: f64,
    pub preferred: usize,
    pub evolutionary_prior: EvolutionaryPrior,
    pub execution: Execution,
}

impl PolicyParams {
    pub fn new(epsilon: f64, preferred: usize, evolutionary_prior: EvolutionaryPrior) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::Config(format!("epsilon {epsilon} outside [0, 1]")));
        }
        if preferred >= evolutionary_prior.labels() {
            return Err(Error::LabelOutOfRange { label: preferred, labels: evolutionary_prior.labels() });
        }
        Ok(Self { epsilon, preferred, evolutionary_prior, execution: Execution::default() })
    }
}

/// Per-episode policy bookkeeping. `pulls` sum to `step`.
#[derive(Debug, Clone)]
pub struct PolicyState {
    pub kind: PolicyKind,
    pub params: PolicyParams,
    step: usize,
    pulls: Vec<u64>,
    rewards: Vec<f64>,
    rng: ChaCha8Rng,
}

impl PolicyState {
    pub fn new(kind: PolicyKind, params: PolicyParams, options: usize, rng: ChaCha8Rng) -> Result<Self> {
        if options == 0 {
            return Err(Error::InvalidDimensions("no options".into()));
        }
        Ok(Self { kind, params, step: 0, pulls: vec![0; options], rewards: vec![0.0; options], rng })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn pulls(&self) -> &[u64] {
        &self.pulls
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn options(&self) -> usize {
        self.pulls.len()
    }

    pub fn record(&mut self, option: usize, reward: f64) -> Result<()> {
        if option >= self.options() {
            return Err(Error::OptionOutOfRange { option, options: self.options() });
        }
        self.step += 1;
        self.pulls[option] += 1;
        self.rewards[option] += reward;
        Ok(())
    }

    /// Dispatches on `kind`. `psi` is only consulted by the oracle.
    pub fn select(&mut self, beliefs: &[ParameterBelief], contexts: &[Vec<f64>], psi: Option<&[f64]>) -> Result<Selection> {
        let option = match self.kind {
            PolicyKind::Oracle => {
                let psi = psi.ok_or_else(|| Error::Config("oracle policy needs the true success probabilities".into()))?;
                argmax(psi)
            }
            PolicyKind::Egreedy => epsilon_greedy_select(beliefs, contexts, self)?,
            PolicyKind::Ucb => ucb_select(self),
            PolicyKind::Ts => thompson_select(beliefs, contexts, self.params.preferred, &mut self.rng)?,
            PolicyKind::Aif => {
                let (option, scores) = aif_select(beliefs, contexts, &self.params.evolutionary_prior, self.params.execution)?;
                return Ok(Selection { option, scores: Some(scores) });
            }
        };
        Ok(Selection { option, scores: None })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub option: usize,
    /// Per-option EFE scores when the active-inference policy chose.
    pub scores: Option<Vec<EfeScore>>,
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = k;
        }
    }
    best
}

fn check_inputs(beliefs: &[ParameterBelief], contexts: &[Vec<f64>]) -> Result<()> {
    if beliefs.is_empty() {
        return Err(Error::InvalidDimensions("no options".into()));
    }
    if beliefs.len() != contexts.len() {
        return Err(Error::DimensionMismatch { expected: beliefs.len(), got: contexts.len() });
    }
    Ok(())
}

/// `p(f_p | theta, x)` for a flattened parameter vector.
pub(crate) fn success_prob(theta: &[f64], x: &[f64], preferred: usize) -> Result<f64> {
    if x.is_empty() || theta.len() % x.len() != 0 {
        return Err(Error::DimensionMismatch { expected: theta.len(), got: x.len() });
    }
    let z = logits_flat(theta, x.len(), x);
    if preferred >= z.len() {
        return Err(Error::LabelOutOfRange { label: preferred, labels: z.len() });
    }
    Ok(log_softmax_at(&z, preferred).exp())
}

/// Best option under the true success probabilities.
pub fn oracle_select(env: &EnvironmentTruth) -> usize {
    argmax(&env.psi)
}

/// Plug-in success probability of every option at its mixture mean.
pub fn plug_in_success(beliefs: &[ParameterBelief], contexts: &[Vec<f64>], preferred: usize) -> Result<Vec<f64>> {
    check_inputs(beliefs, contexts)?;
    beliefs
        .iter()
        .zip(contexts)
        .map(|(b, x)| success_prob(b.mixture_mean().as_slice(), x, preferred))
        .collect()
}

/// With probability `epsilon` a uniformly random option, otherwise the best
/// plug-in success probability.
pub fn epsilon_greedy_select(beliefs: &[ParameterBelief], contexts: &[Vec<f64>], state: &mut PolicyState) -> Result<usize> {
    check_inputs(beliefs, contexts)?;
    let u: f64 = state.rng.random();
    if u < state.params.epsilon {
        return Ok(state.rng.random_range(0..beliefs.len()));
    }
    Ok(argmax(&plug_in_success(beliefs, contexts, state.params.preferred)?))
}

/// UCB1 on the binary reward: unvisited options first, then the largest
/// `mean + sqrt(2 ln t / N)`.
pub fn ucb_select(state: &PolicyState) -> usize {
    if let Some(k) = state.pulls.iter().position(|n| *n == 0) {
        return k;
    }
    let ln_t = (state.step as f64).ln();
    let index: Vec<f64> = state
        .pulls
        .iter()
        .zip(&state.rewards)
        .map(|(n, r)| {
            let n = *n as f64;
            r / n + (2.0 * ln_t / n).sqrt()
        })
        .collect();
    argmax(&index)
}

/// One posterior draw per option, best sampled success probability wins.
pub fn thompson_select<R: Rng + ?Sized>(
    beliefs: &[ParameterBelief],
    contexts: &[Vec<f64>],
    preferred: usize,
    rng: &mut R,
) -> Result<usize> {
    check_inputs(beliefs, contexts)?;
    let mut sampled = Vec::with_capacity(beliefs.len());
    for (b, x) in beliefs.iter().zip(contexts) {
        let theta = b.sample(rng);
        sampled.push(success_prob(theta.as_slice(), x, preferred)?);
    }
    Ok(argmax(&sampled))
}

/// Minimum-EFE option together with every option's score.
pub fn aif_select(
    beliefs: &[ParameterBelief],
    contexts: &[Vec<f64>],
    ev: &EvolutionaryPrior,
    exec: Execution,
) -> Result<(usize, Vec<EfeScore>)> {
    check_inputs(beliefs, contexts)?;
    let scores = try_map(exec, beliefs, |k, b| efe(b, &contexts[k], ev))?;
    let totals: Vec<f64> = scores.iter().map(|s| s.total).collect();
    Ok((argmin(&totals), scores))
}
