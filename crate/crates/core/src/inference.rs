//! Belief updates from semantic observations.
//!
//! Internal (trusted) observations go through [`naive_update`]. External
//! observations that may be faulty go through [`psda_update`], which weighs
//! the "observation is wrong" hypothesis (keep the prior) against the
//! "observation is right" hypothesis (take the naive posterior) and stacks
//! both before reducing the mixture.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussmix::{log_sum_exp, runnalls_reduce, GaussianComponent, ParameterBelief};
use crate::laplace::batch_laplace;

pub const DEFAULT_REDUCTION_THRESHOLD: usize = 10;

/// Posterior probabilities that an external observation is incorrect
/// (`gamma0`) or correct (`gamma1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationPosterior {
    pub gamma0: f64,
    pub gamma1: f64,
}

impl AssociationPosterior {
    pub const TRUSTED: Self = Self { gamma0: 0.0, gamma1: 1.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Prior probability that an external observation is faulty.
    pub fp_rate: f64,
    pub labels: usize,
    pub reduction_threshold: usize,
}

impl FusionConfig {
    pub fn new(fp_rate: f64, labels: usize, reduction_threshold: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&fp_rate) {
            return Err(Error::Config(format!("fp_rate {fp_rate} outside [0, 1]")));
        }
        if labels < 2 {
            return Err(Error::Config("need at least two labels".into()));
        }
        if reduction_threshold < 1 {
            return Err(Error::Config("reduction threshold must be >= 1".into()));
        }
        Ok(Self { fp_rate, labels, reduction_threshold })
    }
}

/// Result of a naive Bayes update, with the prior predictive evidence `Lambda`.
#[derive(Debug, Clone)]
pub struct NaiveOutcome {
    pub belief: ParameterBelief,
    pub lambda: f64,
}

/// Replaces every mixand by its Laplace posterior and reweights by evidence:
/// `w_u <- w_u C_u / Lambda` with `Lambda = sum_u w_u C_u`.
pub fn naive_update(belief: &ParameterBelief, label: usize, x: &[f64]) -> Result<NaiveOutcome> {
    let results = batch_laplace(belief, label, x)?;
    let joint: Vec<f64> = belief
        .components()
        .iter()
        .zip(&results)
        .map(|(c, r)| c.log_weight() + r.log_evidence)
        .collect();
    let log_lambda = log_sum_exp(joint.iter().copied());
    let lambda = log_lambda.exp();
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::NonPositiveEvidence(lambda));
    }
    let components = results
        .iter()
        .zip(&joint)
        .enumerate()
        .map(|(index, (r, lw))| {
            r.to_component(lw - log_lambda)
                .map_err(|e| Error::Mixand { index, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NaiveOutcome { belief: ParameterBelief::new(belief.option(), components)?, lambda })
}

/// `gamma0 = (FP/F) / (FP/F + (1 - FP) Lambda)`, `gamma1` likewise.
pub fn association_probabilities(lambda: f64, cfg: &FusionConfig) -> Result<AssociationPosterior> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::NonPositiveEvidence(lambda));
    }
    let fault = cfg.fp_rate / cfg.labels as f64;
    let valid = (1.0 - cfg.fp_rate) * lambda;
    let total = fault + valid;
    Ok(AssociationPosterior { gamma0: fault / total, gamma1: valid / total })
}

/// Prior mixands scaled by `gamma0` stacked with naive-posterior mixands
/// scaled by `gamma1`; `2M` components, not yet reduced.
#[derive(Debug, Clone)]
pub struct PsdaStack {
    pub stacked: ParameterBelief,
    pub association: AssociationPosterior,
    pub lambda: f64,
}

pub fn psda_stack(belief: &ParameterBelief, label: usize, x: &[f64], cfg: &FusionConfig) -> Result<PsdaStack> {
    let naive = naive_update(belief, label, x)?;
    let association = association_probabilities(naive.lambda, cfg)?;
    let (lg0, lg1) = (association.gamma0.ln(), association.gamma1.ln());
    let scale = |comps: &[GaussianComponent], lg: f64| -> Vec<GaussianComponent> {
        comps.iter().map(|c| c.clone().with_log_weight(c.log_weight() + lg)).collect()
    };
    let mut components = scale(belief.components(), lg0);
    components.extend(scale(naive.belief.components(), lg1));
    Ok(PsdaStack {
        stacked: ParameterBelief::new_unnormalized(belief.option(), components)?,
        association,
        lambda: naive.lambda,
    })
}

#[derive(Debug, Clone)]
pub struct PsdaOutcome {
    pub belief: ParameterBelief,
    pub association: AssociationPosterior,
    pub lambda: f64,
    pub components_before: usize,
    pub components_after: usize,
}

/// Full probabilistic data association update: stack, then reduce to
/// `cfg.reduction_threshold` mixands.
pub fn psda_update(belief: &ParameterBelief, label: usize, x: &[f64], cfg: &FusionConfig) -> Result<PsdaOutcome> {
    let stack = psda_stack(belief, label, x, cfg)?;
    let components_before = stack.stacked.len();
    let reduced = runnalls_reduce(&stack.stacked, cfg.reduction_threshold)?;
    Ok(PsdaOutcome {
        components_after: reduced.len(),
        belief: reduced,
        association: stack.association,
        lambda: stack.lambda,
        components_before,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Internal,
    External,
}

/// One line of the update audit log. `option` and `label` are one-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateAudit {
    pub step: usize,
    pub option: usize,
    pub source: Source,
    pub label: usize,
    pub gamma0: f64,
    pub gamma1: f64,
    pub lambda: f64,
    pub components_before: usize,
    pub components_after: usize,
}
