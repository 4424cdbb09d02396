//! Expected free energy of selecting an option whose parameter belief is a
//! Gaussian mixture and whose outcome likelihood is softmax.
//!
//! For each outcome `o` and mixand `u` a Laplace fit yields the evidence
//! `C_u(o)` and a Gaussian posterior. The per-outcome score is
//!
//! ```text
//! term1(o) = q(o) log(q(o) / p_ev(o))
//! term2(o) = sum_u w_u C_u(o) E_post_u[G + H' theta - theta' K theta / 2]
//! EFE      = sum_o term1(o) - term2(o)
//! ```
//!
//! where `exp(G + H' theta - theta' K theta / 2)` is the Gaussian-form
//! likelihood implied by the prior and posterior natural parameters.
//! Evidences are normalized over outcomes per mixand before use, so `q` is a
//! proper distribution even though each Laplace evidence carries its own
//! approximation error.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussmix::{to_natural, GaussianComponent, NaturalParams, ParameterBelief};
use crate::laplace::{labels_for, laplace_update, LaplaceResult, LogitProjection};

/// Outcome preference used by the active-inference agent. Stored
/// unnormalized; a common scale factor shifts every option's EFE equally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EvolutionaryPrior {
    probs: Vec<f64>,
}

impl TryFrom<Vec<f64>> for EvolutionaryPrior {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<EvolutionaryPrior> for Vec<f64> {
    fn from(p: EvolutionaryPrior) -> Self {
        p.probs
    }
}

impl EvolutionaryPrior {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::Config("evolutionary prior needs at least two outcomes".into()));
        }
        if probs.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::Config("evolutionary prior entries must be positive and finite".into()));
        }
        Ok(Self { probs })
    }

    /// `preferred_value` on the preferred label and `other` everywhere else.
    pub fn preferring(preferred: usize, labels: usize, preferred_value: f64, other: f64) -> Result<Self> {
        if preferred >= labels {
            return Err(Error::LabelOutOfRange { label: preferred, labels });
        }
        Self::new((0..labels).map(|h| if h == preferred { preferred_value } else { other }).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn labels(&self) -> usize {
        self.probs.len()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.probs.iter().map(|p| p * factor).collect())
    }
}

/// `p(o | theta) ~ exp(g_const + h_lin' theta - theta' k_quad theta / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodExpForm {
    pub g_const: f64,
    pub h_lin: DVector<f64>,
    pub k_quad: DMatrix<f64>,
}

impl LikelihoodExpForm {
    pub fn log_value(&self, theta: &DVector<f64>) -> f64 {
        self.g_const + self.h_lin.dot(theta) - 0.5 * theta.dot(&(&self.k_quad * theta))
    }
}

/// Divides the posterior exponential form by the prior one:
/// `G = P + log C - L`, `H = Q - M`, `K = R - N`.
pub fn likelihood_exp_form(prior: &NaturalParams, posterior: &NaturalParams, log_evidence: f64) -> LikelihoodExpForm {
    let k = &posterior.quad_term - &prior.quad_term;
    LikelihoodExpForm {
        g_const: posterior.const_term + log_evidence - prior.const_term,
        h_lin: &posterior.lin_term - &prior.lin_term,
        k_quad: (&k + k.transpose()) * 0.5,
    }
}

/// `E[G + H' theta - theta' K theta / 2]` for `theta ~ g`.
pub fn expected_quadratic(g: &GaussianComponent, form: &LikelihoodExpForm) -> Result<f64> {
    let d = g.dim();
    if form.h_lin.len() != d || form.k_quad.nrows() != d {
        return Err(Error::DimensionMismatch { expected: d, got: form.h_lin.len() });
    }
    let mu = g.mean();
    let quad = mu.dot(&(&form.k_quad * mu)) + (&form.k_quad * g.cov()).trace();
    Ok(form.g_const + form.h_lin.dot(mu) - 0.5 * quad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTerms {
    /// One-based outcome label.
    pub o: usize,
    pub q: f64,
    pub term1: f64,
    pub term2: f64,
}

/// EFE of one option with its per-outcome decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfeScore {
    /// One-based option index.
    pub option: usize,
    pub total: f64,
    pub per_outcome: Vec<OutcomeTerms>,
}

impl EfeScore {
    /// Risk part, `sum_o q(o) log(q(o) / p_ev(o))`.
    pub fn risk(&self) -> f64 {
        self.per_outcome.iter().map(|t| t.term1).sum()
    }

    /// Ambiguity part, `-sum_o term2(o)`.
    pub fn ambiguity(&self) -> f64 {
        -self.per_outcome.iter().map(|t| t.term2).sum::<f64>()
    }
}

/// Per-mixand log evidences `[u][o]` normalized over outcomes.
fn normalize_evidences(log_ev: &mut [Vec<f64>]) {
    for row in log_ev.iter_mut() {
        let z = crate::gaussmix::log_sum_exp(row.iter().copied());
        for v in row.iter_mut() {
            *v -= z;
        }
    }
}

fn check_prior(belief: &ParameterBelief, x: &[f64], ev: &EvolutionaryPrior) -> Result<usize> {
    let f = labels_for(belief.dim(), x)?;
    if ev.labels() != f {
        return Err(Error::DimensionMismatch { expected: f, got: ev.labels() });
    }
    Ok(f)
}

fn assemble(option: usize, weights: &[f64], log_ev: &[Vec<f64>], ell: &[Vec<f64>], ev: &EvolutionaryPrior) -> EfeScore {
    let f = ev.labels();
    let mut per_outcome = Vec::with_capacity(f);
    let mut total = 0.0;
    for o in 0..f {
        let mut q = 0.0;
        let mut term2 = 0.0;
        for (u, w) in weights.iter().enumerate() {
            let mass = w * log_ev[u][o].exp();
            q += mass;
            term2 += mass * ell[u][o];
        }
        let term1 = q * (q / ev.probs()[o]).ln();
        total += term1 - term2;
        per_outcome.push(OutcomeTerms { o: o + 1, q, term1, term2 });
    }
    EfeScore { option: option + 1, total, per_outcome }
}

/// Predictive outcome distribution `q(o) = sum_u w_u C_u(o)` over every label.
pub fn predictive_distribution(belief: &ParameterBelief, x: &[f64]) -> Result<Vec<f64>> {
    let f = labels_for(belief.dim(), x)?;
    let mut log_ev = Vec::with_capacity(belief.len());
    for (index, c) in belief.components().iter().enumerate() {
        let proj = LogitProjection::new(c, x).map_err(|e| Error::Mixand { index, source: Box::new(e) })?;
        log_ev.push((0..f).map(|o| proj.fit(o).map(|fit| fit.log_evidence)).collect::<Result<Vec<_>>>()?);
    }
    normalize_evidences(&mut log_ev);
    let w = belief.weights();
    Ok((0..f).map(|o| w.iter().zip(&log_ev).map(|(w, row)| w * row[o].exp()).sum()).collect())
}

/// `q(o)` for one outcome, with the per-mixand Laplace fits for that outcome.
pub fn predictive_prob(belief: &ParameterBelief, o: usize, x: &[f64]) -> Result<(f64, Vec<LaplaceResult>)> {
    let q = predictive_distribution(belief, x)?;
    let q_o = *q.get(o).ok_or(Error::LabelOutOfRange { label: o, labels: q.len() })?;
    let fits = crate::laplace::batch_laplace(belief, o, x)?;
    Ok((q_o, fits))
}

/// Expected free energy of selecting the option that `belief` describes.
pub fn efe(belief: &ParameterBelief, x: &[f64], ev: &EvolutionaryPrior) -> Result<EfeScore> {
    let f = check_prior(belief, x, ev)?;
    let mut log_ev = Vec::with_capacity(belief.len());
    let mut ell = Vec::with_capacity(belief.len());
    for (index, c) in belief.components().iter().enumerate() {
        let wrap = |e| Error::Mixand { index, source: Box::new(e) };
        let proj = LogitProjection::new(c, x).map_err(wrap)?;
        let mut ev_row = Vec::with_capacity(f);
        let mut ell_row = Vec::with_capacity(f);
        for o in 0..f {
            let fit = proj.fit(o).map_err(wrap)?;
            ev_row.push(fit.log_evidence);
            ell_row.push(fit.expected_log_likelihood(&proj));
        }
        log_ev.push(ev_row);
        ell.push(ell_row);
    }
    normalize_evidences(&mut log_ev);
    Ok(assemble(belief.option(), &belief.weights(), &log_ev, &ell, ev))
}

/// Same quantity as [`efe`], computed through full `d`-dimensional natural
/// parameters and [`likelihood_exp_form`] for every `(mixand, outcome)`.
/// Slower; useful as a cross-check and for inspecting the fitted forms.
pub fn efe_explicit(belief: &ParameterBelief, x: &[f64], ev: &EvolutionaryPrior) -> Result<EfeScore> {
    let f = check_prior(belief, x, ev)?;
    let mut log_ev = Vec::with_capacity(belief.len());
    let mut ell = Vec::with_capacity(belief.len());
    for c in belief.components() {
        let prior_nat = to_natural(c);
        let mut ev_row = Vec::with_capacity(f);
        let mut ell_row = Vec::with_capacity(f);
        for o in 0..f {
            let r = laplace_update(c, o, x)?;
            let post = r.to_component(0.0)?;
            let form = likelihood_exp_form(&prior_nat, &to_natural(&post), r.log_evidence);
            ev_row.push(r.log_evidence);
            ell_row.push(expected_quadratic(&post, &form)?);
        }
        log_ev.push(ev_row);
        ell.push(ell_row);
    }
    normalize_evidences(&mut log_ev);
    Ok(assemble(belief.option(), &belief.weights(), &log_ev, &ell, ev))
}
