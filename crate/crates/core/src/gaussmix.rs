//! Gaussian components, Gaussian-mixture beliefs, natural parameters and
//! Runnalls pairwise reduction.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Components whose normalized weight falls below this are dropped before reduction.
pub const WEIGHT_FLOOR: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-10;

/// One weighted Gaussian mixand. The Cholesky factor of the covariance is
/// computed once at construction.
#[derive(Debug, Clone)]
pub struct GaussianComponent {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    log_weight: f64,
    chol_l: DMatrix<f64>,
    log_det: f64,
}

impl PartialEq for GaussianComponent {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov && self.log_weight == other.log_weight
    }
}

impl GaussianComponent {
    /// Validates symmetry (to 1e-10, scaled by the largest entry), symmetrizes
    /// and factorizes. `log_weight` may be `-inf` for a zero-weight mixand
    /// inside a pre-reduction stack; it may not be NaN or `+inf`.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, log_weight: f64) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidDimensions("empty mean".into()));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: cov.nrows() });
        }
        if log_weight.is_nan() || log_weight == f64::INFINITY {
            return Err(Error::Config(format!("invalid log weight {log_weight}")));
        }
        if !mean.iter().chain(cov.iter()).all(|v| v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let scale = cov.amax().max(1.0);
        let asym = (&cov - cov.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotPositiveDefinite);
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        let chol = Cholesky::new(cov.clone()).ok_or(Error::NotPositiveDefinite)?;
        let chol_l = chol.l();
        let log_det = 2.0 * chol_l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self { mean, cov, log_weight, chol_l, log_det })
    }

    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d) * variance, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn log_weight(&self) -> f64 {
        self.log_weight
    }

    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    /// Lower Cholesky factor of the covariance.
    pub fn chol_factor(&self) -> &DMatrix<f64> {
        &self.chol_l
    }

    pub fn log_det_cov(&self) -> f64 {
        self.log_det
    }

    pub fn with_log_weight(mut self, log_weight: f64) -> Self {
        self.log_weight = log_weight;
        self
    }

    fn cholesky(&self) -> Cholesky<f64, Dyn> {
        Cholesky::pack_dirty(self.chol_l.clone())
    }

    pub fn precision(&self) -> DMatrix<f64> {
        let p = self.cholesky().inverse();
        (&p + p.transpose()) * 0.5
    }

    /// Log density of the (unweighted) Gaussian.
    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let diff = x - &self.mean;
        let y = self
            .chol_l
            .solve_lower_triangular(&diff)
            .ok_or(Error::Singular("log_pdf"))?;
        let d = self.dim() as f64;
        Ok(-0.5 * y.norm_squared() - 0.5 * d * (2.0 * PI).ln() - 0.5 * self.log_det)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let eps = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.chol_l * eps
    }

    pub fn to_record(&self) -> ComponentRecord {
        ComponentRecord {
            log_weight: self.log_weight,
            mean: self.mean.iter().copied().collect(),
            cov: self.cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }

    pub fn from_record(rec: &ComponentRecord) -> Result<Self> {
        let d = rec.mean.len();
        if rec.cov.len() != d || rec.cov.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: rec.cov.len() });
        }
        let cov = DMatrix::from_fn(d, d, |i, j| rec.cov[i][j]);
        Self::new(DVector::from_vec(rec.mean.clone()), cov, rec.log_weight)
    }
}

/// Wire layout of one mixand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub log_weight: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

/// Exponential-family form `exp(const + lin' theta - 0.5 theta' quad theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParams {
    pub const_term: f64,
    pub lin_term: DVector<f64>,
    pub quad_term: DMatrix<f64>,
}

impl NaturalParams {
    pub fn log_density(&self, theta: &DVector<f64>) -> f64 {
        self.const_term + self.lin_term.dot(theta) - 0.5 * theta.dot(&(&self.quad_term * theta))
    }

    /// Back to `(mean, cov)`.
    pub fn to_moments(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let chol = Cholesky::new(self.quad_term.clone()).ok_or(Error::NotPositiveDefinite)?;
        let cov = chol.inverse();
        let mean = chol.solve(&self.lin_term);
        Ok((mean, (&cov + cov.transpose()) * 0.5))
    }
}

/// Natural parameters of a normalized Gaussian: precision, precision-weighted
/// mean and log normalizer.
pub fn to_natural(g: &GaussianComponent) -> NaturalParams {
    let quad = g.precision();
    let lin = &quad * g.mean();
    let d = g.dim() as f64;
    let const_term = -0.5 * g.mean().dot(&lin) - 0.5 * (d * (2.0 * PI).ln() + g.log_det_cov());
    NaturalParams { const_term, lin_term: lin, quad_term: quad }
}

pub(crate) fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Single Gaussian with the same first two moments as the weighted set.
/// Weights are renormalized internally; the result carries the log of the
/// total input weight.
pub fn moment_match(components: &[GaussianComponent]) -> Result<GaussianComponent> {
    let first = components.first().ok_or(Error::ZeroWeights)?;
    let d = first.dim();
    let total = log_sum_exp(components.iter().map(|c| c.log_weight));
    if total == f64::NEG_INFINITY {
        return Err(Error::ZeroWeights);
    }
    let mut mean = DVector::zeros(d);
    let mut second = DMatrix::zeros(d, d);
    for c in components {
        if c.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: c.dim() });
        }
        let w = (c.log_weight - total).exp();
        mean.axpy(w, &c.mean, 1.0);
        second += (&c.cov + &c.mean * c.mean.transpose()) * w;
    }
    let cov = second - &mean * mean.transpose();
    GaussianComponent::new(mean, cov, total)
}

/// Gaussian-mixture belief over the flattened parameters of one option.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBelief {
    option: usize,
    components: Vec<GaussianComponent>,
}

impl ParameterBelief {
    /// Normalizes the weights. Fails on an empty list, mixed dimensions or
    /// all-zero weights.
    pub fn new(option: usize, components: Vec<GaussianComponent>) -> Result<Self> {
        let mut b = Self::new_unnormalized(option, components)?;
        b.normalize()?;
        Ok(b)
    }

    pub(crate) fn new_unnormalized(option: usize, components: Vec<GaussianComponent>) -> Result<Self> {
        let d = components.first().ok_or(Error::ZeroWeights)?.dim();
        if let Some(bad) = components.iter().find(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: bad.dim() });
        }
        Ok(Self { option, components })
    }

    pub fn single(option: usize, component: GaussianComponent) -> Self {
        Self { option, components: vec![component.with_log_weight(0.0)] }
    }

    fn normalize(&mut self) -> Result<()> {
        let total = log_sum_exp(self.components.iter().map(|c| c.log_weight));
        if !total.is_finite() {
            return Err(Error::ZeroWeights);
        }
        for c in &mut self.components {
            c.log_weight -= total;
        }
        Ok(())
    }

    pub fn option(&self) -> usize {
        self.option
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(GaussianComponent::weight).collect()
    }

    pub fn mixture_mean(&self) -> DVector<f64> {
        let mut mean = DVector::zeros(self.dim());
        for c in &self.components {
            mean.axpy(c.weight(), c.mean(), 1.0);
        }
        mean
    }

    pub fn mixture_log_pdf(&self, theta: &DVector<f64>) -> Result<f64> {
        let terms = self
            .components
            .iter()
            .map(|c| Ok(c.log_pdf(theta)? + c.log_weight))
            .collect::<Result<Vec<_>>>()?;
        Ok(log_sum_exp(terms))
    }

    /// Covariance of the whole mixture.
    pub fn mixture_cov(&self) -> DMatrix<f64> {
        let mean = self.mixture_mean();
        let d = self.dim();
        let mut second = DMatrix::zeros(d, d);
        for c in &self.components {
            second += (c.cov() + c.mean() * c.mean().transpose()) * c.weight();
        }
        second - &mean * mean.transpose()
    }

    /// Picks a mixand by weight and draws from it.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.weight();
            if u < acc {
                return c.sample(rng);
            }
        }
        self.components.last().expect("non-empty").sample(rng)
    }

    pub fn snapshot(&self) -> BeliefSnapshot {
        BeliefSnapshot {
            option: self.option + 1,
            components: self.components.iter().map(GaussianComponent::to_record).collect(),
        }
    }

    pub fn from_snapshot(s: &BeliefSnapshot) -> Result<Self> {
        if s.option == 0 {
            return Err(Error::OptionOutOfRange { option: 0, options: 0 });
        }
        let comps = s.components.iter().map(GaussianComponent::from_record).collect::<Result<Vec<_>>>()?;
        Self::new(s.option - 1, comps)
    }
}

/// Belief snapshot wire layout; `option` is one-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefSnapshot {
    pub option: usize,
    pub components: Vec<ComponentRecord>,
}

/// Runnalls upper bound on the KL cost of merging two normalized-weight mixands.
pub fn runnalls_cost(a: &GaussianComponent, b: &GaussianComponent) -> Result<(f64, GaussianComponent)> {
    let merged = moment_match(&[a.clone(), b.clone()])?;
    let (wa, wb) = (a.weight(), b.weight());
    let cost = 0.5 * ((wa + wb) * merged.log_det_cov() - wa * a.log_det_cov() - wb * b.log_det_cov());
    Ok((cost.max(0.0), merged))
}

/// Drops mixands below [`WEIGHT_FLOOR`], renormalizes, then greedily merges
/// the cheapest pair under the Runnalls bound until at most `max_components`
/// remain. Ties go to the lexicographically smallest `(i, j)`; the merged
/// mixand takes slot `i`.
pub fn runnalls_reduce(belief: &ParameterBelief, max_components: usize) -> Result<ParameterBelief> {
    let max_components = max_components.max(1);
    let survivors: Vec<GaussianComponent> = belief
        .components
        .iter()
        .filter(|c| c.weight() >= WEIGHT_FLOOR)
        .cloned()
        .collect();
    let mut floored = if survivors.len() == belief.len() {
        belief.clone()
    } else {
        ParameterBelief::new(belief.option, survivors)?
    };
    if floored.len() <= max_components {
        return Ok(floored);
    }
    floored.normalize()?;

    let mut slots: Vec<Option<GaussianComponent>> = floored.components.into_iter().map(Some).collect();
    let n = slots.len();
    // cost[i][j] for i < j, with the merged candidate alongside.
    let mut cost: Vec<Vec<Option<(f64, GaussianComponent)>>> = vec![vec![None; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (slots[i].as_ref().unwrap(), slots[j].as_ref().unwrap());
            cost[i][j] = Some(runnalls_cost(a, b)?);
        }
    }
    let mut active = n;
    while active > max_components {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            for j in i + 1..n {
                if let Some((c, _)) = &cost[i][j] {
                    if best.is_none_or(|(bc, _, _)| *c < bc) {
                        best = Some((*c, i, j));
                    }
                }
            }
        }
        let (_, i, j) = best.expect("at least one pair while active > 1");
        let (_, merged) = cost[i][j].take().expect("present");
        slots[i] = Some(merged);
        slots[j] = None;
        active -= 1;
        for other in 0..n {
            if other != j {
                let (lo, hi) = (other.min(j), other.max(j));
                cost[lo][hi] = None;
            }
        }
        for other in 0..n {
            if other == i || slots[other].is_none() {
                continue;
            }
            let (lo, hi) = (other.min(i), other.max(i));
            let pair = runnalls_cost(slots[lo].as_ref().unwrap(), slots[hi].as_ref().unwrap())?;
            cost[lo][hi] = Some(pair);
        }
    }
    ParameterBelief::new(belief.option, slots.into_iter().flatten().collect())
}
