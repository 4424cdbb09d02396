//! Laplace approximation of a Gaussian prior times one softmax likelihood.
//!
//! The likelihood only sees `theta` through the `F` logits `z = J' theta`,
//! with `J = I_F (x) x`. Starting from the prior mean, every Newton iterate of
//! the full `d`-dimensional problem stays on `mu + Sigma J alpha`, so the
//! iteration is carried out on `alpha` (length `F`) with
//! `S = J' Sigma J`. The iterates are the same as the full Newton method;
//! only the linear algebra is smaller.
//!
//! At the mode, with `W = diag(p) - p p'`:
//!
//! * posterior covariance `(P + J W J')^-1 = Sigma - Sigma J W (I + S W)^-1 J' Sigma`
//! * `log det(P + J W J') = -log det Sigma + log det(I + W S)`
//! * log evidence `log p_f(z) - alpha' S alpha / 2 - log det(I + W S) / 2`

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussmix::{GaussianComponent, ParameterBelief};
use crate::model::{log_softmax_at, softmax_in_place};

pub const GRADIENT_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;
pub const MAX_HALVINGS: usize = 30;

/// Gaussian approximation of one mixand's posterior and its evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceResult {
    pub post_mean: DVector<f64>,
    pub post_cov: DMatrix<f64>,
    /// `log C_u`, the log of the prior-predictive probability of the label.
    pub log_evidence: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LaplaceResult {
    pub fn evidence(&self) -> f64 {
        self.log_evidence.exp()
    }

    pub fn to_component(&self, log_weight: f64) -> Result<GaussianComponent> {
        GaussianComponent::new(self.post_mean.clone(), self.post_cov.clone(), log_weight)
    }
}

/// Prior quantities projected onto logit space for one context. Independent
/// of the observed label, so it is shared across outcomes.
#[derive(Debug, Clone)]
pub(crate) struct LogitProjection {
    /// `Sigma J`, `d x F`.
    sigma_j: DMatrix<f64>,
    /// `J' Sigma J`, `F x F`.
    s: DMatrix<f64>,
    /// Prior-mean logits.
    z0: DVector<f64>,
    x_inf: f64,
}

pub(crate) fn labels_for(dim: usize, x: &[f64]) -> Result<usize> {
    let c = x.len();
    if c == 0 || !dim.is_multiple_of(c) || dim / c < 2 {
        return Err(Error::DimensionMismatch { expected: dim, got: c });
    }
    Ok(dim / c)
}

impl LogitProjection {
    pub(crate) fn new(prior: &GaussianComponent, x: &[f64]) -> Result<Self> {
        let d = prior.dim();
        let f = labels_for(d, x)?;
        let c = x.len();
        let cov = prior.cov();
        let mut sigma_j = DMatrix::zeros(d, f);
        for h in 0..f {
            for r in 0..d {
                let mut acc = 0.0;
                for (i, xi) in x.iter().enumerate() {
                    acc += cov[(r, h * c + i)] * xi;
                }
                sigma_j[(r, h)] = acc;
            }
        }
        let mut s = DMatrix::zeros(f, f);
        for h in 0..f {
            for g in 0..f {
                let mut acc = 0.0;
                for (i, xi) in x.iter().enumerate() {
                    acc += xi * sigma_j[(h * c + i, g)];
                }
                s[(h, g)] = acc;
            }
        }
        let s = (&s + s.transpose()) * 0.5;
        let mean = prior.mean();
        let z0 = DVector::from_fn(f, |h, _| (0..c).map(|i| mean[h * c + i] * x[i]).sum());
        let x_inf = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Self { sigma_j, s, z0, x_inf })
    }

    pub(crate) fn labels(&self) -> usize {
        self.s.nrows()
    }

    fn objective(&self, alpha: &DVector<f64>, label: usize) -> (f64, DVector<f64>) {
        let z = &self.z0 + &self.s * alpha;
        let phi = log_softmax_at(z.as_slice(), label) - 0.5 * alpha.dot(&(&self.s * alpha));
        (phi, z)
    }

    /// Newton iteration for the posterior mode in logit coordinates.
    pub(crate) fn fit(&self, label: usize) -> Result<LogitFit> {
        let f = self.labels();
        if label >= f {
            return Err(Error::LabelOutOfRange { label, labels: f });
        }
        let mut alpha = DVector::zeros(f);
        let (mut phi, mut z) = self.objective(&alpha, label);
        let mut iterations = 0;
        let mut converged = false;
        loop {
            let p = probs(&z);
            let mut r = -&p - &alpha;
            r[label] += 1.0;
            if self.x_inf * r.amax() <= GRADIENT_TOL {
                converged = true;
                break;
            }
            if iterations == MAX_ITERATIONS {
                break;
            }
            let w = curvature(&p);
            let system = DMatrix::identity(f, f) + &w * &self.s;
            let step = system.lu().solve(&r).ok_or(Error::Singular("laplace newton step"))?;
            // near the mode the objective is flat to rounding; a full step that
            // loses only round-off must still be taken
            let slack = 8.0 * f64::EPSILON * phi.abs().max(1.0);
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let trial = &alpha + &step * t;
                let (trial_phi, trial_z) = self.objective(&trial, label);
                if trial_phi >= phi - slack {
                    accepted = Some((trial, trial_phi, trial_z));
                    break;
                }
                t *= 0.5;
            }
            iterations += 1;
            match accepted {
                Some((a, ph, zz)) => {
                    alpha = a;
                    phi = ph;
                    z = zz;
                }
                // No ascent left at machine precision.
                None => break,
            }
        }
        let p = probs(&z);
        let w = curvature(&p);
        let system = DMatrix::identity(f, f) + &w * &self.s;
        let lu = system.clone().lu();
        let det = lu.determinant();
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::Singular("laplace precision"));
        }
        let inv_system = lu.try_inverse().ok_or(Error::Singular("laplace precision"))?;
        let log_evidence = phi - 0.5 * det.ln();
        Ok(LogitFit { alpha, z, w, inv_system, log_evidence, iterations, converged, label })
    }
}

fn probs(z: &DVector<f64>) -> DVector<f64> {
    let mut p = z.clone();
    softmax_in_place(p.as_mut_slice());
    p
}

fn curvature(p: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(p) - p * p.transpose()
}

/// Mode and curvature of one `(mixand, label)` fit in logit coordinates.
#[derive(Debug, Clone)]
pub(crate) struct LogitFit {
    alpha: DVector<f64>,
    z: DVector<f64>,
    w: DMatrix<f64>,
    /// `(I + W S)^-1`
    inv_system: DMatrix<f64>,
    pub(crate) log_evidence: f64,
    pub(crate) iterations: usize,
    pub(crate) converged: bool,
    label: usize,
}

impl LogitFit {
    /// `W (I + S W)^-1`, symmetric.
    fn gain(&self) -> DMatrix<f64> {
        let g = &self.inv_system * &self.w;
        (&g + g.transpose()) * 0.5
    }

    /// Posterior covariance of the logits, `J' Sigma_post J = S - S G S`.
    fn logit_cov(&self, proj: &LogitProjection) -> DMatrix<f64> {
        &proj.s - &proj.s * self.gain() * &proj.s
    }

    /// `E_post[log p_f(z_hat) + (e_f - p)'(z - z_hat) - (z - z_hat)' W (z - z_hat) / 2]`,
    /// the expected second-order expansion of the log-likelihood around the mode.
    pub(crate) fn expected_log_likelihood(&self, proj: &LogitProjection) -> f64 {
        log_softmax_at(self.z.as_slice(), self.label) - 0.5 * (&self.w * self.logit_cov(proj)).trace()
    }

    pub(crate) fn into_result(self, prior: &GaussianComponent, proj: &LogitProjection) -> LaplaceResult {
        let post_mean = prior.mean() + &proj.sigma_j * &self.alpha;
        let correction = &proj.sigma_j * self.gain() * proj.sigma_j.transpose();
        let cov = prior.cov() - correction;
        let post_cov = (&cov + cov.transpose()) * 0.5;
        LaplaceResult {
            post_mean,
            post_cov,
            log_evidence: self.log_evidence,
            iterations: self.iterations,
            converged: self.converged,
        }
    }
}

/// Posterior mode, covariance and evidence for one Gaussian prior and one
/// observed label under context `x`.
pub fn laplace_update(prior: &GaussianComponent, label: usize, x: &[f64]) -> Result<LaplaceResult> {
    let proj = LogitProjection::new(prior, x)?;
    let fit = proj.fit(label)?;
    Ok(fit.into_result(prior, &proj))
}

/// [`laplace_update`] for every mixand, in order.
pub fn batch_laplace(belief: &ParameterBelief, label: usize, x: &[f64]) -> Result<Vec<LaplaceResult>> {
    belief
        .components()
        .iter()
        .enumerate()
        .map(|(index, c)| laplace_update(c, label, x).map_err(|e| Error::Mixand { index, source: Box::new(e) }))
        .collect()
}

/// Direct `d`-dimensional Newton iteration, kept as an independent check on
/// the logit-space solver. Returns `(mode, covariance, log evidence)`.
#[cfg(test)]
pub(crate) fn laplace_full_newton(prior: &GaussianComponent, label: usize, x: &[f64]) -> (DVector<f64>, DMatrix<f64>, f64) {
    use nalgebra::Cholesky;
    use std::f64::consts::PI;

    let d = prior.dim();
    let c = x.len();
    let f = d / c;
    let prec = prior.precision();
    let mu = prior.mean().clone();
    let xx = DVector::from_column_slice(x) * DVector::from_column_slice(x).transpose();
    let logits = |th: &DVector<f64>| DVector::from_fn(f, |h, _| (0..c).map(|i| th[h * c + i] * x[i]).sum::<f64>());
    let g = |th: &DVector<f64>| {
        let diff = th - &mu;
        log_softmax_at(logits(th).as_slice(), label) - 0.5 * diff.dot(&(&prec * &diff))
    };
    let hess = |p: &DVector<f64>| {
        let w = curvature(p);
        let mut a = prec.clone();
        for h in 0..f {
            for k in 0..f {
                let blk = &xx * w[(h, k)];
                let mut view = a.view_mut((h * c, k * c), (c, c));
                view += blk;
            }
        }
        a
    };
    let mut th = mu.clone();
    for _ in 0..200 {
        let p = probs(&logits(&th));
        let mut grad = -(&prec * (&th - &mu));
        for h in 0..f {
            let e = if h == label { 1.0 } else { 0.0 } - p[h];
            for i in 0..c {
                grad[h * c + i] += e * x[i];
            }
        }
        if grad.amax() < 1e-12 {
            break;
        }
        let a = hess(&p);
        let step = Cholesky::new(a).unwrap().solve(&grad);
        let mut t = 1.0;
        let g0 = g(&th);
        while g(&(&th + &step * t)) < g0 && t > 1e-12 {
            t *= 0.5;
        }
        th += step * t;
    }
    let a = hess(&probs(&logits(&th)));
    let chol = Cholesky::new(a).unwrap();
    let logdet_a = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_ev = g(&th) - 0.5 * (d as f64 * (2.0 * PI).ln() + prior.log_det_cov()) + 0.5 * d as f64 * (2.0 * PI).ln()
        - 0.5 * logdet_a;
    (th, chol.inverse(), log_ev)
}
