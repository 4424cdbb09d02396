//! Numerical checks against quadrature and sampling oracles that are
//! independent of the Laplace machinery.

mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use oacmab::efe::predictive_distribution;
use oacmab::gaussmix::{GaussianComponent, ParameterBelief};
use oacmab::inference::naive_update;
use oacmab::laplace::laplace_update;
use rand::Rng;

/// Prior with `theta_0 - theta_1 ~ N(0, 1)`.
fn unit_logit_prior() -> GaussianComponent {
    GaussianComponent::new(DVector::zeros(2), DMatrix::identity(2, 2) * 0.5, 0.0).unwrap()
}

#[test]
fn logistic_normal_evidence() {
    let prior = unit_logit_prior();
    let r = laplace_update(&prior, 0, &[1.0]).unwrap();
    let grid = Grid::new(-10.0, 10.0, 100_000);
    let z = grid.integrate(|t| normal_pdf(t, 0.0, 1.0) * sigmoid(t));
    let err = (r.log_evidence - z.ln()).abs();
    println!("log evidence {} vs quadrature {} (error {err:.2e})", r.log_evidence, z.ln());
    assert!(err <= 1e-3, "{err}");
}

#[test]
fn logistic_normal_posterior_mean() {
    let prior = unit_logit_prior();
    let r = laplace_update(&prior, 0, &[1.0]).unwrap();
    let grid = Grid::new(-10.0, 10.0, 100_000);
    let z = grid.integrate(|t| normal_pdf(t, 0.0, 1.0) * sigmoid(t));
    let mean = grid.integrate(|t| t * normal_pdf(t, 0.0, 1.0) * sigmoid(t)) / z;
    let laplace = r.post_mean[0] - r.post_mean[1];
    assert!((laplace - mean).abs() <= 0.02, "{laplace} vs {mean}");
}

#[test]
fn predictive_matches_quadrature() {
    let mut rng = rng(11);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let prior = ParameterBelief::single(0, random_component(&mut rng, 2, (0.0, 1.0), (0.25, 1.0), 0.0));
        let q = predictive_distribution(&prior, &[1.0]).unwrap();
        let (m, v) = two_label_marginal(&prior.components()[0]);
        let grid = Grid::new(m - 12.0 * v.sqrt(), m + 12.0 * v.sqrt(), 100_001);
        let q0 = grid.integrate(|t| normal_pdf(t, m, v) * sigmoid(t));
        worst = worst.max((q[0] - q0).abs()).max((q[1] - (1.0 - q0)).abs());
    }
    println!("worst |q - quadrature| = {worst:.2e}");
    assert!(worst <= 1e-3, "{worst}");
}

#[test]
fn naive_two_mixand_posterior_matches_quadrature() {
    let mut rng = rng(12);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let comps = (0..2)
            .map(|_| {
                let lw = rng.random_range(0.1f64..1.0).ln();
                random_component(&mut rng, 2, (0.0, 1.0), (0.25, 1.0), lw)
            })
            .collect();
        let prior = ParameterBelief::new(0, comps).unwrap();
        let o = rng.random_range(0..2);
        let post = naive_update(&prior, o, &[1.0]).unwrap().belief;
        let grid = grid_for(&prior, 20_001);
        let unnorm = |t: f64| mixture_marginal_pdf(&prior, t) * two_label_lik(o, 1.0, t);
        let z = grid.integrate(unnorm);
        worst = worst.max(relative_sup_error(&grid, |t| mixture_marginal_pdf(&post, t), |t| unnorm(t) / z));
    }
    println!("worst relative sup-norm error {:.2}%", worst * 100.0);
    assert!(worst <= 0.02, "{worst}");
}

#[test]
fn laplace_error_grows_with_logit_variance() {
    // diagnostic: the evidence error is small for tight priors and grows
    // with the spread of the logit difference
    let mut last = 0.0;
    for v in [0.01, 0.1, 0.5, 1.0, 2.0, 4.0] {
        let prior = GaussianComponent::new(DVector::zeros(2), DMatrix::identity(2, 2) * (v / 2.0), 0.0).unwrap();
        let r = laplace_update(&prior, 0, &[1.0]).unwrap();
        let grid = Grid::new(-12.0 * v.sqrt(), 12.0 * v.sqrt(), 100_001);
        let z = grid.integrate(|t| normal_pdf(t, 0.0, v) * sigmoid(t));
        let err = (r.log_evidence - z.ln()).abs();
        println!("logit variance {v}: |log evidence error| = {err:.2e}");
        assert!(err >= last);
        last = err;
    }
}
