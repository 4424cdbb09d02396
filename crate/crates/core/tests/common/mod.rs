#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use oacmab::gaussmix::{GaussianComponent, ParameterBelief};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub fn normal_pdf(t: f64, mean: f64, var: f64) -> f64 {
    (-(t - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Evenly spaced grid with trapezoid weights.
pub struct Grid {
    pub t: Vec<f64>,
    pub w: Vec<f64>,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        let h = (hi - lo) / (n - 1) as f64;
        let t = (0..n).map(|i| lo + h * i as f64).collect();
        let w = (0..n).map(|i| if i == 0 || i == n - 1 { h / 2.0 } else { h }).collect();
        Self { t, w }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.t.iter().zip(&self.w).map(|(t, w)| w * f(*t)).sum()
    }
}

/// For `C = 1, F = 2` the likelihood depends on `theta` only through
/// `t = theta_0 - theta_1`; this is the marginal of one mixand along `t`.
pub fn two_label_marginal(c: &GaussianComponent) -> (f64, f64) {
    let m = c.mean();
    let s = c.cov();
    (m[0] - m[1], s[(0, 0)] + s[(1, 1)] - 2.0 * s[(0, 1)])
}

pub fn mixture_marginal_pdf(b: &ParameterBelief, t: f64) -> f64 {
    b.components()
        .iter()
        .zip(b.weights())
        .map(|(c, w)| {
            let (m, v) = two_label_marginal(c);
            w * normal_pdf(t, m, v)
        })
        .sum()
}

/// Probability of label `o` (0 or 1) given `t` and scalar context `x`.
pub fn two_label_lik(o: usize, x: f64, t: f64) -> f64 {
    if o == 0 {
        sigmoid(x * t)
    } else {
        sigmoid(-x * t)
    }
}

/// Grid wide enough for every mixand of `b` along `t`.
pub fn grid_for(b: &ParameterBelief, n: usize) -> Grid {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in b.components() {
        let (m, v) = two_label_marginal(c);
        lo = lo.min(m - 12.0 * v.sqrt());
        hi = hi.max(m + 12.0 * v.sqrt());
    }
    Grid::new(lo, hi, n)
}

/// `max |p - q| / max q` over the grid.
pub fn relative_sup_error(grid: &Grid, p: impl Fn(f64) -> f64, q: impl Fn(f64) -> f64) -> f64 {
    let (mut err, mut peak) = (0.0f64, 0.0f64);
    for &t in &grid.t {
        let qt = q(t);
        err = err.max((p(t) - qt).abs());
        peak = peak.max(qt);
    }
    err / peak
}

/// Random component in dimension `d`: mean uniform in `[lo, hi)`, covariance
/// `A A' + s I` with `s` uniform in `[s_lo, s_hi)`.
pub fn random_component<R: Rng>(rng: &mut R, d: usize, (lo, hi): (f64, f64), (s_lo, s_hi): (f64, f64), log_w: f64) -> GaussianComponent {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.3..0.3));
    let cov = &a * a.transpose() + DMatrix::identity(d, d) * rng.random_range(s_lo..s_hi);
    let mean = DVector::from_fn(d, |_, _| rng.random_range(lo..hi));
    GaussianComponent::new(mean, cov, log_w).unwrap()
}

pub fn random_belief<R: Rng>(rng: &mut R, m: usize, d: usize) -> ParameterBelief {
    let comps = (0..m)
        .map(|_| {
            let lw = rng.random_range(0.1f64..1.0).ln();
            random_component(rng, d, (0.0, 1.0), (0.1, 1.0), lw)
        })
        .collect();
    ParameterBelief::new(0, comps).unwrap()
}

/// Plain Monte-Carlo estimate and standard error of `E[f]` from `n` draws.
pub fn mc_mean(n: usize, mut draw: impl FnMut() -> f64) -> (f64, f64) {
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let v = draw();
        s += v;
        s2 += v * v;
    }
    let mean = s / n as f64;
    let var = (s2 / n as f64 - mean * mean).max(0.0) * n as f64 / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
