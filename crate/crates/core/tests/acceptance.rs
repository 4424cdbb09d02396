//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! with the measured numbers, then asserts.

mod common;

use std::sync::OnceLock;
use std::time::Instant;

use common::*;
use nalgebra::{DMatrix, DVector};
use oacmab::efe::{efe, EvolutionaryPrior};
use oacmab::env::{run_episode, EpisodeConfig, FusionMode};
use oacmab::experiments::{emit_csv, paired_test, run_mc, ExperimentConfig, Preset, ResultTable};
use oacmab::gaussmix::{GaussianComponent, ParameterBelief};
use oacmab::inference::{association_probabilities, naive_update, psda_stack, psda_update, FusionConfig};
use oacmab::laplace::laplace_update;
use oacmab::model::{generate_environment, softmax_probs, ParameterMatrix};
use oacmab::par::Execution;
use oacmab::policies::{aif_select, PolicyKind};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn report(id: &str, ok: bool, detail: &str) {
    println!("{id} {}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn fig4() -> &'static ResultTable {
    static T: OnceLock<ResultTable> = OnceLock::new();
    T.get_or_init(|| run_mc(&ExperimentConfig::preset(Preset::Fig4), Execution::Parallel).unwrap())
}

fn fig6() -> &'static ResultTable {
    static T: OnceLock<ResultTable> = OnceLock::new();
    T.get_or_init(|| run_mc(&ExperimentConfig::preset(Preset::Fig6), Execution::Parallel).unwrap())
}

#[test]
fn p1_laplace_evidence_accuracy() {
    let start = Instant::now();
    let mut rng = rng(101);

    // two labels, one feature: the evidence is a 1-D logistic-normal integral
    let mut worst_1d = 0.0f64;
    for _ in 0..20 {
        let prior = random_component(&mut rng, 2, (-1.0, 1.0), (0.25, 1.0), 0.0);
        let x = rng.random_range(0.5..1.5);
        let o = rng.random_range(0..2);
        let r = laplace_update(&prior, o, &[x]).unwrap();
        let (m, v) = two_label_marginal(&prior);
        let grid = Grid::new(m - 12.0 * v.sqrt(), m + 12.0 * v.sqrt(), 100_001);
        let quad = grid.integrate(|t| normal_pdf(t, m, v) * two_label_lik(o, x, t));
        worst_1d = worst_1d.max((r.log_evidence - quad.ln()).abs());
    }

    // three labels, N(0, 4I), binary context: importance sampling from the prior
    let mut worst_z = 0.0f64;
    let mut within = 0;
    for _ in 0..10 {
        let prior = GaussianComponent::new(DVector::zeros(3), DMatrix::identity(3, 3) * 4.0, 0.0).unwrap();
        let x = [rng.random_range(0..2) as f64];
        let o = rng.random_range(0..3);
        let r = laplace_update(&prior, o, &x).unwrap();
        let (est, se) = mc_mean(1_000_000, || {
            let theta: Vec<f64> = (0..3).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); 2.0 * z }).collect();
            softmax_probs(&ParameterMatrix::from_flat(1, 3, &theta).unwrap(), &x).unwrap()[o]
        });
        let diff = (r.evidence() - est).abs();
        // x = 0 makes every draw identical; only summation round-off remains
        let z = diff / se.max(1e-9 * est);
        worst_z = worst_z.max(z);
        within += usize::from(z <= 3.0);
    }

    let secs = start.elapsed().as_secs_f64();
    let ok = worst_1d <= 1e-3 && within == 10 && secs < 60.0;
    report(
        "P1",
        ok,
        &format!("max |log evidence error| 1-D = {worst_1d:.2e} (<= 1e-3); d=3 within 3 SE: {within}/10, worst {worst_z:.1} SE; {secs:.1}s"),
    );
    assert!(ok);
}

#[test]
fn p2_psda_degenerate_equivalence() {
    let start = Instant::now();
    let mut rng = rng(202);
    let (mut err0, mut err1) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let m = rng.random_range(1..5);
        let prior = random_belief(&mut rng, m, 12);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(0..2) as f64).collect();
        let o = rng.random_range(0..4);
        let naive = naive_update(&prior, o, &x).unwrap();

        let s0 = psda_stack(&prior, o, &x, &FusionConfig::new(0.0, 4, 10).unwrap()).unwrap();
        assert_eq!((s0.association.gamma0, s0.association.gamma1), (0.0, 1.0));
        err0 = err0
            .max((s0.stacked.mixture_mean() - naive.belief.mixture_mean()).amax())
            .max((s0.stacked.mixture_cov() - naive.belief.mixture_cov()).amax());
        for (a, b) in s0.stacked.components()[m..].iter().zip(naive.belief.components()) {
            err0 = err0.max((a.weight() - b.weight()).abs()).max((a.mean() - b.mean()).amax()).max((a.cov() - b.cov()).amax());
        }

        let s1 = psda_stack(&prior, o, &x, &FusionConfig::new(1.0, 4, 10).unwrap()).unwrap();
        assert_eq!((s1.association.gamma0, s1.association.gamma1), (1.0, 0.0));
        err1 = err1
            .max((s1.stacked.mixture_mean() - prior.mixture_mean()).amax())
            .max((s1.stacked.mixture_cov() - prior.mixture_cov()).amax());
        for (a, b) in s1.stacked.components()[..m].iter().zip(prior.components()) {
            err1 = err1.max((a.weight() - b.weight()).abs()).max((a.mean() - b.mean()).amax());
        }
    }

    // gamma0 = FP exactly when the evidence equals the fault likelihood 1/F
    let mut err_gamma = 0.0f64;
    for f in 2..13 {
        for fp in [0.0, 0.1, 0.2, 0.4, 0.6, 0.9, 1.0] {
            let cfg = FusionConfig::new(fp, f, 10).unwrap();
            let g = association_probabilities(1.0 / f as f64, &cfg).unwrap();
            err_gamma = err_gamma.max((g.gamma0 - fp).abs()).max((g.gamma1 - (1.0 - fp)).abs());
            let lambda = rng.random_range(0.01..1.0);
            let g = association_probabilities(lambda, &cfg).unwrap();
            let expect = (fp / f as f64) / (fp / f as f64 + (1.0 - fp) * lambda);
            err_gamma = err_gamma.max((g.gamma0 - expect).abs()).max((g.gamma0 + g.gamma1 - 1.0).abs());
        }
    }

    let secs = start.elapsed().as_secs_f64();
    let ok = err0 <= 1e-9 && err1 <= 1e-9 && err_gamma <= 1e-12;
    report(
        "P2",
        ok,
        &format!("fp=0 vs naive {err0:.1e}, fp=1 vs prior {err1:.1e} (<= 1e-9); gamma formula {err_gamma:.1e}; {secs:.1}s"),
    );
    assert!(ok);
}

#[test]
fn p3_psda_posterior_fidelity() {
    let start = Instant::now();
    let mut rng = rng(303);
    let fp = 0.4;
    let cfg = FusionConfig::new(fp, 2, 10).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let prior = ParameterBelief::single(0, random_component(&mut rng, 2, (0.0, 1.0), (0.25, 1.0), 0.0));
        let x = 1.0;
        let o = rng.random_range(0..2);
        let post = psda_update(&prior, o, &[x], &cfg).unwrap().belief;
        let grid = grid_for(&prior, 20_001);
        let unnorm = |t: f64| mixture_marginal_pdf(&prior, t) * ((1.0 - fp) * two_label_lik(o, x, t) + fp / 2.0);
        let z = grid.integrate(unnorm);
        worst = worst.max(relative_sup_error(&grid, |t| mixture_marginal_pdf(&post, t), |t| unnorm(t) / z));
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst <= 0.02 && secs < 60.0;
    report("P3", ok, &format!("worst relative sup-norm error {:.2}% (<= 2%); {secs:.1}s", worst * 100.0));
    assert!(ok);
}

/// Brute-force expected free energy from prior samples.
fn mc_efe<R: Rng>(b: &ParameterBelief, x: f64, ev: &EvolutionaryPrior, n: usize, rng: &mut R) -> f64 {
    let (mut q, mut plogp) = ([0.0; 2], [0.0; 2]);
    for _ in 0..n {
        let theta = b.sample(rng);
        let p = softmax_probs(&ParameterMatrix::from_flat(1, 2, theta.as_slice()).unwrap(), &[x]).unwrap();
        for o in 0..2 {
            q[o] += p[o];
            if p[o] > 0.0 {
                plogp[o] += p[o] * p[o].ln();
            }
        }
    }
    (0..2).map(|o| {
        let q = q[o] / n as f64;
        q * (q / ev.probs()[o]).ln() - plogp[o] / n as f64
    })
    .sum()
}

#[test]
fn p4_efe_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = rng(404);
    let ev = EvolutionaryPrior::preferring(0, 2, 1.0, 0.01).unwrap();
    let (mut worst, mut agree) = (0.0f64, 0);
    for _ in 0..10 {
        let mut beliefs = Vec::new();
        let mut contexts = Vec::new();
        let mut oracle = Vec::new();
        for k in 0..2 {
            let m = rng.random_range(1..3);
            let comps = (0..m)
                .map(|_| {
                    let lw = rng.random_range(0.1f64..1.0).ln();
                    random_component(&mut rng, 2, (0.0, 1.0), (0.1, 1.0), lw)
                })
                .collect();
            let b = ParameterBelief::new(k, comps).unwrap();
            let x = rng.random_range(0.5..1.5);
            let score = efe(&b, &[x], &ev).unwrap().total;
            let truth = mc_efe(&b, x, &ev, 1_000_000, &mut rng);
            worst = worst.max(((score - truth) / truth).abs());
            oracle.push(truth);
            beliefs.push(b);
            contexts.push(vec![x]);
        }
        let (pick, _) = aif_select(&beliefs, &contexts, &ev, Execution::Sequential).unwrap();
        let best = if oracle[0] <= oracle[1] { 0 } else { 1 };
        agree += usize::from(pick == best);
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst <= 0.05 && agree == 10 && secs < 300.0;
    report(
        "P4",
        ok,
        &format!("worst relative EFE error {:.2}% (<= 5%); argmin agreement {agree}/10; {secs:.1}s", worst * 100.0),
    );
    assert!(ok);
}

#[test]
fn p5_human_labels_lower_regret() {
    let start = Instant::now();
    let t = fig4();
    let mut ok = true;
    let mut parts = Vec::new();
    for policy in ["aif", "ts"] {
        let (a, b) = (format!("{policy}/no_human"), format!("{policy}/naive/fp0"));
        let (ca, cb) = (t.get(&a).unwrap(), t.get(&b).unwrap());
        let p = paired_test(&a, &ca.final_regrets, &b, &cb.final_regrets).unwrap();
        let pass = p.significant(0.05);
        ok &= pass;
        parts.push(format!("{policy}: without {:.3} vs with {:.3}, diff {:+.3}, p = {:.4}", mean(&ca.final_regrets), mean(&cb.final_regrets), p.mean_diff, p.p_value));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 600.0;
    report("P5", ok, &format!("{}; {secs:.1}s", parts.join("; ")));
    assert!(ok);
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn p6_psda_beats_naive_fusion() {
    let start = Instant::now();
    let t = fig6();
    let mut ok = true;
    let mut parts = Vec::new();
    for fp in ["0.4", "0.2", "0.6"] {
        for policy in ["aif", "ts"] {
            let (a, b) = (format!("{policy}/naive/fp{fp}"), format!("{policy}/psda/fp{fp}"));
            let (ca, cb) = (t.get(&a).unwrap(), t.get(&b).unwrap());
            let p = paired_test(&a, &ca.final_regrets, &b, &cb.final_regrets).unwrap();
            let pass = p.significant(0.05);
            let gating = fp == "0.4";
            if gating {
                ok &= pass;
            }
            parts.push(format!(
                "{policy} fp{fp}{}: naive {:.3} vs psda {:.3}, p = {:.4} {}",
                if gating { "" } else { " (info)" },
                mean(&ca.final_regrets),
                mean(&cb.final_regrets),
                p.p_value,
                if pass { "ok" } else { "not significant" }
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 900.0;
    report("P6", ok, &format!("{}; {secs:.1}s", parts.join("; ")));
    assert!(ok);
}

#[test]
fn p7_psda_recovers_parameters_better() {
    let t = fig6();
    let mut ok = true;
    let mut parts = Vec::new();
    for policy in ["aif", "ts"] {
        let naive = mean(&t.get(&format!("{policy}/naive/fp0.4")).unwrap().final_errors);
        let psda = mean(&t.get(&format!("{policy}/psda/fp0.4")).unwrap().final_errors);
        ok &= psda < naive;
        parts.push(format!("{policy}: naive {naive:.4} vs psda {psda:.4}"));
    }
    report("P7", ok, &format!("mean final belief error at fp 0.4, {}", parts.join("; ")));
    assert!(ok);
}

#[test]
fn p8_determinism_and_schedule() {
    let cfg = ExperimentConfig { horizon: 40, mc_runs: 8, ..ExperimentConfig::preset(Preset::Fig6) };
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, exec: Execution| {
        let path = dir.path().join(name);
        emit_csv(&run_mc(&cfg, exec).unwrap(), &path).unwrap();
        path
    };
    let (a, b, c) = (write("a", Execution::Parallel), write("b", Execution::Parallel), write("c", Execution::Sequential));
    let mut identical = true;
    for f in ["regret.csv", "belief_error.csv", "runs.csv"] {
        let bytes = std::fs::read(a.join(f)).unwrap();
        identical &= bytes == std::fs::read(b.join(f)).unwrap() && bytes == std::fs::read(c.join(f)).unwrap();
    }

    let env = generate_environment(5, 3, 4, 0, 7).unwrap();
    let mut ep = EpisodeConfig::new(PolicyKind::Ts, FusionMode::Psda, 0.4, 100, 4, 0).unwrap();
    ep.execution = Execution::Sequential;
    let traj = run_episode(&env, &ep, 7).unwrap();
    let got: Vec<(usize, usize)> =
        traj.steps.iter().flat_map(|s| s.external.iter().map(|e| (e.emitted_step, e.arrival_step))).collect();
    // one-based steps: emitted every 4th step, arriving 2 later, none past the horizon
    let want: Vec<(usize, usize)> = (1..=24).map(|j| (4 * j, 4 * j + 2)).collect();
    let schedule_ok = got == want;

    let ok = identical && schedule_ok;
    report(
        "P8",
        ok,
        &format!(
            "CSVs identical across repeated and sequential runs: {identical}; external (emit, arrival) = {:?}..{:?} ({} total)",
            got.first(),
            got.last(),
            got.len()
        ),
    );
    assert!(ok);
}

#[test]
#[ignore = "long-running asymptotic study"]
fn p9_asymptotic_bimodality() {
    let start = Instant::now();
    let cfg = ExperimentConfig { mc_runs: 200, fp_rates: vec![0.0], ..ExperimentConfig::preset(Preset::Asymptotic) };
    let t = run_mc(&cfg, Execution::Parallel).unwrap();
    let aif = &t.get("aif/naive/fp0").unwrap().final_regrets;
    let mut ts = t.get("ts/naive/fp0").unwrap().final_regrets.clone();
    ts.sort_by(f64::total_cmp);
    let quantile = |q: f64| ts[((ts.len() - 1) as f64 * q).round() as usize];
    let (median, p10) = (quantile(0.5), quantile(0.1));
    let n = aif.len() as f64;
    let above = aif.iter().filter(|r| **r > median).count() as f64 / n;
    let below = aif.iter().filter(|r| **r < p10).count() as f64 / n;
    let ok = above > 0.05 && below > 0.20;
    report(
        "P9",
        ok,
        &format!(
            "AIF runs above TS median {median:.2}: {:.1}% (> 5%); below TS 10th percentile {p10:.2}: {:.1}% (> 20%); {:.0}s",
            above * 100.0,
            below * 100.0,
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(ok);
}
