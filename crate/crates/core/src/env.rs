//! Episode engine: the agent picks an option each step, observes an internal
//! label from the true softmax, and every `Δ` steps a simulated human reports
//! a (possibly faulty) label about the option picked at that step, which
//! reaches the agent `δ` steps later.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::efe::{EfeScore, EvolutionaryPrior};
use crate::error::{Error, Result};
use crate::gaussmix::{BeliefSnapshot, GaussianComponent, ParameterBelief};
use crate::inference::{naive_update, psda_update, AssociationPosterior, FusionConfig, Source, UpdateAudit};
use crate::model::{sample_categorical, softmax_probs, stream_rng, ContextBundle, EnvironmentTruth};
use crate::par::Execution;
use crate::policies::{PolicyKind, PolicyParams, PolicyState};

pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

const INTERNAL_STREAM: u64 = 1;
const HUMAN_STREAM: u64 = 2;
const POLICY_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    NoHuman,
    Naive,
    Psda,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [Self::NoHuman, Self::Naive, Self::Psda];

    pub fn name(self) -> &'static str {
        match self {
            Self::NoHuman => "no_human",
            Self::Naive => "naive",
            Self::Psda => "psda",
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion mode {s:?}")))
    }
}

/// Downlink every `downlink_interval` steps, uplink `uplink_delay` steps later.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommSchedule {
    pub downlink_interval: usize,
    pub uplink_delay: usize,
}

impl Default for CommSchedule {
    fn default() -> Self {
        Self { downlink_interval: 4, uplink_delay: 2 }
    }
}

impl CommSchedule {
    pub fn new(downlink_interval: usize, uplink_delay: usize) -> Result<Self> {
        if downlink_interval < 1 {
            return Err(Error::Config("downlink interval must be >= 1".into()));
        }
        if uplink_delay >= downlink_interval {
            return Err(Error::Config(format!(
                "uplink delay {uplink_delay} must be shorter than the downlink interval {downlink_interval}"
            )));
        }
        Ok(Self { downlink_interval, uplink_delay })
    }

    pub fn is_downlink(&self, step: usize) -> bool {
        step % self.downlink_interval == 0
    }
}

/// A label about one option. The fault flag stays with the simulator; the
/// agent only ever receives an [`ObservationReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticObservation {
    report: ObservationReport,
    correct: bool,
}

impl SemanticObservation {
    pub fn report(&self) -> &ObservationReport {
        &self.report
    }

    /// Simulator-side ground truth: whether the label came from the true
    /// softmax rather than the fault model.
    pub fn is_correct(&self) -> bool {
        self.correct
    }
}

/// Agent-facing view of an observation (zero-based option and label).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservationReport {
    pub option: usize,
    pub label: usize,
    pub source: Source,
    pub emitted_step: usize,
    pub arrival_step: usize,
}

/// Simulated human report on option `k` emitted at `emitted_step`.
pub fn human_observe<R: Rng + ?Sized>(
    env: &EnvironmentTruth,
    k: usize,
    fp_rate: f64,
    emitted_step: usize,
    schedule: &CommSchedule,
    rng: &mut R,
) -> Result<SemanticObservation> {
    if !(0.0..=1.0).contains(&fp_rate) {
        return Err(Error::Config(format!("fp_rate {fp_rate} outside [0, 1]")));
    }
    let theta = env.theta_true.get(k).ok_or(Error::OptionOutOfRange { option: k, options: env.options() })?;
    let faulty = rng.random::<f64>() < fp_rate;
    let probs = if faulty {
        vec![1.0 / env.labels() as f64; env.labels()]
    } else {
        softmax_probs(theta, &env.contexts.effective(k)?)?
    };
    let label = sample_categorical(&probs, rng);
    Ok(SemanticObservation {
        report: ObservationReport {
            option: k,
            label,
            source: Source::External,
            emitted_step,
            arrival_step: emitted_step + schedule.uplink_delay,
        },
        correct: !faulty,
    })
}

/// Single-mixand prior `N(prior_mean * 1, prior_var * I)` for every option.
pub fn init_belief(options: usize, features: usize, labels: usize, prior_mean: f64, prior_var: f64) -> Result<Vec<ParameterBelief>> {
    if !(prior_var > 0.0) || !prior_var.is_finite() || !prior_mean.is_finite() {
        return Err(Error::Config(format!("invalid prior N({prior_mean}, {prior_var})")));
    }
    let d = features * labels;
    (0..options)
        .map(|k| Ok(ParameterBelief::single(k, GaussianComponent::isotropic(nalgebra::DVector::from_element(d, prior_mean), prior_var)?)))
        .collect()
}

/// Mean over options of the distance between mixture mean and true weights.
pub fn belief_error(beliefs: &[ParameterBelief], env: &EnvironmentTruth) -> f64 {
    let total: f64 = beliefs
        .iter()
        .zip(&env.theta_true)
        .map(|(b, t)| (b.mixture_mean() - t.flatten()).norm())
        .sum();
    total / beliefs.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub policy: PolicyKind,
    pub fusion: FusionMode,
    pub params: PolicyParams,
    /// `fp_rate` here is the rate the agent assumes, used by PSDA.
    pub fusion_cfg: FusionConfig,
    pub prior_mean: f64,
    pub prior_var: f64,
}

/// Belief state plus policy: everything that acts on reports.
#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    beliefs: Vec<ParameterBelief>,
    contexts: Vec<Vec<f64>>,
    policy: PolicyState,
    oracle_psi: Option<Vec<f64>>,
    last_scores: Option<Vec<EfeScore>>,
    audit: Vec<UpdateAudit>,
}

impl Agent {
    pub fn new(config: AgentConfig, contexts: &ContextBundle, oracle_psi: Option<Vec<f64>>, seed: u64) -> Result<Self> {
        let beliefs = init_belief(contexts.options(), contexts.dim(), config.fusion_cfg.labels, config.prior_mean, config.prior_var)?;
        let policy = PolicyState::new(config.policy, config.params.clone(), contexts.options(), stream_rng(seed, POLICY_STREAM))?;
        Ok(Self {
            config,
            beliefs,
            contexts: contexts.all_effective(),
            policy,
            oracle_psi,
            last_scores: None,
            audit: Vec::new(),
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn beliefs(&self) -> &[ParameterBelief] {
        &self.beliefs
    }

    pub fn contexts(&self) -> &[Vec<f64>] {
        &self.contexts
    }

    pub fn policy(&self) -> &PolicyState {
        &self.policy
    }

    pub fn last_scores(&self) -> Option<&[EfeScore]> {
        self.last_scores.as_deref()
    }

    pub fn audit(&self) -> &[UpdateAudit] {
        &self.audit
    }

    pub fn select(&mut self) -> Result<usize> {
        let sel = self.policy.select(&self.beliefs, &self.contexts, self.oracle_psi.as_deref())?;
        if sel.scores.is_some() {
            self.last_scores = sel.scores;
        }
        Ok(sel.option)
    }

    /// Trusted label for the option just pulled; also books the reward.
    pub fn observe_internal(&mut self, step: usize, option: usize, label: usize) -> Result<UpdateAudit> {
        let belief = self.belief(option)?;
        let out = naive_update(belief, label, &self.contexts[option])?;
        let m = out.belief.len();
        self.beliefs[option] = out.belief;
        let reward = if label == self.config.params.preferred { 1.0 } else { 0.0 };
        self.policy.record(option, reward)?;
        Ok(self.log(step, option, Source::Internal, label, AssociationPosterior::TRUSTED, out.lambda, m, m))
    }

    /// Fuses an external report with the configured method.
    pub fn observe_external(&mut self, step: usize, report: &ObservationReport) -> Result<UpdateAudit> {
        let (option, label) = (report.option, report.label);
        let belief = self.belief(option)?;
        let x = &self.contexts[option];
        match self.config.fusion {
            FusionMode::NoHuman => Err(Error::Config("agent does not accept external observations".into())),
            FusionMode::Naive => {
                let out = naive_update(belief, label, x)?;
                let m = out.belief.len();
                self.beliefs[option] = out.belief;
                Ok(self.log(step, option, Source::External, label, AssociationPosterior::TRUSTED, out.lambda, m, m))
            }
            FusionMode::Psda => {
                let out = psda_update(belief, label, x, &self.config.fusion_cfg)?;
                self.beliefs[option] = out.belief;
                Ok(self.log(step, option, Source::External, label, out.association, out.lambda, out.components_before, out.components_after))
            }
        }
    }

    fn belief(&self, option: usize) -> Result<&ParameterBelief> {
        self.beliefs.get(option).ok_or(Error::OptionOutOfRange { option, options: self.beliefs.len() })
    }

    #[allow(clippy::too_many_arguments)]
    fn log(
        &mut self,
        step: usize,
        option: usize,
        source: Source,
        label: usize,
        a: AssociationPosterior,
        lambda: f64,
        components_before: usize,
        components_after: usize,
    ) -> UpdateAudit {
        let rec = UpdateAudit {
            step,
            option: option + 1,
            source,
            label: label + 1,
            gamma0: a.gamma0,
            gamma1: a.gamma1,
            lambda,
            components_before,
            components_after,
        };
        self.audit.push(rec.clone());
        rec
    }
}

/// Everything that defines one simulated episode besides the environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub policy: PolicyKind,
    pub fusion: FusionMode,
    /// Fault rate of the simulated human.
    pub fp_rate: f64,
    /// Fault rate assumed by PSDA; defaults to `fp_rate`.
    pub assumed_fp_rate: Option<f64>,
    pub schedule: CommSchedule,
    pub horizon: usize,
    pub epsilon: f64,
    pub evolutionary_prior: EvolutionaryPrior,
    pub reduction_threshold: usize,
    pub prior_mean: f64,
    pub prior_var: f64,
    pub execution: Execution,
}

impl EpisodeConfig {
    /// Defaults: `Δ = 4`, `δ = 2`, `ε = 0.25`, preference 1 on `preferred`
    /// and 0.01 elsewhere, reduction to 10 mixands, prior `N(0.5, I)`.
    pub fn new(policy: PolicyKind, fusion: FusionMode, fp_rate: f64, horizon: usize, labels: usize, preferred: usize) -> Result<Self> {
        Ok(Self {
            policy,
            fusion,
            fp_rate,
            assumed_fp_rate: None,
            schedule: CommSchedule::default(),
            horizon,
            epsilon: crate::policies::DEFAULT_EPSILON,
            evolutionary_prior: EvolutionaryPrior::preferring(preferred, labels, 1.0, 0.01)?,
            reduction_threshold: crate::inference::DEFAULT_REDUCTION_THRESHOLD,
            prior_mean: 0.5,
            prior_var: 1.0,
            execution: Execution::default(),
        })
    }

    pub fn agent_config(&self, env: &EnvironmentTruth) -> Result<AgentConfig> {
        if self.evolutionary_prior.labels() != env.labels() {
            return Err(Error::DimensionMismatch { expected: env.labels(), got: self.evolutionary_prior.labels() });
        }
        let mut params = PolicyParams::new(self.epsilon, env.preferred, self.evolutionary_prior.clone())?;
        params.execution = self.execution;
        Ok(AgentConfig {
            policy: self.policy,
            fusion: self.fusion,
            params,
            fusion_cfg: FusionConfig::new(self.assumed_fp_rate.unwrap_or(self.fp_rate), env.labels(), self.reduction_threshold)?,
            prior_mean: self.prior_mean,
            prior_var: self.prior_var,
        })
    }
}

/// An external observation as it was fused (one-based option and label).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedExternal {
    pub option: usize,
    pub label: usize,
    pub emitted_step: usize,
    pub arrival_step: usize,
    pub correct: bool,
    pub gamma0: f64,
    pub gamma1: f64,
}

/// One step of an episode (one-based option and label).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub option: usize,
    pub internal_label: usize,
    pub reward: u8,
    pub external: Vec<FusedExternal>,
    pub instant_regret: f64,
    pub cumulative_regret: f64,
    pub belief_error: f64,
}

#[derive(Debug, Clone)]
pub struct EpisodeTrajectory {
    pub steps: Vec<StepRecord>,
    pub final_beliefs: Vec<ParameterBelief>,
    pub audit: Vec<UpdateAudit>,
}

#[derive(Serialize)]
struct TrajectoryLine<'a> {
    schema_version: u32,
    #[serde(flatten)]
    record: &'a StepRecord,
}

impl EpisodeTrajectory {
    pub fn options(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.option - 1).collect()
    }

    pub fn regret_curve(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.cumulative_regret).collect()
    }

    pub fn belief_error_curve(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.belief_error).collect()
    }

    pub fn final_snapshots(&self) -> Vec<BeliefSnapshot> {
        self.final_beliefs.iter().map(ParameterBelief::snapshot).collect()
    }

    /// One JSON object per step, each tagged with the schema version.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for record in &self.steps {
            serde_json::to_writer(&mut out, &TrajectoryLine { schema_version: TRAJECTORY_SCHEMA_VERSION, record })?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Cumulative regret `t psi* - sum_k N_t(k) psi_k` after each pull, summed
/// as non-negative gaps so the series never decreases.
pub fn cumulative_regret(options: &[usize], env: &EnvironmentTruth) -> Result<Vec<f64>> {
    let mut total = 0.0;
    options
        .iter()
        .map(|k| {
            let psi = env.psi.get(*k).ok_or(Error::OptionOutOfRange { option: *k, options: env.options() })?;
            total += env.psi_star - psi;
            Ok(total)
        })
        .collect()
}

/// Runs one episode. All randomness derives from `seed`: internal labels,
/// the simulated human and the policy each get their own stream, so cells
/// that share a seed see the same internal observation sequence.
pub fn run_episode(env: &EnvironmentTruth, cfg: &EpisodeConfig, seed: u64) -> Result<EpisodeTrajectory> {
    if cfg.horizon < 1 {
        return Err(Error::Config("horizon must be >= 1".into()));
    }
    let mut agent = Agent::new(cfg.agent_config(env)?, &env.contexts, Some(env.psi.clone()), seed)?;
    let mut internal_rng = stream_rng(seed, INTERNAL_STREAM);
    let mut human_rng = stream_rng(seed, HUMAN_STREAM);
    let mut in_flight: VecDeque<SemanticObservation> = VecDeque::new();
    let mut steps = Vec::with_capacity(cfg.horizon);
    let mut regret = 0.0;

    for t in 1..=cfg.horizon {
        let mut step = || -> Result<StepRecord> {
            let mut external = Vec::new();
            while in_flight.front().is_some_and(|o| o.report().arrival_step == t) {
                let obs = in_flight.pop_front().expect("checked");
                let a = agent.observe_external(t, obs.report())?;
                external.push(FusedExternal {
                    option: obs.report().option + 1,
                    label: obs.report().label + 1,
                    emitted_step: obs.report().emitted_step,
                    arrival_step: obs.report().arrival_step,
                    correct: obs.is_correct(),
                    gamma0: a.gamma0,
                    gamma1: a.gamma1,
                });
            }

            let k = agent.select()?;
            let probs = softmax_probs(&env.theta_true[k], &env.contexts.effective(k)?)?;
            let label = sample_categorical(&probs, &mut internal_rng);
            agent.observe_internal(t, k, label)?;

            let instant = env.psi_star - env.psi[k];
            regret += instant;

            if cfg.fusion != FusionMode::NoHuman && cfg.schedule.is_downlink(t) {
                let obs = human_observe(env, k, cfg.fp_rate, t, &cfg.schedule, &mut human_rng)?;
                if obs.report().arrival_step <= cfg.horizon {
                    in_flight.push_back(obs);
                }
            }

            Ok(StepRecord {
                step: t,
                option: k + 1,
                internal_label: label + 1,
                reward: u8::from(label == env.preferred),
                external,
                instant_regret: instant,
                cumulative_regret: regret,
                belief_error: belief_error(agent.beliefs(), env),
            })
        };
        steps.push(step().map_err(|e| e.into_step(t))?);
    }

    Ok(EpisodeTrajectory { steps, final_beliefs: agent.beliefs.clone(), audit: agent.audit.clone() })
}
