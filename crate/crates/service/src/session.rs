use oacmab::efe::EfeScore;
use oacmab::env::{Agent, CommSchedule, EpisodeConfig, FusionMode, ObservationReport};
use oacmab::gaussmix::BeliefSnapshot;
use oacmab::inference::{Source, UpdateAudit};
use oacmab::model::{generate_environment, sample_outcome, stream_rng, EnvironmentTruth};
use oacmab::par::Execution;
use oacmab::policies::{aif_select, plug_in_success, PolicyKind};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

/// Largest number of steps a single advance request may ask for.
pub const MAX_ADVANCE: usize = 10_000;

/// Session parameters; every field is optional in the creation request.
/// `f_p` is one-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    pub k: usize,
    pub c: usize,
    pub f: usize,
    pub f_p: usize,
    pub policy: PolicyKind,
    pub fusion: FusionMode,
    /// Fault rate the agent assumes for human reports.
    pub fp_rate: f64,
    pub downlink_interval: usize,
    pub uplink_delay: usize,
    pub epsilon: f64,
    pub pev_preferred: f64,
    pub pev_other: f64,
    pub reduction_threshold: usize,
    pub seed: u64,
    pub prior_mean: f64,
    pub prior_var: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            k: 5,
            c: 3,
            f: 4,
            f_p: 1,
            policy: PolicyKind::Aif,
            fusion: FusionMode::Psda,
            fp_rate: 0.2,
            downlink_interval: 4,
            uplink_delay: 2,
            epsilon: oacmab::policies::DEFAULT_EPSILON,
            pev_preferred: 1.0,
            pev_other: 0.01,
            reduction_threshold: oacmab::inference::DEFAULT_REDUCTION_THRESHOLD,
            seed: 0,
            prior_mean: 0.5,
            prior_var: 1.0,
        }
    }
}

impl SessionConfig {
    fn episode_config(&self) -> oacmab::Result<EpisodeConfig> {
        if self.f_p == 0 || self.f_p > self.f {
            return Err(oacmab::Error::Config(format!("f_p {} outside 1..={}", self.f_p, self.f)));
        }
        Ok(EpisodeConfig {
            policy: self.policy,
            fusion: self.fusion,
            fp_rate: self.fp_rate,
            assumed_fp_rate: None,
            schedule: CommSchedule::new(self.downlink_interval, self.uplink_delay)?,
            horizon: 1,
            epsilon: self.epsilon,
            evolutionary_prior: oacmab::efe::EvolutionaryPrior::preferring(self.f_p - 1, self.f, self.pev_preferred, self.pev_other)?,
            reduction_threshold: self.reduction_threshold,
            prior_mean: self.prior_mean,
            prior_var: self.prior_var,
            execution: Execution::Sequential,
        })
    }
}

/// A downlinked option awaiting a human label (one-based option).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pending {
    pub option: usize,
    pub emitted_step: usize,
}

/// Every state-changing request, in order; replaying them on a fresh
/// session with the same config reproduces the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Operation {
    Advance { steps: usize },
    Observe { option: usize, label: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionSummary {
    pub option: usize,
    /// Success probability at the mixture mean.
    pub success_prob: f64,
    pub components: usize,
    pub pulls: u64,
}

/// EFE score with its risk / ambiguity split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfeView {
    pub option: usize,
    pub total: f64,
    pub risk: f64,
    pub ambiguity: f64,
    pub per_outcome: Vec<oacmab::efe::OutcomeTerms>,
}

impl From<EfeScore> for EfeView {
    fn from(s: EfeScore) -> Self {
        Self { option: s.option, total: s.total, risk: s.risk(), ambiguity: s.ambiguity(), per_outcome: s.per_outcome }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDocument {
    pub id: String,
    pub step: usize,
    pub config: SessionConfig,
    pub options: Vec<OptionSummary>,
    pub efe: Vec<EfeView>,
    pub regret: Vec<f64>,
    pub selections: Vec<usize>,
    pub pending: Vec<Pending>,
    pub observations: Vec<UpdateAudit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub id: String,
    pub config: SessionConfig,
    pub operations: Vec<Operation>,
    pub beliefs: Vec<BeliefSnapshot>,
}

/// One live episode. The environment is simulated (it produces the
/// internal labels and the regret); external labels come from requests.
#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    config: SessionConfig,
    env: EnvironmentTruth,
    agent: Agent,
    schedule: CommSchedule,
    internal_rng: ChaCha8Rng,
    step: usize,
    regret: Vec<f64>,
    selections: Vec<usize>,
    pending: Vec<Pending>,
    operations: Vec<Operation>,
}

impl Session {
    pub fn new(id: String, config: SessionConfig) -> Result<Self, ApiError> {
        let ep = config.episode_config()?;
        let env = generate_environment(config.k, config.c, config.f, config.f_p - 1, config.seed)?;
        let agent = Agent::new(ep.agent_config(&env)?, &env.contexts, Some(env.psi.clone()), config.seed)?;
        Ok(Self {
            id,
            schedule: ep.schedule,
            internal_rng: stream_rng(config.seed, 1),
            config,
            env,
            agent,
            step: 0,
            regret: Vec::new(),
            selections: Vec::new(),
            pending: Vec::new(),
            operations: Vec::new(),
        })
    }

    /// Rebuilds a session by re-applying its logged operations.
    pub fn replay(id: String, config: SessionConfig, operations: &[Operation]) -> Result<Self, ApiError> {
        let mut s = Self::new(id, config)?;
        for op in operations {
            match *op {
                Operation::Advance { steps } => s.advance(steps)?,
                Operation::Observe { option, label } => {
                    s.submit(option, label)?;
                }
            }
        }
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn pending(&self) -> &[Pending] {
        &self.pending
    }

    pub fn operations(&self) -> &[Operation] {
        &self.operations
    }

    /// Runs `steps` steps of the loop. Each downlink step queues the option
    /// just selected for a human label instead of simulating one.
    pub fn advance(&mut self, steps: usize) -> Result<(), ApiError> {
        if steps == 0 || steps > MAX_ADVANCE {
            return Err(ApiError::BadRequest(format!("steps must be in 1..={MAX_ADVANCE}")));
        }
        for _ in 0..steps {
            let t = self.step + 1;
            let k = self.agent.select()?;
            let label = sample_outcome(&self.env.theta_true[k], &self.env.contexts.effective(k)?, &mut self.internal_rng)?;
            self.agent.observe_internal(t, k, label)?;
            let previous = self.regret.last().copied().unwrap_or(0.0);
            self.regret.push(previous + self.env.psi_star - self.env.psi[k]);
            self.selections.push(k + 1);
            if self.config.fusion != FusionMode::NoHuman && self.schedule.is_downlink(t) {
                self.pending.push(Pending { option: k + 1, emitted_step: t });
            }
            self.step = t;
        }
        self.operations.push(Operation::Advance { steps });
        Ok(())
    }

    /// Fuses a human label (one-based option and label) for a pending
    /// downlink, oldest first.
    pub fn submit(&mut self, option: usize, label: usize) -> Result<UpdateAudit, ApiError> {
        if option == 0 || option > self.config.k {
            return Err(ApiError::BadRequest(format!("option {option} outside 1..={}", self.config.k)));
        }
        if label == 0 || label > self.config.f {
            return Err(ApiError::BadRequest(format!("label {label} outside 1..={}", self.config.f)));
        }
        let idx = self
            .pending
            .iter()
            .position(|p| p.option == option)
            .ok_or_else(|| ApiError::Conflict(format!("option {option} has no pending downlink")))?;
        let emitted_step = self.pending[idx].emitted_step;
        let report = ObservationReport {
            option: option - 1,
            label: label - 1,
            source: Source::External,
            emitted_step,
            arrival_step: self.step.max(emitted_step),
        };
        let audit = self.agent.observe_external(self.step, &report)?;
        self.pending.remove(idx);
        self.operations.push(Operation::Observe { option, label });
        Ok(audit)
    }

    pub fn efe(&self) -> Result<Vec<EfeView>, ApiError> {
        let ev = &self.agent.policy().params.evolutionary_prior;
        let (_, scores) = aif_select(self.agent.beliefs(), self.agent.contexts(), ev, Execution::Sequential)?;
        Ok(scores.into_iter().map(EfeView::from).collect())
    }

    pub fn state(&self) -> Result<StateDocument, ApiError> {
        let probs = plug_in_success(self.agent.beliefs(), self.agent.contexts(), self.agent.policy().params.preferred)?;
        let options = self
            .agent
            .beliefs()
            .iter()
            .zip(probs)
            .zip(self.agent.policy().pulls())
            .map(|((b, p), n)| OptionSummary { option: b.option() + 1, success_prob: p, components: b.len(), pulls: *n })
            .collect();
        Ok(StateDocument {
            id: self.id.clone(),
            step: self.step,
            config: self.config.clone(),
            options,
            efe: self.efe()?,
            regret: self.regret.clone(),
            selections: self.selections.clone(),
            pending: self.pending.clone(),
            observations: self.agent.audit().iter().filter(|a| a.source == Source::External).cloned().collect(),
        })
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            id: self.id.clone(),
            config: self.config.clone(),
            operations: self.operations.clone(),
            beliefs: self.agent.beliefs().iter().map(|b| b.snapshot()).collect(),
        }
    }

    pub fn from_snapshot(s: &SessionSnapshot) -> Result<Self, ApiError> {
        Self::replay(s.id.clone(), s.config.clone(), &s.operations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use oacmab::inference::naive_update;

    fn session(fp: f64) -> Session {
        Session::new("t".into(), SessionConfig { fp_rate: fp, ..SessionConfig::default() }).unwrap()
    }

    #[test]
    fn fresh_session() {
        let s = session(0.4);
        let st = s.state().unwrap();
        assert_eq!(st.step, 0);
        assert!(st.regret.is_empty() && st.pending.is_empty() && st.observations.is_empty());
        assert_eq!(st.options.len(), 5);
        assert_eq!(st.efe.len(), 5);
    }

    #[test]
    fn one_pending_per_downlink() {
        let mut s = session(0.4);
        s.advance(4).unwrap();
        assert_eq!(s.pending(), &[Pending { option: s.selections[3], emitted_step: 4 }]);
        s.advance(3).unwrap();
        assert_eq!(s.pending().len(), 1);
        s.advance(1).unwrap();
        assert_eq!(s.pending().len(), 2);
        assert_eq!(s.pending()[1].emitted_step, 8);
    }

    #[test]
    fn wrong_label_moves_belief_less_than_naive() {
        let mut s = session(0.4);
        s.advance(4).unwrap();
        let p = s.pending()[0];
        let k = p.option - 1;
        let before = s.agent().beliefs()[k].clone();
        let label = (0..4).find(|h| *h != s.env.preferred).unwrap() + 1;
        let audit = s.submit(p.option, label).unwrap();
        assert!(audit.gamma1 < 1.0);
        let naive = naive_update(&before, label - 1, &s.agent().contexts()[k]).unwrap();
        let moved = (s.agent().beliefs()[k].mixture_mean() - before.mixture_mean()).norm();
        let naive_moved = (naive.belief.mixture_mean() - before.mixture_mean()).norm();
        assert!(moved < naive_moved);
        assert!(s.pending().is_empty());
    }

    #[test]
    fn replay_reproduces_beliefs() {
        let mut s = session(0.4);
        s.advance(4).unwrap();
        s.submit(s.pending()[0].option, 2).unwrap();
        s.advance(9).unwrap();
        s.submit(s.pending()[1].option, 1).unwrap();
        let r = Session::from_snapshot(&s.snapshot()).unwrap();
        assert_eq!(r.step(), s.step());
        for (a, b) in r.agent().beliefs().iter().zip(s.agent().beliefs()) {
            assert!((a.mixture_mean() - b.mixture_mean()).amax() < 1e-9);
            assert_eq!(a.len(), b.len());
        }
        assert_eq!(r.snapshot(), s.snapshot());
    }

    #[test]
    fn submission_errors() {
        let mut s = session(0.4);
        assert!(matches!(s.advance(0), Err(ApiError::BadRequest(_))));
        s.advance(4).unwrap();
        let pending = s.pending()[0].option;
        let other = (1..=5).find(|o| *o != pending).unwrap();
        assert!(matches!(s.submit(other, 1), Err(ApiError::Conflict(_))));
        assert!(matches!(s.submit(pending, 5), Err(ApiError::BadRequest(_))));
        assert!(matches!(s.submit(0, 1), Err(ApiError::BadRequest(_))));
        assert!(matches!(
            Session::new("x".into(), SessionConfig { f_p: 9, ..SessionConfig::default() }),
            Err(ApiError::BadRequest(_))
        ));
    }

    #[test]
    fn closed_loop_without_humans_has_no_pendings() {
        let mut s = Session::new("n".into(), SessionConfig { fusion: FusionMode::NoHuman, ..SessionConfig::default() }).unwrap();
        s.advance(12).unwrap();
        assert!(s.pending().is_empty());
    }
}
