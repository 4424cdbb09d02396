use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::efe::EvolutionaryPrior;
use crate::env::{CommSchedule, EpisodeConfig, FusionMode};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::policies::PolicyKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Fig4,
    Fig6,
    Hard,
    Asymptotic,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Self::Fig4, Self::Fig6, Self::Hard, Self::Asymptotic];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fig4 => "fig4",
            Self::Fig6 => "fig6",
            Self::Hard => "hard",
            Self::Asymptotic => "asymptotic",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?} (expected fig4, fig6, hard or asymptotic)")))
    }
}

/// Full description of a Monte-Carlo study. `f_p` is one-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub k: usize,
    pub c: usize,
    pub f: usize,
    pub f_p: usize,
    pub horizon: usize,
    pub mc_runs: usize,
    pub policies: Vec<PolicyKind>,
    pub fusion_modes: Vec<FusionMode>,
    pub fp_rates: Vec<f64>,
    pub downlink_interval: usize,
    pub uplink_delay: usize,
    pub epsilon: f64,
    pub pev_preferred: f64,
    pub pev_other: f64,
    pub reduction_threshold: usize,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    pub prior_mean: f64,
    pub prior_var: f64,
    /// Fault rate assumed by PSDA; when absent the cell's true rate is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumed_fp_rate: Option<f64>,
}

/// Same keys, all optional; merged over a preset.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub k: Option<usize>,
    pub c: Option<usize>,
    pub f: Option<usize>,
    pub f_p: Option<usize>,
    pub horizon: Option<usize>,
    pub mc_runs: Option<usize>,
    pub policies: Option<Vec<PolicyKind>>,
    pub fusion_modes: Option<Vec<FusionMode>>,
    pub fp_rates: Option<Vec<f64>>,
    pub downlink_interval: Option<usize>,
    pub uplink_delay: Option<usize>,
    pub epsilon: Option<f64>,
    pub pev_preferred: Option<f64>,
    pub pev_other: Option<f64>,
    pub reduction_threshold: Option<usize>,
    pub base_seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub prior_mean: Option<f64>,
    pub prior_var: Option<f64>,
    pub assumed_fp_rate: Option<f64>,
}

impl ConfigOverrides {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let base = Self {
            k: 5,
            c: 3,
            f: 4,
            f_p: 1,
            horizon: 100,
            mc_runs: 100,
            policies: vec![PolicyKind::Aif, PolicyKind::Ts, PolicyKind::Ucb, PolicyKind::Egreedy, PolicyKind::Oracle],
            fusion_modes: vec![FusionMode::NoHuman, FusionMode::Naive],
            fp_rates: vec![0.0],
            downlink_interval: 4,
            uplink_delay: 2,
            epsilon: crate::policies::DEFAULT_EPSILON,
            pev_preferred: 1.0,
            pev_other: 0.01,
            reduction_threshold: crate::inference::DEFAULT_REDUCTION_THRESHOLD,
            base_seed: 0,
            output_dir: PathBuf::from("results").join(preset.name()),
            prior_mean: 0.5,
            prior_var: 1.0,
            assumed_fp_rate: None,
        };
        match preset {
            Preset::Fig4 => base,
            Preset::Fig6 => Self {
                policies: vec![PolicyKind::Aif, PolicyKind::Ts],
                fusion_modes: FusionMode::ALL.to_vec(),
                fp_rates: vec![0.2, 0.4, 0.6],
                ..base
            },
            Preset::Hard => Self { k: 15, c: 3, f: 12, ..base },
            Preset::Asymptotic => Self {
                horizon: 1000,
                mc_runs: 1000,
                policies: vec![PolicyKind::Aif, PolicyKind::Ts],
                fusion_modes: vec![FusionMode::Naive],
                ..base
            },
        }
    }

    /// Applies every key present in `o`, then validates.
    pub fn with_overrides(mut self, o: ConfigOverrides) -> Result<Self> {
        macro_rules! take {
            ($($field:ident),*) => { $( if let Some(v) = o.$field { self.$field = v; } )* };
        }
        take!(
            k, c, f, f_p, horizon, mc_runs, policies, fusion_modes, fp_rates, downlink_interval, uplink_delay, epsilon,
            pev_preferred, pev_other, reduction_threshold, base_seed, output_dir, prior_mean, prior_var
        );
        if o.assumed_fp_rate.is_some() {
            self.assumed_fp_rate = o.assumed_fp_rate;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn load(path: &Path, preset: Preset) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::preset(preset).with_overrides(ConfigOverrides::from_toml(&text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k", self.k),
            ("c", self.c),
            ("f", self.f),
            ("horizon", self.horizon),
            ("mc_runs", self.mc_runs),
            ("reduction_threshold", self.reduction_threshold),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.k < 2 || self.f < 2 {
            return Err(Error::Config("need at least two options and two labels".into()));
        }
        if !(1..=self.f).contains(&self.f_p) {
            return Err(Error::Config(format!("f_p {} outside 1..={}", self.f_p, self.f)));
        }
        if self.policies.is_empty() || self.fusion_modes.is_empty() {
            return Err(Error::Config("policies and fusion_modes must be non-empty".into()));
        }
        let needs_rates = self.fusion_modes.iter().any(|m| *m != FusionMode::NoHuman);
        if needs_rates && self.fp_rates.is_empty() {
            return Err(Error::Config("fp_rates must be non-empty when humans are simulated".into()));
        }
        for r in self.fp_rates.iter().chain(&self.assumed_fp_rate) {
            if !(0.0..=1.0).contains(r) {
                return Err(Error::Config(format!("fault rate {r} outside [0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        CommSchedule::new(self.downlink_interval, self.uplink_delay)?;
        self.evolutionary_prior()?;
        if !(self.prior_var > 0.0) || !self.prior_mean.is_finite() {
            return Err(Error::Config("prior_var must be positive and prior_mean finite".into()));
        }
        Ok(())
    }

    pub fn evolutionary_prior(&self) -> Result<EvolutionaryPrior> {
        EvolutionaryPrior::preferring(self.f_p - 1, self.f, self.pev_preferred, self.pev_other)
    }

    /// Every (policy, fusion mode, fault rate) combination. Modes without a
    /// simulated human appear once, without a rate.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &policy in &self.policies {
            for &fusion in &self.fusion_modes {
                if fusion == FusionMode::NoHuman {
                    out.push(Cell { policy, fusion, fp_rate: None });
                } else {
                    out.extend(self.fp_rates.iter().map(|&fp| Cell { policy, fusion, fp_rate: Some(fp) }));
                }
            }
        }
        out
    }

    pub fn episode_config(&self, cell: &Cell, execution: Execution) -> Result<EpisodeConfig> {
        Ok(EpisodeConfig {
            policy: cell.policy,
            fusion: cell.fusion,
            fp_rate: cell.fp_rate.unwrap_or(0.0),
            assumed_fp_rate: self.assumed_fp_rate,
            schedule: CommSchedule::new(self.downlink_interval, self.uplink_delay)?,
            horizon: self.horizon,
            epsilon: self.epsilon,
            evolutionary_prior: self.evolutionary_prior()?,
            reduction_threshold: self.reduction_threshold,
            prior_mean: self.prior_mean,
            prior_var: self.prior_var,
            execution,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub policy: PolicyKind,
    pub fusion: FusionMode,
    pub fp_rate: Option<f64>,
}

impl Cell {
    /// `policy/mode` or `policy/mode/fp<rate>`, e.g. `aif/psda/fp0.4`.
    pub fn id(&self) -> String {
        match self.fp_rate {
            None => format!("{}/{}", self.policy, self.fusion),
            Some(fp) => format!("{}/{}/fp{}", self.policy, self.fusion, fp),
        }
    }

    pub fn parse_id(id: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed cell id {id:?}"));
        let mut parts = id.split('/');
        let policy = parts.next().ok_or_else(bad)?.parse()?;
        let fusion = parts.next().ok_or_else(bad)?.parse()?;
        let fp_rate = match parts.next() {
            None => None,
            Some(p) => Some(p.strip_prefix("fp").and_then(|v| v.parse().ok()).ok_or_else(bad)?),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(Self { policy, fusion, fp_rate })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let f4 = ExperimentConfig::preset(Preset::Fig4);
        assert_eq!((f4.k, f4.c, f4.f, f4.horizon, f4.mc_runs), (5, 3, 4, 100, 100));
        assert_eq!(f4.fp_rates, vec![0.0]);
        assert_eq!(f4.cells().len(), 10);
        let f6 = ExperimentConfig::preset(Preset::Fig6);
        assert_eq!(f6.fp_rates, vec![0.2, 0.4, 0.6]);
        assert_eq!(f6.cells().len(), 2 * (1 + 3 + 3));
        let hard = ExperimentConfig::preset(Preset::Hard);
        assert_eq!(hard.k * hard.c * hard.f, 540);
        let asym = ExperimentConfig::preset(Preset::Asymptotic);
        assert_eq!((asym.horizon, asym.mc_runs), (1000, 1000));
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
            ExperimentConfig::preset(p).validate().unwrap();
        }
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let o = ConfigOverrides::from_toml("mc_runs = 3\nfp_rates = [0.4]\npolicies = [\"ts\"]\nfusion_modes = [\"psda\"]\n").unwrap();
        let cfg = ExperimentConfig::preset(Preset::Fig6).with_overrides(o).unwrap();
        assert_eq!(cfg.mc_runs, 3);
        assert_eq!(cfg.cells().len(), 1);
        assert_eq!(cfg.horizon, 100);
        assert!(ConfigOverrides::from_toml("mc_run = 3").is_err());
        assert!(ConfigOverrides::from_toml("policies = [\"linucb\"]").is_err());
        let bad = ConfigOverrides::from_toml("fp_rates = [1.5]").unwrap();
        assert!(ExperimentConfig::preset(Preset::Fig4).with_overrides(bad).is_err());
        let bad = ConfigOverrides::from_toml("uplink_delay = 4").unwrap();
        assert!(ExperimentConfig::preset(Preset::Fig4).with_overrides(bad).is_err());
        let bad = ConfigOverrides::from_toml("f_p = 5").unwrap();
        assert!(ExperimentConfig::preset(Preset::Fig4).with_overrides(bad).is_err());
    }

    #[test]
    fn full_config_round_trips_through_toml() {
        let mut cfg = ExperimentConfig::preset(Preset::Fig6);
        cfg.assumed_fp_rate = Some(0.3);
        let text = cfg.to_toml().unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let again = ExperimentConfig::preset(Preset::Fig4).with_overrides(ConfigOverrides::from_toml(&text).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn cell_ids() {
        let c = Cell { policy: PolicyKind::Aif, fusion: FusionMode::Psda, fp_rate: Some(0.4) };
        assert_eq!(c.id(), "aif/psda/fp0.4");
        assert_eq!(Cell::parse_id(&c.id()).unwrap(), c);
        let c = Cell { policy: PolicyKind::Ts, fusion: FusionMode::NoHuman, fp_rate: None };
        assert_eq!(c.id(), "ts/no_human");
        assert_eq!(Cell::parse_id("ts/no_human").unwrap(), c);
        assert_eq!(Cell::parse_id("ucb/naive/fp0").unwrap().fp_rate, Some(0.0));
        for bad in ["", "ts", "ts/naive/0.4", "ts/naive/fp0.4/x", "foo/naive"] {
            assert!(Cell::parse_id(bad).is_err(), "{bad}");
        }
    }
}
