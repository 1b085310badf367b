use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::generator::WeightSequence;
use crate::perturbation::Theorem;
use crate::rates::QueueModel;

use super::CliError;

/// Which family of ergodicity estimates an experiment uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    /// Reduced system with `gamma*` and the weighted rate `gamma**`.
    First,
    /// Queue-only system with the cumulative weight matrix and `gamma_B`.
    Second,
}

/// One perturbation experiment: a deviation bound and the theorem whose
/// bound is checked against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbRun {
    pub theorem: Theorem,
    pub eps_hat: f64,
    /// Reference constant for this setting, checked as an extra upper bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    #[serde(default = "default_frequency")]
    pub frequency: u32,
    pub runs: Vec<PerturbRun>,
}

fn default_frequency() -> u32 {
    3
}

fn default_truncation() -> usize {
    200
}

fn default_step() -> f64 {
    crate::transient::DEFAULT_STEP
}

fn default_mean_states() -> Vec<usize> {
    vec![1, 10, 100]
}

fn default_pair() -> [usize; 2] {
    [0, 100]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub approach: Approach,
    #[serde(default = "default_truncation")]
    pub truncation: usize,
    #[serde(default = "default_step")]
    pub step: f64,
    pub horizon: f64,
    /// One-period window of the limiting regime.
    pub window: [f64; 2],
    /// Certified lower bound for the ergodicity rate; when absent the
    /// envelope is fitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope_floor: Option<f64>,
    /// Initial queue lengths `j` for the `|E(t, j) - E(t, 0)|` checks.
    #[serde(default = "default_mean_states")]
    pub mean_states: Vec<usize>,
    /// Initial queue lengths of the two trajectories in contraction checks.
    #[serde(default = "default_pair")]
    pub contraction_pair: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<PathBuf>,
    pub weights: WeightSequence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationConfig>,
    pub model: QueueModel,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn emit(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: String| Err(CliError::Config(format!("field `{field}`: {msg}")));
        let [t_a, t_b] = self.window;
        if !(self.horizon > 0.0) {
            return bad("horizon", format!("must be positive, got {}", self.horizon));
        }
        if !(0.0 <= t_a && t_a < t_b && t_b <= self.horizon + 1e-12) {
            return bad("window", format!("[{t_a}, {t_b}] must lie inside [0, {}]", self.horizon));
        }
        if (t_b - t_a - 1.0).abs() > 1e-9 || t_a < 1.0 {
            return bad("window", "must span exactly one period and start at t >= 1".into());
        }
        let min = self.model.k + 3;
        if self.truncation < min {
            return bad("truncation", format!("{} is below k + 3 = {min}", self.truncation));
        }
        let limit = 1.0 / (4.0 * self.model.rate_bound_l());
        if !(self.step > 0.0 && self.step <= limit) {
            return bad("step", format!("{} must lie in (0, 1/(4L)] = (0, {limit:.3e}]", self.step));
        }
        let max_state = self.truncation - 2;
        if let Some(j) = self.mean_states.iter().chain(&self.contraction_pair).find(|&&j| j > max_state) {
            return bad("mean_states", format!("initial state {j} exceeds the truncation"));
        }
        if let Err(e) = self.weights.clone().validated() {
            return bad("weights", e.to_string());
        }
        if let Some(f) = self.envelope_floor {
            if !(f > 0.0) {
                return bad("envelope_floor", format!("must be positive, got {f}"));
            }
        }
        if let Some(p) = &self.perturbation {
            if p.frequency == 0 {
                return bad("perturbation.frequency", "must be positive".into());
            }
            for r in &p.runs {
                if !(r.eps_hat >= 0.0 && r.eps_hat.is_finite()) {
                    return bad("perturbation.runs.eps_hat", format!("must be >= 0, got {}", r.eps_hat));
                }
                let ok = match self.approach {
                    Approach::First => matches!(r.theorem, Theorem::T4 | Theorem::T5Prob | Theorem::T5Mean),
                    Approach::Second => matches!(r.theorem, Theorem::T6Prob | Theorem::T6Mean),
                };
                if !ok {
                    return bad("perturbation.runs.theorem", format!("{} does not belong to this approach", r.theorem));
                }
            }
        }
        Ok(())
    }
}

pub const EXAMPLE1: &str = include_str!("../../configs/example1.cfg");
pub const EXAMPLE2: &str = include_str!("../../configs/example2.cfg");

/// Shipped configuration for example 1 or 2.
pub fn example_config(example: u8) -> Result<ExperimentConfig, CliError> {
    match example {
        1 => ExperimentConfig::parse(EXAMPLE1),
        2 => ExperimentConfig::parse(EXAMPLE2),
        other => Err(CliError::Config(format!("unknown example {other}; expected 1 or 2"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::{example1, example2};

    #[test]
    fn shipped_configs_encode_the_examples() {
        let c1 = example_config(1).unwrap();
        assert_eq!(c1.model, example1());
        assert_eq!((c1.truncation, c1.window, c1.horizon), (200, [19.0, 20.0], 20.0));
        assert_eq!(c1.weights, WeightSequence::geometric(0.05).unwrap());
        let c2 = example_config(2).unwrap();
        assert_eq!(c2.model, example2());
        assert_eq!(c2.window, [69.0, 70.0]);
        assert_eq!(c2.weights, WeightSequence::explicit_prefix(vec![1.0, 2.5], 1.5).unwrap());
        assert!(example_config(3).is_err());
    }

    #[test]
    fn round_trip() {
        for ex in [1, 2] {
            let cfg = example_config(ex).unwrap();
            assert_eq!(ExperimentConfig::parse(&cfg.emit()).unwrap(), cfg);
        }
    }

    #[test]
    fn window_beyond_horizon_is_rejected() {
        let mut cfg = example_config(1).unwrap();
        cfg.horizon = 10.0;
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn diagnostics_name_the_field() {
        let text = EXAMPLE1.replace("truncation = 200", "truncation = \"many\"");
        let Err(CliError::Config(msg)) = ExperimentConfig::parse(&text) else { panic!() };
        assert!(msg.contains("truncation"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }
}
