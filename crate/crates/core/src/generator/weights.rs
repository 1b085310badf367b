use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positive weights `d_0 = 1, d_1, ...` with a geometric tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSequence {
    /// `d_0 = 1`, `d_{n+1} = (1 + eps) d_n`.
    Geometric { eps: f64 },
    /// `d_0 = 1`, `d_1 = eps`, `d_{n+1} = (1 + eps) d_n` for `n >= 1`.
    GeometricGap { eps: f64 },
    /// Listed prefix, then each further weight is `ratio` times the previous.
    ExplicitPrefix { prefix: Vec<f64>, ratio: f64 },
}

impl WeightSequence {
    pub fn geometric(eps: f64) -> Result<Self> {
        Self::Geometric { eps }.validated()
    }

    pub fn geometric_gap(eps: f64) -> Result<Self> {
        Self::GeometricGap { eps }.validated()
    }

    pub fn explicit_prefix(prefix: Vec<f64>, ratio: f64) -> Result<Self> {
        Self::ExplicitPrefix { prefix, ratio }.validated()
    }

    /// All weights equal to one.
    pub fn unit() -> Self {
        Self::Geometric { eps: 0.0 }
    }

    pub fn validated(self) -> Result<Self> {
        match &self {
            Self::Geometric { eps } if !(*eps >= 0.0 && eps.is_finite()) => {
                Err(Error::InvalidWeights(format!("geometric eps must be >= 0, got {eps}")))
            }
            Self::GeometricGap { eps } if !(*eps > 0.0 && eps.is_finite()) => {
                Err(Error::InvalidWeights(format!("gap eps must be > 0, got {eps}")))
            }
            Self::ExplicitPrefix { prefix, ratio } => {
                if prefix.first() != Some(&1.0) {
                    return Err(Error::InvalidWeights("explicit prefix must start with d_0 = 1".into()));
                }
                if prefix.iter().any(|d| !(*d > 0.0 && d.is_finite())) || !(*ratio > 0.0 && ratio.is_finite()) {
                    return Err(Error::InvalidWeights("weights and ratio must be positive".into()));
                }
                Ok(self)
            }
            _ => Ok(self),
        }
    }

    /// Weight `d_i`.
    pub fn d(&self, i: usize) -> f64 {
        match self {
            Self::Geometric { eps } => (1.0 + eps).powi(i as i32),
            Self::GeometricGap { eps } => match i {
                0 => 1.0,
                _ => eps * (1.0 + eps).powi(i as i32 - 1),
            },
            Self::ExplicitPrefix { prefix, ratio } => match prefix.get(i) {
                Some(d) => *d,
                None => prefix[prefix.len() - 1] * ratio.powi((i + 1 - prefix.len()) as i32),
            },
        }
    }

    /// First `n` weights.
    pub fn take(&self, n: usize) -> Vec<f64> {
        (0..n).map(|i| self.d(i)).collect()
    }

    /// Ratio `d_{i+1} / d_i` in the geometric tail.
    pub fn tail_ratio(&self) -> f64 {
        match self {
            Self::Geometric { eps } | Self::GeometricGap { eps } => 1.0 + eps,
            Self::ExplicitPrefix { ratio, .. } => *ratio,
        }
    }

    /// Index from which `d_{i+1} / d_i` equals the tail ratio.
    pub fn tail_start(&self) -> usize {
        match self {
            Self::Geometric { .. } => 0,
            Self::GeometricGap { .. } => 1,
            Self::ExplicitPrefix { prefix, .. } => prefix.len() - 1,
        }
    }
}
