use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalerKind {
    Standard,
    MinMax,
}

/// What a scaler was fitted on. Carried along so a transform can be checked
/// against the domain it is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitDomain {
    BranchInput,
    TrunkX,
    TrunkT,
    Target,
}

/// Global affine scaler: `(x - shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub kind: ScalerKind,
    pub domain: FitDomain,
    /// Mean (standard) or minimum (min-max).
    pub shift: f64,
    /// Standard deviation (standard) or `max - min` (min-max).
    pub scale: f64,
}

impl Scaler {
    /// Statistics over every entry of `data`.
    pub fn fit(kind: ScalerKind, domain: FitDomain, data: &[f64]) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::config(format!("cannot fit {domain:?} scaler on empty data")));
        }
        let (shift, scale) = match kind {
            ScalerKind::Standard => {
                let n = data.len() as f64;
                let mean = data.iter().sum::<f64>() / n;
                let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                (mean, var.sqrt())
            }
            ScalerKind::MinMax => {
                let min = data.iter().copied().fold(f64::INFINITY, f64::min);
                let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (min, max - min)
            }
        };
        if !(scale > 0.0) || !scale.is_finite() || !shift.is_finite() {
            return Err(Error::Degenerate(format!(
                "{kind:?} scaler on {domain:?} has zero spread"
            )));
        }
        Ok(Scaler {
            kind,
            domain,
            shift,
            scale,
        })
    }

    pub fn identity(domain: FitDomain) -> Self {
        Scaler {
            kind: ScalerKind::Standard,
            domain,
            shift: 0.0,
            scale: 1.0,
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.shift) / self.scale
    }

    #[inline]
    pub fn invert(&self, y: f64) -> f64 {
        y * self.scale + self.shift
    }

    pub fn apply_tensor(&self, x: &Tensor) -> Tensor {
        x.map(|v| self.apply(v))
    }

    pub fn invert_tensor(&self, x: &Tensor) -> Tensor {
        x.map(|v| self.invert(v))
    }

    pub fn apply_slice(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.apply(v)).collect()
    }

    /// Fails if the scaler was fitted on a different domain.
    pub fn expect_domain(&self, domain: FitDomain) -> Result<&Self> {
        if self.domain != domain {
            return Err(Error::config(format!(
                "scaler fitted on {:?} applied to {domain:?}",
                self.domain
            )));
        }
        Ok(self)
    }
}
