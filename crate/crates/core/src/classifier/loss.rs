//! Cross-entropy, focal and class-weighted variants, with the gradient of
//! the per-example loss with respect to the logits.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probabilities are clamped to at least this value before the logarithm.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    CrossEntropy,
    Focal,
    WeightedCrossEntropy,
    WeightedFocal,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [
        LossVariant::CrossEntropy,
        LossVariant::Focal,
        LossVariant::WeightedCrossEntropy,
        LossVariant::WeightedFocal,
    ];

    pub fn label(self) -> &'static str {
        match self {
            LossVariant::CrossEntropy => "CE",
            LossVariant::Focal => "Focal",
            LossVariant::WeightedCrossEntropy => "WeightedCE",
            LossVariant::WeightedFocal => "WeightedFocal",
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub gamma: f64,
    /// Class weights indexed by label (0 = inconsistent, 1 = consistent).
    pub alpha: [f64; 2],
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 2.0,
            alpha: [1.0, 5.0],
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::validation(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::validation(format!("alpha entries must be > 0, got {:?}", self.alpha)));
        }
        Ok(())
    }

    pub fn variant(&self) -> LossVariant {
        let focal = self.gamma > 0.0;
        let weighted = self.alpha != [1.0, 1.0];
        match (focal, weighted) {
            (false, false) => LossVariant::CrossEntropy,
            (true, false) => LossVariant::Focal,
            (false, true) => LossVariant::WeightedCrossEntropy,
            (true, true) => LossVariant::WeightedFocal,
        }
    }

    /// The configuration of `variant` built from this config's focusing
    /// parameter and class weights.
    pub fn for_variant(&self, variant: LossVariant) -> LossConfig {
        let gamma = if self.gamma > 0.0 { self.gamma } else { 2.0 };
        let alpha = if self.alpha != [1.0, 1.0] { self.alpha } else { [1.0, 5.0] };
        match variant {
            LossVariant::CrossEntropy => LossConfig { gamma: 0.0, alpha: [1.0, 1.0] },
            LossVariant::Focal => LossConfig { gamma, alpha: [1.0, 1.0] },
            LossVariant::WeightedCrossEntropy => LossConfig { gamma: 0.0, alpha },
            LossVariant::WeightedFocal => LossConfig { gamma, alpha },
        }
    }
}

fn clamp<T: Scalar>(p: T) -> T {
    let eps = T::of(PROB_EPS);
    if p < eps {
        eps
    } else if p > T::one() {
        T::one()
    } else {
        p
    }
}

/// `-alpha[y] * (1 - p_y)^gamma * ln(p_y)`.
pub fn loss<T: Scalar>(p_y: T, y: usize, cfg: &LossConfig) -> T {
    let p = clamp(p_y);
    let alpha = T::of(cfg.alpha[y]);
    let modulation = if cfg.gamma == 0.0 {
        T::one()
    } else {
        (T::one() - p).powf(T::of(cfg.gamma))
    };
    -alpha * modulation * p.ln()
}

/// Scalar `g` such that the gradient of the loss with respect to logit `j`
/// is `g * (delta_jy - p_j)`.
pub fn logit_gradient_scale<T: Scalar>(p_y: T, y: usize, cfg: &LossConfig) -> T {
    let p = clamp(p_y);
    let alpha = T::of(cfg.alpha[y]);
    if cfg.gamma == 0.0 {
        return -alpha;
    }
    let gamma = T::of(cfg.gamma);
    let q = T::one() - p;
    let focus = if q > T::zero() {
        gamma * q.powf(gamma - T::one()) * p * p.ln()
    } else {
        T::zero()
    };
    alpha * (focus - q.powf(gamma))
}

/// Numerically stable two-class softmax.
pub fn softmax<T: Scalar>(z: [T; 2]) -> [T; 2] {
    let m = if z[0] > z[1] { z[0] } else { z[1] };
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}
