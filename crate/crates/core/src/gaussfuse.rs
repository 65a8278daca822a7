//! Closed-form fusion of independent Gaussian action distributions.
//!
//! Every controller in this crate talks in [`DiagGaussian2`]: one independent
//! Gaussian for the linear-velocity command and one for the angular-velocity
//! command, both in normalized action units. Fusion is the normalized
//! pointwise product of densities, optionally with each density raised to a
//! gating power.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default lower bound applied to ensemble disagreement variance.
pub const ENSEMBLE_VAR_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("invalid distribution: mean {mean}, variance {var}")]
    InvalidDistribution { mean: f64, var: f64 },
    #[error("gating weight {0} outside [0, 1]")]
    InvalidAlpha(f64),
    #[error("ensemble needs at least 2 members, got {0}")]
    InsufficientEnsemble(usize),
    #[error("ensemble member {0} has a non-finite mean")]
    NonFiniteMember(usize),
}

/// A univariate Gaussian over one action dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian1 {
    pub mean: f64,
    pub var: f64,
}

impl Gaussian1 {
    pub const fn new(mean: f64, var: f64) -> Self {
        Self { mean, var }
    }

    pub fn std(&self) -> f64 {
        self.var.sqrt()
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if self.mean.is_finite() && self.var.is_finite() && self.var > 0.0 {
            Ok(())
        } else {
            Err(FusionError::InvalidDistribution {
                mean: self.mean,
                var: self.var,
            })
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        let z = x - self.mean;
        (-0.5 * z * z / self.var).exp() / (2.0 * std::f64::consts::PI * self.var).sqrt()
    }

    /// Product of two densities, renormalized.
    pub fn product(self, prior: Gaussian1) -> Result<Gaussian1, FusionError> {
        self.validate()?;
        prior.validate()?;
        let denom = prior.var + self.var;
        Ok(Gaussian1 {
            mean: (self.mean * prior.var + prior.mean * self.var) / denom,
            var: self.var * prior.var / denom,
        })
    }

    /// `self^(1-alpha) * prior^alpha`, renormalized.
    pub fn gated_product(self, prior: Gaussian1, alpha: f64) -> Result<Gaussian1, FusionError> {
        self.validate()?;
        prior.validate()?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(FusionError::InvalidAlpha(alpha));
        }
        // The endpoints are returned verbatim; the general formula would only
        // reproduce them up to rounding.
        if alpha == 0.0 {
            return Ok(self);
        }
        if alpha == 1.0 {
            return Ok(prior);
        }
        let wp = prior.var * (1.0 - alpha);
        let wq = self.var * alpha;
        let denom = wp + wq;
        Ok(Gaussian1 {
            mean: (self.mean * wp + prior.mean * wq) / denom,
            var: self.var * prior.var / denom,
        })
    }
}

/// Independent Gaussians over `(v, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian2 {
    pub v: Gaussian1,
    pub w: Gaussian1,
}

impl DiagGaussian2 {
    pub const fn new(v: Gaussian1, w: Gaussian1) -> Self {
        Self { v, w }
    }

    pub fn from_arrays(mean: [f64; 2], var: [f64; 2]) -> Self {
        Self {
            v: Gaussian1::new(mean[0], var[0]),
            w: Gaussian1::new(mean[1], var[1]),
        }
    }

    pub fn mean(&self) -> [f64; 2] {
        [self.v.mean, self.w.mean]
    }

    pub fn var(&self) -> [f64; 2] {
        [self.v.var, self.w.var]
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        self.v.validate()?;
        self.w.validate()
    }

    /// Flat `(mean_v, var_v, mean_w, var_w)` layout used in trace logs.
    pub fn to_flat(&self) -> [f64; 4] {
        [self.v.mean, self.v.var, self.w.mean, self.w.var]
    }

    pub fn from_flat(f: [f64; 4]) -> Self {
        Self::from_arrays([f[0], f[2]], [f[1], f[3]])
    }
}

/// Plain product of policy and prior (deployment-time fusion).
pub fn fuse_product(policy: &DiagGaussian2, prior: &DiagGaussian2) -> Result<DiagGaussian2, FusionError> {
    Ok(DiagGaussian2 {
        v: policy.v.product(prior.v)?,
        w: policy.w.product(prior.w)?,
    })
}

/// Gated product `policy^(1-alpha) * prior^alpha` (training-time exploration).
pub fn fuse_gated(
    policy: &DiagGaussian2,
    prior: &DiagGaussian2,
    alpha: f64,
) -> Result<DiagGaussian2, FusionError> {
    Ok(DiagGaussian2 {
        v: policy.v.gated_product(prior.v, alpha)?,
        w: policy.w.gated_product(prior.w, alpha)?,
    })
}

/// Collapses ensemble member means into one Gaussian: mean of means and
/// population variance of means, floored at `var_floor`.
pub fn aggregate_ensemble(means: &[[f64; 2]], var_floor: f64) -> Result<DiagGaussian2, FusionError> {
    let n = means.len();
    if n < 2 {
        return Err(FusionError::InsufficientEnsemble(n));
    }
    if let Some(i) = means.iter().position(|m| !m[0].is_finite() || !m[1].is_finite()) {
        return Err(FusionError::NonFiniteMember(i));
    }
    let nf = n as f64;
    let mut out = [Gaussian1::new(0.0, 0.0); 2];
    for (d, g) in out.iter_mut().enumerate() {
        let mean = means.iter().map(|m| m[d]).sum::<f64>() / nf;
        let var = means.iter().map(|m| (m[d] - mean).powi(2)).sum::<f64>() / nf;
        *g = Gaussian1::new(mean, var.max(var_floor));
    }
    Ok(DiagGaussian2 { v: out[0], w: out[1] })
}

/// Per-dimension `|policy mean - prior mean|`.
pub fn disagreement(policy: &DiagGaussian2, prior: &DiagGaussian2) -> [f64; 2] {
    [
        (policy.v.mean - prior.v.mean).abs(),
        (policy.w.mean - prior.w.mean).abs(),
    ]
}

/// Reverse-logistic gating weight, 1 at the start of training and 0 at the end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatingSchedule {
    pub midpoint_step: u64,
    pub steepness: f64,
    pub total_steps: u64,
}

impl GatingSchedule {
    /// Midpoint at 40% of training, steepness `10 / total_steps`.
    pub fn for_total_steps(total_steps: u64) -> Self {
        let total = total_steps.max(1);
        Self {
            midpoint_step: (0.4 * total as f64).round() as u64,
            steepness: 10.0 / total as f64,
            total_steps: total,
        }
    }

    pub fn alpha_at(&self, step: u64) -> f64 {
        alpha_at(self, step)
    }
}

pub fn alpha_at(schedule: &GatingSchedule, step: u64) -> f64 {
    let dt = step as f64 - schedule.midpoint_step as f64;
    let a = 1.0 / (1.0 + (schedule.steepness * dt).exp());
    a.clamp(0.0, 1.0)
}

/// Draws one action from `dist` and clamps each component to `[-1, 1]`.
pub fn sample<R: Rng + ?Sized>(dist: &DiagGaussian2, rng: &mut R) -> [f64; 2] {
    let z = [rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)];
    sample_with_noise(dist, z)
}

/// Deterministic half of [`sample`]: maps standard-normal draws to a clamped action.
pub fn sample_with_noise(dist: &DiagGaussian2, z: [f64; 2]) -> [f64; 2] {
    [
        (dist.v.mean + dist.v.std() * z[0]).clamp(-1.0, 1.0),
        (dist.w.mean + dist.w.std() * z[1]).clamp(-1.0, 1.0),
    ]
}
