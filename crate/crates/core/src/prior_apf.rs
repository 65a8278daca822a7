//! Artificial-potential-field reactive controller used as the prior.
//!
//! The field is built directly in the robot frame from the raw scan: a unit
//! attraction toward the goal bearing plus one repulsive term per beam that
//! falls inside the influence radius. The controller turns toward the net
//! force and slows down when something is close in front.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_4;

use crate::gaussfuse::{DiagGaussian2, Gaussian1};
use crate::simenv::{beam_bearing, LIDAR_BEAMS};

/// Beams within this bearing of the heading count as frontal for slowdown.
pub const FRONTAL_HALF_ANGLE: f64 = FRAC_PI_4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApfConfig {
    pub k_att: f64,
    pub k_rep: f64,
    pub influence_radius: f64,
    pub k_heading: f64,
    pub slowdown_radius: f64,
    pub mc_samples: usize,
    pub sensor_sigma: f64,
    pub variance_floor_c: f64,
    pub train_sigma: f64,
}

impl Default for ApfConfig {
    fn default() -> Self {
        Self {
            k_att: 1.0,
            k_rep: 0.01,
            influence_radius: 0.7,
            k_heading: 2.0,
            slowdown_radius: 0.5,
            mc_samples: 32,
            sensor_sigma: 0.01,
            variance_floor_c: 0.2,
            train_sigma: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ApfConfigError {
    NonPositive(&'static str),
    TooFewSamples(usize),
}

impl std::fmt::Display for ApfConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ApfConfigError::NonPositive(field) => write!(f, "apf.{field} must be positive"),
            ApfConfigError::TooFewSamples(n) => write!(f, "apf.mc_samples must be at least 2, got {n}"),
        }
    }
}

impl std::error::Error for ApfConfigError {}

impl ApfConfig {
    pub fn validate(&self) -> Result<(), ApfConfigError> {
        let positive = [
            ("k_att", self.k_att),
            ("k_rep", self.k_rep),
            ("influence_radius", self.influence_radius),
            ("k_heading", self.k_heading),
            ("slowdown_radius", self.slowdown_radius),
            ("train_sigma", self.train_sigma),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(ApfConfigError::NonPositive(name));
        }
        if !(self.sensor_sigma >= 0.0) {
            return Err(ApfConfigError::NonPositive("sensor_sigma"));
        }
        if !(self.variance_floor_c >= 0.0) {
            return Err(ApfConfigError::NonPositive("variance_floor_c"));
        }
        if self.mc_samples < 2 {
            return Err(ApfConfigError::TooFewSamples(self.mc_samples));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApfAction {
    pub action: [f64; 2],
    /// Attraction and repulsion cancelled exactly; the action is `(0, 0)`.
    pub degenerate: bool,
}

/// Net field force in the robot frame (x forward, y left).
pub fn net_force(scan: &[f64], angle_to_goal: f64, cfg: &ApfConfig) -> [f64; 2] {
    assert_eq!(scan.len(), LIDAR_BEAMS, "scan must have {LIDAR_BEAMS} beams");
    let mut f = [cfg.k_att * angle_to_goal.cos(), cfg.k_att * angle_to_goal.sin()];
    let inv_r0 = 1.0 / cfg.influence_radius;
    for (i, &r) in scan.iter().enumerate() {
        if r < cfg.influence_radius {
            let mag = cfg.k_rep * (1.0 / r - inv_r0).powi(2);
            let b = beam_bearing(i);
            f[0] -= mag * b.cos();
            f[1] -= mag * b.sin();
        }
    }
    f
}

/// Nearest range among beams within [`FRONTAL_HALF_ANGLE`] of the heading.
pub fn nearest_frontal(scan: &[f64]) -> f64 {
    scan.iter()
        .enumerate()
        .filter(|(i, _)| beam_bearing(*i).abs() <= FRONTAL_HALF_ANGLE)
        .map(|(_, r)| *r)
        .fold(f64::INFINITY, f64::min)
}

/// Deterministic potential-field command `(v, w)` in `[-1, 1]^2`.
pub fn apf_action(scan: &[f64], angle_to_goal: f64, cfg: &ApfConfig) -> ApfAction {
    let f = net_force(scan, angle_to_goal, cfg);
    if f[0] == 0.0 && f[1] == 0.0 {
        return ApfAction { action: [0.0, 0.0], degenerate: true };
    }
    let heading_error = f[1].atan2(f[0]);
    let w = (cfg.k_heading * heading_error).clamp(-1.0, 1.0);
    let caution = (nearest_frontal(scan) / cfg.slowdown_radius).min(1.0);
    let v = (heading_error.cos() * caution).clamp(-1.0, 1.0).max(0.0);
    ApfAction { action: [v, w], degenerate: false }
}

/// Monte-Carlo action distribution under range noise, variance floored at
/// `variance_floor_c`. Used at deployment.
pub fn prior_distribution_mc<R: Rng + ?Sized>(
    scan: &[f64],
    angle_to_goal: f64,
    max_range: f64,
    cfg: &ApfConfig,
    rng: &mut R,
) -> (DiagGaussian2, bool) {
    let n = cfg.mc_samples.max(2);
    let mut noisy = vec![0.0; scan.len()];
    let mut sum = [0.0; 2];
    let mut sum_sq = [0.0; 2];
    let mut degenerate = false;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        for (dst, &r) in noisy.iter_mut().zip(scan) {
            let z: f64 = rng.sample(StandardNormal);
            *dst = (r + cfg.sensor_sigma * z).clamp(1e-6, max_range);
        }
        let out = apf_action(&noisy, angle_to_goal, cfg);
        degenerate |= out.degenerate;
        samples.push(out.action);
        for d in 0..2 {
            sum[d] += out.action[d];
        }
    }
    let nf = n as f64;
    let mean = [sum[0] / nf, sum[1] / nf];
    for a in &samples {
        for d in 0..2 {
            sum_sq[d] += (a[d] - mean[d]).powi(2);
        }
    }
    let var = [
        (sum_sq[0] / nf).max(cfg.variance_floor_c),
        (sum_sq[1] / nf).max(cfg.variance_floor_c),
    ];
    // A zero floor with a noiseless sensor would leave a zero-variance Gaussian.
    let var = var.map(|v| if v > 0.0 { v } else { f64::MIN_POSITIVE });
    (DiagGaussian2::from_arrays(mean, var), degenerate)
}

/// Fixed-width exploration distribution used during training.
pub fn prior_distribution_train(scan: &[f64], angle_to_goal: f64, cfg: &ApfConfig) -> DiagGaussian2 {
    let a = apf_action(scan, angle_to_goal, cfg).action;
    let var = cfg.train_sigma * cfg.train_sigma;
    DiagGaussian2::new(Gaussian1::new(a[0], var), Gaussian1::new(a[1], var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const MAX: f64 = 4.0;

    fn open_scan() -> Vec<f64> {
        vec![MAX; LIDAR_BEAMS]
    }

    #[test]
    fn pure_attraction() {
        let a = apf_action(&open_scan(), 0.0, &ApfConfig::default());
        assert_eq!(a.action, [1.0, 0.0]);
        assert!(!a.degenerate);
    }

    #[test]
    fn symmetric_walls_cancel() {
        let mut scan = open_scan();
        for i in 0..LIDAR_BEAMS {
            let b = beam_bearing(i);
            if b.abs() > 1.0 {
                scan[i] = 0.6 / b.sin().abs();
            }
        }
        let a = apf_action(&scan, 0.0, &ApfConfig::default());
        assert!(a.action[1].abs() < 1e-12, "{:?}", a.action);
        assert!(a.action[0] > 0.0);
    }

    /// Independent re-evaluation of the field law: per-beam direction vectors
    /// built from the raw beam index, summed in reverse order.
    fn oracle_action(scan: &[f64], goal: f64, cfg: &ApfConfig) -> [f64; 2] {
        let step = std::f64::consts::PI / 179.0;
        let (mut fx, mut fy) = (cfg.k_att * goal.cos(), cfg.k_att * goal.sin());
        for i in (0..180).rev() {
            let r = scan[i];
            if r < cfg.influence_radius {
                let bearing = -std::f64::consts::FRAC_PI_2 + i as f64 * step;
                let m = cfg.k_rep * (1.0 / r - 1.0 / cfg.influence_radius) * (1.0 / r - 1.0 / cfg.influence_radius);
                fx += -m * bearing.cos();
                fy += -m * bearing.sin();
            }
        }
        let err = fy.atan2(fx);
        let mut near = f64::INFINITY;
        for i in 0..180 {
            let bearing = -std::f64::consts::FRAC_PI_2 + i as f64 * step;
            if bearing.abs() <= std::f64::consts::FRAC_PI_4 + 1e-12 {
                near = near.min(scan[i]);
            }
        }
        let v = (err.cos() * (near / cfg.slowdown_radius).min(1.0)).clamp(0.0, 1.0);
        [v, (cfg.k_heading * err).clamp(-1.0, 1.0)]
    }

    #[test]
    fn obstacle_ahead_matches_oracle() {
        let cfg = ApfConfig::default();
        let mut scan = open_scan();
        // Disc of radius 0.2 whose near face is 0.45 m ahead, slightly left.
        let (cx, cy, rad) = (0.65, 0.05, 0.2);
        for (i, r) in scan.iter_mut().enumerate() {
            let b = beam_bearing(i);
            let (dx, dy) = (b.cos(), b.sin());
            let bb = -(dx * cx + dy * cy);
            let c = cx * cx + cy * cy - rad * rad;
            let disc = bb * bb - c;
            if disc >= 0.0 && -bb - disc.sqrt() > 0.0 {
                *r = -bb - disc.sqrt();
            }
        }
        let goal = 0.1;
        let a = apf_action(&scan, goal, &cfg);
        let o = oracle_action(&scan, goal, &cfg);
        assert!((a.action[0] - o[0]).abs() < 1e-9 && (a.action[1] - o[1]).abs() < 1e-9, "{:?} vs {:?}", a.action, o);
        let f = net_force(&scan, goal, &cfg);
        let heading_error = f[1].atan2(f[0]);
        assert!(a.action[0] < heading_error.cos(), "{:?} {heading_error}", a.action);
        assert!(heading_error.abs() > goal.abs(), "force should be deflected away from the goal bearing");
    }

    #[test]
    fn zero_force_is_degenerate() {
        let cfg = ApfConfig::default();
        assert!(!apf_action(&open_scan(), std::f64::consts::PI, &cfg).degenerate);
        // Without attraction and with nothing in range the field vanishes exactly.
        let cfg = ApfConfig { k_att: 0.0, ..cfg };
        let a = apf_action(&open_scan(), 0.3, &cfg);
        assert!(a.degenerate);
        assert_eq!(a.action, [0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (d, degenerate) = prior_distribution_mc(&open_scan(), 0.3, MAX, &cfg, &mut rng);
        assert!(degenerate);
        assert_eq!(d.mean(), [0.0, 0.0]);
    }

    #[test]
    fn mc_noiseless_collapses_to_floor() {
        let cfg = ApfConfig { sensor_sigma: 0.0, ..ApfConfig::default() };
        let mut scan = open_scan();
        scan[40] = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (d, _) = prior_distribution_mc(&scan, 0.4, MAX, &cfg, &mut rng);
        let det = apf_action(&scan, 0.4, &cfg).action;
        assert!((d.v.mean - det[0]).abs() < 1e-12 && (d.w.mean - det[1]).abs() < 1e-12);
        assert_eq!(d.var(), [0.2, 0.2]);
    }

    #[test]
    fn mc_mean_converges_in_open_world() {
        let cfg = ApfConfig { mc_samples: 10_000, sensor_sigma: 0.05, variance_floor_c: 0.0, ..ApfConfig::default() };
        let scan = open_scan();
        let det = apf_action(&scan, 0.3, &cfg).action;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (d, _) = prior_distribution_mc(&scan, 0.3, MAX, &cfg, &mut rng);
        for k in 0..2 {
            let sd = d.var()[k].sqrt();
            assert!((d.mean()[k] - det[k]).abs() <= 3.0 * sd / 100.0 + 1e-12, "dim {k}: {} vs {}", d.mean()[k], det[k]);
        }
    }

    #[test]
    fn train_distribution() {
        let cfg = ApfConfig::default();
        let mut scan = open_scan();
        scan[100] = 0.4;
        let d = prior_distribution_train(&scan, -0.7, &cfg);
        assert_eq!(d.var(), [0.09, 0.09]);
        assert_eq!(d.mean(), apf_action(&scan, -0.7, &cfg).action);
        assert_eq!(d, prior_distribution_train(&scan, -0.7, &cfg));
    }

    #[test]
    fn config_validation() {
        assert!(ApfConfig::default().validate().is_ok());
        assert!(ApfConfig { mc_samples: 1, ..ApfConfig::default() }.validate().is_err());
        assert!(ApfConfig { k_rep: 0.0, ..ApfConfig::default() }.validate().is_err());
    }

    fn scan_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.05f64..MAX, LIDAR_BEAMS)
    }

    proptest! {
        #[test]
        fn action_bounded(scan in scan_strategy(), goal in -3.14f64..3.14) {
            let a = apf_action(&scan, goal, &ApfConfig::default()).action;
            prop_assert!(a.iter().all(|x| x.is_finite() && (-1.0..=1.0).contains(x)));
        }

        #[test]
        fn mirror_symmetry(scan in scan_strategy(), goal in -3.1f64..3.1) {
            let cfg = ApfConfig::default();
            let mirrored: Vec<f64> = scan.iter().rev().copied().collect();
            let a = apf_action(&scan, goal, &cfg).action;
            let b = apf_action(&mirrored, -goal, &cfg).action;
            prop_assert!((a[0] - b[0]).abs() < 1e-9);
            prop_assert!((a[1] + b[1]).abs() < 1e-9);
        }

        #[test]
        fn closer_dead_ahead_obstacle_never_speeds_up(
            scan in scan_strategy(),
            goal in -3.1f64..3.1,
            frac in 0.05f64..1.0,
        ) {
            let cfg = ApfConfig::default();
            let mut scan = scan;
            let near = nearest_frontal(&scan);
            scan[89] = near;
            scan[90] = near;
            let v0 = apf_action(&scan, goal, &cfg).action[0];
            scan[89] = near * frac;
            scan[90] = near * frac;
            let v1 = apf_action(&scan, goal, &cfg).action[0];
            prop_assert!(v1 <= v0 + 1e-12, "{} > {}", v1, v0);
        }

        #[test]
        fn mc_variance_floor(scan in scan_strategy(), goal in -3.1f64..3.1, seed in any::<u64>()) {
            let cfg = ApfConfig { mc_samples: 8, sensor_sigma: 0.05, ..ApfConfig::default() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (d, _) = prior_distribution_mc(&scan, goal, MAX, &cfg, &mut rng);
            prop_assert!(d.v.var >= cfg.variance_floor_c && d.w.var >= cfg.variance_floor_c);
        }
    }
}
