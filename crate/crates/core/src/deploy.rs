//! Deployment-time controller: ensemble disagreement as the policy's
//! uncertainty, the Monte-Carlo prior distribution, and their product.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussfuse::{self, DiagGaussian2, FusionError, ENSEMBLE_VAR_FLOOR};
use crate::neural::{Mlp, NeuralError};
use crate::prior_apf::{apf_action, prior_distribution_mc, ApfConfig};
use crate::rng;
use crate::sac::actor_distribution;
use crate::simenv::{ArenaError, DoneReason, NavEnv, WorldSpec, OBS_DIM};
use crate::trainer::{member_dir_name, RunManifest, ACTOR_FILE, MANIFEST_FILE};

#[derive(Debug, Error)]
pub enum DeployError {
    #[error("ensemble needs at least 2 members, got {0}")]
    TooFewMembers(usize),
    #[error("member {0} has a different architecture from member 0")]
    ArchitectureMismatch(usize),
    #[error("missing checkpoints: {}", .0.join(", "))]
    MissingMembers(Vec<String>),
    #[error("bundle {path}: {message}")]
    Bundle { path: PathBuf, message: String },
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Arena(#[from] ArenaError),
    #[error("{controller} needs a policy ensemble")]
    NeedsBundle { controller: Controller },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeployConfig {
    /// Emit the fused mean instead of sampling.
    pub deterministic: bool,
    pub ensemble_var_floor: f64,
    pub stagnation_gap: f64,
    pub stagnation_var: f64,
}

impl Default for DeployConfig {
    fn default() -> Self {
        DeployConfig { deterministic: true, ensemble_var_floor: ENSEMBLE_VAR_FLOOR, stagnation_gap: 1.0, stagnation_var: 0.05 }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleBundle {
    pub members: Vec<Mlp>,
    pub manifest: Option<RunManifest>,
}

impl EnsembleBundle {
    pub fn new(members: Vec<Mlp>) -> Result<Self, DeployError> {
        if members.len() < 2 {
            return Err(DeployError::TooFewMembers(members.len()));
        }
        if let Some(i) = members.iter().position(|m| !m.same_architecture(&members[0])) {
            return Err(DeployError::ArchitectureMismatch(i));
        }
        if members[0].input_dim() != OBS_DIM || members[0].output_dim() != 4 {
            return Err(DeployError::ArchitectureMismatch(0));
        }
        Ok(EnsembleBundle { members, manifest: None })
    }

    /// Loads every member listed as trained in `dir/manifest.json`. Without a
    /// manifest, loads `member_00`, `member_01`, ... until one is absent.
    pub fn load(dir: &Path) -> Result<Self, DeployError> {
        let bundle_err = |message: String| DeployError::Bundle { path: dir.to_path_buf(), message };
        if !dir.is_dir() {
            return Err(bundle_err("not a directory".into()));
        }
        let manifest_path = dir.join(MANIFEST_FILE);
        let (names, manifest) = if manifest_path.exists() {
            let text = fs::read_to_string(&manifest_path).map_err(|e| bundle_err(e.to_string()))?;
            let m: RunManifest = serde_json::from_str(&text).map_err(|e| bundle_err(format!("manifest: {e}")))?;
            let names: Vec<String> = m.members.iter().filter(|e| e.status == "ok").map(|e| e.dir.clone()).collect();
            (names, Some(m))
        } else {
            let names = (0..).map(member_dir_name).take_while(|n| dir.join(n).is_dir()).collect();
            (names, None)
        };
        let missing: Vec<String> = names
            .iter()
            .filter(|n| !dir.join(n).join(ACTOR_FILE).is_file())
            .map(|n| dir.join(n).join(ACTOR_FILE).display().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(DeployError::MissingMembers(missing));
        }
        let members = names
            .iter()
            .map(|n| {
                let p = dir.join(n).join(ACTOR_FILE);
                let f = fs::File::open(&p).map_err(|e| bundle_err(format!("{}: {e}", p.display())))?;
                Mlp::read_checkpoint(std::io::BufReader::new(f)).map_err(|e: NeuralError| bundle_err(format!("{}: {e}", p.display())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut bundle = EnsembleBundle::new(members)?;
        bundle.manifest = manifest;
        Ok(bundle)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Mean and population variance of the members' action means.
    pub fn ensemble_distribution(&self, obs: &[f64; OBS_DIM], var_floor: f64) -> Result<DiagGaussian2, FusionError> {
        let means: Vec<[f64; 2]> = self.members.iter().map(|m| actor_distribution(m, obs).mean()).collect();
        gaussfuse::aggregate_ensemble(&means, var_floor)
    }
}

/// One control step of a traced episode. Distributions serialize as
/// `[mean_v, var_v, mean_w, var_w]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u32,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    #[serde(with = "flat_opt")]
    pub policy: Option<DiagGaussian2>,
    #[serde(with = "flat_opt")]
    pub prior: Option<DiagGaussian2>,
    #[serde(with = "flat_opt")]
    pub fused: Option<DiagGaussian2>,
    /// Standard-normal draw used to sample `fused`; zero when acting on the mean.
    pub noise: [f64; 2],
    pub action: [f64; 2],
    pub disagreement: [f64; 2],
    pub reward: f64,
    pub stagnation: bool,
}

mod flat_opt {
    use super::DiagGaussian2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(d: &Option<DiagGaussian2>, s: S) -> Result<S::Ok, S::Error> {
        d.map(|d| d.to_flat()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DiagGaussian2>, D::Error> {
        Ok(Option::<[f64; 4]>::deserialize(d)?.map(DiagGaussian2::from_flat))
    }
}

/// Output of [`mcf_act`] before the environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionStep {
    pub policy: DiagGaussian2,
    pub prior: DiagGaussian2,
    pub fused: DiagGaussian2,
    pub noise: [f64; 2],
    pub action: [f64; 2],
    pub disagreement: [f64; 2],
    pub stagnation: bool,
}

/// Fuses the ensemble's disagreement distribution with the Monte-Carlo prior
/// and picks an action. `mc_rng` drives the prior's sensor-noise samples,
/// `act_rng` the action draw.
#[allow(clippy::too_many_arguments)]
pub fn mcf_act<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    bundle: &EnsembleBundle,
    apf: &ApfConfig,
    deploy: &DeployConfig,
    obs: &[f64; OBS_DIM],
    scan: &[f64],
    angle_to_goal: f64,
    max_range: f64,
    mc_rng: &mut R1,
    act_rng: &mut R2,
) -> Result<FusionStep, FusionError> {
    let policy = bundle.ensemble_distribution(obs, deploy.ensemble_var_floor)?;
    let (prior, _) = prior_distribution_mc(scan, angle_to_goal, max_range, apf, mc_rng);
    fuse_and_act(&policy, &prior, deploy, act_rng)
}

/// Product fusion of two distributions followed by action selection.
pub fn fuse_and_act<R: Rng + ?Sized>(
    policy: &DiagGaussian2,
    prior: &DiagGaussian2,
    deploy: &DeployConfig,
    act_rng: &mut R,
) -> Result<FusionStep, FusionError> {
    let fused = gaussfuse::fuse_product(policy, prior)?;
    let noise = if deploy.deterministic {
        [0.0, 0.0]
    } else {
        [act_rng.sample(StandardNormal), act_rng.sample(StandardNormal)]
    };
    let action = gaussfuse::sample_with_noise(&fused, noise);
    let disagreement = gaussfuse::disagreement(policy, prior);
    let confident = |d: &DiagGaussian2| d.v.var < deploy.stagnation_var && d.w.var < deploy.stagnation_var;
    let stagnation = disagreement.iter().any(|g| *g > deploy.stagnation_gap) && confident(policy) && confident(prior);
    Ok(FusionStep { policy: *policy, prior: *prior, fused, noise, action, disagreement, stagnation })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    Mcf,
    PolicyOnly,
    PriorOnly,
    Random,
}

impl Controller {
    pub const ALL: [Controller; 4] = [Controller::Mcf, Controller::PolicyOnly, Controller::PriorOnly, Controller::Random];

    pub fn name(self) -> &'static str {
        match self {
            Controller::Mcf => "mcf",
            Controller::PolicyOnly => "policy_only",
            Controller::PriorOnly => "prior",
            Controller::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Controller> {
        match s {
            "prior_only" => Some(Controller::PriorOnly),
            "policy" => Some(Controller::PolicyOnly),
            _ => Controller::ALL.into_iter().find(|c| c.name() == s),
        }
    }

    pub fn needs_bundle(self) -> bool {
        matches!(self, Controller::Mcf | Controller::PolicyOnly)
    }
}

impl std::fmt::Display for Controller {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub controller: Controller,
    pub arena: String,
    pub seed: u64,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub outcome: DoneReason,
    pub steps: u32,
    pub path_length: f64,
    #[serde(default)]
    pub tool_version: String,
    #[serde(default)]
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub header: EpisodeHeader,
    pub rows: Vec<TraceRow>,
}

impl EpisodeRecord {
    pub fn success(&self) -> bool {
        self.header.outcome == DoneReason::Goal
    }

    /// Header line followed by one line per step.
    pub fn to_jsonl(&self) -> String {
        let mut s = serde_json::to_string(&self.header).expect("header serializes");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&serde_json::to_string(r).expect("trace rows serialize"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = serde_json::from_str(lines.next().unwrap_or(""))?;
        let rows = lines.map(serde_json::from_str).collect::<Result<_, _>>()?;
        Ok(EpisodeRecord { header, rows })
    }

    /// `x,y,sigma2_v,sigma2_w` per step, the ensemble variance for coloring.
    pub fn trajectory_csv(&self) -> String {
        let mut s = String::from("step,x,y,sigma2_v,sigma2_w\n");
        for r in &self.rows {
            let (a, b) = r.policy.map(|p| (p.v.var.to_string(), p.w.var.to_string())).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{a},{b}", r.step, r.x, r.y);
        }
        s
    }
}

/// Runs `controller` from the episode defined by `seed` until termination.
pub fn run_episode(
    controller: Controller,
    bundle: Option<&EnsembleBundle>,
    world: &Arc<WorldSpec>,
    seed: u64,
    apf: &ApfConfig,
    deploy: &DeployConfig,
) -> Result<EpisodeRecord, DeployError> {
    let bundle = match (controller.needs_bundle(), bundle) {
        (true, None) => return Err(DeployError::NeedsBundle { controller }),
        (_, b) => b,
    };
    let mut env = NavEnv::new(world.clone(), seed)?;
    let mut mc_rng = rng::stream(seed, "deploy.mc");
    let mut act_rng = rng::stream(seed, "deploy.action");
    let mut rows = Vec::new();
    let mut stagnation_warned = false;
    let outcome = loop {
        let obs = env.observation().to_array();
        let state = *env.state();
        let mut row = TraceRow {
            step: state.steps,
            x: state.x,
            y: state.y,
            theta: state.theta,
            policy: None,
            prior: None,
            fused: None,
            noise: [0.0, 0.0],
            action: [0.0, 0.0],
            disagreement: [0.0, 0.0],
            reward: 0.0,
            stagnation: false,
        };
        let action = match controller {
            Controller::Mcf => {
                let b = bundle.expect("checked above");
                let f = mcf_act(b, apf, deploy, &obs, env.scan(), env.goal_bearing(), world.lidar.max_range, &mut mc_rng, &mut act_rng)?;
                if f.stagnation && !stagnation_warned {
                    warn!("confident controllers disagree at step {} (gap {:?})", state.steps, f.disagreement);
                    stagnation_warned = true;
                }
                row.policy = Some(f.policy);
                row.prior = Some(f.prior);
                row.fused = Some(f.fused);
                row.noise = f.noise;
                row.disagreement = f.disagreement;
                row.stagnation = f.stagnation;
                f.action
            }
            Controller::PolicyOnly => {
                let p = bundle.expect("checked above").ensemble_distribution(&obs, deploy.ensemble_var_floor)?;
                row.policy = Some(p);
                p.mean()
            }
            Controller::PriorOnly => apf_action(env.scan(), env.goal_bearing(), apf).action,
            Controller::Random => [act_rng.gen_range(-1.0..=1.0), act_rng.gen_range(-1.0..=1.0)],
        };
        row.action = action;
        let r = env.step(action);
        row.reward = r.reward;
        rows.push(row);
        if r.done {
            break r.done_reason;
        }
    };
    let header = EpisodeHeader {
        controller,
        arena: world.name.clone(),
        seed,
        start: env.start(),
        goal: env.goal(),
        outcome,
        steps: env.state().steps,
        path_length: env.path_length(),
        tool_version: crate::trainer::tool_version(),
        config_hash: String::new(),
    };
    Ok(EpisodeRecord { header, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussfuse::Gaussian1;
    use crate::neural::{Dense, Head};
    use crate::simenv::builtin_arena;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Actor whose tanh-mean for v is exactly `v` and w is 0, for any input.
    fn constant_actor(v: f64) -> Mlp {
        let mut l = Dense::zeros(OBS_DIM, 4);
        l.b[0] = v.atanh();
        l.b[2] = -1.0;
        l.b[3] = -1.0;
        Mlp::from_layers(vec![l], Head::Gaussian { action_dim: 2 }).unwrap()
    }

    fn g2(mv: f64, vv: f64, mw: f64, vw: f64) -> DiagGaussian2 {
        DiagGaussian2::new(Gaussian1::new(mv, vv), Gaussian1::new(mw, vw))
    }

    #[test]
    fn identical_members_hit_the_floor() {
        let b = EnsembleBundle::new(vec![constant_actor(0.3), constant_actor(0.3)]).unwrap();
        let d = b.ensemble_distribution(&[0.5; OBS_DIM], 1e-6).unwrap();
        assert!((d.v.mean - 0.3).abs() < 1e-12);
        assert_eq!(d.v.var, 1e-6);
        assert_eq!(d.w.var, 1e-6);
    }

    #[test]
    fn five_member_spread() {
        let members = [0.0, 0.2, 0.4, 0.2, 0.2].map(constant_actor).to_vec();
        let d = EnsembleBundle::new(members).unwrap().ensemble_distribution(&[0.0; OBS_DIM], 1e-6).unwrap();
        // Oracle: direct summation.
        let xs = [0.0, 0.2, 0.4, 0.2, 0.2];
        let m = xs.iter().sum::<f64>() / 5.0;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 5.0;
        assert!((d.v.mean - 0.2).abs() < 1e-12 && (d.v.mean - m).abs() < 1e-12);
        assert!((d.v.var - 0.016).abs() < 1e-12 && (d.v.var - v).abs() < 1e-15);
    }

    #[test]
    fn bundle_shape_errors() {
        assert!(matches!(EnsembleBundle::new(vec![constant_actor(0.1)]), Err(DeployError::TooFewMembers(1))));
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let other = Mlp::new(&[OBS_DIM, 8, 4], Head::Gaussian { action_dim: 2 }, &mut r);
        assert!(matches!(
            EnsembleBundle::new(vec![constant_actor(0.1), other]),
            Err(DeployError::ArchitectureMismatch(1))
        ));
    }

    #[test]
    fn confident_policy_dominates() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let f = fuse_and_act(&g2(0.7, 1e-6, -0.2, 1e-6), &g2(0.1, 0.2, 0.5, 0.2), &DeployConfig::default(), &mut r).unwrap();
        assert!((f.fused.v.mean - 0.7).abs() < 1e-3 && (f.fused.w.mean + 0.2).abs() < 1e-3);
    }

    #[test]
    fn uncertain_policy_defers_to_prior() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let f = fuse_and_act(&g2(0.9, 10.0, -0.9, 10.0), &g2(0.5, 0.2, 0.5, 0.2), &DeployConfig::default(), &mut r).unwrap();
        // (0.9 * 0.2 + 0.5 * 10) / 10.2
        let expect = (0.9 * 0.2 + 0.5 * 10.0) / 10.2;
        assert!((f.fused.v.mean - expect).abs() < 1e-12);
        // Within 2% of the policy-prior gap from the prior.
        assert!((f.fused.v.mean - 0.5).abs() < 0.02 * 0.4);
        assert!((f.fused.w.mean - 0.5).abs() < 0.02 * 1.4);
    }

    #[test]
    fn equal_variances_meet_halfway() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let f = fuse_and_act(&g2(0.6, 0.1, -0.4, 0.3), &g2(0.2, 0.1, 0.0, 0.3), &DeployConfig::default(), &mut r).unwrap();
        assert!((f.fused.v.mean - 0.4).abs() < 1e-12 && (f.fused.w.mean + 0.2).abs() < 1e-12);
    }

    #[test]
    fn stagnation_flag() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let cfg = DeployConfig::default();
        let f = fuse_and_act(&g2(0.9, 0.01, 0.0, 0.01), &g2(-0.5, 0.01, 0.0, 0.01), &cfg, &mut r).unwrap();
        assert!(f.stagnation);
        let f = fuse_and_act(&g2(0.9, 0.01, 0.0, 0.01), &g2(-0.5, 0.2, 0.0, 0.2), &cfg, &mut r).unwrap();
        assert!(!f.stagnation);
    }

    #[test]
    fn prior_only_reaches_goal_in_open_arena() {
        let w = Arc::new(builtin_arena("open").unwrap());
        let rec = run_episode(Controller::PriorOnly, None, &w, 3, &ApfConfig::default(), &DeployConfig::default()).unwrap();
        assert!(rec.success());
        assert_eq!(rec.rows.len() as u32, rec.header.steps);
    }

    #[test]
    fn learned_controllers_need_a_bundle() {
        let w = Arc::new(builtin_arena("open").unwrap());
        let err = run_episode(Controller::Mcf, None, &w, 3, &ApfConfig::default(), &DeployConfig::default());
        assert!(matches!(err, Err(DeployError::NeedsBundle { .. })));
    }

    #[test]
    fn sampled_actions_reconstruct_from_trace() {
        let w = Arc::new(builtin_arena("scattered").unwrap());
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let members = (0..3).map(|_| Mlp::new(&[OBS_DIM, 16, 4], Head::Gaussian { action_dim: 2 }, &mut r)).collect();
        let b = EnsembleBundle::new(members).unwrap();
        let cfg = DeployConfig { deterministic: false, ..DeployConfig::default() };
        let rec = run_episode(Controller::Mcf, Some(&b), &w, 9, &ApfConfig::default(), &cfg).unwrap();
        for row in &rec.rows {
            assert_eq!(gaussfuse::sample_with_noise(&row.fused.unwrap(), row.noise), row.action);
        }
        let back = EpisodeRecord::from_jsonl(&rec.to_jsonl()).unwrap();
        assert_eq!(back, rec);
        assert_eq!(rec.to_jsonl().lines().count(), rec.rows.len() + 1);
    }
}
