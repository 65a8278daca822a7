//! Training loop with gated prior/policy fusion during exploration, the
//! comparison modes, periodic evaluation and multi-seed suites.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussfuse::{self, DiagGaussian2, FusionError, GatingSchedule};
use crate::neural::Mlp;
use crate::prior_apf::{apf_action, prior_distribution_train, ApfConfig};
use crate::rng;
use crate::sac::{actor_distribution, ReplayBuffer, SacAgent, SacConfig, SacError, Source, Transition};
use crate::simenv::{resolve_arena, DoneReason, NavEnv, WorldSpec};

/// Master seed of the held-out evaluation episodes, shared by every run so
/// curves from different seeds and modes are paired.
const EVAL_MASTER: u64 = 0xE7A1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Mcf,
    E2e,
    DemoBuffer,
    NoGating,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Mcf, Mode::E2e, Mode::DemoBuffer, Mode::NoGating];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Mcf => "mcf",
            Mode::E2e => "e2e",
            Mode::DemoBuffer => "demo_buffer",
            Mode::NoGating => "no_gating",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub total_steps: u64,
    pub eval_every_episodes: u64,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub arenas: Vec<String>,
    /// Defaults to [`GatingSchedule::for_total_steps`].
    pub gating: Option<GatingSchedule>,
    /// Prior episodes stored before training in `demo_buffer` mode.
    pub demo_episodes: usize,
    /// Replaces the gating weight in the fused modes.
    pub alpha_override: Option<f64>,
    #[serde(skip)]
    pub sac: SacConfig,
    #[serde(skip)]
    pub apf: ApfConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Mcf,
            total_steps: 50_000,
            eval_every_episodes: 5,
            eval_episodes: 10,
            seeds: vec![0, 1, 2],
            arenas: ["open", "scattered", "wall_gaps", "dead_end"].map(String::from).to_vec(),
            gating: None,
            demo_episodes: 50,
            alpha_override: None,
            sac: SacConfig::default(),
            apf: ApfConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> GatingSchedule {
        self.gating.unwrap_or_else(|| GatingSchedule::for_total_steps(self.total_steps))
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.total_steps == 0 {
            return bad("train.total_steps must be positive");
        }
        if self.eval_every_episodes == 0 {
            return bad("train.eval_every_episodes must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("train.seeds must not be empty");
        }
        if self.arenas.is_empty() {
            return bad("train.arenas must not be empty");
        }
        if let Some(a) = self.alpha_override {
            if !(0.0..=1.0).contains(&a) {
                return bad("train.alpha_override must be in [0, 1]");
            }
        }
        if let Some(g) = self.gating {
            if g.total_steps == 0 || !(g.steepness > 0.0) {
                return bad("train.gating needs total_steps > 0 and steepness > 0");
            }
        }
        self.sac.validate().map_err(TrainError::Config)?;
        self.apf.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn load_worlds(&self) -> Result<Vec<Arc<WorldSpec>>, TrainError> {
        self.arenas
            .iter()
            .map(|a| resolve_arena(a).map(Arc::new).map_err(|e| TrainError::Config(format!("arena {a}: {e}"))))
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("divergence at step {step}: {source}")]
    Divergence { step: u64, source: SacError },
    #[error("fusion failed at step {step}: {source}")]
    Fusion { step: u64, source: FusionError },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl TrainError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, TrainError::Divergence { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub episode: u64,
    pub mean_path_len: f64,
    pub min_path_len: f64,
    pub max_path_len: f64,
    pub success_rate: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub const CSV_HEADER: &'static str = "step,episode,mean_path_len,min,max,success_rate,alpha";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for p in &self.points {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                p.step, p.episode, p.mean_path_len, p.min_path_len, p.max_path_len, p.success_rate, p.alpha
            );
        }
        s
    }

    /// First evaluation step at which success reaches `rate`.
    pub fn first_step_reaching(&self, rate: f64) -> Option<u64> {
        self.points.iter().find(|p| p.success_rate >= rate).map(|p| p.step)
    }
}

/// One executed exploration step, recorded when [`TrainOptions::record`] is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub alpha: f64,
    pub policy: DiagGaussian2,
    pub prior: DiagGaussian2,
    pub executed: DiagGaussian2,
    pub action: [f64; 2],
    pub position: [f64; 2],
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub record: bool,
    /// Every episode starts from this (arena index, reset seed).
    pub fixed_episode: Option<(usize, u64)>,
    /// Stop after this many finished episodes.
    pub max_episodes: Option<u64>,
    /// Skip periodic evaluation.
    pub skip_eval: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub mode: Mode,
    pub seed: u64,
    pub agent: SacAgent,
    pub curve: LearningCurve,
    pub steps: u64,
    pub episodes: u64,
    pub demo_count: usize,
    pub log: Vec<StepLog>,
}

#[derive(Debug, Clone, Copy)]
enum Gate {
    Policy,
    Fused(Option<f64>),
}

/// Deterministic evaluation of an actor's mean action.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub path_lengths: Vec<f64>,
    pub successes: usize,
}

impl EvalSummary {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.path_lengths.len().max(1) as f64
    }
}

/// Path length assigned to a failed episode: the farthest the robot can
/// travel before timing out.
pub fn path_length_cap(world: &WorldSpec) -> f64 {
    world.max_steps as f64 * world.v_max * world.dt
}

/// Held-out `(arena index, reset seed)` pairs for evaluation episode `k`.
pub fn eval_episode(k: usize, n_worlds: usize) -> (usize, u64) {
    (k % n_worlds, rng::derive_seed(EVAL_MASTER, &format!("eval.{k}")))
}

pub fn evaluate_actor(actor: &Mlp, worlds: &[Arc<WorldSpec>], episodes: usize) -> Result<EvalSummary, TrainError> {
    let mut lens = Vec::with_capacity(episodes);
    let mut successes = 0;
    for k in 0..episodes {
        let (wi, seed) = eval_episode(k, worlds.len());
        let world = &worlds[wi];
        let mut env = NavEnv::new(world.clone(), seed).map_err(|e| TrainError::Config(e.to_string()))?;
        let reason = loop {
            let a = actor_distribution(actor, &env.observation().to_array()).mean();
            let r = env.step(a);
            if r.done {
                break r.done_reason;
            }
        };
        if reason == DoneReason::Goal {
            successes += 1;
            lens.push(env.path_length());
        } else {
            lens.push(path_length_cap(world));
        }
    }
    Ok(EvalSummary { path_lengths: lens, successes })
}

/// Rolls out the deterministic prior and stores its transitions as demos.
pub fn fill_demos<R: Rng + ?Sized>(
    buffer: &mut ReplayBuffer,
    apf: &ApfConfig,
    worlds: &[Arc<WorldSpec>],
    episodes: usize,
    rng: &mut R,
) -> Result<usize, TrainError> {
    let mut stored = 0;
    for _ in 0..episodes {
        let world = &worlds[rng.gen_range(0..worlds.len())];
        let mut env = NavEnv::new(world.clone(), rng.gen()).map_err(|e| TrainError::Config(e.to_string()))?;
        loop {
            let obs = env.observation().to_array();
            let a = apf_action(env.scan(), env.goal_bearing(), apf).action;
            let r = env.step(a);
            buffer.push(Transition {
                obs,
                action: a,
                reward: r.reward,
                next_obs: r.observation.to_array(),
                done: matches!(r.done_reason, DoneReason::Goal | DoneReason::Collision),
                source: Source::Demo,
            });
            stored += 1;
            if r.done {
                break;
            }
        }
    }
    Ok(stored)
}

/// Exploration distribution for one step and the gating weight used.
fn exploration_distribution(
    gate: Gate,
    schedule: &GatingSchedule,
    step: u64,
    policy: &DiagGaussian2,
    prior: &DiagGaussian2,
) -> Result<(DiagGaussian2, f64), FusionError> {
    match gate {
        Gate::Policy => Ok((*policy, 0.0)),
        Gate::Fused(fixed) => {
            let alpha = fixed.unwrap_or_else(|| schedule.alpha_at(step));
            Ok((gaussfuse::fuse_gated(policy, prior, alpha)?, alpha))
        }
    }
}

pub fn train_one(config: &TrainConfig, seed: u64) -> Result<TrainOutcome, TrainError> {
    train_with(config, seed, &TrainOptions::default())
}

pub fn train_with(config: &TrainConfig, seed: u64, opts: &TrainOptions) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let worlds = config.load_worlds()?;
    let schedule = config.schedule();
    let gate = match config.mode {
        Mode::Mcf => Gate::Fused(config.alpha_override),
        Mode::NoGating => Gate::Fused(Some(config.alpha_override.unwrap_or(0.5))),
        Mode::E2e | Mode::DemoBuffer => Gate::Policy,
    };
    let mut agent = SacAgent::new(config.sac.clone(), seed);
    let mut buffer = ReplayBuffer::new(config.sac.buffer_capacity);
    let mut ep_rng = rng::stream(seed, "train.episode");
    let mut act_rng = rng::stream(seed, "train.action");
    let mut upd_rng = rng::stream(seed, "train.update");

    let demo_count = if config.mode == Mode::DemoBuffer {
        let mut demo_rng = rng::stream(seed, "train.demo");
        fill_demos(&mut buffer, &config.apf, &worlds, config.demo_episodes, &mut demo_rng)?
    } else {
        0
    };

    let next_episode = |ep_rng: &mut rng::StreamRng| -> Result<NavEnv, TrainError> {
        let (wi, reset_seed) = match opts.fixed_episode {
            Some(f) => f,
            None => (ep_rng.gen_range(0..worlds.len()), ep_rng.gen()),
        };
        NavEnv::new(worlds[wi].clone(), reset_seed).map_err(|e| TrainError::Config(e.to_string()))
    };

    let mut env = next_episode(&mut ep_rng)?;
    let mut curve = LearningCurve::default();
    let mut log = Vec::new();
    let mut episodes = 0u64;
    let mut last_alpha = match gate {
        Gate::Policy => 0.0,
        Gate::Fused(Some(a)) => a,
        Gate::Fused(None) => schedule.alpha_at(0),
    };
    let mut steps = 0u64;
    for t in 0..config.total_steps {
        let obs = env.observation().to_array();
        let policy = agent.policy_distribution(&obs);
        let prior = prior_distribution_train(env.scan(), env.goal_bearing(), &config.apf);
        let (executed, alpha) = exploration_distribution(gate, &schedule, t, &policy, &prior)
            .map_err(|source| TrainError::Fusion { step: t, source })?;
        last_alpha = alpha;
        let action = gaussfuse::sample(&executed, &mut act_rng);
        let r = env.step(action);
        if opts.record {
            log.push(StepLog { step: t, alpha, policy, prior, executed, action, position: env.state().position() });
        }
        buffer.push(Transition {
            obs,
            action,
            reward: r.reward,
            next_obs: r.observation.to_array(),
            done: matches!(r.done_reason, DoneReason::Goal | DoneReason::Collision),
            source: Source::Agent,
        });
        steps = t + 1;
        if steps > config.sac.warmup_steps && buffer.len() >= config.sac.batch_size {
            for _ in 0..config.sac.updates_per_step {
                let idx = if config.mode == Mode::DemoBuffer {
                    buffer.sample_stratified(config.sac.batch_size, &mut upd_rng)
                } else {
                    buffer.sample_indices(config.sac.batch_size, &mut upd_rng)
                };
                agent.update(&buffer, &idx, &mut upd_rng).map_err(|source| TrainError::Divergence { step: steps, source })?;
            }
        }
        if r.done {
            episodes += 1;
            if !opts.skip_eval && episodes % config.eval_every_episodes == 0 {
                let ev = evaluate_actor(&agent.actor, &worlds, config.eval_episodes)?;
                let lens = &ev.path_lengths;
                let point = CurvePoint {
                    step: steps,
                    episode: episodes,
                    mean_path_len: lens.iter().sum::<f64>() / lens.len().max(1) as f64,
                    min_path_len: lens.iter().copied().fold(f64::INFINITY, f64::min),
                    max_path_len: lens.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    success_rate: ev.success_rate(),
                    alpha,
                };
                log::debug!("{} seed {seed} step {steps}: success {:.2} alpha {alpha:.3}", config.mode, point.success_rate);
                curve.points.push(point);
            }
            if opts.max_episodes.is_some_and(|m| episodes >= m) {
                break;
            }
            env = next_episode(&mut ep_rng)?;
        }
    }
    info!("{} seed {seed}: {steps} steps, {episodes} episodes, final alpha {last_alpha:.4}", config.mode);
    Ok(TrainOutcome { mode: config.mode, seed, agent, curve, steps, episodes, demo_count, log })
}

/// Across-seed statistics at each evaluation index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregatePoint {
    pub step: u64,
    pub mean_path_len: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    pub success_mean: f64,
    pub success_var: f64,
    pub seeds: usize,
}

/// Averages curves point by point, truncating to the shortest curve. The
/// reported step is the across-seed mean step, rounded down.
pub fn aggregate_curves(curves: &[&LearningCurve]) -> Vec<AggregatePoint> {
    let n = curves.iter().map(|c| c.points.len()).min().unwrap_or(0);
    let k = curves.len();
    (0..n)
        .map(|i| {
            let pts: Vec<&CurvePoint> = curves.iter().map(|c| &c.points[i]).collect();
            let kf = k as f64;
            let lens: Vec<f64> = pts.iter().map(|p| p.mean_path_len).collect();
            let succ: Vec<f64> = pts.iter().map(|p| p.success_rate).collect();
            let success_mean = succ.iter().sum::<f64>() / kf;
            AggregatePoint {
                step: pts.iter().map(|p| p.step).sum::<u64>() / k as u64,
                mean_path_len: lens.iter().sum::<f64>() / kf,
                band_lo: lens.iter().copied().fold(f64::INFINITY, f64::min),
                band_hi: lens.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                success_mean,
                success_var: succ.iter().map(|s| (s - success_mean).powi(2)).sum::<f64>() / kf,
                seeds: k,
            }
        })
        .collect()
}

pub fn aggregate_csv(points: &[AggregatePoint]) -> String {
    let mut s = String::from("step,mean_path_len,band_lo,band_hi,success_mean,success_var,seeds\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            p.step, p.mean_path_len, p.band_lo, p.band_hi, p.success_mean, p.success_var, p.seeds
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberEntry {
    pub dir: String,
    pub seed: u64,
    pub status: String,
    pub steps: u64,
    pub episodes: u64,
    pub final_success: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub git_revision: String,
    pub config_hash: String,
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub members: Vec<MemberEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ACTOR_FILE: &str = "actor.ckpt";
pub const CURVE_FILE: &str = "curve.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

pub fn member_dir_name(index: usize) -> String {
    format!("member_{index:02}")
}

/// Comment line prepended to CSV artifacts.
pub fn provenance_comment(config_hash: &str) -> String {
    format!("# mcf {} config {config_hash}\n", tool_version())
}

pub fn tool_version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

pub fn git_revision() -> String {
    option_env!("MCF_GIT_REVISION").unwrap_or("unknown").to_string()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.to_path_buf(), source }
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<(), TrainError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

/// Result of one mode of a suite.
#[derive(Debug)]
pub struct SuiteRun {
    pub mode: Mode,
    pub dir: PathBuf,
    pub outcomes: Vec<Result<TrainOutcome, TrainError>>,
    pub aggregate: Vec<AggregatePoint>,
}

/// Runs every (mode, seed) pair and writes a bundle directory per mode:
/// `member_XX/{actor.ckpt,curve.csv}`, `aggregate.csv` and `manifest.json`.
/// With a single mode the bundle is `out` itself, otherwise `out/<mode>`.
/// Failed runs are recorded in the manifest and skipped.
pub fn train_suite(
    base: &TrainConfig,
    modes: &[Mode],
    out: &Path,
    config_hash: &str,
    workers: usize,
) -> Result<Vec<SuiteRun>, TrainError> {
    base.validate()?;
    let jobs: Vec<(Mode, usize, u64)> = modes
        .iter()
        .flat_map(|m| base.seeds.iter().enumerate().map(move |(i, s)| (*m, i, *s)))
        .collect();
    let results = run_jobs(base, &jobs, workers.max(1));
    let mut runs = Vec::new();
    let mut results = results.into_iter();
    for &mode in modes {
        let dir = if modes.len() == 1 { out.to_path_buf() } else { out.join(mode.name()) };
        let mut outcomes = Vec::new();
        let mut members = Vec::new();
        for (i, &seed) in base.seeds.iter().enumerate() {
            let res = results.next().expect("one result per job");
            let name = member_dir_name(i);
            let entry = match &res {
                Ok(o) => {
                    let mdir = dir.join(&name);
                    let mut ckpt = Vec::new();
                    o.agent.actor.write_checkpoint(&mut ckpt).map_err(|e| TrainError::Config(e.to_string()))?;
                    write_file(&mdir.join(ACTOR_FILE), &ckpt)?;
                    let csv = provenance_comment(config_hash) + &o.curve.to_csv();
                    write_file(&mdir.join(CURVE_FILE), csv.as_bytes())?;
                    MemberEntry {
                        dir: name,
                        seed,
                        status: "ok".into(),
                        steps: o.steps,
                        episodes: o.episodes,
                        final_success: o.curve.points.last().map(|p| p.success_rate),
                    }
                }
                Err(e) => {
                    warn!("{mode} seed {seed} failed: {e}");
                    MemberEntry { dir: name, seed, status: format!("failed: {e}"), steps: 0, episodes: 0, final_success: None }
                }
            };
            members.push(entry);
            outcomes.push(res);
        }
        let curves: Vec<&LearningCurve> = outcomes.iter().filter_map(|r| r.as_ref().ok()).map(|o| &o.curve).collect();
        let aggregate = aggregate_curves(&curves);
        let csv = provenance_comment(config_hash) + &aggregate_csv(&aggregate);
        write_file(&dir.join(AGGREGATE_FILE), csv.as_bytes())?;
        let manifest = RunManifest {
            tool_version: tool_version(),
            git_revision: git_revision(),
            config_hash: config_hash.to_string(),
            mode,
            seeds: base.seeds.clone(),
            members,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_file(&dir.join(MANIFEST_FILE), json.as_bytes())?;
        runs.push(SuiteRun { mode, dir, outcomes, aggregate });
    }
    Ok(runs)
}

/// Runs jobs on up to `workers` threads; results come back in job order.
fn run_jobs(base: &TrainConfig, jobs: &[(Mode, usize, u64)], workers: usize) -> Vec<Result<TrainOutcome, TrainError>> {
    let run = |&(mode, _, seed): &(Mode, usize, u64)| {
        let cfg = TrainConfig { mode, ..base.clone() };
        train_one(&cfg, seed)
    };
    if workers <= 1 || jobs.len() <= 1 {
        return jobs.iter().map(run).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<TrainOutcome, TrainError>>>> =
        jobs.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers.min(jobs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let r = run(&jobs[i]);
                *slots[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("result slot").expect("every job ran")).collect()
}

/// Visit counts on a regular grid over the arena bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub resolution: f64,
    pub origin: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    pub counts: Vec<u64>,
}

impl Heatmap {
    pub fn new(world: &WorldSpec, resolution: f64) -> Self {
        let nx = (world.bounds.width() * resolution).ceil().max(1.0) as usize;
        let ny = (world.bounds.height() * resolution).ceil().max(1.0) as usize;
        Heatmap { resolution, origin: [world.bounds.min_x, world.bounds.min_y], nx, ny, counts: vec![0; nx * ny] }
    }

    pub fn add(&mut self, p: [f64; 2]) {
        let i = (((p[0] - self.origin[0]) * self.resolution).floor().max(0.0) as usize).min(self.nx - 1);
        let j = (((p[1] - self.origin[1]) * self.resolution).floor().max(0.0) as usize).min(self.ny - 1);
        self.counts[j * self.nx + i] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Rows `i,j,count` for every cell, `i` along x.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j,count\n");
        for j in 0..self.ny {
            for i in 0..self.nx {
                let _ = writeln!(s, "{i},{j},{}", self.counts[j * self.nx + i]);
            }
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct Exploration {
    pub heatmap: Heatmap,
    pub visits: Vec<[f64; 2]>,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub prior_path: Vec<[f64; 2]>,
}

impl Exploration {
    /// Fraction of visits within `radius` of the prior's deterministic path.
    pub fn fraction_near_prior_path(&self, radius: f64) -> f64 {
        fraction(&self.visits, |p| polyline_distance(&self.prior_path, p) <= radius)
    }

    /// Fraction of visits within `radius` of the start region.
    pub fn fraction_near_region(&self, region: &crate::simenv::Rect, radius: f64) -> f64 {
        fraction(&self.visits, |p| region.distance_to_point(p) <= radius)
    }
}

fn fraction(points: &[[f64; 2]], pred: impl Fn([f64; 2]) -> bool) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    points.iter().filter(|p| pred(**p)).count() as f64 / points.len() as f64
}

fn polyline_distance(path: &[[f64; 2]], p: [f64; 2]) -> f64 {
    match path {
        [] => f64::INFINITY,
        [only] => (p[0] - only[0]).hypot(p[1] - only[1]),
        _ => path
            .windows(2)
            .map(|w| crate::simenv::Segment::new(w[0], w[1]).distance_to_point(p))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Deterministic prior rollout from a fixed episode; returns visited positions.
pub fn prior_path(world: &Arc<WorldSpec>, reset_seed: u64, apf: &ApfConfig) -> Result<Vec<[f64; 2]>, TrainError> {
    let mut env = NavEnv::new(world.clone(), reset_seed).map_err(|e| TrainError::Config(e.to_string()))?;
    let mut path = vec![env.state().position()];
    loop {
        let a = apf_action(env.scan(), env.goal_bearing(), apf).action;
        let r = env.step(a);
        path.push(env.state().position());
        if r.done {
            return Ok(path);
        }
    }
}

/// Early-training exploration from a fixed start and goal: runs the
/// configured mode for `episodes` episodes on `config.arenas[0]` and counts
/// visited positions.
pub fn exploration_heatmap(
    config: &TrainConfig,
    seed: u64,
    reset_seed: u64,
    episodes: u64,
    resolution: f64,
) -> Result<Exploration, TrainError> {
    let worlds = config.load_worlds()?;
    let world = worlds[0].clone();
    let mut heatmap = Heatmap::new(&world, resolution);
    let env = NavEnv::new(world.clone(), reset_seed).map_err(|e| TrainError::Config(e.to_string()))?;
    let (start, goal) = (env.start(), env.goal());
    let path = prior_path(&world, reset_seed, &config.apf)?;
    if episodes == 0 {
        return Ok(Exploration { heatmap, visits: Vec::new(), start, goal, prior_path: path });
    }
    let opts = TrainOptions { record: true, fixed_episode: Some((0, reset_seed)), max_episodes: Some(episodes), skip_eval: true };
    let out = train_with(config, seed, &opts)?;
    let visits: Vec<[f64; 2]> = out.log.iter().map(|l| l.position).collect();
    for p in &visits {
        heatmap.add(*p);
    }
    Ok(Exploration { heatmap, visits, start, goal, prior_path: path })
}
