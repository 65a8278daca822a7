//! Deterministic 2D goal-navigation world: a disc robot with unicycle
//! kinematics, a 180 degree raycast lidar and a sparse goal reward.

pub mod arenas;
pub mod geometry;
pub mod world;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

pub use arenas::{builtin_arena, builtin_arenas, resolve_arena, unseen_arena, ARENA_NAMES};
pub use geometry::{wrap_angle, Circle, Rect, Segment};
pub use world::{ArenaError, LidarSpec, WorldSpec, LIDAR_BEAMS, LIDAR_BINS, OBS_DIM};

use crate::rng::{self, StreamRng};

const SAMPLE_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    /// Heading, always in `(-pi, pi]`.
    pub theta: f64,
    pub prev_action: [f64; 2],
    pub steps: u32,
}

impl RobotState {
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub lidar_bins: [f64; LIDAR_BINS],
    pub angle_to_goal: f64,
    pub dist_to_goal: f64,
    pub prev_v: f64,
    pub prev_w: f64,
}

impl Observation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        let mut out = [0.0; OBS_DIM];
        out[..LIDAR_BINS].copy_from_slice(&self.lidar_bins);
        out[LIDAR_BINS] = self.angle_to_goal;
        out[LIDAR_BINS + 1] = self.dist_to_goal;
        out[LIDAR_BINS + 2] = self.prev_v;
        out[LIDAR_BINS + 3] = self.prev_w;
        out
    }

    pub fn from_array(a: &[f64; OBS_DIM]) -> Self {
        let mut lidar_bins = [0.0; LIDAR_BINS];
        lidar_bins.copy_from_slice(&a[..LIDAR_BINS]);
        Observation {
            lidar_bins,
            angle_to_goal: a[LIDAR_BINS],
            dist_to_goal: a[LIDAR_BINS + 1],
            prev_v: a[LIDAR_BINS + 2],
            prev_w: a[LIDAR_BINS + 3],
        }
    }

    /// True when every component is finite and inside its documented range.
    pub fn in_range(&self) -> bool {
        let unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        let sym = |v: f64| v.is_finite() && (-1.0..=1.0).contains(&v);
        self.lidar_bins.iter().all(|b| unit(*b))
            && sym(self.angle_to_goal)
            && unit(self.dist_to_goal)
            && sym(self.prev_v)
            && sym(self.prev_w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    Running,
    Goal,
    Collision,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub done_reason: DoneReason,
}

/// Bearing of beam `i` relative to the heading. Written as `(i - 89.5) * step`
/// so that beams `i` and `179 - i` are exact mirror images.
pub fn beam_bearing(i: usize) -> f64 {
    (i as f64 - (LIDAR_BEAMS as f64 - 1.0) / 2.0) * PI / (LIDAR_BEAMS as f64 - 1.0)
}

fn sample_in<R: Rng>(region: &Rect, rng: &mut R) -> [f64; 2] {
    [
        rng.gen_range(region.min_x..=region.max_x),
        rng.gen_range(region.min_y..=region.max_y),
    ]
}

fn sample_free<R: Rng>(world: &WorldSpec, region: &Rect, what: &'static str, rng: &mut R) -> Result<[f64; 2], ArenaError> {
    for _ in 0..SAMPLE_ATTEMPTS {
        let p = sample_in(region, rng);
        if world.is_free(p) {
            return Ok(p);
        }
    }
    Err(ArenaError::Sampling { what, attempts: SAMPLE_ATTEMPTS })
}

/// Samples a start pose and goal. Deterministic in `seed`.
pub fn reset(world: &WorldSpec, seed: u64) -> Result<(RobotState, [f64; 2], Observation), ArenaError> {
    let mut rng = rng::stream(seed, "env.reset");
    let start = sample_free(world, &world.start_region, "start", &mut rng)?;
    let goal = sample_free(world, &world.goal_region, "goal", &mut rng)?;
    let theta = PI - rng.gen::<f64>() * 2.0 * PI;
    let state = RobotState { x: start[0], y: start[1], theta, prev_action: [0.0, 0.0], steps: 0 };
    let obs = make_observation(&state, goal, &lidar_scan(&state, world), world);
    Ok((state, goal, obs))
}

/// Noiseless 180-beam range scan, capped at the lidar's max range.
pub fn lidar_scan(state: &RobotState, world: &WorldSpec) -> Vec<f64> {
    let origin = state.position();
    let max = world.lidar.max_range;
    (0..LIDAR_BEAMS)
        .map(|i| {
            let a = state.theta + beam_bearing(i);
            let dir = [a.cos(), a.sin()];
            let walls = world.all_segments().filter_map(|s| s.ray_hit(origin, dir));
            let circles = world.circles.iter().filter_map(|c| c.ray_hit(origin, dir));
            walls.chain(circles).fold(max, f64::min)
        })
        .collect()
}

/// Adds `N(0, sigma^2)` to every beam, keeping ranges in `(0, max_range]`.
pub fn add_range_noise<R: Rng + ?Sized>(scan: &mut [f64], sigma: f64, max_range: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    for r in scan.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *r = (*r + sigma * n).clamp(1e-6, max_range);
    }
}

pub fn lidar_scan_noisy<R: Rng + ?Sized>(state: &RobotState, world: &WorldSpec, rng: &mut R) -> Vec<f64> {
    let mut scan = lidar_scan(state, world);
    add_range_noise(&mut scan, world.lidar.noise_sigma, world.lidar.max_range, rng);
    scan
}

/// Signed bearing from the heading to the goal, in `(-pi, pi]`.
pub fn goal_bearing(state: &RobotState, goal: [f64; 2]) -> f64 {
    wrap_angle((goal[1] - state.y).atan2(goal[0] - state.x) - state.theta)
}

pub fn goal_distance(state: &RobotState, goal: [f64; 2]) -> f64 {
    (goal[0] - state.x).hypot(goal[1] - state.y)
}

/// Min-pools the scan into 15 bins and appends goal bearing, goal distance and
/// the previous action.
pub fn make_observation(state: &RobotState, goal: [f64; 2], scan: &[f64], world: &WorldSpec) -> Observation {
    assert_eq!(scan.len(), LIDAR_BEAMS, "scan must have {LIDAR_BEAMS} beams");
    let per_bin = LIDAR_BEAMS / LIDAR_BINS;
    let max = world.lidar.max_range;
    let mut lidar_bins = [0.0; LIDAR_BINS];
    for (j, bin) in lidar_bins.iter_mut().enumerate() {
        let m = scan[j * per_bin..(j + 1) * per_bin].iter().copied().fold(f64::INFINITY, f64::min);
        *bin = (m / max).clamp(0.0, 1.0);
    }
    Observation {
        lidar_bins,
        angle_to_goal: goal_bearing(state, goal) / PI,
        dist_to_goal: (goal_distance(state, goal) / world.bounds.diagonal()).clamp(0.0, 1.0),
        prev_v: state.prev_action[0],
        prev_w: state.prev_action[1],
    }
}

/// True when the disc robot at `p` overlaps an obstacle or the bounds.
pub fn in_collision(world: &WorldSpec, p: [f64; 2]) -> bool {
    !world.bounds.contains(p) || world.clearance(p) < world.robot_radius
}

/// Advances the robot one control period. The observation in the result is
/// built from a noiseless scan; [`NavEnv`] swaps in a noisy one when enabled.
pub fn step(state: &RobotState, action: [f64; 2], world: &WorldSpec, goal: [f64; 2]) -> (RobotState, StepResult) {
    let (next, reason) = advance(state, action, world, goal);
    let scan = lidar_scan(&next, world);
    let obs = make_observation(&next, goal, &scan, world);
    (next, result_for(obs, reason))
}

fn advance(state: &RobotState, action: [f64; 2], world: &WorldSpec, goal: [f64; 2]) -> (RobotState, DoneReason) {
    debug_assert!(action[0].is_finite() && action[1].is_finite());
    let v = action[0].clamp(-1.0, 1.0);
    let w = action[1].clamp(-1.0, 1.0);
    let mut next = *state;
    next.x += v * world.v_max * state.theta.cos() * world.dt;
    next.y += v * world.v_max * state.theta.sin() * world.dt;
    next.theta = wrap_angle(state.theta + w * world.w_max * world.dt);
    next.prev_action = [v, w];
    next.steps = state.steps + 1;

    let reason = if in_collision(world, next.position()) {
        DoneReason::Collision
    } else if goal_distance(&next, goal) < world.goal_threshold {
        DoneReason::Goal
    } else if next.steps >= world.max_steps {
        DoneReason::Timeout
    } else {
        DoneReason::Running
    };
    (next, reason)
}

fn result_for(observation: Observation, reason: DoneReason) -> StepResult {
    StepResult {
        observation,
        reward: if reason == DoneReason::Goal { 1.0 } else { 0.0 },
        done: reason != DoneReason::Running,
        done_reason: reason,
    }
}

/// Single-owner environment instance: the pure functions above plus episode
/// bookkeeping and the sensor-noise stream.
#[derive(Debug, Clone)]
pub struct NavEnv {
    world: Arc<WorldSpec>,
    state: RobotState,
    start: [f64; 2],
    goal: [f64; 2],
    scan: Vec<f64>,
    obs: Observation,
    noise: StreamRng,
    path_length: f64,
    done: bool,
}

impl NavEnv {
    pub fn new(world: Arc<WorldSpec>, seed: u64) -> Result<Self, ArenaError> {
        let (state, goal, obs) = reset(&world, seed)?;
        let mut env = NavEnv {
            scan: Vec::new(),
            start: state.position(),
            world,
            state,
            goal,
            obs,
            noise: rng::stream(seed, "env.noise"),
            path_length: 0.0,
            done: false,
        };
        env.refresh_sensors();
        Ok(env)
    }

    /// Starts a new episode from `seed`.
    pub fn reset(&mut self, seed: u64) -> Result<Observation, ArenaError> {
        *self = NavEnv::new(self.world.clone(), seed)?;
        Ok(self.obs)
    }

    fn refresh_sensors(&mut self) {
        self.scan = lidar_scan_noisy(&self.state, &self.world, &mut self.noise);
        self.obs = make_observation(&self.state, self.goal, &self.scan, &self.world);
    }

    pub fn step(&mut self, action: [f64; 2]) -> StepResult {
        assert!(!self.done, "step called on a finished episode");
        let before = self.state.position();
        let (next, reason) = advance(&self.state, action, &self.world, self.goal);
        self.path_length += (next.x - before[0]).hypot(next.y - before[1]);
        self.state = next;
        self.done = reason != DoneReason::Running;
        self.refresh_sensors();
        result_for(self.obs, reason)
    }

    pub fn world(&self) -> &Arc<WorldSpec> {
        &self.world
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    pub fn start(&self) -> [f64; 2] {
        self.start
    }

    pub fn scan(&self) -> &[f64] {
        &self.scan
    }

    pub fn observation(&self) -> &Observation {
        &self.obs
    }

    /// Goal bearing in radians, as consumed by the potential-field prior.
    pub fn goal_bearing(&self) -> f64 {
        goal_bearing(&self.state, self.goal)
    }

    pub fn path_length(&self) -> f64 {
        self.path_length
    }

    pub fn is_done(&self) -> bool {
        self.done
    }
}
