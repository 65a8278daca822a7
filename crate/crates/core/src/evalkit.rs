//! Shortest-path reference via grid A*, the SPL metric, and method
//! comparison reports.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deploy::{run_episode, Controller, DeployConfig, DeployError, EnsembleBundle};
use crate::prior_apf::ApfConfig;
use crate::rng;
use crate::simenv::WorldSpec;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no path from {start:?} to {goal:?}")]
    Unreachable { start: [f64; 2], goal: [f64; 2] },
    #[error("SPL of an empty episode list is undefined")]
    EmptyEpisodes,
    #[error("invalid episode {index}: shortest length {p}, traveled {l}")]
    InvalidEpisode { index: usize, p: f64, l: f64 },
    #[error(transparent)]
    Deploy(#[from] DeployError),
}

/// Free/occupied cells after inflating obstacles by the robot radius. A cell
/// is free when the disc robot centered on it touches nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub resolution: f64,
    pub origin: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    pub occupied: Vec<bool>,
}

impl OccupancyGrid {
    pub fn from_world(world: &WorldSpec, resolution: f64) -> Self {
        let nx = (world.bounds.width() * resolution).round().max(1.0) as usize;
        let ny = (world.bounds.height() * resolution).round().max(1.0) as usize;
        let mut g = OccupancyGrid {
            resolution,
            origin: [world.bounds.min_x, world.bounds.min_y],
            nx,
            ny,
            occupied: vec![false; nx * ny],
        };
        for j in 0..ny {
            for i in 0..nx {
                let c = g.center(i, j);
                g.occupied[j * nx + i] = !world.is_free(c);
            }
        }
        g
    }

    pub fn from_cells(nx: usize, ny: usize, resolution: f64, occupied: Vec<bool>) -> Self {
        assert_eq!(occupied.len(), nx * ny);
        OccupancyGrid { resolution, origin: [0.0, 0.0], nx, ny, occupied }
    }

    pub fn center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (i as f64 + 0.5) / self.resolution,
            self.origin[1] + (j as f64 + 0.5) / self.resolution,
        ]
    }

    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let fi = ((p[0] - self.origin[0]) * self.resolution).floor();
        let fj = ((p[1] - self.origin[1]) * self.resolution).floor();
        if fi < 0.0 || fj < 0.0 || fi >= self.nx as f64 || fj >= self.ny as f64 {
            return None;
        }
        Some((fi as usize, fj as usize))
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn is_free(&self, i: usize, j: usize) -> bool {
        !self.occupied[self.index(i, j)]
    }

    /// 8-connected moves from `idx`: `(neighbor, is_diagonal)`. Diagonal moves
    /// need both adjacent orthogonal cells free.
    pub fn neighbors(&self, idx: usize) -> impl Iterator<Item = (usize, bool)> + '_ {
        let (i, j) = ((idx % self.nx) as i64, (idx / self.nx) as i64);
        const DIRS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
        DIRS.iter().filter_map(move |&(di, dj)| {
            let (ni, nj) = (i + di, j + dj);
            let inside = |a: i64, b: i64| a >= 0 && b >= 0 && a < self.nx as i64 && b < self.ny as i64;
            if !inside(ni, nj) || !self.is_free(ni as usize, nj as usize) {
                return None;
            }
            let diag = di != 0 && dj != 0;
            if diag && (!self.is_free((i + di) as usize, j as usize) || !self.is_free(i as usize, (j + dj) as usize)) {
                return None;
            }
            Some((self.index(ni as usize, nj as usize), diag))
        })
    }
}

/// A shortest grid path. Lengths are kept as move counts so equal-length
/// paths compare exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPlan {
    pub resolution: f64,
    pub cells: Vec<(usize, usize)>,
    pub straight: u32,
    pub diagonal: u32,
    pub path_length: f64,
}

fn cost(straight: u32, diagonal: u32) -> f64 {
    straight as f64 + diagonal as f64 * SQRT_2
}

fn octile(nx: usize, a: usize, b: usize) -> f64 {
    let dx = (a % nx).abs_diff(b % nx) as f64;
    let dy = (a / nx).abs_diff(b / nx) as f64;
    dx.max(dy) + (SQRT_2 - 1.0) * dx.min(dy)
}

#[derive(PartialEq)]
struct Open {
    f: f64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    // Min-heap on f, ties to the lowest cell index.
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A* over an occupancy grid between two cells.
pub fn astar_cells(grid: &OccupancyGrid, start: (usize, usize), goal: (usize, usize)) -> Option<GridPlan> {
    if !grid.is_free(start.0, start.1) || !grid.is_free(goal.0, goal.1) {
        return None;
    }
    let n = grid.nx * grid.ny;
    let (s, g) = (grid.index(start.0, start.1), grid.index(goal.0, goal.1));
    let mut counts: Vec<Option<(u32, u32)>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    counts[s] = Some((0, 0));
    open.push(Open { f: octile(grid.nx, s, g), idx: s });
    while let Some(Open { idx, .. }) = open.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        if idx == g {
            break;
        }
        let (cs, cd) = counts[idx].expect("opened cells have a cost");
        for (nb, diag) in grid.neighbors(idx) {
            if closed[nb] {
                continue;
            }
            let cand = if diag { (cs, cd + 1) } else { (cs + 1, cd) };
            let better = match counts[nb] {
                None => true,
                Some(old) => cost(cand.0, cand.1) < cost(old.0, old.1),
            };
            if better {
                counts[nb] = Some(cand);
                parent[nb] = idx;
                open.push(Open { f: cost(cand.0, cand.1) + octile(grid.nx, nb, g), idx: nb });
            }
        }
    }
    let (straight, diagonal) = counts[g]?;
    let mut cells = vec![goal];
    let mut cur = g;
    while cur != s {
        cur = parent[cur];
        cells.push((cur % grid.nx, cur / grid.nx));
    }
    cells.reverse();
    Some(GridPlan { resolution: grid.resolution, cells, straight, diagonal, path_length: cost(straight, diagonal) / grid.resolution })
}

/// Shortest path between two points in `world`, in meters.
pub fn astar_shortest(world: &WorldSpec, start: [f64; 2], goal: [f64; 2], resolution: f64) -> Result<GridPlan, EvalError> {
    astar_on(&OccupancyGrid::from_world(world, resolution), start, goal)
}

pub fn astar_on(grid: &OccupancyGrid, start: [f64; 2], goal: [f64; 2]) -> Result<GridPlan, EvalError> {
    let unreachable = EvalError::Unreachable { start, goal };
    match (grid.cell_of(start), grid.cell_of(goal)) {
        (Some(a), Some(b)) => astar_cells(grid, a, b).ok_or(unreachable),
        _ => Err(unreachable),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplEpisode {
    pub success: bool,
    /// Traveled length.
    pub l: f64,
    /// Shortest-path length.
    pub p: f64,
}

/// Success weighted by normalized inverse path length.
pub fn spl(episodes: &[SplEpisode]) -> Result<f64, EvalError> {
    if episodes.is_empty() {
        return Err(EvalError::EmptyEpisodes);
    }
    let mut total = 0.0;
    for (index, e) in episodes.iter().enumerate() {
        if !(e.p > 0.0) || !(e.l >= 0.0) || !e.p.is_finite() || !e.l.is_finite() {
            return Err(EvalError::InvalidEpisode { index, p: e.p, l: e.l });
        }
        if e.success {
            total += e.p / e.p.max(e.l);
        }
    }
    Ok(total / episodes.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    pub resolution: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { episodes: 50, resolution: 20.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub method: String,
    pub env: String,
    pub arena: String,
    pub seed: u64,
    pub success: bool,
    pub steps: u32,
    pub l: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub env: String,
    #[serde(rename = "SPL")]
    pub spl: f64,
    pub actuation_steps: f64,
    pub successes: usize,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tool_version: String,
    pub config_hash: String,
    pub rows: Vec<ReportRow>,
    pub episodes: Vec<EpisodeResult>,
}

impl EvalReport {
    pub fn row(&self, method: &str, env: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.env == env)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| method | env | SPL | actuation_steps | successes | episodes |\n");
        s.push_str("|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {:.3} | {:.1} | {} | {} |",
                r.method, r.env, r.spl, r.actuation_steps, r.successes, r.episodes
            );
        }
        s
    }
}

/// A named group of arenas evaluated together, e.g. `train` or `unseen`.
#[derive(Debug, Clone)]
pub struct EnvGroup {
    pub label: String,
    pub worlds: Vec<Arc<WorldSpec>>,
}

/// Episode `k` of a group: `(arena index, reset seed)`. Shared by every
/// method so comparisons are paired.
pub fn eval_episode_seed(master: u64, label: &str, k: usize, n_worlds: usize) -> (usize, u64) {
    (k % n_worlds, rng::derive_seed(master, &format!("evalkit.{label}.{k}")))
}

/// Runs every method on the same episodes of every group. Failed episodes
/// count the full step cap as actuation time.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_methods(
    methods: &[Controller],
    groups: &[EnvGroup],
    bundle: Option<&EnsembleBundle>,
    apf: &ApfConfig,
    deploy: &DeployConfig,
    eval: &EvalConfig,
    config_hash: &str,
) -> Result<EvalReport, EvalError> {
    let mut rows = Vec::new();
    let mut episodes = Vec::new();
    for group in groups {
        let grids: Vec<OccupancyGrid> = group.worlds.iter().map(|w| OccupancyGrid::from_world(w, eval.resolution)).collect();
        for &method in methods {
            let mut spl_eps = Vec::with_capacity(eval.episodes);
            let mut steps_total = 0.0;
            let mut successes = 0;
            for k in 0..eval.episodes {
                let (wi, seed) = eval_episode_seed(eval.seed, &group.label, k, group.worlds.len());
                let world = &group.worlds[wi];
                let rec = run_episode(method, bundle, world, seed, apf, deploy)?;
                let plan = astar_on(&grids[wi], rec.header.start, rec.header.goal)?;
                let success = rec.success();
                successes += usize::from(success);
                steps_total += if success { rec.header.steps } else { world.max_steps } as f64;
                let ep = SplEpisode { success, l: rec.header.path_length, p: plan.path_length };
                spl_eps.push(ep);
                episodes.push(EpisodeResult {
                    method: method.name().to_string(),
                    env: group.label.clone(),
                    arena: world.name.clone(),
                    seed,
                    success,
                    steps: rec.header.steps,
                    l: ep.l,
                    p: ep.p,
                });
            }
            rows.push(ReportRow {
                method: method.name().to_string(),
                env: group.label.clone(),
                spl: spl(&spl_eps)?,
                actuation_steps: steps_total / eval.episodes as f64,
                successes,
                episodes: eval.episodes,
            });
        }
    }
    Ok(EvalReport { tool_version: crate::trainer::tool_version(), config_hash: config_hash.to_string(), rows, episodes })
}
