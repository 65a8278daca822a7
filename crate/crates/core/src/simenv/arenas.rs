//! Hand-authored arena library.
//!
//! All arenas share an 8 m x 4 m footprint with the start region against the
//! left wall and the goal region against the right wall.

use std::path::Path;

use super::geometry::{Circle, Rect, Segment};
use super::world::{ArenaError, LidarSpec, WorldSpec};

/// Training arenas in order of increasing clutter.
pub const ARENA_NAMES: [&str; 5] = ["open", "scattered", "wall_gaps", "dead_end", "corridor"];

/// Held out from training.
pub const UNSEEN_NAME: &str = "unseen";

fn base(name: &str) -> WorldSpec {
    WorldSpec {
        name: name.to_string(),
        bounds: Rect::new(0.0, 0.0, 8.0, 4.0),
        walls: Vec::new(),
        circles: Vec::new(),
        start_region: Rect::new(0.4, 0.5, 0.9, 3.5),
        goal_region: Rect::new(7.1, 0.5, 7.6, 3.5),
        robot_radius: 0.15,
        lidar: LidarSpec::default(),
        dt: 0.1,
        v_max: 0.5,
        w_max: 1.0,
        goal_threshold: 0.2,
        max_steps: 500,
    }
}

fn seg(x1: f64, y1: f64, x2: f64, y2: f64) -> Segment {
    Segment::new([x1, y1], [x2, y2])
}

fn circ(x: f64, y: f64, r: f64) -> Circle {
    Circle::new([x, y], r)
}

pub fn builtin_arena(name: &str) -> Result<WorldSpec, ArenaError> {
    let mut w = base(name);
    match name {
        "open" => {}
        "scattered" => {
            w.circles = vec![
                circ(2.6, 1.2, 0.35),
                circ(3.3, 2.9, 0.35),
                circ(4.3, 1.8, 0.4),
                circ(5.6, 1.0, 0.35),
                circ(5.7, 3.0, 0.3),
            ];
        }
        "wall_gaps" => {
            w.walls = vec![seg(3.0, 0.0, 3.0, 1.3), seg(5.0, 2.7, 5.0, 4.0)];
        }
        "dead_end" => {
            // A pocket opening toward the start: attraction pulls the robot in,
            // the back wall stops it.
            w.walls = vec![
                seg(5.0, 0.9, 5.0, 3.1),
                seg(3.4, 0.9, 5.0, 0.9),
                seg(3.4, 3.1, 5.0, 3.1),
            ];
        }
        "corridor" => {
            w.walls = vec![seg(1.6, 1.3, 6.4, 1.3), seg(1.6, 2.7, 6.4, 2.7)];
        }
        "unseen" => {
            w.walls = vec![seg(2.4, 0.0, 3.2, 1.6), seg(5.6, 4.0, 4.8, 2.4)];
            w.circles = vec![circ(4.0, 1.4, 0.3), circ(6.3, 1.2, 0.3)];
        }
        other => return Err(ArenaError::Unknown(other.to_string())),
    }
    Ok(w)
}

/// The five training arenas.
pub fn builtin_arenas() -> Vec<WorldSpec> {
    ARENA_NAMES
        .iter()
        .map(|n| builtin_arena(n).expect("builtin arena names are valid"))
        .collect()
}

pub fn unseen_arena() -> WorldSpec {
    builtin_arena(UNSEEN_NAME).expect("unseen arena is builtin")
}

/// Resolves a builtin name or a path to an arena JSON file.
pub fn resolve_arena(name_or_path: &str) -> Result<WorldSpec, ArenaError> {
    match builtin_arena(name_or_path) {
        Ok(w) => Ok(w),
        Err(ArenaError::Unknown(_)) if name_or_path.ends_with(".json") || Path::new(name_or_path).exists() => {
            WorldSpec::load(Path::new(name_or_path))
        }
        Err(e) => Err(e),
    }
}
