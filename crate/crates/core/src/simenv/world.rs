use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

use super::geometry::{Circle, Rect, Segment};

pub const LIDAR_BEAMS: usize = 180;
pub const LIDAR_BINS: usize = 15;
pub const OBS_DIM: usize = LIDAR_BINS + 4;

#[derive(Debug, Error)]
pub enum ArenaError {
    #[error("arena JSON parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid arena field `{field}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Invalid { field: String, line: Option<usize>, message: String },
    #[error("could not sample a free {what} position after {attempts} attempts")]
    Sampling { what: &'static str, attempts: usize },
    #[error("unknown arena `{0}`")]
    Unknown(String),
    #[error("reading arena file {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarSpec {
    pub beams: usize,
    pub fov: f64,
    pub max_range: f64,
    #[serde(default)]
    pub noise_sigma: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self { beams: LIDAR_BEAMS, fov: PI, max_range: 4.0, noise_sigma: 0.0 }
    }
}

fn default_goal_threshold() -> f64 {
    0.2
}

fn default_max_steps() -> u32 {
    500
}

/// Static 2D arena geometry plus robot and sensor parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    #[serde(default)]
    pub name: String,
    pub bounds: Rect,
    #[serde(default)]
    pub walls: Vec<Segment>,
    #[serde(default)]
    pub circles: Vec<Circle>,
    pub start_region: Rect,
    pub goal_region: Rect,
    pub robot_radius: f64,
    pub lidar: LidarSpec,
    pub dt: f64,
    pub v_max: f64,
    pub w_max: f64,
    #[serde(default = "default_goal_threshold")]
    pub goal_threshold: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
}

impl WorldSpec {
    pub fn from_json_str(src: &str) -> Result<Self, ArenaError> {
        let world: WorldSpec = serde_json::from_str(src).map_err(|e| ArenaError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        world.validate().map_err(|e| match e {
            ArenaError::Invalid { field, message, .. } => {
                let line = line_of_key(src, &field);
                ArenaError::Invalid { field, line, message }
            }
            other => other,
        })?;
        Ok(world)
    }

    pub fn load(path: &Path) -> Result<Self, ArenaError> {
        let src = std::fs::read_to_string(path).map_err(|source| ArenaError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&src)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("world specs always serialize")
    }

    /// Longest side of the bounds.
    pub fn arena_length(&self) -> f64 {
        self.bounds.width().max(self.bounds.height())
    }

    /// Interior walls followed by the four boundary edges.
    pub fn all_segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.walls.iter().copied().chain(self.bounds.edges())
    }

    /// Distance from `p` to the nearest obstacle surface, including the bounds.
    pub fn clearance(&self, p: [f64; 2]) -> f64 {
        let walls = self.all_segments().map(|s| s.distance_to_point(p));
        let circles = self.circles.iter().map(|c| c.surface_distance(p));
        walls.chain(circles).fold(f64::INFINITY, f64::min)
    }

    pub fn is_free(&self, p: [f64; 2]) -> bool {
        self.bounds.contains(p) && self.clearance(p) >= self.robot_radius
    }

    pub fn validate(&self) -> Result<(), ArenaError> {
        let invalid = |field: &str, message: String| ArenaError::Invalid {
            field: field.to_string(),
            line: None,
            message,
        };
        if !self.bounds.is_well_formed() {
            return Err(invalid("bounds", "bounds must be a non-empty finite rectangle".into()));
        }
        for (i, w) in self.walls.iter().enumerate() {
            if !w.a.iter().chain(w.b.iter()).all(|v| v.is_finite()) {
                return Err(invalid("walls", format!("wall {i} has non-finite coordinates")));
            }
        }
        for (i, c) in self.circles.iter().enumerate() {
            if !(c.radius > 0.0 && c.center.iter().all(|v| v.is_finite())) {
                return Err(invalid("circles", format!("circle {i} needs a finite center and positive radius")));
            }
        }
        if !(self.robot_radius > 0.0) {
            return Err(invalid("robot_radius", format!("must be positive, got {}", self.robot_radius)));
        }
        if self.lidar.beams != LIDAR_BEAMS {
            return Err(invalid("lidar", format!("beams must be {LIDAR_BEAMS}, got {}", self.lidar.beams)));
        }
        if (self.lidar.fov - PI).abs() > 1e-9 {
            return Err(invalid("lidar", format!("fov must be pi, got {}", self.lidar.fov)));
        }
        if !(self.lidar.max_range > 0.0) || !(self.lidar.noise_sigma >= 0.0) {
            return Err(invalid("lidar", "max_range must be positive and noise_sigma non-negative".into()));
        }
        for (field, v) in [("dt", self.dt), ("v_max", self.v_max), ("w_max", self.w_max), ("goal_threshold", self.goal_threshold)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(field, format!("must be positive, got {v}")));
            }
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps", "must be positive".into()));
        }
        let inner = self.bounds.shrink(self.robot_radius);
        for (field, region) in [("start_region", &self.start_region), ("goal_region", &self.goal_region)] {
            if !region.is_well_formed() {
                return Err(invalid(field, "region must be a non-empty finite rectangle".into()));
            }
            if !inner.contains_rect(region) {
                return Err(invalid(field, "region must lie inside the bounds, inset by the robot radius".into()));
            }
            for (i, w) in self.walls.iter().enumerate() {
                if w.distance_to_rect(region) < self.robot_radius {
                    return Err(invalid(field, format!("region overlaps inflated wall {i}")));
                }
            }
            for (i, c) in self.circles.iter().enumerate() {
                if region.distance_to_point(c.center) - c.radius < self.robot_radius {
                    return Err(invalid(field, format!("region overlaps inflated circle {i}")));
                }
            }
        }
        Ok(())
    }
}

fn line_of_key(src: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    src.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simenv::arenas::builtin_arena;

    #[test]
    fn json_round_trip_of_builtin() {
        let w = builtin_arena("dead_end").unwrap();
        let back = WorldSpec::from_json_str(&w.to_json_pretty()).unwrap();
        assert_eq!(w, back);
    }

    #[test]
    fn parse_error_reports_line() {
        let src = "{\n  \"bounds\": [0, 0, 8, 4],\n  \"walls\": [[1, 2, 3]]\n}";
        match WorldSpec::from_json_str(src) {
            Err(ArenaError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&builtin_arena("open").unwrap().to_json_pretty()).unwrap();
        v["colour"] = serde_json::json!("red");
        let err = WorldSpec::from_json_str(&serde_json::to_string_pretty(&v).unwrap()).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
    }

    #[test]
    fn invalid_field_reports_line() {
        let w = builtin_arena("open").unwrap();
        let src = w.to_json_pretty().replace("\"dt\": 0.1", "\"dt\": -0.1");
        match WorldSpec::from_json_str(&src) {
            Err(ArenaError::Invalid { field, line: Some(line), .. }) => {
                assert_eq!(field, "dt");
                assert!(src.lines().nth(line - 1).unwrap().contains("\"dt\""));
            }
            other => panic!("expected invalid-field error, got {other:?}"),
        }
    }

    #[test]
    fn blocked_region_rejected() {
        let mut w = builtin_arena("open").unwrap();
        w.circles.push(Circle::new(w.start_region.center(), 0.3));
        assert!(matches!(w.validate(), Err(ArenaError::Invalid { ref field, .. }) if field == "start_region"));
    }
}
