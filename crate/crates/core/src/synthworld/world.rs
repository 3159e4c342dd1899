use rand::Rng;
use serde::{Deserialize, Serialize};

use super::oracle::OracleRule;
use crate::compose::{ObjectMask, SceneLayout};
use crate::error::{Error, Result};

pub const CHANNEL_NAMES: [&str; 3] = ["sky", "ground", "obstacle"];
pub const SKY: usize = 0;
pub const GROUND: usize = 1;
pub const OBSTACLE: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub width: usize,
    pub height: usize,
    pub horizon_min: f64,
    pub horizon_max: f64,
    pub obstacles_min: usize,
    pub obstacles_max: usize,
    pub object_resolution: usize,
    pub oracle: OracleRule,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            horizon_min: -0.5,
            horizon_max: 0.5,
            obstacles_min: 0,
            obstacles_max: 3,
            object_resolution: 32,
            oracle: OracleRule::default(),
        }
    }
}

impl WorldConfig {
    /// Checks ranges; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::InvalidArgument(format!("{field}: {why}")));
        if self.width == 0 || self.height == 0 {
            return bad("width/height", "must be positive");
        }
        if !(-0.5..=0.5).contains(&self.horizon_min) || !(-0.5..=0.5).contains(&self.horizon_max) || self.horizon_min > self.horizon_max {
            return bad("horizon_min/horizon_max", "must satisfy -0.5 <= min <= max <= 0.5");
        }
        if self.obstacles_min > self.obstacles_max {
            return bad("obstacles_min", "exceeds obstacles_max");
        }
        if self.object_resolution < 8 {
            return bad("object_resolution", "must be at least 8");
        }
        self.oracle.validate()
    }
}

/// Geometric description of a generated scene; the layout is its raster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub id: String,
    /// Normalized y of the horizon (y grows downward); ground is `[horizon, 1]`.
    pub horizon: f64,
    /// Obstacle boxes `[x_min, y_min, x_max, y_max]`.
    pub obstacles: Vec<[f64; 4]>,
}

fn pixel_centre(i: usize, n: usize) -> f64 {
    -1.0 + (2 * i + 1) as f64 / n as f64
}

fn inside(b: &[f64; 4], x: f64, y: f64) -> bool {
    x >= b[0] && x <= b[2] && y >= b[1] && y <= b[3]
}

impl SceneSpec {
    /// Rasterizes into sky / ground / obstacle channels. Every pixel is
    /// active in exactly one channel.
    pub fn rasterize(&self, width: usize, height: usize) -> Result<SceneLayout> {
        let n = width * height;
        let mut channels = vec![vec![0u8; n]; 3];
        for i in 0..height {
            let y = pixel_centre(i, height);
            for j in 0..width {
                let x = pixel_centre(j, width);
                let k = if self.obstacles.iter().any(|b| inside(b, x, y)) {
                    OBSTACLE
                } else if y < self.horizon {
                    SKY
                } else {
                    GROUND
                };
                channels[k][i * width + j] = 1;
            }
        }
        let frac = |c: &[u8]| c.iter().filter(|&&v| v == 1).count() as f64 / n as f64;
        let descriptor = vec![
            self.horizon,
            self.obstacles.len() as f64,
            frac(&channels[OBSTACLE]),
            frac(&channels[GROUND]),
        ];
        SceneLayout::new(width, height, CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(), channels, descriptor)
    }
}

/// Random horizon and depth-consistent obstacle boxes in the ground band.
pub fn gen_scene<R: Rng + ?Sized>(id: &str, cfg: &WorldConfig, rng: &mut R) -> Result<(SceneSpec, SceneLayout)> {
    cfg.validate()?;
    let horizon = if cfg.horizon_min == cfg.horizon_max {
        cfg.horizon_min
    } else {
        rng.random_range(cfg.horizon_min..=cfg.horizon_max)
    };
    let count = rng.random_range(cfg.obstacles_min..=cfg.obstacles_max);
    let mut obstacles = Vec::with_capacity(count);
    for _ in 0..count {
        let bottom = rng.random_range(horizon + 0.1 * (1.0 - horizon)..=1.0);
        let depth = (bottom - horizon) / (1.0 - horizon);
        let h = (0.15 + 0.45 * depth) * rng.random_range(0.7..1.2);
        let top = (bottom - h).max(horizon);
        let w = rng.random_range(0.2..0.55) * (0.5 + depth);
        let cx = rng.random_range(-0.9..0.9);
        obstacles.push([(cx - w / 2.0).max(-1.0), top, (cx + w / 2.0).min(1.0), bottom]);
    }
    let spec = SceneSpec { id: id.to_string(), horizon, obstacles };
    let layout = spec.rasterize(cfg.width, cfg.height)?;
    Ok((spec, layout))
}

/// Silhouette families for the object library.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Pedestrian,
    Car,
    Crate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub id: String,
    pub kind: ObjectKind,
    pub mask: ObjectMask,
}

/// Draws a silhouette on a `res × res` canonical grid, leaving the border
/// ring empty.
pub fn gen_object<R: Rng + ?Sized>(id: &str, kind: ObjectKind, res: usize, rng: &mut R) -> Result<ObjectEntry> {
    let mut grid = vec![0u8; res * res];
    let jitter = rng.random_range(0.9..1.0);
    for i in 1..res - 1 {
        let y = pixel_centre(i, res);
        for j in 1..res - 1 {
            let x = pixel_centre(j, res);
            let on = match kind {
                // head disc over an elliptical body
                ObjectKind::Pedestrian => {
                    let head = x * x + (y + 0.7 * jitter).powi(2) < 0.04;
                    let body = (x / (0.32 * jitter)).powi(2) + ((y - 0.15) / 0.8).powi(2) < 1.0;
                    head || body
                }
                // wide body with a cabin on top
                ObjectKind::Car => {
                    let body = x.abs() < 0.9 * jitter && y > -0.1 && y < 0.55;
                    let cabin = x.abs() < 0.5 * jitter && y > -0.45 && y <= -0.1;
                    body || cabin
                }
                ObjectKind::Crate => x.abs() < 0.6 * jitter && y.abs() < 0.6 * jitter,
            };
            grid[i * res + j] = u8::from(on);
        }
    }
    Ok(ObjectEntry { id: id.to_string(), kind, mask: ObjectMask::new(res, grid)? })
}

pub fn gen_object_library<R: Rng + ?Sized>(count: usize, res: usize, rng: &mut R) -> Result<Vec<ObjectEntry>> {
    const KINDS: [ObjectKind; 3] = [ObjectKind::Pedestrian, ObjectKind::Car, ObjectKind::Crate];
    (0..count).map(|k| gen_object(&format!("object-{k:02}"), KINDS[k % KINDS.len()], res, rng)).collect()
}
