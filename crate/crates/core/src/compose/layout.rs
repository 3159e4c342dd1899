use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary multi-channel scene structure plus a compact scene descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub width: usize,
    pub height: usize,
    pub channel_names: Vec<String>,
    /// One row-major `height × width` grid of 0/1 values per channel.
    pub channels: Vec<Vec<u8>>,
    pub descriptor: Vec<f64>,
}

impl SceneLayout {
    pub fn new(
        width: usize,
        height: usize,
        channel_names: Vec<String>,
        channels: Vec<Vec<u8>>,
        descriptor: Vec<f64>,
    ) -> Result<Self> {
        if channel_names.len() != channels.len() {
            return Err(Error::InvalidArgument("one name per channel required".into()));
        }
        for c in &channels {
            if c.len() != width * height {
                return Err(Error::shape("scene_layout", format!("channel has {} pixels, expected {}", c.len(), width * height)));
            }
            if c.iter().any(|&v| v > 1) {
                return Err(Error::InvalidArgument("scene channels must be binary".into()));
            }
        }
        Ok(Self { width, height, channel_names, channels, descriptor })
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }
}

/// Binary object silhouette on a square canonical grid covering `[-1, 1]²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectMask {
    pub resolution: usize,
    pub grid: Vec<u8>,
    /// Tight bounding box `[x_min, y_min, x_max, y_max]` in canonical
    /// coordinates (all zero for an empty mask).
    pub bbox: [f64; 4],
}

impl ObjectMask {
    /// The outermost ring of pixels must be empty so that bilinear sampling
    /// is exactly zero outside the canonical square.
    pub fn new(resolution: usize, grid: Vec<u8>) -> Result<Self> {
        if resolution < 3 || grid.len() != resolution * resolution {
            return Err(Error::shape("object_mask", format!("{} pixels for resolution {resolution}", grid.len())));
        }
        if grid.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("object mask must be binary".into()));
        }
        let r = resolution;
        let on_border = (0..r).any(|i| grid[i] != 0 || grid[(r - 1) * r + i] != 0 || grid[i * r] != 0 || grid[i * r + r - 1] != 0);
        if on_border {
            return Err(Error::InvalidArgument("object mask must leave a one-pixel empty border".into()));
        }
        let mut bounds: Option<[usize; 4]> = None;
        for y in 0..r {
            for x in 0..r {
                if grid[y * r + x] == 1 {
                    let b = bounds.get_or_insert([x, y, x, y]);
                    b[0] = b[0].min(x);
                    b[1] = b[1].min(y);
                    b[2] = b[2].max(x);
                    b[3] = b[3].max(y);
                }
            }
        }
        let edge = |i: usize| -1.0 + 2.0 * i as f64 / r as f64;
        let bbox = bounds.map_or([0.0; 4], |[x0, y0, x1, y1]| [edge(x0), edge(y0), edge(x1 + 1), edge(y1 + 1)]);
        Ok(Self { resolution, grid, bbox })
    }

    pub fn is_empty(&self) -> bool {
        self.grid.iter().all(|&v| v == 0)
    }

    pub fn half_width(&self) -> f64 {
        (self.bbox[2] - self.bbox[0]) / 2.0
    }

    pub fn half_height(&self) -> f64 {
        (self.bbox[3] - self.bbox[1]) / 2.0
    }

    /// Object box on the canvas under placement `(s, v, h)`:
    /// `[x_min, y_min, x_max, y_max]`.
    pub fn placed_box(&self, s: f64, v: f64, h: f64) -> [f64; 4] {
        [h + s * self.bbox[0], v + s * self.bbox[1], h + s * self.bbox[2], v + s * self.bbox[3]]
    }

    /// Canvas y of the object's bottom edge.
    pub fn bottom(&self, s: f64, v: f64) -> f64 {
        v + s * self.bbox[3]
    }
}

/// Scene channels with occluded pixels cleared, followed by the object
/// channel. Values lie in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeLayout<T> {
    pub width: usize,
    pub height: usize,
    pub channels: Vec<Vec<T>>,
}

impl<T: Copy> CompositeLayout<T> {
    pub fn object_channel(&self) -> &[T] {
        self.channels.last().expect("object channel")
    }
}
