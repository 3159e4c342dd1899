use rand::Rng;
use serde::{Deserialize, Serialize};

use super::world::SceneSpec;
use crate::compose::ObjectMask;
use crate::diffusion::Placement;
use crate::error::{Error, Result};

/// Rule-based plausibility judge.
///
/// A placement is plausible when the object's bottom edge rests in the ground
/// band, its scale is within `tau_fraction · s*` of the depth law
/// `s*(y) = s_min + (s_max − s_min)(y − y_h)/(1 − y_h)` evaluated at the
/// bottom edge, and at most `iota` of its box is covered by obstacles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleRule {
    pub s_min: f64,
    pub s_max: f64,
    pub tau_fraction: f64,
    pub iota: f64,
    pub require_ground_contact: bool,
}

impl Default for OracleRule {
    fn default() -> Self {
        Self { s_min: 0.05, s_max: 0.45, tau_fraction: 0.35, iota: 0.15, require_ground_contact: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Violation {
    GroundContact,
    Scale,
    Overlap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: bool,
    pub reasons: Vec<Violation>,
}

impl OracleRule {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::InvalidArgument(format!("{field}: {why}")));
        if !(self.s_min > 0.0) {
            return bad("s_min", "must be positive");
        }
        if !(self.s_min < self.s_max) {
            return bad("s_max", "must exceed s_min");
        }
        if !(self.tau_fraction > 0.0) {
            return bad("tau_fraction", "must be positive");
        }
        if !(0.0..1.0).contains(&self.iota) {
            return bad("iota", "must lie in [0, 1)");
        }
        Ok(())
    }

    /// Depth–scale law at canvas height `y`.
    pub fn target_scale(&self, horizon: f64, y: f64) -> f64 {
        let f = (y - horizon) / (1.0 - horizon);
        self.s_min * (1.0 - f) + self.s_max * f
    }

    pub fn tolerance(&self, horizon: f64, y: f64) -> f64 {
        self.tau_fraction * self.target_scale(horizon, y)
    }

    pub fn label(&self, scene: &SceneSpec, obj: &ObjectMask, p: Placement<f64>) -> Verdict {
        let mut reasons = Vec::new();
        let bottom = obj.bottom(p.s, p.v);
        let grounded = bottom >= scene.horizon && bottom <= 1.0;
        if self.require_ground_contact && !grounded {
            reasons.push(Violation::GroundContact);
        }
        let target = self.target_scale(scene.horizon, bottom);
        if !p.is_finite() || !((p.s - target).abs() <= self.tau_fraction * target) {
            reasons.push(Violation::Scale);
        }
        if overlap_fraction(&obj.placed_box(p.s, p.v, p.h), &scene.obstacles) > self.iota {
            reasons.push(Violation::Overlap);
        }
        Verdict { label: reasons.is_empty(), reasons }
    }

    /// Relational rule for two objects in one scene: their boxes overlap by
    /// at most `iota` of the smaller box, and the nearer object (lower bottom
    /// edge) is not smaller.
    pub fn pair_label(&self, a: (&ObjectMask, Placement<f64>), b: (&ObjectMask, Placement<f64>)) -> bool {
        let (ma, pa) = a;
        let (mb, pb) = b;
        let ba = ma.placed_box(pa.s, pa.v, pa.h);
        let bb = mb.placed_box(pb.s, pb.v, pb.h);
        let smaller = area(&ba).min(area(&bb));
        let inter = intersection_area(&ba, &bb);
        let separated = smaller <= 0.0 || inter / smaller <= self.iota;
        let (ya, yb) = (ma.bottom(pa.s, pa.v), mb.bottom(pb.s, pb.v));
        let ordered = if ya > yb {
            pa.s >= pb.s
        } else if yb > ya {
            pb.s >= pa.s
        } else {
            true
        };
        separated && ordered
    }
}

fn area(b: &[f64; 4]) -> f64 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

fn intersection_area(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    area(&[a[0].max(b[0]), a[1].max(b[1]), a[2].min(b[2]), a[3].min(b[3])])
}

/// Fraction of `target`'s area covered by the union of `boxes`, computed
/// exactly by coordinate compression.
pub fn overlap_fraction(target: &[f64; 4], boxes: &[[f64; 4]]) -> f64 {
    let total = area(target);
    if !(total > 0.0) {
        return 0.0;
    }
    let clipped: Vec<[f64; 4]> = boxes
        .iter()
        .map(|b| [b[0].max(target[0]), b[1].max(target[1]), b[2].min(target[2]), b[3].min(target[3])])
        .filter(|b| area(b) > 0.0)
        .collect();
    if clipped.is_empty() {
        return 0.0;
    }
    let mut xs: Vec<f64> = clipped.iter().flat_map(|b| [b[0], b[2]]).collect();
    let mut ys: Vec<f64> = clipped.iter().flat_map(|b| [b[1], b[3]]).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    xs.dedup();
    ys.dedup();
    let mut covered = 0.0;
    for xw in xs.windows(2) {
        for yw in ys.windows(2) {
            let (cx, cy) = ((xw[0] + xw[1]) / 2.0, (yw[0] + yw[1]) / 2.0);
            if clipped.iter().any(|b| cx > b[0] && cx < b[2] && cy > b[1] && cy < b[3]) {
                covered += (xw[1] - xw[0]) * (yw[1] - yw[0]);
            }
        }
    }
    covered / total
}

/// Rejection-samples a placement the oracle accepts: bottom edge uniform in
/// the ground band, scale uniform within tolerance of the depth law,
/// horizontal centre uniform in `[-0.9, 0.9]`.
pub fn sample_positive_placement<R: Rng + ?Sized>(
    rule: &OracleRule,
    scene: &SceneSpec,
    obj: &ObjectMask,
    rng: &mut R,
) -> Result<Placement<f64>> {
    const MAX_TRIES: usize = 1000;
    for _ in 0..MAX_TRIES {
        let bottom = rng.random_range(scene.horizon..=1.0);
        let target = rule.target_scale(scene.horizon, bottom);
        let tol = rule.tau_fraction * target;
        let s = rng.random_range(target - tol..=target + tol);
        let h = rng.random_range(-0.9..=0.9);
        let p = Placement::new(s, bottom - s * obj.bbox[3], h);
        if p.s > 0.0 && rule.label(scene, obj, p).label {
            return Ok(p);
        }
    }
    Err(Error::Infeasible(MAX_TRIES))
}
