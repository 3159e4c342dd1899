//! Sample-quality measures for placement generators: judged accuracy,
//! per-axis diversity, and a Fréchet distance between placement clouds.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::compose::{warp_mask, ObjectMask};
use crate::diffusion::Placement;
use crate::error::{Error, Result};

/// Summary written by evaluation commands. Key names are fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub fpd: f64,
    pub ds: f64,
    pub dh: f64,
    pub dv: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

/// Fraction of `judged` that is `true`.
pub fn accuracy(judged: &[bool]) -> Result<f64> {
    if judged.is_empty() {
        return Err(Error::Undefined("accuracy of an empty set".into()));
    }
    Ok(judged.iter().filter(|&&j| j).count() as f64 / judged.len() as f64)
}

/// Sample standard deviation. Values are shifted by the first one, so a
/// constant group gives exactly zero.
fn sample_std(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let first = xs.clone().next().unwrap_or(0.0);
    let xs = xs.map(|x| x - first);
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    (xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// `(Δs, Δh, Δv)`: per-group sample standard deviation of each axis,
/// averaged over groups. Every group needs at least two samples.
pub fn diversity_deltas(groups: &[Vec<Placement<f64>>]) -> Result<(f64, f64, f64)> {
    if groups.is_empty() {
        return Err(Error::Undefined("no groups".into()));
    }
    let (mut ds, mut dh, mut dv) = (0.0, 0.0, 0.0);
    for g in groups {
        if g.len() < 2 {
            return Err(Error::Undefined(format!("group of size {} has no spread", g.len())));
        }
        ds += sample_std(g.iter().map(|p| p.s));
        dh += sample_std(g.iter().map(|p| p.h));
        dv += sample_std(g.iter().map(|p| p.v));
    }
    let k = groups.len() as f64;
    Ok((ds / k, dh / k, dv / k))
}

fn moments(xs: &[Placement<f64>]) -> (Vector3<f64>, Matrix3<f64>) {
    let n = xs.len() as f64;
    let v = |p: &Placement<f64>| Vector3::new(p.s, p.v, p.h);
    let mean = xs.iter().map(v).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in xs {
        let d = v(p) - mean;
        cov += d * d.transpose();
    }
    (mean, cov / (n - 1.0))
}

fn psd_sqrt(m: Matrix3<f64>) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(m);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    eig.eigenvectors * Matrix3::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Gaussian Fréchet distance `‖μ_A − μ_B‖² + Tr(C_A + C_B − 2(C_A C_B)^{1/2})`
/// between two placement sets, with `1e-6·I` added to each covariance.
///
/// The square root of `C_A C_B` is taken as `√C_A (√C_A C_B √C_A)^{1/2} √C_A⁻¹`,
/// whose trace equals `Tr((√C_A C_B √C_A)^{1/2})`; the inner matrix is
/// symmetric, so a symmetric eigendecomposition suffices.
pub fn frechet_placement_distance(a: &[Placement<f64>], b: &[Placement<f64>]) -> Result<f64> {
    if a.len() < 4 || b.len() < 4 {
        return Err(Error::Undefined(format!("need at least 4 samples per set, got {} and {}", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("placement set".into()));
    }
    let reg = Matrix3::identity() * 1e-6;
    let (ma, ca) = moments(a);
    let (mb, cb) = moments(b);
    let (ca, cb) = (ca + reg, cb + reg);
    let ra = psd_sqrt(ca);
    let inner = ra * cb * ra;
    let inner = (inner + inner.transpose()) * 0.5;
    let cross = psd_sqrt(inner).trace();
    let d = (ma - mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Intersection over union of two masks binarized at 0.5. Two empty masks
/// have IoU 0.
pub fn mask_iou(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("mask_iou", format!("{} vs {}", a.len(), b.len())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x >= 0.5, y >= 0.5);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// IoU of two objects warped onto the same `width × height` canvas. A
/// placement with non-positive scale contributes an empty mask.
pub fn warped_mask_iou(
    a: (&ObjectMask, Placement<f64>),
    b: (&ObjectMask, Placement<f64>),
    width: usize,
    height: usize,
) -> Result<f64> {
    let warp = |(m, p): (&ObjectMask, Placement<f64>)| -> Result<Vec<f64>> {
        if p.s > 0.0 && p.is_finite() {
            warp_mask(m, p, width, height)
        } else {
            Ok(vec![0.0; width * height])
        }
    };
    mask_iou(&warp(a)?, &warp(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_of_eight() {
        let j = [true, false, true, false, false, true, false, false];
        assert_eq!(accuracy(&j).unwrap(), 0.375);
        assert!(accuracy(&[]).is_err());
    }

    #[test]
    fn two_sample_stdev() {
        let g = vec![Placement::new(0.1, 0.0, 0.0), Placement::new(0.3, 0.0, 0.0)];
        let (ds, dh, dv) = diversity_deltas(&[g]).unwrap();
        assert!((ds - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!((dh, dv), (0.0, 0.0));
    }

    #[test]
    fn singleton_group_rejected() {
        assert!(diversity_deltas(&[vec![Placement::new(0.1, 0.0, 0.0)]]).is_err());
    }
}
