//! Inverse-mapping affine warp with bilinear sampling (spatial-transformer
//! style), differentiable in the placement.
//!
//! Output pixel `(i, j)` sits at normalized coordinates
//! `u = (-1 + (2j+1)/W, -1 + (2i+1)/H)`. It samples the object grid at
//! `((u_x - h)/s, (u_y - v)/s)`, converted to continuous grid indices with
//! pixel centres at integers. Samples outside the grid read zero.

use std::sync::Arc;

use super::layout::ObjectMask;
use crate::diffusion::Placement;
use crate::error::{Error, Result};
use crate::ndnet::{CustomOp, Graph, NodeId, Tensor};
use crate::scalar::Scalar;

/// `A = [[s, 0, h], [0, s, v]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineMatrix<T> {
    pub rows: [[T; 3]; 2],
}

impl<T: Scalar> AffineMatrix<T> {
    pub fn from_placement(p: Placement<T>) -> Self {
        let z = T::zero();
        Self { rows: [[p.s, z, p.h], [z, p.s, p.v]] }
    }

    /// Maps a canonical-square point onto the canvas.
    pub fn apply(&self, x: T, y: T) -> (T, T) {
        let [a, b] = self.rows;
        (a[0] * x + a[1] * y + a[2], b[0] * x + b[1] * y + b[2])
    }

    pub fn to_placement(&self) -> Placement<T> {
        Placement { s: self.rows[0][0], v: self.rows[1][2], h: self.rows[0][2] }
    }
}

pub fn affine_matrix<T: Scalar>(p: Placement<T>) -> AffineMatrix<T> {
    AffineMatrix::from_placement(p)
}

fn pixel_centre<T: Scalar>(i: usize, n: usize) -> T {
    T::lit(-1.0 + (2 * i + 1) as f64 / n as f64)
}

/// Continuous grid index for a canonical coordinate.
fn grid_coord<T: Scalar>(x: T, res: usize) -> T {
    let r = T::lit(res as f64);
    ((x + T::one()) * r - T::one()) / T::lit(2.0)
}

struct Sampler<T> {
    grid: Vec<T>,
    res: usize,
}

impl<T: Scalar> Sampler<T> {
    fn new(mask: &ObjectMask) -> Self {
        Self { grid: mask.grid.iter().map(|&v| T::lit(v as f64)).collect(), res: mask.resolution }
    }

    #[inline]
    fn at(&self, x: i64, y: i64) -> T {
        let r = self.res as i64;
        if x < 0 || y < 0 || x >= r || y >= r {
            T::zero()
        } else {
            self.grid[(y * r + x) as usize]
        }
    }

    /// Value and partial derivatives w.r.t. the grid coordinates.
    #[inline]
    fn sample(&self, gx: T, gy: T) -> (T, T, T) {
        let fx0 = gx.floor();
        let fy0 = gy.floor();
        let (x0, y0) = (fx0.to_i64().unwrap_or(i64::MIN / 2), fy0.to_i64().unwrap_or(i64::MIN / 2));
        let (fx, fy) = (gx - fx0, gy - fy0);
        let p00 = self.at(x0, y0);
        let p01 = self.at(x0 + 1, y0);
        let p10 = self.at(x0, y0 + 1);
        let p11 = self.at(x0 + 1, y0 + 1);
        let one = T::one();
        let top = p00 + fx * (p01 - p00);
        let bottom = p10 + fx * (p11 - p10);
        let value = top + fy * (bottom - top);
        let dgx = (one - fy) * (p01 - p00) + fy * (p11 - p10);
        let dgy = bottom - top;
        (value, dgx, dgy)
    }
}

fn check_scale<T: Scalar>(p: &Placement<T>) -> Result<()> {
    if !(p.s > T::zero()) || !p.is_finite() {
        return Err(Error::NonPositiveScale(p.s.as_f64()));
    }
    Ok(())
}

/// Source grid coordinates per output column and row.
fn source_coords<T: Scalar>(p: &Placement<T>, res: usize, width: usize, height: usize) -> (Vec<T>, Vec<T>) {
    let gx = (0..width).map(|j| grid_coord((pixel_centre::<T>(j, width) - p.h) / p.s, res)).collect();
    let gy = (0..height).map(|i| grid_coord((pixel_centre::<T>(i, height) - p.v) / p.s, res)).collect();
    (gx, gy)
}

/// Warps `mask` onto a `width × height` canvas; row-major output in `[0, 1]`.
pub fn warp_mask<T: Scalar>(mask: &ObjectMask, p: Placement<T>, width: usize, height: usize) -> Result<Vec<T>> {
    check_scale(&p)?;
    let sampler = Sampler::<T>::new(mask);
    let (gx, gy) = source_coords(&p, mask.resolution, width, height);
    let mut out = Vec::with_capacity(width * height);
    for &y in &gy {
        for &x in &gx {
            out.push(sampler.sample(x, y).0);
        }
    }
    Ok(out)
}

/// Distance of the nearest source coordinate to a grid line (integer grid
/// index), where the bilinear interpolant has kinks.
pub fn kink_distance<T: Scalar>(mask: &ObjectMask, p: Placement<T>, width: usize, height: usize) -> f64 {
    let (gx, gy) = source_coords(&p, mask.resolution, width, height);
    gx.iter()
        .chain(&gy)
        .map(|g| {
            let f = g.as_f64();
            (f - f.round()).abs()
        })
        .fold(f64::INFINITY, f64::min)
}

struct WarpOp {
    mask: Arc<ObjectMask>,
    width: usize,
    height: usize,
}

impl<T: Scalar> CustomOp<T> for WarpOp {
    fn name(&self) -> &'static str {
        "warp_mask"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad_out: &Tensor<T>) -> Vec<Tensor<T>> {
        let x = inputs[0].data();
        let p = Placement::new(x[0], x[1], x[2]);
        let sampler = Sampler::<T>::new(&self.mask);
        let (gx, gy) = source_coords(&p, self.mask.resolution, self.width, self.height);
        let half_res = T::lit(self.mask.resolution as f64 / 2.0);
        let inv_s = T::one() / p.s;
        // source canonical coordinate back from the grid index: sx = (2g + 1)/R - 1
        let canon = |g: T| (T::lit(2.0) * g + T::one()) / T::lit(self.mask.resolution as f64) - T::one();
        let (mut ds, mut dv, mut dh) = (T::zero(), T::zero(), T::zero());
        let g = grad_out.data();
        for (i, &y) in gy.iter().enumerate() {
            let sy = canon(y);
            for (j, &xg) in gx.iter().enumerate() {
                let up = g[i * self.width + j];
                if up == T::zero() {
                    continue;
                }
                let (_, dgx, dgy) = sampler.sample(xg, y);
                if dgx == T::zero() && dgy == T::zero() {
                    continue;
                }
                let sx = canon(xg);
                let ax = up * dgx * half_res;
                let ay = up * dgy * half_res;
                dh -= ax * inv_s;
                dv -= ay * inv_s;
                ds -= (ax * sx + ay * sy) * inv_s;
            }
        }
        let mut d = Tensor::zeros(inputs[0].shape().to_vec());
        d.data_mut().copy_from_slice(&[ds, dv, dh]);
        vec![d]
    }
}

/// Differentiable warp: `placement` must hold `[s, v, h]` (shape `[3]` or
/// `[1, 3]`); the result has shape `[1, height·width]`.
pub fn warp_mask_node<T: Scalar>(
    g: &mut Graph<T>,
    placement: NodeId,
    mask: Arc<ObjectMask>,
    width: usize,
    height: usize,
) -> Result<NodeId> {
    let pv = g.value(placement);
    if pv.len() != 3 {
        return Err(Error::shape("warp_mask", format!("placement node has shape {:?}", pv.shape())));
    }
    let p = Placement::new(pv.data()[0], pv.data()[1], pv.data()[2]);
    let values = warp_mask(&mask, p, width, height)?;
    let out = Tensor::new(vec![1, width * height], values)?;
    g.custom(&[placement], out, Box::new(WarpOp { mask, width, height }))
}
