use std::sync::Arc;

use super::layout::{CompositeLayout, ObjectMask, SceneLayout};
use super::warp::{warp_mask, warp_mask_node};
use crate::diffusion::Placement;
use crate::error::{Error, Result};
use crate::ndnet::{Graph, NodeId, Tensor};
use crate::scalar::Scalar;

/// Pastes the warped object onto the scene; the object clears every scene
/// channel in proportion to its coverage.
pub fn composite<T: Scalar>(scene: &SceneLayout, obj: &ObjectMask, p: Placement<T>) -> Result<CompositeLayout<T>> {
    let (w, h) = (scene.width, scene.height);
    let object = warp_mask(obj, p, w, h)?;
    let mut channels: Vec<Vec<T>> = scene
        .channels
        .iter()
        .map(|c| c.iter().zip(&object).map(|(&sv, &m)| T::lit(sv as f64) * (T::one() - m)).collect())
        .collect();
    channels.push(object);
    Ok(CompositeLayout { width: w, height: h, channels })
}

/// Scene channels as constant tensors, cached for repeated differentiable
/// composition against the same scene.
#[derive(Clone)]
pub struct SceneTensors<T> {
    pub width: usize,
    pub height: usize,
    pub channels: Vec<Arc<Tensor<T>>>,
}

impl<T: Scalar> SceneTensors<T> {
    pub fn new(scene: &SceneLayout) -> Result<Self> {
        let channels = scene
            .channels
            .iter()
            .map(|c| {
                Tensor::new(vec![1, c.len()], c.iter().map(|&v| T::lit(v as f64)).collect()).map(Arc::new)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { width: scene.width, height: scene.height, channels })
    }
}

/// Records the composite as one flattened `[1, (C+1)·H·W]` node, channel
/// major, with the object channel last.
pub fn composite_node<T: Scalar>(
    g: &mut Graph<T>,
    scene: &SceneTensors<T>,
    obj: Arc<ObjectMask>,
    placement: NodeId,
) -> Result<NodeId> {
    if scene.channels.is_empty() {
        return Err(Error::InvalidArgument("scene has no channels".into()));
    }
    let m = warp_mask_node(g, placement, obj, scene.width, scene.height)?;
    let keep = g.affine(m, -T::one(), T::one())?;
    let mut parts = Vec::with_capacity(scene.channels.len() + 1);
    for c in &scene.channels {
        parts.push(g.mul_const(keep, c.clone())?);
    }
    parts.push(m);
    g.concat(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_channel_scene() -> SceneLayout {
        let (w, h) = (8, 8);
        let top: Vec<u8> = (0..w * h).map(|i| u8::from(i < w * h / 2)).collect();
        let bottom: Vec<u8> = top.iter().map(|&v| 1 - v).collect();
        SceneLayout::new(w, h, vec!["sky".into(), "ground".into()], vec![top, bottom], vec![]).unwrap()
    }

    #[test]
    fn empty_object_leaves_scene_unchanged() {
        let scene = two_channel_scene();
        let obj = ObjectMask::new(4, vec![0; 16]).unwrap();
        let c = composite::<f64>(&scene, &obj, Placement::new(0.5, 0.0, 0.0)).unwrap();
        assert_eq!(c.channels.len(), 3);
        for (k, ch) in scene.channels.iter().enumerate() {
            assert!(ch.iter().zip(&c.channels[k]).all(|(&a, &b)| a as f64 == b));
        }
        assert!(c.object_channel().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_coverage_clears_scene() {
        let scene = two_channel_scene();
        let mut grid = vec![0u8; 36];
        for y in 1..5 {
            for x in 1..5 {
                grid[y * 6 + x] = 1;
            }
        }
        let obj = ObjectMask::new(6, grid).unwrap();
        let c = composite::<f64>(&scene, &obj, Placement::new(1.0, 0.0, 0.0)).unwrap();
        // canvas centre pixel (row 4, col 4) is deep inside the object
        let idx = 4 * 8 + 4;
        assert_eq!(c.object_channel()[idx], 1.0);
        assert_eq!(c.channels[0][idx], 0.0);
        assert_eq!(c.channels[1][idx], 0.0);
    }

    #[test]
    fn node_matches_plain_composite() {
        let scene = two_channel_scene();
        let mut grid = vec![0u8; 36];
        grid[2 * 6 + 2] = 1;
        grid[3 * 6 + 3] = 1;
        let obj = Arc::new(ObjectMask::new(6, grid).unwrap());
        let p = Placement::new(0.7, 0.1, -0.2);
        let plain = composite::<f64>(&scene, &obj, p).unwrap();
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_f64(vec![3], &[p.s, p.v, p.h]).unwrap(), true);
        let st = SceneTensors::new(&scene).unwrap();
        let node = composite_node(&mut g, &st, obj, x).unwrap();
        let flat: Vec<f64> = plain.channels.concat();
        assert_eq!(g.value(node).data(), flat.as_slice());
    }
}
