//! Placement-to-pixels machinery: the affine placement matrix, the
//! differentiable mask warp, composite layouts and previews.

mod composite;
mod layout;
mod preview;
mod warp;

pub use composite::{composite, composite_node, SceneTensors};
pub use layout::{CompositeLayout, ObjectMask, SceneLayout};
pub use preview::render_preview;
pub use warp::{affine_matrix, kink_distance, warp_mask, warp_mask_node, AffineMatrix};
