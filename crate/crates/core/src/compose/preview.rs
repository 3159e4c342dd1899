use super::composite::composite;
use super::layout::{ObjectMask, SceneLayout};
use crate::diffusion::Placement;
use crate::error::{Error, Result};

const PALETTE: [[u8; 3]; 6] = [
    [135, 190, 235], // sky
    [105, 105, 105], // ground
    [150, 90, 50],   // obstacle
    [60, 150, 70],
    [200, 180, 60],
    [120, 80, 160],
];
const OBJECT: [f64; 3] = [230.0, 40.0, 40.0];

/// Colour-coded RGB PNG: one colour per scene channel with the warped object
/// blended on top in red.
pub fn render_preview(scene: &SceneLayout, obj: &ObjectMask, p: Placement<f64>) -> Result<Vec<u8>> {
    if scene.width == 0 || scene.height == 0 {
        return Err(Error::InvalidArgument("cannot render an empty scene".into()));
    }
    let comp = composite(scene, obj, p)?;
    let object = comp.object_channel();
    let mut rgb = Vec::with_capacity(scene.width * scene.height * 3);
    for px in 0..scene.width * scene.height {
        let base = scene
            .channels
            .iter()
            .position(|c| c[px] == 1)
            .map_or([0.0; 3], |k| PALETTE[k % PALETTE.len()].map(f64::from));
        let a = object[px];
        for k in 0..3 {
            rgb.push((base[k] * (1.0 - a) + OBJECT[k] * a).round().clamp(0.0, 255.0) as u8);
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, scene.width as u32, scene.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        w.write_image_data(&rgb).map_err(|e| Error::Png(e.to_string()))?;
        w.finish().map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}
