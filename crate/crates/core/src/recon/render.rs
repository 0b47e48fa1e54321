//! Full-image rendering of a trained model.

use rayon::prelude::*;

use super::model::{ReconModel, RENDER_SEGMENT};
use crate::error::Result;
use crate::geometry::Camera;
use crate::mesh_io::{GrayImage, Image, Mask, RgbImage};
use crate::sdf::{sdf_normal, DistanceField};
use crate::tracer::{render_color, sphere_trace, TracerConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    /// Network colour at hit pixels, black elsewhere.
    pub color: RgbImage,
    /// Ray parameter of the hit, 0 at misses.
    pub depth: GrayImage,
    pub hit: Mask,
}

impl RenderedView {
    /// Depth rescaled to [0, 1] over the hit pixels for display; misses stay 0.
    pub fn depth_display(&self) -> GrayImage {
        let hits = self
            .depth
            .data
            .iter()
            .zip(&self.hit.data)
            .filter(|(_, &h)| h)
            .map(|(&d, _)| d);
        let (lo, hi) = hits.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), d| {
            (a.min(d), b.max(d))
        });
        let span = (hi - lo).max(1e-12);
        let mut out = self.depth.clone();
        for (d, &h) in out.data.iter_mut().zip(&self.hit.data) {
            *d = if h { 1.0 - 0.8 * (*d - lo) / span } else { 0.0 };
        }
        out
    }
}

/// Traces one ray per pixel centre through `camera`.
pub fn render_view(
    model: &ReconModel,
    values: &[f64],
    camera: &Camera,
    tracer: &TracerConfig,
) -> Result<RenderedView> {
    let field = model.field(values);
    let o = model.offset(RENDER_SEGMENT);
    let render = &values[o..o + model.render.n_params()];
    let pixels: Vec<(u32, u32)> = (0..camera.height)
        .flat_map(|y| (0..camera.width).map(move |x| (x, y)))
        .collect();
    let shaded = pixels
        .par_iter()
        .map(|&(x, y)| {
            let ray = camera.pixel_center_ray(x, y);
            let hit = sphere_trace(&field, &ray, tracer);
            if !hit.hit {
                return Ok(None);
            }
            let n = match sdf_normal(&field, &hit.x) {
                Ok(n) => n,
                Err(_) => return Ok(None),
            };
            let (_, z) = field.eval_feature(&hit.x);
            let c = render_color(&model.render, render, &hit.x, &ray.dir, &n, &z)?;
            Ok(Some(([c.x, c.y, c.z], hit.t)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = (camera.width, camera.height);
    Ok(RenderedView {
        color: Image::from_fn(w, h, |x, y| {
            shaded[(y * w + x) as usize].map_or([0.0; 3], |s| s.0)
        }),
        depth: Image::from_fn(w, h, |x, y| {
            shaded[(y * w + x) as usize].map_or(0.0, |s| s.1)
        }),
        hit: Image::from_fn(w, h, |x, y| shaded[(y * w + x) as usize].is_some()),
    })
}

/// Peak signal-to-noise ratio in dB over the pixels where `mask` is set,
/// for colours in [0, 1].
pub fn psnr(a: &RgbImage, b: &RgbImage, mask: &Mask) -> Result<f64> {
    a.size_check(b, "compared image")?;
    a.size_check(mask, "mask")?;
    let (mut se, mut n) = (0.0, 0usize);
    for ((p, q), &m) in a.data.iter().zip(&b.data).zip(&mask.data) {
        if m {
            se += (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>();
            n += 3;
        }
    }
    if n == 0 {
        return Err(crate::Error::EmptyBatch("psnr pixels"));
    }
    Ok(-10.0 * (se / n as f64).max(1e-300).log10())
}
