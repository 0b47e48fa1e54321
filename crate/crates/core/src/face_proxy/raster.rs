//! Z-buffered triangle rasterizer with Gouraud colours, used to render
//! synthetic faces.

use crate::geometry::{Camera, Vec2, Vec3, MIN_DEPTH};
use crate::mesh_io::{Image, Mask, RgbImage};

pub struct Raster {
    pub image: RgbImage,
    pub mask: Mask,
    pub depth: Image<f64>,
}

fn edge(a: &Vec2, b: &Vec2, p: &Vec2) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Renders triangles with per-vertex colours, sampling at pixel centres with
/// perspective-correct interpolation.
pub fn rasterize(
    vertices: &[Vec3],
    triangles: &[[usize; 3]],
    colors: &[Vec3],
    camera: &Camera,
    background: Vec3,
) -> Raster {
    let (w, h) = (camera.width, camera.height);
    let mut image = RgbImage::filled(w, h, background.into());
    let mut mask = Mask::filled(w, h, false);
    let mut depth = Image::filled(w, h, f64::INFINITY);
    let cam: Vec<Vec3> = vertices.iter().map(|v| camera.to_camera(v)).collect();
    for tri in triangles {
        let pc = tri.map(|i| cam[i]);
        if pc.iter().any(|p| p.z <= MIN_DEPTH) {
            continue;
        }
        let q = pc.map(|p| {
            Vec2::new(
                camera.fx * p.x / p.z + camera.cx,
                camera.fy * p.y / p.z + camera.cy,
            )
        });
        let area = edge(&q[0], &q[1], &q[2]);
        if area.abs() < 1e-14 {
            continue;
        }
        let lo = |k: usize| q.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
        let hi = |k: usize| q.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (lo(0) - 0.5).ceil().max(0.0) as u32;
        let y0 = (lo(1) - 0.5).ceil().max(0.0) as u32;
        let x1 = ((hi(0) - 0.5).floor().min(w as f64 - 1.0)).max(-1.0);
        let y1 = ((hi(1) - 0.5).floor().min(h as f64 - 1.0)).max(-1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        for y in y0..=y1 as u32 {
            for x in x0..=x1 as u32 {
                let p = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
                let b = [
                    edge(&q[1], &q[2], &p) / area,
                    edge(&q[2], &q[0], &p) / area,
                    edge(&q[0], &q[1], &p) / area,
                ];
                if b.iter().any(|&v| v < -1e-12) {
                    continue;
                }
                let inv: [f64; 3] = std::array::from_fn(|k| b[k] / pc[k].z);
                let s = inv.iter().sum::<f64>();
                let z = 1.0 / s;
                if z >= *depth.get(x, y) {
                    continue;
                }
                let c = (0..3).fold(Vec3::zeros(), |acc, k| acc + colors[tri[k]] * (inv[k] / s));
                depth.set(x, y, z);
                image.set(x, y, c.into());
                mask.set(x, y, true);
            }
        }
    }
    Raster { image, mask, depth }
}
