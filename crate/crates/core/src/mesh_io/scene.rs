//! Synthetic head scenes and the on-disk scene layout.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image::{
    load_labels, load_mask, load_orientation, load_rgb, save_labels, save_mask, save_orientation,
    save_rgb, Image, LabelMap, Mask, RgbImage,
};
use super::mesh::{export_obj, marching_cubes, sample_grid};
use crate::error::{Error, Result};
use crate::face_proxy::{landmark_points, synthetic_model, HEAD_RADIUS};
use crate::geometry::{project_3d_orientation, Camera, Vec2, Vec3};
use crate::sdf::{DistanceField, SdfField};
use crate::tracer::{sphere_trace, TracerConfig};

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_FACE: u8 = 1;
pub const LABEL_HAIR: u8 = 2;
pub const LABEL_EYES: u8 = 3;
pub const LABEL_EYEBROWS: u8 = 4;
pub const LABEL_NOSE: u8 = 5;
pub const LABEL_LIPS: u8 = 6;

/// True for labels that belong to the face region used by the proxy fit.
pub fn is_face_label(l: u8) -> bool {
    matches!(
        l,
        LABEL_FACE | LABEL_EYES | LABEL_EYEBROWS | LABEL_NOSE | LABEL_LIPS
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneShape {
    /// Sphere head with a striped torus hair cap and facial features.
    Head,
    /// Plain unit sphere, uniformly coloured.
    UnitSphere,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub shape: SceneShape,
    pub n_views: usize,
    pub width: u32,
    pub height: u32,
    pub fov_deg: f64,
    pub distance: f64,
    pub elevation_deg: f64,
    /// Random azimuth jitter per view, in degrees.
    pub jitter_deg: f64,
    /// Stripe count around the hair tube.
    pub stripes: f64,
    pub gt_resolution: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            shape: SceneShape::Head,
            n_views: 8,
            width: 64,
            height: 64,
            fov_deg: 40.0,
            distance: 3.0,
            elevation_deg: 15.0,
            jitter_deg: 3.0,
            stripes: 8.0,
            gt_resolution: 96,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0 || self.width < 2 || self.height < 2 {
            return Err(Error::InvalidConfig(
                "scene needs at least one view of 2x2 pixels".into(),
            ));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) || self.distance <= 1.0 {
            return Err(Error::InvalidConfig(
                "camera must sit outside the unit ball with a valid field of view".into(),
            ));
        }
        Ok(())
    }

    /// Cameras on a ring around the head, view 0 facing the face (−z side).
    pub fn cameras(&self, seed: u64) -> Result<Vec<Camera>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = 0.5 * self.width as f64 / (self.fov_deg.to_radians() / 2.0).tan();
        let elev = self.elevation_deg.to_radians();
        (0..self.n_views)
            .map(|i| {
                let jitter = if self.jitter_deg > 0.0 {
                    rng.random_range(-self.jitter_deg..self.jitter_deg)
                        .to_radians()
                } else {
                    0.0
                };
                let az = std::f64::consts::TAU * i as f64 / self.n_views as f64 + jitter;
                let eye = Vec3::new(az.sin() * elev.cos(), -elev.sin(), -az.cos() * elev.cos())
                    * self.distance;
                Camera::look_at(
                    eye,
                    Vec3::zeros(),
                    -Vec3::y(),
                    f,
                    f,
                    self.width as f64 / 2.0,
                    self.height as f64 / 2.0,
                    self.width,
                    self.height,
                )
            })
            .collect()
    }
}

/// Geometry and appearance of the synthetic head.
pub struct SyntheticHead {
    pub shape: SceneShape,
    pub field: SdfField,
    pub torus_center: Vec3,
    pub torus_axis: Vec3,
    pub stripes: f64,
}

const SKIN: [f64; 3] = [0.78, 0.57, 0.47];
const HAIR: [f64; 3] = [0.35, 0.22, 0.12];
const TORUS_CENTER: [f64; 3] = [0.0, -0.45, 0.0];
const TORUS_MAJOR: f64 = 0.42;
const TORUS_MINOR: f64 = 0.18;

impl SyntheticHead {
    pub fn new(shape: SceneShape, stripes: f64) -> Self {
        let torus_center = Vec3::from(TORUS_CENTER);
        let torus_axis = Vec3::y();
        let field = match shape {
            SceneShape::UnitSphere => SdfField::unit_sphere(),
            SceneShape::Head => SdfField::Union(vec![
                SdfField::sphere(Vec3::zeros(), HEAD_RADIUS),
                SdfField::Torus {
                    center: torus_center,
                    axis: torus_axis,
                    major: TORUS_MAJOR,
                    minor: TORUS_MINOR,
                },
            ]),
        };
        Self {
            shape,
            field,
            torus_center,
            torus_axis,
            stripes,
        }
    }

    pub fn is_hair(&self, x: &Vec3) -> bool {
        match &self.field {
            SdfField::Union(children) => children[1].eval(x) < children[0].eval(x),
            _ => false,
        }
    }

    /// Unit tangent of the tube centre circle through `x` (the hair direction).
    pub fn tube_direction(&self, x: &Vec3) -> Vec3 {
        self.torus_axis.cross(&(x - self.torus_center)).normalize()
    }

    pub fn label(&self, x: &Vec3) -> u8 {
        if self.shape == SceneShape::UnitSphere {
            return LABEL_FACE;
        }
        if self.is_hair(x) {
            return LABEL_HAIR;
        }
        let n = x.normalize();
        if n.z > -0.3 {
            return LABEL_FACE;
        }
        // Feature patches in the (x, y) footprint of the face.
        let (u, v) = (n.x / -n.z, n.y / -n.z);
        let ell = |cx: f64, cy: f64, rx: f64, ry: f64| {
            ((u - cx) / rx).powi(2) + ((v - cy) / ry).powi(2) < 1.0
        };
        if ell(-0.3, -0.28, 0.11, 0.06) || ell(0.3, -0.28, 0.11, 0.06) {
            LABEL_EYES
        } else if ell(-0.3, -0.45, 0.14, 0.04) || ell(0.3, -0.45, 0.14, 0.04) {
            LABEL_EYEBROWS
        } else if ell(0.0, 0.02, 0.08, 0.14) {
            LABEL_NOSE
        } else if ell(0.0, 0.4, 0.2, 0.06) {
            LABEL_LIPS
        } else {
            LABEL_FACE
        }
    }

    /// Lambertian colour under a fixed key light plus ambient term.
    pub fn color(&self, x: &Vec3, n: &Vec3) -> [f64; 3] {
        let light = Vec3::new(0.3, -0.6, -0.75).normalize();
        let shade = 0.45 + 0.55 * n.dot(&light).max(0.0);
        let base = match self.label(x) {
            LABEL_HAIR => {
                let p = x - self.torus_center;
                let h = p.dot(&self.torus_axis);
                let rho = (p - self.torus_axis * h).norm();
                let psi = h.atan2(rho - TORUS_MAJOR);
                let s = 0.55 + 0.45 * (self.stripes * psi).cos();
                HAIR.map(|c| c * s)
            }
            LABEL_EYES => [0.12, 0.1, 0.1],
            LABEL_EYEBROWS => [0.3, 0.2, 0.15],
            LABEL_NOSE => [0.86, 0.62, 0.52],
            LABEL_LIPS => [0.72, 0.3, 0.3],
            _ => SKIN,
        };
        base.map(|c| (c * shade).clamp(0.0, 1.0))
    }
}

/// One rendered view with its annotations.
#[derive(Clone, Debug)]
pub struct SceneView {
    pub image: RgbImage,
    pub mask: Mask,
    pub hair_mask: Mask,
    pub labels: LabelMap,
    pub orientation: Image<[f64; 2]>,
    pub camera: Camera,
}

impl SceneView {
    pub fn face_mask(&self) -> Mask {
        self.labels.map(|&l| is_face_label(l))
    }
}

pub struct SyntheticScene {
    pub head: SyntheticHead,
    pub views: Vec<SceneView>,
    /// Per-view landmark projections; empty for views where any landmark faces away.
    pub landmarks: Vec<Vec<Vec2>>,
}

/// Renders every view of the synthetic head with the analytic tracer.
pub fn build_synthetic_scene(cfg: &SceneConfig, seed: u64) -> Result<SyntheticScene> {
    cfg.validate()?;
    let head = SyntheticHead::new(cfg.shape, cfg.stripes);
    let tracer = TracerConfig::default();
    let cameras = cfg.cameras(seed)?;
    let marks = landmark_points(&synthetic_model(0));
    let mut views = Vec::with_capacity(cameras.len());
    let mut landmarks = Vec::with_capacity(cameras.len());
    for camera in cameras {
        let (w, h) = (camera.width, camera.height);
        let pixels: Vec<(u8, [f64; 3], [f64; 2])> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let ray = camera.pixel_center_ray(i % w, i / w);
                let hit = sphere_trace(&head.field, &ray, &tracer);
                if !hit.hit {
                    return (LABEL_BACKGROUND, [0.0; 3], [0.0; 2]);
                }
                let n = head.field.gradient(&hit.x).normalize();
                let label = head.label(&hit.x);
                let dir = if label == LABEL_HAIR {
                    project_3d_orientation(&head.tube_direction(&hit.x), &hit.x, &camera)
                        .map_or([0.0; 2], |d| [d.x, d.y])
                } else {
                    [0.0; 2]
                };
                (label, head.color(&hit.x, &n), dir)
            })
            .collect();
        let labels: LabelMap = Image {
            width: w,
            height: h,
            data: pixels.iter().map(|p| p.0).collect(),
        };
        views.push(SceneView {
            image: Image {
                width: w,
                height: h,
                data: pixels.iter().map(|p| p.1).collect(),
            },
            mask: labels.map(|&l| l != LABEL_BACKGROUND),
            hair_mask: labels.map(|&l| l == LABEL_HAIR),
            orientation: Image {
                width: w,
                height: h,
                data: pixels.iter().map(|p| p.2).collect(),
            },
            labels,
            camera: camera.clone(),
        });
        let visible = cfg.shape == SceneShape::Head
            && marks
                .iter()
                .all(|m| m.normalize().dot(&(m - camera.center())) < 0.0);
        landmarks.push(if visible {
            marks
                .iter()
                .map(|m| camera.project(m))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        });
    }
    Ok(SyntheticScene {
        head,
        views,
        landmarks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewFiles {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub hair_mask: PathBuf,
    pub labels: PathBuf,
    pub orientation: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub views: Vec<ViewFiles>,
    pub cameras: PathBuf,
    pub landmarks: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mesh: Option<PathBuf>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn landmarks_json(marks: &[Vec<Vec2>]) -> Vec<Vec<[f64; 2]>> {
    marks
        .iter()
        .map(|v| v.iter().map(|q| [q.x, q.y]).collect())
        .collect()
}

/// Writes views, cameras, landmarks and the manifest under `dir`.
pub fn write_scene(
    dir: &Path,
    views: &[SceneView],
    landmarks: &[Vec<Vec2>],
    gt_mesh: Option<&Path>,
) -> Result<SceneManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::with_capacity(views.len());
    for (i, v) in views.iter().enumerate() {
        let sub = PathBuf::from(format!("view_{i:03}"));
        std::fs::create_dir_all(dir.join(&sub)).map_err(|e| Error::io(dir.join(&sub), e))?;
        let f = ViewFiles {
            image: sub.join("image.png"),
            mask: sub.join("mask.png"),
            hair_mask: sub.join("hair_mask.png"),
            labels: sub.join("labels.png"),
            orientation: sub.join("orientation.ori"),
        };
        save_rgb(&dir.join(&f.image), &v.image)?;
        save_mask(&dir.join(&f.mask), &v.mask)?;
        save_mask(&dir.join(&f.hair_mask), &v.hair_mask)?;
        save_labels(&dir.join(&f.labels), &v.labels)?;
        save_orientation(&dir.join(&f.orientation), &v.orientation)?;
        files.push(f);
    }
    let cameras: Vec<&Camera> = views.iter().map(|v| &v.camera).collect();
    write_json(&dir.join("cameras.json"), &cameras)?;
    write_json(&dir.join("landmarks.json"), &landmarks_json(landmarks))?;
    let manifest = SceneManifest {
        views: files,
        cameras: "cameras.json".into(),
        landmarks: "landmarks.json".into(),
        gt_mesh: gt_mesh.map(Path::to_path_buf),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Builds the synthetic scene and writes it with a ground-truth mesh.
pub fn generate_synthetic_scene(
    cfg: &SceneConfig,
    seed: u64,
    dir: &Path,
) -> Result<SyntheticScene> {
    let scene = build_synthetic_scene(cfg, seed)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = cfg.gt_resolution.max(2);
    let grid = sample_grid(
        &scene.head.field,
        Vec3::repeat(-1.2),
        Vec3::repeat(1.2),
        [n; 3],
    )?;
    let gt = Path::new("gt_mesh.obj");
    export_obj(&marching_cubes(&grid), &dir.join(gt))?;
    write_scene(dir, &scene.views, &scene.landmarks, Some(gt))?;
    Ok(scene)
}

pub struct LoadedScene {
    pub views: Vec<SceneView>,
    pub landmarks: Vec<Vec<Vec2>>,
    pub manifest: SceneManifest,
}

pub fn load_scene(dir: &Path) -> Result<LoadedScene> {
    let manifest: SceneManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let cameras: Vec<Camera> = read_json(&dir.join(&manifest.cameras))?;
    if cameras.len() != manifest.views.len() {
        return Err(Error::CountMismatch {
            expected: manifest.views.len(),
            found: cameras.len(),
        });
    }
    let marks: Vec<Vec<[f64; 2]>> = read_json(&dir.join(&manifest.landmarks))?;
    let views = manifest
        .views
        .iter()
        .zip(cameras)
        .map(|(f, camera)| {
            let view = SceneView {
                image: load_rgb(&dir.join(&f.image))?,
                mask: load_mask(&dir.join(&f.mask))?,
                hair_mask: load_mask(&dir.join(&f.hair_mask))?,
                labels: load_labels(&dir.join(&f.labels))?,
                orientation: load_orientation(&dir.join(&f.orientation))?,
                camera,
            };
            view.image.size_check(&view.mask, "mask")?;
            view.image.size_check(&view.hair_mask, "hair mask")?;
            view.image.size_check(&view.labels, "labels")?;
            view.image.size_check(&view.orientation, "orientation")?;
            Ok(view)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedScene {
        views,
        landmarks: marks
            .iter()
            .map(|v| v.iter().map(|q| Vec2::new(q[0], q[1])).collect())
            .collect(),
        manifest,
    })
}
