use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RayCounts;
use crate::error::{Error, Result};
use crate::geometry::{Vec2, Vec3};
use crate::mesh_io::{Mask, SceneView, TriangleMesh};

/// Views with their annotations, the optional proxy mesh and the box that
/// bounds the reconstruction.
#[derive(Clone, Debug)]
pub struct Scene {
    pub views: Vec<SceneView>,
    pub proxy: Option<TriangleMesh>,
    pub bounds: [Vec3; 2],
}

impl Scene {
    pub fn new(
        views: Vec<SceneView>,
        proxy: Option<TriangleMesh>,
        bounds: [Vec3; 2],
    ) -> Result<Self> {
        let scene = Self {
            views,
            proxy,
            bounds,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::EmptyBatch("scene views"));
        }
        if (0..3).any(|i| !(self.bounds[0][i] < self.bounds[1][i])) {
            return Err(Error::InvalidConfig(
                "scene bounds must have positive extent".into(),
            ));
        }
        for (i, v) in self.views.iter().enumerate() {
            let what = format!("view {i}");
            v.image.size_check(&v.mask, &format!("{what} mask"))?;
            v.image
                .size_check(&v.hair_mask, &format!("{what} hair mask"))?;
            v.image.size_check(&v.labels, &format!("{what} labels"))?;
            v.image
                .size_check(&v.orientation, &format!("{what} orientation"))?;
            if (v.camera.width, v.camera.height) != (v.image.width, v.image.height) {
                return Err(Error::SizeMismatch(format!(
                    "{what} camera does not match the image size"
                )));
            }
            if v.hair_mask
                .data
                .iter()
                .zip(&v.mask.data)
                .any(|(&h, &m)| h && !m)
            {
                return Err(Error::InvalidConfig(format!(
                    "{what}: hair mask leaves the head mask"
                )));
            }
            if let Some(l) = v.labels.data.iter().find(|&&l| l > 6) {
                return Err(Error::InvalidConfig(format!(
                    "{what}: label {l} outside 0..=6"
                )));
            }
        }
        Ok(())
    }
}

/// One sampled pixel with its ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySample {
    /// Pixel centre.
    pub pixel: Vec2,
    pub rgb: [f64; 3],
    pub label: u8,
    /// Detected orientation; zero when there is none.
    pub d_p: Vec2,
}

/// Rays of one view for one optimizer step. Head and hair rays lie inside
/// the head mask; outside rays lie in its complement.
#[derive(Clone, Debug, PartialEq)]
pub struct RayBatch {
    pub view: usize,
    pub head: Vec<RaySample>,
    pub hair: Vec<RaySample>,
    pub outside: Vec<Vec2>,
}

impl RayBatch {
    /// Head rays followed by hair rays.
    pub fn inside(&self) -> impl Iterator<Item = &RaySample> {
        self.head.iter().chain(&self.hair)
    }

    pub fn n_inside(&self) -> usize {
        self.head.len() + self.hair.len()
    }
}

/// Seed for stream `a`, `b` derived from `seed` (splitmix64 finalizer).
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z =
        seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn pick(rng: &mut ChaCha8Rng, pool: &[u32], count: usize) -> Result<Vec<u32>> {
    if count > pool.len() {
        return Err(Error::MaskTooSmall {
            requested: count,
            available: pool.len(),
        });
    }
    Ok(sample(rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i])
        .collect())
}

fn complement(mask: &Mask) -> Vec<u32> {
    (0..mask.data.len() as u32)
        .filter(|&i| !mask.data[i as usize])
        .collect()
}

/// Draws `counts.head` pixels from the head mask, `counts.hair` from the hair
/// mask and `counts.head` from outside the head mask, each uniformly without
/// replacement.
pub fn sample_rays(scene: &Scene, view: usize, counts: RayCounts, seed: u64) -> Result<RayBatch> {
    let v = scene.views.get(view).ok_or(Error::ViewOutOfRange {
        view,
        count: scene.views.len(),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = v.image.width;
    let head_pool = v.mask.indices();
    let hair_pool = v.hair_mask.indices();
    let head = pick(&mut rng, &head_pool, counts.head)?;
    let hair = pick(&mut rng, &hair_pool, counts.hair)?;
    let outside = pick(&mut rng, &complement(&v.mask), counts.head)?;
    let center = |i: u32| Vec2::new((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
    let ray = |i: u32| {
        let o = v.orientation.data[i as usize];
        RaySample {
            pixel: center(i),
            rgb: v.image.data[i as usize],
            label: v.labels.data[i as usize],
            d_p: Vec2::new(o[0], o[1]),
        }
    };
    Ok(RayBatch {
        view,
        head: head.into_iter().map(ray).collect(),
        hair: hair.into_iter().map(ray).collect(),
        outside: outside.into_iter().map(center).collect(),
    })
}
