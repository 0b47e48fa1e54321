//! Small synthetic morphable model on a subdivided icosahedron.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::{Basis, LinearMorphableModel};
use crate::geometry::Vec3;

/// Radius of the synthetic head sphere and of the model's mean shape.
pub const HEAD_RADIUS: f64 = 0.6;

const SKIN: [f64; 3] = [0.78, 0.57, 0.47];

/// Approximate directions of the eight landmarks; the face looks along -z
/// and image-up is -y. Eye outer/inner corners, nose tip, mouth corners, chin.
const LANDMARK_HINTS: [[f64; 3]; 8] = [
    [-0.38, -0.28, -1.0],
    [-0.14, -0.28, -1.0],
    [0.14, -0.28, -1.0],
    [0.38, -0.28, -1.0],
    [0.0, 0.05, -1.0],
    [-0.24, 0.38, -1.0],
    [0.24, 0.38, -1.0],
    [0.0, 0.7, -1.0],
];

/// Unit-sphere icosphere after `levels` midpoint subdivisions, wound outward.
pub fn icosphere(levels: u32) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let p = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, p, 0.0],
        [1.0, p, 0.0],
        [-1.0, -p, 0.0],
        [1.0, -p, 0.0],
        [0.0, -1.0, p],
        [0.0, 1.0, p],
        [0.0, -1.0, -p],
        [0.0, 1.0, -p],
        [p, 0.0, -1.0],
        [p, 0.0, 1.0],
        [-p, 0.0, -1.0],
        [-p, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vec3::from(*v).normalize())
    .collect();
    let mut tris: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(tris.len() * 4);
        for t in &tris {
            let mut m = |a: usize, b: usize| {
                *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    verts.push(((verts[a] + verts[b]) / 2.0).normalize());
                    verts.len() - 1
                })
            };
            let (ab, bc, ca) = (m(t[0], t[1]), m(t[1], t[2]), m(t[2], t[0]));
            next.extend([[t[0], ab, ca], [t[1], bc, ab], [t[2], ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    (verts, tris)
}

fn bump(n: &Vec3, centre: &Vec3, width: f64) -> f64 {
    (-(n - centre).norm_squared() / (2.0 * width * width)).exp()
}

/// Deterministic desk-scale model: 642 vertices, 4 identity, 2 expression
/// and 2 albedo components, 8 landmarks on the face side.
pub fn synthetic_model(seed: u64) -> LinearMorphableModel {
    let (dirs, triangles) = icosphere(3);
    let n_v = dirs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    // Identity: each component moves six facial regions (eyes, nose, mouth,
    // chin, forehead) by random offsets under smooth bumps.
    let k_id = 4;
    let regions: Vec<Vec3> = [
        [-0.3, -0.28],
        [0.3, -0.28],
        [0.0, 0.05],
        [0.0, 0.38],
        [0.0, 0.7],
        [0.0, -0.6],
    ]
    .iter()
    .map(|[x, y]| Vec3::new(*x, *y, -1.0).normalize())
    .collect();
    let offsets: Vec<Vec<Vec3>> = (0..k_id)
        .map(|_| {
            regions
                .iter()
                .map(|_| Vec3::new(normal(), normal(), normal()) * 0.12)
                .collect()
        })
        .collect();
    let mut b_id = Basis::zeros(3 * n_v, k_id);
    let mut b_exp = Basis::zeros(3 * n_v, 2);
    let mut b_alb = Basis::zeros(3 * n_v, 2);
    let mouth = Vec3::new(0.0, 0.55, -1.0).normalize();
    let brow = Vec3::new(0.0, -0.55, -1.0).normalize();
    let tint = [normal(), normal(), normal()];
    for (i, n) in dirs.iter().enumerate() {
        for (k, offs) in offsets.iter().enumerate() {
            let d = regions
                .iter()
                .zip(offs)
                .fold(Vec3::zeros(), |acc, (c, o)| acc + o * bump(n, c, 0.3));
            for c in 0..3 {
                b_id.set(3 * i + c, k, d[c]);
            }
        }
        // Expression: jaw drop below the mouth and brow raise, both along image y.
        let (e0, e1) = (0.1 * bump(n, &mouth, 0.3), -0.08 * bump(n, &brow, 0.12));
        let a0 = 0.06 * n.y;
        let a1 = 0.04 * n.x;
        for c in 0..3 {
            b_exp.set(3 * i + c, 0, e0 * Vec3::y()[c]);
            b_exp.set(3 * i + c, 1, e1 * Vec3::y()[c]);
            b_alb.set(3 * i + c, 0, a0 * SKIN[c]);
            b_alb.set(3 * i + c, 1, a1 * (0.5 + 0.1 * tint[c]));
        }
    }
    let mean_geo: Vec<f64> = dirs
        .iter()
        .flat_map(|d| (d * HEAD_RADIUS).iter().copied().collect::<Vec<_>>())
        .collect();
    let mean_alb: Vec<f64> = (0..n_v).flat_map(|_| SKIN).collect();
    let landmarks = LANDMARK_HINTS
        .iter()
        .map(|h| {
            let h = Vec3::from(*h).normalize();
            (0..n_v)
                .max_by(|&a, &b| dirs[a].dot(&h).total_cmp(&dirs[b].dot(&h)))
                .unwrap()
        })
        .collect();
    LinearMorphableModel {
        n_v,
        mean_geo,
        mean_alb,
        b_id,
        b_exp,
        b_alb,
        sigma_id: vec![1.0, 0.8, 0.6, 0.5],
        sigma_exp: vec![1.0, 0.7],
        sigma_alb: vec![1.0, 0.8],
        triangles,
        landmarks,
    }
}

/// Landmark positions on the mean shape; the synthetic scene annotates
/// exactly these points.
pub fn landmark_points(model: &LinearMorphableModel) -> Vec<Vec3> {
    model
        .landmarks
        .iter()
        .map(|&l| {
            Vec3::new(
                model.mean_geo[3 * l],
                model.mean_geo[3 * l + 1],
                model.mean_geo[3 * l + 2],
            )
        })
        .collect()
}
