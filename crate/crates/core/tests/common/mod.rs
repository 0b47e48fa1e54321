#![allow(dead_code)]

use headsdf::geometry::{Ray, Vec3};
use rand::Rng;

/// First intersection of a ray with a sphere, by the quadratic formula.
pub fn ray_sphere(ray: &Ray, center: &Vec3, radius: f64) -> Option<f64> {
    let oc = ray.origin - center;
    let b = oc.dot(&ray.dir);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    [-b - s, -b + s].into_iter().find(|&t| t >= 0.0)
}

/// Quartic implicit form of the z-axis torus, negative inside.
pub fn torus_quartic(p: &Vec3, major: f64, minor: f64) -> f64 {
    let k = p.norm_squared() + major * major - minor * minor;
    k * k - 4.0 * major * major * (p.x * p.x + p.y * p.y)
}

/// First root of the torus quartic along the ray in `[0, t_max]`: dense
/// sign scan followed by bisection.
pub fn ray_torus(ray: &Ray, major: f64, minor: f64, t_max: f64) -> Option<f64> {
    let n = 40_000;
    let q = |t: f64| torus_quartic(&ray.at(t), major, minor);
    let mut prev = (0.0, q(0.0));
    for i in 1..=n {
        let t = t_max * i as f64 / n as f64;
        let v = q(t);
        if (v <= 0.0) != (prev.1 <= 0.0) {
            let (mut a, mut b) = (prev.0, t);
            for _ in 0..100 {
                let m = 0.5 * (a + b);
                if (q(m) <= 0.0) == (prev.1 <= 0.0) {
                    a = m;
                } else {
                    b = m;
                }
            }
            return Some(0.5 * (a + b));
        }
        prev = (t, v);
    }
    None
}

/// Ray from a random point on the sphere of radius `dist` towards a random
/// point of the ball of radius `spread`.
pub fn random_ray<R: Rng>(rng: &mut R, dist: f64, spread: f64) -> Ray {
    let unit = |rng: &mut R| loop {
        let v = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        if v.norm_squared() <= 1.0 && v.norm_squared() > 1e-6 {
            return v;
        }
    };
    let origin = unit(rng).normalize() * dist;
    let target = unit(rng) * spread;
    Ray::new(origin, target - origin)
}

/// Smallest value of `f` along the ray on a fine grid.
pub fn ray_min<F: Fn(&Vec3) -> f64>(f: F, ray: &Ray, t_max: f64) -> f64 {
    (0..=20_000)
        .map(|i| f(&ray.at(t_max * i as f64 / 20_000.0)))
        .fold(f64::INFINITY, f64::min)
}
