//! Camera model, rays and small dense linear algebra shared by the rest of
//! the crate.
//!
//! Conventions: world and camera frames are right-handed with the camera
//! looking along +z, image x to the right and image y downwards. Pixel
//! coordinates are continuous; the centre of pixel `(col, row)` sits at
//! `(col + 0.5, row + 0.5)`.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, V3};
use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Depth below which a camera-space point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

/// Rotation from Euler angles `(rx, ry, rz)`, composed as `Rz * Ry * Rx`.
pub fn euler_to_matrix(angles: [f64; 3]) -> Mat3 {
    let [a, b, c] = angles;
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sc, cc) = c.sin_cos();
    let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, ca, -sa, 0.0, sa, ca);
    let ry = Mat3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    let rz = Mat3::new(cc, -sc, 0.0, sc, cc, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

/// Rotation matrix for an axis-angle vector (Rodrigues' formula).
pub fn axis_angle_to_matrix(w: &Vec3) -> Mat3 {
    let theta = w.norm();
    let k = skew(w);
    if theta < 1e-8 {
        return Mat3::identity() + k + 0.5 * k * k;
    }
    let (s, c) = theta.sin_cos();
    Mat3::identity() + (s / theta) * k + ((1.0 - c) / (theta * theta)) * k * k
}

pub fn skew(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Angle in radians between two rotations.
pub fn rotation_angle_between(a: &Mat3, b: &Mat3) -> f64 {
    let rel = a.transpose() * b;
    let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos()
}

/// Pinhole camera `q = Π(R·V + t)` with explicit intrinsics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraJson", into = "CameraJson")]
pub struct Camera {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rotation: Mat3,
        translation: Vec3,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let orth = (rotation.transpose() * rotation - Mat3::identity())
            .abs()
            .max();
        if orth > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "camera rotation is not a proper rotation (orthogonality error {orth:.2e})"
            )));
        }
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "focal lengths must be positive, got ({fx}, {fy})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Camera at `eye` looking at `target`; `up` is the world direction that
    /// should map to image-up (negative image y).
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let z = (target - eye).normalize();
        let x = z.cross(&(-up)).normalize();
        let y = z.cross(&x);
        let rotation = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye);
        Self::new(rotation, translation, fx, fy, cx, cy, width, height)
    }

    /// Camera centre `c = -Rᵀ t`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, v: &Vec3) -> Vec3 {
        self.rotation * v + self.translation
    }

    /// Perspective projection of a world point to continuous pixel coordinates.
    pub fn project(&self, v: &Vec3) -> Result<Vec2> {
        let p = self.to_camera(v);
        if p.z <= MIN_DEPTH {
            return Err(Error::PointBehindCamera { depth: p.z });
        }
        Ok(Vec2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    pub fn contains_pixel(&self, p: &Vec2) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width as f64 && p.y <= self.height as f64
    }

    /// Unnormalized world-space direction through pixel `p`.
    pub fn pixel_direction(&self, p: &Vec2) -> Vec3 {
        let d = Vec3::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy, 1.0);
        self.rotation.transpose() * d
    }

    /// Ray from the camera centre through pixel `p`.
    pub fn pixel_ray(&self, p: &Vec2) -> Result<Ray> {
        if !self.contains_pixel(p) {
            return Err(Error::OutOfBounds {
                x: p.x,
                y: p.y,
                width: self.width,
                height: self.height,
            });
        }
        Ok(Ray::new(self.center(), self.pixel_direction(p)))
    }

    /// Ray through the centre of pixel `(col, row)`.
    pub fn pixel_center_ray(&self, col: u32, row: u32) -> Ray {
        let p = Vec2::new(col as f64 + 0.5, row as f64 + 0.5);
        Ray::new(self.center(), self.pixel_direction(&p))
    }

    /// Unit viewing direction from the camera centre towards `x`.
    pub fn view_direction(&self, x: &Vec3) -> Vec3 {
        (x - self.center()).normalize()
    }

    /// Jacobian of the pixel mapping with respect to the camera-space point.
    pub fn projection_jacobian(&self, p_cam: &Vec3) -> [[f64; 3]; 2] {
        let iz = 1.0 / p_cam.z;
        [
            [self.fx * iz, 0.0, -self.fx * p_cam.x * iz * iz],
            [0.0, self.fy * iz, -self.fy * p_cam.y * iz * iz],
        ]
    }

    /// Same camera with a small axis-angle rotation and translation applied:
    /// `R' = exp(ω) R`, `t' = t + Δt`.
    pub fn perturbed(&self, omega: &Vec3, delta_t: &Vec3) -> Camera {
        Camera {
            rotation: axis_angle_to_matrix(omega) * self.rotation,
            translation: self.translation + delta_t,
            ..self.clone()
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CameraJson {
    #[serde(rename = "R")]
    r: Vec<f64>,
    t: Vec<f64>,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl TryFrom<CameraJson> for Camera {
    type Error = Error;

    fn try_from(c: CameraJson) -> Result<Self> {
        if c.r.len() != 9 || c.t.len() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "camera expects 9 rotation and 3 translation values, got {} and {}",
                c.r.len(),
                c.t.len()
            )));
        }
        Camera::new(
            Mat3::from_row_slice(&c.r),
            Vec3::from_column_slice(&c.t),
            c.fx,
            c.fy,
            c.cx,
            c.cy,
            c.width,
            c.height,
        )
    }
}

impl From<Camera> for CameraJson {
    fn from(c: Camera) -> Self {
        let r = c.rotation;
        CameraJson {
            r: (0..3)
                .flat_map(|i| (0..3).map(move |j| r[(i, j)]))
                .collect(),
            t: c.translation.iter().copied().collect(),
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }
    }
}

/// Half-line `origin + t·dir`, `t ≥ 0`, with a unit direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    /// Builds a ray, normalizing `dir`.
    pub fn new(origin: Vec3, dir: Vec3) -> Self {
        Self {
            origin,
            dir: dir.normalize(),
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + t * self.dir
    }
}

/// Eigen-decomposition of a symmetric 3×3 matrix, eigenpairs sorted by
/// ascending absolute eigenvalue.
#[derive(Clone, Debug, PartialEq)]
pub struct SymEigen3 {
    pub eigenvalues: [f64; 3],
    pub eigenvectors: [Vec3; 3],
}

impl SymEigen3 {
    pub fn reconstruct(&self) -> Mat3 {
        (0..3).fold(Mat3::zeros(), |acc, i| {
            let v = self.eigenvectors[i];
            acc + self.eigenvalues[i] * v * v.transpose()
        })
    }
}

const JACOBI_TOL: f64 = 1e-15;
const JACOBI_MAX_SWEEPS: usize = 50;

/// Cyclic Jacobi eigensolver for symmetric 3×3 matrices.
pub fn sym_eigen3(h: &Mat3) -> Result<SymEigen3> {
    let scale = h.norm();
    let asymmetry = (h - h.transpose()).norm();
    if asymmetry > 1e-8 * scale {
        return Err(Error::NotSymmetric { asymmetry });
    }
    let mut a = 0.5 * (h + h.transpose());
    let mut v = Mat3::identity();
    let off = |a: &Mat3| (a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2)).sqrt();

    for _ in 0..JACOBI_MAX_SWEEPS {
        if off(&a) <= JACOBI_TOL * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut rot = Mat3::identity();
            rot[(p, p)] = c;
            rot[(q, q)] = c;
            rot[(p, q)] = s;
            rot[(q, p)] = -s;
            a = rot.transpose() * a * rot;
            a[(p, q)] = 0.0;
            a[(q, p)] = 0.0;
            v *= rot;
        }
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[(i, i)].abs().total_cmp(&a[(j, j)].abs()));
    Ok(SymEigen3 {
        eigenvalues: order.map(|i| a[(i, i)]),
        eigenvectors: order.map(|i| v.column(i).into_owned()),
    })
}

/// Derivatives of `exp([ω]×)` with respect to each component of `ω`.
pub fn axis_angle_partials(w: &Vec3) -> [Mat3; 3] {
    let r = axis_angle_to_matrix(w);
    let n2 = w.norm_squared();
    std::array::from_fn(|k| {
        let e = Vec3::ith(k, 1.0);
        if n2 < 1e-16 {
            return skew(&e) * r;
        }
        let v = w.cross(&((Mat3::identity() - r) * e));
        (w[k] * skew(w) + skew(&v)) * r / n2
    })
}

/// Camera whose rotation `exp(ω)·R₀` and translation `t₀ + Δt` live on a
/// tape, so rays and projections carry gradients to `(ω, Δt)`.
pub struct TapeCamera {
    pub base: Camera,
    /// Rotation rows.
    pub rows: [V3; 3],
    pub t: V3,
    value: Camera,
}

impl TapeCamera {
    pub fn new(tape: &mut Tape, base: &Camera, omega: V3, delta_t: V3) -> Self {
        let w = tape.val3(omega);
        let r = axis_angle_to_matrix(&w) * base.rotation;
        let d = axis_angle_partials(&w).map(|m| m * base.rotation);
        let rows = std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                tape.custom(
                    &omega,
                    &[d[0][(i, j)], d[1][(i, j)], d[2][(i, j)]],
                    r[(i, j)],
                )
            })
        });
        let t = tape.add3_const(delta_t, &base.translation);
        let value = Camera {
            rotation: r,
            translation: tape.val3(t),
            ..base.clone()
        };
        Self {
            base: base.clone(),
            rows,
            t,
            value,
        }
    }

    /// Constant camera (no differentiable pose).
    pub fn fixed(tape: &mut Tape, base: &Camera) -> Self {
        let z = tape.vec3(&Vec3::zeros());
        Self::new(tape, base, z, z)
    }

    /// Current pose values.
    pub fn camera(&self) -> &Camera {
        &self.value
    }

    fn column(&self, j: usize) -> V3 {
        [self.rows[0][j], self.rows[1][j], self.rows[2][j]]
    }

    /// `c = −Rᵀ t`.
    pub fn center(&self, tape: &mut Tape) -> V3 {
        std::array::from_fn(|j| {
            let c = self.column(j);
            let d = tape.dot3(c, self.t);
            tape.neg(d)
        })
    }

    /// Unit world-space direction through continuous pixel `p`.
    pub fn ray_direction(&self, tape: &mut Tape, p: &Vec2) -> V3 {
        let c = &self.value;
        let d = [(p.x - c.cx) / c.fx, (p.y - c.cy) / c.fy, 1.0];
        let w: V3 = std::array::from_fn(|j| tape.lin_comb(&self.column(j), &d, 0.0));
        tape.normalize3(w)
    }

    pub fn to_camera(&self, tape: &mut Tape, x: V3) -> V3 {
        let r = tape.mat3(&self.rows, x);
        tape.add3(r, self.t)
    }

    /// Unit image-space direction of the 3D direction `dir` at `x`:
    /// `normalize(J(Rx + t)·R·dir)`.
    pub fn project_direction(&self, tape: &mut Tape, x: V3, dir: V3) -> Result<[Var; 2]> {
        let p = self.to_camera(tape, x);
        let depth = tape.val(p[2]);
        if depth <= MIN_DEPTH {
            return Err(Error::PointBehindCamera { depth });
        }
        let rd = tape.mat3(&self.rows, dir);
        let c = &self.value;
        let one = tape.constant(1.0);
        let iz = tape.div(one, p[2]);
        // u = f (rd_x − p_x rd_z / p_z) / p_z
        let mut comp = |a: usize, f: f64| {
            let ratio = tape.mul(p[a], iz);
            let cross = tape.mul(ratio, rd[2]);
            let diff = tape.sub(rd[a], cross);
            let m = tape.mul(diff, iz);
            tape.scale(m, f)
        };
        let u = comp(0, c.fx);
        let v = comp(1, c.fy);
        let norm = (tape.val(u).powi(2) + tape.val(v).powi(2)).sqrt();
        if norm < 1e-9 {
            return Err(Error::DegenerateProjection);
        }
        let n2 = tape.dot(&[u, v], &[u, v]);
        let n = tape.sqrt(n2);
        Ok([tape.div(u, n), tape.div(v, n)])
    }
}

/// Unit image-space direction of `dir` at world point `x`.
pub fn project_3d_orientation(dir: &Vec3, x: &Vec3, cam: &Camera) -> Result<Vec2> {
    let p = cam.to_camera(x);
    if p.z <= MIN_DEPTH {
        return Err(Error::PointBehindCamera { depth: p.z });
    }
    let j = cam.projection_jacobian(&p);
    let rd = cam.rotation * dir;
    let d = Vec2::new(
        j[0][0] * rd.x + j[0][1] * rd.y + j[0][2] * rd.z,
        j[1][0] * rd.x + j[1][1] * rd.y + j[1][2] * rd.z,
    );
    let n = d.norm();
    if n < 1e-9 {
        return Err(Error::DegenerateProjection);
    }
    Ok(d / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn unit_camera() -> Camera {
        Camera::new(Mat3::identity(), Vec3::zeros(), 1.0, 1.0, 0.0, 0.0, 64, 64).unwrap()
    }

    fn axis_rotations(a: [f64; 3]) -> (Mat3, Mat3, Mat3) {
        let rx = nalgebra::Rotation3::from_axis_angle(&Vec3::x_axis(), a[0]).into_inner();
        let ry = nalgebra::Rotation3::from_axis_angle(&Vec3::y_axis(), a[1]).into_inner();
        let rz = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), a[2]).into_inner();
        (rx, ry, rz)
    }

    #[test]
    fn euler_identity_and_quarter_turn() {
        assert_eq!(euler_to_matrix([0.0; 3]), Mat3::identity());
        let r = euler_to_matrix([0.0, 0.0, FRAC_PI_2]);
        let expected = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(r, expected, epsilon = 1e-15);
    }

    #[test]
    fn euler_matches_axis_product() {
        let a = [0.1, 0.2, 0.3];
        let (rx, ry, rz) = axis_rotations(a);
        assert_relative_eq!(euler_to_matrix(a), rz * ry * rx, epsilon = 1e-15);
    }

    #[test]
    fn project_examples() {
        let cam = unit_camera();
        let q = cam.project(&Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(q, Vec2::new(0.0, 0.0));
        let q = cam.project(&Vec3::new(1.0, 2.0, 2.0)).unwrap();
        assert_relative_eq!(q, Vec2::new(0.5, 1.0), epsilon = 1e-15);
        assert!(matches!(
            cam.project(&Vec3::new(0.0, 0.0, -1.0)),
            Err(Error::PointBehindCamera { .. })
        ));
    }

    #[test]
    fn project_rotated_camera() {
        let r = euler_to_matrix([0.0, 0.0, FRAC_PI_2]);
        let cam = Camera::new(
            r,
            Vec3::new(0.0, 0.0, 3.0),
            100.0,
            100.0,
            32.0,
            32.0,
            64,
            64,
        )
        .unwrap();
        // R·(1,0,0) = (0,1,0); plus t = (0,1,3); pixel = (32, 100/3 + 32).
        let q = cam.project(&Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(q, Vec2::new(32.0, 100.0 / 3.0 + 32.0), epsilon = 1e-12);
    }

    #[test]
    fn center_examples() {
        assert_eq!(unit_camera().center(), Vec3::zeros());
        let mut cam = unit_camera();
        cam.translation = Vec3::new(0.0, 0.0, 3.0);
        assert_eq!(cam.center(), Vec3::new(0.0, 0.0, -3.0));
        let r = euler_to_matrix([0.1, 0.2, 0.3]);
        let t = Vec3::new(1.0, 2.0, 3.0);
        let cam = Camera::new(r, t, 1.0, 1.0, 0.0, 0.0, 8, 8).unwrap();
        let mut expected = Vec3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                expected[i] -= r[(j, i)] * t[j];
            }
        }
        assert_relative_eq!(cam.center(), expected, epsilon = 1e-15);
    }

    #[test]
    fn pixel_ray_examples() {
        let cam = unit_camera();
        let ray = cam.pixel_ray(&Vec2::new(0.0, 0.0)).unwrap();
        assert_relative_eq!(ray.dir, Vec3::z(), epsilon = 1e-15);

        let cam = Camera::new(
            Mat3::identity(),
            Vec3::zeros(),
            50.0,
            50.0,
            0.0,
            0.0,
            64,
            64,
        )
        .unwrap();
        let ray = cam.pixel_ray(&Vec2::new(10.0, 20.0)).unwrap();
        let expected = Vec3::new(0.2, 0.4, 1.0).normalize();
        assert_relative_eq!(ray.dir, expected, epsilon = 1e-15);

        assert!(matches!(
            cam.pixel_ray(&Vec2::new(-1.0, 3.0)),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn project_then_ray_round_trip() {
        let cam = Camera::new(
            euler_to_matrix([0.3, -0.2, 0.1]),
            Vec3::new(0.1, -0.2, 3.0),
            80.0,
            90.0,
            32.0,
            30.0,
            64,
            64,
        )
        .unwrap();
        let v = Vec3::new(0.2, -0.1, 0.3);
        let q = cam.project(&v).unwrap();
        let ray = cam.pixel_ray(&q).unwrap();
        assert_relative_eq!(ray.dir, cam.view_direction(&v), epsilon = 1e-9);
    }

    #[test]
    fn rejects_improper_rotation() {
        let r = Mat3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Camera::new(r, Vec3::zeros(), 1.0, 1.0, 0.0, 0.0, 4, 4).is_err());
    }

    #[test]
    fn camera_json_round_trip() {
        let cam = Camera::new(
            euler_to_matrix([0.1, 0.2, 0.3]),
            Vec3::new(1.0, 2.0, 3.0),
            10.0,
            11.0,
            5.0,
            6.0,
            32,
            24,
        )
        .unwrap();
        let s = serde_json::to_string(&cam).unwrap();
        assert!(s.contains("\"R\""));
        let back: Camera = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cam);
    }

    #[test]
    fn eigen_diagonal_and_identity() {
        let e = sym_eigen3(&Mat3::from_diagonal(&Vec3::new(0.0, 1.0, 1.0))).unwrap();
        assert_eq!(e.eigenvalues[0], 0.0);
        assert_relative_eq!(e.eigenvectors[0].abs(), Vec3::x(), epsilon = 1e-15);
        assert_eq!(&e.eigenvalues[1..], &[1.0, 1.0]);

        let e = sym_eigen3(&Mat3::identity()).unwrap();
        assert_eq!(e.eigenvalues, [1.0; 3]);
        let v = Mat3::from_columns(&e.eigenvectors);
        assert_relative_eq!(v.transpose() * v, Mat3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn eigen_rejects_asymmetric() {
        let h = Mat3::new(1.0, 2.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(sym_eigen3(&h), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn eigen_random_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let m = Mat3::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let h = m + m.transpose();
            let e = sym_eigen3(&h).unwrap();
            let scale = h.norm();
            assert!((e.reconstruct() - h).norm() < 1e-10 * scale.max(1.0));
            for i in 0..3 {
                let hv = h * e.eigenvectors[i];
                assert!((hv - e.eigenvalues[i] * e.eigenvectors[i]).norm() < 1e-8 * scale);
                for j in 0..i {
                    assert!(e.eigenvectors[i].dot(&e.eigenvectors[j]).abs() < 1e-8);
                }
            }
            assert!(e.eigenvalues[0].abs() <= e.eigenvalues[1].abs());
            assert!(e.eigenvalues[1].abs() <= e.eigenvalues[2].abs());
        }
    }

    #[test]
    fn axis_angle_is_rotation() {
        let w = Vec3::new(0.3, -0.4, 0.5);
        let r = axis_angle_to_matrix(&w);
        let expected = nalgebra::Rotation3::new(w).into_inner();
        assert_relative_eq!(r, expected, epsilon = 1e-14);
        assert_relative_eq!(
            rotation_angle_between(&Mat3::identity(), &r),
            w.norm(),
            epsilon = 1e-12
        );
    }

    proptest::proptest! {
        #[test]
        fn euler_is_proper_rotation(a in -3.2f64..3.2, b in -3.2f64..3.2, c in -3.2f64..3.2) {
            let r = euler_to_matrix([a, b, c]);
            proptest::prop_assert!((r.transpose() * r - Mat3::identity()).abs().max() < 1e-9);
            proptest::prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn pixel_ray_reprojects(
            a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0,
            px in 0.0f64..64.0, py in 0.0f64..48.0,
        ) {
            let cam = Camera::new(
                euler_to_matrix([a, b, c]), Vec3::new(0.1, 0.2, 2.5),
                70.0, 75.0, 32.0, 24.0, 64, 48,
            ).unwrap();
            let p = Vec2::new(px, py);
            let ray = cam.pixel_ray(&p).unwrap();
            for s in [0.5, 1.0, 10.0] {
                let q = cam.project(&ray.at(s)).unwrap();
                proptest::prop_assert!((q - p).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn axis_angle_partials_match_differences() {
        let h = 1e-6;
        for w in [
            Vec3::zeros(),
            Vec3::new(0.3, -0.2, 0.5),
            Vec3::new(1e-9, 0.0, 0.0),
        ] {
            let d = axis_angle_partials(&w);
            for k in 0..3 {
                let e = Vec3::ith(k, h);
                let fd =
                    (axis_angle_to_matrix(&(w + e)) - axis_angle_to_matrix(&(w - e))) / (2.0 * h);
                assert!((fd - d[k]).abs().max() < 1e-8, "{k} {w:?}");
            }
        }
    }

    #[test]
    fn projected_orientation_examples() {
        let cam = Camera::new(
            Mat3::identity(),
            Vec3::zeros(),
            100.0,
            100.0,
            32.0,
            32.0,
            64,
            64,
        )
        .unwrap();
        let x = Vec3::new(0.0, 0.0, 2.0);
        let d = project_3d_orientation(&Vec3::x(), &x, &cam).unwrap();
        assert!((d - Vec2::new(1.0, 0.0)).norm() < 1e-12);
        assert!(matches!(
            project_3d_orientation(&Vec3::z(), &x, &cam),
            Err(Error::DegenerateProjection)
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cam = Camera::look_at(
            Vec3::new(0.4, -0.3, -3.0),
            Vec3::zeros(),
            -Vec3::y(),
            120.0,
            110.0,
            30.0,
            34.0,
            64,
            64,
        )
        .unwrap();
        for _ in 0..50 {
            let x = Vec3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            let dir = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            let d = project_3d_orientation(&dir, &x, &cam).unwrap();
            let eps = 1e-7;
            let fd = (cam.project(&(x + dir * eps)).unwrap() - cam.project(&x).unwrap()) / eps;
            let fd = fd.normalize();
            assert!((fd - d).norm() < 1e-4 || (fd + d).norm() < 1e-4);
        }
    }

    #[test]
    fn tape_camera_matches_values_and_gradients() {
        let base = Camera::look_at(
            Vec3::new(0.3, -0.2, -2.5),
            Vec3::zeros(),
            -Vec3::y(),
            80.0,
            90.0,
            32.0,
            30.0,
            64,
            64,
        )
        .unwrap();
        let pose = [0.01, -0.02, 0.015, 0.02, -0.01, 0.03];
        let x = Vec3::new(0.1, 0.2, -0.3);
        let dir = Vec3::new(0.3, 0.8, -0.2).normalize();
        let pixel = Vec2::new(20.5, 40.25);
        let eval = |p: &[f64]| {
            let mut tape = Tape::with_params(p);
            let w = [tape.param(0), tape.param(1), tape.param(2)];
            let dt = [tape.param(3), tape.param(4), tape.param(5)];
            let cam = TapeCamera::new(&mut tape, &base, w, dt);
            let xv = tape.vec3(&x);
            let dv = tape.vec3(&dir);
            let c = cam.center(&mut tape);
            let r = cam.ray_direction(&mut tape, &pixel);
            let q = cam.project_direction(&mut tape, xv, dv).unwrap();
            let expected =
                base.perturbed(&Vec3::new(p[0], p[1], p[2]), &Vec3::new(p[3], p[4], p[5]));
            assert!((tape.val3(c) - expected.center()).norm() < 1e-12);
            assert!((tape.val3(r) - expected.pixel_direction(&pixel).normalize()).norm() < 1e-12);
            let d = project_3d_orientation(&dir, &x, &expected).unwrap();
            assert!((Vec2::new(tape.val(q[0]), tape.val(q[1])) - d).norm() < 1e-12);
            let loss = tape.lin_comb(
                &[c[0], c[1], c[2], r[0], r[1], r[2], q[0], q[1]],
                &[1.0, -2.0, 0.5, 3.0, 1.0, -1.0, 2.0, 1.5],
                0.0,
            );
            (tape.val(loss), tape.grad(loss).unwrap())
        };
        let (_, grad) = eval(&pose);
        let report = crate::autodiff::finite_diff_check(|p| eval(p).0, &pose, &grad, 1e-6);
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }
}
