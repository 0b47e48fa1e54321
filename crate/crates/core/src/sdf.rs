//! Signed distance fields: analytic primitives, the neural field, normals,
//! finite-difference Hessians, principal directions and the eikonal term.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Head, Init, Mlp, MlpConfig, Tape, Var, V3};
use crate::error::{Error, Result};
use crate::geometry::{sym_eigen3, Mat3, Vec3};

/// Gradient norms below this are treated as vanishing.
pub const MIN_GRADIENT: f64 = 1e-9;
/// Default step of the finite-difference Hessian.
pub const HESSIAN_STEP: f64 = 1e-4;
/// Principal curvatures closer than this are reported as umbilic.
pub const UMBILIC_GAP: f64 = 1e-6;

pub trait DistanceField: Sync {
    fn eval(&self, x: &Vec3) -> f64;

    /// Unnormalized spatial gradient `∇ₓf`.
    fn gradient(&self, x: &Vec3) -> Vec3;

    /// Value and geometry feature vector.
    fn eval_feature(&self, x: &Vec3) -> (f64, Vec<f64>) {
        (self.eval(x), Vec::new())
    }

    fn feature_dim(&self) -> usize {
        0
    }
}

/// Field value, gradient and feature recorded on a tape.
#[derive(Clone, Debug)]
pub struct TapeSample {
    pub f: Var,
    pub grad: V3,
    pub z: Vec<Var>,
}

pub trait TapeField: DistanceField {
    fn eval_tape(&self, tape: &mut Tape, x: V3) -> Result<TapeSample>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SdfField {
    Sphere {
        center: Vec3,
        radius: f64,
    },
    /// Torus around `axis` (unit) through `center`; `major` is the distance
    /// from the axis to the tube centre, `minor` the tube radius.
    Torus {
        center: Vec3,
        axis: Vec3,
        major: f64,
        minor: f64,
    },
    /// Half-space `normal·x − offset`.
    Plane {
        normal: Vec3,
        offset: f64,
    },
    /// Infinite cylinder.
    Cylinder {
        point: Vec3,
        axis: Vec3,
        radius: f64,
    },
    Union(Vec<SdfField>),
    #[serde(skip)]
    Neural(NeuralSdf),
}

impl SdfField {
    pub fn sphere(center: Vec3, radius: f64) -> Self {
        SdfField::Sphere { center, radius }
    }

    pub fn unit_sphere() -> Self {
        Self::sphere(Vec3::zeros(), 1.0)
    }

    /// Torus about the z axis centred at the origin.
    pub fn torus(major: f64, minor: f64) -> Self {
        SdfField::Torus {
            center: Vec3::zeros(),
            axis: Vec3::z(),
            major,
            minor,
        }
    }

    pub fn plane(normal: Vec3, offset: f64) -> Self {
        SdfField::Plane {
            normal: normal.normalize(),
            offset,
        }
    }

    pub fn cylinder(point: Vec3, axis: Vec3, radius: f64) -> Self {
        SdfField::Cylinder {
            point,
            axis: axis.normalize(),
            radius,
        }
    }

    /// Index of the union member attaining the minimum at `x`.
    fn closest(children: &[SdfField], x: &Vec3) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, c) in children.iter().enumerate() {
            let v = c.eval(x);
            if v < best.1 {
                best = (i, v);
            }
        }
        best.0
    }
}

struct TorusFrame {
    radial: Vec3,
    rho: f64,
    h: f64,
    q0: f64,
    qn: f64,
}

fn torus_frame(x: &Vec3, center: &Vec3, axis: &Vec3, major: f64) -> TorusFrame {
    let p = x - center;
    let h = p.dot(axis);
    let radial = p - axis * h;
    let rho = radial.norm();
    let q0 = rho - major;
    TorusFrame {
        radial,
        rho,
        h,
        q0,
        qn: (q0 * q0 + h * h).sqrt(),
    }
}

impl DistanceField for SdfField {
    fn eval(&self, x: &Vec3) -> f64 {
        match self {
            SdfField::Sphere { center, radius } => (x - center).norm() - radius,
            SdfField::Torus {
                center,
                axis,
                major,
                minor,
            } => torus_frame(x, center, axis, *major).qn - minor,
            SdfField::Plane { normal, offset } => normal.dot(x) - offset,
            SdfField::Cylinder {
                point,
                axis,
                radius,
            } => {
                let p = x - point;
                (p - axis * p.dot(axis)).norm() - radius
            }
            SdfField::Union(children) => children
                .iter()
                .map(|c| c.eval(x))
                .fold(f64::INFINITY, f64::min),
            SdfField::Neural(n) => n.view().eval(x),
        }
    }

    fn gradient(&self, x: &Vec3) -> Vec3 {
        match self {
            SdfField::Sphere { center, .. } => {
                let p = x - center;
                let n = p.norm();
                if n == 0.0 {
                    Vec3::zeros()
                } else {
                    p / n
                }
            }
            SdfField::Torus {
                center,
                axis,
                major,
                ..
            } => {
                let t = torus_frame(x, center, axis, *major);
                if t.qn == 0.0 {
                    return Vec3::zeros();
                }
                let radial = if t.rho > 0.0 {
                    t.radial / t.rho
                } else {
                    Vec3::zeros()
                };
                radial * (t.q0 / t.qn) + axis * (t.h / t.qn)
            }
            SdfField::Plane { normal, .. } => *normal,
            SdfField::Cylinder { point, axis, .. } => {
                let p = x - point;
                let perp = p - axis * p.dot(axis);
                let n = perp.norm();
                if n == 0.0 {
                    Vec3::zeros()
                } else {
                    perp / n
                }
            }
            SdfField::Union(children) => {
                if children.is_empty() {
                    Vec3::zeros()
                } else {
                    children[Self::closest(children, x)].gradient(x)
                }
            }
            SdfField::Neural(n) => n.view().gradient(x),
        }
    }

    fn eval_feature(&self, x: &Vec3) -> (f64, Vec<f64>) {
        match self {
            SdfField::Neural(n) => n.view().eval_feature(x),
            _ => (self.eval(x), Vec::new()),
        }
    }

    fn feature_dim(&self) -> usize {
        match self {
            SdfField::Neural(n) => n.feature_dim(),
            _ => 0,
        }
    }
}

impl TapeField for SdfField {
    fn eval_tape(&self, tape: &mut Tape, x: V3) -> Result<TapeSample> {
        match self {
            SdfField::Sphere { center, radius } => {
                let p = tape.add3_const(x, &-center);
                let r = tape.norm3(p);
                let f = tape.add_const(r, -radius);
                let grad = [tape.div(p[0], r), tape.div(p[1], r), tape.div(p[2], r)];
                Ok(TapeSample {
                    f,
                    grad,
                    z: Vec::new(),
                })
            }
            SdfField::Torus {
                center,
                axis,
                major,
                minor,
            } => {
                let p = tape.add3_const(x, &-center);
                let h = tape.dot3_const(p, axis);
                let ah: V3 = std::array::from_fn(|i| tape.scale(h, axis[i]));
                let radial = tape.sub3(p, ah);
                let rho = tape.norm3(radial);
                let q0 = tape.add_const(rho, -major);
                let q = [q0, h];
                let qn = {
                    let s = tape.dot(&q, &q);
                    tape.sqrt(s)
                };
                let f = tape.add_const(qn, -minor);
                let cr = tape.div(q0, qn);
                let ca = tape.div(h, qn);
                let w = tape.div(cr, rho);
                let grad = std::array::from_fn(|i| {
                    let a = tape.mul(radial[i], w);
                    let b = tape.scale(ca, axis[i]);
                    tape.add(a, b)
                });
                Ok(TapeSample {
                    f,
                    grad,
                    z: Vec::new(),
                })
            }
            SdfField::Plane { normal, offset } => {
                let f = tape.lin_comb(&x, &[normal.x, normal.y, normal.z], -offset);
                let grad = [
                    tape.constant(normal.x),
                    tape.constant(normal.y),
                    tape.constant(normal.z),
                ];
                Ok(TapeSample {
                    f,
                    grad,
                    z: Vec::new(),
                })
            }
            SdfField::Cylinder {
                point,
                axis,
                radius,
            } => {
                let p = tape.add3_const(x, &-point);
                let h = tape.dot3_const(p, axis);
                let ah: V3 = std::array::from_fn(|i| tape.scale(h, axis[i]));
                let perp = tape.sub3(p, ah);
                let n = tape.norm3(perp);
                let f = tape.add_const(n, -radius);
                let grad = [
                    tape.div(perp[0], n),
                    tape.div(perp[1], n),
                    tape.div(perp[2], n),
                ];
                Ok(TapeSample {
                    f,
                    grad,
                    z: Vec::new(),
                })
            }
            SdfField::Union(children) => {
                if children.is_empty() {
                    return Err(Error::InvalidConfig("empty union".into()));
                }
                let xv = tape.val3(x);
                children[Self::closest(children, &xv)].eval_tape(tape, x)
            }
            SdfField::Neural(n) => n.view().eval_tape(tape, x),
        }
    }
}

/// MLP-backed field: output 0 is the signed distance, the remaining
/// outputs form the geometry feature `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralSdf {
    pub net: Mlp,
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdfNetConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub skip_layers: Vec<usize>,
    pub feature_dim: usize,
    #[serde(default = "default_beta")]
    pub softplus_beta: f64,
    /// Radius of the sphere the field starts from.
    #[serde(default = "default_init_radius")]
    pub init_radius: f64,
}

fn default_beta() -> f64 {
    100.0
}

fn default_init_radius() -> f64 {
    0.75
}

impl Default for SdfNetConfig {
    fn default() -> Self {
        Self {
            hidden_width: 64,
            hidden_layers: 8,
            skip_layers: vec![4],
            feature_dim: 32,
            softplus_beta: 100.0,
            init_radius: 0.75,
        }
    }
}

impl SdfNetConfig {
    pub fn mlp(&self) -> MlpConfig {
        MlpConfig {
            input_dim: 3,
            output_dim: 1 + self.feature_dim,
            hidden_width: self.hidden_width,
            hidden_layers: self.hidden_layers,
            skip_layers: self.skip_layers.clone(),
            softplus_beta: self.softplus_beta,
            head: Head::Identity,
        }
    }
}

impl NeuralSdf {
    pub fn new(net: Mlp, params: Vec<f64>) -> Result<Self> {
        if net.input_dim() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "distance network must take 3 inputs, not {}",
                net.input_dim()
            )));
        }
        if params.len() != net.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "distance network needs {} parameters, got {}",
                net.n_params(),
                params.len()
            )));
        }
        Ok(Self { net, params })
    }

    /// Field initialised to approximate `‖x‖ − init_radius`.
    pub fn geometric<R: Rng>(config: &SdfNetConfig, rng: &mut R) -> Result<Self> {
        let net = Mlp::new(config.mlp())?;
        let params = net.init(
            Init::Geometric {
                radius: config.init_radius,
            },
            rng,
        );
        Self::new(net, params)
    }

    pub fn feature_dim(&self) -> usize {
        self.net.output_dim() - 1
    }

    pub fn view(&self) -> NeuralSdfRef<'_> {
        NeuralSdfRef {
            net: &self.net,
            params: &self.params,
            offset: 0,
        }
    }
}

/// Borrowed neural field whose weights sit at `offset` in a tape's
/// parameter block.
#[derive(Clone, Copy, Debug)]
pub struct NeuralSdfRef<'a> {
    pub net: &'a Mlp,
    pub params: &'a [f64],
    pub offset: usize,
}

impl DistanceField for NeuralSdfRef<'_> {
    fn eval(&self, x: &Vec3) -> f64 {
        self.net
            .eval(self.params, x.as_slice())
            .expect("distance network shape")[0]
    }

    fn gradient(&self, x: &Vec3) -> Vec3 {
        let (_, g) = self
            .net
            .eval_with_input_grad(self.params, x.as_slice())
            .expect("distance network shape");
        Vec3::new(g[0], g[1], g[2])
    }

    fn eval_feature(&self, x: &Vec3) -> (f64, Vec<f64>) {
        let y = self
            .net
            .eval(self.params, x.as_slice())
            .expect("distance network shape");
        (y[0], y[1..].to_vec())
    }

    fn feature_dim(&self) -> usize {
        self.net.output_dim() - 1
    }
}

impl TapeField for NeuralSdfRef<'_> {
    fn eval_tape(&self, tape: &mut Tape, x: V3) -> Result<TapeSample> {
        let (y, g) = self.net.forward_tape(tape, self.offset, &x, true)?;
        Ok(TapeSample {
            f: y[0],
            grad: [g[0], g[1], g[2]],
            z: y[1..].to_vec(),
        })
    }
}

/// Unit surface normal `∇f/‖∇f‖`.
pub fn sdf_normal<F: DistanceField + ?Sized>(field: &F, x: &Vec3) -> Result<Vec3> {
    let g = field.gradient(x);
    let n = g.norm();
    if !(n > MIN_GRADIENT) {
        return Err(Error::VanishingGradient);
    }
    Ok(g / n)
}

/// Symmetrized central-difference Hessian of `f`:
/// `Hᵢⱼ = (∂ⱼf(x+h·eᵢ) − ∂ⱼf(x−h·eᵢ))/2h`, then `(H+Hᵀ)/2`.
pub fn sdf_hessian<F: DistanceField + ?Sized>(field: &F, x: &Vec3, h: f64) -> Mat3 {
    let mut m = Mat3::zeros();
    for i in 0..3 {
        let mut e = Vec3::zeros();
        e[i] = h;
        let d = (field.gradient(&(x + e)) - field.gradient(&(x - e))) / (2.0 * h);
        for j in 0..3 {
            m[(i, j)] = d[j];
        }
    }
    (m + m.transpose()) * 0.5
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrincipalFrame {
    /// Direction of least absolute curvature.
    pub d: Vec3,
    /// Curvature along `d`.
    pub k_min: f64,
    /// Curvature across `d`.
    pub k_max: f64,
    pub n: Vec3,
}

/// Indices of (normal, min-curvature, max-curvature) eigenpairs.
fn classify(vectors: &[Vec3; 3], values: &[f64; 3], n: &Vec3) -> (usize, usize, usize) {
    let normal = (0..3)
        .max_by(|&a, &b| vectors[a].dot(n).abs().total_cmp(&vectors[b].dot(n).abs()))
        .unwrap();
    let mut rest: Vec<usize> = (0..3).filter(|&i| i != normal).collect();
    rest.sort_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()));
    (normal, rest[0], rest[1])
}

/// Flips `v` so that its largest-magnitude component is positive.
pub fn sign_normalize(v: Vec3) -> (Vec3, f64) {
    let k = v.iamax();
    if v[k] < 0.0 {
        (-v, -1.0)
    } else {
        (v, 1.0)
    }
}

/// Principal directions from the Hessian eigenstructure. The eigenvector
/// closest to the normal is discarded; `d` is the tangent direction of
/// smallest absolute curvature.
pub fn principal_directions<F: DistanceField + ?Sized>(
    field: &F,
    x: &Vec3,
) -> Result<PrincipalFrame> {
    let n = sdf_normal(field, x)?;
    let h = sdf_hessian(field, x, HESSIAN_STEP);
    let eig = sym_eigen3(&h)?;
    let (_, lo, hi) = classify(&eig.eigenvectors, &eig.eigenvalues, &n);
    let (k_min, k_max) = (eig.eigenvalues[lo], eig.eigenvalues[hi]);
    if (k_min - k_max).abs() < UMBILIC_GAP {
        return Err(Error::UmbilicPoint {
            k1: k_min,
            k2: k_max,
        });
    }
    let (d, _) = sign_normalize(eig.eigenvectors[lo]);
    Ok(PrincipalFrame { d, k_min, k_max, n })
}

/// Principal direction at a tape point, differentiable through the six
/// gradient evaluations forming the Hessian. `n` is the (constant) normal
/// used to identify the normal eigenpair.
pub fn principal_direction_tape<F: TapeField + ?Sized>(
    field: &F,
    tape: &mut Tape,
    x: V3,
    n: &Vec3,
) -> Result<V3> {
    let h = HESSIAN_STEP;
    let mut rows: [[Var; 3]; 6] = [[x[0]; 3]; 6];
    for i in 0..3 {
        for (k, sign) in [(0, 1.0), (1, -1.0)] {
            let mut xi = x;
            xi[i] = tape.add_const(x[i], sign * h);
            rows[2 * i + k] = field.eval_tape(tape, xi)?.grad;
        }
    }
    // Symmetrized entries (00, 01, 02, 11, 12, 22).
    let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
    let s = 1.0 / (4.0 * h);
    let entries: Vec<Var> = pairs
        .iter()
        .map(|&(a, b)| {
            let args = [
                rows[2 * a][b],
                rows[2 * a + 1][b],
                rows[2 * b][a],
                rows[2 * b + 1][a],
            ];
            tape.lin_comb(&args, &[s, -s, s, -s], 0.0)
        })
        .collect();
    let mut m = Mat3::zeros();
    for (k, &(a, b)) in pairs.iter().enumerate() {
        m[(a, b)] = tape.val(entries[k]);
        m[(b, a)] = m[(a, b)];
    }
    let eig = sym_eigen3(&m)?;
    let (vs, ls) = (&eig.eigenvectors, &eig.eigenvalues);
    let (_, lo, hi) = classify(vs, ls, n);
    if (ls[lo] - ls[hi]).abs() < UMBILIC_GAP {
        return Err(Error::UmbilicPoint {
            k1: ls[lo],
            k2: ls[hi],
        });
    }
    let (d, sign) = sign_normalize(vs[lo]);
    // First-order eigenvector perturbation:
    // dv_k = Σ_{j≠k} v_j (v_jᵀ dH v_k) / (λ_k − λ_j).
    let vk = vs[lo];
    Ok(std::array::from_fn(|c| {
        let partials: Vec<f64> = pairs
            .iter()
            .map(|&(a, b)| {
                let mut acc = 0.0;
                for j in 0..3 {
                    let gap = ls[lo] - ls[j];
                    if j == lo || gap.abs() < 1e-12 {
                        continue;
                    }
                    let vj = vs[j];
                    let coupling = if a == b {
                        vj[a] * vk[a]
                    } else {
                        vj[a] * vk[b] + vj[b] * vk[a]
                    };
                    acc += vj[c] * coupling / gap;
                }
                sign * acc
            })
            .collect();
        tape.custom(&entries, &partials, d[c])
    }))
}

/// Mean of `(‖∇f‖ − 1)²` over `points`.
pub fn eikonal_residual<F: DistanceField + ?Sized>(field: &F, points: &[Vec3]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyBatch("eikonal points"));
    }
    let s: f64 = points
        .iter()
        .map(|p| (field.gradient(p).norm() - 1.0).powi(2))
        .sum();
    Ok(s / points.len() as f64)
}

/// Taped `(‖∇f(x)‖ − 1)²` for one point.
pub fn eikonal_term_tape<F: TapeField + ?Sized>(
    field: &F,
    tape: &mut Tape,
    x: &Vec3,
) -> Result<Var> {
    let xv = tape.vec3(x);
    let s = field.eval_tape(tape, xv)?;
    let n = tape.norm3(s.grad);
    let e = tape.add_const(n, -1.0);
    Ok(tape.square(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn torus_point(major: f64, minor: f64, phi: f64, theta: f64) -> Vec3 {
        let rho = major + minor * theta.cos();
        Vec3::new(rho * phi.cos(), rho * phi.sin(), minor * theta.sin())
    }

    #[test]
    fn eval_examples() {
        assert_eq!(SdfField::unit_sphere().eval(&Vec3::new(0.0, 0.0, 2.0)), 1.0);
        assert!(
            SdfField::torus(1.0, 0.25)
                .eval(&Vec3::new(1.0, 0.0, 0.25))
                .abs()
                < 1e-15
        );
        let u = SdfField::Union(vec![SdfField::unit_sphere(), SdfField::torus(1.0, 0.25)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let expected = SdfField::unit_sphere()
                .eval(&x)
                .min(SdfField::torus(1.0, 0.25).eval(&x));
            assert_eq!(u.eval(&x), expected);
        }
    }

    #[test]
    fn analytic_fields_are_euclidean_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (major, minor) = (1.0, 0.25);
        let torus = SdfField::torus(major, minor);
        let tau = std::f64::consts::TAU;
        // Brute-force distance to the parametrized surface: coarse grid then
        // a fine grid around the best coarse sample.
        let dense = |x: &Vec3| {
            let search = |c: (f64, f64), span: f64, n: usize| {
                let mut best = (f64::INFINITY, c);
                for i in 0..=n {
                    for j in 0..=n {
                        let phi = c.0 - span + 2.0 * span * i as f64 / n as f64;
                        let theta = c.1 - span + 2.0 * span * j as f64 / n as f64;
                        let d = (torus_point(major, minor, phi, theta) - x).norm();
                        if d < best.0 {
                            best = (d, (phi, theta));
                        }
                    }
                }
                best
            };
            let mut best = search((tau / 2.0, tau / 2.0), tau / 2.0, 200);
            let mut span = tau / 200.0;
            for _ in 0..4 {
                best = search(best.1, span, 40);
                span /= 10.0;
            }
            best.0
        };
        for _ in 0..20 {
            let x = Vec3::from_fn(|_, _| rng.random_range(-1.5..1.5));
            let d = dense(&x);
            let f = torus.eval(&x).abs();
            assert!((d - f).abs() < 1e-9, "{d} vs {f}");
        }
    }

    #[test]
    fn normals() {
        assert_eq!(
            sdf_normal(&SdfField::unit_sphere(), &Vec3::new(0.0, 0.0, 2.0)).unwrap(),
            Vec3::z()
        );
        let n0 = Vec3::new(1.0, 2.0, -2.0).normalize();
        let plane = SdfField::plane(n0, 0.3);
        assert!((sdf_normal(&plane, &Vec3::new(5.0, -1.0, 0.2)).unwrap() - n0).norm() < 1e-15);
        assert!(matches!(
            sdf_normal(&SdfField::unit_sphere(), &Vec3::zeros()),
            Err(Error::VanishingGradient)
        ));
    }

    #[test]
    fn hessian_examples() {
        let plane = SdfField::plane(Vec3::new(0.3, -0.2, 1.0), 0.1);
        assert!(
            sdf_hessian(&plane, &Vec3::new(0.2, 0.4, -0.1), HESSIAN_STEP)
                .abs()
                .max()
                < 1e-8
        );

        let h = sdf_hessian(
            &SdfField::unit_sphere(),
            &Vec3::new(0.0, 0.0, 2.0),
            HESSIAN_STEP,
        );
        let e = sym_eigen3(&h).unwrap().eigenvalues;
        for (a, b) in e.iter().zip([0.0, 0.5, 0.5]) {
            assert!((a - b).abs() < 1e-5);
        }

        // Direct second differences of f as an independent oracle.
        let torus = SdfField::torus(1.0, 0.25);
        let x = torus_point(1.0, 0.25, 0.7, 2.1);
        let h = sdf_hessian(&torus, &x, HESSIAN_STEP);
        let s = 2e-4;
        for i in 0..3 {
            for j in 0..3 {
                let mut ei = Vec3::zeros();
                ei[i] = s;
                let mut ej = Vec3::zeros();
                ej[j] = s;
                let f = |p: Vec3| torus.eval(&(x + p));
                let fd = (f(ei + ej) - f(ei - ej) - f(ej - ei) + f(-ei - ej)) / (4.0 * s * s);
                assert!(
                    (fd - h[(i, j)]).abs() < 1e-5,
                    "({i},{j}) {fd} vs {}",
                    h[(i, j)]
                );
            }
        }
    }

    #[test]
    fn hessian_annihilates_normal() {
        let torus = SdfField::torus(1.0, 0.25);
        for k in 0..50 {
            let x = torus_point(1.0, 0.25, 0.13 * k as f64, 0.41 * k as f64);
            let n = sdf_normal(&torus, &x).unwrap();
            assert!((sdf_hessian(&torus, &x, HESSIAN_STEP) * n).norm() < 1e-5);
        }
    }

    #[test]
    fn torus_principal_direction() {
        let torus = SdfField::torus(1.0, 0.25);
        let p = principal_directions(&torus, &Vec3::new(1.25, 0.0, 0.0)).unwrap();
        assert!(p.d.dot(&Vec3::y()) > 2f64.to_radians().cos());
        assert!((p.k_min - 0.8).abs() < 1e-5 && (p.k_max - 4.0).abs() < 1e-4);
    }

    #[test]
    fn cylinder_direction_is_axis() {
        let axis = Vec3::new(1.0, 1.0, 0.5).normalize();
        let cyl = SdfField::cylinder(Vec3::zeros(), axis, 0.5);
        let x = axis.cross(&Vec3::z()).normalize() * 0.5 + axis * 0.3;
        let p = principal_directions(&cyl, &x).unwrap();
        assert!(p.d.dot(&axis).abs() > 1f64.to_radians().cos());
        assert!(p.k_min.abs() < 1e-4);
    }

    #[test]
    fn sphere_is_umbilic() {
        let r = principal_directions(&SdfField::unit_sphere(), &Vec3::new(0.0, 0.6, 0.8));
        assert!(matches!(r, Err(Error::UmbilicPoint { .. })));
    }

    #[test]
    fn direction_is_tangent() {
        let torus = SdfField::torus(1.0, 0.25);
        for k in 0..50 {
            let x = torus_point(1.0, 0.25, 0.37 * k as f64, 0.23 * k as f64 + 0.1);
            let p = principal_directions(&torus, &x).unwrap();
            assert!(p.d.dot(&p.n).abs() < 1e-6);
        }
    }

    #[test]
    fn eikonal_examples() {
        let pts = vec![Vec3::new(0.3, 0.2, 0.1), Vec3::new(-2.0, 1.0, 0.5)];
        assert!(eikonal_residual(&SdfField::unit_sphere(), &pts).unwrap() < 1e-12);
        struct Scaled;
        impl DistanceField for Scaled {
            fn eval(&self, x: &Vec3) -> f64 {
                2.0 * (x.norm() - 1.0)
            }
            fn gradient(&self, x: &Vec3) -> Vec3 {
                2.0 * x.normalize()
            }
        }
        assert!((eikonal_residual(&Scaled, &pts).unwrap() - 1.0).abs() < 1e-12);
        assert!(eikonal_residual(&Scaled, &[]).is_err());
    }

    #[test]
    fn geometric_init_is_near_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sdf = NeuralSdf::geometric(&SdfNetConfig::default(), &mut rng).unwrap();
        let pts: Vec<Vec3> = (0..1024)
            .map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let r = eikonal_residual(&sdf.view(), &pts).unwrap();
        assert!(r < 0.1, "{r}");
    }

    #[test]
    fn neural_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = SdfNetConfig {
            hidden_width: 16,
            hidden_layers: 4,
            skip_layers: vec![2],
            feature_dim: 4,
            ..Default::default()
        };
        let sdf = NeuralSdf::geometric(&cfg, &mut rng).unwrap();
        for _ in 0..20 {
            let x = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let g = sdf.view().gradient(&x);
            for k in 0..3 {
                let mut e = Vec3::zeros();
                e[k] = 1e-6;
                let fd = (sdf.view().eval(&(x + e)) - sdf.view().eval(&(x - e))) / 2e-6;
                assert!((fd - g[k]).abs() <= 1e-5 * g.norm());
            }
        }
    }

    #[test]
    fn tape_fields_match_plain_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fields = [
            SdfField::unit_sphere(),
            SdfField::torus(1.0, 0.25),
            SdfField::plane(Vec3::new(0.0, 1.0, 1.0), 0.2),
            SdfField::cylinder(Vec3::new(0.1, 0.0, 0.0), Vec3::z(), 0.3),
            SdfField::Union(vec![SdfField::unit_sphere(), SdfField::torus(0.8, 0.3)]),
        ];
        for f in &fields {
            for _ in 0..20 {
                let x = Vec3::from_fn(|_, _| rng.random_range(-1.5..1.5));
                let mut t = Tape::new();
                let xv = t.vec3(&x);
                let s = f.eval_tape(&mut t, xv).unwrap();
                assert!((t.val(s.f) - f.eval(&x)).abs() < 1e-14);
                assert!((t.val3(s.grad) - f.gradient(&x)).norm() < 1e-12);
            }
        }
    }

    /// The taped principal direction and its derivative with respect to the
    /// query point, against differences of the plain computation.
    #[test]
    fn principal_direction_tape_derivative() {
        let torus = SdfField::torus(1.0, 0.25);
        let x0 = torus_point(1.0, 0.25, 0.4, 0.9);
        let plain = |x: &Vec3| principal_directions(&torus, x).unwrap().d;
        let n = sdf_normal(&torus, &x0).unwrap();
        let mut t = Tape::with_params(x0.as_slice());
        let xv = [t.param(0), t.param(1), t.param(2)];
        let d = principal_direction_tape(&torus, &mut t, xv, &n).unwrap();
        assert!((t.val3(d) - plain(&x0)).norm() < 1e-9);
        for c in 0..3 {
            let g = t.grad(d[c]).unwrap();
            for k in 0..3 {
                let mut e = Vec3::zeros();
                e[k] = 1e-5;
                let fd = (plain(&(x0 + e))[c] - plain(&(x0 - e))[c]) / 2e-5;
                assert!((fd - g[k]).abs() < 1e-4, "d{c}/dx{k}: {fd} vs {}", g[k]);
            }
        }
    }
}
