//! Proxy-fit energies built on the tape, and the gradient-descent fit.

use serde::{Deserialize, Serialize};

use super::model::{
    combine_tape, model_albedo, model_geometry, vertex_normals_tape, LinearMorphableModel,
    MorphCoeffs,
};
use super::raster::{rasterize, Raster};
use super::sh::{irradiance_tape, shade_vertex, ShLighting};
use crate::autodiff::{Tape, Var, V3};
use crate::error::{Error, Result};
use crate::geometry::{euler_to_matrix, Camera, Mat3, Vec2, Vec3, MIN_DEPTH};
use crate::mesh_io::{Mask, RgbImage};

/// Depth at which the default initialization places the mean shape.
pub const INIT_DEPTH: f64 = 2.5;

/// One observed view: image, face-region mask and 2D landmarks aligned with
/// the model's landmark list.
#[derive(Clone, Debug)]
pub struct ProxyView {
    pub image: RgbImage,
    pub face_mask: Mask,
    pub landmarks: Vec<Vec2>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyWeights {
    pub photo: f64,
    pub landmark: f64,
    pub reg: f64,
}

impl Default for ProxyWeights {
    fn default() -> Self {
        Self {
            photo: 80.0,
            landmark: 5.0,
            reg: 20.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyFitConfig {
    pub weights: ProxyWeights,
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the energy by less than this fraction.
    pub rel_tolerance: f64,
    pub optimizer: ProxyOptimizer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyOptimizer {
    /// Preconditioned steepest descent.
    GradientDescent,
    /// Same line search along limited-memory quasi-Newton directions.
    Lbfgs,
}

impl Default for ProxyFitConfig {
    fn default() -> Self {
        Self {
            weights: ProxyWeights::default(),
            max_iterations: 2000,
            rel_tolerance: 1e-6,
            optimizer: ProxyOptimizer::GradientDescent,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProxyFitResult {
    pub coeffs: MorphCoeffs,
    pub lighting: Vec<ShLighting>,
    pub cameras: Vec<Camera>,
    pub energy: f64,
    /// Total energy after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

/// Parameter layout: `[α_id, α_exp, α_alb]`, then per view
/// `[γ (9), Euler angles (3), t (3)]`. The rotation of view j is
/// `E(angles)·R_j` where `R_j` is the rotation the fit started from.
#[derive(Clone, Copy, Debug)]
struct Layout {
    k_id: usize,
    k_exp: usize,
    k_alb: usize,
}

const VIEW_PARAMS: usize = 15;

impl Layout {
    fn new(model: &LinearMorphableModel) -> Self {
        Self {
            k_id: model.k_id(),
            k_exp: model.k_exp(),
            k_alb: model.k_alb(),
        }
    }

    fn n_coeffs(&self) -> usize {
        self.k_id + self.k_exp + self.k_alb
    }

    fn view(&self, j: usize) -> usize {
        self.n_coeffs() + VIEW_PARAMS * j
    }

    fn pack(&self, coeffs: &MorphCoeffs, lighting: &[ShLighting], cameras: &[Camera]) -> Vec<f64> {
        let mut x = coeffs.flat();
        for (g, c) in lighting.iter().zip(cameras) {
            x.extend_from_slice(&g.0);
            x.extend_from_slice(&[0.0; 3]);
            x.extend(c.translation.iter());
        }
        x
    }

    fn coeffs(&self, x: &[f64]) -> MorphCoeffs {
        let (a, b) = (self.k_id, self.k_id + self.k_exp);
        MorphCoeffs {
            id: x[..a].to_vec(),
            exp: x[a..b].to_vec(),
            alb: x[b..self.n_coeffs()].to_vec(),
        }
    }

    fn lighting(&self, x: &[f64], j: usize) -> ShLighting {
        let o = self.view(j);
        ShLighting(x[o..o + 9].try_into().unwrap())
    }

    fn camera(&self, x: &[f64], j: usize, base: &Camera) -> Camera {
        let o = self.view(j) + 9;
        Camera {
            rotation: euler_to_matrix([x[o], x[o + 1], x[o + 2]]) * base.rotation,
            translation: Vec3::new(x[o + 3], x[o + 4], x[o + 5]),
            ..base.clone()
        }
    }
}

/// `Rz·Ry·Rx` and its derivatives with respect to each angle.
fn euler_with_partials(a: [f64; 3]) -> (Mat3, [Mat3; 3]) {
    let (sa, ca) = a[0].sin_cos();
    let (sb, cb) = a[1].sin_cos();
    let (sc, cc) = a[2].sin_cos();
    let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, ca, -sa, 0.0, sa, ca);
    let ry = Mat3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    let rz = Mat3::new(cc, -sc, 0.0, sc, cc, 0.0, 0.0, 0.0, 1.0);
    let drx = Mat3::new(0.0, 0.0, 0.0, 0.0, -sa, -ca, 0.0, ca, -sa);
    let dry = Mat3::new(-sb, 0.0, cb, 0.0, 0.0, 0.0, -cb, 0.0, -sb);
    let drz = Mat3::new(-sc, -cc, 0.0, cc, -sc, 0.0, 0.0, 0.0, 0.0);
    (rz * ry * rx, [rz * ry * drx, rz * dry * rx, drz * ry * rx])
}

/// Rows of `E(angles)·base` as tape variables.
fn rotation_tape(tape: &mut Tape, angles: [Var; 3], base: &Mat3) -> [V3; 3] {
    let (e, d) = euler_with_partials(tape.vals(angles));
    let r = e * base;
    let dr = d.map(|m| m * base);
    std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            tape.custom(
                &angles,
                &[dr[0][(i, j)], dr[1][(i, j)], dr[2][(i, j)]],
                r[(i, j)],
            )
        })
    })
}

fn project_tape(tape: &mut Tape, cam: &Camera, p: V3) -> [Var; 2] {
    let v = tape.val3(p);
    let iz = 1.0 / v.z;
    let qx = tape.custom(
        &[p[0], p[2]],
        &[cam.fx * iz, -cam.fx * v.x * iz * iz],
        cam.fx * v.x * iz + cam.cx,
    );
    let qy = tape.custom(
        &[p[1], p[2]],
        &[cam.fy * iz, -cam.fy * v.y * iz * iz],
        cam.fy * v.y * iz + cam.cy,
    );
    [qx, qy]
}

struct Terms {
    photo: Var,
    landmark: Var,
    reg: Var,
}

fn check_views(
    model: &LinearMorphableModel,
    views: &[ProxyView],
    cameras: &[Camera],
) -> Result<()> {
    if views.is_empty() {
        return Err(Error::InvalidConfig(
            "proxy fit needs at least one view".into(),
        ));
    }
    if cameras.len() != views.len() {
        return Err(Error::CountMismatch {
            expected: views.len(),
            found: cameras.len(),
        });
    }
    for (j, v) in views.iter().enumerate() {
        v.image.size_check(&v.face_mask, "face mask")?;
        if v.face_mask.count() == 0 {
            return Err(Error::EmptyMask { view: j });
        }
        if v.landmarks.len() != model.landmarks.len() {
            return Err(Error::CountMismatch {
                expected: model.landmarks.len(),
                found: v.landmarks.len(),
            });
        }
    }
    Ok(())
}

fn check_sigmas(model: &LinearMorphableModel) -> Result<()> {
    for (basis, sigma) in [
        ("id", &model.sigma_id),
        ("exp", &model.sigma_exp),
        ("alb", &model.sigma_alb),
    ] {
        if let Some(index) = sigma.iter().position(|&s| s == 0.0) {
            return Err(Error::ZeroSigma { basis, index });
        }
    }
    Ok(())
}

fn build_terms(
    tape: &mut Tape,
    model: &LinearMorphableModel,
    views: &[ProxyView],
    base: &[Camera],
    lay: &Layout,
) -> Result<Terms> {
    let p = |i: usize| Var(i as u32);
    let ids: Vec<Var> = (0..lay.k_id).map(p).collect();
    let exps: Vec<Var> = (lay.k_id..lay.k_id + lay.k_exp).map(p).collect();
    let albs: Vec<Var> = (lay.k_id + lay.k_exp..lay.n_coeffs()).map(p).collect();

    let inv_var: Vec<f64> = [&model.sigma_id[..], &model.sigma_exp, &model.sigma_alb]
        .concat()
        .iter()
        .map(|s| 1.0 / (s * s))
        .collect();
    let squares: Vec<Var> = (0..lay.n_coeffs()).map(|i| tape.square(p(i))).collect();
    let reg = tape.lin_comb(&squares, &inv_var, 0.0);

    let verts = combine_tape(
        tape,
        &model.mean_geo,
        &[(&model.b_id, &ids), (&model.b_exp, &exps)],
    );
    let normals = vertex_normals_tape(tape, &verts, &model.triangles);
    let albedo = combine_tape(tape, &model.mean_alb, &[(&model.b_alb, &albs)]);

    let mut photo_views = Vec::with_capacity(views.len());
    let mut photo_scale = Vec::with_capacity(views.len());
    let mut land_sq = Vec::new();
    for (j, (view, cam)) in views.iter().zip(base).enumerate() {
        let o = lay.view(j);
        let gamma: Vec<Var> = (o..o + 9).map(p).collect();
        let rows = rotation_tape(tape, [p(o + 9), p(o + 10), p(o + 11)], &cam.rotation);
        let t = [p(o + 12), p(o + 13), p(o + 14)];
        let rv = Mat3::from_fn(|r, c| tape.val(rows[r][c]));
        let tv = tape.val3(t);
        let posed = Camera {
            rotation: rv,
            translation: tv,
            ..cam.clone()
        };

        let mut sq = Vec::new();
        for i in 0..model.n_v {
            let pc = rv * tape.val3(verts[i]) + tv;
            let nc = rv * tape.val3(normals[i]);
            if pc.z <= MIN_DEPTH || nc.dot(&pc) >= 0.0 {
                continue;
            }
            let q = Vec2::new(cam.fx * pc.x / pc.z + cam.cx, cam.fy * pc.y / pc.z + cam.cy);
            if !view.face_mask.at_point(&q) {
                continue;
            }
            let rot = tape.mat3(&rows, verts[i]);
            let pt = tape.add3(rot, t);
            let nt = tape.mat3(&rows, normals[i]);
            let qt = project_tape(tape, &posed, pt);
            let irr = irradiance_tape(tape, &gamma, nt);
            let (s, dx, dy) = view.image.sample(&q);
            for c in 0..3 {
                let ic = tape.mul(albedo[i][c], irr);
                let sc = tape.custom(&qt, &[dx[c], dy[c]], s[c]);
                let r = tape.sub(ic, sc);
                sq.push(tape.square(r));
            }
        }
        photo_views.push(tape.sum(&sq));
        photo_scale.push(1.0 / view.face_mask.count() as f64);

        for (&l, obs) in model.landmarks.iter().zip(&view.landmarks) {
            let rot = tape.mat3(&rows, verts[l]);
            let pt = tape.add3(rot, t);
            let depth = tape.val(pt[2]);
            if depth <= MIN_DEPTH {
                return Err(Error::PointBehindCamera { depth });
            }
            let qt = project_tape(tape, &posed, pt);
            for (k, ob) in [obs.x, obs.y].into_iter().enumerate() {
                let d = tape.add_const(qt[k], -ob);
                land_sq.push(tape.square(d));
            }
        }
    }
    let photo = tape.lin_comb(&photo_views, &photo_scale, 0.0);
    let n_l = model.landmarks.len().max(1) as f64;
    let landmark = tape.lin_comb(&land_sq, &vec![1.0 / n_l; land_sq.len()], 0.0);
    Ok(Terms {
        photo,
        landmark,
        reg,
    })
}

struct Problem<'a> {
    model: &'a LinearMorphableModel,
    views: &'a [ProxyView],
    base: &'a [Camera],
    lay: Layout,
    weights: ProxyWeights,
}

impl Problem<'_> {
    fn total(&self, tape: &mut Tape, x: &[f64]) -> Result<Var> {
        tape.reset(x);
        let terms = build_terms(tape, self.model, self.views, self.base, &self.lay)?;
        let w = self.weights;
        Ok(tape.lin_comb(
            &[terms.photo, terms.landmark, terms.reg],
            &[w.photo, w.landmark, w.reg],
            0.0,
        ))
    }

    fn value(&self, tape: &mut Tape, x: &[f64]) -> Result<f64> {
        let e = self.total(tape, x)?;
        Ok(tape.val(e))
    }

    fn value_and_grad(&self, tape: &mut Tape, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let e = self.total(tape, x)?;
        Ok((tape.val(e), tape.grad(e)?))
    }
}

fn evaluate_terms(
    model: &LinearMorphableModel,
    coeffs: &MorphCoeffs,
    lighting: &[ShLighting],
    cameras: &[Camera],
    views: &[ProxyView],
) -> Result<(f64, f64)> {
    model.check_coeffs(coeffs)?;
    check_views(model, views, cameras)?;
    if lighting.len() != views.len() {
        return Err(Error::CountMismatch {
            expected: views.len(),
            found: lighting.len(),
        });
    }
    let lay = Layout::new(model);
    let mut tape = Tape::with_params(&lay.pack(coeffs, lighting, cameras));
    let terms = build_terms(&mut tape, model, views, cameras, &lay)?;
    Ok((tape.val(terms.photo), tape.val(terms.landmark)))
}

/// Photometric energy: per view, squared colour residuals at visible
/// vertices projecting into the face mask, divided by the mask area.
pub fn energy_photo(
    model: &LinearMorphableModel,
    coeffs: &MorphCoeffs,
    lighting: &[ShLighting],
    cameras: &[Camera],
    views: &[ProxyView],
) -> Result<f64> {
    evaluate_terms(model, coeffs, lighting, cameras, views).map(|e| e.0)
}

/// Landmark energy `(1/|L|) Σ_j Σ_i ‖q_ij − Π_j(V_i)‖²`.
pub fn energy_landmark(
    model: &LinearMorphableModel,
    coeffs: &MorphCoeffs,
    cameras: &[Camera],
    views: &[ProxyView],
) -> Result<f64> {
    let lighting = vec![ShLighting::default(); views.len()];
    evaluate_terms(model, coeffs, &lighting, cameras, views).map(|e| e.1)
}

pub fn energy_reg(model: &LinearMorphableModel, coeffs: &MorphCoeffs) -> Result<f64> {
    model.check_coeffs(coeffs)?;
    check_sigmas(model)?;
    let term = |a: &[f64], s: &[f64]| a.iter().zip(s).map(|(a, s)| (a / s).powi(2)).sum::<f64>();
    Ok(term(&coeffs.id, &model.sigma_id)
        + term(&coeffs.exp, &model.sigma_exp)
        + term(&coeffs.alb, &model.sigma_alb))
}

/// Cameras with identity rotation and the mean shape centred at
/// [`INIT_DEPTH`] in front of each camera.
pub fn initial_cameras(model: &LinearMorphableModel, intrinsics: &[Camera]) -> Vec<Camera> {
    let n = model.n_v.max(1) as f64;
    let centroid = model
        .mean_geo
        .chunks(3)
        .fold(Vec3::zeros(), |acc, c| acc + Vec3::new(c[0], c[1], c[2]))
        / n;
    intrinsics
        .iter()
        .map(|c| Camera {
            rotation: Mat3::identity(),
            translation: Vec3::new(0.0, 0.0, INIT_DEPTH - centroid.z),
            ..c.clone()
        })
        .collect()
}

/// Inverse diagonal curvature from central differences of the gradient,
/// floored so flat directions still move.
fn diagonal_preconditioner(problem: &Problem, tape: &mut Tape, x: &[f64]) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut diag = vec![0.0; x.len()];
    for k in 0..x.len() {
        let h = 1e-4 * x[k].abs().max(1e-2);
        probe[k] = x[k] + h;
        let (_, gp) = problem.value_and_grad(tape, &probe)?;
        probe[k] = x[k] - h;
        let (_, gm) = problem.value_and_grad(tape, &probe)?;
        probe[k] = x[k];
        diag[k] = (gp[k] - gm[k]) / (2.0 * h);
    }
    let top = diag.iter().cloned().fold(0.0, f64::max);
    let floor = (1e-8 * top).max(1e-12);
    Ok(diag.into_iter().map(|d| 1.0 / d.max(floor)).collect())
}

const PRECONDITIONER_REFRESH: usize = 100;
const LBFGS_MEMORY: usize = 8;

/// Descent direction: `-P·g`, or the L-BFGS two-loop recursion seeded with `P`.
fn direction(
    cfg: &ProxyFitConfig,
    precond: &[f64],
    grad: &[f64],
    history: &[(Vec<f64>, Vec<f64>)],
) -> Vec<f64> {
    let mut q = grad.to_vec();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let use_history = cfg.optimizer == ProxyOptimizer::Lbfgs;
    let mut alphas = Vec::new();
    if use_history {
        for (s, y) in history.iter().rev() {
            let a = dot(s, &q) / dot(y, s);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
    }
    let mut r: Vec<f64> = q.iter().zip(precond).map(|(qi, p)| qi * p).collect();
    if use_history {
        for ((s, y), a) in history.iter().zip(alphas.iter().rev()) {
            let b = dot(y, &r) / dot(y, s);
            r.iter_mut().zip(s).for_each(|(ri, si)| *ri += (a - b) * si);
        }
    }
    r.iter_mut().for_each(|v| *v = -*v);
    r
}

/// Minimizes `w_photo·E_photo + w_land·E_land + w_reg·E_reg` over shared
/// coefficients and per-view lighting and pose, starting from zero
/// coefficients and lighting. Steps follow a diagonally preconditioned
/// gradient (optionally with L-BFGS curvature pairs) under an Armijo
/// backtracking line search.
pub fn fit_proxy(
    model: &LinearMorphableModel,
    views: &[ProxyView],
    init_cams: &[Camera],
    cfg: &ProxyFitConfig,
) -> Result<ProxyFitResult> {
    model.validate()?;
    check_sigmas(model)?;
    check_views(model, views, init_cams)?;
    let lay = Layout::new(model);
    let problem = Problem {
        model,
        views,
        base: init_cams,
        lay,
        weights: cfg.weights,
    };
    let zero = MorphCoeffs::zeros(model);
    let mut x = lay.pack(&zero, &vec![ShLighting::default(); views.len()], init_cams);
    let mut tape = Tape::new();
    let (mut energy, mut grad) = problem.value_and_grad(&mut tape, &x)?;
    if !energy.is_finite() {
        return Err(Error::DivergedEnergy {
            iteration: 0,
            value: energy,
        });
    }
    let mut trace = vec![energy];
    let mut precond = Vec::new();
    let mut history: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut candidate = vec![0.0; x.len()];
    for iteration in 0..cfg.max_iterations {
        if iteration % PRECONDITIONER_REFRESH == 0 {
            precond = diagonal_preconditioner(&problem, &mut tape, &x)?;
            history.clear();
        }
        let mut dir = direction(cfg, &precond, &grad, &history);
        let mut slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if slope >= 0.0 {
            history.clear();
            dir = direction(cfg, &precond, &grad, &history);
            slope = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        }
        if slope == 0.0 {
            break;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            for k in 0..x.len() {
                candidate[k] = x[k] + step * dir[k];
            }
            match problem.value(&mut tape, &candidate) {
                Ok(e) if e.is_finite() && e <= energy + 1e-4 * step * slope => {
                    accepted = Some(e);
                    break;
                }
                _ => step *= 0.5,
            }
        }
        let Some(new_energy) = accepted else { break };
        let (e, g) = problem.value_and_grad(&mut tape, &candidate)?;
        if !e.is_finite() {
            return Err(Error::DivergedEnergy {
                iteration: iteration + 1,
                value: e,
            });
        }
        let s: Vec<f64> = candidate.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g.iter().zip(&grad).map(|(a, b)| a - b).collect();
        if s.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() > 1e-12 {
            history.push((s, y));
            if history.len() > LBFGS_MEMORY {
                history.remove(0);
            }
        }
        let decrease = (energy - new_energy) / energy.abs().max(f64::MIN_POSITIVE);
        std::mem::swap(&mut x, &mut candidate);
        energy = e;
        grad = g;
        trace.push(energy);
        if decrease < cfg.rel_tolerance {
            break;
        }
    }
    Ok(ProxyFitResult {
        coeffs: lay.coeffs(&x),
        lighting: (0..views.len()).map(|j| lay.lighting(&x, j)).collect(),
        cameras: (0..views.len())
            .map(|j| lay.camera(&x, j, &init_cams[j]))
            .collect(),
        energy,
        trace,
    })
}

/// Rasterizes the model with SH shading; colours are clamped to [0, 1].
pub fn render_face(
    model: &LinearMorphableModel,
    coeffs: &MorphCoeffs,
    lighting: &ShLighting,
    camera: &Camera,
) -> Result<Raster> {
    let geo = model_geometry(model, coeffs)?;
    let alb = model_albedo(model, coeffs)?;
    let normals = model.mesh(geo.clone()).vertex_normals();
    let colors = alb
        .iter()
        .zip(&normals)
        .map(|(a, n)| {
            shade_vertex(a, &(camera.rotation * n).normalize(), lighting)
                .map(|c| c.map(|v| v.clamp(0.0, 1.0)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rasterize(
        &geo,
        &model.triangles,
        &colors,
        camera,
        Vec3::zeros(),
    ))
}

/// Projections of the model landmarks.
pub fn project_landmarks(
    model: &LinearMorphableModel,
    coeffs: &MorphCoeffs,
    camera: &Camera,
) -> Result<Vec<Vec2>> {
    let geo = model_geometry(model, coeffs)?;
    model
        .landmarks
        .iter()
        .map(|&l| camera.project(&geo[l]))
        .collect()
}

/// Area-weighted random points on the proxy surface.
pub fn sample_proxy_points(
    geometry: &crate::mesh_io::TriangleMesh,
    count: usize,
    seed: u64,
) -> Vec<Vec3> {
    geometry.sample_points(count, seed)
}
