use rayon::prelude::*;

use super::batch::RayBatch;
use super::config::TermWeights;
use super::model::{ReconModel, RENDER_SEGMENT, SEMANTIC_SEGMENT};
use crate::autodiff::{Tape, Var, V3};
use crate::error::{Error, Result};
use crate::geometry::{Camera, Vec3};
use crate::hair::{loss_orientation_traced, HairSample};
use crate::sdf::{eikonal_term_tape, TapeField};
use crate::tracer::{
    differentiable_intersection, occupancy_cross_entropy, ray_minimum, ray_minimum_tape,
    render_color_tape, semantic_probs_tape, sphere_trace, TracerConfig,
};

pub const TERM_NAMES: [&str; 6] = ["rgb", "mask", "eikonal", "proxy", "semantic", "orientation"];

/// `(1/|V|)·Σ |f(v)|`.
pub fn loss_proxy<F: TapeField + ?Sized>(
    tape: &mut Tape,
    field: &F,
    points: &[Vec3],
) -> Result<Var> {
    if points.is_empty() {
        return Err(Error::EmptyBatch("proxy points"));
    }
    let mut terms = Vec::with_capacity(points.len());
    for p in points {
        let x = tape.vec3(p);
        let f = field.eval_tape(tape, x)?.f;
        terms.push(tape.abs(f));
    }
    Ok(mean(tape, &terms))
}

/// Mean of `(‖∇f‖ − 1)²` over `points`.
pub fn loss_eikonal<F: TapeField + ?Sized>(
    tape: &mut Tape,
    field: &F,
    points: &[Vec3],
) -> Result<Var> {
    if points.is_empty() {
        return Err(Error::EmptyBatch("eikonal points"));
    }
    let terms = points
        .iter()
        .map(|p| eikonal_term_tape(field, tape, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(tape, &terms))
}

/// Mean over rays of the L1 colour distance summed over channels.
pub fn loss_rgb(tape: &mut Tape, colors: &[V3], targets: &[[f64; 3]]) -> Result<Var> {
    if colors.is_empty() {
        return Err(Error::EmptyBatch("rgb rays"));
    }
    if colors.len() != targets.len() {
        return Err(Error::CountMismatch {
            expected: colors.len(),
            found: targets.len(),
        });
    }
    let mut terms = Vec::with_capacity(3 * colors.len());
    for (c, t) in colors.iter().zip(targets) {
        for k in 0..3 {
            let d = tape.add_const(c[k], -t[k]);
            terms.push(tape.abs(d));
        }
    }
    let w = 1.0 / colors.len() as f64;
    Ok(tape.lin_comb(&terms, &vec![w; terms.len()], 0.0))
}

/// Mean categorical cross-entropy `−ln p[label − 1]` for labels `1..=6`.
pub fn loss_semantic(tape: &mut Tape, probs: &[Vec<Var>], labels: &[u8]) -> Result<Var> {
    if probs.is_empty() {
        return Err(Error::EmptyBatch("semantic rays"));
    }
    if probs.len() != labels.len() {
        return Err(Error::CountMismatch {
            expected: probs.len(),
            found: labels.len(),
        });
    }
    let mut terms = Vec::with_capacity(probs.len());
    for (p, &l) in probs.iter().zip(labels) {
        if !(1..=p.len()).contains(&(l as usize)) {
            return Err(Error::InvalidConfig(format!(
                "semantic label {l} outside 1..={}",
                p.len()
            )));
        }
        let ln = tape.ln(p[l as usize - 1]);
        terms.push(tape.neg(ln));
    }
    Ok(mean(tape, &terms))
}

/// `(1/(α|P|))·Σ CE(O_p, sigmoid(−α·m_p))` over the contributing rays
/// `(m_p, O_p)`; `n_rays` is `|P|`, which also counts hit-and-inside rays
/// contributing zero.
pub fn loss_mask(
    tape: &mut Tape,
    minima: &[(Var, bool)],
    n_rays: usize,
    alpha: f64,
) -> Result<Var> {
    if n_rays == 0 {
        return Err(Error::EmptyBatch("mask rays"));
    }
    if minima.is_empty() {
        return Ok(tape.constant(0.0));
    }
    let terms: Vec<Var> = minima
        .iter()
        .map(|&(m, inside)| occupancy_cross_entropy(tape, m, alpha, inside))
        .collect();
    let w = 1.0 / (alpha * n_rays as f64);
    Ok(tape.lin_comb(&terms, &vec![w; terms.len()], 0.0))
}

fn mean(tape: &mut Tape, terms: &[Var]) -> Var {
    let w = 1.0 / terms.len() as f64;
    tape.lin_comb(terms, &vec![w; terms.len()], 0.0)
}

/// Ray parameters of one batch found without the tape: the hit distance of
/// every inside ray (head then hair) and, for every mask ray that
/// contributes (inside without a hit, and all outside rays), the minimizer
/// of `f` along the ray.
#[derive(Clone, Debug, PartialEq)]
pub struct TracePlan {
    pub camera: Camera,
    pub hits: Vec<Option<f64>>,
    /// Inside rays then outside rays; `None` for hit-and-inside rays.
    pub mask_t: Vec<Option<f64>>,
}

pub fn trace_batch(
    model: &ReconModel,
    values: &[f64],
    batch: &RayBatch,
    tracer: &TracerConfig,
) -> Result<TracePlan> {
    let camera = model.camera(values, batch.view)?;
    let field = model.field(values);
    let inside: Vec<_> = batch.inside().map(|r| r.pixel).collect();
    let traced = inside
        .par_iter()
        .map(|p| {
            let ray = camera.pixel_ray(p)?;
            let hit = sphere_trace(&field, &ray, tracer);
            Ok(if hit.hit {
                (Some(hit.t), None)
            } else {
                (None, Some(ray_minimum(&field, &ray, tracer).0))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let outside = batch
        .outside
        .par_iter()
        .map(|p| Ok(Some(ray_minimum(&field, &camera.pixel_ray(p)?, tracer).0)))
        .collect::<Result<Vec<_>>>()?;
    let hits = traced.iter().map(|t| t.0).collect();
    let mask_t = traced.iter().map(|t| t.1).chain(outside).collect();
    Ok(TracePlan {
        camera,
        hits,
        mask_t,
    })
}

/// Aggregated loss of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    /// Unweighted term values in [`TERM_NAMES`] order; 0 for skipped terms.
    pub terms: [f64; 6],
    pub total: f64,
    /// Gradient of `total` with respect to the full parameter vector.
    pub grad: Vec<f64>,
    pub hit_rays: usize,
}

/// Point sets that do not come from the rays.
#[derive(Clone, Copy, Debug)]
pub struct LossPoints<'a> {
    pub proxy: &'a [Vec3],
    pub eikonal: &'a [Vec3],
}

/// Weighted sum of the six terms for one batch along a fixed trace plan.
/// Terms with weight exactly 0 are not built, so they contribute exactly 0
/// to value and gradient.
pub fn batch_loss(
    model: &ReconModel,
    values: &[f64],
    batch: &RayBatch,
    plan: &TracePlan,
    points: LossPoints<'_>,
    weights: &TermWeights,
    alpha: f64,
) -> Result<LossOutput> {
    let n_inside = batch.n_inside();
    if plan.hits.len() != n_inside || plan.mask_t.len() != n_inside + batch.outside.len() {
        return Err(Error::CountMismatch {
            expected: n_inside,
            found: plan.hits.len(),
        });
    }
    let w = weights.as_array();
    let mut tape = Tape::with_params(values);
    let field = model.field(values);
    let cam = model.tape_camera(&mut tape, batch.view)?;
    let origin = cam.center(&mut tape);
    let mut terms: Vec<(usize, Var)> = Vec::new();

    let need_surface = w[0] != 0.0 || w[4] != 0.0;
    let rays: Vec<_> = batch.inside().copied().collect();
    let render_off = model.offset(RENDER_SEGMENT);
    let sem_off = model.offset(SEMANTIC_SEGMENT);
    let (mut colors, mut targets, mut probs, mut labels) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut hit_rays = 0;
    for (r, t) in rays.iter().zip(&plan.hits) {
        let Some(t) = *t else { continue };
        hit_rays += 1;
        if !need_surface {
            continue;
        }
        let v = cam.ray_direction(&mut tape, &r.pixel);
        let step = tape.scale3_const(v, t);
        let x = tape.add3(origin, step);
        let (xd, s) = match differentiable_intersection(&field, &mut tape, x, v) {
            Ok(res) => res,
            Err(Error::TangentialRay { .. }) => continue,
            Err(e) => return Err(e),
        };
        if w[0] != 0.0 {
            // Normal and feature are read at the traced point.
            let n = tape.normalize3(s.grad);
            colors.push(render_color_tape(
                &model.render,
                &mut tape,
                render_off,
                xd,
                v,
                n,
                &s.z,
            )?);
            targets.push(r.rgb);
        }
        if w[4] != 0.0 && r.label > 0 {
            probs.push(semantic_probs_tape(
                &model.semantic,
                &mut tape,
                sem_off,
                xd,
            )?);
            labels.push(r.label);
        }
    }
    if w[0] != 0.0 && !colors.is_empty() {
        terms.push((0, loss_rgb(&mut tape, &colors, &targets)?));
    }
    if w[1] != 0.0 {
        let pixels = rays
            .iter()
            .map(|r| (r.pixel, true))
            .chain(batch.outside.iter().map(|p| (*p, false)));
        let mut minima = Vec::new();
        for ((p, inside), t) in pixels.zip(&plan.mask_t) {
            let Some(t) = *t else { continue };
            let v = cam.ray_direction(&mut tape, &p);
            minima.push((ray_minimum_tape(&field, &mut tape, origin, v, t)?, inside));
        }
        terms.push((1, loss_mask(&mut tape, &minima, plan.mask_t.len(), alpha)?));
    }
    if w[2] != 0.0 {
        terms.push((2, loss_eikonal(&mut tape, &field, points.eikonal)?));
    }
    if w[3] != 0.0 {
        terms.push((3, loss_proxy(&mut tape, &field, points.proxy)?));
    }
    if w[4] != 0.0 && !probs.is_empty() {
        terms.push((4, loss_semantic(&mut tape, &probs, &labels)?));
    }
    if w[5] != 0.0 && !batch.hair.is_empty() {
        let samples: Vec<HairSample> = batch
            .hair
            .iter()
            .map(|r| HairSample {
                pixel: r.pixel,
                d_p: r.d_p,
            })
            .collect();
        let (l, used) = loss_orientation_traced(
            &mut tape,
            &field,
            &cam,
            &samples,
            &plan.hits[batch.head.len()..],
        )?;
        if used > 0 {
            terms.push((5, l));
        }
    }

    let mut out = [0.0; 6];
    for &(k, v) in &terms {
        out[k] = tape.val(v);
    }
    let (vars, coeffs): (Vec<Var>, Vec<f64>) = terms.iter().map(|&(k, v)| (v, w[k])).unzip();
    if vars.is_empty() {
        return Ok(LossOutput {
            terms: out,
            total: 0.0,
            grad: vec![0.0; values.len()],
            hit_rays,
        });
    }
    let total = tape.lin_comb(&vars, &coeffs, 0.0);
    let value = tape.val(total);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { value });
    }
    Ok(LossOutput {
        terms: out,
        total: value,
        grad: tape.grad(total)?,
        hit_rays,
    })
}

/// Traces the batch with the current parameters and evaluates
/// [`batch_loss`].
pub fn total_loss(
    model: &ReconModel,
    values: &[f64],
    batch: &RayBatch,
    points: LossPoints<'_>,
    weights: &TermWeights,
    alpha: f64,
    tracer: &TracerConfig,
) -> Result<LossOutput> {
    let plan = trace_batch(model, values, batch, tracer)?;
    batch_loss(model, values, batch, &plan, points, weights, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recon::config::{LossWeights, Stage, TermSwitches};
    use crate::recon::gradcheck::{gradcheck_model, gradcheck_scene, GradcheckSettings};
    use crate::recon::model::SEMANTIC_SEGMENT;
    use crate::recon::sample_rays;
    use crate::sdf::SdfField;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn proxy_examples() {
        let sphere = SdfField::unit_sphere();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dirs: Vec<Vec3> = (0..20)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
                .normalize()
            })
            .collect();
        let mut tape = Tape::new();
        let on = loss_proxy(&mut tape, &sphere, &dirs).unwrap();
        assert!(tape.val(on) < 1e-12);
        let off: Vec<Vec3> = dirs.iter().map(|d| d * 1.1).collect();
        let l = loss_proxy(&mut tape, &sphere, &off).unwrap();
        assert!((tape.val(l) - 0.1).abs() < 1e-12);
        let pts: Vec<Vec3> = (0..30)
            .map(|_| Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0)))
            .collect();
        let oracle = pts.iter().map(|p| (p.norm() - 1.0).abs()).sum::<f64>() / pts.len() as f64;
        let l = loss_proxy(&mut tape, &sphere, &pts).unwrap();
        assert!((tape.val(l) - oracle).abs() < 1e-12);
        assert!(matches!(
            loss_proxy(&mut tape, &sphere, &[]),
            Err(Error::EmptyBatch(_))
        ));
    }

    #[test]
    fn rgb_examples() {
        let mut tape = Tape::new();
        let targets = [[0.2, 0.4, 0.6], [0.9, 0.1, 0.5]];
        let same: Vec<V3> = targets.iter().map(|t| tape.vec3(&Vec3::from(*t))).collect();
        let l = loss_rgb(&mut tape, &same, &targets).unwrap();
        assert_eq!(tape.val(l), 0.0);
        let shifted: Vec<V3> = targets
            .iter()
            .map(|t| tape.vec3(&Vec3::from(t.map(|c| c + 0.1))))
            .collect();
        let l = loss_rgb(&mut tape, &shifted, &targets).unwrap();
        assert!((tape.val(l) - 0.3).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<[f64; 3]> = (0..16)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        let b: Vec<[f64; 3]> = (0..16)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        let vars: Vec<V3> = a.iter().map(|c| tape.vec3(&Vec3::from(*c))).collect();
        let l = loss_rgb(&mut tape, &vars, &b).unwrap();
        let oracle: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (0..3).map(|k| (x[k] - y[k]).abs()).sum::<f64>())
            .sum::<f64>()
            / 16.0;
        assert!((tape.val(l) - oracle).abs() < 1e-12);
        assert!(matches!(
            loss_rgb(&mut tape, &[], &[]),
            Err(Error::EmptyBatch(_))
        ));
    }

    #[test]
    fn semantic_examples() {
        let mut tape = Tape::new();
        let one_hot: Vec<Var> = (0..6)
            .map(|k| tape.constant(if k == 2 { 1.0 } else { 0.0 }))
            .collect();
        let l = loss_semantic(&mut tape, &[one_hot], &[3]).unwrap();
        assert_eq!(tape.val(l), 0.0);
        let uniform: Vec<Var> = (0..6).map(|_| tape.constant(1.0 / 6.0)).collect();
        for label in 1..=6 {
            let l = loss_semantic(&mut tape, &[uniform.clone()], &[label]).unwrap();
            assert!((tape.val(l) - 6f64.ln()).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        let mut oracle = 0.0;
        for _ in 0..10 {
            let raw: Vec<f64> = (0..6).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let label = rng.random_range(1..=6u8);
            oracle -= (raw[label as usize - 1] / s).ln();
            probs.push(raw.iter().map(|r| tape.constant(r / s)).collect::<Vec<_>>());
            labels.push(label);
        }
        let l = loss_semantic(&mut tape, &probs, &labels).unwrap();
        assert!((tape.val(l) - oracle / 10.0).abs() < 1e-12);
        assert!(loss_semantic(&mut tape, &[uniform], &[0]).is_err());
    }

    #[test]
    fn mask_examples() {
        let mut tape = Tape::new();
        let far = tape.constant(1.0);
        let l = loss_mask(&mut tape, &[(far, false)], 1, 50.0).unwrap();
        // CE(0, σ(−50)) = −ln(1 − σ(−50)) ≈ σ(−50).
        let s = 1.0 / (1.0 + 50f64.exp());
        assert!((tape.val(l) - s / 50.0).abs() < 1e-30);
        assert!(tape.val(l) < 1e-23);
        let graze = tape.constant(0.0);
        let l = loss_mask(&mut tape, &[(graze, false)], 1, 50.0).unwrap();
        assert!((tape.val(l) * 50.0 - 2f64.ln()).abs() < 1e-15);
        // Two further hit-and-inside rays enlarge |P| but add nothing.
        let l = loss_mask(&mut tape, &[(graze, false)], 3, 50.0).unwrap();
        assert!((tape.val(l) * 150.0 - 2f64.ln()).abs() < 1e-15);
        let l = loss_mask(&mut tape, &[], 2, 50.0).unwrap();
        assert_eq!(tape.val(l), 0.0);
        assert!(loss_mask(&mut tape, &[], 0, 50.0).is_err());
    }

    #[test]
    fn hit_inside_rays_skip_the_mask_term() {
        let settings = GradcheckSettings::default();
        let scene = gradcheck_scene(&settings).unwrap();
        let model = gradcheck_model(&scene, 1).unwrap();
        let batch = sample_rays(&scene, 1, settings.rays, 0).unwrap();
        let plan = trace_batch(
            &model,
            &model.params.values,
            &batch,
            &TracerConfig::default(),
        )
        .unwrap();
        let n = batch.n_inside();
        assert!(plan.hits.iter().any(Option::is_some));
        for (h, m) in plan.hits.iter().zip(&plan.mask_t[..n]) {
            assert_eq!(h.is_some(), m.is_none());
        }
        assert!(plan.mask_t[n..].iter().all(Option::is_some));
    }

    fn scene_and_model() -> (
        crate::recon::Scene,
        ReconModel,
        Vec<RayBatch>,
        Vec<Vec3>,
        Vec<Vec3>,
    ) {
        let settings = GradcheckSettings::default();
        let scene = gradcheck_scene(&settings).unwrap();
        let model = gradcheck_model(&scene, 1).unwrap();
        let batches = (0..2)
            .map(|v| sample_rays(&scene, v, settings.rays, 3).unwrap())
            .collect();
        let proxy = scene.proxy.as_ref().unwrap().sample_points(8, 0);
        let eik = vec![Vec3::new(0.1, 0.2, 0.3), Vec3::new(-0.5, 0.1, 0.0)];
        (scene, model, batches, proxy, eik)
    }

    #[test]
    fn zero_weights_give_exact_zero() {
        let (_, model, batches, proxy, eik) = scene_and_model();
        let points = LossPoints {
            proxy: &proxy,
            eikonal: &eik,
        };
        for b in &batches {
            let out = total_loss(
                &model,
                &model.params.values,
                b,
                points,
                &TermWeights::default(),
                50.0,
                &TracerConfig::default(),
            )
            .unwrap();
            assert_eq!(out.total, 0.0);
            assert!(out.grad.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn weighted_sum_and_stage_gating() {
        let (_, model, batches, proxy, eik) = scene_and_model();
        let points = LossPoints {
            proxy: &proxy,
            eikonal: &eik,
        };
        let values = &model.params.values;
        let sem = model.params.segment(SEMANTIC_SEGMENT).unwrap().range();
        let lw = LossWeights::default();
        for b in &batches {
            let plan = trace_batch(&model, values, b, &TracerConfig::default()).unwrap();
            let all = TermWeights {
                rgb: 1.0,
                mask: 1.0,
                eikonal: 1.0,
                proxy: 1.0,
                semantic: 1.0,
                orientation: 1.0,
            };
            let terms = batch_loss(&model, values, b, &plan, points, &all, 50.0)
                .unwrap()
                .terms;
            for stage in [Stage::Proxy, Stage::Semantic, Stage::Orientation] {
                let w = lw.for_stage(stage, &TermSwitches::default());
                let out = batch_loss(&model, values, b, &plan, points, &w, 50.0).unwrap();
                let hand: f64 = w.as_array().iter().zip(&terms).map(|(w, t)| w * t).sum();
                assert!((out.total - hand).abs() < 1e-12 * hand.abs().max(1.0));
                let sem_grad = out.grad[sem.clone()]
                    .iter()
                    .fold(0.0f64, |m, g| m.max(g.abs()));
                if stage == Stage::Proxy {
                    assert_eq!(sem_grad, 0.0);
                    assert_eq!(out.terms[4], 0.0);
                    assert_eq!(out.terms[5], 0.0);
                } else {
                    assert!(sem_grad > 0.0);
                }
                if stage != Stage::Orientation {
                    assert_eq!(out.terms[5], 0.0);
                }
            }
        }
    }
}
