//! Hair orientation loss on traced surface points.

use crate::autodiff::{Tape, Var, V3};
use crate::error::{Error, Result};
use crate::geometry::{TapeCamera, Vec2};
use crate::sdf::{principal_direction_tape, sdf_normal, TapeField};
use crate::tracer::{differentiable_intersection, sphere_trace, TracerConfig};

/// A hair-mask pixel with its detected unit orientation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HairSample {
    pub pixel: Vec2,
    pub d_p: Vec2,
}

/// `1 − |d_pᵀ d_x|` for a taped unit image direction `d_x`.
pub fn orientation_residual(tape: &mut Tape, d_x: [Var; 2], d_p: &Vec2) -> Var {
    let dot = tape.lin_comb(&d_x, &[d_p.x, d_p.y], 0.0);
    let a = tape.abs(dot);
    let n = tape.neg(a);
    tape.add_const(n, 1.0)
}

/// True for per-ray failures that exclude a ray from the mean.
fn skippable(e: &Error) -> bool {
    matches!(
        e,
        Error::UmbilicPoint { .. }
            | Error::DegenerateProjection
            | Error::TangentialRay { .. }
            | Error::VanishingGradient
            | Error::PointBehindCamera { .. }
            | Error::NotSymmetric { .. }
    )
}

/// Orientation residual at a taped surface point `x`.
pub fn orientation_at<F: TapeField + ?Sized>(
    tape: &mut Tape,
    field: &F,
    cam: &TapeCamera,
    x: V3,
    d_p: &Vec2,
) -> Result<Var> {
    let n = sdf_normal(field, &tape.val3(x))?;
    let dir = principal_direction_tape(field, tape, x, &n)?;
    let d_x = cam.project_direction(tape, x, dir)?;
    Ok(orientation_residual(tape, d_x, d_p))
}

/// Mean orientation residual over hair rays. Rays that miss, have no
/// confident detection, hit umbilic points or project degenerately are left
/// out of both sum and count. Returns the mean and the number of rays used.
pub fn loss_orientation<F: TapeField + ?Sized>(
    tape: &mut Tape,
    field: &F,
    cam: &TapeCamera,
    samples: &[HairSample],
    cfg: &TracerConfig,
) -> Result<(Var, usize)> {
    let value_cam = cam.camera().clone();
    let hits = samples
        .iter()
        .map(|s| {
            let hit = sphere_trace(field, &value_cam.pixel_ray(&s.pixel)?, cfg);
            Ok(hit.hit.then_some(hit.t))
        })
        .collect::<Result<Vec<_>>>()?;
    loss_orientation_traced(tape, field, cam, samples, &hits)
}

/// [`loss_orientation`] with ray parameters `hits[i]` already known (`None`
/// for a miss). The surface point is `x = c + t·v` corrected by `x_diff`.
pub fn loss_orientation_traced<F: TapeField + ?Sized>(
    tape: &mut Tape,
    field: &F,
    cam: &TapeCamera,
    samples: &[HairSample],
    hits: &[Option<f64>],
) -> Result<(Var, usize)> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch("hair rays"));
    }
    if hits.len() != samples.len() {
        return Err(Error::CountMismatch {
            expected: samples.len(),
            found: hits.len(),
        });
    }
    let mut terms = Vec::new();
    let mut origin = None;
    for (s, t) in samples.iter().zip(hits) {
        let Some(t) = *t else { continue };
        if s.d_p.norm() == 0.0 {
            continue;
        }
        let o = *origin.get_or_insert_with(|| cam.center(tape));
        let v = cam.ray_direction(tape, &s.pixel);
        let step = tape.scale3_const(v, t);
        let x = tape.add3(o, step);
        let res = differentiable_intersection(field, tape, x, v)
            .and_then(|(xd, _)| orientation_at(tape, field, cam, xd, &s.d_p));
        match res {
            Ok(r) => terms.push(r),
            Err(e) if skippable(&e) => continue,
            Err(e) => return Err(e),
        }
    }
    if terms.is_empty() {
        return Ok((tape.constant(0.0), 0));
    }
    let n = terms.len();
    Ok((tape.lin_comb(&terms, &vec![1.0 / n as f64; n], 0.0), n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project_3d_orientation, Camera, Vec3};
    use crate::sdf::{principal_directions, SdfField};

    #[test]
    fn residual_examples() {
        let mut tape = Tape::new();
        let d = tape.vars([0.6, 0.8]);
        for (dp, expected) in [
            (Vec2::new(0.6, 0.8), 0.0),
            (Vec2::new(-0.6, -0.8), 0.0),
            (Vec2::new(0.8, -0.6), 1.0),
        ] {
            let r = orientation_residual(&mut tape, d, &dp);
            assert!((tape.val(r) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_torus_gives_near_zero_loss() {
        let torus = SdfField::torus(0.5, 0.2);
        let base = Camera::look_at(
            Vec3::new(0.0, -1.2, -2.2),
            Vec3::zeros(),
            -Vec3::y(),
            60.0,
            60.0,
            32.0,
            32.0,
            64,
            64,
        )
        .unwrap();
        let cfg = TracerConfig::default();
        let mut samples = Vec::new();
        for row in (4..60).step_by(3) {
            for col in (4..60).step_by(3) {
                let pixel = Vec2::new(col as f64 + 0.5, row as f64 + 0.5);
                let hit = sphere_trace(&torus, &base.pixel_ray(&pixel).unwrap(), &cfg);
                if !hit.hit {
                    continue;
                }
                let Ok(frame) = principal_directions(&torus, &hit.x) else {
                    continue;
                };
                let Ok(d) = project_3d_orientation(&frame.d, &hit.x, &base) else {
                    continue;
                };
                // Detected directions come with an arbitrary sign.
                let d_p = if (row + col) % 2 == 0 { d } else { -d };
                samples.push(HairSample { pixel, d_p });
            }
        }
        assert!(samples.len() > 50);
        let mut tape = Tape::new();
        let cam = TapeCamera::fixed(&mut tape, &base);
        let (loss, used) = loss_orientation(&mut tape, &torus, &cam, &samples, &cfg).unwrap();
        assert!(used > 50);
        assert!(tape.val(loss) < 0.05, "{}", tape.val(loss));
        let mut empty_tape = Tape::new();
        let cam = TapeCamera::fixed(&mut empty_tape, &base);
        assert!(matches!(
            loss_orientation(&mut empty_tape, &torus, &cam, &[], &cfg),
            Err(Error::EmptyBatch(_))
        ));
    }
}
