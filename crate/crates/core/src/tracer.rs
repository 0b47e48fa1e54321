//! Ray–surface intersection, the differentiable intersection correction,
//! soft ray occupancy and the appearance and semantic network heads.

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Mlp, Tape, Var, V3};
use crate::error::{Error, Result};
use crate::geometry::{Ray, Vec3};
use crate::sdf::{DistanceField, TapeField, TapeSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TracerConfig {
    pub epsilon: f64,
    pub t_max: f64,
    pub max_iter: usize,
    pub occupancy_samples: usize,
    pub secant_steps: usize,
    /// Over-relaxation factor of the marching step.
    pub relaxation: f64,
}

impl Default for TracerConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            t_max: 4.0,
            max_iter: 128,
            occupancy_samples: 100,
            secant_steps: 8,
            relaxation: 1.6,
        }
    }
}

impl TracerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0
            && self.t_max > 0.0
            && self.max_iter > 0
            && self.occupancy_samples > 1)
        {
            return Err(Error::InvalidConfig(
                "tracer constants must be positive".into(),
            ));
        }
        if !(1.0..2.0).contains(&self.relaxation) {
            return Err(Error::InvalidConfig(
                "tracer relaxation must lie in [1, 2)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceResult {
    pub hit: bool,
    pub t: f64,
    pub x: Vec3,
    pub iterations: usize,
}

impl TraceResult {
    fn miss(ray: &Ray, t: f64, iterations: usize) -> Self {
        Self {
            hit: false,
            t,
            x: ray.at(t),
            iterations,
        }
    }
}

/// Sphere tracing with over-relaxed steps. A relaxed step whose bounding
/// sphere does not overlap the previous one is undone and marching
/// continues unrelaxed. A landing inside the surface is bracketed and
/// refined by Illinois secant steps followed by bisection. If the iteration
/// budget runs out (typically a grazing approach), the remaining segment is
/// scanned for the first sign change. Accepted hits are polished with
/// Newton steps along the ray so grazing intersections stay accurate.
pub fn sphere_trace<F: DistanceField + ?Sized>(
    field: &F,
    ray: &Ray,
    cfg: &TracerConfig,
) -> TraceResult {
    let eps = cfg.epsilon;
    let f_at = |t: f64| field.eval(&ray.at(t));
    let mut omega = cfg.relaxation;
    let mut t = 0.0;
    let mut f = f_at(t);
    let mut prev: Option<(f64, f64)> = None;
    let mut step = 0.0;
    for it in 1..=cfg.max_iter {
        if let Some((tp, fp)) = prev {
            if omega > 1.0 && f.abs() + fp < step {
                // The relaxed step may have jumped over geometry.
                t = tp;
                f = fp;
                omega = 1.0;
                prev = None;
                step = 0.0;
                continue;
            }
        }
        if f.abs() < eps {
            return finish(field, ray, cfg, t, it);
        }
        if f < 0.0 {
            if let Some((tp, fp)) = prev {
                let t_hit = refine(&f_at, (tp, fp), (t, f), cfg);
                return finish(field, ray, cfg, t_hit, it);
            }
            // Origin inside the surface.
            return finish(field, ray, cfg, t, it);
        }
        step = f * omega;
        if t + step > cfg.t_max && omega > 1.0 {
            // Only a conservative step may decide a miss.
            omega = 1.0;
            step = f;
        }
        prev = Some((t, f));
        t += step;
        if t > cfg.t_max {
            return TraceResult::miss(ray, cfg.t_max, it);
        }
        f = f_at(t);
    }
    scan(field, ray, cfg, t)
}

/// Dense search for the first sign change on `[t0, t_max]`; `t0` must be
/// known to lie outside the surface. Falls back to the sampled minimum when
/// it is within `ε` of the surface.
fn scan<F: DistanceField + ?Sized>(
    field: &F,
    ray: &Ray,
    cfg: &TracerConfig,
    t0: f64,
) -> TraceResult {
    let f_at = |t: f64| field.eval(&ray.at(t));
    let n = 8 * cfg.occupancy_samples.max(128);
    let dt = (cfg.t_max - t0) / n as f64;
    let mut a = (t0, f_at(t0));
    let mut best = a;
    for i in 1..=n {
        let t = t0 + i as f64 * dt;
        let f = f_at(t);
        if f < 0.0 {
            let t_hit = refine(&f_at, a, (t, f), cfg);
            return finish(field, ray, cfg, t_hit, cfg.max_iter);
        }
        if f < best.1 {
            best = (t, f);
        }
        a = (t, f);
    }
    if best.1 < cfg.epsilon {
        return finish(field, ray, cfg, best.0, cfg.max_iter);
    }
    TraceResult::miss(ray, cfg.t_max, cfg.max_iter)
}

fn refine(
    f_at: &impl Fn(f64) -> f64,
    mut a: (f64, f64),
    mut b: (f64, f64),
    cfg: &TracerConfig,
) -> f64 {
    // Illinois variant of regula falsi on the bracket [a, b], f(a) > 0 > f(b).
    let mut side = 0;
    for _ in 0..cfg.secant_steps {
        let t = (a.0 * b.1 - b.0 * a.1) / (b.1 - a.1);
        let f = f_at(t);
        if f.abs() < cfg.epsilon * 1e-2 {
            return t;
        }
        if f > 0.0 {
            a = (t, f);
            if side == 1 {
                b.1 *= 0.5;
            }
            side = 1;
        } else {
            b = (t, f);
            if side == -1 {
                a.1 *= 0.5;
            }
            side = -1;
        }
    }
    for _ in 0..60 {
        let t = 0.5 * (a.0 + b.0);
        let f = f_at(t);
        if f.abs() < cfg.epsilon * 1e-2 || (b.0 - a.0) < 1e-15 {
            return t;
        }
        if f > 0.0 {
            a = (t, f);
        } else {
            b = (t, f);
        }
    }
    0.5 * (a.0 + b.0)
}

fn finish<F: DistanceField + ?Sized>(
    field: &F,
    ray: &Ray,
    cfg: &TracerConfig,
    mut t: f64,
    iterations: usize,
) -> TraceResult {
    let mut f = field.eval(&ray.at(t));
    for _ in 0..6 {
        let slope = field.gradient(&ray.at(t)).dot(&ray.dir);
        if slope.abs() < 1e-12 || f == 0.0 {
            break;
        }
        let tn = t - f / slope;
        let fn_ = field.eval(&ray.at(tn));
        if !(fn_.abs() < f.abs()) || (tn - t).abs() > 0.05 {
            break;
        }
        t = tn;
        f = fn_;
    }
    if t > cfg.t_max || t < 0.0 {
        return TraceResult::miss(ray, t.clamp(0.0, cfg.t_max), iterations);
    }
    TraceResult {
        hit: true,
        t,
        x: ray.at(t),
        iterations,
    }
}

/// `x_diff = x − v·f(x)/(∇f(x)·v)` on the tape, together with the field
/// sample at `x`.
pub fn differentiable_intersection<F: TapeField + ?Sized>(
    field: &F,
    tape: &mut Tape,
    x: V3,
    v: V3,
) -> Result<(V3, TapeSample)> {
    let s = field.eval_tape(tape, x)?;
    let dot = tape.dot3(s.grad, v);
    let d = tape.val(dot);
    if d.abs() <= 1e-6 {
        return Err(Error::TangentialRay { dot: d.abs() });
    }
    let ratio = tape.div(s.f, dot);
    let shift = tape.scale3(v, ratio);
    Ok((tape.sub3(x, shift), s))
}

/// Minimum of `f` along a ray: the best of `occupancy_samples` uniform
/// samples on `[0, t_max]`, refined by three golden-section iterations.
/// Returns `(t*, f(t*))`.
pub fn ray_minimum<F: DistanceField + ?Sized>(
    field: &F,
    ray: &Ray,
    cfg: &TracerConfig,
) -> (f64, f64) {
    let n = cfg.occupancy_samples;
    let dt = cfg.t_max / (n - 1) as f64;
    let mut best = (0.0, f64::INFINITY, 0usize);
    for i in 0..n {
        let t = i as f64 * dt;
        let f = field.eval(&ray.at(t));
        if f < best.1 {
            best = (t, f, i);
        }
    }
    let (mut a, mut b) = (
        (best.2.max(1) - 1) as f64 * dt,
        ((best.2 + 1).min(n - 1)) as f64 * dt,
    );
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = field.eval(&ray.at(c));
    let mut fd = field.eval(&ray.at(d));
    let (mut t_best, mut f_best) = (best.0, best.1);
    for _ in 0..3 {
        for (t, f) in [(c, fc), (d, fd)] {
            if f < f_best {
                t_best = t;
                f_best = f;
            }
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = field.eval(&ray.at(c));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = field.eval(&ray.at(d));
        }
    }
    for (t, f) in [(c, fc), (d, fd)] {
        if f < f_best {
            t_best = t;
            f_best = f;
        }
    }
    (t_best, f_best)
}

/// `sigmoid(−α·min_t f(o + t·v))`.
pub fn soft_occupancy<F: DistanceField + ?Sized>(
    field: &F,
    ray: &Ray,
    alpha: f64,
    cfg: &TracerConfig,
) -> f64 {
    sigmoid(-alpha * ray_minimum(field, ray, cfg).1)
}

/// Minimum SDF value along the ray evaluated on the tape at the frozen
/// minimizer `t_star`. Returns the field value `m`; occupancy is
/// `sigmoid(−α·m)`.
pub fn ray_minimum_tape<F: TapeField + ?Sized>(
    field: &F,
    tape: &mut Tape,
    origin: V3,
    dir: V3,
    t_star: f64,
) -> Result<Var> {
    let step = tape.scale3_const(dir, t_star);
    let x = tape.add3(origin, step);
    Ok(field.eval_tape(tape, x)?.f)
}

/// Cross-entropy `CE(o, sigmoid(−α·m))` computed stably on the tape.
pub fn occupancy_cross_entropy(tape: &mut Tape, m: Var, alpha: f64, inside: bool) -> Var {
    // −ln σ(−αm) = softplus(αm);  −ln(1 − σ(−αm)) = softplus(−αm).
    let z = tape.scale(m, if inside { alpha } else { -alpha });
    tape.softplus(z, 1.0)
}

/// Input vector `[x, v, n, z]` of the appearance network.
fn render_input(x: &[f64], v: &[f64], n: &[f64], z: &[f64]) -> Vec<f64> {
    let mut inp = Vec::with_capacity(9 + z.len());
    inp.extend_from_slice(x);
    inp.extend_from_slice(v);
    inp.extend_from_slice(n);
    inp.extend_from_slice(z);
    inp
}

/// Rendered colour `g(x, v, n, z)`; the network carries its own sigmoid head.
pub fn render_color(
    g: &Mlp,
    params: &[f64],
    x: &Vec3,
    v: &Vec3,
    n: &Vec3,
    z: &[f64],
) -> Result<Vec3> {
    let y = g.eval(
        params,
        &render_input(x.as_slice(), v.as_slice(), n.as_slice(), z),
    )?;
    Ok(Vec3::new(y[0], y[1], y[2]))
}

pub fn render_color_tape(
    g: &Mlp,
    tape: &mut Tape,
    offset: usize,
    x: V3,
    v: V3,
    n: V3,
    z: &[Var],
) -> Result<V3> {
    let mut inp: Vec<Var> = Vec::with_capacity(9 + z.len());
    inp.extend_from_slice(&x);
    inp.extend_from_slice(&v);
    inp.extend_from_slice(&n);
    inp.extend_from_slice(z);
    let (y, _) = g.forward_tape(tape, offset, &inp, false)?;
    Ok([y[0], y[1], y[2]])
}

/// Part probabilities over (face, hair, eyes, eyebrows, nose, lips).
pub fn semantic_probs(s: &Mlp, params: &[f64], x: &Vec3) -> Result<Vec<f64>> {
    s.eval(params, x.as_slice())
}

pub fn semantic_probs_tape(s: &Mlp, tape: &mut Tape, offset: usize, x: V3) -> Result<Vec<Var>> {
    Ok(s.forward_tape(tape, offset, &x, false)?.0)
}
