//! Real spherical harmonics up to band 2 and Lambertian SH shading.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, V3};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

const C0: f64 = 0.282095;
const C1: f64 = 0.488603;
const C2: f64 = 1.092548;
const C20: f64 = 0.315392;
const C22: f64 = 0.546274;

const UNIT_TOL: f64 = 1e-6;

/// Nine lighting coefficients shared by the three colour channels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ShLighting(pub [f64; 9]);

impl ShLighting {
    /// Constant irradiance `level` in every direction.
    pub fn ambient(level: f64) -> Self {
        let mut g = [0.0; 9];
        g[0] = level / C0;
        Self(g)
    }
}

fn basis_unchecked(n: &Vec3) -> [f64; 9] {
    let (x, y, z) = (n.x, n.y, n.z);
    [
        C0,
        C1 * y,
        C1 * z,
        C1 * x,
        C2 * x * y,
        C2 * y * z,
        C20 * (3.0 * z * z - 1.0),
        C2 * x * z,
        C22 * (x * x - y * y),
    ]
}

/// Rows of `∂φ/∂n`.
fn basis_jacobian(n: &Vec3) -> [[f64; 3]; 9] {
    let (x, y, z) = (n.x, n.y, n.z);
    [
        [0.0, 0.0, 0.0],
        [0.0, C1, 0.0],
        [0.0, 0.0, C1],
        [C1, 0.0, 0.0],
        [C2 * y, C2 * x, 0.0],
        [0.0, C2 * z, C2 * y],
        [0.0, 0.0, 6.0 * C20 * z],
        [C2 * z, 0.0, C2 * x],
        [2.0 * C22 * x, -2.0 * C22 * y, 0.0],
    ]
}

fn check_unit(n: &Vec3) -> Result<()> {
    let norm = n.norm();
    if (norm - 1.0).abs() > UNIT_TOL || !norm.is_finite() {
        return Err(Error::NotUnit { norm });
    }
    Ok(())
}

/// SH basis `φ(n)` ordered by band: `Y00; Y1-1, Y10, Y11; Y2-2 .. Y22`.
pub fn sh_basis(n: &Vec3) -> Result<[f64; 9]> {
    check_unit(n)?;
    Ok(basis_unchecked(n))
}

/// `a · (γ·φ(n))` per channel, unclamped.
pub fn shade_vertex(albedo: &Vec3, n: &Vec3, lighting: &ShLighting) -> Result<Vec3> {
    let phi = sh_basis(n)?;
    let irradiance: f64 = lighting.0.iter().zip(&phi).map(|(g, p)| g * p).sum();
    Ok(albedo * irradiance)
}

/// Taped irradiance `γ·φ(n)` as one node.
pub(crate) fn irradiance_tape(tape: &mut Tape, gamma: &[Var], n: V3) -> Var {
    let nv = tape.val3(n);
    let phi = basis_unchecked(&nv);
    let jac = basis_jacobian(&nv);
    let g: Vec<f64> = gamma.iter().map(|&v| tape.val(v)).collect();
    let value = g.iter().zip(&phi).map(|(a, b)| a * b).sum();
    let mut args = Vec::with_capacity(12);
    let mut partials = Vec::with_capacity(12);
    args.extend_from_slice(gamma);
    partials.extend_from_slice(&phi);
    for c in 0..3 {
        args.push(n[c]);
        partials.push((0..9).map(|k| g[k] * jac[k][c]).sum());
    }
    tape.custom(&args, &partials, value)
}
