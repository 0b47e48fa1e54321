//! Linear morphable model: mean shape and albedo plus PCA bases.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, V3};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::mesh_io::TriangleMesh;

/// Dense `rows × cols` matrix stored row-major; serialized as nested rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Basis {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Basis {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
}

impl TryFrom<Vec<Vec<f64>>> for Basis {
    type Error = String;

    fn try_from(rows: Vec<Vec<f64>>) -> std::result::Result<Self, String> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err("ragged basis rows".into());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }
}

impl From<Basis> for Vec<Vec<f64>> {
    fn from(b: Basis) -> Self {
        b.data.chunks(b.cols.max(1)).map(<[f64]>::to_vec).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearMorphableModel {
    pub n_v: usize,
    pub mean_geo: Vec<f64>,
    pub mean_alb: Vec<f64>,
    #[serde(rename = "B_id")]
    pub b_id: Basis,
    #[serde(rename = "B_exp")]
    pub b_exp: Basis,
    #[serde(rename = "B_alb")]
    pub b_alb: Basis,
    pub sigma_id: Vec<f64>,
    pub sigma_exp: Vec<f64>,
    pub sigma_alb: Vec<f64>,
    pub triangles: Vec<[usize; 3]>,
    pub landmarks: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MorphCoeffs {
    pub id: Vec<f64>,
    pub exp: Vec<f64>,
    pub alb: Vec<f64>,
}

impl MorphCoeffs {
    pub fn zeros(model: &LinearMorphableModel) -> Self {
        Self {
            id: vec![0.0; model.k_id()],
            exp: vec![0.0; model.k_exp()],
            alb: vec![0.0; model.k_alb()],
        }
    }

    pub fn len(&self) -> usize {
        self.id.len() + self.exp.len() + self.alb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coefficients in `[id, exp, alb]` order.
    pub fn flat(&self) -> Vec<f64> {
        [&self.id[..], &self.exp, &self.alb].concat()
    }
}

fn mismatch(what: &str, expected: usize, found: usize) -> Error {
    Error::ShapeMismatch(format!("{what}: expected {expected}, found {found}"))
}

impl LinearMorphableModel {
    pub fn k_id(&self) -> usize {
        self.b_id.cols
    }

    pub fn k_exp(&self) -> usize {
        self.b_exp.cols
    }

    pub fn k_alb(&self) -> usize {
        self.b_alb.cols
    }

    pub fn validate(&self) -> Result<()> {
        let n3 = 3 * self.n_v;
        for (what, len) in [
            ("mean_geo", self.mean_geo.len()),
            ("mean_alb", self.mean_alb.len()),
        ] {
            if len != n3 {
                return Err(mismatch(what, n3, len));
            }
        }
        for (what, b, sigma) in [
            ("B_id", &self.b_id, &self.sigma_id),
            ("B_exp", &self.b_exp, &self.sigma_exp),
            ("B_alb", &self.b_alb, &self.sigma_alb),
        ] {
            if b.rows != n3 {
                return Err(mismatch(what, n3, b.rows));
            }
            if b.cols == 0 {
                return Err(Error::ShapeMismatch(format!("{what} has no columns")));
            }
            if sigma.len() != b.cols {
                return Err(mismatch(what, b.cols, sigma.len()));
            }
        }
        if let Some(&l) = self.landmarks.iter().find(|&&l| l >= self.n_v) {
            return Err(Error::ShapeMismatch(format!(
                "landmark index {l} past {} vertices",
                self.n_v
            )));
        }
        if let Some(t) = self
            .triangles
            .iter()
            .find(|t| t.iter().any(|&i| i >= self.n_v))
        {
            return Err(Error::ShapeMismatch(format!(
                "triangle {t:?} past {} vertices",
                self.n_v
            )));
        }
        Ok(())
    }

    pub fn check_coeffs(&self, c: &MorphCoeffs) -> Result<()> {
        for (what, k, len) in [
            ("alpha_id", self.k_id(), c.id.len()),
            ("alpha_exp", self.k_exp(), c.exp.len()),
            ("alpha_alb", self.k_alb(), c.alb.len()),
        ] {
            if k != len {
                return Err(mismatch(what, k, len));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn mesh(&self, vertices: Vec<Vec3>) -> TriangleMesh {
        TriangleMesh::new(vertices, self.triangles.clone())
    }
}

fn combine(mean: &[f64], bases: &[(&Basis, &[f64])]) -> Vec<Vec3> {
    let mut out: Vec<f64> = mean.to_vec();
    for (b, alpha) in bases {
        for (r, o) in out.iter_mut().enumerate() {
            *o += b
                .row(r)
                .iter()
                .zip(alpha.iter())
                .map(|(x, a)| x * a)
                .sum::<f64>();
        }
    }
    out.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

/// `G = Ḡ + B_id α_id + B_exp α_exp` as vertex positions.
pub fn model_geometry(model: &LinearMorphableModel, coeffs: &MorphCoeffs) -> Result<Vec<Vec3>> {
    model.check_coeffs(coeffs)?;
    Ok(combine(
        &model.mean_geo,
        &[(&model.b_id, &coeffs.id), (&model.b_exp, &coeffs.exp)],
    ))
}

/// `A = Ā + B_alb α_alb` as per-vertex RGB.
pub fn model_albedo(model: &LinearMorphableModel, coeffs: &MorphCoeffs) -> Result<Vec<Vec3>> {
    model.check_coeffs(coeffs)?;
    Ok(combine(&model.mean_alb, &[(&model.b_alb, &coeffs.alb)]))
}

/// Taped version of [`model_geometry`] / [`model_albedo`]: `mean + Σ bases`,
/// with `alphas` holding the coefficient variables for each basis in order.
pub(crate) fn combine_tape(tape: &mut Tape, mean: &[f64], bases: &[(&Basis, &[Var])]) -> Vec<V3> {
    let vars: Vec<Var> = bases.iter().flat_map(|(_, a)| a.iter().copied()).collect();
    let mut coeffs = Vec::with_capacity(vars.len());
    let mut out = Vec::with_capacity(mean.len() / 3);
    let mut rows = mean.iter().enumerate().map(|(r, &m)| {
        coeffs.clear();
        for (b, _) in bases {
            coeffs.extend_from_slice(b.row(r));
        }
        tape.lin_comb(&vars, &coeffs, m)
    });
    while let (Some(x), Some(y), Some(z)) = (rows.next(), rows.next(), rows.next()) {
        out.push([x, y, z]);
    }
    out
}

/// Area-weighted unit vertex normals computed on the tape.
pub(crate) fn vertex_normals_tape(
    tape: &mut Tape,
    verts: &[V3],
    triangles: &[[usize; 3]],
) -> Vec<V3> {
    let mut incident: Vec<Vec<V3>> = vec![Vec::new(); verts.len()];
    for t in triangles {
        let e1 = tape.sub3(verts[t[1]], verts[t[0]]);
        let e2 = tape.sub3(verts[t[2]], verts[t[0]]);
        let n = tape.cross3(e1, e2);
        for &i in t {
            incident[i].push(n);
        }
    }
    incident
        .iter()
        .map(|ns| {
            if ns.is_empty() {
                let z = tape.constant(0.0);
                return [z, z, tape.constant(1.0)];
            }
            let s: V3 = std::array::from_fn(|c| {
                let comps: Vec<Var> = ns.iter().map(|n| n[c]).collect();
                tape.sum(&comps)
            });
            tape.normalize3(s)
        })
        .collect()
}
