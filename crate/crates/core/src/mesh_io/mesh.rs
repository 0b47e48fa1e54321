//! Triangle meshes, lattice sampling, Marching Cubes and Wavefront OBJ.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::mc_tables::{EDGE_TABLE, TRI_TABLE};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::sdf::DistanceField;

const MIN_AREA: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub normals: Option<Vec<Vec3>>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Self {
        Self {
            vertices,
            triangles,
            normals: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.vertices[i])
    }

    /// Unnormalized geometric normal; its length is twice the area.
    pub fn face_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (b - a).cross(&(c - a))
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        0.5 * self.face_normal(t).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| self.triangle_area(t))
            .sum()
    }

    /// Area-weighted vertex normals.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            let n = self.face_normal(t);
            for &i in tri {
                acc[i] += n;
            }
        }
        acc.into_iter()
            .map(|n| {
                let l = n.norm();
                if l > 0.0 {
                    n / l
                } else {
                    n
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= n) {
                return Err(Error::InvalidConfig(format!(
                    "triangle {t} indexes past {n} vertices"
                )));
            }
            if self.triangle_area(t) <= MIN_AREA {
                return Err(Error::InvalidConfig(format!("triangle {t} is degenerate")));
            }
        }
        if let Some(normals) = &self.normals {
            if normals.len() != n {
                return Err(Error::CountMismatch {
                    expected: n,
                    found: normals.len(),
                });
            }
        }
        Ok(())
    }

    /// Keeps the listed triangles and drops vertices no longer referenced.
    pub fn subset(&self, keep: impl Fn(usize) -> bool) -> TriangleMesh {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut out = TriangleMesh::default();
        for (t, tri) in self.triangles.iter().enumerate() {
            if !keep(t) {
                continue;
            }
            let mapped = tri.map(|i| {
                if remap[i] == usize::MAX {
                    remap[i] = out.vertices.len();
                    out.vertices.push(self.vertices[i]);
                }
                remap[i]
            });
            out.triangles.push(mapped);
        }
        out
    }

    /// Area-weighted uniform surface samples, deterministic in `seed`.
    pub fn sample_points(&self, count: usize, seed: u64) -> Vec<Vec3> {
        if self.triangles.is_empty() {
            return Vec::new();
        }
        let mut cdf = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            total += self.triangle_area(t);
            cdf.push(total);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let u = rng.random::<f64>() * total;
                let t = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
                let (mut r1, mut r2) = (rng.random::<f64>(), rng.random::<f64>());
                if r1 + r2 > 1.0 {
                    r1 = 1.0 - r1;
                    r2 = 1.0 - r2;
                }
                let [a, b, c] = self.corners(t);
                a + (b - a) * r1 + (c - a) * r2
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub min: Vec3,
    pub max: Vec3,
    pub resolution: [usize; 3],
    /// x fastest, then y, then z.
    pub values: Vec<f64>,
}

impl VoxelGrid {
    pub fn spacing(&self) -> Vec3 {
        let d = self.max - self.min;
        Vec3::new(
            d.x / (self.resolution[0] - 1) as f64,
            d.y / (self.resolution[1] - 1) as f64,
            d.z / (self.resolution[2] - 1) as f64,
        )
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.spacing().norm()
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let s = self.spacing();
        self.min + Vec3::new(i as f64 * s.x, j as f64 * s.y, k as f64 * s.z)
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution[0] * (j + self.resolution[1] * k)
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }
}

/// Evaluates `field` on a regular lattice spanning `[min, max]`.
pub fn sample_grid(
    field: &dyn DistanceField,
    min: Vec3,
    max: Vec3,
    resolution: [usize; 3],
) -> Result<VoxelGrid> {
    if resolution.iter().any(|&r| r < 2) {
        return Err(Error::InvalidConfig(format!(
            "grid resolution {resolution:?} below 2"
        )));
    }
    let mut grid = VoxelGrid {
        min,
        max,
        resolution,
        values: Vec::new(),
    };
    let n = resolution.iter().product::<usize>();
    let [nx, ny, _] = resolution;
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|idx| field.eval(&grid.point(idx % nx, (idx / nx) % ny, idx / (nx * ny))))
        .collect();
    if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "non-finite field value at lattice index {bad}"
        )));
    }
    grid.values = values;
    Ok(grid)
}

// Bourke corner offsets and edge endpoints.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Zero level set of the grid with linear edge interpolation. Vertices on
/// shared lattice edges are welded; triangles face along increasing values.
pub fn marching_cubes(grid: &VoxelGrid) -> TriangleMesh {
    let [nx, ny, nz] = grid.resolution;
    let mut mesh = TriangleMesh::default();
    let mut welded: HashMap<(usize, usize), usize> = HashMap::new();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let lattice = CORNERS.map(|[a, b, c]| (i + a, j + b, k + c));
                let vals = lattice.map(|(a, b, c)| grid.value(a, b, c));
                let mut case = 0usize;
                for (c, v) in vals.iter().enumerate() {
                    if *v < 0.0 {
                        case |= 1 << c;
                    }
                }
                if EDGE_TABLE[case] == 0 {
                    continue;
                }
                let mut edge_vertex = [usize::MAX; 12];
                for (e, [c0, c1]) in EDGES.iter().enumerate() {
                    if EDGE_TABLE[case] & (1 << e) == 0 {
                        continue;
                    }
                    let (a, b) = (lattice[*c0], lattice[*c1]);
                    let (ia, ib) = (grid.index(a.0, a.1, a.2), grid.index(b.0, b.1, b.2));
                    let key = (ia.min(ib), ia.max(ib));
                    edge_vertex[e] = *welded.entry(key).or_insert_with(|| {
                        let (pa, pb) = (grid.point(a.0, a.1, a.2), grid.point(b.0, b.1, b.2));
                        let (fa, fb) = (vals[*c0], vals[*c1]);
                        let s = if fa == fb { 0.5 } else { fa / (fa - fb) };
                        mesh.vertices.push(pa + (pb - pa) * s);
                        mesh.vertices.len() - 1
                    });
                }
                for tri in TRI_TABLE[case].chunks(3).take_while(|t| t[0] >= 0) {
                    // The table winds triangles toward the negative side.
                    let t = [
                        edge_vertex[tri[0] as usize],
                        edge_vertex[tri[2] as usize],
                        edge_vertex[tri[1] as usize],
                    ];
                    if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
                        mesh.triangles.push(t);
                    }
                }
            }
        }
    }
    let keep: Vec<bool> = (0..mesh.triangles.len())
        .map(|t| mesh.triangle_area(t) > MIN_AREA)
        .collect();
    if keep.iter().all(|&k| k) {
        mesh
    } else {
        mesh.subset(|t| keep[t])
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.8e}")
}

/// Writes `v`, optional `vn` and `f` records with 1-based indices.
pub fn export_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", fmt_f(v.x), fmt_f(v.y), fmt_f(v.z));
    }
    if let Some(normals) = &mesh.normals {
        for n in normals {
            let _ = writeln!(s, "vn {} {} {}", fmt_f(n.x), fmt_f(n.y), fmt_f(n.z));
        }
    }
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| i + 1);
        if mesh.normals.is_some() {
            let _ = writeln!(s, "f {a}//{a} {b}//{b} {c}//{c}");
        } else {
            let _ = writeln!(s, "f {a} {b} {c}");
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn import_obj(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut mesh = TriangleMesh::default();
    let mut normals = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let bad = |message: String| Error::Parse {
            path: path.into(),
            line: lineno + 1,
            message,
        };
        let mut parts = line.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        let floats = || -> Result<Vec3> {
            if rest.len() < 3 {
                return Err(bad(format!("expected 3 coordinates, found {}", rest.len())));
            }
            let p = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| bad(format!("bad number {s:?}: {e}")))
            };
            Ok(Vec3::new(p(rest[0])?, p(rest[1])?, p(rest[2])?))
        };
        match tag {
            "v" => mesh.vertices.push(floats()?),
            "vn" => normals.push(floats()?),
            "f" => {
                if rest.len() != 3 {
                    return Err(bad(format!(
                        "expected a triangle, found {} corners",
                        rest.len()
                    )));
                }
                let mut tri = [0usize; 3];
                for (c, tok) in rest.iter().enumerate() {
                    let head = tok.split('/').next().unwrap_or("");
                    let idx: i64 = head
                        .parse()
                        .map_err(|e| bad(format!("bad index {tok:?}: {e}")))?;
                    let n = mesh.vertices.len() as i64;
                    let resolved = if idx > 0 { idx - 1 } else { n + idx };
                    if resolved < 0 || resolved >= n {
                        return Err(bad(format!("index {idx} out of range")));
                    }
                    tri[c] = resolved as usize;
                }
                mesh.triangles.push(tri);
            }
            _ => {}
        }
    }
    if !normals.is_empty() {
        if normals.len() != mesh.vertices.len() {
            return Err(Error::Parse {
                path: path.into(),
                line: 0,
                message: format!(
                    "{} normals for {} vertices",
                    normals.len(),
                    mesh.vertices.len()
                ),
            });
        }
        mesh.normals = Some(normals);
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdf::SdfField;

    fn sphere_mesh(n: usize) -> (VoxelGrid, TriangleMesh) {
        let grid = sample_grid(
            &SdfField::unit_sphere(),
            Vec3::repeat(-1.2),
            Vec3::repeat(1.2),
            [n; 3],
        )
        .unwrap();
        let mesh = marching_cubes(&grid);
        (grid, mesh)
    }

    #[test]
    fn grid_values() {
        let g = sample_grid(
            &SdfField::unit_sphere(),
            Vec3::repeat(-1.0),
            Vec3::repeat(1.0),
            [3; 3],
        )
        .unwrap();
        assert_eq!(g.value(1, 1, 1), -1.0);
        assert!((g.value(0, 0, 0) - (3f64.sqrt() - 1.0)).abs() < 1e-15);
        let plane = SdfField::plane(Vec3::z(), 0.0);
        let g = sample_grid(&plane, Vec3::repeat(-1.0), Vec3::repeat(1.0), [4, 3, 5]).unwrap();
        for k in 0..5 {
            assert!((g.value(2, 1, k) - g.point(2, 1, k).z).abs() < 1e-15);
        }
        assert!(sample_grid(&plane, Vec3::zeros(), Vec3::repeat(1.0), [1, 2, 2]).is_err());
    }

    #[test]
    fn single_sign_grid_is_empty() {
        let g = sample_grid(
            &SdfField::sphere(Vec3::repeat(5.0), 1.0),
            Vec3::repeat(-1.0),
            Vec3::repeat(1.0),
            [8; 3],
        )
        .unwrap();
        assert!(marching_cubes(&g).is_empty());
    }

    #[test]
    fn sphere_extraction_accuracy_and_orientation() {
        let (grid, mesh) = sphere_mesh(64);
        mesh.validate().unwrap();
        let diag = grid.cell_diagonal();
        assert!((diag - 0.066).abs() < 1e-3);
        for v in &mesh.vertices {
            assert!((v.norm() - 1.0).abs() < diag);
        }
        let area = mesh.area();
        assert!(
            (area / (4.0 * std::f64::consts::PI) - 1.0).abs() < 0.03,
            "area {area}"
        );
        for t in 0..mesh.triangles.len() {
            let [a, b, c] = mesh.corners(t);
            let centroid = (a + b + c) / 3.0;
            assert!(mesh.face_normal(t).dot(&centroid) > 0.0);
        }
        // Closed surface: every edge is shared by exactly two triangles.
        let mut edges: HashMap<(usize, usize), i32> = HashMap::new();
        for t in &mesh.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        assert!(edges.values().all(|&c| c == 2));
    }

    #[test]
    fn torus_orientation_follows_gradient() {
        let torus = SdfField::torus(0.8, 0.3);
        let grid = sample_grid(&torus, Vec3::repeat(-1.2), Vec3::repeat(1.2), [48; 3]).unwrap();
        let mesh = marching_cubes(&grid);
        for t in 0..mesh.triangles.len() {
            let [a, b, c] = mesh.corners(t);
            let centroid = (a + b + c) / 3.0;
            assert!(mesh.face_normal(t).dot(&torus.gradient(&centroid)) > 0.0);
        }
    }

    #[test]
    fn error_converges_with_resolution() {
        let err = |n| {
            let (_, m) = sphere_mesh(n);
            m.vertices
                .iter()
                .map(|v| (v.norm() - 1.0).abs())
                .sum::<f64>()
                / m.vertices.len() as f64
        };
        let (coarse, fine) = (err(33), err(65));
        assert!(fine <= 0.5 * coarse, "{coarse} {fine}");
    }

    #[test]
    fn obj_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.obj");
        let tri = TriangleMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        );
        export_obj(&tri, &path).unwrap();
        assert_eq!(import_obj(&path).unwrap(), tri);

        let (_, mut mesh) = sphere_mesh(24);
        mesh.normals = Some(mesh.vertex_normals());
        export_obj(&mesh, &path).unwrap();
        let back = import_obj(&path).unwrap();
        assert_eq!(back.triangles, mesh.triangles);
        let dev = mesh
            .vertices
            .iter()
            .zip(&back.vertices)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(dev < 1e-6);
        // Writing the same mesh twice gives identical bytes.
        let first = std::fs::read(&path).unwrap();
        export_obj(&mesh, &path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());

        std::fs::write(&path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 x\n").unwrap();
        match import_obj(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn surface_sampling() {
        let tri = TriangleMesh::new(
            vec![
                Vec3::zeros(),
                Vec3::x(),
                Vec3::y(),
                Vec3::new(5.0, 0.0, 0.0),
                Vec3::new(7.0, 0.0, 0.0),
                Vec3::new(5.0, 2.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        );
        // Areas 0.5 and 2 in a 1:4 ratio.
        let pts = tri.sample_points(100_000, 3);
        let first = pts.iter().filter(|p| p.x < 2.0).count() as f64;
        let ratio = (pts.len() as f64 - first) / first;
        assert!((ratio / 4.0 - 1.0).abs() < 0.03, "{ratio}");
        assert_eq!(pts[..10], tri.sample_points(10, 3)[..]);
        let one =
            TriangleMesh::new(tri.vertices[..3].to_vec(), vec![[0, 1, 2]]).sample_points(1, 9)[0];
        assert!(one.x >= 0.0 && one.y >= 0.0 && one.x + one.y <= 1.0 && one.z == 0.0);
    }
}
