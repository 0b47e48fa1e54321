//! Three-vector helpers over tape variables.

use super::{Tape, Var};
use crate::geometry::{Mat3, Vec3};

pub type V3 = [Var; 3];

impl Tape {
    pub fn vec3(&mut self, v: &Vec3) -> V3 {
        [self.var(v.x), self.var(v.y), self.var(v.z)]
    }

    pub fn val3(&self, v: V3) -> Vec3 {
        Vec3::new(self.val(v[0]), self.val(v[1]), self.val(v[2]))
    }

    pub fn add3(&mut self, a: V3, b: V3) -> V3 {
        [
            self.add(a[0], b[0]),
            self.add(a[1], b[1]),
            self.add(a[2], b[2]),
        ]
    }

    pub fn sub3(&mut self, a: V3, b: V3) -> V3 {
        [
            self.sub(a[0], b[0]),
            self.sub(a[1], b[1]),
            self.sub(a[2], b[2]),
        ]
    }

    pub fn add3_const(&mut self, a: V3, c: &Vec3) -> V3 {
        [
            self.add_const(a[0], c.x),
            self.add_const(a[1], c.y),
            self.add_const(a[2], c.z),
        ]
    }

    pub fn scale3(&mut self, a: V3, s: Var) -> V3 {
        [self.mul(a[0], s), self.mul(a[1], s), self.mul(a[2], s)]
    }

    pub fn scale3_const(&mut self, a: V3, s: f64) -> V3 {
        [
            self.scale(a[0], s),
            self.scale(a[1], s),
            self.scale(a[2], s),
        ]
    }

    pub fn dot3(&mut self, a: V3, b: V3) -> Var {
        self.dot(&a, &b)
    }

    pub fn dot3_const(&mut self, a: V3, c: &Vec3) -> Var {
        self.lin_comb(&a, &[c.x, c.y, c.z], 0.0)
    }

    pub fn norm3(&mut self, a: V3) -> Var {
        let n2 = self.dot(&a, &a);
        self.sqrt(n2)
    }

    pub fn normalize3(&mut self, a: V3) -> V3 {
        let n = self.norm3(a);
        [self.div(a[0], n), self.div(a[1], n), self.div(a[2], n)]
    }

    /// `M·a` for a constant matrix.
    pub fn mat3_const(&mut self, m: &Mat3, a: V3) -> V3 {
        std::array::from_fn(|r| self.lin_comb(&a, &[m[(r, 0)], m[(r, 1)], m[(r, 2)]], 0.0))
    }

    /// `M·a` for a matrix of variables given row by row.
    pub fn mat3(&mut self, m: &[V3; 3], a: V3) -> V3 {
        std::array::from_fn(|r| self.dot(&m[r], &a))
    }

    pub fn cross3(&mut self, a: V3, b: V3) -> V3 {
        let c0 = {
            let p = self.mul(a[1], b[2]);
            let q = self.mul(a[2], b[1]);
            self.sub(p, q)
        };
        let c1 = {
            let p = self.mul(a[2], b[0]);
            let q = self.mul(a[0], b[2]);
            self.sub(p, q)
        };
        let c2 = {
            let p = self.mul(a[0], b[1]);
            let q = self.mul(a[1], b[0]);
            self.sub(p, q)
        };
        [c0, c1, c2]
    }
}
