//! Wengert-list reverse-mode differentiation over `f64` scalars.
//!
//! Every node stores its value together with the indices of its inputs and
//! the local partial derivatives with respect to them, so the backward pass
//! is a single reverse sweep of multiply-accumulates. A tape built with
//! [`Tape::with_params`] reserves its first `n` nodes for the parameter
//! vector; gradients with respect to those are read back by index.
//!
//! Dense MLP evaluations are recorded as a single fused block (see
//! [`super::mlp`]) whose backward pass runs directly on the cached layer
//! activations instead of one node per multiply.

use super::mlp::MlpBlock;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Kind of primitive that produced a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Sin,
    Cos,
    Sqrt,
    Max,
    Min,
    Abs,
    Softplus,
    Sigmoid,
    Tanh,
    Dot,
    Sum,
    Affine,
    Custom,
    /// Output of a fused MLP block.
    Block(u32),
}

#[derive(Default)]
pub struct Tape {
    values: Vec<f64>,
    ops: Vec<Op>,
    arg_end: Vec<u32>,
    args: Vec<u32>,
    partials: Vec<f64>,
    blocks: Vec<MlpBlock>,
    n_params: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tape whose first `params.len()` nodes are leaves holding `params`.
    pub fn with_params(params: &[f64]) -> Self {
        let mut tape = Self::default();
        tape.reset(params);
        tape
    }

    /// Clears the tape for reuse, keeping allocations.
    pub fn reset(&mut self, params: &[f64]) {
        self.values.clear();
        self.ops.clear();
        self.arg_end.clear();
        self.args.clear();
        self.partials.clear();
        self.blocks.clear();
        self.values.extend_from_slice(params);
        self.ops.resize(params.len(), Op::Leaf);
        self.arg_end.resize(params.len(), 0);
        self.n_params = params.len();
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn param(&self, i: usize) -> Var {
        assert!(i < self.n_params, "parameter {i} out of range");
        Var(i as u32)
    }

    pub fn val(&self, v: Var) -> f64 {
        self.values[v.index()]
    }

    pub fn vals<const N: usize>(&self, v: [Var; N]) -> [f64; N] {
        v.map(|x| self.val(x))
    }

    pub fn op(&self, v: Var) -> Op {
        self.ops[v.index()]
    }

    pub(crate) fn values(&self) -> &[f64] {
        &self.values
    }

    fn push(&mut self, op: Op, value: f64) -> Var {
        let id = self.values.len();
        self.values.push(value);
        self.ops.push(op);
        self.arg_end.push(self.args.len() as u32);
        Var(id as u32)
    }

    /// Independent input (or constant) not tied to the parameter block.
    pub fn var(&mut self, value: f64) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn vars<const N: usize>(&mut self, values: [f64; N]) -> [Var; N] {
        values.map(|v| self.var(v))
    }

    #[inline]
    fn unary(&mut self, op: Op, a: Var, value: f64, da: f64) -> Var {
        self.args.push(a.0);
        self.partials.push(da);
        self.push(op, value)
    }

    #[inline]
    fn binary(&mut self, op: Op, a: Var, b: Var, value: f64, da: f64, db: f64) -> Var {
        self.args.push(a.0);
        self.partials.push(da);
        self.args.push(b.0);
        self.partials.push(db);
        self.push(op, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.val(a) + self.val(b);
        self.binary(Op::Add, a, b, v, 1.0, 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.val(a) - self.val(b);
        self.binary(Op::Sub, a, b, v, 1.0, -1.0)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.val(a), self.val(b));
        self.binary(Op::Mul, a, b, x * y, y, x)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.val(a), self.val(b));
        let q = x / y;
        self.binary(Op::Div, a, b, q, 1.0 / y, -q / y)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = -self.val(a);
        self.unary(Op::Neg, a, v, -1.0)
    }

    /// `a + c` for a constant `c`.
    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.val(a) + c;
        self.unary(Op::Affine, a, v, 1.0)
    }

    /// `c · a` for a constant `c`.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.val(a) * c;
        self.unary(Op::Affine, a, v, c)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let x = self.val(a);
        self.unary(Op::Mul, a, x * x, 2.0 * x)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.val(a).exp();
        self.unary(Op::Exp, a, v, v)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let x = self.val(a);
        self.unary(Op::Ln, a, x.ln(), 1.0 / x)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let (s, c) = self.val(a).sin_cos();
        self.unary(Op::Sin, a, s, c)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let (s, c) = self.val(a).sin_cos();
        self.unary(Op::Cos, a, c, -s)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let r = self.val(a).sqrt();
        self.unary(Op::Sqrt, a, r, 0.5 / r)
    }

    /// Larger of the two; ties route the gradient to `a`.
    pub fn max(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.val(a), self.val(b));
        if x >= y {
            self.binary(Op::Max, a, b, x, 1.0, 0.0)
        } else {
            self.binary(Op::Max, a, b, y, 0.0, 1.0)
        }
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.val(a), self.val(b));
        if x <= y {
            self.binary(Op::Min, a, b, x, 1.0, 0.0)
        } else {
            self.binary(Op::Min, a, b, y, 0.0, 1.0)
        }
    }

    /// `|a|` with subgradient 0 at the origin.
    pub fn abs(&mut self, a: Var) -> Var {
        let x = self.val(a);
        let d = if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(Op::Abs, a, x.abs(), d)
    }

    /// `softplus(s·a)/s`, with derivative `sigmoid(s·a)`.
    pub fn softplus(&mut self, a: Var, sharpness: f64) -> Var {
        let x = self.val(a);
        let (v, d) = softplus(x, sharpness);
        self.unary(Op::Softplus, a, v, d)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let s = sigmoid(self.val(a));
        self.unary(Op::Sigmoid, a, s, s * (1.0 - s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.val(a).tanh();
        self.unary(Op::Tanh, a, t, 1.0 - t * t)
    }

    /// Inner product of two equally long lists of variables.
    pub fn dot(&mut self, a: &[Var], b: &[Var]) -> Var {
        assert_eq!(a.len(), b.len(), "dot of unequal lengths");
        let mut v = 0.0;
        for (&x, &y) in a.iter().zip(b) {
            let (xv, yv) = (self.val(x), self.val(y));
            v += xv * yv;
            self.args.push(x.0);
            self.partials.push(yv);
            self.args.push(y.0);
            self.partials.push(xv);
        }
        self.push(Op::Dot, v)
    }

    /// `Σ cᵢ·aᵢ + offset` for constant coefficients.
    pub fn lin_comb(&mut self, a: &[Var], coeffs: &[f64], offset: f64) -> Var {
        assert_eq!(a.len(), coeffs.len(), "lin_comb of unequal lengths");
        let mut v = offset;
        for (&x, &c) in a.iter().zip(coeffs) {
            v += c * self.val(x);
            self.args.push(x.0);
            self.partials.push(c);
        }
        self.push(Op::Dot, v)
    }

    pub fn sum(&mut self, a: &[Var]) -> Var {
        let mut v = 0.0;
        for &x in a {
            v += self.val(x);
            self.args.push(x.0);
            self.partials.push(1.0);
        }
        self.push(Op::Sum, v)
    }

    /// Node with caller-supplied value and local partials.
    pub fn custom(&mut self, args: &[Var], partials: &[f64], value: f64) -> Var {
        assert_eq!(args.len(), partials.len());
        for (&a, &p) in args.iter().zip(partials) {
            self.args.push(a.0);
            self.partials.push(p);
        }
        self.push(Op::Custom, value)
    }

    /// Registers a fused MLP block and returns its output nodes.
    pub(crate) fn push_block(&mut self, mut block: MlpBlock, outputs: &[f64]) -> Vec<Var> {
        let id = self.blocks.len() as u32;
        let first = self.values.len() as u32;
        let vars: Vec<Var> = outputs
            .iter()
            .map(|&v| self.push(Op::Block(id), v))
            .collect();
        block.first_output = first;
        block.last_output = first + outputs.len() as u32 - 1;
        self.blocks.push(block);
        vars
    }

    /// Adjoint of every node with respect to `output`.
    pub fn adjoints(&self, output: Var) -> Vec<f64> {
        let mut adj = vec![0.0; self.values.len()];
        adj[output.index()] = 1.0;
        self.backward_into(&mut adj, output.index());
        adj
    }

    fn backward_into(&self, adj: &mut [f64], top: usize) {
        for i in (0..=top).rev() {
            match self.ops[i] {
                Op::Leaf => {}
                Op::Block(b) => {
                    let block = &self.blocks[b as usize];
                    if i as u32 == block.last_output {
                        let first = block.first_output as usize;
                        if adj[first..=i].iter().any(|&a| a != 0.0) {
                            block.backward(&self.values, adj);
                        }
                    }
                }
                _ => {
                    let a = adj[i];
                    if a == 0.0 {
                        continue;
                    }
                    let start = if i == 0 {
                        0
                    } else {
                        self.arg_end[i - 1] as usize
                    };
                    let end = self.arg_end[i] as usize;
                    for k in start..end {
                        adj[self.args[k] as usize] += self.partials[k] * a;
                    }
                }
            }
        }
    }

    /// Gradient of `loss` with respect to the parameter leaves. Parameters
    /// that the loss does not depend on get exactly zero.
    pub fn grad(&self, loss: Var) -> Result<Vec<f64>> {
        let value = self.val(loss);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { value });
        }
        let mut adj = self.adjoints(loss);
        adj.truncate(self.n_params);
        Ok(adj)
    }

    /// Accumulates `weight · ∂loss/∂θ` into `out`.
    pub fn grad_into(&self, loss: Var, weight: f64, out: &mut [f64]) -> Result<()> {
        let value = self.val(loss);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { value });
        }
        let adj = self.adjoints(loss);
        for (o, a) in out.iter_mut().zip(&adj[..self.n_params]) {
            *o += weight * a;
        }
        Ok(())
    }
}

impl Var {
    /// Index of the arguments range; used by tests that inspect tape shape.
    pub fn is_param(self, tape: &Tape) -> bool {
        self.index() < tape.n_params
    }
}

/// Numerically stable `softplus(s·x)/s` and its derivative `sigmoid(s·x)`.
pub fn softplus(x: f64, sharpness: f64) -> (f64, f64) {
    let z = sharpness * x;
    let v = if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    };
    (v / sharpness, sigmoid(z))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut t = Tape::with_params(&[3.0]);
        let p = t.param(0);
        let y = t.mul(p, p);
        assert_eq!(t.val(y), 9.0);
        assert_eq!(t.grad(y).unwrap(), vec![6.0]);
    }

    #[test]
    fn softplus_at_zero() {
        let mut t = Tape::with_params(&[0.0]);
        let y = t.softplus(t.param(0), 100.0);
        assert_eq!(t.grad(y).unwrap(), vec![0.5]);
        assert!((t.val(y) - std::f64::consts::LN_2 / 100.0).abs() < 1e-15);
    }

    #[test]
    fn softplus_second_derivative_at_zero() {
        // d/dx sigmoid(s x) at 0 = s/4, checked with a central difference of the
        // first derivative.
        let s = 100.0;
        let h = 1e-6;
        let d = (softplus(h, s).1 - softplus(-h, s).1) / (2.0 * h);
        assert!((d - s / 4.0).abs() < 1e-6 * s);
    }

    #[test]
    fn untouched_params_get_zero() {
        let mut t = Tape::with_params(&[1.0, 2.0, 3.0]);
        let y = t.mul(t.param(0), t.param(2));
        assert_eq!(t.grad(y).unwrap(), vec![3.0, 0.0, 1.0]);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut t = Tape::with_params(&[0.0]);
        let y = t.ln(t.param(0));
        assert!(matches!(t.grad(y), Err(Error::NonFiniteLoss { .. })));
    }

    #[test]
    fn linearity_of_gradients() {
        let params = [0.3, -1.2, 0.7];
        let build = |t: &mut Tape| {
            let (a, b, c) = (t.param(0), t.param(1), t.param(2));
            let e = t.exp(a);
            let l1 = t.mul(e, b);
            let s = t.sin(c);
            let q = t.div(s, e);
            let l2 = t.add(q, l1);
            (l1, l2)
        };
        let mut t = Tape::with_params(&params);
        let (l1, l2) = build(&mut t);
        let a1 = t.scale(l1, 2.5);
        let b2 = t.scale(l2, -0.5);
        let total = t.add(a1, b2);
        let g = t.grad(total).unwrap();
        let g1 = t.grad(l1).unwrap();
        let g2 = t.grad(l2).unwrap();
        for i in 0..3 {
            assert_eq!(g[i], 2.5 * g1[i] + -0.5 * g2[i]);
        }
    }

    #[test]
    fn elementary_partials_match_closed_forms() {
        let x0: f64 = 0.37;
        let cases: Vec<(Box<dyn Fn(&mut Tape, Var) -> Var>, f64)> = vec![
            (Box::new(|t, x| t.exp(x)), x0.exp()),
            (Box::new(|t, x| t.ln(x)), 1.0 / x0),
            (Box::new(|t, x| t.sin(x)), x0.cos()),
            (Box::new(|t, x| t.cos(x)), -x0.sin()),
            (Box::new(|t, x| t.sqrt(x)), 0.5 / x0.sqrt()),
            (Box::new(|t, x| t.tanh(x)), 1.0 - x0.tanh().powi(2)),
            (
                Box::new(|t, x| t.sigmoid(x)),
                sigmoid(x0) * (1.0 - sigmoid(x0)),
            ),
            (Box::new(|t, x| t.abs(x)), 1.0),
            (Box::new(|t, x| t.neg(x)), -1.0),
        ];
        for (f, expected) in cases {
            let mut t = Tape::with_params(&[x0]);
            let p = t.param(0);
            let y = f(&mut t, p);
            let g = t.grad(y).unwrap()[0];
            assert!((g - expected).abs() < 1e-14, "{g} vs {expected}");
        }
    }

    #[test]
    fn dot_and_max() {
        let mut t = Tape::with_params(&[1.0, 2.0, 3.0, 4.0]);
        let p: Vec<Var> = (0..4).map(|i| t.param(i)).collect();
        let d = t.dot(&p[..2], &p[2..]);
        assert_eq!(t.val(d), 11.0);
        assert_eq!(t.grad(d).unwrap(), vec![3.0, 4.0, 1.0, 2.0]);
        let m = t.max(p[0], p[3]);
        assert_eq!(t.grad(m).unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn stable_softplus_extremes() {
        assert_eq!(softplus(-1e3, 1.0).0, 0.0);
        assert_eq!(softplus(1e3, 1.0).0, 1e3);
        assert_eq!(sigmoid(-1e3), 0.0);
        assert_eq!(sigmoid(1e3), 1.0);
    }
}
