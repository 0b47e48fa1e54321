//! Fully connected networks with softplus hidden units.
//!
//! A network is a chain of affine maps `l = 0..=L`. Hidden maps are followed
//! by `softplus(s·a)/s`; the last map feeds the head activation. At a skip
//! layer `k` the map `k-1` emits `width - d_in` channels and map `k` reads
//! `[h, x] / √2`.
//!
//! Parameters live in a flat slice: for each map, the weight matrix
//! row-major (`out × in`) followed by the bias.
//!
//! On a tape the whole network is one fused node ([`MlpBlock`]). When the
//! input gradient is requested, the forward pass also propagates the
//! Jacobian `U_l = ∂u_l/∂x` through every layer so that `∂y₀/∂x` becomes an
//! ordinary differentiable output; its adjoint is handled in the same
//! backward sweep.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{sigmoid, softplus, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    #[default]
    Identity,
    Sigmoid,
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    #[serde(default)]
    pub skip_layers: Vec<usize>,
    #[serde(default = "default_beta")]
    pub softplus_beta: f64,
    #[serde(default)]
    pub head: Head,
}

fn default_beta() -> f64 {
    100.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Map {
    pub n_in: usize,
    pub n_out: usize,
    /// Offset of the weight matrix within the network's parameter slice.
    pub offset: usize,
    /// Input `[h, x]` is concatenated and scaled at this map.
    pub skip: bool,
}

impl Map {
    fn bias_offset(&self) -> usize {
        self.offset + self.n_in * self.n_out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub config: MlpConfig,
    maps: Arc<[Map]>,
    n_params: usize,
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Zero output everywhere.
    Zero,
    /// Weights `U(−1/√in, 1/√in)`, zero bias.
    Uniform,
    /// Output 0 approximates `‖x‖ − radius`.
    Geometric { radius: f64 },
}

const SKIP_SCALE: f64 = std::f64::consts::FRAC_1_SQRT_2;

impl Mlp {
    pub fn new(config: MlpConfig) -> Result<Self> {
        let c = &config;
        if c.input_dim == 0 || c.output_dim == 0 {
            return Err(Error::InvalidConfig(
                "network input and output widths must be positive".into(),
            ));
        }
        if c.hidden_layers > 0 && c.hidden_width == 0 {
            return Err(Error::InvalidConfig("hidden width must be positive".into()));
        }
        if !(c.softplus_beta > 0.0) {
            return Err(Error::InvalidConfig(
                "softplus sharpness must be positive".into(),
            ));
        }
        for &k in &c.skip_layers {
            if k == 0 || k > c.hidden_layers || c.hidden_width <= c.input_dim {
                return Err(Error::InvalidConfig(format!(
                    "skip layer {k} incompatible with {} hidden layers of width {}",
                    c.hidden_layers, c.hidden_width
                )));
            }
        }
        let n_maps = c.hidden_layers + 1;
        let mut maps = Vec::with_capacity(n_maps);
        let mut offset = 0;
        for l in 0..n_maps {
            let n_in = if l == 0 { c.input_dim } else { c.hidden_width };
            let n_out = if l == c.hidden_layers {
                c.output_dim
            } else if c.skip_layers.contains(&(l + 1)) {
                c.hidden_width - c.input_dim
            } else {
                c.hidden_width
            };
            let skip = l > 0 && c.skip_layers.contains(&l);
            maps.push(Map {
                n_in,
                n_out,
                offset,
                skip,
            });
            offset += n_in * n_out + n_out;
        }
        Ok(Self {
            config,
            maps: maps.into(),
            n_params: offset,
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    pub fn maps(&self) -> &[Map] {
        &self.maps
    }

    pub fn init<R: Rng>(&self, init: Init, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params];
        let last = self.maps.len() - 1;
        for (l, m) in self.maps.iter().enumerate() {
            let w = &mut p[m.offset..m.offset + m.n_in * m.n_out];
            match init {
                Init::Zero => {}
                Init::Uniform => {
                    let a = 1.0 / (m.n_in as f64).sqrt();
                    w.iter_mut().for_each(|v| *v = rng.random_range(-a..a));
                }
                Init::Geometric { radius } => {
                    if l == last {
                        let mean = std::f64::consts::PI.sqrt() / (m.n_in as f64).sqrt();
                        let row0 = Normal::new(mean, 1e-4).unwrap();
                        let rest = Normal::new(0.0, 1.0 / (m.n_in as f64).sqrt()).unwrap();
                        for (i, v) in w.iter_mut().enumerate() {
                            *v = if i < m.n_in {
                                row0.sample(rng)
                            } else {
                                rest.sample(rng)
                            };
                        }
                        p[m.bias_offset()] = -radius;
                    } else {
                        let d = Normal::new(0.0, 2f64.sqrt() / (m.n_out as f64).sqrt()).unwrap();
                        w.iter_mut().for_each(|v| *v = d.sample(rng));
                    }
                }
            }
        }
        p
    }

    fn check_lengths(&self, params: &[f64], input: usize) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} parameters, got {}",
                self.n_params,
                params.len()
            )));
        }
        if input != self.config.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "network expects input of length {}, got {input}",
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// Plain evaluation including the head activation.
    pub fn eval(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_lengths(params, x.len())?;
        let mut y = forward(
            &self.maps,
            self.config.softplus_beta,
            params,
            x,
            false,
            None,
        )
        .0;
        apply_head(self.config.head, &mut y);
        Ok(y)
    }

    /// Raw outputs plus `∂y₀/∂x`, without a tape.
    pub fn eval_with_input_grad(&self, params: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_lengths(params, x.len())?;
        let (mut y, g) = forward(&self.maps, self.config.softplus_beta, params, x, true, None);
        apply_head(self.config.head, &mut y);
        Ok((y, g))
    }

    /// Records the network on `tape`, reading weights from the parameter
    /// leaves starting at `param_offset`. Returns the head outputs and, when
    /// `input_grad` is set, the differentiable gradient `∂y₀/∂x` of the raw
    /// first output.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        param_offset: usize,
        input: &[Var],
        input_grad: bool,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        if param_offset + self.n_params > tape.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "parameter block [{param_offset}, {}) exceeds the {} tape parameters",
                param_offset + self.n_params,
                tape.n_params()
            )));
        }
        if input.len() != self.config.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "network expects input of length {}, got {}",
                self.config.input_dim,
                input.len()
            )));
        }
        let x: Vec<f64> = input.iter().map(|&v| tape.val(v)).collect();
        let params = &tape.values()[param_offset..param_offset + self.n_params];
        let mut cache = Cache::default();
        let (y, g) = forward(
            &self.maps,
            self.config.softplus_beta,
            params,
            &x,
            input_grad,
            Some(&mut cache),
        );
        let block = MlpBlock {
            maps: self.maps.clone(),
            beta: self.config.softplus_beta,
            param_offset,
            inputs: input.iter().map(|v| v.0).collect(),
            n_out: y.len(),
            input_grad,
            cache,
            first_output: 0,
            last_output: 0,
        };
        let mut outs = y;
        outs.extend_from_slice(&g);
        let vars = tape.push_block(block, &outs);
        let (raw, grad) = vars.split_at(self.config.output_dim);
        let head = head_on_tape(tape, self.config.head, raw);
        Ok((head, grad.to_vec()))
    }

    /// Same function as [`Self::forward_tape`] built from elementary tape
    /// nodes. Slow; kept as an independent reference for the fused block.
    pub fn forward_tape_reference(
        &self,
        tape: &mut Tape,
        param_offset: usize,
        input: &[Var],
    ) -> Result<Vec<Var>> {
        if input.len() != self.config.input_dim {
            return Err(Error::ShapeMismatch("input length".into()));
        }
        let beta = self.config.softplus_beta;
        let last = self.maps.len() - 1;
        let mut u: Vec<Var> = input.to_vec();
        let mut out = Vec::new();
        for (l, m) in self.maps.iter().enumerate() {
            if m.skip {
                u.extend_from_slice(input);
                u = u.iter().map(|&v| tape.scale(v, SKIP_SCALE)).collect();
            }
            let mut a = Vec::with_capacity(m.n_out);
            for r in 0..m.n_out {
                let w: Vec<Var> = (0..m.n_in)
                    .map(|c| tape.param(param_offset + m.offset + r * m.n_in + c))
                    .collect();
                let d = tape.dot(&w, &u);
                let b = tape.param(param_offset + m.bias_offset() + r);
                a.push(tape.add(d, b));
            }
            if l == last {
                out = a;
            } else {
                u = a.iter().map(|&v| tape.softplus(v, beta)).collect();
            }
        }
        Ok(head_on_tape(tape, self.config.head, &out))
    }
}

pub fn apply_head(head: Head, y: &mut [f64]) {
    match head {
        Head::Identity => {}
        Head::Sigmoid => y.iter_mut().for_each(|v| *v = sigmoid(*v)),
        Head::Softmax => {
            let m = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in y.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            y.iter_mut().for_each(|v| *v /= s);
        }
    }
}

fn head_on_tape(tape: &mut Tape, head: Head, raw: &[Var]) -> Vec<Var> {
    match head {
        Head::Identity => raw.to_vec(),
        Head::Sigmoid => raw.iter().map(|&v| tape.sigmoid(v)).collect(),
        Head::Softmax => {
            // Shifting by the (constant) maximum leaves softmax and its
            // derivative unchanged.
            let m = raw
                .iter()
                .map(|&v| tape.val(v))
                .fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<Var> = raw
                .iter()
                .map(|&v| {
                    let s = tape.add_const(v, -m);
                    tape.exp(s)
                })
                .collect();
            let s = tape.sum(&e);
            e.iter().map(|&v| tape.div(v, s)).collect()
        }
    }
}

/// Layer intermediates kept for the backward pass.
#[derive(Default, Debug, Clone)]
pub(crate) struct Cache {
    /// Input of every map, concatenated.
    u: Vec<f64>,
    /// Input Jacobians `n_in × d`, row-major, concatenated.
    tu: Vec<f64>,
    /// Pre-activations of hidden maps.
    a: Vec<f64>,
    /// Pre-activation Jacobians of hidden maps.
    ta: Vec<f64>,
}

/// Forward pass returning raw outputs and, if requested, `∂y₀/∂x`.
fn forward(
    maps: &[Map],
    beta: f64,
    params: &[f64],
    x: &[f64],
    tangents: bool,
    mut cache: Option<&mut Cache>,
) -> (Vec<f64>, Vec<f64>) {
    let d = x.len();
    let last = maps.len() - 1;
    let mut u: Vec<f64> = x.to_vec();
    // Jacobian of u with respect to x (identity at the input).
    let mut tu: Vec<f64> = Vec::new();
    if tangents {
        tu = vec![0.0; d * d];
        for i in 0..d {
            tu[i * d + i] = 1.0;
        }
    }
    let mut a = Vec::new();
    let mut ta = Vec::new();
    for (l, m) in maps.iter().enumerate() {
        if m.skip {
            u.extend_from_slice(x);
            u.iter_mut().for_each(|v| *v *= SKIP_SCALE);
            if tangents {
                let n_h = m.n_in - d;
                tu.resize(m.n_in * d, 0.0);
                for i in 0..d {
                    tu[(n_h + i) * d + i] = 1.0;
                }
                tu.iter_mut().for_each(|v| *v *= SKIP_SCALE);
            }
        }
        if let Some(c) = cache.as_deref_mut() {
            c.u.extend_from_slice(&u);
            if tangents {
                c.tu.extend_from_slice(&tu);
            }
        }
        let w = &params[m.offset..m.offset + m.n_in * m.n_out];
        let b = &params[m.bias_offset()..m.bias_offset() + m.n_out];
        a.clear();
        a.extend_from_slice(b);
        for r in 0..m.n_out {
            let row = &w[r * m.n_in..(r + 1) * m.n_in];
            a[r] += dot(row, &u);
        }
        if tangents {
            ta.clear();
            ta.resize(m.n_out * d, 0.0);
            for r in 0..m.n_out {
                let row = &w[r * m.n_in..(r + 1) * m.n_in];
                let out = &mut ta[r * d..(r + 1) * d];
                for (c, &wv) in row.iter().enumerate() {
                    if wv != 0.0 {
                        let t = &tu[c * d..(c + 1) * d];
                        for k in 0..d {
                            out[k] += wv * t[k];
                        }
                    }
                }
            }
        }
        if l == last {
            let g = if tangents {
                ta[..d].to_vec()
            } else {
                Vec::new()
            };
            return (a, g);
        }
        if let Some(c) = cache.as_deref_mut() {
            c.a.extend_from_slice(&a);
            if tangents {
                c.ta.extend_from_slice(&ta);
            }
        }
        u.clear();
        for (r, &av) in a.iter().enumerate() {
            let (h, sg) = softplus(av, beta);
            u.push(h);
            if tangents {
                ta[r * d..(r + 1) * d].iter_mut().for_each(|v| *v *= sg);
            }
        }
        if tangents {
            std::mem::swap(&mut tu, &mut ta);
        }
    }
    unreachable!("network has at least one map")
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        s[0] += a[j] * b[j];
        s[1] += a[j + 1] * b[j + 1];
        s[2] += a[j + 2] * b[j + 2];
        s[3] += a[j + 3] * b[j + 3];
    }
    let mut t = (s[0] + s[1]) + (s[2] + s[3]);
    for j in 4 * chunks..a.len() {
        t += a[j] * b[j];
    }
    t
}

/// Fused network evaluation recorded on a tape.
#[derive(Debug, Clone)]
pub(crate) struct MlpBlock {
    maps: Arc<[Map]>,
    beta: f64,
    param_offset: usize,
    inputs: Vec<u32>,
    n_out: usize,
    input_grad: bool,
    cache: Cache,
    pub(crate) first_output: u32,
    pub(crate) last_output: u32,
}

impl MlpBlock {
    /// Propagates the adjoints of the block outputs into the weight leaves
    /// and input nodes.
    pub(crate) fn backward(&self, values: &[f64], adj: &mut [f64]) {
        let d = self.inputs.len();
        let first = self.first_output as usize;
        let tangents = self.input_grad;
        let last = self.maps.len() - 1;
        let beta = self.beta;
        // Adjoint of the pre-activation and its Jacobian at the current map.
        let mut a_bar: Vec<f64> = adj[first..first + self.n_out].to_vec();
        let mut ta_bar: Vec<f64> = Vec::new();
        if tangents {
            ta_bar = vec![0.0; self.n_out * d];
            ta_bar[..d].copy_from_slice(&adj[first + self.n_out..first + self.n_out + d]);
        }
        let mut x_bar = vec![0.0; d];
        let mut u_end = self.cache.u.len();
        let mut tu_end = self.cache.tu.len();
        let mut a_end = self.cache.a.len();
        let mut ta_end = self.cache.ta.len();
        let mut u_bar: Vec<f64> = Vec::new();
        let mut tu_bar: Vec<f64> = Vec::new();
        for l in (0..=last).rev() {
            let m = self.maps[l];
            let u = &self.cache.u[u_end - m.n_in..u_end];
            u_end -= m.n_in;
            let tu = if tangents {
                let s = &self.cache.tu[tu_end - m.n_in * d..tu_end];
                tu_end -= m.n_in * d;
                s
            } else {
                &[][..]
            };
            let p0 = self.param_offset + m.offset;
            let b0 = self.param_offset + m.bias_offset();
            u_bar.clear();
            u_bar.resize(m.n_in, 0.0);
            if tangents {
                tu_bar.clear();
                tu_bar.resize(m.n_in * d, 0.0);
            }
            for r in 0..m.n_out {
                let ab = a_bar[r];
                let tab = if tangents {
                    &ta_bar[r * d..(r + 1) * d]
                } else {
                    &[][..]
                };
                let any_t = tab.iter().any(|&v| v != 0.0);
                if ab == 0.0 && !any_t {
                    continue;
                }
                adj[b0 + r] += ab;
                let wrow = p0 + r * m.n_in;
                for c in 0..m.n_in {
                    let w = values[wrow + c];
                    let mut g = ab * u[c];
                    u_bar[c] += w * ab;
                    if any_t {
                        let t = &tu[c * d..(c + 1) * d];
                        let tb = &mut tu_bar[c * d..(c + 1) * d];
                        for k in 0..d {
                            g += tab[k] * t[k];
                            tb[k] += w * tab[k];
                        }
                    }
                    adj[wrow + c] += g;
                }
            }
            // Split the map input into the previous activation and the
            // re-injected network input.
            let n_h = if m.skip { m.n_in - d } else { m.n_in };
            if m.skip {
                for i in 0..d {
                    x_bar[i] += SKIP_SCALE * u_bar[n_h + i];
                }
                u_bar[..n_h].iter_mut().for_each(|v| *v *= SKIP_SCALE);
                if tangents {
                    tu_bar[..n_h * d].iter_mut().for_each(|v| *v *= SKIP_SCALE);
                }
            }
            if l == 0 {
                for i in 0..d {
                    x_bar[i] += u_bar[i];
                }
                break;
            }
            // Back through the softplus of map l-1.
            let a = &self.cache.a[a_end - n_h..a_end];
            a_end -= n_h;
            let ta = if tangents {
                let s = &self.cache.ta[ta_end - n_h * d..ta_end];
                ta_end -= n_h * d;
                s
            } else {
                &[][..]
            };
            a_bar.clear();
            a_bar.resize(n_h, 0.0);
            if tangents {
                ta_bar.clear();
                ta_bar.resize(n_h * d, 0.0);
            }
            for r in 0..n_h {
                let sg = sigmoid(beta * a[r]);
                let mut ab = sg * u_bar[r];
                if tangents {
                    let tb = &tu_bar[r * d..(r + 1) * d];
                    let t = &ta[r * d..(r + 1) * d];
                    let mut sigma_bar = 0.0;
                    for k in 0..d {
                        sigma_bar += tb[k] * t[k];
                        ta_bar[r * d + k] = sg * tb[k];
                    }
                    ab += sigma_bar * beta * sg * (1.0 - sg);
                }
                a_bar[r] = ab;
            }
        }
        for (i, &v) in self.inputs.iter().enumerate() {
            adj[v as usize] += x_bar[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(
        input: usize,
        out: usize,
        width: usize,
        layers: usize,
        skips: Vec<usize>,
        head: Head,
    ) -> MlpConfig {
        MlpConfig {
            input_dim: input,
            output_dim: out,
            hidden_width: width,
            hidden_layers: layers,
            skip_layers: skips,
            softplus_beta: 100.0,
            head,
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let net = Mlp::new(cfg(3, 2, 8, 2, vec![], Head::Identity)).unwrap();
        let p = net.init(Init::Zero, &mut rng());
        assert_eq!(net.eval(&p, &[0.3, -0.2, 0.9]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_map_passes_through_head() {
        let net = Mlp::new(cfg(2, 2, 0, 0, vec![], Head::Sigmoid)).unwrap();
        let p = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let y = net.eval(&p, &[0.4, -1.0]).unwrap();
        assert_eq!(y, vec![sigmoid(0.4), sigmoid(-1.0)]);
    }

    #[test]
    fn reproducible_under_seed() {
        let net = Mlp::new(cfg(3, 4, 16, 3, vec![2], Head::Identity)).unwrap();
        let a = net
            .eval(&net.init(Init::Uniform, &mut rng()), &[0.1, 0.2, 0.3])
            .unwrap();
        let b = net
            .eval(&net.init(Init::Uniform, &mut rng()), &[0.1, 0.2, 0.3])
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch() {
        let net = Mlp::new(cfg(3, 1, 4, 1, vec![], Head::Identity)).unwrap();
        let p = net.init(Init::Uniform, &mut rng());
        assert!(matches!(net.eval(&p, &[1.0]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn skip_layout() {
        let net = Mlp::new(cfg(3, 5, 8, 4, vec![2], Head::Identity)).unwrap();
        let m = net.maps();
        assert_eq!(m.len(), 5);
        assert_eq!((m[1].n_in, m[1].n_out), (8, 5));
        assert!(m[2].skip && m[2].n_in == 8);
    }

    fn random_params(net: &Mlp) -> Vec<f64> {
        let mut r = rng();
        (0..net.n_params())
            .map(|_| r.random_range(-0.8..0.8))
            .collect()
    }

    /// The fused block and the elementary-node network must agree in value
    /// and in every parameter and input derivative.
    #[test]
    fn fused_block_matches_reference() {
        for head in [Head::Identity, Head::Sigmoid, Head::Softmax] {
            let net = Mlp::new(MlpConfig {
                softplus_beta: 3.0,
                ..cfg(3, 3, 6, 3, vec![2], head)
            })
            .unwrap();
            let p = random_params(&net);
            let x = [0.3, -0.7, 0.5];
            let weights = [0.7, -1.3, 0.4];

            let mut t1 = Tape::with_params(&p);
            let xv1 = t1.vars(x);
            let (y1, _) = net.forward_tape(&mut t1, 0, &xv1, false).unwrap();
            let l1 = t1.lin_comb(&y1, &weights, 0.0);
            let a1 = t1.adjoints(l1);

            let mut t2 = Tape::with_params(&p);
            let xv2 = t2.vars(x);
            let y2 = net.forward_tape_reference(&mut t2, 0, &xv2).unwrap();
            let l2 = t2.lin_comb(&y2, &weights, 0.0);
            let a2 = t2.adjoints(l2);

            assert!((t1.val(l1) - t2.val(l2)).abs() < 1e-13);
            for i in 0..p.len() {
                assert!(
                    (a1[i] - a2[i]).abs() < 1e-12,
                    "param {i}: {} vs {}",
                    a1[i],
                    a2[i]
                );
            }
            for k in 0..3 {
                let (g1, g2) = (a1[xv1[k].index()], a2[xv2[k].index()]);
                assert!((g1 - g2).abs() < 1e-12);
            }
        }
    }

    /// Derivatives of a loss that depends on the input gradient, compared
    /// with central differences.
    #[test]
    fn input_gradient_output_is_differentiable() {
        let net = Mlp::new(MlpConfig {
            softplus_beta: 2.0,
            ..cfg(3, 2, 7, 3, vec![2], Head::Identity)
        })
        .unwrap();
        let p = random_params(&net);
        let x0 = [0.2, 0.1, -0.4];
        let loss = |p: &[f64], x: &[f64; 3]| -> f64 {
            let (y, g) = net.eval_with_input_grad(p, x).unwrap();
            let n2: f64 = g.iter().map(|v| v * v).sum();
            (n2.sqrt() - 1.0).powi(2) + 0.3 * y[0] * g[1] + y[1]
        };
        let mut t = Tape::with_params(&p);
        let xv = t.vars(x0);
        let (y, g) = net.forward_tape(&mut t, 0, &xv, true).unwrap();
        let sq: Vec<Var> = g.iter().map(|&v| t.square(v)).collect();
        let n2 = t.sum(&sq);
        let n = t.sqrt(n2);
        let e = t.add_const(n, -1.0);
        let e2 = t.square(e);
        let c = t.mul(y[0], g[1]);
        let c = t.scale(c, 0.3);
        let s = t.add(e2, c);
        let l = t.add(s, y[1]);
        assert!((t.val(l) - loss(&p, &x0)).abs() < 1e-13);
        let adj = t.adjoints(l);
        let h = 1e-6;
        for i in 0..p.len() {
            let mut pp = p.clone();
            pp[i] += h;
            let fp = loss(&pp, &x0);
            pp[i] -= 2.0 * h;
            let fm = loss(&pp, &x0);
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (fd - adj[i]).abs() < 1e-7 * (1.0 + fd.abs()),
                "param {i}: {fd} vs {}",
                adj[i]
            );
        }
        for k in 0..3 {
            let mut xp = x0;
            xp[k] += h;
            let fp = loss(&p, &xp);
            xp[k] -= 2.0 * h;
            let fm = loss(&p, &xp);
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - adj[xv[k].index()]).abs() < 1e-7 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = Mlp::new(cfg(3, 1, 16, 4, vec![2], Head::Identity)).unwrap();
        let p = net.init(Init::Geometric { radius: 0.5 }, &mut rng());
        let x = [0.3, 0.2, -0.6];
        let (_, g) = net.eval_with_input_grad(&p, &x).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut a = x;
            a[k] += h;
            let mut b = x;
            b[k] -= h;
            let fd = (net.eval(&p, &a).unwrap()[0] - net.eval(&p, &b).unwrap()[0]) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-5 * (1.0 + fd.abs()));
        }
    }
}
