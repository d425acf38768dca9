//! Arena-backed reverse-mode tape over small real vectors.
//!
//! Every node stores its forward value in a shared arena. Weights are not
//! copied onto the tape: `affine` and `matvec` read them from the borrowed
//! flat parameter slice, and `backward` accumulates their adjoints into a
//! flat gradient of the same length.

use alloc::vec;
use alloc::vec::Vec;

use super::params::Block;
use super::AdError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Affine { w: Block, b: Option<Block>, x: Var },
    Softplus { x: Var, aux: u32 },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Sin(Var),
    Cos(Var),
    Recip(Var),
    Square(Var),
    Sum(Var),
    Concat { first: u32, count: u32 },
    Slice { x: Var, start: u32 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::Affine { b: Some(_), .. } => "affine",
            Op::Affine { b: None, .. } => "matvec",
            Op::Softplus { .. } => "softplus",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Sin(_) => "sin",
            Op::Cos(_) => "cos",
            Op::Recip(_) => "recip",
            Op::Square(_) => "square",
            Op::Sum(_) => "sum",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Node {
    op: Op,
    start: u32,
    len: u32,
}

/// Append-only record of primitive operations.
///
/// Inputs of every node precede it, so a single reverse sweep is a valid
/// topological order for `backward`.
#[derive(Debug)]
pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
    values: Vec<f64>,
    concat_args: Vec<Var>,
    aux: Vec<f64>,
    first_non_finite: Option<u32>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Adjoints {
    params: Vec<f64>,
    nodes: Vec<f64>,
    spans: Vec<(u32, u32)>,
}

impl Adjoints {
    /// Gradient with respect to the flat parameter vector.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn into_params(self) -> Vec<f64> {
        self.params
    }

    /// Gradient with respect to any node, typically a leaf input.
    pub fn wrt(&self, v: Var) -> &[f64] {
        let (s, l) = self.spans[v.index()];
        &self.nodes[s as usize..(s + l) as usize]
    }
}

const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
const SHIFTER: f64 = 6_755_399_441_055_744.0;

/// `e^-a` for `a >= 0`, flushed to about `e^-708` beyond that. Branch free
/// so slice loops vectorize.
#[inline(always)]
fn exp_neg(a: f64) -> f64 {
    let y = -a.min(708.0);
    let m = y * core::f64::consts::LOG2_E + SHIFTER;
    let k = m - SHIFTER;
    let r = (y - k * LN2_HI) - k * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    // low bits of m hold k
    p * f64::from_bits(m.to_bits().wrapping_add(1023) << 52)
}

/// `ln(1 + t)` for `t` in `[0, 1]` via `2 atanh(t / (2 + t))`.
#[inline(always)]
fn ln_1p_unit(t: f64) -> f64 {
    let s = t / (2.0 + t);
    let z = s * s;
    let mut p = 1.0 / 33.0;
    for k in (0..16).rev() {
        p = p * z + 1.0 / (2 * k + 1) as f64;
    }
    2.0 * s * p
}

/// Softplus of `x` and the `e^-|x|` term its derivative reuses.
#[inline(always)]
fn softplus_parts(x: f64) -> (f64, f64) {
    let t = exp_neg(x.abs());
    (x.max(0.0) + ln_1p_unit(t), t)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + crate::math::exp(-x))
    } else {
        let e = crate::math::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let b = &b[..a.len()];
    let mut acc = [0.0f64; 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let a4 = [acc[0] + acc[4], acc[1] + acc[5], acc[2] + acc[6], acc[3] + acc[7]];
    (a4[0] + a4[1]) + (a4[2] + a4[3]) + tail
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            values: Vec::new(),
            concat_args: Vec::new(),
            aux: Vec::new(),
            first_non_finite: None,
        }
    }

    /// Drops all nodes but keeps the allocations.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.values.clear();
        self.concat_args.clear();
        self.aux.clear();
        self.first_non_finite = None;
    }

    pub fn params(&self) -> &'p [f64] {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = self.nodes[v.index()];
        &self.values[n.start as usize..(n.start + n.len) as usize]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.len(), 1);
        val[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.index()].len as usize
    }

    /// Name and index of the first node whose value was not finite.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.first_non_finite
            .map(|i| (i as usize, self.nodes[i as usize].op.name()))
    }

    pub fn check_finite(&self) -> Result<(), AdError> {
        match self.first_non_finite() {
            None => Ok(()),
            Some((node, op)) => Err(AdError::NonFinite { node, op }),
        }
    }

    fn push_with<F: FnOnce(&mut [f64], &[f64])>(&mut self, op: Op, len: usize, fill: F) -> Var {
        let start = self.values.len();
        self.values.resize(start + len, 0.0);
        let (before, out) = self.values.split_at_mut(start);
        fill(out, before);
        let idx = self.nodes.len() as u32;
        if self.first_non_finite.is_none() && !out.iter().all(|x| x.is_finite()) {
            self.first_non_finite = Some(idx);
        }
        self.nodes.push(Node {
            op,
            start: start as u32,
            len: len as u32,
        });
        Var(idx)
    }

    fn span(&self, v: Var) -> (usize, usize) {
        let n = self.nodes[v.index()];
        (n.start as usize, n.len as usize)
    }

    /// Records a leaf holding `v`. Leaves receive gradients in `backward`.
    pub fn input(&mut self, v: &[f64]) -> Var {
        self.push_with(Op::Leaf, v.len(), |out, _| out.copy_from_slice(v))
    }

    pub fn constant(&mut self, v: &[f64]) -> Var {
        self.input(v)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: fn(f64, f64) -> f64) -> Var {
        let (sa, la) = self.span(a);
        let (sb, lb) = self.span(b);
        assert!(
            la == lb || la == 1 || lb == 1,
            "operand lengths {la} and {lb} do not broadcast"
        );
        let len = la.max(lb);
        self.push_with(op, len, |out, vals| {
            for (i, o) in out.iter_mut().enumerate() {
                let x = vals[sa + if la == 1 { 0 } else { i }];
                let y = vals[sb + if lb == 1 { 0 } else { i }];
                *o = f(x, y);
            }
        })
    }

    /// Elementwise sum; a length-1 operand broadcasts.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product; a length-1 operand broadcasts.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (s, l) = self.span(a);
        self.push_with(Op::Scale(a, c), l, |out, vals| {
            for (o, x) in out.iter_mut().zip(&vals[s..s + l]) {
                *o = c * x;
            }
        })
    }

    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let (s, l) = self.span(a);
        self.push_with(Op::Shift(a), l, |out, vals| {
            for (o, x) in out.iter_mut().zip(&vals[s..s + l]) {
                *o = x + c;
            }
        })
    }

    fn affine_impl(&mut self, w: Block, b: Option<Block>, x: Var) -> Var {
        let (sx, lx) = self.span(x);
        assert_eq!(lx, w.cols, "affine input length {lx} != weight cols {}", w.cols);
        if let Some(b) = b {
            assert_eq!(b.len(), w.rows, "bias length mismatch");
        }
        let params = self.params;
        let wv = &params[w.offset..w.offset + w.len()];
        let bv = b.map(|b| &params[b.offset..b.offset + b.len()]);
        self.push_with(Op::Affine { w, b, x }, w.rows, |out, vals| {
            let xv = &vals[sx..sx + lx];
            for (r, o) in out.iter_mut().enumerate() {
                let row = &wv[r * w.cols..(r + 1) * w.cols];
                *o = dot(row, xv) + bv.map_or(0.0, |b| b[r]);
            }
        })
    }

    /// `W x + b` with `W`, `b` read from the parameter slice.
    pub fn affine(&mut self, w: Block, b: Block, x: Var) -> Var {
        self.affine_impl(w, Some(b), x)
    }

    pub fn matvec(&mut self, w: Block, x: Var) -> Var {
        self.affine_impl(w, None, x)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (s, l) = self.span(a);
        self.push_with(op, l, |out, vals| {
            for (o, x) in out.iter_mut().zip(&vals[s..s + l]) {
                *o = f(*x);
            }
        })
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let (s, l) = self.span(a);
        let mut buf = core::mem::take(&mut self.aux);
        let aux = buf.len();
        buf.resize(aux + l, 0.0);
        let v = self.push_with(Op::Softplus { x: a, aux: aux as u32 }, l, |out, vals| {
            for ((o, e), x) in out.iter_mut().zip(&mut buf[aux..]).zip(&vals[s..s + l]) {
                (*o, *e) = softplus_parts(*x);
            }
        });
        self.aux = buf;
        v
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), crate::math::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sin(a), crate::math::sin)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, Op::Cos(a), crate::math::cos)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, Op::Recip(a), |x| 1.0 / x)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let (s, l) = self.span(a);
        self.push_with(Op::Sum(a), 1, |out, vals| {
            out[0] = vals[s..s + l].iter().sum();
        })
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let first = self.concat_args.len() as u32;
        self.concat_args.extend_from_slice(parts);
        let spans: Vec<(usize, usize)> = parts.iter().map(|&p| self.span(p)).collect();
        let len = spans.iter().map(|s| s.1).sum();
        self.push_with(
            Op::Concat {
                first,
                count: parts.len() as u32,
            },
            len,
            |out, vals| {
                let mut o = 0;
                for &(s, l) in &spans {
                    out[o..o + l].copy_from_slice(&vals[s..s + l]);
                    o += l;
                }
            },
        )
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (s, l) = self.span(a);
        assert!(start + len <= l, "slice {start}..{} out of bounds {l}", start + len);
        self.push_with(
            Op::Slice {
                x: a,
                start: start as u32,
            },
            len,
            |out, vals| out.copy_from_slice(&vals[s + start..s + start + len]),
        )
    }

    /// Single component `i` of `a` as a length-1 node.
    pub fn at(&mut self, a: Var, i: usize) -> Var {
        self.slice(a, i, 1)
    }

    /// Vector-Jacobian product of `output` with `seed`.
    pub fn backward(&self, output: Var, seed: &[f64]) -> Result<Adjoints, AdError> {
        let (so, lo) = self.span(output);
        if seed.len() != lo {
            return Err(AdError::SeedLength {
                expected: lo,
                got: seed.len(),
            });
        }
        let mut g = vec![0.0; self.values.len()];
        let mut gp = vec![0.0; self.params.len()];
        g[so..so + lo].copy_from_slice(seed);
        let vals = &self.values;

        for idx in (0..=output.index()).rev() {
            let node = self.nodes[idx];
            let (s, l) = (node.start as usize, node.len as usize);
            if g[s..s + l].iter().all(|&x| x == 0.0) {
                continue;
            }
            match node.op {
                Op::Leaf => {}
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    let (sa, la) = self.span(a);
                    let (sb, lb) = self.span(b);
                    for i in 0..l {
                        let gi = g[s + i];
                        g[sa + if la == 1 { 0 } else { i }] += gi;
                        g[sb + if lb == 1 { 0 } else { i }] += sign * gi;
                    }
                }
                Op::Mul(a, b) => {
                    let (sa, la) = self.span(a);
                    let (sb, lb) = self.span(b);
                    for i in 0..l {
                        let gi = g[s + i];
                        let ia = sa + if la == 1 { 0 } else { i };
                        let ib = sb + if lb == 1 { 0 } else { i };
                        let (va, vb) = (vals[ia], vals[ib]);
                        g[ia] += gi * vb;
                        g[ib] += gi * va;
                    }
                }
                Op::Scale(a, c) => {
                    let (sa, _) = self.span(a);
                    for i in 0..l {
                        g[sa + i] += c * g[s + i];
                    }
                }
                Op::Shift(a) => {
                    let (sa, _) = self.span(a);
                    for i in 0..l {
                        g[sa + i] += g[s + i];
                    }
                }
                Op::Affine { w, b, x } => {
                    let (sx, lx) = self.span(x);
                    let wv = &self.params[w.offset..w.offset + w.len()];
                    for r in 0..w.rows {
                        let gr = g[s + r];
                        if gr == 0.0 {
                            continue;
                        }
                        let row = &wv[r * w.cols..(r + 1) * w.cols];
                        let gw = &mut gp[w.offset + r * w.cols..w.offset + (r + 1) * w.cols];
                        for (gwc, xc) in gw.iter_mut().zip(&vals[sx..sx + lx]) {
                            *gwc += gr * xc;
                        }
                        for (gxc, wc) in g[sx..sx + lx].iter_mut().zip(row) {
                            *gxc += gr * wc;
                        }
                        if let Some(b) = b {
                            gp[b.offset + r] += gr;
                        }
                    }
                }
                Op::Softplus { x, aux } => {
                    let (sx, _) = self.span(x);
                    let t = &self.aux[aux as usize..aux as usize + l];
                    let (gx, gs) = g.split_at_mut(s);
                    for (((gxi, gi), ti), xi) in gx[sx..sx + l].iter_mut().zip(&gs[..l]).zip(t).zip(&vals[sx..sx + l]) {
                        let d = if *xi >= 0.0 { 1.0 } else { *ti };
                        *gxi += gi * d / (1.0 + ti);
                    }
                }
                Op::Relu(a) => self.unary_back(&mut g, s, l, a, |x, _| if x > 0.0 { 1.0 } else { 0.0 }),
                Op::Tanh(a) => self.unary_back(&mut g, s, l, a, |_, y| 1.0 - y * y),
                Op::Sigmoid(a) => self.unary_back(&mut g, s, l, a, |_, y| y * (1.0 - y)),
                Op::Sin(a) => self.unary_back(&mut g, s, l, a, |x, _| crate::math::cos(x)),
                Op::Cos(a) => self.unary_back(&mut g, s, l, a, |x, _| -crate::math::sin(x)),
                Op::Recip(a) => self.unary_back(&mut g, s, l, a, |_, y| -y * y),
                Op::Square(a) => self.unary_back(&mut g, s, l, a, |x, _| 2.0 * x),
                Op::Sum(a) => {
                    let (sa, la) = self.span(a);
                    let gi = g[s];
                    for i in 0..la {
                        g[sa + i] += gi;
                    }
                }
                Op::Concat { first, count } => {
                    let mut o = s;
                    for k in 0..count {
                        let part = self.concat_args[(first + k) as usize];
                        let (sp, lp) = self.span(part);
                        for i in 0..lp {
                            g[sp + i] += g[o + i];
                        }
                        o += lp;
                    }
                }
                Op::Slice { x, start } => {
                    let (sx, _) = self.span(x);
                    let st = start as usize;
                    for i in 0..l {
                        g[sx + st + i] += g[s + i];
                    }
                }
            }
        }

        Ok(Adjoints {
            params: gp,
            nodes: g,
            spans: self.nodes.iter().map(|n| (n.start, n.len)).collect(),
        })
    }

    #[inline]
    fn unary_back(&self, g: &mut [f64], s: usize, l: usize, a: Var, d: impl Fn(f64, f64) -> f64) {
        let (sa, _) = self.span(a);
        for i in 0..l {
            let gi = g[s + i];
            g[sa + i] += gi * d(self.values[sa + i], self.values[s + i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::params::Layout;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Relative error, with absolute errors below 1e-6 passing a 1e-4
    /// relative bound.
    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(a.abs()).max(1e-2)
    }

    #[test]
    fn softplus_kernel_matches_libm() {
        let mut worst = 0.0f64;
        for i in -40_000..=40_000 {
            let x = i as f64 * 1e-3 + 1e-7;
            let exact = if x > 0.0 {
                x + libm::log1p(libm::exp(-x))
            } else {
                libm::log1p(libm::exp(x))
            };
            let (y, t) = softplus_parts(x);
            worst = worst.max(((y - exact) / exact).abs());
            assert!(((t - libm::exp(-x.abs())) / t).abs() < 1e-15, "{x}");
        }
        assert!(worst < 1e-15, "{worst}");
        assert_eq!(softplus_parts(-800.0).0, softplus_parts(-800.0).0.max(0.0));
        assert_eq!(softplus_parts(800.0).0, 800.0);
        assert!(softplus_parts(-800.0).0 < 1e-300);
    }

    #[test]
    fn softplus_relu_values() {
        let mut t = Tape::new(&[]);
        let z = t.input(&[0.0]);
        let s = t.softplus(z);
        assert!((t.scalar(s) - core::f64::consts::LN_2).abs() < 1e-15);
        let m = t.input(&[-3.0]);
        let r = t.relu(m);
        assert_eq!(t.scalar(r), 0.0);
    }

    #[test]
    fn identity_affine_passes_input_through() {
        let mut layout = Layout::default();
        let w = layout.push("w", 4, 4);
        let b = layout.push("b", 4, 1);
        let mut p = vec![0.0; layout.len()];
        for i in 0..4 {
            p[w.offset + i * 4 + i] = 1.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut t = Tape::new(&p);
        let xv = t.input(&x);
        let y = t.affine(w, b, xv);
        assert_eq!(t.value(y), &x[..]);
    }

    #[test]
    fn square_gradient_and_constant() {
        let mut t = Tape::new(&[]);
        let w = t.input(&[3.0]);
        let y = t.square(w);
        let adj = t.backward(y, &[1.0]).unwrap();
        assert_eq!(adj.wrt(w), &[6.0]);

        let c = t.constant(&[2.5]);
        let other = t.input(&[1.0]);
        let adj = t.backward(c, &[1.0]).unwrap();
        assert_eq!(adj.wrt(other), &[0.0]);
        assert_eq!(adj.wrt(w), &[0.0]);
    }

    #[test]
    fn seed_length_mismatch_is_error() {
        let mut t = Tape::new(&[]);
        let a = t.input(&[1.0, 2.0]);
        assert!(matches!(
            t.backward(a, &[1.0]),
            Err(AdError::SeedLength { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn non_finite_node_is_named() {
        let mut t = Tape::new(&[]);
        let a = t.input(&[0.0, 1.0]);
        let r = t.recip(a);
        let _ = t.scale(r, 2.0);
        match t.check_finite() {
            Err(AdError::NonFinite { node, op }) => {
                assert_eq!(node, r.index());
                assert_eq!(op, "recip");
            }
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    type Prim = fn(&mut Tape, Var, Var) -> Var;

    fn primitives() -> Vec<(&'static str, Prim)> {
        vec![
            ("add", |t, a, b| t.add(a, b)),
            ("sub", |t, a, b| t.sub(a, b)),
            ("mul", |t, a, b| t.mul(a, b)),
            ("mul_bcast", |t, a, b| {
                let s = t.at(b, 0);
                t.mul(a, s)
            }),
            ("scale", |t, a, _| t.scale(a, -1.7)),
            ("shift", |t, a, _| t.shift(a, 0.3)),
            ("softplus", |t, a, _| t.softplus(a)),
            ("relu", |t, a, _| t.relu(a)),
            ("tanh", |t, a, _| t.tanh(a)),
            ("sigmoid", |t, a, _| t.sigmoid(a)),
            ("sin", |t, a, _| t.sin(a)),
            ("cos", |t, a, _| t.cos(a)),
            ("recip", |t, a, _| {
                let s = t.shift(a, 3.0);
                t.recip(s)
            }),
            ("square", |t, a, _| t.square(a)),
            ("sum", |t, a, _| t.sum(a)),
            ("concat", |t, a, b| t.concat(&[b, a])),
            ("slice", |t, a, _| t.slice(a, 1, 2)),
        ]
    }

    /// Central differences on every leaf component, compared against the
    /// tape's vector-Jacobian product for a random seed.
    #[test]
    fn primitives_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (name, f) in primitives() {
            for _ in 0..100 {
                let a: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                // relu kink is not differentiable
                if name == "relu" && a.iter().any(|x| x.abs() < 1e-3) {
                    continue;
                }
                let eval = |a: &[f64], b: &[f64]| -> Vec<f64> {
                    let mut t = Tape::new(&[]);
                    let va = t.input(a);
                    let vb = t.input(b);
                    let y = f(&mut t, va, vb);
                    t.value(y).to_vec()
                };
                let mut t = Tape::new(&[]);
                let va = t.input(&a);
                let vb = t.input(&b);
                let y = f(&mut t, va, vb);
                let seed: Vec<f64> = (0..t.dim(y)).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let adj = t.backward(y, &seed).unwrap();
                let h = 1e-5;
                for which in 0..2 {
                    for i in 0..3 {
                        let (mut ap, mut am) = (a.clone(), a.clone());
                        let (mut bp, mut bm) = (b.clone(), b.clone());
                        if which == 0 {
                            ap[i] += h;
                            am[i] -= h;
                        } else {
                            bp[i] += h;
                            bm[i] -= h;
                        }
                        let fp = eval(&ap, &bp);
                        let fm = eval(&am, &bm);
                        let fd: f64 = fp
                            .iter()
                            .zip(&fm)
                            .zip(&seed)
                            .map(|((p, m), s)| s * (p - m) / (2.0 * h))
                            .sum();
                        let got = if which == 0 { adj.wrt(va)[i] } else { adj.wrt(vb)[i] };
                        let err = (got - fd).abs();
                        assert!(
                            err <= 1e-4 * fd.abs().max(got.abs()) || err <= 1e-6,
                            "{name}: grad {got} vs fd {fd} (rel {})",
                            rel_err(got, fd)
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn affine_weight_gradients_match_central_differences() {
        let mut layout = Layout::default();
        let w = layout.push("w", 3, 5);
        let b = layout.push("b", 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<f64> = (0..layout.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let seed = [0.3, -1.2, 0.7];
        let run = |p: &[f64]| -> f64 {
            let mut t = Tape::new(p);
            let xv = t.input(&x);
            let y = t.affine(w, b, xv);
            t.value(y).iter().zip(&seed).map(|(a, s)| a * s).sum()
        };
        let mut t = Tape::new(&p);
        let xv = t.input(&x);
        let y = t.affine(w, b, xv);
        let adj = t.backward(y, &seed).unwrap();
        for k in 0..p.len() {
            let mut pp = p.clone();
            let mut pm = p.clone();
            pp[k] += 1e-5;
            pm[k] -= 1e-5;
            let fd = (run(&pp) - run(&pm)) / 2e-5;
            assert!((adj.params()[k] - fd).abs() < 1e-8, "param {k}");
        }
    }

    #[test]
    fn backward_is_linear_in_seed_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut t = Tape::new(&[]);
        let va = t.input(&a);
        let s = t.softplus(va);
        let c = t.cos(va);
        let y = t.mul(s, c);
        let s1 = [1.0, 0.5, -0.2, 0.0];
        let s2 = [-0.3, 0.1, 2.0, 1.0];
        let (ca, cb) = (1.5, -0.7);
        let comb: Vec<f64> = s1.iter().zip(&s2).map(|(x, y)| ca * x + cb * y).collect();
        let g1 = t.backward(y, &s1).unwrap();
        let g2 = t.backward(y, &s2).unwrap();
        let gc = t.backward(y, &comb).unwrap();
        for i in 0..4 {
            let lin = ca * g1.wrt(va)[i] + cb * g2.wrt(va)[i];
            assert!((gc.wrt(va)[i] - lin).abs() < 1e-12);
        }
        let again = t.backward(y, &s1).unwrap();
        for i in 0..4 {
            assert_eq!(again.wrt(va)[i].to_bits(), g1.wrt(va)[i].to_bits());
        }
    }
}
