use std::collections::HashMap;

use super::{Grads, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Clamp applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param { store: usize, index: usize },
    /// `w · x + b`, `w` has shape `[out, in]`.
    Affine { w: Var, x: Var, b: Option<Var>, rows: usize, cols: usize },
    Add(Var, Var),
    Sub(Var, Var),
    /// `a * x + c` elementwise.
    ScaleShift { x: Var, a: f64 },
    Gelu(Var),
    Sigmoid(Var),
    Mask { x: Var, mask: Vec<f64> },
    Concat(Vec<Var>),
    Dot(Var, Var),
    Stack(Vec<Var>),
    Softmax(Var),
    WeightedSum { weights: Var, values: Vec<Var> },
    SumSquares(Var),
    Sum(Var),
    AddN(Vec<Var>),
    BernoulliLl { r: Var, y: f64 },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Vec<f64>,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], one entry per attached store.
/// Frozen stores yield `None`.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub stores: Vec<Option<Grads>>,
}

impl Gradients {
    pub fn store(&self, index: usize) -> Option<&Grads> {
        self.stores.get(index).and_then(Option::as_ref)
    }

    pub fn into_store(mut self, index: usize) -> Option<Grads> {
        self.stores.get_mut(index).and_then(Option::take)
    }
}

/// Reverse-mode recording of a vector-valued computation.
///
/// Parameter values are read directly from the borrowed stores; each distinct
/// parameter gets exactly one node no matter how often it is used.
pub struct Tape<'p> {
    stores: Vec<&'p ParamStore>,
    trainable: Vec<bool>,
    nodes: Vec<Node>,
    param_nodes: HashMap<(usize, usize), Var>,
}

impl<'p> Tape<'p> {
    pub fn new(stores: &[&'p ParamStore]) -> Self {
        Self {
            stores: stores.to_vec(),
            trainable: vec![true; stores.len()],
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    /// Freeze or unfreeze a store. Must be called before recording.
    pub fn set_trainable(&mut self, store: usize, trainable: bool) {
        self.trainable[store] = trainable;
    }

    pub fn store(&self, index: usize) -> &'p ParamStore {
        self.stores[index]
    }

    fn push(&mut self, op: Op, value: Vec<f64>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match self.nodes[v.0].op {
            Op::Param { store, index } => self.stores[store].get(index).data(),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.value(v).len()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn input(&mut self, data: Vec<f64>) -> Var {
        self.push(Op::Input, data, false)
    }

    pub fn param(&mut self, store: usize, index: usize) -> Var {
        if let Some(&v) = self.param_nodes.get(&(store, index)) {
            return v;
        }
        let ng = self.trainable[store];
        let v = self.push(Op::Param { store, index }, Vec::new(), ng);
        self.param_nodes.insert((store, index), v);
        v
    }

    fn matrix_dims(&self, w: Var) -> Result<(usize, usize)> {
        match self.nodes[w.0].op {
            Op::Param { store, index } => {
                let shape = self.stores[store].get(index).shape();
                if shape.len() != 2 {
                    return Err(Error::invalid(format!("expected a matrix, got shape {shape:?}")));
                }
                Ok((shape[0], shape[1]))
            }
            _ => Err(Error::invalid("affine weights must be a parameter")),
        }
    }

    pub fn affine(&mut self, w: Var, x: Var, b: Option<Var>) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(w)?;
        if self.len_of(x) != cols {
            return Err(Error::invalid(format!(
                "dimension mismatch: layer expects {cols} inputs, got {}",
                self.len_of(x)
            )));
        }
        if let Some(b) = b {
            if self.len_of(b) != rows {
                return Err(Error::invalid("bias length mismatch"));
            }
        }
        let wv = self.value(w);
        let xv = self.value(x);
        let mut out = match b {
            Some(b) => self.value(b).to_vec(),
            None => vec![0.0; rows],
        };
        for (i, o) in out.iter_mut().enumerate() {
            let row = &wv[i * cols..(i + 1) * cols];
            *o += row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
        }
        let ng = self.ng(w) || self.ng(x) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(Op::Affine { w, x, b, rows, cols }, out, ng))
    }

    fn check_same_len(&self, a: Var, b: Var) -> Result<()> {
        if self.len_of(a) != self.len_of(b) {
            return Err(Error::invalid(format!(
                "length mismatch: {} vs {}",
                self.len_of(a),
                self.len_of(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_len(a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Add(a, b), out, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_len(a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Sub(a, b), out, ng))
    }

    /// `a * x + c`, elementwise.
    pub fn scale_shift(&mut self, x: Var, a: f64, c: f64) -> Var {
        let out = self.value(x).iter().map(|v| a * v + c).collect();
        let ng = self.ng(x);
        self.push(Op::ScaleShift { x, a }, out, ng)
    }

    pub fn scale(&mut self, x: Var, a: f64) -> Var {
        self.scale_shift(x, a, 0.0)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
            .collect();
        let ng = self.ng(x);
        self.push(Op::Gelu(x), out, ng)
    }

    /// Logistic squash; outputs are kept strictly inside (0, 1).
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let ng = self.ng(x);
        self.push(Op::Sigmoid(x), out, ng)
    }

    /// Elementwise product with a constant mask (used for dropout).
    pub fn mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.len_of(x) {
            return Err(Error::invalid("mask length mismatch"));
        }
        let out = self.value(x).iter().zip(&mask).map(|(a, m)| a * m).collect();
        let ng = self.ng(x);
        Ok(self.push(Op::Mask { x, mask }, out, ng))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::with_capacity(parts.iter().map(|&p| self.len_of(p)).sum());
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Op::Concat(parts.to_vec()), out, ng)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_len(a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Dot(a, b), vec![v], ng))
    }

    /// Collect scalar nodes into one vector.
    pub fn stack(&mut self, scalars: &[Var]) -> Result<Var> {
        let mut out = Vec::with_capacity(scalars.len());
        for &s in scalars {
            if self.len_of(s) != 1 {
                return Err(Error::invalid("stack expects scalar nodes"));
            }
            out.push(self.scalar(s));
        }
        let ng = scalars.iter().any(|&s| self.ng(s));
        Ok(self.push(Op::Stack(scalars.to_vec()), out, ng))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = softmax(self.value(x));
        if out.is_empty() {
            return Err(Error::invalid("softmax of an empty vector"));
        }
        let ng = self.ng(x);
        Ok(self.push(Op::Softmax(x), out, ng))
    }

    /// `Σ_i weights[i] · values[i]`.
    pub fn weighted_sum(&mut self, weights: Var, values: &[Var]) -> Result<Var> {
        if values.is_empty() || self.len_of(weights) != values.len() {
            return Err(Error::invalid("weighted sum needs one weight per value"));
        }
        let d = self.len_of(values[0]);
        let mut out = vec![0.0; d];
        for (i, &v) in values.iter().enumerate() {
            if self.len_of(v) != d {
                return Err(Error::invalid("weighted sum values differ in length"));
            }
            let w = self.value(weights)[i];
            for (o, x) in out.iter_mut().zip(self.value(v)) {
                *o += w * x;
            }
        }
        let ng = self.ng(weights) || values.iter().any(|&v| self.ng(v));
        Ok(self.push(
            Op::WeightedSum {
                weights,
                values: values.to_vec(),
            },
            out,
            ng,
        ))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|a| a * a).sum();
        let ng = self.ng(x);
        self.push(Op::SumSquares(x), vec![v], ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().sum();
        let ng = self.ng(x);
        self.push(Op::Sum(x), vec![v], ng)
    }

    /// Sum of scalar nodes. An empty list yields a constant zero.
    pub fn add_n(&mut self, terms: &[Var]) -> Result<Var> {
        let mut v = 0.0;
        for &t in terms {
            if self.len_of(t) != 1 {
                return Err(Error::invalid("add_n expects scalar nodes"));
            }
            v += self.scalar(t);
        }
        let ng = terms.iter().any(|&t| self.ng(t));
        Ok(self.push(Op::AddN(terms.to_vec()), vec![v], ng))
    }

    /// `y·log r + (1−y)·log(1−r)` with `r` clamped to `[1e-7, 1−1e-7]`.
    pub fn bernoulli_ll(&mut self, r: Var, y: f64) -> Result<Var> {
        if self.len_of(r) != 1 {
            return Err(Error::invalid("bernoulli_ll expects a scalar probability"));
        }
        let v = bernoulli_ll(self.scalar(r), y);
        let ng = self.ng(r);
        Ok(self.push(Op::BernoulliLl { r, y }, vec![v], ng))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.backward_seeded(loss, 1.0)
    }

    pub fn backward_seeded(&self, loss: Var, seed: f64) -> Result<Gradients> {
        if self.len_of(loss) != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got length {}",
                self.len_of(loss)
            )));
        }
        let mut out = Gradients {
            stores: self
                .stores
                .iter()
                .zip(&self.trainable)
                .map(|(s, &t)| t.then(|| Grads::zeros_like(s)))
                .collect(),
        };
        if !self.ng(loss) {
            return Ok(out);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![seed]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param { store, index } => {
                    if let Some(gs) = out.stores[*store].as_mut() {
                        for (a, b) in gs.slot_mut(*index).iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                }
                Op::Affine { w, x, b, rows, cols } => {
                    let (rows, cols) = (*rows, *cols);
                    if self.ng(*w) {
                        let xv = self.value(*x);
                        let gw = grad_slot(&mut grads, *w, rows * cols);
                        for i in 0..rows {
                            let gi = g[i];
                            if gi == 0.0 {
                                continue;
                            }
                            for (a, xj) in gw[i * cols..(i + 1) * cols].iter_mut().zip(xv) {
                                *a += gi * xj;
                            }
                        }
                    }
                    if self.ng(*x) {
                        let wv = self.value(*w);
                        let gx = grad_slot(&mut grads, *x, cols);
                        for i in 0..rows {
                            let gi = g[i];
                            if gi == 0.0 {
                                continue;
                            }
                            for (a, wij) in gx.iter_mut().zip(&wv[i * cols..(i + 1) * cols]) {
                                *a += gi * wij;
                            }
                        }
                    }
                    if let Some(b) = b {
                        if self.ng(*b) {
                            add_into(grad_slot(&mut grads, *b, rows), &g, 1.0);
                        }
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*a) {
                        add_into(grad_slot(&mut grads, *a, g.len()), &g, 1.0);
                    }
                    if self.ng(*b) {
                        add_into(grad_slot(&mut grads, *b, g.len()), &g, 1.0);
                    }
                }
                Op::Sub(a, b) => {
                    if self.ng(*a) {
                        add_into(grad_slot(&mut grads, *a, g.len()), &g, 1.0);
                    }
                    if self.ng(*b) {
                        add_into(grad_slot(&mut grads, *b, g.len()), &g, -1.0);
                    }
                }
                Op::ScaleShift { x, a } => {
                    add_into(grad_slot(&mut grads, *x, g.len()), &g, *a);
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let gx = grad_slot(&mut grads, *x, g.len());
                    for ((a, &v), gi) in gx.iter_mut().zip(xv).zip(&g) {
                        let u = GELU_C * (v + GELU_A * v * v * v);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        *a += gi * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                    }
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let gx = grad_slot(&mut grads, *x, g.len());
                    for ((a, s), gi) in gx.iter_mut().zip(y).zip(&g) {
                        *a += gi * s * (1.0 - s);
                    }
                }
                Op::Mask { x, mask } => {
                    let gx = grad_slot(&mut grads, *x, g.len());
                    for ((a, m), gi) in gx.iter_mut().zip(mask).zip(&g) {
                        *a += gi * m;
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.len_of(p);
                        if self.ng(p) {
                            add_into(grad_slot(&mut grads, p, n), &g[off..off + n], 1.0);
                        }
                        off += n;
                    }
                }
                Op::Dot(a, b) => {
                    let g0 = g[0];
                    if self.ng(*a) {
                        let bv = self.value(*b).to_vec();
                        add_into(grad_slot(&mut grads, *a, bv.len()), &bv, g0);
                    }
                    if self.ng(*b) {
                        let av = self.value(*a).to_vec();
                        add_into(grad_slot(&mut grads, *b, av.len()), &av, g0);
                    }
                }
                Op::Stack(parts) => {
                    for (&p, gi) in parts.iter().zip(&g) {
                        if self.ng(p) {
                            grad_slot(&mut grads, p, 1)[0] += gi;
                        }
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let gy: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    let gx = grad_slot(&mut grads, *x, g.len());
                    for ((a, yi), gi) in gx.iter_mut().zip(y).zip(&g) {
                        *a += yi * (gi - gy);
                    }
                }
                Op::WeightedSum { weights, values } => {
                    if self.ng(*weights) {
                        let gw: Vec<f64> = values
                            .iter()
                            .map(|&v| self.value(v).iter().zip(&g).map(|(a, b)| a * b).sum())
                            .collect();
                        add_into(grad_slot(&mut grads, *weights, gw.len()), &gw, 1.0);
                    }
                    let wv = self.value(*weights).to_vec();
                    for (&v, w) in values.iter().zip(&wv) {
                        if self.ng(v) {
                            add_into(grad_slot(&mut grads, v, g.len()), &g, *w);
                        }
                    }
                }
                Op::SumSquares(x) => {
                    let xv = self.value(*x).to_vec();
                    add_into(grad_slot(&mut grads, *x, xv.len()), &xv, 2.0 * g[0]);
                }
                Op::Sum(x) => {
                    let n = self.len_of(*x);
                    for a in grad_slot(&mut grads, *x, n) {
                        *a += g[0];
                    }
                }
                Op::AddN(terms) => {
                    for &t in terms {
                        if self.ng(t) {
                            grad_slot(&mut grads, t, 1)[0] += g[0];
                        }
                    }
                }
                Op::BernoulliLl { r, y } => {
                    let rv = self.scalar(*r);
                    let d = if rv > PROB_CLAMP && rv < 1.0 - PROB_CLAMP {
                        y / rv - (1.0 - y) / (1.0 - rv)
                    } else {
                        0.0
                    };
                    grad_slot(&mut grads, *r, 1)[0] += g[0] * d;
                }
            }
        }
        Ok(out)
    }
}

fn grad_slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += scale * b;
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    let s = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub(crate) fn bernoulli_ll(r: f64, y: f64) -> f64 {
    let r = r.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    y * r.ln() + (1.0 - y) * (1.0 - r).ln()
}
