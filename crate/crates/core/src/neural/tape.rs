//! Reverse-mode tape over [`Tensor2`] values.
//!
//! Every op evaluates eagerly and records how to route gradients back.
//! After [`Tape::backward`] the tape is sealed; recording on it again
//! without [`Tape::reset`] is a state error, and variables from before a
//! reset are rejected.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::loss::{clamp_prob, huber, huber_grad, TrackingScales, BCE_CLAMP};
use super::tensor::{NeuralError, Result, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    idx: usize,
    generation: u32,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    Gather(usize, Vec<usize>),
    Concat(usize, usize),
    /// Source row of the maximum for each output element, `None` when the
    /// segment is empty.
    SegmentMax {
        src: usize,
        segment: Vec<usize>,
        argmax: Vec<Option<usize>>,
    },
    Scale(usize, f64),
    Sum(usize),
    Bce {
        p: usize,
        y: Vec<f64>,
    },
    Huber {
        pred: usize,
        target: Tensor2,
        mask: Vec<bool>,
        delta: f64,
    },
    Mse {
        pred: usize,
        truth: Tensor2,
        scales: TrackingScales,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor2,
    op: Op,
}

#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    generation: u32,
    sealed: bool,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward pass, indexed by the tape's variables.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Tensor2>,
    generation: u32,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Result<&Tensor2> {
        if v.generation != self.generation || v.idx >= self.grads.len() {
            return Err(NeuralError::TapeState("variable does not belong to this pass"));
        }
        Ok(&self.grads[v.idx])
    }
}

fn shape_err(op: &'static str, a: &Tensor2, b: &Tensor2) -> NeuralError {
    NeuralError::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            generation: 0,
            sealed: false,
            check_finite: true,
        }
    }

    /// Disables the per-op finiteness check.
    pub fn without_finite_check(mut self) -> Self {
        self.check_finite = false;
        self
    }

    pub fn reset(&mut self) {
        self.nodes.clear();
        self.generation = self.generation.wrapping_add(1);
        self.sealed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.generation != self.generation || v.idx >= self.nodes.len() {
            return Err(NeuralError::TapeState("variable from a reset tape"));
        }
        Ok(v.idx)
    }

    fn push(&mut self, value: Tensor2, op: Op, name: &'static str) -> Result<Var> {
        if self.sealed {
            return Err(NeuralError::TapeState("tape reused after backward without reset"));
        }
        if self.check_finite && !value.is_finite() {
            return Err(NeuralError::NonFinite(name));
        }
        self.nodes.push(Node { value, op });
        Ok(Var {
            idx: self.nodes.len() - 1,
            generation: self.generation,
        })
    }

    pub fn value(&self, v: Var) -> Result<&Tensor2> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    pub fn leaf(&mut self, t: Tensor2) -> Result<Var> {
        self.push(t, Op::Leaf, "leaf")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let v = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        self.push(v, Op::MatMul(ia, ib), "matmul")
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(bias)?);
        let (x, b) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if b.rows != 1 || b.cols != x.cols {
            return Err(shape_err("add_row", x, b));
        }
        let mut v = x.clone();
        for r in 0..v.rows {
            for (o, bb) in v.row_mut(r).iter_mut().zip(&b.data) {
                *o += bb;
            }
        }
        self.push(v, Op::AddRow(ia, ib), "add_row")
    }

    fn binary(&mut self, a: Var, b: Var, sign: f64, name: &'static str) -> Result<(Tensor2, usize, usize)> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (x, y) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if !x.same_shape(y) {
            return Err(shape_err(name, x, y));
        }
        let mut v = x.clone();
        for (o, yy) in v.data.iter_mut().zip(&y.data) {
            *o += sign * yy;
        }
        Ok((v, ia, ib))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, ia, ib) = self.binary(a, b, 1.0, "add")?;
        self.push(v, Op::Add(ia, ib), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, ia, ib) = self.binary(a, b, -1.0, "sub")?;
        self.push(v, Op::Sub(ia, ib), "sub")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let mut v = self.nodes[ia].value.clone();
        for x in &mut v.data {
            *x = x.max(0.0);
        }
        self.push(v, Op::Relu(ia), "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let mut v = self.nodes[ia].value.clone();
        for x in &mut v.data {
            *x = sigmoid(*x);
        }
        self.push(v, Op::Sigmoid(ia), "sigmoid")
    }

    /// Row `r` of the result is row `index[r]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        let mut v = Tensor2::zeros(index.len(), x.cols);
        for (r, &i) in index.iter().enumerate() {
            if i >= x.rows {
                return Err(NeuralError::Index {
                    op: "gather_rows",
                    index: i,
                    len: x.rows,
                });
            }
            v.row_mut(r).copy_from_slice(x.row(i));
        }
        self.push(v, Op::Gather(ia, index.to_vec()), "gather_rows")
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (x, y) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if x.rows != y.rows {
            return Err(shape_err("concat_cols", x, y));
        }
        let mut v = Tensor2::zeros(x.rows, x.cols + y.cols);
        for r in 0..x.rows {
            let row = v.row_mut(r);
            row[..x.cols].copy_from_slice(x.row(r));
            row[x.cols..].copy_from_slice(y.row(r));
        }
        self.push(v, Op::Concat(ia, ib), "concat_cols")
    }

    /// Componentwise maximum of the rows of `a` grouped by `segment`, one
    /// output row per segment id in `0..n_segments`. Empty segments are
    /// zero. Ties go to the lowest row index.
    pub fn segment_max(&mut self, a: Var, segment: &[usize], n_segments: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        if segment.len() != x.rows {
            return Err(NeuralError::Shape {
                op: "segment_max",
                left: x.shape(),
                right: (segment.len(), 1),
            });
        }
        let c = x.cols;
        let mut argmax: Vec<Option<usize>> = alloc::vec![None; n_segments * c];
        for (r, &s) in segment.iter().enumerate() {
            if s >= n_segments {
                return Err(NeuralError::Index {
                    op: "segment_max",
                    index: s,
                    len: n_segments,
                });
            }
            for k in 0..c {
                let slot = &mut argmax[s * c + k];
                match *slot {
                    Some(best) if x.get(best, k) >= x.get(r, k) => {}
                    _ => *slot = Some(r),
                }
            }
        }
        let mut v = Tensor2::zeros(n_segments, c);
        for s in 0..n_segments {
            for k in 0..c {
                if let Some(r) = argmax[s * c + k] {
                    v.set(s, k, x.get(r, k));
                }
            }
        }
        self.push(
            v,
            Op::SegmentMax {
                src: ia,
                segment: segment.to_vec(),
                argmax,
            },
            "segment_max",
        )
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let mut v = self.nodes[ia].value.clone();
        for x in &mut v.data {
            *x *= k;
        }
        self.push(v, Op::Scale(ia, k), "scale")
    }

    /// Sum of all elements as a `1 × 1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = self.nodes[ia].value.data.iter().sum();
        self.push(Tensor2::scalar(s), Op::Sum(ia), "sum")
    }

    /// Mean binary cross entropy of an `n × 1` probability column.
    pub fn bce(&mut self, p: Var, y: &[f64]) -> Result<Var> {
        let ip = self.idx(p)?;
        let x = &self.nodes[ip].value;
        if x.cols != 1 || x.rows != y.len() {
            return Err(NeuralError::Shape {
                op: "bce",
                left: x.shape(),
                right: (y.len(), 1),
            });
        }
        let v = super::loss::bce_loss(y, &x.data)?;
        self.push(Tensor2::scalar(v), Op::Bce { p: ip, y: y.to_vec() }, "bce")
    }

    /// Masked Huber over `n × 5` encoded boxes, divided by `n`.
    pub fn huber_masked(&mut self, pred: Var, target: &Tensor2, mask: &[bool], delta: f64) -> Result<Var> {
        let ip = self.idx(pred)?;
        let x = &self.nodes[ip].value;
        if !x.same_shape(target) || mask.len() != x.rows {
            return Err(shape_err("huber", x, target));
        }
        let mut s = 0.0;
        for r in 0..x.rows {
            if mask[r] {
                s += x
                    .row(r)
                    .iter()
                    .zip(target.row(r))
                    .map(|(p, t)| huber(p - t, delta))
                    .sum::<f64>();
            }
        }
        let v = if x.rows == 0 { 0.0 } else { s / x.rows as f64 };
        self.push(
            Tensor2::scalar(v),
            Op::Huber {
                pred: ip,
                target: target.clone(),
                mask: mask.to_vec(),
                delta,
            },
            "huber",
        )
    }

    /// Scaled MSE over `n × 2` rows of `(p_T, ε_T)`; zero when `n = 0`.
    pub fn mse_scaled(&mut self, pred: Var, truth: &Tensor2, scales: TrackingScales) -> Result<Var> {
        let ip = self.idx(pred)?;
        let x = &self.nodes[ip].value;
        if !x.same_shape(truth) || x.cols != 2 {
            return Err(shape_err("mse", x, truth));
        }
        let mut s = 0.0;
        for r in 0..x.rows {
            let dp = (truth.get(r, 0) - x.get(r, 0)) / scales.c_pt;
            let de = (truth.get(r, 1) - x.get(r, 1)) / scales.c_eps;
            s += dp * dp + de * de;
        }
        let v = if x.rows == 0 { 0.0 } else { s / x.rows as f64 };
        self.push(
            Tensor2::scalar(v),
            Op::Mse {
                pred: ip,
                truth: truth.clone(),
                scales,
            },
            "mse",
        )
    }

    /// Reverse pass from a `1 × 1` output. Seals the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.sealed {
            return Err(NeuralError::TapeState("backward called twice without reset"));
        }
        let il = self.idx(loss)?;
        if self.nodes[il].value.shape() != (1, 1) {
            return Err(NeuralError::Shape {
                op: "backward",
                left: self.nodes[il].value.shape(),
                right: (1, 1),
            });
        }
        self.sealed = true;
        let mut grads: Vec<Tensor2> = self
            .nodes
            .iter()
            .map(|n| Tensor2::zeros(n.value.rows, n.value.cols))
            .collect();
        grads[il].data[0] = 1.0;

        for i in (0..=il).rev() {
            let g = core::mem::replace(&mut grads[i], Tensor2::zeros(0, 0));
            if g.data.iter().all(|&x| x == 0.0) {
                grads[i] = g;
                continue;
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(&self.nodes[*b].value)?;
                    let gb = self.nodes[*a].value.t_matmul(&g)?;
                    grads[*a].add_assign(&ga);
                    grads[*b].add_assign(&gb);
                }
                Op::AddRow(a, b) => {
                    grads[*a].add_assign(&g);
                    let gb = &mut grads[*b];
                    for r in 0..g.rows {
                        for (o, x) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
                Op::Add(a, b) => {
                    grads[*a].add_assign(&g);
                    grads[*b].add_assign(&g);
                }
                Op::Sub(a, b) => {
                    grads[*a].add_assign(&g);
                    for (o, x) in grads[*b].data.iter_mut().zip(&g.data) {
                        *o -= x;
                    }
                }
                Op::Relu(a) => {
                    let x = &self.nodes[*a].value;
                    for ((o, gg), xx) in grads[*a].data.iter_mut().zip(&g.data).zip(&x.data) {
                        if *xx > 0.0 {
                            *o += gg;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    for ((o, gg), y) in grads[*a].data.iter_mut().zip(&g.data).zip(&node.value.data) {
                        *o += gg * y * (1.0 - y);
                    }
                }
                Op::Gather(a, index) => {
                    let ga = &mut grads[*a];
                    for (r, &src) in index.iter().enumerate() {
                        for (o, x) in ga.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
                Op::Concat(a, b) => {
                    let ca = grads[*a].cols;
                    for r in 0..g.rows {
                        for (o, x) in grads[*a].row_mut(r).iter_mut().zip(&g.row(r)[..ca]) {
                            *o += x;
                        }
                        for (o, x) in grads[*b].row_mut(r).iter_mut().zip(&g.row(r)[ca..]) {
                            *o += x;
                        }
                    }
                }
                Op::SegmentMax { src, argmax, .. } => {
                    let c = g.cols;
                    let gs = &mut grads[*src];
                    for (e, am) in argmax.iter().enumerate() {
                        if let Some(r) = am {
                            gs.data[r * c + e % c] += g.data[e];
                        }
                    }
                }
                Op::Scale(a, k) => {
                    for (o, x) in grads[*a].data.iter_mut().zip(&g.data) {
                        *o += k * x;
                    }
                }
                Op::Sum(a) => {
                    let s = g.data[0];
                    for o in &mut grads[*a].data {
                        *o += s;
                    }
                }
                Op::Bce { p, y } => {
                    let s = g.data[0];
                    let n = y.len() as f64;
                    let x = &self.nodes[*p].value;
                    for ((o, &pp), &yy) in grads[*p].data.iter_mut().zip(&x.data).zip(y) {
                        if pp <= BCE_CLAMP || pp >= 1.0 - BCE_CLAMP {
                            continue;
                        }
                        let pc = clamp_prob(pp);
                        *o += -s / n * (yy / pc - (1.0 - yy) / (1.0 - pc));
                    }
                }
                Op::Huber {
                    pred,
                    target,
                    mask,
                    delta,
                } => {
                    let s = g.data[0] / target.rows as f64;
                    let x = &self.nodes[*pred].value;
                    let gp = &mut grads[*pred];
                    for r in 0..x.rows {
                        if !mask[r] {
                            continue;
                        }
                        for k in 0..x.cols {
                            let d = x.get(r, k) - target.get(r, k);
                            gp.data[r * x.cols + k] += s * huber_grad(d, *delta);
                        }
                    }
                }
                Op::Mse { pred, truth, scales } => {
                    let s = g.data[0] / truth.rows as f64;
                    let x = &self.nodes[*pred].value;
                    let gp = &mut grads[*pred];
                    for r in 0..x.rows {
                        let dp = x.get(r, 0) - truth.get(r, 0);
                        let de = x.get(r, 1) - truth.get(r, 1);
                        gp.data[r * 2] += s * 2.0 * dp / (scales.c_pt * scales.c_pt);
                        gp.data[r * 2 + 1] += s * 2.0 * de / (scales.c_eps * scales.c_eps);
                    }
                }
            }
            grads[i] = g;
        }
        Ok(Gradients {
            grads,
            generation: self.generation,
        })
    }

    /// Discrete state of every non-smooth op: ReLU signs, max-aggregation
    /// winners, Huber branches and BCE clamps. Two evaluations with the
    /// same signature lie on the same smooth piece.
    pub fn kink_signature(&self) -> Vec<usize> {
        let mut sig = Vec::new();
        for n in &self.nodes {
            match &n.op {
                Op::Relu(a) => sig.extend(self.nodes[*a].value.data.iter().map(|&x| usize::from(x > 0.0))),
                Op::SegmentMax { argmax, .. } => sig.extend(argmax.iter().map(|a| a.map_or(usize::MAX, |r| r))),
                Op::Huber {
                    pred, target, delta, ..
                } => sig.extend(
                    self.nodes[*pred]
                        .value
                        .data
                        .iter()
                        .zip(&target.data)
                        .map(|(p, t)| usize::from((p - t).abs() <= *delta)),
                ),
                Op::Bce { p, .. } => sig.extend(
                    self.nodes[*p]
                        .value
                        .data
                        .iter()
                        .map(|&x| usize::from(x <= BCE_CLAMP || x >= 1.0 - BCE_CLAMP)),
                ),
                _ => {}
            }
        }
        sig
    }

    /// Smallest distance of any non-smooth op input to its kink.
    pub fn kink_distance(&self) -> f64 {
        let mut d = f64::INFINITY;
        for n in &self.nodes {
            match &n.op {
                Op::Relu(a) => {
                    for &x in &self.nodes[*a].value.data {
                        d = d.min(x.abs());
                    }
                }
                Op::SegmentMax { src, segment, argmax } => {
                    let x = &self.nodes[*src].value;
                    let c = x.cols;
                    for (r, &s) in segment.iter().enumerate() {
                        for k in 0..c {
                            if let Some(best) = argmax[s * c + k] {
                                if best != r {
                                    d = d.min(x.get(best, k) - x.get(r, k));
                                }
                            }
                        }
                    }
                }
                Op::Huber {
                    pred,
                    target,
                    delta,
                    mask,
                } => {
                    let x = &self.nodes[*pred].value;
                    for r in 0..x.rows {
                        if mask[r] {
                            for k in 0..x.cols {
                                d = d.min(((x.get(r, k) - target.get(r, k)).abs() - delta).abs());
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        d
    }
}
