use std::collections::HashMap;

use super::params::{Gradients, ParamId, ParamStore};
use super::{softmax, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    Concat(Vec<Var>, usize),
    SumRows(Var),
    MeanRows(Var),
    SumAll(Var),
    MeanAll(Var),
    Gather(Var, Vec<usize>),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of every operation evaluated in a forward pass.
///
/// Values are computed eagerly when an op is recorded. Parameters are read
/// from the bound [`ParamStore`] without copying. Inputs always precede
/// outputs, so a single reverse sweep visits every node once.
#[derive(Default)]
pub struct Tape<'a> {
    store: Option<&'a ParamStore>,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Tape {
            store: Some(store),
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    /// A tape with no parameters; only constants can be recorded.
    pub fn detached() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn store(&self) -> Option<&'a ParamStore> {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self
                .store
                .expect("param node on a tape without store")
                .value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Scalar read-out of a single-element value.
    pub fn item(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Records a parameter leaf. Repeated calls for the same id return the
    /// same variable.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(v) = self.params.get(&id) {
            return Ok(*v);
        }
        if self.store.is_none() {
            return Err(TensorError::NoStore("param"));
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = super::matmul(self.value(a), self.value(b))?;
        let g = self.grad_of(a) || self.grad_of(b);
        Ok(self.push(out, Op::MatMul(a, b), g))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.shape(a).to_vec();
        let g = self.grad_of(a) || self.grad_of(b);
        self.push(Tensor { shape, data }, op, g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// `a[m×n] + b[n]`, adding `b` to every row. Also accepts a rank-1 `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.value(a).as_matrix_dims();
        let bn = self.value(b).len();
        if self.value(a).rank() == 0 || bn != n || self.value(b).as_matrix_dims().0 != 1 {
            return Err(TensorError::Shape {
                op: "add_row",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut data = self.value(a).data().to_vec();
        let bd = self.value(b).data();
        for i in 0..m {
            for (o, bv) in data[i * n..(i + 1) * n].iter_mut().zip(bd) {
                *o += bv;
            }
        }
        let shape = self.shape(a).to_vec();
        let g = self.grad_of(a) || self.grad_of(b);
        Ok(self.push(Tensor { shape, data }, Op::AddRow(a, b), g))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|x| f(*x)).collect();
        let shape = t.shape().to_vec();
        let g = self.grad_of(a);
        self.push(Tensor { shape, data }, op, g)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), super::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, Op::Log(a), f64::ln)
    }

    /// `max(a, c)` composed as `c + relu(a - c)`.
    pub fn clamp_min(&mut self, a: Var, c: f64) -> Var {
        let shifted = self.add_scalar(a, -c);
        let r = self.relu(shifted);
        self.add_scalar(r, c)
    }

    /// `min(max(a, lo), hi)` composed as `lo + relu(a - lo) - relu(a - hi)`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let below = self.add_scalar(a, -lo);
        let below = self.relu(below);
        let above = self.add_scalar(a, -hi);
        let above = self.relu(above);
        let d = self.sub(below, above)?;
        Ok(self.add_scalar(d, lo))
    }

    /// Elementwise minimum composed as `a - relu(a - b)`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let r = self.relu(d);
        self.sub(a, r)
    }

    /// Softmax over all elements of `x`; masked entries are exactly zero.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let t = self.value(x);
        let data = softmax(t.data(), mask)?;
        let shape = t.shape().to_vec();
        let g = self.grad_of(x);
        Ok(self.push(Tensor { shape, data }, Op::Softmax(x), g))
    }

    /// Concatenation. Rank-1 parts are appended; rank-2 parts are joined
    /// along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Contract("concat of zero parts".into()));
        }
        let rank = self.value(parts[0]).rank();
        let shape_err = |lhs: &[usize], rhs: &[usize]| TensorError::Shape {
            op: "concat",
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        };
        let out = match (rank, axis) {
            (1, 0) => {
                let mut data = Vec::new();
                for p in parts {
                    let t = self.value(*p);
                    if t.rank() != 1 {
                        return Err(shape_err(self.shape(parts[0]), t.shape()));
                    }
                    data.extend_from_slice(t.data());
                }
                Tensor::vector(data)
            }
            (2, 0) => {
                let n = self.shape(parts[0])[1];
                let mut data = Vec::new();
                let mut m = 0;
                for p in parts {
                    let t = self.value(*p);
                    if t.rank() != 2 || t.shape()[1] != n {
                        return Err(shape_err(self.shape(parts[0]), t.shape()));
                    }
                    m += t.shape()[0];
                    data.extend_from_slice(t.data());
                }
                Tensor {
                    shape: vec![m, n],
                    data,
                }
            }
            (2, 1) => {
                let m = self.shape(parts[0])[0];
                let mut widths = Vec::with_capacity(parts.len());
                for p in parts {
                    let t = self.value(*p);
                    if t.rank() != 2 || t.shape()[0] != m {
                        return Err(shape_err(self.shape(parts[0]), t.shape()));
                    }
                    widths.push(t.shape()[1]);
                }
                let n: usize = widths.iter().sum();
                let mut data = Vec::with_capacity(m * n);
                for i in 0..m {
                    for (p, w) in parts.iter().zip(&widths) {
                        data.extend_from_slice(&self.value(*p).data()[i * w..(i + 1) * w]);
                    }
                }
                Tensor {
                    shape: vec![m, n],
                    data,
                }
            }
            _ => return Err(shape_err(self.shape(parts[0]), &[axis])),
        };
        let g = parts.iter().any(|p| self.grad_of(*p));
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), g))
    }

    fn rows_reduce(&mut self, a: Var, mean: bool) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || (mean && t.shape()[0] == 0) {
            return Err(TensorError::Shape {
                op: if mean { "mean_rows" } else { "sum_rows" },
                lhs: t.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (m, n) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, v) in out.iter_mut().zip(&t.data()[i * n..(i + 1) * n]) {
                *o += v;
            }
        }
        if mean {
            for o in &mut out {
                *o /= m as f64;
            }
        }
        let g = self.grad_of(a);
        let op = if mean {
            Op::MeanRows(a)
        } else {
            Op::SumRows(a)
        };
        Ok(self.push(Tensor::vector(out), op, g))
    }

    /// Sum along axis 0 of a matrix: `[m×n] -> [n]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        self.rows_reduce(a, false)
    }

    /// Mean along axis 0 of a non-empty matrix: `[m×n] -> [n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        self.rows_reduce(a, true)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let g = self.grad_of(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), g)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(TensorError::Contract("mean of an empty tensor".into()));
        }
        let s: f64 = t.data().iter().sum::<f64>() / t.len() as f64;
        let g = self.grad_of(a);
        Ok(self.push(Tensor::scalar(s), Op::MeanAll(a), g))
    }

    /// Selects elements (rank 1) or rows (rank 2) by index.
    pub fn gather(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let out = match t.rank() {
            1 => {
                let mut data = Vec::with_capacity(index.len());
                for &i in index {
                    if i >= t.len() {
                        return Err(TensorError::Index {
                            index: i,
                            len: t.len(),
                        });
                    }
                    data.push(t.data()[i]);
                }
                Tensor::vector(data)
            }
            2 => {
                let (m, n) = (t.shape()[0], t.shape()[1]);
                let mut data = Vec::with_capacity(index.len() * n);
                for &i in index {
                    if i >= m {
                        return Err(TensorError::Index { index: i, len: m });
                    }
                    data.extend_from_slice(&t.data()[i * n..(i + 1) * n]);
                }
                Tensor {
                    shape: vec![index.len(), n],
                    data,
                }
            }
            _ => {
                return Err(TensorError::Shape {
                    op: "gather",
                    lhs: t.shape().to_vec(),
                    rhs: vec![index.len()],
                })
            }
        };
        let g = self.grad_of(a);
        Ok(self.push(out, Op::Gather(a, index.to_vec()), g))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let g = self.grad_of(a);
        Ok(self.push(out, Op::Reshape(a), g))
    }

    /// Reverse sweep from a scalar `loss`. Returns dense gradients for every
    /// parameter in the bound store (zero for parameters the loss does not
    /// reach).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let store = self.store.ok_or(TensorError::NoStore("backward"))?;
        let mut out = Gradients::zeros_like(store);
        self.backward_into(loss, &mut out)?;
        Ok(out)
    }

    /// Like [`Tape::backward`] but adds into an existing gradient buffer.
    pub fn backward_into(&self, loss: Var, out: &mut Gradients) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let y = node.value.as_ref();
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.add(*id, &g),
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let (m, k) = av.as_matrix_dims();
                    let n = bv.shape()[1];
                    if self.grad_of(*a) {
                        let ga = acc(&mut grads, *a, m * k);
                        let bd = bv.data();
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            for p in 0..k {
                                let brow = &bd[p * n..(p + 1) * n];
                                let s: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                                ga[r * k + p] += s;
                            }
                        }
                    }
                    if self.grad_of(*b) {
                        let gb = acc(&mut grads, *b, k * n);
                        // gb += aᵀ · g
                        let ad = av.data();
                        for r in 0..m {
                            for p in 0..k {
                                let a_rp = ad[r * k + p];
                                if a_rp == 0.0 {
                                    continue;
                                }
                                for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(&g[r * n..]) {
                                    *o += a_rp * gv;
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.pass(&mut grads, *a, &g, |_| 1.0);
                    self.pass(&mut grads, *b, &g, |_| 1.0);
                }
                Op::Sub(a, b) => {
                    self.pass(&mut grads, *a, &g, |_| 1.0);
                    self.pass(&mut grads, *b, &g, |_| -1.0);
                }
                Op::Mul(a, b) => {
                    let bd = self.value(*b).data().to_vec();
                    let ad = self.value(*a).data().to_vec();
                    self.pass(&mut grads, *a, &g, |j| bd[j]);
                    self.pass(&mut grads, *b, &g, |j| ad[j]);
                }
                Op::AddRow(a, b) => {
                    self.pass(&mut grads, *a, &g, |_| 1.0);
                    if self.grad_of(*b) {
                        let n = self.value(*b).len();
                        let gb = acc(&mut grads, *b, n);
                        for (j, gv) in g.iter().enumerate() {
                            gb[j % n] += gv;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    self.pass(&mut grads, *a, &g, |_| c);
                }
                Op::AddScalar(a) | Op::Reshape(a) => self.pass(&mut grads, *a, &g, |_| 1.0),
                Op::Tanh(a) => {
                    let yd = y.unwrap().data();
                    self.pass(&mut grads, *a, &g, |j| 1.0 - yd[j] * yd[j]);
                }
                Op::Sigmoid(a) => {
                    let yd = y.unwrap().data();
                    self.pass(&mut grads, *a, &g, |j| yd[j] * (1.0 - yd[j]));
                }
                Op::Relu(a) => {
                    let xd = self.value(*a).data();
                    self.pass(&mut grads, *a, &g, |j| if xd[j] > 0.0 { 1.0 } else { 0.0 });
                }
                Op::Exp(a) => {
                    let yd = y.unwrap().data();
                    self.pass(&mut grads, *a, &g, |j| yd[j]);
                }
                Op::Log(a) => {
                    let xd = self.value(*a).data();
                    self.pass(&mut grads, *a, &g, |j| 1.0 / xd[j]);
                }
                Op::Softmax(a) => {
                    if self.grad_of(*a) {
                        let yd = y.unwrap().data();
                        let dot: f64 = yd.iter().zip(&g).map(|(p, q)| p * q).sum();
                        let ga = acc(&mut grads, *a, yd.len());
                        for j in 0..yd.len() {
                            ga[j] += yd[j] * (g[j] - dot);
                        }
                    }
                }
                Op::Concat(parts, axis) => {
                    let out_shape = y.unwrap().shape();
                    match (out_shape.len(), axis) {
                        (1, _) | (2, 0) => {
                            let mut offset = 0;
                            for p in parts {
                                let len = self.value(*p).len();
                                if self.grad_of(*p) {
                                    let gp = acc(&mut grads, *p, len);
                                    for (o, gv) in gp.iter_mut().zip(&g[offset..offset + len]) {
                                        *o += gv;
                                    }
                                }
                                offset += len;
                            }
                        }
                        _ => {
                            let (m, n) = (out_shape[0], out_shape[1]);
                            let mut col = 0;
                            for p in parts {
                                let w = self.shape(*p)[1];
                                if self.grad_of(*p) {
                                    let gp = acc(&mut grads, *p, m * w);
                                    for r in 0..m {
                                        for c in 0..w {
                                            gp[r * w + c] += g[r * n + col + c];
                                        }
                                    }
                                }
                                col += w;
                            }
                        }
                    }
                }
                Op::SumRows(a) | Op::MeanRows(a) => {
                    if self.grad_of(*a) {
                        let (m, n) = self.value(*a).as_matrix_dims();
                        let f = if matches!(node.op, Op::MeanRows(_)) {
                            1.0 / m as f64
                        } else {
                            1.0
                        };
                        let ga = acc(&mut grads, *a, m * n);
                        for r in 0..m {
                            for c in 0..n {
                                ga[r * n + c] += f * g[c];
                            }
                        }
                    }
                }
                Op::SumAll(a) => self.pass(&mut grads, *a, &g, |_| 1.0),
                Op::MeanAll(a) => {
                    let n = self.value(*a).len() as f64;
                    let g0 = g[0];
                    if self.grad_of(*a) {
                        let len = self.value(*a).len();
                        let ga = acc(&mut grads, *a, len);
                        for v in ga.iter_mut() {
                            *v += g0 / n;
                        }
                    }
                }
                Op::Gather(a, index) => {
                    if self.grad_of(*a) {
                        let t = self.value(*a);
                        let width = if t.rank() == 2 { t.shape()[1] } else { 1 };
                        let ga = acc(&mut grads, *a, t.len());
                        for (j, &i) in index.iter().enumerate() {
                            for c in 0..width {
                                ga[i * width + c] += g[j * width + c];
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Elementwise chain rule into `a`: `grad[a][j] += g[j] * local(j)`;
    /// broadcasts a single-element upstream gradient.
    fn pass(
        &self,
        grads: &mut [Option<Vec<f64>>],
        a: Var,
        g: &[f64],
        local: impl Fn(usize) -> f64,
    ) {
        if !self.grad_of(a) {
            return;
        }
        let len = self.value(a).len();
        let ga = acc(grads, a, len);
        if g.len() == len {
            for j in 0..len {
                ga[j] += g[j] * local(j);
            }
        } else {
            debug_assert_eq!(g.len(), 1);
            for j in 0..len {
                ga[j] += g[0] * local(j);
            }
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_params_has_unit_gradient() {
        let mut store = ParamStore::new();
        let id = store
            .add("theta", Tensor::vector(vec![1.0, -2.0, 0.5]))
            .unwrap();
        let mut tape = Tape::new(&store);
        let p = tape.param(id).unwrap();
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(id), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn squared_sum_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("theta", Tensor::vector(vec![1.0, -2.0])).unwrap();
        let mut tape = Tape::new(&store);
        let p = tape.param(id).unwrap();
        let sq = tape.mul(p, p).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(id), &[2.0, -4.0]);
    }

    #[test]
    fn unused_param_gets_zero() {
        let mut store = ParamStore::new();
        let used = store.add("a", Tensor::vector(vec![3.0])).unwrap();
        let unused = store.add("b", Tensor::vector(vec![1.0, 1.0])).unwrap();
        let mut tape = Tape::new(&store);
        let p = tape.param(used).unwrap();
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(unused), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut store = ParamStore::new();
        let id = store.add("a", Tensor::vector(vec![3.0, 4.0])).unwrap();
        let mut tape = Tape::new(&store);
        let p = tape.param(id).unwrap();
        assert!(matches!(
            tape.backward(p),
            Err(TensorError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn composed_clamp_and_min() {
        let mut tape = Tape::detached();
        let x = tape.constant(Tensor::vector(vec![0.5, 1.0, 1.5]));
        let c = tape.clamp(x, 0.8, 1.2).unwrap();
        assert_eq!(tape.value(c).data(), &[0.8, 1.0, 1.2]);
        let y = tape.constant(Tensor::vector(vec![1.0, 0.0, 2.0]));
        let m = tape.minimum(x, y).unwrap();
        assert_eq!(tape.value(m).data(), &[0.5, 0.0, 1.5]);
    }

    #[test]
    fn softmax_masked_entries_zero() {
        let mut tape = Tape::detached();
        let x = tape.constant(Tensor::vector(vec![5.0, 9.0]));
        let p = tape.softmax(x, Some(&[true, false])).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 0.0]);
    }
}
