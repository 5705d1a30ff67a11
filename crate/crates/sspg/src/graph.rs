//! Eager tape-based reverse-mode autodiff over [`Tensor`].
//!
//! Each op validates shapes, computes its output immediately, and records
//! itself on the tape. `backward` walks the tape in reverse and accumulates
//! gradients into per-parameter buffers held by the graph.

use std::collections::HashMap;

use rand::Rng;

use crate::error::GraphError;
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    Add,
    Sub,
    Mul,
    Neg,
    Scale(f64),
    AddScalar,
    MatMul,
    MatVec,
    VecMat,
    Gather(Vec<usize>),
    RowOf(usize),
    Sigmoid,
    Tanh,
    Ln,
    Softmax,
    LogSoftmax,
    LogSumExp,
    Concat(Vec<usize>),
    Stack,
    Slice(usize, usize),
    Index(usize),
    SumSelect(Vec<usize>),
    Sum,
    Dropout(Vec<f64>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::AddScalar => "add_scalar",
            Op::MatMul => "matmul",
            Op::MatVec => "matvec",
            Op::VecMat => "vecmat",
            Op::Gather(_) => "gather",
            Op::RowOf(_) => "row_of",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Ln => "ln",
            Op::Softmax => "softmax",
            Op::LogSoftmax => "log_softmax",
            Op::LogSumExp => "logsumexp",
            Op::Concat(_) => "concat",
            Op::Stack => "stack",
            Op::Slice(_, _) => "slice",
            Op::Index(_) => "index",
            Op::SumSelect(_) => "sum_select",
            Op::Sum => "sum",
            Op::Dropout(_) => "dropout",
        }
    }
}

struct Node {
    op: Op,
    inputs: Vec<usize>,
    value: Tensor,
}

/// Named trainable leaf tensors with matching gradient buffers.
#[derive(Clone)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> usize {
        debug_assert!(!self.index.contains_key(name), "duplicate param {name}");
        let id = self.values.len();
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Result<usize, GraphError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| GraphError::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn value(&self, id: usize) -> &Tensor {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.values[id]
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, GraphError> {
        Ok(&self.values[self.id(name)?])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    /// Xavier-uniform matrix init: U(±sqrt(6/(fan_in+fan_out))).
    pub fn insert_matrix<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> usize {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(name, Tensor::new(vec![rows, cols], data).unwrap())
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) -> usize {
        self.insert(name, Tensor::zeros(shape))
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-parameter gradient buffers, indexed like the store.
#[derive(Clone, Debug)]
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Gradients(vec![None; n])
    }

    pub fn get(&self, id: usize) -> Option<&Tensor> {
        self.0.get(id).and_then(|g| g.as_ref())
    }

    pub fn add_into(&mut self, id: usize, grad: &Tensor) {
        match &mut self.0[id] {
            Some(buf) => {
                for (b, g) in buf.data_mut().iter_mut().zip(grad.data()) {
                    *b += g;
                }
            }
            slot => *slot = Some(grad.clone()),
        }
    }

    pub fn merge(&mut self, other: &Gradients) {
        for (id, g) in other.0.iter().enumerate() {
            if let Some(g) = g {
                self.add_into(id, g);
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.0.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= c;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        let mut s = 0.0;
        for g in self.0.iter().flatten() {
            for v in g.data() {
                s += v * v;
            }
        }
        s.sqrt()
    }
}

/// Single-threaded forward/backward tape bound to a parameter snapshot.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<usize>>,
    param_grads: Gradients,
}

fn ew(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), GraphError> {
    if a.shape() != b.shape() {
        return Err(GraphError::ShapeMismatch {
            op,
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    Ok(())
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
            param_grads: Gradients::zeros(params.len()),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, value: Tensor) -> Result<Var, GraphError> {
        if value.has_bad_value() {
            return Err(GraphError::NonFinite { node: self.nodes.len(), op: op.name() });
        }
        self.nodes.push(Node { op, inputs, value });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn input(&mut self, value: Tensor) -> Result<Var, GraphError> {
        self.push(Op::Leaf, vec![], value)
    }

    pub fn constant(&mut self, v: f64) -> Var {
        self.push(Op::Leaf, vec![], Tensor::scalar(v)).expect("finite constant")
    }

    /// Leaf node for a named parameter; deduplicated per graph.
    pub fn param(&mut self, name: &str) -> Result<Var, GraphError> {
        let id = self.params.id(name)?;
        if let Some(n) = self.param_nodes[id] {
            return Ok(Var(n));
        }
        let v = self.push(Op::Param(id), vec![], self.params.value(id).clone())?;
        self.param_nodes[id] = Some(v.0);
        Ok(v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        ew("add", ta, tb)?;
        let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(Op::Add, vec![a.0, b.0], t)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        ew("sub", ta, tb)?;
        let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(Op::Sub, vec![a.0, b.0], t)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        ew("mul", ta, tb)?;
        let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(Op::Mul, vec![a.0, b.0], t)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, GraphError> {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| -x).collect())?;
        self.push(Op::Neg, vec![a.0], t)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, GraphError> {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x * c).collect())?;
        self.push(Op::Scale(c), vec![a.0], t)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, GraphError> {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x + c).collect())?;
        self.push(Op::AddScalar, vec![a.0], t)
    }

    /// (m,k) x (k,n) -> (m,n)
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = ta.dims2().ok_or_else(|| GraphError::ShapeMismatch {
            op: "matmul",
            detail: format!("lhs must be rank 2, got {:?}", ta.shape()),
        })?;
        let (k2, n) = tb.dims2().ok_or_else(|| GraphError::ShapeMismatch {
            op: "matmul",
            detail: format!("rhs must be rank 2, got {:?}", tb.shape()),
        })?;
        if k != k2 {
            return Err(GraphError::ShapeMismatch {
                op: "matmul",
                detail: format!("({m},{k}) x ({k2},{n})"),
            });
        }
        let mut out = vec![0.0; m * n];
        let (da, db) = (ta.data(), tb.data());
        for i in 0..m {
            for l in 0..k {
                let a_il = da[i * k + l];
                if a_il == 0.0 {
                    continue;
                }
                let brow = &db[l * n..(l + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a_il * b;
                }
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        self.push(Op::MatMul, vec![a.0, b.0], t)
    }

    /// (m,k) x (k,) -> (m,)
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var, GraphError> {
        let (ta, tx) = (&self.nodes[a.0].value, &self.nodes[x.0].value);
        let (m, k) = ta.dims2().ok_or_else(|| GraphError::ShapeMismatch {
            op: "matvec",
            detail: format!("lhs must be rank 2, got {:?}", ta.shape()),
        })?;
        if tx.shape() != [k] {
            return Err(GraphError::ShapeMismatch {
                op: "matvec",
                detail: format!("({m},{k}) x {:?}", tx.shape()),
            });
        }
        let (da, dx) = (ta.data(), tx.data());
        let out: Vec<f64> = (0..m)
            .map(|i| da[i * k..(i + 1) * k].iter().zip(dx).map(|(a, x)| a * x).sum())
            .collect();
        self.push(Op::MatVec, vec![a.0, x.0], Tensor::vector(out))
    }

    /// (k,) x (k,n) -> (n,)
    pub fn vecmat(&mut self, x: Var, a: Var) -> Result<Var, GraphError> {
        let (tx, ta) = (&self.nodes[x.0].value, &self.nodes[a.0].value);
        let (k, n) = ta.dims2().ok_or_else(|| GraphError::ShapeMismatch {
            op: "vecmat",
            detail: format!("rhs must be rank 2, got {:?}", ta.shape()),
        })?;
        if tx.shape() != [k] {
            return Err(GraphError::ShapeMismatch {
                op: "vecmat",
                detail: format!("{:?} x ({k},{n})", tx.shape()),
            });
        }
        let (dx, da) = (tx.data(), ta.data());
        let mut out = vec![0.0; n];
        for i in 0..k {
            let xi = dx[i];
            if xi == 0.0 {
                continue;
            }
            for j in 0..n {
                out[j] += xi * da[i * n + j];
            }
        }
        self.push(Op::VecMat, vec![x.0, a.0], Tensor::vector(out))
    }

    /// Embedding lookup: rows `ids` of a (V,E) matrix -> (len(ids), E).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, GraphError> {
        let tt = &self.nodes[table.0].value;
        let (v, e) = tt.dims2().ok_or_else(|| GraphError::ShapeMismatch {
            op: "gather",
            detail: format!("table must be rank 2, got {:?}", tt.shape()),
        })?;
        let mut out = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= v {
                return Err(GraphError::IndexOutOfBounds { op: "gather", index: id, len: v });
            }
            out.extend_from_slice(tt.row(id));
        }
        let t = Tensor::new(vec![ids.len(), e], out)?;
        self.push(Op::Gather(ids.to_vec()), vec![table.0], t)
    }

    pub fn row_of(&mut self, m: Var, i: usize) -> Result<Var, GraphError> {
        let tm = &self.nodes[m.0].value;
        let (r, _c) = tm.dims2().ok_or_else(|| GraphError::ShapeMismatch {
            op: "row_of",
            detail: format!("need rank 2, got {:?}", tm.shape()),
        })?;
        if i >= r {
            return Err(GraphError::IndexOutOfBounds { op: "row_of", index: i, len: r });
        }
        let t = Tensor::vector(tm.row(i).to_vec());
        self.push(Op::RowOf(i), vec![m.0], t)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, GraphError> {
        let ta = &self.nodes[a.0].value;
        let data: Vec<f64> = ta
            .data()
            .iter()
            .map(|x| {
                if *x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(Op::Sigmoid, vec![a.0], t)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, GraphError> {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x.tanh()).collect())?;
        self.push(Op::Tanh, vec![a.0], t)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, GraphError> {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x.ln()).collect())?;
        self.push(Op::Ln, vec![a.0], t)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var, GraphError> {
        let ta = &self.nodes[a.0].value;
        let m = ta.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = ta.data().iter().map(|x| (x - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let t = Tensor::new(ta.shape().to_vec(), exps.iter().map(|e| e / z).collect())?;
        self.push(Op::Softmax, vec![a.0], t)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, GraphError> {
        let ta = &self.nodes[a.0].value;
        let m = ta.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = ta.data().iter().map(|x| (x - m).exp()).sum();
        let lz = m + z.ln();
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x - lz).collect())?;
        self.push(Op::LogSoftmax, vec![a.0], t)
    }

    /// 1-D -> scalar. All-(-inf) input yields -inf with zero gradient.
    pub fn logsumexp(&mut self, a: Var) -> Result<Var, GraphError> {
        let ta = &self.nodes[a.0].value;
        let v = crate::tensor::logsumexp_slice(ta.data());
        self.push(Op::LogSumExp, vec![a.0], Tensor::scalar(v))
    }

    /// Concatenate 1-D vectors (scalars are treated as length-1).
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, GraphError> {
        let mut data = Vec::new();
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            let t = &self.nodes[p.0].value;
            lens.push(t.numel());
            data.extend_from_slice(t.data());
        }
        let t = Tensor::vector(data);
        self.push(Op::Concat(lens), parts.iter().map(|p| p.0).collect(), t)
    }

    /// Stack equal-length 1-D vectors into a (n, d) matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var, GraphError> {
        if rows.is_empty() {
            return Err(GraphError::ShapeMismatch { op: "stack", detail: "no rows".into() });
        }
        let d = self.nodes[rows[0].0].value.numel();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            let t = &self.nodes[r.0].value;
            if t.numel() != d {
                return Err(GraphError::ShapeMismatch {
                    op: "stack",
                    detail: format!("row lengths {} vs {}", d, t.numel()),
                });
            }
            data.extend_from_slice(t.data());
        }
        let t = Tensor::new(vec![rows.len(), d], data)?;
        self.push(Op::Stack, rows.iter().map(|r| r.0).collect(), t)
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, GraphError> {
        let ta = &self.nodes[a.0].value;
        if start + len > ta.numel() {
            return Err(GraphError::IndexOutOfBounds { op: "slice", index: start + len, len: ta.numel() });
        }
        let t = Tensor::vector(ta.data()[start..start + len].to_vec());
        self.push(Op::Slice(start, len), vec![a.0], t)
    }

    pub fn index(&mut self, a: Var, i: usize) -> Result<Var, GraphError> {
        let ta = &self.nodes[a.0].value;
        if i >= ta.numel() {
            return Err(GraphError::IndexOutOfBounds { op: "index", index: i, len: ta.numel() });
        }
        let t = Tensor::scalar(ta.data()[i]);
        self.push(Op::Index(i), vec![a.0], t)
    }

    /// Sum of selected entries of a 1-D vector (with multiplicity).
    pub fn sum_select(&mut self, a: Var, ids: &[usize]) -> Result<Var, GraphError> {
        let ta = &self.nodes[a.0].value;
        let mut s = 0.0;
        for &i in ids {
            if i >= ta.numel() {
                return Err(GraphError::IndexOutOfBounds { op: "sum_select", index: i, len: ta.numel() });
            }
            s += ta.data()[i];
        }
        self.push(Op::SumSelect(ids.to_vec()), vec![a.0], Tensor::scalar(s))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, GraphError> {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(Op::Sum, vec![a.0], Tensor::scalar(s))
    }

    /// Inverted dropout: keep with prob 1-p, scale kept entries by 1/(1-p).
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var, GraphError> {
        debug_assert!((0.0..1.0).contains(&p));
        let ta = &self.nodes[a.0].value;
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..ta.numel())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data: Vec<f64> = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(Op::Dropout(mask), vec![a.0], t)
    }

    /// Backpropagate from a scalar (or seeded) output into the parameter
    /// gradient buffers. Repeated calls accumulate until `reset_grads`.
    pub fn backward(&mut self, output: Var, seed: Option<Tensor>) -> Result<(), GraphError> {
        if output.0 >= self.nodes.len() {
            return Err(GraphError::BackwardBeforeForward(output.0));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let out_t = &self.nodes[output.0].value;
        let seed = match seed {
            Some(s) => {
                ew("backward_seed", &s, out_t)?;
                s
            }
            None => Tensor::full(out_t.shape(), 1.0),
        };
        grads[output.0] = Some(seed);

        for ni in (0..=output.0).rev() {
            let g = match grads[ni].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[ni];
            let ins = node.inputs.clone();
            macro_rules! acc {
                ($slot:expr, $tensor:expr) => {{
                    let t: Tensor = $tensor;
                    match &mut grads[$slot] {
                        Some(buf) => {
                            for (b, v) in buf.data_mut().iter_mut().zip(t.data()) {
                                *b += v;
                            }
                        }
                        slot => *slot = Some(t),
                    }
                }};
            }
            match &self.nodes[ni].op {
                Op::Leaf => {}
                Op::Param(pid) => self.param_grads.add_into(*pid, &g),
                Op::Add => {
                    acc!(ins[0], g.clone());
                    acc!(ins[1], g);
                }
                Op::Sub => {
                    acc!(ins[0], g.clone());
                    let neg =
                        Tensor::new(g.shape().to_vec(), g.data().iter().map(|x| -x).collect()).unwrap();
                    acc!(ins[1], neg);
                }
                Op::Mul => {
                    let (a, b) = (&self.nodes[ins[0]].value, &self.nodes[ins[1]].value);
                    let ga = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(b.data()).map(|(g, b)| g * b).collect(),
                    )
                    .unwrap();
                    let gb = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(a.data()).map(|(g, a)| g * a).collect(),
                    )
                    .unwrap();
                    acc!(ins[0], ga);
                    acc!(ins[1], gb);
                }
                Op::Neg => {
                    let t = Tensor::new(g.shape().to_vec(), g.data().iter().map(|x| -x).collect())
                        .unwrap();
                    acc!(ins[0], t);
                }
                Op::Scale(c) => {
                    let c = *c;
                    let t = Tensor::new(g.shape().to_vec(), g.data().iter().map(|x| x * c).collect())
                        .unwrap();
                    acc!(ins[0], t);
                }
                Op::AddScalar => acc!(ins[0], g),
                Op::MatMul => {
                    let (a, b) = (&self.nodes[ins[0]].value, &self.nodes[ins[1]].value);
                    let (m, k) = a.dims2().unwrap();
                    let (_, n) = b.dims2().unwrap();
                    // dA = g · Bᵀ ; dB = Aᵀ · g
                    let mut ga = vec![0.0; m * k];
                    let mut gb = vec![0.0; k * n];
                    let (da, db, dg) = (a.data(), b.data(), g.data());
                    for i in 0..m {
                        for j in 0..n {
                            let gij = dg[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for l in 0..k {
                                ga[i * k + l] += gij * db[l * n + j];
                                gb[l * n + j] += da[i * k + l] * gij;
                            }
                        }
                    }
                    acc!(ins[0], Tensor::new(vec![m, k], ga).unwrap());
                    acc!(ins[1], Tensor::new(vec![k, n], gb).unwrap());
                }
                Op::MatVec => {
                    let (a, x) = (&self.nodes[ins[0]].value, &self.nodes[ins[1]].value);
                    let (m, k) = a.dims2().unwrap();
                    let (da, dx, dg) = (a.data(), x.data(), g.data());
                    let mut ga = vec![0.0; m * k];
                    let mut gx = vec![0.0; k];
                    for i in 0..m {
                        let gi = dg[i];
                        if gi == 0.0 {
                            continue;
                        }
                        for j in 0..k {
                            ga[i * k + j] += gi * dx[j];
                            gx[j] += gi * da[i * k + j];
                        }
                    }
                    acc!(ins[0], Tensor::new(vec![m, k], ga).unwrap());
                    acc!(ins[1], Tensor::vector(gx));
                }
                Op::VecMat => {
                    let (x, a) = (&self.nodes[ins[0]].value, &self.nodes[ins[1]].value);
                    let (k, n) = a.dims2().unwrap();
                    let (dx, da, dg) = (x.data(), a.data(), g.data());
                    let mut gx = vec![0.0; k];
                    let mut ga = vec![0.0; k * n];
                    for i in 0..k {
                        for j in 0..n {
                            gx[i] += dg[j] * da[i * n + j];
                            ga[i * n + j] += dx[i] * dg[j];
                        }
                    }
                    acc!(ins[0], Tensor::vector(gx));
                    acc!(ins[1], Tensor::new(vec![k, n], ga).unwrap());
                }
                Op::Gather(ids) => {
                    let table = &self.nodes[ins[0]].value;
                    let (v, e) = table.dims2().unwrap();
                    let mut gt = vec![0.0; v * e];
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..e {
                            gt[id * e + c] += g.data()[r * e + c];
                        }
                    }
                    acc!(ins[0], Tensor::new(vec![v, e], gt).unwrap());
                }
                Op::RowOf(i) => {
                    let m = &self.nodes[ins[0]].value;
                    let (r, c) = m.dims2().unwrap();
                    let mut gm = vec![0.0; r * c];
                    gm[i * c..(i + 1) * c].copy_from_slice(g.data());
                    acc!(ins[0], Tensor::new(vec![r, c], gm).unwrap());
                }
                Op::Sigmoid => {
                    let y = &self.nodes[ni].value;
                    let t = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(y.data()).map(|(g, y)| g * y * (1.0 - y)).collect(),
                    )
                    .unwrap();
                    acc!(ins[0], t);
                }
                Op::Tanh => {
                    let y = &self.nodes[ni].value;
                    let t = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(y.data()).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    )
                    .unwrap();
                    acc!(ins[0], t);
                }
                Op::Ln => {
                    let x = &self.nodes[ins[0]].value;
                    let t = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(x.data()).map(|(g, x)| g / x).collect(),
                    )
                    .unwrap();
                    acc!(ins[0], t);
                }
                Op::Softmax => {
                    let y = self.nodes[ni].value.data();
                    let dot: f64 = g.data().iter().zip(y).map(|(g, y)| g * y).sum();
                    let t = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(y).map(|(g, y)| y * (g - dot)).collect(),
                    )
                    .unwrap();
                    acc!(ins[0], t);
                }
                Op::LogSoftmax => {
                    let y = self.nodes[ni].value.data();
                    let gsum: f64 = g.data().iter().sum();
                    let t = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(y).map(|(g, ly)| g - ly.exp() * gsum).collect(),
                    )
                    .unwrap();
                    acc!(ins[0], t);
                }
                Op::LogSumExp => {
                    let x = self.nodes[ins[0]].value.data();
                    let out = self.nodes[ni].value.item();
                    let gs = g.item();
                    let t = if out == f64::NEG_INFINITY {
                        Tensor::vector(vec![0.0; x.len()])
                    } else {
                        Tensor::vector(x.iter().map(|x| gs * (x - out).exp()).collect())
                    };
                    acc!(ins[0], t);
                }
                Op::Concat(lens) => {
                    let mut off = 0;
                    let lens = lens.clone();
                    for (slot, len) in ins.iter().zip(lens) {
                        let part = Tensor::vector(g.data()[off..off + len].to_vec());
                        off += len;
                        acc!(*slot, part);
                    }
                }
                Op::Stack => {
                    let (_, d) = self.nodes[ni].value.dims2().unwrap();
                    for (r, slot) in ins.iter().enumerate() {
                        let part = Tensor::vector(g.data()[r * d..(r + 1) * d].to_vec());
                        acc!(*slot, part);
                    }
                }
                Op::Slice(start, len) => {
                    let x = &self.nodes[ins[0]].value;
                    let mut gx = vec![0.0; x.numel()];
                    gx[*start..start + len].copy_from_slice(g.data());
                    acc!(ins[0], Tensor::vector(gx));
                }
                Op::Index(i) => {
                    let x = &self.nodes[ins[0]].value;
                    let mut gx = vec![0.0; x.numel()];
                    gx[*i] = g.item();
                    acc!(ins[0], Tensor::vector(gx));
                }
                Op::SumSelect(ids) => {
                    let x = &self.nodes[ins[0]].value;
                    let mut gx = vec![0.0; x.numel()];
                    for &i in ids {
                        gx[i] += g.item();
                    }
                    acc!(ins[0], Tensor::vector(gx));
                }
                Op::Sum => {
                    let x = &self.nodes[ins[0]].value;
                    acc!(ins[0], Tensor::new(x.shape().to_vec(), vec![g.item(); x.numel()]).unwrap());
                }
                Op::Dropout(mask) => {
                    let t = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(mask).map(|(g, m)| g * m).collect(),
                    )
                    .unwrap();
                    acc!(ins[0], t);
                }
            }
        }
        Ok(())
    }

    pub fn grads(&self) -> &Gradients {
        &self.param_grads
    }

    pub fn take_grads(self) -> Gradients {
        self.param_grads
    }

    pub fn reset_grads(&mut self) {
        self.param_grads = Gradients::zeros(self.params.len());
    }
}
