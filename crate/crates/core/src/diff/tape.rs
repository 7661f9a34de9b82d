use std::sync::Arc;

use crate::array::{matmul, matmul_nt, matmul_tn, Array};
use crate::diff::registry::{Kernel, PrimitiveHandle, Registry};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    /// Differentiated by `backward`.
    Param,
    /// Bound data, never differentiated.
    Input,
}

#[derive(Clone, Debug)]
struct VarInfo {
    name: String,
    kind: VarKind,
    node: NodeId,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Var(usize),
    Const(Array<T>),
    Unary(usize, NodeId),
    Binary(usize, NodeId, NodeId),
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Columns { src: NodeId, start: usize, len: usize },
    Concat(Vec<NodeId>),
    Sum(NodeId),
    Scale(NodeId, T),
    Offset(NodeId, T),
}

impl<T> Op<T> {
    fn label(&self) -> &'static str {
        match self {
            Op::Var(_) => "var",
            Op::Const(_) => "const",
            Op::Unary(..) => "unary",
            Op::Binary(..) => "binary",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Columns { .. } => "columns",
            Op::Concat(_) => "concat",
            Op::Sum(_) => "sum",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    requires_grad: bool,
}

/// How surrogate primitives behave in the backward sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurrogateMode {
    /// Use the registered (surrogate) derivative.
    Registered,
    /// Treat surrogate nodes as having zero derivative, i.e. their true derivative almost everywhere.
    Zero,
}

/// Values bound to tape variables for one forward pass.
#[derive(Debug, Default)]
pub struct Bindings<T> {
    items: Vec<(VarId, Array<T>)>,
}

impl<T> Bindings<T> {
    pub fn new() -> Self {
        Self { items: Vec::new() }
    }

    pub fn bind(&mut self, var: VarId, value: Array<T>) -> &mut Self {
        self.items.push((var, value));
        self
    }

    pub fn with(mut self, var: VarId, value: Array<T>) -> Self {
        self.items.push((var, value));
        self
    }
}

/// Gradients of a backward sweep, one slot per tape variable.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    names: Vec<String>,
    grads: Vec<Option<Array<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: VarId) -> Option<&Array<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: VarId) -> Option<Array<T>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }

    pub fn by_name(&self, name: &str) -> Option<&Array<T>> {
        self.names.iter().position(|n| n == name).and_then(|i| self.grads[i].as_ref())
    }
}

/// A recorded computation graph over dense arrays.
///
/// Nodes are appended in construction order, so the node list is a topological order.
/// `forward` binds variables and evaluates every node; `backward` runs one reverse sweep.
#[derive(Clone)]
pub struct Tape<T> {
    registry: Arc<Registry<T>>,
    nodes: Vec<Node<T>>,
    vars: Vec<VarInfo>,
    values: Vec<Option<Array<T>>>,
    evaluated: bool,
}

impl<T: Scalar> Tape<T> {
    pub fn new(registry: Arc<Registry<T>>) -> Self {
        Self { registry, nodes: Vec::new(), vars: Vec::new(), values: Vec::new(), evaluated: false }
    }

    pub fn registry(&self) -> &Registry<T> {
        &self.registry
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { op, requires_grad });
        self.values.push(None);
        self.evaluated = false;
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, n: NodeId) -> bool {
        self.nodes[n.0].requires_grad
    }

    fn var(&mut self, name: &str, kind: VarKind) -> (VarId, NodeId) {
        let id = self.vars.len();
        let node = self.push(Op::Var(id), kind == VarKind::Param);
        self.vars.push(VarInfo { name: name.to_string(), kind, node });
        (VarId(id), node)
    }

    pub fn param(&mut self, name: &str) -> (VarId, NodeId) {
        self.var(name, VarKind::Param)
    }

    pub fn input(&mut self, name: &str) -> (VarId, NodeId) {
        self.var(name, VarKind::Input)
    }

    pub fn constant(&mut self, value: Array<T>) -> NodeId {
        self.push(Op::Const(value), false)
    }

    pub fn var_node(&self, var: VarId) -> NodeId {
        self.vars[var.0].node
    }

    pub fn var_name(&self, var: VarId) -> &str {
        &self.vars[var.0].name
    }

    pub fn var_kind(&self, var: VarId) -> VarKind {
        self.vars[var.0].kind
    }

    pub fn params(&self) -> Vec<VarId> {
        (0..self.vars.len()).filter(|&i| self.vars[i].kind == VarKind::Param).map(VarId).collect()
    }

    pub fn unary(&mut self, prim: PrimitiveHandle, a: NodeId) -> Result<NodeId> {
        if prim.arity != 1 {
            return Err(Error::ArityMismatch { name: self.registry.get(prim).name.clone(), declared: 1, actual: prim.arity });
        }
        Ok(self.push(Op::Unary(prim.id, a), self.rg(a)))
    }

    /// Applies the named unary primitive.
    pub fn apply1(&mut self, name: &str, a: NodeId) -> Result<NodeId> {
        let h = self.registry.handle(name)?;
        self.unary(h, a)
    }

    pub fn binary(&mut self, prim: PrimitiveHandle, a: NodeId, b: NodeId) -> Result<NodeId> {
        if prim.arity != 2 {
            return Err(Error::ArityMismatch { name: self.registry.get(prim).name.clone(), declared: 2, actual: prim.arity });
        }
        Ok(self.push(Op::Binary(prim.id, a, b), self.rg(a) || self.rg(b)))
    }

    pub fn apply2(&mut self, name: &str, a: NodeId, b: NodeId) -> Result<NodeId> {
        let h = self.registry.handle(name)?;
        self.binary(h, a, b)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMul(a, b), rg)
    }

    /// `a[i, j] + row[j]`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let rg = self.rg(a) || self.rg(row);
        self.push(Op::AddRow(a, row), rg)
    }

    /// `a[i, j] * row[j]`.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let rg = self.rg(a) || self.rg(row);
        self.push(Op::MulRow(a, row), rg)
    }

    pub fn columns(&mut self, src: NodeId, start: usize, len: usize) -> NodeId {
        let rg = self.rg(src);
        self.push(Op::Columns { src, start, len }, rg)
    }

    pub fn concat(&mut self, parts: Vec<NodeId>) -> NodeId {
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Op::Concat(parts), rg)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let rg = self.rg(a);
        self.push(Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: NodeId, count: usize) -> NodeId {
        let s = self.sum(a);
        self.scale(s, T::one() / T::lit(count as f64))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let rg = self.rg(a);
        self.push(Op::Scale(a, c), rg)
    }

    pub fn offset(&mut self, a: NodeId, c: T) -> NodeId {
        let rg = self.rg(a);
        self.push(Op::Offset(a, c), rg)
    }

    /// Number of nodes that apply a surrogate-flagged primitive.
    pub fn surrogate_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Unary(p, _) | Op::Binary(p, _, _) if self.registry.by_id(p).surrogate))
            .count()
    }

    /// Binds every variable and evaluates the whole tape.
    pub fn forward(&mut self, bindings: Bindings<T>) -> Result<()> {
        let mut bound: Vec<Option<Array<T>>> = vec![None; self.vars.len()];
        for (var, value) in bindings.items {
            bound[var.0] = Some(value);
        }
        for (i, slot) in bound.into_iter().enumerate() {
            match slot {
                Some(v) => self.values[self.vars[i].node.0] = Some(v),
                None => return Err(Error::Unbound(self.vars[i].name.clone())),
            }
        }
        self.evaluate()
    }

    /// Replaces a single variable's value; call `evaluate` afterwards.
    pub fn rebind(&mut self, var: VarId, value: Array<T>) {
        let node = self.vars[var.0].node;
        self.values[node.0] = Some(value);
        self.evaluated = false;
    }

    pub fn evaluate(&mut self) -> Result<()> {
        self.evaluated = false;
        for i in 0..self.nodes.len() {
            let out = match &self.nodes[i].op {
                Op::Var(v) => {
                    let v = &self.vars[*v];
                    let val = self.values[i].as_ref().ok_or_else(|| Error::Unbound(v.name.clone()))?;
                    if !val.is_finite() {
                        return Err(Error::NonFinite(format!("variable `{}`", v.name)));
                    }
                    continue;
                }
                Op::Const(a) => a.clone(),
                op => self.eval_op(op)?,
            };
            if !out.is_finite() {
                let what = match &self.nodes[i].op {
                    Op::Unary(p, _) | Op::Binary(p, _, _) => format!("node {} (`{}`)", i, self.registry.by_id(*p).name),
                    op => format!("node {} ({})", i, op.label()),
                };
                return Err(Error::NonFinite(what));
            }
            self.values[i] = Some(out);
        }
        self.evaluated = true;
        Ok(())
    }

    fn val(&self, n: NodeId) -> &Array<T> {
        self.values[n.0].as_ref().expect("inputs precede their consumers")
    }

    fn eval_op(&self, op: &Op<T>) -> Result<Array<T>> {
        Ok(match op {
            Op::Var(_) | Op::Const(_) => unreachable!(),
            Op::Unary(p, a) => {
                let prim = self.registry.by_id(*p);
                match &prim.kernel {
                    Kernel::Unary { forward, .. } => self.val(*a).map(|x| forward(x)),
                    Kernel::Binary { .. } => unreachable!("arity checked at construction"),
                }
            }
            Op::Binary(p, a, b) => {
                let prim = self.registry.by_id(*p);
                match &prim.kernel {
                    Kernel::Binary { forward, .. } => self.val(*a).zip_map(self.val(*b), |x, y| forward(x, y))?,
                    Kernel::Unary { .. } => unreachable!("arity checked at construction"),
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if bv.shape().len() != 2 || av.shape().is_empty() || av.shape().len() > 2 {
                    return Err(Error::Shape(format!("matmul of {:?} and {:?}", av.shape(), bv.shape())));
                }
                let (n, k) = (av.rows(), av.cols());
                let (k2, m) = (bv.rows(), bv.cols());
                if k != k2 {
                    return Err(Error::Shape(format!("matmul of {:?} and {:?}", av.shape(), bv.shape())));
                }
                let data = matmul(av.data(), bv.data(), n, k, m);
                let shape = if av.shape().len() == 1 { vec![m] } else { vec![n, m] };
                Array::new(shape, data)?
            }
            Op::AddRow(a, r) | Op::MulRow(a, r) => {
                let (av, rv) = (self.val(*a), self.val(*r));
                let m = av.cols();
                if rv.len() != m || av.shape().is_empty() {
                    return Err(Error::Shape(format!("row broadcast of {:?} onto {:?}", rv.shape(), av.shape())));
                }
                let add = matches!(op, Op::AddRow(..));
                let mut out = av.clone();
                let row = rv.data();
                for chunk in out.data_mut().chunks_mut(m) {
                    for (o, &r) in chunk.iter_mut().zip(row) {
                        if add {
                            *o += r;
                        } else {
                            *o *= r;
                        }
                    }
                }
                out
            }
            Op::Columns { src, start, len } => {
                let sv = self.val(*src);
                if sv.shape().len() != 2 || start + len > sv.cols() {
                    return Err(Error::Shape(format!("columns {}..{} of {:?}", start, start + len, sv.shape())));
                }
                let (n, m) = (sv.rows(), sv.cols());
                let mut data = Vec::with_capacity(n * len);
                for i in 0..n {
                    data.extend_from_slice(&sv.data()[i * m + start..i * m + start + len]);
                }
                Array::new(vec![n, *len], data)?
            }
            Op::Concat(parts) => {
                let n = self.val(parts[0]).rows();
                let widths: Vec<usize> = parts.iter().map(|p| self.val(*p).cols()).collect();
                for p in parts {
                    let v = self.val(*p);
                    if v.shape().len() != 2 || v.rows() != n {
                        return Err(Error::Shape(format!("concat part {:?} with {} rows", v.shape(), n)));
                    }
                }
                let total: usize = widths.iter().sum();
                let mut data = Vec::with_capacity(n * total);
                for i in 0..n {
                    for (p, &w) in parts.iter().zip(&widths) {
                        data.extend_from_slice(&self.val(*p).data()[i * w..(i + 1) * w]);
                    }
                }
                Array::new(vec![n, total], data)?
            }
            Op::Sum(a) => Array::scalar(self.val(*a).sum()),
            Op::Scale(a, c) => self.val(*a).map(|x| x * *c),
            Op::Offset(a, c) => self.val(*a).map(|x| x + *c),
        })
    }

    pub fn value(&self, node: NodeId) -> Result<&Array<T>> {
        if !self.evaluated {
            return Err(Error::NotEvaluated);
        }
        Ok(self.val(node))
    }

    pub fn var_value(&self, var: VarId) -> Result<&Array<T>> {
        self.value(self.vars[var.0].node)
    }

    /// Gradient of `seed · value(output)` with respect to every parameter.
    pub fn backward(&self, output: NodeId, seed: &Array<T>) -> Result<Gradients<T>> {
        self.backward_many(&[(output, seed.clone())], SurrogateMode::Registered)
    }

    /// Gradient of `Σ_k seed_k · value(output_k)`; seeds act as constant coefficients.
    pub fn backward_many(&self, seeds: &[(NodeId, Array<T>)], mode: SurrogateMode) -> Result<Gradients<T>> {
        if !self.evaluated {
            return Err(Error::NotEvaluated);
        }
        let mut grads: Vec<Option<Array<T>>> = vec![None; self.nodes.len()];
        for (node, seed) in seeds {
            seed.expect_shape(self.val(*node).shape())?;
            accumulate(&mut grads[node.0], seed.clone());
        }
        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Var(_) = self.nodes[i].op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(&self.nodes[i].op, &g, &mut grads, mode)?;
        }
        let mut out = Vec::with_capacity(self.vars.len());
        for v in &self.vars {
            let g = if v.kind == VarKind::Param {
                Some(grads[v.node.0].take().unwrap_or_else(|| Array::zeros(self.val(v.node).shape().to_vec())))
            } else {
                None
            };
            out.push(g);
        }
        Ok(Gradients { names: self.vars.iter().map(|v| v.name.clone()).collect(), grads: out })
    }

    fn propagate(&self, op: &Op<T>, g: &Array<T>, grads: &mut [Option<Array<T>>], mode: SurrogateMode) -> Result<()> {
        match op {
            Op::Var(_) | Op::Const(_) => {}
            Op::Unary(p, a) => {
                let prim = self.registry.by_id(*p);
                if prim.surrogate && mode == SurrogateMode::Zero {
                    return Ok(());
                }
                if let Kernel::Unary { derivative, .. } = &prim.kernel {
                    let ga = g.zip_map(self.val(*a), |gv, x| gv * derivative(x))?;
                    accumulate(&mut grads[a.0], ga);
                }
            }
            Op::Binary(p, a, b) => {
                let prim = self.registry.by_id(*p);
                if prim.surrogate && mode == SurrogateMode::Zero {
                    return Ok(());
                }
                if let Kernel::Binary { derivative, .. } = &prim.kernel {
                    let (av, bv) = (self.val(*a), self.val(*b));
                    let (need_a, need_b) = (self.rg(*a), self.rg(*b));
                    let mut da = Vec::with_capacity(if need_a { g.len() } else { 0 });
                    let mut db = Vec::with_capacity(if need_b { g.len() } else { 0 });
                    for ((&gv, &x), &y) in g.data().iter().zip(av.data()).zip(bv.data()) {
                        let (dx, dy) = derivative(x, y);
                        if need_a {
                            da.push(gv * dx);
                        }
                        if need_b {
                            db.push(gv * dy);
                        }
                    }
                    if need_a {
                        accumulate(&mut grads[a.0], Array::new(av.shape().to_vec(), da)?);
                    }
                    if need_b {
                        accumulate(&mut grads[b.0], Array::new(bv.shape().to_vec(), db)?);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if self.rg(*a) {
                    let d = matmul_nt(g.data(), bv.data(), n, m, k);
                    accumulate(&mut grads[a.0], Array::new(av.shape().to_vec(), d)?);
                }
                if self.rg(*b) {
                    let d = matmul_tn(av.data(), g.data(), n, k, m);
                    accumulate(&mut grads[b.0], Array::new(bv.shape().to_vec(), d)?);
                }
            }
            Op::AddRow(a, r) => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.rg(*r) {
                    let rv = self.val(*r);
                    let d = column_sums(g.data(), rv.len());
                    accumulate(&mut grads[r.0], Array::new(rv.shape().to_vec(), d)?);
                }
            }
            Op::MulRow(a, r) => {
                let (av, rv) = (self.val(*a), self.val(*r));
                let m = rv.len();
                if self.rg(*a) {
                    let mut d = g.clone();
                    for chunk in d.data_mut().chunks_mut(m) {
                        for (x, &s) in chunk.iter_mut().zip(rv.data()) {
                            *x *= s;
                        }
                    }
                    accumulate(&mut grads[a.0], d);
                }
                if self.rg(*r) {
                    let prod: Vec<T> = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                    let d = column_sums(&prod, m);
                    accumulate(&mut grads[r.0], Array::new(rv.shape().to_vec(), d)?);
                }
            }
            Op::Columns { src, start, len } => {
                if self.rg(*src) {
                    let sv = self.val(*src);
                    let (n, m) = (sv.rows(), sv.cols());
                    let slot = grads[src.0].get_or_insert_with(|| Array::zeros(sv.shape().to_vec()));
                    let data = slot.data_mut();
                    for i in 0..n {
                        for j in 0..*len {
                            data[i * m + start + j] += g.data()[i * len + j];
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let n = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let pv = self.val(*p);
                    let w = pv.cols();
                    if self.rg(*p) {
                        let mut d = Vec::with_capacity(n * w);
                        for i in 0..n {
                            d.extend_from_slice(&g.data()[i * total + offset..i * total + offset + w]);
                        }
                        accumulate(&mut grads[p.0], Array::new(pv.shape().to_vec(), d)?);
                    }
                    offset += w;
                }
            }
            Op::Sum(a) => {
                let shape = self.val(*a).shape().to_vec();
                accumulate(&mut grads[a.0], Array::filled(shape, g.item()));
            }
            Op::Scale(a, c) => accumulate(&mut grads[a.0], g.map(|x| x * *c)),
            Op::Offset(a, _) => accumulate(&mut grads[a.0], g.clone()),
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Array<T>>, g: Array<T>) {
    match slot {
        Some(acc) => {
            for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

fn column_sums<T: Scalar>(data: &[T], m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m];
    for chunk in data.chunks(m) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}
