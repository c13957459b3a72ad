use super::array::{Array, Real};
use super::params::{Gradients, ParamId, ParamSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Parameter handles of one LSTM cell.
///
/// Gate rows are laid out in four blocks of `hidden` rows each, in the order
/// input, forget, cell candidate, output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmCellParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

#[derive(Debug)]
enum Op<T> {
    Param(ParamId),
    Input,
    MatVec {
        w: NodeId,
        x: NodeId,
    },
    Affine {
        w: NodeId,
        x: NodeId,
        b: NodeId,
    },
    RowsLinear {
        m: NodeId,
        w: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    AddRows {
        m: NodeId,
        v: NodeId,
    },
    Tanh(NodeId),
    Sigmoid(NodeId),
    RowsDot {
        m: NodeId,
        v: NodeId,
    },
    Softmax(NodeId),
    WeightedRows {
        weights: NodeId,
        m: NodeId,
    },
    Concat(Vec<NodeId>),
    StackRows(Vec<NodeId>),
    Slice {
        x: NodeId,
        start: usize,
    },
    Embed {
        table: NodeId,
        row: usize,
    },
    Lstm {
        x: NodeId,
        h: NodeId,
        c: NodeId,
        w_ih: NodeId,
        w_hh: NodeId,
        b: NodeId,
        // i, f, g, o activations then tanh(c'), each `hidden` long
        saved: Vec<T>,
    },
    MulConst {
        x: NodeId,
        factors: Vec<T>,
    },
    Scale {
        x: NodeId,
        factor: T,
    },
    ScaleGrad {
        x: NodeId,
        factor: T,
    },
    Sum(Vec<NodeId>),
    MaskedLogSoftmax {
        logits: NodeId,
        target: usize,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    shape: Vec<usize>,
    len: usize,
    value: Vec<T>,
    needs_grad: bool,
}

/// Record of one forward pass.
///
/// Parameters are borrowed, never copied: a parameter node's value is read
/// straight from the [`ParamSet`]. A tape is single-threaded and single-use;
/// independent tapes over the same parameters may run concurrently.
pub struct Tape<'p, T: Real> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        match self.nodes[id.0].op {
            Op::Param(p) => self.params.get(p).data(),
            _ => &self.nodes[id.0].value,
        }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, id: NodeId) -> T {
        self.value(id)[0]
    }

    fn rows_cols(&self, id: NodeId) -> (usize, usize) {
        let s = &self.nodes[id.0].shape;
        match s.len() {
            2 => (s[0], s[1]),
            1 => (1, s[0]),
            _ => (1, 1),
        }
    }

    fn push(&mut self, op: Op<T>, shape: Vec<usize>, value: Vec<T>, needs_grad: bool) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let len = value.len();
        self.nodes.push(Node {
            op,
            shape,
            len,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn grad_of(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].needs_grad)
    }

    /// Leaf node for a parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        let shape = self.params.get(id).shape().to_vec();
        let len = self.params.get(id).len();
        self.nodes.push(Node {
            op: Op::Param(id),
            shape,
            len,
            value: Vec::new(),
            needs_grad: true,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(n);
        n
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, value: Array<T>) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Input, shape, value.into_data(), false)
    }

    pub fn vector(&mut self, data: Vec<T>) -> NodeId {
        self.input(Array::vector(data))
    }

    /// `W x` for `W` of shape `[r, c]` and `x` of extent `c`.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.rows_cols(w);
        if self.nodes[w.0].shape.len() != 2 || self.nodes[x.0].len != c {
            return Err(Error::shape(
                "matvec",
                format!(
                    "matrix {:?} cannot multiply vector of extent {}",
                    self.nodes[w.0].shape, self.nodes[x.0].len
                ),
            ));
        }
        let out = matvec_raw(self.value(w), self.value(x), r, c);
        let g = self.grad_of(&[w, x]);
        Ok(self.push(Op::MatVec { w, x }, vec![r], out, g))
    }

    /// `W x + b`.
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.rows_cols(w);
        if self.nodes[w.0].shape.len() != 2 || self.nodes[x.0].len != c {
            return Err(Error::shape(
                "affine",
                format!(
                    "matrix {:?} cannot multiply vector of extent {}",
                    self.nodes[w.0].shape, self.nodes[x.0].len
                ),
            ));
        }
        if self.nodes[b.0].len != r {
            return Err(Error::shape(
                "affine",
                format!("bias extent {} != output rows {}", self.nodes[b.0].len, r),
            ));
        }
        let mut out = matvec_raw(self.value(w), self.value(x), r, c);
        for (o, &bb) in out.iter_mut().zip(self.value(b)) {
            *o = *o + bb;
        }
        let g = self.grad_of(&[w, x, b]);
        Ok(self.push(Op::Affine { w, x, b }, vec![r], out, g))
    }

    /// Applies `W` (shape `[r, c]`) to every row of `m` (shape `[n, c]`),
    /// giving `[n, r]`.
    pub fn rows_linear(&mut self, m: NodeId, w: NodeId) -> Result<NodeId> {
        let (n, c) = self.rows_cols(m);
        let (r, wc) = self.rows_cols(w);
        if self.nodes[w.0].shape.len() != 2 || wc != c {
            return Err(Error::shape(
                "rows_linear",
                format!(
                    "matrix {:?} cannot project rows of {:?}",
                    self.nodes[w.0].shape, self.nodes[m.0].shape
                ),
            ));
        }
        let mv = self.value(m);
        let wv = self.value(w);
        let mut out = Vec::with_capacity(n * r);
        for i in 0..n {
            out.extend(matvec_raw(wv, &mv[i * c..(i + 1) * c], r, c));
        }
        let g = self.grad_of(&[m, w]);
        Ok(self.push(Op::RowsLinear { m, w }, vec![n, r], out, g))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.nodes[a.0].shape, self.nodes[b.0].shape),
            ));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let g = self.grad_of(&[a, b]);
        Ok(self.push(Op::Add { a, b }, shape, out, g))
    }

    /// Adds vector `v` to every row of `m`.
    pub fn add_rows(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (n, c) = self.rows_cols(m);
        if self.nodes[v.0].len != c {
            return Err(Error::shape(
                "add_rows",
                format!("row extent {} vs vector extent {}", c, self.nodes[v.0].len),
            ));
        }
        let mv = self.value(m);
        let vv = self.value(v);
        let mut out = Vec::with_capacity(n * c);
        for i in 0..n {
            out.extend(mv[i * c..(i + 1) * c].iter().zip(vv).map(|(&x, &y)| x + y));
        }
        let shape = self.nodes[m.0].shape.clone();
        let g = self.grad_of(&[m, v]);
        Ok(self.push(Op::AddRows { m, v }, shape, out, g))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        let shape = self.nodes[x.0].shape.clone();
        let g = self.grad_of(&[x]);
        self.push(Op::Tanh(x), shape, out, g)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.nodes[x.0].shape.clone();
        let g = self.grad_of(&[x]);
        self.push(Op::Sigmoid(x), shape, out, g)
    }

    /// Dot product of every row of `m` with `v`, giving one value per row.
    pub fn rows_dot(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (n, c) = self.rows_cols(m);
        if self.nodes[v.0].len != c {
            return Err(Error::shape(
                "rows_dot",
                format!("row extent {} vs vector extent {}", c, self.nodes[v.0].len),
            ));
        }
        let mv = self.value(m);
        let vv = self.value(v);
        let out = (0..n).map(|i| dot(&mv[i * c..(i + 1) * c], vv)).collect();
        let g = self.grad_of(&[m, v]);
        Ok(self.push(Op::RowsDot { m, v }, vec![n], out, g))
    }

    /// Softmax over finite logits.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let out = super::array::softmax(self.value(x))?;
        let shape = self.nodes[x.0].shape.clone();
        let g = self.grad_of(&[x]);
        Ok(self.push(Op::Softmax(x), shape, out, g))
    }

    /// `Σ_i weights[i] · m[i, :]`
    pub fn weighted_rows(&mut self, weights: NodeId, m: NodeId) -> Result<NodeId> {
        let (n, c) = self.rows_cols(m);
        if self.nodes[weights.0].len != n {
            return Err(Error::shape(
                "weighted_rows",
                format!("{} weights for {} rows", self.nodes[weights.0].len, n),
            ));
        }
        let wv = self.value(weights);
        let mv = self.value(m);
        let mut out = vec![T::zero(); c];
        for (i, &w) in wv.iter().enumerate() {
            for (o, &x) in out.iter_mut().zip(&mv[i * c..(i + 1) * c]) {
                *o = *o + w * x;
            }
        }
        let g = self.grad_of(&[weights, m]);
        Ok(self.push(Op::WeightedRows { weights, m }, vec![c], out, g))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let n = out.len();
        let g = self.grad_of(parts);
        self.push(Op::Concat(parts.to_vec()), vec![n], out, g)
    }

    /// Stacks equally sized vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        let first = rows
            .first()
            .ok_or_else(|| Error::shape("stack_rows", "no rows"))?;
        let c = self.nodes[first.0].len;
        let mut out = Vec::with_capacity(c * rows.len());
        for &r in rows {
            if self.nodes[r.0].len != c {
                return Err(Error::shape(
                    "stack_rows",
                    format!("row extents {} and {}", c, self.nodes[r.0].len),
                ));
            }
            out.extend_from_slice(self.value(r));
        }
        let g = self.grad_of(rows);
        Ok(self.push(Op::StackRows(rows.to_vec()), vec![rows.len(), c], out, g))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        if start + len > self.nodes[x.0].len {
            return Err(Error::shape(
                "slice",
                format!(
                    "[{start}, {}) out of extent {}",
                    start + len,
                    self.nodes[x.0].len
                ),
            ));
        }
        let out = self.value(x)[start..start + len].to_vec();
        let g = self.grad_of(&[x]);
        Ok(self.push(Op::Slice { x, start }, vec![len], out, g))
    }

    /// Row `row` of an embedding table.
    pub fn embed(&mut self, table: NodeId, row: usize) -> Result<NodeId> {
        let (n, c) = self.rows_cols(table);
        if row >= n {
            return Err(Error::InvalidArgument(format!(
                "embedding row {row} out of range for table of {n} rows"
            )));
        }
        let out = self.value(table)[row * c..(row + 1) * c].to_vec();
        let g = self.grad_of(&[table]);
        Ok(self.push(Op::Embed { table, row }, vec![c], out, g))
    }

    /// One LSTM step. Returns `(h, c)`.
    pub fn lstm_cell(
        &mut self,
        x: NodeId,
        h: NodeId,
        c: NodeId,
        p: LstmCellParams,
    ) -> Result<(NodeId, NodeId)> {
        let w_ih = self.param(p.w_ih);
        let w_hh = self.param(p.w_hh);
        let b = self.param(p.bias);
        self.lstm_cell_nodes(x, h, c, w_ih, w_hh, b)
    }

    pub(crate) fn lstm_cell_nodes(
        &mut self,
        x: NodeId,
        h: NodeId,
        c: NodeId,
        w_ih: NodeId,
        w_hh: NodeId,
        b: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let (rows, d) = self.rows_cols(w_ih);
        let (rows_h, k) = self.rows_cols(w_hh);
        let dims_ok = rows % 4 == 0
            && rows == 4 * k
            && rows_h == rows
            && self.nodes[w_ih.0].shape.len() == 2
            && self.nodes[w_hh.0].shape.len() == 2;
        if !dims_ok {
            return Err(Error::shape(
                "lstm_cell",
                format!(
                    "input-to-gates {:?} and hidden-to-gates {:?} must be [4k, d] and [4k, k]",
                    self.nodes[w_ih.0].shape, self.nodes[w_hh.0].shape
                ),
            ));
        }
        if self.nodes[b.0].len != rows {
            return Err(Error::shape(
                "lstm_cell",
                format!("gate bias extent {} != 4k = {}", self.nodes[b.0].len, rows),
            ));
        }
        if self.nodes[x.0].len != d {
            return Err(Error::shape(
                "lstm_cell",
                format!("input extent {} != d = {}", self.nodes[x.0].len, d),
            ));
        }
        if self.nodes[h.0].len != k {
            return Err(Error::shape(
                "lstm_cell",
                format!("h_prev extent {} != k = {}", self.nodes[h.0].len, k),
            ));
        }
        if self.nodes[c.0].len != k {
            return Err(Error::shape(
                "lstm_cell",
                format!("c_prev extent {} != k = {}", self.nodes[c.0].len, k),
            ));
        }
        let mut z = matvec_raw(self.value(w_ih), self.value(x), rows, d);
        let zh = matvec_raw(self.value(w_hh), self.value(h), rows, k);
        for ((zi, &a), &bb) in z.iter_mut().zip(&zh).zip(self.value(b)) {
            *zi = *zi + a + bb;
        }
        let c_prev = self.value(c);
        let mut saved = vec![T::zero(); 5 * k];
        let mut out = vec![T::zero(); 2 * k];
        for j in 0..k {
            let ig = sigmoid(z[j]);
            let fg = sigmoid(z[k + j]);
            let gg = z[2 * k + j].tanh();
            let og = sigmoid(z[3 * k + j]);
            let cn = fg * c_prev[j] + ig * gg;
            let tc = cn.tanh();
            saved[j] = ig;
            saved[k + j] = fg;
            saved[2 * k + j] = gg;
            saved[3 * k + j] = og;
            saved[4 * k + j] = tc;
            out[j] = og * tc;
            out[k + j] = cn;
        }
        let g = self.grad_of(&[x, h, c, w_ih, w_hh, b]);
        let node = self.push(
            Op::Lstm {
                x,
                h,
                c,
                w_ih,
                w_hh,
                b,
                saved,
            },
            vec![2 * k],
            out,
            g,
        );
        let h_out = self.slice(node, 0, k)?;
        let c_out = self.slice(node, k, k)?;
        Ok((h_out, c_out))
    }

    /// Elementwise product with a constant vector (dropout masks).
    pub fn mul_const(&mut self, x: NodeId, factors: Vec<T>) -> Result<NodeId> {
        if factors.len() != self.nodes[x.0].len {
            return Err(Error::shape(
                "mul_const",
                format!(
                    "{} factors for extent {}",
                    factors.len(),
                    self.nodes[x.0].len
                ),
            ));
        }
        let out = self
            .value(x)
            .iter()
            .zip(&factors)
            .map(|(&a, &f)| a * f)
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        let g = self.grad_of(&[x]);
        Ok(self.push(Op::MulConst { x, factors }, shape, out, g))
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> NodeId {
        let out = self.value(x).iter().map(|&a| a * factor).collect();
        let shape = self.nodes[x.0].shape.clone();
        let g = self.grad_of(&[x]);
        self.push(Op::Scale { x, factor }, shape, out, g)
    }

    /// Identity in the forward pass; multiplies the incoming gradient by
    /// `factor` in the backward pass.
    pub fn scale_grad(&mut self, x: NodeId, factor: T) -> NodeId {
        let out = self.value(x).to_vec();
        let shape = self.nodes[x.0].shape.clone();
        let g = self.grad_of(&[x]) && factor != T::zero();
        self.push(Op::ScaleGrad { x, factor }, shape, out, g)
    }

    /// Copies the value of `x` into a constant leaf.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).to_vec();
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::Input, shape, out, false)
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn sum(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("sum", "no operands"))?;
        let shape = self.nodes[first.0].shape.clone();
        let mut out = vec![T::zero(); self.nodes[first.0].len];
        for &p in parts {
            if self.nodes[p.0].len != out.len() {
                return Err(Error::shape(
                    "sum",
                    format!("{:?} vs {:?}", shape, self.nodes[p.0].shape),
                ));
            }
            for (o, &v) in out.iter_mut().zip(self.value(p)) {
                *o = *o + v;
            }
        }
        let g = self.grad_of(parts);
        Ok(self.push(Op::Sum(parts.to_vec()), shape, out, g))
    }

    /// `log softmax(logits + I)[target]` where `I` is `-inf` wherever
    /// `admissible` is false.
    pub fn masked_log_softmax(
        &mut self,
        logits: NodeId,
        admissible: &[bool],
        target: usize,
    ) -> Result<NodeId> {
        let n = self.nodes[logits.0].len;
        if admissible.len() != n {
            return Err(Error::shape(
                "masked_log_softmax",
                format!("mask extent {} vs logits extent {}", admissible.len(), n),
            ));
        }
        if target >= n {
            return Err(Error::InvalidArgument(format!(
                "target {target} out of range for {n} logits"
            )));
        }
        if !admissible[target] {
            return Err(Error::NoAdmissible(format!(
                "target symbol {target} is masked at its own step"
            )));
        }
        let masked: Vec<T> = self
            .value(logits)
            .iter()
            .zip(admissible)
            .map(|(&v, &ok)| if ok { v } else { T::neg_infinity() })
            .collect();
        let probs = super::array::softmax(&masked)?;
        let max = masked
            .iter()
            .copied()
            .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
        let lse = max + masked.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let out = masked[target] - lse;
        let g = self.grad_of(&[logits]);
        Ok(self.push(
            Op::MaskedLogSoftmax {
                logits,
                target,
                probs,
            },
            vec![],
            vec![out],
            g,
        ))
    }

    /// Reverse sweep from `output` seeded with `seed` (the upstream gradient
    /// of some scalar with respect to `output`). Every node is visited once,
    /// in reverse recording order.
    pub fn backward(&self, output: NodeId, seed: &[T]) -> Result<TapeGrads<T>> {
        let out_len = self.nodes[output.0].len;
        if seed.len() != out_len {
            return Err(Error::shape(
                "backward",
                format!("seed extent {} vs output extent {}", seed.len(), out_len),
            ));
        }
        let mut grads: Vec<Vec<T>> = vec![Vec::new(); self.nodes.len()];
        grads[output.0] = seed.to_vec();

        for i in (0..=output.0).rev() {
            if grads[i].is_empty() || !self.nodes[i].needs_grad {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            let g = &upper[0];
            self.backward_node(i, g, lower);
        }
        Ok(TapeGrads { grads })
    }

    /// Backward from a scalar node with unit seed.
    pub fn backward_scalar(&self, output: NodeId) -> Result<TapeGrads<T>> {
        self.backward(output, &[T::one()])
    }

    fn slot<'g>(&self, lower: &'g mut [Vec<T>], id: NodeId) -> Option<&'g mut [T]> {
        let node = &self.nodes[id.0];
        if !node.needs_grad {
            return None;
        }
        let v = &mut lower[id.0];
        if v.is_empty() {
            v.resize(node.len, T::zero());
        }
        Some(v.as_mut_slice())
    }

    fn backward_node(&self, i: usize, g: &[T], lower: &mut [Vec<T>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Param(_) | Op::Input => {}
            Op::MatVec { w, x } => {
                let (r, c) = self.rows_cols(*w);
                let wv = self.value(*w);
                let xv = self.value(*x);
                if let Some(dw) = self.slot(lower, *w) {
                    outer_acc(dw, g, xv, r, c);
                }
                if let Some(dx) = self.slot(lower, *x) {
                    matvec_t_acc(dx, wv, g, r, c);
                }
            }
            Op::Affine { w, x, b } => {
                let (r, c) = self.rows_cols(*w);
                let wv = self.value(*w);
                let xv = self.value(*x);
                if let Some(dw) = self.slot(lower, *w) {
                    outer_acc(dw, g, xv, r, c);
                }
                if let Some(dx) = self.slot(lower, *x) {
                    matvec_t_acc(dx, wv, g, r, c);
                }
                if let Some(db) = self.slot(lower, *b) {
                    add_acc(db, g);
                }
            }
            Op::RowsLinear { m, w } => {
                let (n, c) = self.rows_cols(*m);
                let (r, _) = self.rows_cols(*w);
                let mv = self.value(*m);
                let wv = self.value(*w);
                if let Some(dm) = self.slot(lower, *m) {
                    for row in 0..n {
                        matvec_t_acc(
                            &mut dm[row * c..(row + 1) * c],
                            wv,
                            &g[row * r..(row + 1) * r],
                            r,
                            c,
                        );
                    }
                }
                if let Some(dw) = self.slot(lower, *w) {
                    for row in 0..n {
                        outer_acc(
                            dw,
                            &g[row * r..(row + 1) * r],
                            &mv[row * c..(row + 1) * c],
                            r,
                            c,
                        );
                    }
                }
            }
            Op::Add { a, b } => {
                if let Some(da) = self.slot(lower, *a) {
                    add_acc(da, g);
                }
                if let Some(db) = self.slot(lower, *b) {
                    add_acc(db, g);
                }
            }
            Op::AddRows { m, v } => {
                let (n, c) = self.rows_cols(*m);
                if let Some(dm) = self.slot(lower, *m) {
                    add_acc(dm, g);
                }
                if let Some(dv) = self.slot(lower, *v) {
                    for row in 0..n {
                        add_acc(dv, &g[row * c..(row + 1) * c]);
                    }
                }
            }
            Op::Tanh(x) => {
                let y = &node.value;
                if let Some(dx) = self.slot(lower, *x) {
                    for ((d, &gy), &yy) in dx.iter_mut().zip(g).zip(y) {
                        *d = *d + gy * (T::one() - yy * yy);
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                if let Some(dx) = self.slot(lower, *x) {
                    for ((d, &gy), &yy) in dx.iter_mut().zip(g).zip(y) {
                        *d = *d + gy * yy * (T::one() - yy);
                    }
                }
            }
            Op::RowsDot { m, v } => {
                let (n, c) = self.rows_cols(*m);
                let mv = self.value(*m);
                let vv = self.value(*v);
                if let Some(dm) = self.slot(lower, *m) {
                    for row in 0..n {
                        for (d, &x) in dm[row * c..(row + 1) * c].iter_mut().zip(vv) {
                            *d = *d + g[row] * x;
                        }
                    }
                }
                if let Some(dv) = self.slot(lower, *v) {
                    for row in 0..n {
                        for (d, &x) in dv.iter_mut().zip(&mv[row * c..(row + 1) * c]) {
                            *d = *d + g[row] * x;
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let p = &node.value;
                let inner: T = g.iter().zip(p).map(|(&a, &b)| a * b).sum();
                if let Some(dx) = self.slot(lower, *x) {
                    for ((d, &gy), &pp) in dx.iter_mut().zip(g).zip(p) {
                        *d = *d + pp * (gy - inner);
                    }
                }
            }
            Op::WeightedRows { weights, m } => {
                let (n, c) = self.rows_cols(*m);
                let wv = self.value(*weights);
                let mv = self.value(*m);
                if let Some(dw) = self.slot(lower, *weights) {
                    for row in 0..n {
                        dw[row] = dw[row] + dot(&mv[row * c..(row + 1) * c], g);
                    }
                }
                if let Some(dm) = self.slot(lower, *m) {
                    for row in 0..n {
                        for (d, &gy) in dm[row * c..(row + 1) * c].iter_mut().zip(g) {
                            *d = *d + wv[row] * gy;
                        }
                    }
                }
            }
            Op::Concat(parts) | Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].len;
                    if let Some(dp) = self.slot(lower, p) {
                        add_acc(dp, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::Slice { x, start } => {
                if let Some(dx) = self.slot(lower, *x) {
                    add_acc(&mut dx[*start..*start + g.len()], g);
                }
            }
            Op::Embed { table, row } => {
                let c = g.len();
                if let Some(dt) = self.slot(lower, *table) {
                    add_acc(&mut dt[row * c..(row + 1) * c], g);
                }
            }
            Op::Lstm {
                x,
                h,
                c,
                w_ih,
                w_hh,
                b,
                saved,
            } => {
                let k = node.len / 2;
                let (dh_out, dc_out) = g.split_at(k);
                let c_prev = self.value(*c);
                let mut dz = vec![T::zero(); 4 * k];
                let mut dc_prev = vec![T::zero(); k];
                for j in 0..k {
                    let ig = saved[j];
                    let fg = saved[k + j];
                    let gg = saved[2 * k + j];
                    let og = saved[3 * k + j];
                    let tc = saved[4 * k + j];
                    let d_o = dh_out[j] * tc;
                    let dct = dc_out[j] + dh_out[j] * og * (T::one() - tc * tc);
                    let d_i = dct * gg;
                    let d_g = dct * ig;
                    let d_f = dct * c_prev[j];
                    dc_prev[j] = dct * fg;
                    dz[j] = d_i * ig * (T::one() - ig);
                    dz[k + j] = d_f * fg * (T::one() - fg);
                    dz[2 * k + j] = d_g * (T::one() - gg * gg);
                    dz[3 * k + j] = d_o * og * (T::one() - og);
                }
                let rows = 4 * k;
                let d = self.nodes[x.0].len;
                let xv = self.value(*x);
                let hv = self.value(*h);
                if let Some(dw) = self.slot(lower, *w_ih) {
                    outer_acc(dw, &dz, xv, rows, d);
                }
                if let Some(dw) = self.slot(lower, *w_hh) {
                    outer_acc(dw, &dz, hv, rows, k);
                }
                if let Some(db) = self.slot(lower, *b) {
                    add_acc(db, &dz);
                }
                let wih = self.value(*w_ih);
                if let Some(dx) = self.slot(lower, *x) {
                    matvec_t_acc(dx, wih, &dz, rows, d);
                }
                let whh = self.value(*w_hh);
                if let Some(dh) = self.slot(lower, *h) {
                    matvec_t_acc(dh, whh, &dz, rows, k);
                }
                if let Some(dc) = self.slot(lower, *c) {
                    add_acc(dc, &dc_prev);
                }
            }
            Op::MulConst { x, factors } => {
                if let Some(dx) = self.slot(lower, *x) {
                    for ((d, &gy), &f) in dx.iter_mut().zip(g).zip(factors) {
                        *d = *d + gy * f;
                    }
                }
            }
            Op::Scale { x, factor } | Op::ScaleGrad { x, factor } => {
                if let Some(dx) = self.slot(lower, *x) {
                    for (d, &gy) in dx.iter_mut().zip(g) {
                        *d = *d + gy * *factor;
                    }
                }
            }
            Op::Sum(parts) => {
                for &p in parts {
                    if let Some(dp) = self.slot(lower, p) {
                        add_acc(dp, g);
                    }
                }
            }
            Op::MaskedLogSoftmax {
                logits,
                target,
                probs,
            } => {
                if let Some(dl) = self.slot(lower, *logits) {
                    for (j, (d, &p)) in dl.iter_mut().zip(probs).enumerate() {
                        let onehot = if j == *target { T::one() } else { T::zero() };
                        *d = *d + g[0] * (onehot - p);
                    }
                }
            }
        }
    }

    /// Gradients with respect to every parameter, zero where untouched.
    pub fn param_gradients(&self, grads: &TapeGrads<T>) -> Gradients<T> {
        let arrays = self
            .params
            .iter()
            .map(|(pid, _, a)| match self.param_nodes[pid.index()] {
                Some(n) if !grads.grads[n.0].is_empty() => {
                    Array::new(a.shape().to_vec(), grads.grads[n.0].clone())
                        .expect("gradient matches parameter shape")
                }
                _ => Array::zeros(a.shape()),
            })
            .collect();
        Gradients::from_arrays(arrays)
    }
}

/// Raw per-node adjoints from one backward sweep.
pub struct TapeGrads<T> {
    grads: Vec<Vec<T>>,
}

impl<T: Real> TapeGrads<T> {
    /// Adjoint of `node`, or `None` if no gradient reached it.
    pub fn wrt(&self, node: NodeId) -> Option<&[T]> {
        let g = &self.grads[node.0];
        if g.is_empty() {
            None
        } else {
            Some(g)
        }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s = s + x * y;
    }
    s
}

fn matvec_raw<T: Real>(w: &[T], x: &[T], r: usize, c: usize) -> Vec<T> {
    (0..r).map(|i| dot(&w[i * c..(i + 1) * c], x)).collect()
}

// dw[i, j] += g[i] * x[j]
fn outer_acc<T: Real>(dw: &mut [T], g: &[T], x: &[T], r: usize, c: usize) {
    for i in 0..r {
        let gi = g[i];
        if gi == T::zero() {
            continue;
        }
        for (d, &xj) in dw[i * c..(i + 1) * c].iter_mut().zip(x) {
            *d = *d + gi * xj;
        }
    }
}

// dx[j] += Σ_i w[i, j] * g[i]
fn matvec_t_acc<T: Real>(dx: &mut [T], w: &[T], g: &[T], r: usize, c: usize) {
    for i in 0..r {
        let gi = g[i];
        if gi == T::zero() {
            continue;
        }
        for (d, &wij) in dx.iter_mut().zip(&w[i * c..(i + 1) * c]) {
            *d = *d + wij * gi;
        }
    }
}

fn add_acc<T: Real>(d: &mut [T], g: &[T]) {
    for (a, &b) in d.iter_mut().zip(g) {
        *a = *a + b;
    }
}
