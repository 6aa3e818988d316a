//! Reverse-mode computation record.
//!
//! A [`Graph`] is built fresh for every unroll window. Values are 2-D (rank 1
//! tensors are single rows); parameters are borrowed from the model and never
//! copied. Constants created with [`Graph::constant`] receive no gradient,
//! which is how state carried in from a previous window is cut off.

use crate::error::{Error, Result};
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Constant,
    Input,
    Param(usize),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddColumn(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    SliceCols { src: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MaskRows { src: Var, keep: Vec<bool> },
    Gather { table: Var, ids: Vec<usize> },
    MaskedSoftmax(Var),
    WeightedSum { weights: Var, slots: Vec<Var> },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<T>,
        norm: T,
        probs: Vec<T>,
    },
    Sum(Var),
}

struct Node<T> {
    op: Op<T>,
    value: Option<Tensor<T>>,
    needs_grad: bool,
}

pub struct Graph<'p, T> {
    params: &'p [Tensor<T>],
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    params: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn of(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].as_deref()
    }

    pub fn param(&self, index: usize) -> Option<&[T]> {
        self.params[index].as_deref()
    }

    /// Per-parameter gradients, zero-filled for parameters the loss did not touch.
    pub fn into_param_grads(self, params: &[Tensor<T>]) -> Vec<Vec<T>> {
        self.params
            .into_iter()
            .zip(params)
            .map(|(g, p)| g.unwrap_or_else(|| vec![T::zero(); p.len()]))
            .collect()
    }
}

fn dims<T: Scalar>(t: &Tensor<T>) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
    slot.get_or_insert_with(|| vec![T::zero(); len])
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p [Tensor<T>]) -> Self {
        Graph {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].op {
            Op::Param(i) => &self.params[*i],
            _ => self.nodes[v.0].value.as_ref().expect("non-parameter nodes own a value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        dims(self.value(v))
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Constant, value, false)
    }

    /// A leaf that records its gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Input, value, true)
    }

    /// Node for parameter `index`; repeated calls return the same node.
    pub fn param(&mut self, index: usize) -> Var {
        if let Some(v) = self.param_vars[index] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(index),
            value: None,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[index] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        let (n2, p) = self.shape(b);
        if n != n2 {
            return Err(Error::shape("matmul", format!("{m}x{n} · {n2}x{p}")));
        }
        let mut out = vec![T::zero(); m * p];
        T::gemm(
            m,
            n,
            p,
            T::one(),
            self.value(a).values(),
            n as isize,
            1,
            self.value(b).values(),
            p as isize,
            1,
            T::zero(),
            &mut out,
            p as isize,
            1,
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::matrix(m, p, out)?, needs))
    }

    /// `a · wᵀ` for a weight stored as (out × in).
    pub fn matmul_bt(&mut self, a: Var, w: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        let (p, n2) = self.shape(w);
        if n != n2 {
            return Err(Error::shape("matmul_bt", format!("{m}x{n} · ({p}x{n2})ᵀ")));
        }
        let mut out = vec![T::zero(); m * p];
        T::gemm(
            m,
            n,
            p,
            T::one(),
            self.value(a).values(),
            n as isize,
            1,
            self.value(w).values(),
            1,
            n as isize,
            T::zero(),
            &mut out,
            p as isize,
            1,
        );
        let needs = self.needs(a) || self.needs(w);
        Ok(self.push(Op::MatMulBt(a, w), Tensor::matrix(m, p, out)?, needs))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.same_shape("add", a, b)?;
        let out = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(&x, &y)| x + y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), Tensor::matrix(m, n, out)?, needs))
    }

    /// Adds the row vector `v` (length = cols) to every row of `m`.
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (r, c) = self.shape(m);
        if self.value(v).len() != c {
            return Err(Error::shape(
                "add_row",
                format!("{r}x{c} + row of length {}", self.value(v).len()),
            ));
        }
        let mut out = self.value(m).values().to_vec();
        let vv = self.value(v).values();
        for row in out.chunks_mut(c.max(1)) {
            for (o, &x) in row.iter_mut().zip(vv) {
                *o = *o + x;
            }
        }
        let needs = self.needs(m) || self.needs(v);
        Ok(self.push(Op::AddRow(m, v), Tensor::matrix(r, c, out)?, needs))
    }

    /// Adds the column vector `v` (length = rows) to every column of `m`,
    /// i.e. `m + v·1ᵀ`.
    pub fn broadcast_add_column(&mut self, m: Var, v: Var) -> Result<Var> {
        let (r, c) = self.shape(m);
        if self.value(v).len() != r {
            return Err(Error::shape(
                "broadcast_add_column",
                format!("{r}x{c} + column of length {}", self.value(v).len()),
            ));
        }
        let mut out = self.value(m).values().to_vec();
        let vv = self.value(v).values();
        for (i, row) in out.chunks_mut(c.max(1)).enumerate() {
            for o in row.iter_mut() {
                *o = *o + vv[i];
            }
        }
        let needs = self.needs(m) || self.needs(v);
        Ok(self.push(Op::AddColumn(m, v), Tensor::matrix(r, c, out)?, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.same_shape("mul", a, b)?;
        let out = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(&x, &y)| x * y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), Tensor::matrix(m, n, out)?, needs))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).values().iter().map(|x| x.tanh()).collect();
        let needs = self.needs(a);
        self.push(Op::Tanh(a), Tensor::matrix(m, n, out).expect("same size"), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).values().iter().map(|&x| sigmoid(x)).collect();
        let needs = self.needs(a);
        self.push(Op::Sigmoid(a), Tensor::matrix(m, n, out).expect("same size"), needs)
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.shape(src);
        if start + len > n {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{} of a {m}x{n} matrix", start + len),
            ));
        }
        let sv = self.value(src).values();
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&sv[r * n + start..r * n + start + len]);
        }
        let needs = self.needs(src);
        Ok(self.push(Op::SliceCols { src, start }, Tensor::matrix(m, len, out)?, needs))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(Error::shape("concat_cols", format!("row counts {rows} vs {r}")));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::ConcatCols(parts.to_vec()), Tensor::matrix(rows, total, out)?, needs))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.shape(p).1)
            .ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.shape(p);
            if c != cols {
                return Err(Error::shape("concat_rows", format!("column counts {cols} vs {c}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p).values());
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::ConcatRows(parts.to_vec()), Tensor::matrix(rows, cols, out)?, needs))
    }

    /// Zeroes every row whose `keep` flag is false.
    pub fn mask_rows(&mut self, src: Var, keep: &[bool]) -> Result<Var> {
        let (m, n) = self.shape(src);
        if keep.len() != m {
            return Err(Error::shape("mask_rows", format!("{m} rows, {} flags", keep.len())));
        }
        let mut out = self.value(src).values().to_vec();
        for (r, &k) in keep.iter().enumerate() {
            if !k {
                out[r * n..(r + 1) * n].iter_mut().for_each(|x| *x = T::zero());
            }
        }
        let needs = self.needs(src);
        Ok(self.push(
            Op::MaskRows {
                src,
                keep: keep.to_vec(),
            },
            Tensor::matrix(m, n, out)?,
            needs,
        ))
    }

    /// Row lookup: output row i is `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = self.shape(table);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::InvalidArgument(format!(
                    "token id {id} out of range for a table of {rows} rows"
                )));
            }
            out.extend_from_slice(self.value(table).row(id));
        }
        let needs = self.needs(table);
        Ok(self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            Tensor::matrix(ids.len(), cols, out)?,
            needs,
        ))
    }

    /// Row-wise softmax where `mask[r*cols + c] == false` marks an excluded
    /// entry. Excluded entries get exactly zero; a row with no valid entry is
    /// all zeros.
    pub fn masked_softmax_rows(&mut self, src: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.shape(src);
        if mask.len() != m * n {
            return Err(Error::shape(
                "masked_softmax_rows",
                format!("{m}x{n} input, {} mask flags", mask.len()),
            ));
        }
        let sv = self.value(src).values();
        let mut out = vec![T::zero(); m * n];
        for r in 0..m {
            let row = &sv[r * n..(r + 1) * n];
            let keep = &mask[r * n..(r + 1) * n];
            softmax_masked_into(row, keep, &mut out[r * n..(r + 1) * n]);
        }
        let needs = self.needs(src);
        Ok(self.push(Op::MaskedSoftmax(src), Tensor::matrix(m, n, out)?, needs))
    }

    /// `out[b] = Σ_j weights[b, j] · slots[j][b]`.
    pub fn weighted_sum(&mut self, weights: Var, slots: &[Var]) -> Result<Var> {
        let (b, l) = self.shape(weights);
        if l != slots.len() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{l} weight columns for {} slots", slots.len()),
            ));
        }
        let d = match slots.first() {
            Some(&s) => self.shape(s).1,
            None => return Err(Error::shape("weighted_sum", "no slots")),
        };
        for &s in slots {
            if self.shape(s) != (b, d) {
                return Err(Error::shape(
                    "weighted_sum",
                    format!("slot {:?} vs expected {:?}", self.shape(s), (b, d)),
                ));
            }
        }
        let mut out = vec![T::zero(); b * d];
        let wv = self.value(weights).values();
        for (j, &s) in slots.iter().enumerate() {
            let sv = self.value(s).values();
            for r in 0..b {
                let a = wv[r * l + j];
                if a == T::zero() {
                    continue;
                }
                for c in 0..d {
                    out[r * d + c] = out[r * d + c] + a * sv[r * d + c];
                }
            }
        }
        let needs = self.needs(weights) || slots.iter().any(|&s| self.needs(s));
        Ok(self.push(
            Op::WeightedSum {
                weights,
                slots: slots.to_vec(),
            },
            Tensor::matrix(b, d, out)?,
            needs,
        ))
    }

    /// `Σ_i weights[i] · (−log softmax(logits_i)[targets[i]]) / norm` as a 1×1 node.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[T],
        norm: T,
    ) -> Result<Var> {
        let (m, v) = self.shape(logits);
        if targets.len() != m || weights.len() != m {
            return Err(Error::shape(
                "cross_entropy",
                format!("{m} rows, {} targets, {} weights", targets.len(), weights.len()),
            ));
        }
        let lv = self.value(logits).values();
        let mut probs = vec![T::zero(); m * v];
        let mut total = T::zero();
        for r in 0..m {
            let t = targets[r];
            if t >= v {
                return Err(Error::InvalidArgument(format!(
                    "target {t} out of range for {v} classes"
                )));
            }
            let row = &lv[r * v..(r + 1) * v];
            let lse = log_sum_exp(row);
            for (p, &z) in probs[r * v..(r + 1) * v].iter_mut().zip(row) {
                *p = (z - lse).exp();
            }
            total = total + weights[r] * (lse - row[t]);
        }
        let needs = self.needs(logits);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                norm,
                probs,
            },
            Tensor::matrix(1, 1, vec![total / norm])?,
            needs,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).values().iter().copied().sum();
        let needs = self.needs(a);
        self.push(Op::Sum(a), Tensor::vector(vec![s]), needs)
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v).values()[0]
    }

    /// Back-propagates from the scalar node `root`.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        let mut params: Vec<Option<Vec<T>>> = (0..self.params.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one(); self.value(root).len()]);

        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(dout) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &dout, &mut grads);
            if let Op::Param(p) = self.nodes[i].op {
                params[p] = Some(dout.clone());
            }
            grads[i] = Some(dout);
        }
        Gradients {
            nodes: grads,
            params,
        }
    }

    fn backprop_node(&self, i: usize, dout: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = self.nodes[i].value.as_ref();
        match &self.nodes[i].op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, n) = self.shape(*a);
                let p = self.shape(*b).1;
                if self.needs(*a) {
                    let ga = accumulate(&mut grads[a.0], m * n);
                    // dA += dC · Bᵀ
                    T::gemm(
                        m,
                        p,
                        n,
                        T::one(),
                        dout,
                        p as isize,
                        1,
                        self.value(*b).values(),
                        1,
                        p as isize,
                        T::one(),
                        ga,
                        n as isize,
                        1,
                    );
                }
                if self.needs(*b) {
                    let gb = accumulate(&mut grads[b.0], n * p);
                    // dB += Aᵀ · dC
                    T::gemm(
                        n,
                        m,
                        p,
                        T::one(),
                        self.value(*a).values(),
                        1,
                        n as isize,
                        dout,
                        p as isize,
                        1,
                        T::one(),
                        gb,
                        p as isize,
                        1,
                    );
                }
            }
            Op::MatMulBt(a, w) => {
                let (m, n) = self.shape(*a);
                let p = self.shape(*w).0;
                if self.needs(*a) {
                    let ga = accumulate(&mut grads[a.0], m * n);
                    // dA += dC · W
                    T::gemm(
                        m,
                        p,
                        n,
                        T::one(),
                        dout,
                        p as isize,
                        1,
                        self.value(*w).values(),
                        n as isize,
                        1,
                        T::one(),
                        ga,
                        n as isize,
                        1,
                    );
                }
                if self.needs(*w) {
                    let gw = accumulate(&mut grads[w.0], p * n);
                    // dW += dCᵀ · A
                    T::gemm(
                        p,
                        m,
                        n,
                        T::one(),
                        dout,
                        1,
                        p as isize,
                        self.value(*a).values(),
                        n as isize,
                        1,
                        T::one(),
                        gw,
                        n as isize,
                        1,
                    );
                }
            }
            Op::Add(a, b) => {
                for x in [a, b] {
                    if self.needs(*x) {
                        let g = accumulate(&mut grads[x.0], dout.len());
                        g.iter_mut().zip(dout).for_each(|(g, &d)| *g = *g + d);
                    }
                }
            }
            Op::AddRow(m, v) => {
                let (_, c) = self.shape(*m);
                if self.needs(*m) {
                    let g = accumulate(&mut grads[m.0], dout.len());
                    g.iter_mut().zip(dout).for_each(|(g, &d)| *g = *g + d);
                }
                if self.needs(*v) {
                    let g = accumulate(&mut grads[v.0], c);
                    for row in dout.chunks(c.max(1)) {
                        g.iter_mut().zip(row).for_each(|(g, &d)| *g = *g + d);
                    }
                }
            }
            Op::AddColumn(m, v) => {
                let (r, c) = self.shape(*m);
                if self.needs(*m) {
                    let g = accumulate(&mut grads[m.0], dout.len());
                    g.iter_mut().zip(dout).for_each(|(g, &d)| *g = *g + d);
                }
                if self.needs(*v) {
                    let g = accumulate(&mut grads[v.0], r);
                    for (gi, row) in g.iter_mut().zip(dout.chunks(c.max(1))) {
                        *gi = *gi + row.iter().copied().sum::<T>();
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).values(), self.value(*b).values());
                if self.needs(*a) {
                    let g = accumulate(&mut grads[a.0], dout.len());
                    for ((g, &d), &y) in g.iter_mut().zip(dout).zip(bv) {
                        *g = *g + d * y;
                    }
                }
                if self.needs(*b) {
                    let g = accumulate(&mut grads[b.0], dout.len());
                    for ((g, &d), &x) in g.iter_mut().zip(dout).zip(av) {
                        *g = *g + d * x;
                    }
                }
            }
            Op::Tanh(a) => {
                let y = out.expect("owned").values();
                let g = accumulate(&mut grads[a.0], dout.len());
                for ((g, &d), &y) in g.iter_mut().zip(dout).zip(y) {
                    *g = *g + d * (T::one() - y * y);
                }
            }
            Op::Sigmoid(a) => {
                let y = out.expect("owned").values();
                let g = accumulate(&mut grads[a.0], dout.len());
                for ((g, &d), &y) in g.iter_mut().zip(dout).zip(y) {
                    *g = *g + d * y * (T::one() - y);
                }
            }
            Op::SliceCols { src, start } => {
                let (m, n) = self.shape(*src);
                let len = dout.len() / m.max(1);
                let g = accumulate(&mut grads[src.0], m * n);
                for r in 0..m {
                    for c in 0..len {
                        g[r * n + start + c] = g[r * n + start + c] + dout[r * len + c];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = self.value(Var(i)).cols();
                let mut offset = 0;
                for p in parts {
                    let (m, c) = self.shape(*p);
                    if self.needs(*p) {
                        let g = accumulate(&mut grads[p.0], m * c);
                        for r in 0..m {
                            for k in 0..c {
                                g[r * c + k] = g[r * c + k] + dout[r * total + offset + k];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if self.needs(*p) {
                        let g = accumulate(&mut grads[p.0], len);
                        for (g, &d) in g.iter_mut().zip(&dout[offset..offset + len]) {
                            *g = *g + d;
                        }
                    }
                    offset += len;
                }
            }
            Op::MaskRows { src, keep } => {
                let (_, n) = self.shape(*src);
                let g = accumulate(&mut grads[src.0], dout.len());
                for (r, &k) in keep.iter().enumerate() {
                    if k {
                        for c in r * n..(r + 1) * n {
                            g[c] = g[c] + dout[c];
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                let (rows, cols) = self.shape(*table);
                let g = accumulate(&mut grads[table.0], rows * cols);
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..cols {
                        g[id * cols + c] = g[id * cols + c] + dout[r * cols + c];
                    }
                }
            }
            Op::MaskedSoftmax(src) => {
                let y = out.expect("owned");
                let (m, n) = (y.rows(), y.cols());
                let yv = y.values();
                let g = accumulate(&mut grads[src.0], m * n);
                for r in 0..m {
                    let yr = &yv[r * n..(r + 1) * n];
                    let dr = &dout[r * n..(r + 1) * n];
                    let dot: T = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
                    for c in 0..n {
                        g[r * n + c] = g[r * n + c] + yr[c] * (dr[c] - dot);
                    }
                }
            }
            Op::WeightedSum { weights, slots } => {
                let (b, l) = self.shape(*weights);
                let d = dout.len() / b.max(1);
                let wv = self.value(*weights).values();
                if self.needs(*weights) {
                    let mut gw = vec![T::zero(); b * l];
                    for (j, s) in slots.iter().enumerate() {
                        let sv = self.value(*s).values();
                        for r in 0..b {
                            let row = r * d..(r + 1) * d;
                            gw[r * l + j] = sv[row.clone()]
                                .iter()
                                .zip(&dout[row])
                                .map(|(&x, &y)| x * y)
                                .sum();
                        }
                    }
                    let g = accumulate(&mut grads[weights.0], b * l);
                    g.iter_mut().zip(&gw).for_each(|(g, &x)| *g = *g + x);
                }
                for (j, s) in slots.iter().enumerate() {
                    if !self.needs(*s) {
                        continue;
                    }
                    let g = accumulate(&mut grads[s.0], b * d);
                    for r in 0..b {
                        let a = wv[r * l + j];
                        for c in 0..d {
                            g[r * d + c] = g[r * d + c] + a * dout[r * d + c];
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                norm,
                probs,
            } => {
                let (m, v) = self.shape(*logits);
                let g = accumulate(&mut grads[logits.0], m * v);
                let scale = dout[0] / *norm;
                for r in 0..m {
                    let s = scale * weights[r];
                    if s == T::zero() {
                        continue;
                    }
                    for c in 0..v {
                        g[r * v + c] = g[r * v + c] + s * probs[r * v + c];
                    }
                    let t = r * v + targets[r];
                    g[t] = g[t] - s;
                }
            }
            Op::Sum(a) => {
                let g = accumulate(&mut grads[a.0], self.value(*a).len());
                g.iter_mut().for_each(|x| *x = *x + dout[0]);
            }
        }
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let s: T = row.iter().map(|&z| (z - max).exp()).sum();
    max + s.ln()
}

fn softmax_masked_into<T: Scalar>(row: &[T], keep: &[bool], out: &mut [T]) {
    let max = row
        .iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|(&z, _)| z)
        .fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        out.iter_mut().for_each(|o| *o = T::zero());
        return;
    }
    let mut total = T::zero();
    for ((o, &z), &k) in out.iter_mut().zip(row).zip(keep) {
        *o = if k { (z - max).exp() } else { T::zero() };
        total = total + *o;
    }
    out.iter_mut().for_each(|o| *o = *o / total);
}
