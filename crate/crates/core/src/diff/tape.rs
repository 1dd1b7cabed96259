//! Recorded-operation tape.
//!
//! Every call appends one node holding its forward value; [`Tape::backward`]
//! walks the nodes in reverse and applies each operation's adjoint rule,
//! finally adding parameter gradients into the [`ParamRegistry`].

use std::sync::Arc;

use super::{bce_term, dropout_scales, sigmoid_scalar, softplus, Matrix, ParamId, ParamRegistry, SparseRows, BCE_EPS};
use crate::error::{Error, Result};
use crate::par;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Weighted gather-sum plan: output row `r` is
/// `Σ_{k ∈ offsets[r]..offsets[r+1]} w[widx[k]] · input[src[k]]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AggPlan {
    pub offsets: Vec<usize>,
    pub src: Vec<u32>,
    pub widx: Vec<u32>,
}

impl AggPlan {
    pub fn new() -> Self {
        AggPlan {
            offsets: vec![0],
            src: Vec::new(),
            widx: Vec::new(),
        }
    }

    pub fn push(&mut self, src: u32, widx: u32) {
        self.src.push(src);
        self.widx.push(widx);
    }

    pub fn finish_row(&mut self) {
        self.offsets.push(self.src.len());
    }

    pub fn out_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn entries(&self) -> usize {
        self.src.len()
    }

    pub fn segment(&self, r: usize) -> std::ops::Range<usize> {
        self.offsets[r]..self.offsets[r + 1]
    }
}

/// Input of a side-dependent linear map: a tape value or constant sparse rows
/// (`select[k]` is the row of `rows` feeding output row `k`).
#[derive(Clone, Debug)]
pub enum LinInput {
    Dense(Var),
    Sparse {
        rows: Arc<SparseRows>,
        select: Arc<Vec<u32>>,
    },
}

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    SideLinear {
        input: LinInput,
        w: [Var; 2],
        b: [Option<Var>; 2],
        second: Arc<Vec<bool>>,
        col_offset: usize,
    },
    EdgeAgg {
        input: Var,
        weights: Var,
        plan: Arc<AggPlan>,
    },
    SparseEdgeAgg {
        rows: Arc<SparseRows>,
        weights: Var,
        plan: Arc<AggPlan>,
    },
    Add(Var, Var),
    ColConcat(Vec<Var>),
    GatherRows {
        input: Var,
        idx: Arc<Vec<u32>>,
    },
    Lookup {
        table: Var,
        ids: Arc<Vec<Option<u32>>>,
    },
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Dropout {
        input: Var,
        scales: Vec<f64>,
    },
    RowDot {
        input: Var,
        v: Var,
    },
    EdgeLogits {
        dst: Var,
        src: Var,
        plan: Arc<AggPlan>,
    },
    SegmentSoftmax {
        logits: Var,
        plan: Arc<AggPlan>,
    },
    Bce {
        p: Var,
        y: Arc<Vec<f64>>,
    },
    BceLogitsSparse {
        logits: Var,
        targets: Arc<SparseRows>,
        target_rows: Arc<Vec<u32>>,
    },
    LinComb(Vec<(Var, f64)>),
    Sum(Var),
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dims(m: &Matrix) -> String {
    format!("{}x{}", m.rows, m.cols)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data[0]
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Const)
    }

    pub fn param(&mut self, reg: &ParamRegistry, id: ParamId) -> Var {
        let t = reg.get(id);
        let (r, c) = t.matrix_dims();
        let m = Matrix {
            rows: r,
            cols: c,
            data: t.values.clone(),
        };
        self.push(m, Op::Param(id))
    }

    /// `x Wᵀ + b`, with `W` of shape out x in and `b` a 1 x out row.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xm, wm) = (self.value(x), self.value(w));
        if xm.cols != wm.cols {
            return Err(Error::Shape(format!("linear: x {} vs W {}", dims(xm), dims(wm))));
        }
        if let Some(b) = b {
            if self.value(b).data.len() != wm.rows {
                return Err(Error::Shape(format!("linear: bias {} vs W {}", dims(self.value(b)), dims(wm))));
            }
        }
        let (n_in, n_out) = (wm.cols, wm.rows);
        let mut out = Matrix::zeros(xm.rows, n_out);
        let bias = b.map(|b| self.value(b).data.as_slice());
        par::for_each_row(&mut out.data, n_out, |i, row| {
            let xi = &xm.data[i * n_in..(i + 1) * n_in];
            for (o, y) in row.iter_mut().enumerate() {
                let wo = &wm.data[o * n_in..(o + 1) * n_in];
                *y = dot(xi, wo) + bias.map_or(0.0, |b| b[o]);
            }
        });
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    /// Row-wise linear map choosing between two weight sets per row
    /// (`second[i]` selects set 1). Only columns
    /// `col_offset..col_offset + input_width` of the weights are used.
    pub fn side_linear(
        &mut self,
        input: LinInput,
        w: [Var; 2],
        b: [Option<Var>; 2],
        second: Arc<Vec<bool>>,
        col_offset: usize,
    ) -> Result<Var> {
        let (w0, w1) = (self.value(w[0]), self.value(w[1]));
        if (w0.rows, w0.cols) != (w1.rows, w1.cols) {
            return Err(Error::Shape(format!("side_linear: W {} vs {}", dims(w0), dims(w1))));
        }
        let (n_out, total_in) = (w0.rows, w0.cols);
        let (rows, width) = match &input {
            LinInput::Dense(x) => (self.value(*x).rows, self.value(*x).cols),
            LinInput::Sparse { rows, select } => (select.len(), rows.cols),
        };
        if col_offset + width > total_in || second.len() != rows {
            return Err(Error::Shape(format!(
                "side_linear: input {rows}x{width} at offset {col_offset} vs W {}",
                dims(w0)
            )));
        }
        for bv in b.iter().flatten() {
            if self.value(*bv).data.len() != n_out {
                return Err(Error::Shape("side_linear: bias width".into()));
            }
        }
        let ws = [&w0.data, &w1.data];
        let bs = [
            b[0].map(|v| self.value(v).data.as_slice()),
            b[1].map(|v| self.value(v).data.as_slice()),
        ];
        let mut out = Matrix::zeros(rows, n_out);
        match &input {
            LinInput::Dense(x) => {
                let xm = self.value(*x);
                par::for_each_row(&mut out.data, n_out, |i, row| {
                    let s = second[i] as usize;
                    let xi = xm.row(i);
                    for (o, y) in row.iter_mut().enumerate() {
                        let wo = &ws[s][o * total_in + col_offset..o * total_in + col_offset + width];
                        *y = dot(xi, wo) + bs[s].map_or(0.0, |b| b[o]);
                    }
                });
            }
            LinInput::Sparse { rows: sp, select } => {
                par::for_each_row(&mut out.data, n_out, |i, row| {
                    let s = second[i] as usize;
                    let r = select[i] as usize;
                    for (o, y) in row.iter_mut().enumerate() {
                        let base = o * total_in + col_offset;
                        let mut acc = 0.0;
                        for (c, v) in sp.row(r) {
                            acc += ws[s][base + c] * v;
                        }
                        *y = acc + bs[s].map_or(0.0, |b| b[o]);
                    }
                });
            }
        }
        Ok(self.push(
            out,
            Op::SideLinear {
                input,
                w,
                b,
                second,
                col_offset,
            },
        ))
    }

    /// Weighted gather-sum of input rows; see [`AggPlan`]. `weights` is read flat.
    pub fn edge_agg(&mut self, input: Var, weights: Var, plan: Arc<AggPlan>) -> Result<Var> {
        let (xm, wm) = (self.value(input), self.value(weights));
        check_plan(&plan, xm.rows, wm.data.len())?;
        let cols = xm.cols;
        let mut out = Matrix::zeros(plan.out_rows(), cols);
        par::for_each_row(&mut out.data, cols, |r, row| {
            for k in plan.segment(r) {
                let w = wm.data[plan.widx[k] as usize];
                axpy(row, w, xm.row(plan.src[k] as usize));
            }
        });
        Ok(self.push(out, Op::EdgeAgg { input, weights, plan }))
    }

    /// [`Self::edge_agg`] over constant sparse input rows, producing dense rows.
    pub fn sparse_edge_agg(&mut self, rows: Arc<SparseRows>, weights: Var, plan: Arc<AggPlan>) -> Result<Var> {
        let wm = self.value(weights);
        check_plan(&plan, rows.rows(), wm.data.len())?;
        let cols = rows.cols;
        let mut out = Matrix::zeros(plan.out_rows(), cols);
        par::for_each_row(&mut out.data, cols, |r, row| {
            for k in plan.segment(r) {
                let w = wm.data[plan.widx[k] as usize];
                for (c, v) in rows.row(plan.src[k] as usize) {
                    row[c] += w * v;
                }
            }
        });
        Ok(self.push(out, Op::SparseEdgeAgg { rows, weights, plan }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        if (am.rows, am.cols) != (bm.rows, bm.cols) {
            return Err(Error::Shape(format!("add: {} vs {}", dims(am), dims(bm))));
        }
        let data = am.data.iter().zip(&bm.data).map(|(x, y)| x + y).collect();
        let out = Matrix {
            rows: am.rows,
            cols: am.cols,
            data,
        };
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn col_concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |p| self.value(*p).rows);
        if parts.iter().any(|p| self.value(*p).rows != rows) {
            return Err(Error::Shape("col_concat: row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for p in parts {
                let pm = self.value(*p);
                out.data[i * cols + off..i * cols + off + pm.cols].copy_from_slice(pm.row(i));
                off += pm.cols;
            }
        }
        Ok(self.push(out, Op::ColConcat(parts.to_vec())))
    }

    pub fn gather_rows(&mut self, input: Var, idx: Arc<Vec<u32>>) -> Result<Var> {
        let xm = self.value(input);
        if idx.iter().any(|&i| i as usize >= xm.rows) {
            return Err(Error::Shape("gather_rows: index out of range".into()));
        }
        let mut out = Matrix::zeros(idx.len(), xm.cols);
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(xm.row(i as usize));
        }
        Ok(self.push(out, Op::GatherRows { input, idx }))
    }

    /// Embedding lookup; `None` ids yield zero rows.
    pub fn lookup(&mut self, table: Var, ids: Arc<Vec<Option<u32>>>) -> Result<Var> {
        let tm = self.value(table);
        if ids.iter().flatten().any(|&i| i as usize >= tm.rows) {
            return Err(Error::Shape("lookup: id out of range".into()));
        }
        let mut out = Matrix::zeros(ids.len(), tm.cols);
        for (k, id) in ids.iter().enumerate() {
            if let Some(i) = id {
                out.row_mut(k).copy_from_slice(tm.row(*i as usize));
            }
        }
        Ok(self.push(out, Op::Lookup { table, ids }))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let am = self.value(a);
        let out = Matrix {
            rows: am.rows,
            cols: am.cols,
            data: am.data.iter().map(|&v| f(v)).collect(),
        };
        self.push(out, op)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |v| v.max(0.0), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(a, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid_scalar, Op::Sigmoid(a))
    }

    /// Inverted dropout; returns `a` itself when `rate` is 0.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut seed::Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let am = self.value(a);
        let scales = dropout_scales(am.data.len(), rate, rng);
        let out = Matrix {
            rows: am.rows,
            cols: am.cols,
            data: am.data.iter().zip(&scales).map(|(v, s)| v * s).collect(),
        };
        Ok(self.push(out, Op::Dropout { input: a, scales }))
    }

    /// Per-row dot product with a 1 x cols vector; result is rows x 1.
    pub fn row_dot(&mut self, input: Var, v: Var) -> Result<Var> {
        let (xm, vm) = (self.value(input), self.value(v));
        if vm.data.len() != xm.cols {
            return Err(Error::Shape(format!("row_dot: x {} vs v {}", dims(xm), dims(vm))));
        }
        let data = (0..xm.rows).map(|i| dot(xm.row(i), &vm.data)).collect();
        let out = Matrix {
            rows: xm.rows,
            cols: 1,
            data,
        };
        Ok(self.push(out, Op::RowDot { input, v }))
    }

    /// Per plan entry `k` in row `r`: `dst[r] + src[src[k]]` (both rows x 1).
    pub fn edge_logits(&mut self, dst: Var, src: Var, plan: Arc<AggPlan>) -> Result<Var> {
        let (dm, sm) = (self.value(dst), self.value(src));
        if dm.cols != 1 || sm.cols != 1 || dm.rows != plan.out_rows() {
            return Err(Error::Shape("edge_logits: expects column vectors matching the plan".into()));
        }
        check_plan(&plan, sm.rows, usize::MAX)?;
        let mut data = vec![0.0; plan.entries()];
        for r in 0..plan.out_rows() {
            for k in plan.segment(r) {
                data[k] = dm.data[r] + sm.data[plan.src[k] as usize];
            }
        }
        let out = Matrix {
            rows: plan.entries(),
            cols: 1,
            data,
        };
        Ok(self.push(out, Op::EdgeLogits { dst, src, plan }))
    }

    /// Softmax of entry logits within each plan row.
    pub fn segment_softmax(&mut self, logits: Var, plan: Arc<AggPlan>) -> Result<Var> {
        let lm = self.value(logits);
        if lm.data.len() != plan.entries() {
            return Err(Error::Shape("segment_softmax: logits vs plan entries".into()));
        }
        let mut data = vec![0.0; plan.entries()];
        for r in 0..plan.out_rows() {
            let seg = plan.segment(r);
            if seg.is_empty() {
                continue;
            }
            let max = lm.data[seg.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for k in seg.clone() {
                data[k] = (lm.data[k] - max).exp();
                sum += data[k];
            }
            for k in seg {
                data[k] /= sum;
            }
        }
        let out = Matrix {
            rows: plan.entries(),
            cols: 1,
            data,
        };
        Ok(self.push(out, Op::SegmentSoftmax { logits, plan }))
    }

    /// Mean clamped binary cross-entropy of probabilities `p` (n x 1) against `y`.
    pub fn bce(&mut self, p: Var, y: Arc<Vec<f64>>) -> Result<Var> {
        let pm = self.value(p);
        if pm.data.len() != y.len() {
            return Err(Error::Shape("bce: p vs y length".into()));
        }
        if y.is_empty() {
            return Err(Error::Empty("bce over no entries".into()));
        }
        let loss = pm.data.iter().zip(y.iter()).map(|(&p, &y)| bce_term(p, y)).sum::<f64>() / y.len() as f64;
        Ok(self.push(Matrix::from_vec(1, 1, vec![loss])?, Op::Bce { p, y }))
    }

    /// Mean over all entries of `logits` of the logistic cross-entropy against
    /// binary targets `targets[target_rows[i]]`.
    pub fn bce_logits_sparse(
        &mut self,
        logits: Var,
        targets: Arc<SparseRows>,
        target_rows: Arc<Vec<u32>>,
    ) -> Result<Var> {
        let lm = self.value(logits);
        if lm.rows != target_rows.len() || lm.cols != targets.cols {
            return Err(Error::Shape(format!(
                "bce_logits_sparse: logits {} vs {} target rows of width {}",
                dims(lm),
                target_rows.len(),
                targets.cols
            )));
        }
        if lm.data.is_empty() {
            return Err(Error::Empty("bce_logits_sparse over no entries".into()));
        }
        let mut sum: f64 = lm.data.iter().map(|&z| softplus(z)).sum();
        for (i, &t) in target_rows.iter().enumerate() {
            for (c, v) in targets.row(t as usize) {
                sum -= v * lm.data[i * lm.cols + c];
            }
        }
        let loss = sum / lm.data.len() as f64;
        Ok(self.push(
            Matrix::from_vec(1, 1, vec![loss])?,
            Op::BceLogitsSparse {
                logits,
                targets,
                target_rows,
            },
        ))
    }

    /// `Σ c_k · s_k` over scalar nodes.
    pub fn lin_comb(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut v = 0.0;
        for &(s, c) in terms {
            let m = self.value(s);
            if m.data.len() != 1 {
                return Err(Error::Shape("lin_comb: terms must be scalars".into()));
            }
            v += c * m.data[0];
        }
        Ok(self.push(Matrix::from_vec(1, 1, vec![v])?, Op::LinComb(terms.to_vec())))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Matrix { rows: 1, cols: 1, data: vec![s] }, Op::Sum(a))
    }

    /// Back-propagates from scalar `loss`, adding parameter gradients into `reg`.
    pub fn backward(&self, loss: Var, reg: &mut ParamRegistry) -> Result<()> {
        if self.value(loss).data.len() != 1 {
            return Err(Error::Shape("backward: loss must be a scalar".into()));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0])?);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backprop_node(node, &g, &mut grads, reg);
        }
        Ok(())
    }

    fn backprop_node(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>], reg: &mut ParamRegistry) {
        let v = |x: Var| &self.nodes[x.0].value;
        match &node.op {
            Op::Const => {}
            Op::Param(id) => {
                let t = reg.get_mut(*id);
                for (a, b) in t.grad.iter_mut().zip(&g.data) {
                    *a += b;
                }
            }
            Op::Linear { x, w, b } => {
                let (xm, wm) = (v(*x), v(*w));
                let (n_in, n_out) = (wm.cols, wm.rows);
                // dx = g W
                let mut dx = Matrix::zeros(xm.rows, n_in);
                par::for_each_row(&mut dx.data, n_in, |i, row| {
                    for o in 0..n_out {
                        axpy(row, g.data[i * n_out + o], wm.row(o));
                    }
                });
                accumulate(grads, *x, dx);
                // dW = gᵀ x
                let gt = g.transpose();
                let mut dw = Matrix::zeros(n_out, n_in);
                par::for_each_row(&mut dw.data, n_in, |o, row| {
                    for i in 0..xm.rows {
                        axpy(row, gt.data[o * xm.rows + i], xm.row(i));
                    }
                });
                accumulate(grads, *w, dw);
                if let Some(b) = b {
                    accumulate(grads, *b, col_sums(g));
                }
            }
            Op::SideLinear {
                input,
                w,
                b,
                second,
                col_offset,
            } => {
                let wv = [v(w[0]), v(w[1])];
                let (n_out, total_in) = (wv[0].rows, wv[0].cols);
                let rows = g.rows;
                let gt = g.transpose();
                for s in 0..2 {
                    let members: Vec<usize> = (0..rows).filter(|&i| second[i] as usize == s).collect();
                    if members.is_empty() {
                        continue;
                    }
                    let mut dw = Matrix::zeros(n_out, total_in);
                    match input {
                        LinInput::Dense(x) => {
                            let xm = v(*x);
                            par::for_each_row(&mut dw.data, total_in, |o, row| {
                                let row = &mut row[*col_offset..*col_offset + xm.cols];
                                for &i in &members {
                                    axpy(row, gt.data[o * rows + i], xm.row(i));
                                }
                            });
                        }
                        LinInput::Sparse { rows: sp, select } => {
                            par::for_each_row(&mut dw.data, total_in, |o, row| {
                                for &i in &members {
                                    let gi = gt.data[o * rows + i];
                                    if gi == 0.0 {
                                        continue;
                                    }
                                    for (c, val) in sp.row(select[i] as usize) {
                                        row[*col_offset + c] += gi * val;
                                    }
                                }
                            });
                        }
                    }
                    accumulate(grads, w[s], dw);
                    if let Some(bv) = b[s] {
                        let mut db = Matrix::zeros(1, n_out);
                        for &i in &members {
                            axpy(&mut db.data, 1.0, g.row(i));
                        }
                        accumulate(grads, bv, db);
                    }
                }
                if let LinInput::Dense(x) = input {
                    let width = v(*x).cols;
                    let mut dx = Matrix::zeros(rows, width);
                    par::for_each_row(&mut dx.data, width, |i, row| {
                        let wm = wv[second[i] as usize];
                        for o in 0..n_out {
                            let base = o * total_in + col_offset;
                            axpy(row, g.data[i * n_out + o], &wm.data[base..base + width]);
                        }
                    });
                    accumulate(grads, *x, dx);
                }
            }
            Op::EdgeAgg { input, weights, plan } => {
                let (xm, wm) = (v(*input), v(*weights));
                let mut dx = Matrix::zeros(xm.rows, xm.cols);
                let mut dw = Matrix::zeros(wm.rows, wm.cols);
                for r in 0..plan.out_rows() {
                    let gr = g.row(r);
                    for k in plan.segment(r) {
                        let (src, wi) = (plan.src[k] as usize, plan.widx[k] as usize);
                        axpy(dx.row_mut(src), wm.data[wi], gr);
                        dw.data[wi] += dot(gr, xm.row(src));
                    }
                }
                accumulate(grads, *input, dx);
                accumulate(grads, *weights, dw);
            }
            Op::SparseEdgeAgg { rows, weights, plan } => {
                let wm = v(*weights);
                let mut dw = Matrix::zeros(wm.rows, wm.cols);
                for r in 0..plan.out_rows() {
                    let gr = g.row(r);
                    for k in plan.segment(r) {
                        let mut acc = 0.0;
                        for (c, val) in rows.row(plan.src[k] as usize) {
                            acc += gr[c] * val;
                        }
                        dw.data[plan.widx[k] as usize] += acc;
                    }
                }
                accumulate(grads, *weights, dw);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::ColConcat(parts) => {
                let mut off = 0;
                for p in parts {
                    let cols = v(*p).cols;
                    let mut d = Matrix::zeros(g.rows, cols);
                    for i in 0..g.rows {
                        d.row_mut(i).copy_from_slice(&g.row(i)[off..off + cols]);
                    }
                    off += cols;
                    accumulate(grads, *p, d);
                }
            }
            Op::GatherRows { input, idx } => {
                let xm = v(*input);
                let mut d = Matrix::zeros(xm.rows, xm.cols);
                for (k, &i) in idx.iter().enumerate() {
                    axpy(d.row_mut(i as usize), 1.0, g.row(k));
                }
                accumulate(grads, *input, d);
            }
            Op::Lookup { table, ids } => {
                let tm = v(*table);
                let mut d = Matrix::zeros(tm.rows, tm.cols);
                for (k, id) in ids.iter().enumerate() {
                    if let Some(i) = id {
                        axpy(d.row_mut(*i as usize), 1.0, g.row(k));
                    }
                }
                accumulate(grads, *table, d);
            }
            Op::Relu(a) => {
                let am = v(*a);
                let data = g
                    .data
                    .iter()
                    .zip(&am.data)
                    .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(grads, *a, like(g, data));
            }
            Op::LeakyRelu(a, slope) => {
                let am = v(*a);
                let data = g
                    .data
                    .iter()
                    .zip(&am.data)
                    .map(|(&gv, &x)| if x > 0.0 { gv } else { slope * gv })
                    .collect();
                accumulate(grads, *a, like(g, data));
            }
            Op::Sigmoid(a) => {
                let data = g
                    .data
                    .iter()
                    .zip(&node.value.data)
                    .map(|(&gv, &y)| gv * y * (1.0 - y))
                    .collect();
                accumulate(grads, *a, like(g, data));
            }
            Op::Dropout { input, scales } => {
                let data = g.data.iter().zip(scales).map(|(gv, s)| gv * s).collect();
                accumulate(grads, *input, like(g, data));
            }
            Op::RowDot { input, v: vec } => {
                let (xm, vm) = (v(*input), v(*vec));
                let mut dx = Matrix::zeros(xm.rows, xm.cols);
                let mut dv = Matrix::zeros(vm.rows, vm.cols);
                for i in 0..xm.rows {
                    let gi = g.data[i];
                    axpy(dx.row_mut(i), gi, &vm.data);
                    axpy(&mut dv.data, gi, xm.row(i));
                }
                accumulate(grads, *input, dx);
                accumulate(grads, *vec, dv);
            }
            Op::EdgeLogits { dst, src, plan } => {
                let mut dd = Matrix::zeros(v(*dst).rows, 1);
                let mut ds = Matrix::zeros(v(*src).rows, 1);
                for r in 0..plan.out_rows() {
                    for k in plan.segment(r) {
                        dd.data[r] += g.data[k];
                        ds.data[plan.src[k] as usize] += g.data[k];
                    }
                }
                accumulate(grads, *dst, dd);
                accumulate(grads, *src, ds);
            }
            Op::SegmentSoftmax { logits, plan } => {
                let alpha = &node.value.data;
                let mut d = vec![0.0; alpha.len()];
                for r in 0..plan.out_rows() {
                    let seg = plan.segment(r);
                    let s: f64 = seg.clone().map(|k| alpha[k] * g.data[k]).sum();
                    for k in seg {
                        d[k] = alpha[k] * (g.data[k] - s);
                    }
                }
                accumulate(grads, *logits, like(v(*logits), d));
            }
            Op::Bce { p, y } => {
                let pm = v(*p);
                let n = y.len() as f64;
                let gl = g.data[0];
                let data = pm
                    .data
                    .iter()
                    .zip(y.iter())
                    .map(|(&p, &y)| {
                        if p < BCE_EPS || p > 1.0 - BCE_EPS {
                            0.0
                        } else {
                            gl * (-y / p + (1.0 - y) / (1.0 - p)) / n
                        }
                    })
                    .collect();
                accumulate(grads, *p, like(pm, data));
            }
            Op::BceLogitsSparse {
                logits,
                targets,
                target_rows,
            } => {
                let lm = v(*logits);
                let scale = g.data[0] / lm.data.len() as f64;
                let mut d = like(lm, lm.data.iter().map(|&z| sigmoid_scalar(z) * scale).collect());
                for (i, &t) in target_rows.iter().enumerate() {
                    for (c, val) in targets.row(t as usize) {
                        d.data[i * lm.cols + c] -= val * scale;
                    }
                }
                accumulate(grads, *logits, d);
            }
            Op::Sum(a) => {
                let am = v(*a);
                accumulate(grads, *a, like(am, vec![g.data[0]; am.data.len()]));
            }
            Op::LinComb(terms) => {
                for &(s, c) in terms {
                    accumulate(grads, s, Matrix {
                        rows: 1,
                        cols: 1,
                        data: vec![c * g.data[0]],
                    });
                }
            }
        }
    }
}

fn check_plan(plan: &AggPlan, input_rows: usize, n_weights: usize) -> Result<()> {
    if plan.src.iter().any(|&s| s as usize >= input_rows) {
        return Err(Error::Shape("aggregation plan source row out of range".into()));
    }
    if plan.widx.iter().any(|&w| w as usize >= n_weights) {
        return Err(Error::Shape("aggregation plan weight index out of range".into()));
    }
    Ok(())
}

fn like(m: &Matrix, data: Vec<f64>) -> Matrix {
    Matrix {
        rows: m.rows,
        cols: m.cols,
        data,
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn col_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols);
    for i in 0..g.rows {
        axpy(&mut out.data, 1.0, g.row(i));
    }
    out
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    if a == 0.0 {
        return;
    }
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::grad_check;
    use rand::Rng;

    fn rand_reg(shapes: &[(&str, usize, usize)], seed: u64) -> (ParamRegistry, Vec<ParamId>) {
        let mut reg = ParamRegistry::new();
        let mut rng = seed::rng(seed, "tape-test");
        let ids = shapes
            .iter()
            .map(|(n, r, c)| {
                let vals = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
                reg.register(n, &[*r, *c], vals).unwrap()
            })
            .collect();
        (reg, ids)
    }

    /// Sums `values ⊙ fixed random weights` so every output entry matters.
    fn probe(tape: &mut Tape, x: Var, seed: u64) -> Var {
        let cols = tape.value(x).cols;
        let mut rng = seed::rng(seed, "probe");
        let wdata: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = tape.constant(Matrix::from_vec(1, cols, wdata).unwrap());
        let s = tape.row_dot(x, w).unwrap();
        tape.sum(s)
    }

    #[test]
    fn linear_gradcheck() {
        let (mut reg, ids) = rand_reg(&[("x", 4, 7), ("w", 5, 7), ("b", 1, 5)], 1);
        let err = grad_check(&mut reg, 1e-5, 200, 3, |reg| {
            let mut t = Tape::new();
            let x = t.param(reg, ids[0]);
            let w = t.param(reg, ids[1]);
            let b = t.param(reg, ids[2]);
            let y = t.linear(x, w, Some(b)).unwrap();
            let l = probe(&mut t, y, 4);
            t.backward(l, reg).unwrap();
            t.scalar(l)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn smooth_ops_gradcheck() {
        let (mut reg, ids) = rand_reg(&[("x", 3, 4), ("y", 3, 4), ("v", 1, 8)], 2);
        let err = grad_check(&mut reg, 1e-5, 200, 5, |reg| {
            let mut t = Tape::new();
            let x = t.param(reg, ids[0]);
            let y = t.param(reg, ids[1]);
            let v = t.param(reg, ids[2]);
            let s = t.sigmoid(x);
            let a = t.add(s, y).unwrap();
            let c = t.col_concat(&[a, x]).unwrap();
            let d = t.row_dot(c, v).unwrap();
            let p = t.sigmoid(d);
            let l = t.bce(p, Arc::new(vec![1.0, 0.0, 1.0])).unwrap();
            t.backward(l, reg).unwrap();
            t.scalar(l)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn relu_gradcheck_away_from_kink() {
        let (mut reg, ids) = rand_reg(&[("x", 6, 5)], 3);
        for v in &mut reg.get_mut(ids[0]).values {
            if v.abs() < 0.05 {
                *v += 0.1f64.copysign(*v);
            }
        }
        let err = grad_check(&mut reg, 1e-5, 100, 1, |reg| {
            let mut t = Tape::new();
            let x = t.param(reg, ids[0]);
            let r = t.relu(x);
            let lr = t.leaky_relu(x, 0.2);
            let s = t.add(r, lr).unwrap();
            let l = probe(&mut t, s, 2);
            t.backward(l, reg).unwrap();
            t.scalar(l)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn aggregation_ops_gradcheck() {
        let (mut reg, ids) = rand_reg(&[("x", 5, 3), ("w", 1, 9), ("a", 1, 3), ("e", 4, 2)], 4);
        let mut plan = AggPlan::new();
        for (srcs, off) in [(vec![0u32, 2, 4], 0u32), (vec![1], 3), (vec![], 4), (vec![3, 0], 4)] {
            for (k, s) in srcs.iter().enumerate() {
                plan.push(*s, off + k as u32);
            }
            plan.finish_row();
        }
        let plan = Arc::new(plan);
        let mut sp = SparseRows::new(3);
        sp.push_row([(0, 1.0), (2, 2.0)]);
        sp.push_row([(1, -1.0)]);
        sp.push_row([]);
        sp.push_row([(0, 0.5), (1, 0.5), (2, 0.5)]);
        sp.push_row([(2, 1.0)]);
        let sp = Arc::new(sp);
        let err = grad_check(&mut reg, 1e-5, 200, 7, |reg| {
            let mut t = Tape::new();
            let x = t.param(reg, ids[0]);
            let w = t.param(reg, ids[1]);
            let a = t.param(reg, ids[2]);
            let emb = t.param(reg, ids[3]);
            let agg = t.edge_agg(x, w, plan.clone()).unwrap();
            let sagg = t.sparse_edge_agg(sp.clone(), w, plan.clone()).unwrap();
            let dst = t.row_dot(agg, a).unwrap();
            let src = t.row_dot(x, a).unwrap();
            let lg = t.edge_logits(dst, src, plan.clone()).unwrap();
            let alpha = t.segment_softmax(lg, plan.clone()).unwrap();
            let att = t.edge_agg(x, alpha, {
                let mut p = (*plan).clone();
                p.widx = (0..p.entries() as u32).collect();
                Arc::new(p)
            })
            .unwrap();
            let s = t.add(att, sagg).unwrap();
            let l1 = probe(&mut t, s, 3);
            let look = t.lookup(emb, Arc::new(vec![Some(1), None, Some(3), Some(1)])).unwrap();
            let g = t.gather_rows(look, Arc::new(vec![0, 0, 2])).unwrap();
            let l2 = probe(&mut t, g, 5);
            let bl = t
                .bce_logits_sparse(agg, sp.clone(), Arc::new(vec![0, 1, 3, 4]))
                .unwrap();
            let l = t.lin_comb(&[(l1, 1.0), (l2, 0.5), (bl, 2.0)]).unwrap();
            t.backward(l, reg).unwrap();
            t.scalar(l)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn side_linear_matches_per_row_linear_and_gradchecks() {
        let (mut reg, ids) = rand_reg(
            &[("x", 4, 3), ("w0", 2, 5), ("w1", 2, 5), ("b0", 1, 2), ("b1", 1, 2)],
            5,
        );
        let second = Arc::new(vec![false, true, true, false]);
        let mut sp = SparseRows::new(3);
        sp.push_row([(0, 1.0)]);
        sp.push_row([(1, 1.0), (2, 1.0)]);
        let sp = Arc::new(sp);
        let err = grad_check(&mut reg, 1e-5, 200, 9, |reg| {
            let mut t = Tape::new();
            let x = t.param(reg, ids[0]);
            let ws = [t.param(reg, ids[1]), t.param(reg, ids[2])];
            let bs = [Some(t.param(reg, ids[3])), Some(t.param(reg, ids[4]))];
            let d = t.side_linear(LinInput::Dense(x), ws, bs, second.clone(), 2).unwrap();
            let s = t
                .side_linear(
                    LinInput::Sparse {
                        rows: sp.clone(),
                        select: Arc::new(vec![1, 0, 1, 1]),
                    },
                    ws,
                    [None, None],
                    second.clone(),
                    0,
                )
                .unwrap();
            let a = t.add(d, s).unwrap();
            let l = probe(&mut t, a, 11);
            t.backward(l, reg).unwrap();
            t.scalar(l)
        });
        assert!(err < 1e-6, "{err}");

        // row 1 uses w1, columns 2..5
        let mut t = Tape::new();
        let x = t.param(&reg, ids[0]);
        let ws = [t.param(&reg, ids[1]), t.param(&reg, ids[2])];
        let d = t.side_linear(LinInput::Dense(x), ws, [None, None], second, 2).unwrap();
        let w1 = reg.get(ids[2]);
        let xr = &reg.get(ids[0]).values[3..6];
        for o in 0..2 {
            let expect: f64 = (0..3).map(|k| w1.values[o * 5 + 2 + k] * xr[k]).sum();
            assert!((t.value(d).get(1, o) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let mut plan = AggPlan::new();
        for n in [3, 1, 5] {
            for k in 0..n {
                plan.push(k, k);
            }
            plan.finish_row();
        }
        let plan = Arc::new(plan);
        let logits = t.constant(Matrix::from_vec(9, 1, vec![1.0, 2.0, 3.0, 50.0, -3.0, 0.0, 700.0, 2.0, 1.0]).unwrap());
        let a = t.segment_softmax(logits, plan.clone()).unwrap();
        for r in 0..3 {
            let s: f64 = plan.segment(r).map(|k| t.value(a).data[k]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3));
        let b = t.constant(Matrix::zeros(3, 2));
        assert!(t.add(a, b).is_err());
        assert!(t.linear(a, a, None).is_ok());
        assert!(t.linear(a, b, None).is_err());
    }
}
