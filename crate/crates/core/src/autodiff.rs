//! A small reverse-mode differentiation tape over 2-D tensors.
//!
//! Only the primitives the alignment network needs are provided: matrix
//! products, column concatenation, row gathers, pointwise activations,
//! row normalization, softmax and weighted sums within segments, and row
//! distances. Every op validates shapes and rejects non-finite values.
//!
//! ```
//! use raea_core::autodiff::{ParamStore, Tape};
//! use raea_core::tensor::Tensor;
//!
//! let mut store = ParamStore::new();
//! let w = store.add("w", Tensor::scalar(3.0));
//! let mut tape = Tape::new();
//! let x = tape.param(&store, w);
//! let y = tape.matmul(x, x).unwrap();
//! tape.backward(y, &mut store).unwrap();
//! assert_eq!(store.get(w).grad.item(), 6.0);
//! ```

use std::cmp::Ordering;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Owns the learnable tensors of a model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let (r, c) = value.shape();
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad: Tensor::zeros(r, c),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }
}

/// Segment id per row, with a precomputed member list per segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    ids: Arc<[usize]>,
    count: usize,
    offsets: Arc<[usize]>,
    members: Arc<[usize]>,
}

impl Segments {
    pub fn new(ids: Vec<usize>, count: usize) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&s| s >= count) {
            return Err(Error::Contract(format!("segment id {bad} out of range for {count} segments")));
        }
        let mut offsets = vec![0usize; count + 1];
        for &s in &ids {
            offsets[s + 1] += 1;
        }
        for s in 0..count {
            offsets[s + 1] += offsets[s];
        }
        let mut fill = offsets.clone();
        let mut members = vec![0usize; ids.len()];
        for (i, &s) in ids.iter().enumerate() {
            members[fill[s]] = i;
            fill[s] += 1;
        }
        Ok(Self {
            ids: ids.into(),
            count,
            offsets: offsets.into(),
            members: members.into(),
        })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn members(&self, segment: usize) -> &[usize] {
        &self.members[self.offsets[segment]..self.offsets[segment + 1]]
    }
}

/// Row index list shared between forward passes.
pub type RowIndex = Arc<[usize]>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distance {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Concat(Vec<Var>),
    Gather(Var, RowIndex),
    Add(Var, Var),
    Sub(Var, Var),
    AddScalar(Var),
    Relu(Var),
    Elu(Var),
    LeakyRelu(Var, f64),
    NormalizeRows(Var),
    SegmentSoftmax(Var, Segments),
    WeightedSegmentSum(Var, Var, Segments),
    RowDistance(Var, Var, Distance),
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation so gradients can be propagated back to
/// the parameters it read.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    canonical: bool,
    kinks: Option<u64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

fn same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(contract(format!("{what}: shape mismatch {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn column(what: &str, t: &Tensor, rows: usize) -> Result<()> {
    if t.shape() != (rows, 1) {
        return Err(contract(format!("{what}: expected a {rows}x1 column, got {:?}", t.shape())));
    }
    Ok(())
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
            canonical: true,
            kinks: None,
        }
    }

    /// In canonical mode (the default) reductions inside a segment visit
    /// contributions sorted by value, so results do not depend on row
    /// order. Disabling it sums in row order.
    pub fn set_canonical_reductions(&mut self, on: bool) {
        self.canonical = on;
    }

    /// Starts hashing the branch taken by every piecewise op.
    pub fn track_kinks(&mut self) {
        self.kinks = Some(0xcbf2_9ce4_8422_2325);
    }

    /// Hash of the branches taken so far, if tracking.
    pub fn kink_signature(&self) -> Option<u64> {
        self.kinks
    }

    fn note_branch(&mut self, b: u8) {
        if let Some(h) = self.kinks.as_mut() {
            *h ^= u64::from(b);
            *h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if self.consumed {
            return Err(contract("tape already consumed by backward"));
        }
        if !value.is_finite() {
            return Err(contract(format!("non-finite value produced by {}", op_name(&op))));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    /// Reads a parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let value = store.get(id).value.clone();
        // parameters are validated by the optimizer; a NaN here is a bug upstream
        self.push(value, Op::Param(id)).expect("parameter value must be finite")
    }

    /// `x · w` for `x: n×p`, `w: p×q`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let out = self.value(x).matmul(self.value(w))?;
        self.push(out, Op::MatMul(x, w))
    }

    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        self.matmul(x, w)
    }

    /// Concatenates along columns; all inputs need the same row count.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(contract("concat of zero tensors"));
        }
        let rows = self.value(xs[0]).rows();
        let mut cols = 0;
        for &x in xs {
            let t = self.value(x);
            if t.rows() != rows {
                return Err(contract(format!("concat row mismatch: {:?} vs {rows} rows", t.shape())));
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &x in xs {
                let src = self.value(x).row(r);
                out.row_mut(r)[c0..c0 + src.len()].copy_from_slice(src);
                c0 += src.len();
            }
        }
        self.push(out, Op::Concat(xs.to_vec()))
    }

    /// Rows `index[0], index[1], ...` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: &RowIndex) -> Result<Var> {
        let src = self.value(x);
        let cols = src.cols();
        let mut out = Tensor::zeros(index.len(), cols);
        for (r, &i) in index.iter().enumerate() {
            if i >= src.rows() {
                return Err(contract(format!("gather index {i} out of range for {} rows", src.rows())));
            }
            out.row_mut(r).copy_from_slice(src.row(i));
        }
        self.push(out, Op::Gather(x, index.clone()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let mut out = ta.clone();
        out.add_assign(tb);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("sub", ta, tb)?;
        let mut out = ta.clone();
        for (o, y) in out.data_mut().iter_mut().zip(tb.data()) {
            *o -= y;
        }
        self.push(out, Op::Sub(a, b))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v += c);
        self.push(out, Op::AddScalar(x))
    }

    fn note_signs(&mut self, x: Var) {
        if self.kinks.is_some() {
            let signs: Vec<u8> = self.value(x).data().iter().map(|&v| sign_class(v)).collect();
            for s in signs {
                self.note_branch(s);
            }
        }
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.note_signs(x);
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    /// ELU with α = 1.
    pub fn elu(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| {
            if *v <= 0.0 {
                *v = v.exp_m1();
            }
        });
        self.push(out, Op::Elu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.note_signs(x);
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v *= slope;
            }
        });
        self.push(out, Op::LeakyRelu(x, slope))
    }

    /// Scales each row to unit L2 norm. Zero rows stay zero.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).normalized_rows();
        if self.kinks.is_some() {
            let zeros: Vec<u8> = (0..out.rows()).map(|r| u8::from(out.row(r).iter().all(|&v| v == 0.0))).collect();
            for z in zeros {
                self.note_branch(z);
            }
        }
        self.push(out, Op::NormalizeRows(x))
    }

    /// Softmax of an `m×1` score column within each segment.
    pub fn segment_softmax(&mut self, scores: Var, segments: &Segments) -> Result<Var> {
        let s = self.value(scores);
        column("segment_softmax", s, segments.len())?;
        let mut out = Tensor::zeros(segments.len(), 1);
        let mut order = Vec::new();
        for seg in 0..segments.count() {
            let members = segments.members(seg);
            if members.is_empty() {
                continue;
            }
            order.clear();
            order.extend_from_slice(members);
            if self.canonical {
                order.sort_by(|&a, &b| s.get(a, 0).total_cmp(&s.get(b, 0)));
            }
            let max = order.iter().map(|&i| s.get(i, 0)).fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &i in &order {
                let e = (s.get(i, 0) - max).exp();
                out.set(i, 0, e);
                denom += e;
            }
            for &i in members {
                let v = out.get(i, 0) / denom;
                out.set(i, 0, v);
            }
        }
        self.push(out, Op::SegmentSoftmax(scores, segments.clone()))
    }

    /// `out[s] = Σ_{i in segment s} weights[i] · values[i]`; empty segments
    /// give zero rows.
    pub fn weighted_segment_sum(&mut self, weights: Var, values: Var, segments: &Segments) -> Result<Var> {
        let (w, v) = (self.value(weights), self.value(values));
        column("weighted_segment_sum weights", w, segments.len())?;
        if v.rows() != segments.len() {
            return Err(contract(format!(
                "weighted_segment_sum: {} value rows for {} segment ids",
                v.rows(),
                segments.len()
            )));
        }
        let d = v.cols();
        let mut out = Tensor::zeros(segments.count(), d);
        let mut order = Vec::new();
        for seg in 0..segments.count() {
            order.clear();
            order.extend_from_slice(segments.members(seg));
            if self.canonical {
                order.sort_by(|&a, &b| {
                    w.get(a, 0).total_cmp(&w.get(b, 0)).then_with(|| cmp_rows(v.row(a), v.row(b)))
                });
            }
            let orow = out.row_mut(seg);
            for &i in &order {
                let wi = w.get(i, 0);
                for (o, &x) in orow.iter_mut().zip(v.row(i)) {
                    *o += wi * x;
                }
            }
        }
        self.push(out, Op::WeightedSegmentSum(weights, values, segments.clone()))
    }

    /// Per-row distance between two equally shaped matrices, as an `m×1` column.
    pub fn row_distance(&mut self, a: Var, b: Var, metric: Distance) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("row_distance", ta, tb)?;
        let mut out = Tensor::zeros(ta.rows(), 1);
        let mut branches = Vec::new();
        let track = self.kinks.is_some();
        for r in 0..ta.rows() {
            let d = match metric {
                Distance::L1 => ta
                    .row(r)
                    .iter()
                    .zip(tb.row(r))
                    .map(|(x, y)| {
                        if track {
                            branches.push(sign_class(x - y));
                        }
                        (x - y).abs()
                    })
                    .sum(),
                Distance::L2 => {
                    let d = ta.row(r).iter().zip(tb.row(r)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                    if track {
                        branches.push(u8::from(d == 0.0));
                    }
                    d
                }
            };
            out.set(r, 0, d);
        }
        for b in branches {
            self.note_branch(b);
        }
        self.push(out, Op::RowDistance(a, b, metric))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Propagates d`loss`/d(·) back through the tape and stores the result
    /// in each parameter's `grad` (parameters not reached get zero). The
    /// tape cannot be reused afterwards.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.consumed {
            return Err(contract("backward called twice on the same tape; run a new forward pass"));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        store.zero_grads();
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => store.get_mut(*id).grad.add_assign(&g),
                Op::MatMul(x, w) => {
                    let (tx, tw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                    let gx = g.matmul_t(tw)?;
                    let gw = tx.t_matmul(&g)?;
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *w, gw);
                }
                Op::Concat(xs) => {
                    let mut c0 = 0;
                    for &x in xs {
                        let cols = self.nodes[x.0].value.cols();
                        let mut gx = Tensor::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            gx.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + cols]);
                        }
                        c0 += cols;
                        acc(&mut grads, x, gx);
                    }
                }
                Op::Gather(x, index) => {
                    let src = &self.nodes[x.0].value;
                    let mut gx = Tensor::zeros(src.rows(), src.cols());
                    for (r, &j) in index.iter().enumerate() {
                        for (o, &v) in gx.row_mut(j).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    let mut neg = g.clone();
                    neg.data_mut().iter_mut().for_each(|v| *v = -*v);
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *b, neg);
                }
                Op::AddScalar(x) => acc(&mut grads, *x, g),
                Op::Sum(x) => {
                    let (r, c) = self.nodes[x.0].value.shape();
                    acc(&mut grads, *x, Tensor::filled(r, c, g.item()));
                }
                Op::Relu(x) => {
                    let input = &self.nodes[x.0].value;
                    let mut gx = g;
                    for (gv, &xv) in gx.data_mut().iter_mut().zip(input.data()) {
                        if xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Elu(x) => {
                    let input = &self.nodes[x.0].value;
                    let mut gx = g;
                    for ((gv, &xv), &yv) in gx.data_mut().iter_mut().zip(input.data()).zip(out.data()) {
                        if xv <= 0.0 {
                            *gv *= yv + 1.0;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::LeakyRelu(x, slope) => {
                    let input = &self.nodes[x.0].value;
                    let mut gx = g;
                    for (gv, &xv) in gx.data_mut().iter_mut().zip(input.data()) {
                        if xv < 0.0 {
                            *gv *= slope;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::NormalizeRows(x) => {
                    let input = &self.nodes[x.0].value;
                    let mut gx = Tensor::zeros(input.rows(), input.cols());
                    for r in 0..input.rows() {
                        let norm = input.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm == 0.0 {
                            continue;
                        }
                        let y = out.row(r);
                        let gy = g.row(r);
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for ((o, &yv), &gv) in gx.row_mut(r).iter_mut().zip(y).zip(gy) {
                            *o = (gv - yv * dot) / norm;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SegmentSoftmax(x, segments) => {
                    let mut gx = Tensor::zeros(out.rows(), 1);
                    for seg in 0..segments.count() {
                        let members = segments.members(seg);
                        let dot: f64 = members.iter().map(|&i| out.get(i, 0) * g.get(i, 0)).sum();
                        for &i in members {
                            gx.set(i, 0, out.get(i, 0) * (g.get(i, 0) - dot));
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::WeightedSegmentSum(w, v, segments) => {
                    let (tw, tv) = (&self.nodes[w.0].value, &self.nodes[v.0].value);
                    let mut gw = Tensor::zeros(tw.rows(), 1);
                    let mut gv = Tensor::zeros(tv.rows(), tv.cols());
                    for (i, &s) in segments.ids().iter().enumerate() {
                        let gs = g.row(s);
                        let dot: f64 = gs.iter().zip(tv.row(i)).map(|(a, b)| a * b).sum();
                        gw.set(i, 0, dot);
                        let wi = tw.get(i, 0);
                        for (o, &x) in gv.row_mut(i).iter_mut().zip(gs) {
                            *o = wi * x;
                        }
                    }
                    acc(&mut grads, *w, gw);
                    acc(&mut grads, *v, gv);
                }
                Op::RowDistance(a, b, metric) => {
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                    for r in 0..ta.rows() {
                        let gr = g.get(r, 0);
                        let d = out.get(r, 0);
                        for ((o, &x), &y) in ga.row_mut(r).iter_mut().zip(ta.row(r)).zip(tb.row(r)) {
                            *o = match metric {
                                Distance::L1 => {
                                    if x > y {
                                        gr
                                    } else if x < y {
                                        -gr
                                    } else {
                                        0.0
                                    }
                                }
                                Distance::L2 if d > 0.0 => gr * (x - y) / d,
                                Distance::L2 => 0.0,
                            };
                        }
                    }
                    let mut gb = ga.clone();
                    gb.data_mut().iter_mut().for_each(|v| *v = -*v);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
            }
        }
        self.nodes.clear();
        self.consumed = true;
        Ok(())
    }
}

fn sign_class(v: f64) -> u8 {
    match v.partial_cmp(&0.0) {
        Some(Ordering::Less) => 0,
        Some(Ordering::Equal) => 1,
        _ => 2,
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "constant",
        Op::Param(_) => "parameter",
        Op::MatMul(..) => "matmul",
        Op::Concat(_) => "concat",
        Op::Gather(..) => "gather_rows",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::AddScalar(_) => "add_scalar",
        Op::Relu(_) => "relu",
        Op::Elu(_) => "elu",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::NormalizeRows(_) => "l2_normalize_rows",
        Op::SegmentSoftmax(..) => "segment_softmax",
        Op::WeightedSegmentSum(..) => "weighted_segment_sum",
        Op::RowDistance(..) => "row_distance",
        Op::Sum(_) => "sum",
    }
}

/// Settings for [`gradient_check`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Denominator floor of the relative error, so gradients that are
    /// numerically zero are compared absolutely. The check raises it to the
    /// resolution of the finite differences, see [`GradCheckReport::floor`].
    pub floor: f64,
    /// Check at most this many evenly strided coordinates per parameter.
    pub max_coords_per_param: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
            max_coords_per_param: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates whose ±eps probes cross a piecewise-linear kink; their
    /// finite differences are not comparable and they are left out.
    pub skipped_at_kinks: usize,
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub tol: f64,
    /// Denominator floor actually used: the configured floor or
    /// `4·ε·max(|f|, 1) / (eps·tol)`, whichever is larger. Rounding `f` to
    /// one ulp moves a central difference by about `ε·|f| / eps`, so smaller
    /// gradients cannot be resolved to relative `tol`.
    pub floor: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

/// Compares reverse-mode gradients of `f` with central finite differences
/// `(f(θ+eps) − f(θ−eps)) / 2eps`, coordinate by coordinate.
pub fn gradient_check<F>(store: &ParamStore, f: F, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(cfg.eps > 0.0) {
        return Err(contract("gradient check needs eps > 0"));
    }
    let eval = |s: &ParamStore| -> Result<(f64, u64)> {
        let mut tape = Tape::new();
        tape.track_kinks();
        let out = f(&mut tape, s)?;
        Ok((tape.value(out).item(), tape.kink_signature().unwrap_or(0)))
    };

    let mut analytic = store.clone();
    let mut tape = Tape::new();
    tape.track_kinks();
    let loss = f(&mut tape, &analytic)?;
    let base_sig = tape.kink_signature().unwrap_or(0);
    let f0 = tape.value(loss).item();
    tape.backward(loss, &mut analytic)?;
    let floor = cfg.floor.max(4.0 * f64::EPSILON * f0.abs().max(1.0) / (cfg.eps * cfg.tol));

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        checked: 0,
        skipped_at_kinks: 0,
        max_rel_error: 0.0,
        worst: None,
        tol: cfg.tol,
        floor,
    };
    for (id, param) in store.iter() {
        let n = param.value.len();
        let stride = cfg.max_coords_per_param.map_or(1, |m| n.div_ceil(m.max(1)).max(1));
        for k in (0..n).step_by(stride) {
            let orig = param.value.data()[k];
            probe.get_mut(id).value.data_mut()[k] = orig + cfg.eps;
            let (plus, sig_plus) = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[k] = orig - cfg.eps;
            let (minus, sig_minus) = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[k] = orig;
            if sig_plus != base_sig || sig_minus != base_sig {
                report.skipped_at_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = analytic.get(id).grad.data()[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((param.name.clone(), k));
            }
        }
    }
    Ok(report)
}
