//! Reverse-mode differentiation over a linear operation tape.
//!
//! Every operation appends a node holding its forward value. Nodes are stored
//! in creation order, which is a topological order, so `backward` simply walks
//! the tape in reverse. All reductions accumulate in ascending index order so
//! that identical inputs give bit-identical outputs and gradients.

use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{AstgiError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    AddBias { a: Var, bias: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Scale { a: Var, factor: f64 },
    Relu { a: Var },
    Concat { parts: Vec<Var>, axis: usize },
    GatherRows { a: Var, index: Vec<usize> },
    SegmentSoftmax { a: Var, offsets: Vec<usize> },
    SegmentWeightedSum { values: Var, weights: Var, offsets: Vec<usize> },
    LayerNormRows { x: Var, gain: Var, bias: Var, normalized: Vec<f64>, inv_std: Vec<f64> },
    Mse { pred: Var, target: Vec<f64> },
    Reshape { a: Var },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> AstgiError {
    AstgiError::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn check_offsets(offsets: &[usize], len: usize) -> Result<()> {
    let ok = !offsets.is_empty()
        && offsets[0] == 0
        && *offsets.last().unwrap() == len
        && offsets.windows(2).all(|w| w[0] <= w[1]);
    if ok {
        Ok(())
    } else {
        Err(AstgiError::Contract(format!(
            "segment offsets must rise from 0 to {len}"
        )))
    }
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a named parameter as a differentiable leaf. Binding the same
    /// name twice returns the original handle.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.leaf(value.clone());
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn bound_params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Gradients of every bound parameter, zero-filled where no path exists.
    pub fn param_grads(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(name, &v)| {
                let node = &self.nodes[v.0];
                let g = node
                    .grad
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                (name.clone(), g)
            })
            .collect()
    }

    // ---------------------------------------------------------------------
    // forward operations

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", sa, sb));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let av = self.value(a).values();
        let bv = self.value(b).values();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let aip = av[i * k + p];
                let brow = &bv[p * m..(p + 1) * m];
                for (o, &bpj) in orow.iter_mut().zip(brow) {
                    *o += aip * bpj;
                }
            }
        }
        let value = Tensor::matrix(n, m, out)?;
        Ok(self.push(value, Op::MatMul { a, b }, &[a, b]))
    }

    /// Adds a `[m]` bias to every row of a `[.., m]` tensor.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        let m = sa.last().copied().unwrap_or(1);
        if sb.len() != 1 || sb[0] != m || sa.is_empty() {
            return Err(dim_err("add_bias", sa, sb));
        }
        let bv = self.value(bias).values().to_vec();
        let mut value = self.value(a).clone();
        for row in value.values_mut().chunks_mut(m.max(1)) {
            for (x, b) in row.iter_mut().zip(&bv) {
                *x += b;
            }
        }
        Ok(self.push(value, Op::AddBias { a, bias }, &[a, bias]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "add", |x, y| x + y)
            .map(|value| self.push(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "sub", |x, y| x - y)
            .map(|value| self.push(value, Op::Sub { a, b }, &[a, b]))
    }

    fn elementwise(&self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(op, ta.shape(), tb.shape()));
        }
        let values = ta.values().iter().zip(tb.values()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), values)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let mut value = self.value(a).clone();
        value.scale_assign(factor);
        self.push(value, Op::Scale { a, factor }, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for v in value.values_mut() {
            if *v <= 0.0 {
                *v = 0.0;
            }
        }
        self.push(value, Op::Relu { a }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { a }, &[a]))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| AstgiError::Contract("concat of zero parts".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(dim_err("concat", &base, &[axis]));
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(dim_err("concat", &base, s));
            }
            axis_total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut shape = base.clone();
        shape[axis] = axis_total;
        let mut out = Vec::with_capacity(outer * axis_total * inner);
        for o in 0..outer {
            for &p in parts {
                let block = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).values()[o * block..(o + 1) * block]);
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// Selects rows of a matrix; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(dim_err("gather_rows", s, &[2]));
        }
        let (n, m) = (s[0], s[1]);
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(AstgiError::Contract(format!(
                "gather_rows index {bad} out of range for {n} rows"
            )));
        }
        let av = self.value(a).values();
        let mut out = Vec::with_capacity(index.len() * m);
        for &i in index {
            out.extend_from_slice(&av[i * m..(i + 1) * m]);
        }
        let value = Tensor::matrix(index.len(), m, out)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                a,
                index: index.to_vec(),
            },
            &[a],
        ))
    }

    /// Softmax within each segment `[offsets[s], offsets[s+1])` of a flat
    /// score list. Empty segments produce no outputs.
    pub fn segment_softmax(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        let t = self.value(a);
        check_offsets(offsets, t.numel())?;
        let mut value = t.clone();
        let vals = value.values_mut();
        for w in offsets.windows(2) {
            let seg = &mut vals[w[0]..w[1]];
            if seg.is_empty() {
                continue;
            }
            let max = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in seg.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in seg.iter_mut() {
                *v /= total;
            }
        }
        Ok(self.push(
            value,
            Op::SegmentSoftmax {
                a,
                offsets: offsets.to_vec(),
            },
            &[a],
        ))
    }

    /// Softmax over a whole score vector.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(AstgiError::EmptyNeighborhood);
        }
        self.segment_softmax(a, &[0, n])
    }

    /// Row `s` of the result is `sum_e weights[e] * values[e]` over the
    /// entries of segment `s`, accumulated in entry order. Empty segments
    /// give a zero row.
    pub fn segment_weighted_sum(&mut self, values: Var, weights: Var, offsets: &[usize]) -> Result<Var> {
        let sv = self.shape(values).to_vec();
        if sv.len() != 2 {
            return Err(dim_err("segment_weighted_sum", &sv, &[2]));
        }
        let (e, m) = (sv[0], sv[1]);
        if self.value(weights).numel() != e {
            return Err(dim_err("segment_weighted_sum", &sv, self.shape(weights)));
        }
        check_offsets(offsets, e)?;
        let vv = self.value(values).values();
        let wv = self.value(weights).values();
        let segments = offsets.len() - 1;
        let mut out = vec![0.0; segments * m];
        for s in 0..segments {
            let orow = &mut out[s * m..(s + 1) * m];
            for k in offsets[s]..offsets[s + 1] {
                let w = wv[k];
                for (o, &x) in orow.iter_mut().zip(&vv[k * m..(k + 1) * m]) {
                    *o += w * x;
                }
            }
        }
        let value = Tensor::matrix(segments, m, out)?;
        Ok(self.push(
            value,
            Op::SegmentWeightedSum {
                values,
                weights,
                offsets: offsets.to_vec(),
            },
            &[values, weights],
        ))
    }

    /// Layer normalization applied independently to each row (last axis).
    /// Variance is the biased, divide-by-d estimate.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().ok_or_else(|| dim_err("layer_norm", &sx, &[]))?;
        if d == 0 {
            return Err(dim_err("layer_norm", &sx, &[]));
        }
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(dim_err("layer_norm", &sx, self.shape(p)));
            }
        }
        let xv = self.value(x).values();
        let gv = self.value(gain).values();
        let bv = self.value(bias).values();
        let rows = xv.len() / d;
        let mut normalized = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[r] = istd;
            for j in 0..d {
                let xh = (row[j] - mean) * istd;
                normalized[r * d + j] = xh;
                out[r * d + j] = xh * gv[j] + bv[j];
            }
        }
        let value = Tensor::new(sx, out)?;
        Ok(self.push(
            value,
            Op::LayerNormRows {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Mean squared error against constant targets; returns a scalar.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.numel() != target.len() {
            return Err(dim_err("mse", p.shape(), &[target.len()]));
        }
        if target.is_empty() {
            return Err(AstgiError::EmptyQuery);
        }
        let n = target.len() as f64;
        let total: f64 = p
            .values()
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let value = Tensor::scalar(total / n);
        Ok(self.push(
            value,
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            &[pred],
        ))
    }

    // ---------------------------------------------------------------------
    // reverse pass

    /// Accumulates d(loss)/d(node) into every reachable differentiable node.
    /// Gradients add onto whatever a previous call left behind.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(AstgiError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut adj);
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(existing) => existing.add_assign(&g),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let gv = g.values();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k) = (ta.shape()[0], ta.shape()[1]);
                let m = tb.shape()[1];
                let (av, bv) = (ta.values(), tb.values());
                if self.requires_grad(*a) {
                    // da = g · bᵀ
                    let mut da = vec![0.0; n * k];
                    for i in 0..n {
                        let grow = &gv[i * m..(i + 1) * m];
                        for p in 0..k {
                            let brow = &bv[p * m..(p + 1) * m];
                            da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    accumulate(adj, *a, ta.shape(), da);
                }
                if self.requires_grad(*b) {
                    // db = aᵀ · g
                    let mut db = vec![0.0; k * m];
                    for i in 0..n {
                        let grow = &gv[i * m..(i + 1) * m];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            for (o, &x) in db[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                *o += aip * x;
                            }
                        }
                    }
                    accumulate(adj, *b, tb.shape(), db);
                }
            }
            Op::AddBias { a, bias } => {
                if self.requires_grad(*a) {
                    accumulate(adj, *a, g.shape(), gv.to_vec());
                }
                if self.requires_grad(*bias) {
                    let m = self.shape(*bias)[0];
                    let mut db = vec![0.0; m];
                    for row in gv.chunks(m.max(1)) {
                        for (o, x) in db.iter_mut().zip(row) {
                            *o += x;
                        }
                    }
                    accumulate(adj, *bias, &[m], db);
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if self.requires_grad(v) {
                        accumulate(adj, v, g.shape(), gv.to_vec());
                    }
                }
            }
            Op::Sub { a, b } => {
                if self.requires_grad(*a) {
                    accumulate(adj, *a, g.shape(), gv.to_vec());
                }
                if self.requires_grad(*b) {
                    accumulate(adj, *b, g.shape(), gv.iter().map(|x| -x).collect());
                }
            }
            Op::Scale { a, factor } => {
                if self.requires_grad(*a) {
                    accumulate(adj, *a, g.shape(), gv.iter().map(|x| x * factor).collect());
                }
            }
            Op::Relu { a } => {
                if self.requires_grad(*a) {
                    let xv = self.value(*a).values();
                    let d = gv
                        .iter()
                        .zip(xv)
                        .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                        .collect();
                    accumulate(adj, *a, g.shape(), d);
                }
            }
            Op::Reshape { a } => {
                if self.requires_grad(*a) {
                    accumulate(adj, *a, self.shape(*a), gv.to_vec());
                }
            }
            Op::Concat { parts, axis } => {
                let shape = g.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut start = 0;
                for &p in parts {
                    let ps = self.shape(p);
                    let block = ps[*axis] * inner;
                    if self.requires_grad(p) {
                        let mut d = Vec::with_capacity(outer * block);
                        for o in 0..outer {
                            d.extend_from_slice(&gv[o * row + start..o * row + start + block]);
                        }
                        accumulate(adj, p, ps, d);
                    }
                    start += block;
                }
            }
            Op::GatherRows { a, index } => {
                if self.requires_grad(*a) {
                    let sa = self.shape(*a);
                    let m = sa[1];
                    let mut d = vec![0.0; sa[0] * m];
                    for (r, &i) in index.iter().enumerate() {
                        for (o, x) in d[i * m..(i + 1) * m].iter_mut().zip(&gv[r * m..(r + 1) * m]) {
                            *o += x;
                        }
                    }
                    accumulate(adj, *a, sa, d);
                }
            }
            Op::SegmentSoftmax { a, offsets } => {
                if self.requires_grad(*a) {
                    let pv = node.value.values();
                    let mut d = vec![0.0; pv.len()];
                    for w in offsets.windows(2) {
                        let dot: f64 = (w[0]..w[1]).map(|k| pv[k] * gv[k]).sum();
                        for k in w[0]..w[1] {
                            d[k] = pv[k] * (gv[k] - dot);
                        }
                    }
                    accumulate(adj, *a, self.shape(*a), d);
                }
            }
            Op::SegmentWeightedSum {
                values,
                weights,
                offsets,
            } => {
                let tv = self.value(*values);
                let m = tv.shape()[1];
                let vv = tv.values();
                let wv = self.value(*weights).values();
                let need_v = self.requires_grad(*values);
                let need_w = self.requires_grad(*weights);
                let mut dv = if need_v { vec![0.0; vv.len()] } else { Vec::new() };
                let mut dw = if need_w { vec![0.0; wv.len()] } else { Vec::new() };
                for (s, w) in offsets.windows(2).enumerate() {
                    let grow = &gv[s * m..(s + 1) * m];
                    for k in w[0]..w[1] {
                        if need_v {
                            for (o, &x) in dv[k * m..(k + 1) * m].iter_mut().zip(grow) {
                                *o += wv[k] * x;
                            }
                        }
                        if need_w {
                            dw[k] = vv[k * m..(k + 1) * m].iter().zip(grow).map(|(a, b)| a * b).sum();
                        }
                    }
                }
                if need_v {
                    accumulate(adj, *values, tv.shape(), dv);
                }
                if need_w {
                    accumulate(adj, *weights, self.shape(*weights), dw);
                }
            }
            Op::LayerNormRows {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let d = self.shape(*gain)[0];
                let gainv = self.value(*gain).values();
                let rows = inv_std.len();
                if self.requires_grad(*x) {
                    let mut dx = vec![0.0; rows * d];
                    for r in 0..rows {
                        let grow = &gv[r * d..(r + 1) * d];
                        let xh = &normalized[r * d..(r + 1) * d];
                        let dxh: Vec<f64> = grow.iter().zip(gainv).map(|(a, b)| a * b).collect();
                        let mean_dxh = dxh.iter().sum::<f64>() / d as f64;
                        let mean_dxh_xh = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            dx[r * d + j] = inv_std[r] * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                    accumulate(adj, *x, self.shape(*x), dx);
                }
                if self.requires_grad(*gain) {
                    let mut dg = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] += gv[r * d + j] * normalized[r * d + j];
                        }
                    }
                    accumulate(adj, *gain, &[d], dg);
                }
                if self.requires_grad(*bias) {
                    let mut db = vec![0.0; d];
                    for row in gv.chunks(d) {
                        for (o, x) in db.iter_mut().zip(row) {
                            *o += x;
                        }
                    }
                    accumulate(adj, *bias, &[d], db);
                }
            }
            Op::Mse { pred, target } => {
                if self.requires_grad(*pred) {
                    let n = target.len() as f64;
                    let g0 = gv[0];
                    let d = self
                        .value(*pred)
                        .values()
                        .iter()
                        .zip(target)
                        .map(|(p, t)| g0 * 2.0 * (p - t) / n)
                        .collect();
                    accumulate(adj, *pred, self.shape(*pred), d);
                }
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, shape: &[usize], d: Vec<f64>) {
    match &mut adj[v.0] {
        Some(existing) => {
            for (a, b) in existing.values_mut().iter_mut().zip(&d) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), d).expect("gradient shape matches value"));
        }
    }
}
