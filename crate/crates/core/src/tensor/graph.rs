//! Reverse-mode differentiation over a recorded tape of tensor ops.
//!
//! A [`Graph`] borrows the [`ParamStore`] immutably while it records a
//! forward pass. Parameters enter the tape by reference, so building a graph
//! never copies weights. [`Graph::backward`] walks the tape in reverse
//! creation order, which is a valid topological order by construction.

use super::array::strides;
use super::kernels::{col2im, gemm, im2col, MatLayout};
use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

enum Op {
    Input,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    AddBroadcast(Var, Var),
    Scale(Var, f32),
    Relu(Var),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: Conv2dSpec,
    },
    MeanLast(Var),
    SoftmaxLast(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        rstd: Vec<f32>,
    },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    ConcatLast(Vec<Var>),
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.get(*id),
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// An input that collects a gradient (used for gradient checks).
    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let needs_grad = self.store.is_trainable(id);
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(data, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(data, Op::Sub(a, b), ng))
    }

    /// `a + b` where `b` has the same rank as `a` and size 1 along broadcast axes.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa.iter().zip(&sb).any(|(x, y)| *y != *x && *y != 1) {
            return Err(Error::Shape(format!("cannot broadcast {sb:?} onto {sa:?}")));
        }
        let map = BroadcastMap::new(&sa, &sb);
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let mut out = va.to_vec();
        map.for_each(|i, j| out[i] += vb[j]);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&sa, out)?, Op::AddBroadcast(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let t = map(self.value(a), |x| x * s);
        let ng = self.needs(a);
        self.push(t, Op::Scale(a, s), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = map(self.value(a), |x| x.max(0.0));
        let ng = self.needs(a);
        self.push(t, Op::Relu(a), ng)
    }

    /// Batched matrix product over the two trailing axes.
    ///
    /// Leading (batch) axes must agree, or one side must have a single batch
    /// which is then shared. `ta`/`tb` read the operand as transposed.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let plan = MatMulPlan::new(self.shape(a), self.shape(b), ta, tb)?;
        let mut out = vec![0.0f32; plan.batch * plan.m * plan.n];
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        for bi in 0..plan.batch {
            let (ao, bo) = plan.offsets(bi);
            gemm(
                plan.m,
                plan.k,
                plan.n,
                &va[ao..],
                plan.a_layout(),
                &vb[bo..],
                plan.b_layout(),
                &mut out[bi * plan.m * plan.n..],
                MatLayout::row_major(plan.n),
                0.0,
            );
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&plan.out_shape, out)?, Op::MatMul { a, b, ta, tb }, ng))
    }

    /// 2-D convolution over `[N, C, H, W]` with a square `[Co, C, k, k]` kernel.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let geo = ConvGeometry::new(self.shape(x), self.shape(w), spec)?;
        if let Some(b) = b {
            if self.shape(b) != [geo.co] {
                return Err(Error::Shape(format!(
                    "conv bias must be [{}], got {:?}",
                    geo.co,
                    self.shape(b)
                )));
            }
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = b.map(|b| self.value(b).data());
        let ohw = geo.out_hw();
        let mut out = vec![0.0f32; geo.n * geo.co * ohw];
        let chunk = geo.chunk_len();
        let mut cols = vec![0.0f32; geo.col_rows() * chunk * ohw];
        let mut prod = vec![0.0f32; geo.co * chunk * ohw];
        for start in (0..geo.n).step_by(chunk) {
            let count = chunk.min(geo.n - start);
            let ld = count * ohw;
            for j in 0..count {
                im2col(&xv[(start + j) * geo.in_numel()..], &geo, &mut cols[j * ohw..], ld);
            }
            gemm(
                geo.co,
                geo.col_rows(),
                ld,
                wv,
                MatLayout::row_major(geo.col_rows()),
                &cols,
                MatLayout::row_major(ld),
                &mut prod,
                MatLayout::row_major(ld),
                0.0,
            );
            for j in 0..count {
                let dst = &mut out[(start + j) * geo.co * ohw..(start + j + 1) * geo.co * ohw];
                for (c, plane) in dst.chunks_mut(ohw).enumerate() {
                    let src = &prod[c * ld + j * ohw..c * ld + (j + 1) * ohw];
                    let bias = bv.map_or(0.0, |bv| bv[c]);
                    plane.iter_mut().zip(src).for_each(|(o, s)| *o = s + bias);
                }
            }
        }
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(
            Tensor::new(&[geo.n, geo.co, geo.ho, geo.wo], out)?,
            Op::Conv2d { x, w, b, spec },
            ng,
        ))
    }

    /// Mean over the last axis.
    pub fn mean_last(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (&len, lead) = shape
            .split_last()
            .ok_or_else(|| Error::Shape("mean of a rank-0 tensor".into()))?;
        let out: Vec<f32> = self
            .value(a)
            .data()
            .chunks(len)
            .map(|c| c.iter().sum::<f32>() / len as f32)
            .collect();
        let out_shape = if lead.is_empty() { vec![1] } else { lead.to_vec() };
        let ng = self.needs(a);
        Ok(self.push(Tensor::new(&out_shape, out)?, Op::MeanLast(a), ng))
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let len = *t.shape().last().expect("rank >= 1");
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(len) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let shape = t.shape().to_vec();
        let ng = self.needs(a);
        self.push(Tensor::new(&shape, out).expect("same shape"), Op::SoftmaxLast(a), ng)
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| Error::Shape("layer norm of rank-0".into()))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::Shape(format!("layer norm affine params must be [{d}]")));
        }
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let xv = self.value(x).data();
        let rows = xv.len() / d;
        let mut xhat = vec![0.0f32; xv.len()];
        let mut rstd = vec![0.0f32; rows];
        let mut out = vec![0.0f32; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + bt[j];
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let ng = self.needs(a);
        Ok(self.push(t, Op::Reshape(a), ng))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let t = permute(self.value(a), perm)?;
        let ng = self.needs(a);
        Ok(self.push(t, Op::Permute(a, perm.to_vec()), ng))
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(Error::Shape(format!("concat operand {s:?} vs leading {lead:?}")));
            }
            total += s[s.len() - 1];
        }
        let mut out = vec![0.0f32; rows * total];
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            let w = t.shape()[t.ndim() - 1];
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w].copy_from_slice(&t.data()[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let mut shape = lead;
        shape.push(total);
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(&shape, out)?, Op::ConcatLast(parts.to_vec()), ng))
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// Back-propagates the given output gradients through the tape.
    pub fn backward(&self, seeds: &[(Var, Tensor)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut params: Vec<Option<Tensor>> = vec![None; self.store.len()];
        for (v, g) in seeds {
            if g.shape() != self.shape(*v) {
                return Err(Error::Shape(format!(
                    "seed gradient {:?} for value {:?}",
                    g.shape(),
                    self.shape(*v)
                )));
            }
            accumulate(&mut grads[v.0], g.clone());
        }
        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads, &mut params)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        params: &mut [Option<Tensor>],
    ) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Input => {}
            Op::Param(id) => accumulate(&mut params[id.0], g.clone()),
            Op::Add(a, b) => {
                self.send(grads, *a, || g.clone());
                self.send(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.send(grads, *a, || g.clone());
                self.send(grads, *b, || map(g, |x| -x));
            }
            Op::AddBroadcast(a, b) => {
                self.send(grads, *a, || g.clone());
                self.send(grads, *b, || {
                    let sb = self.shape(*b);
                    let map = BroadcastMap::new(g.shape(), sb);
                    let mut out = vec![0.0f32; sb.iter().product()];
                    map.for_each(|i, j| out[j] += g.data()[i]);
                    Tensor::new(sb, out).expect("same shape")
                });
            }
            Op::Scale(a, s) => self.send(grads, *a, || map(g, |x| x * s)),
            Op::Relu(a) => {
                let y = node.value.as_ref().expect("relu value");
                self.send(grads, *a, || zip_map(g, y, |gv, yv| if yv > 0.0 { gv } else { 0.0 }))
            }
            Op::MatMul { a, b, ta, tb } => {
                let plan = MatMulPlan::new(self.shape(*a), self.shape(*b), *ta, *tb)?;
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let gd = g.data();
                let mn = plan.m * plan.n;
                if self.needs(*a) {
                    let mut da = vec![0.0f32; self.value(*a).numel()];
                    let a_store = plan.a_layout();
                    for bi in 0..plan.batch {
                        let (ao, bo) = plan.offsets(bi);
                        let beta = if plan.a_batch == 1 && bi > 0 { 1.0 } else { 0.0 };
                        // dA = dC · Bᵀ
                        gemm(
                            plan.m,
                            plan.n,
                            plan.k,
                            &gd[bi * mn..],
                            MatLayout::row_major(plan.n),
                            &vb[bo..],
                            plan.b_layout().transposed(),
                            &mut da[ao..],
                            a_store,
                            beta,
                        );
                    }
                    accumulate(&mut grads[a.0], Tensor::new(self.shape(*a), da)?);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0f32; self.value(*b).numel()];
                    let b_store = plan.b_layout();
                    for bi in 0..plan.batch {
                        let (ao, bo) = plan.offsets(bi);
                        let beta = if plan.b_batch == 1 && bi > 0 { 1.0 } else { 0.0 };
                        // dB = Aᵀ · dC
                        gemm(
                            plan.k,
                            plan.m,
                            plan.n,
                            &va[ao..],
                            plan.a_layout().transposed(),
                            &gd[bi * mn..],
                            MatLayout::row_major(plan.n),
                            &mut db[bo..],
                            b_store,
                            beta,
                        );
                    }
                    accumulate(&mut grads[b.0], Tensor::new(self.shape(*b), db)?);
                }
            }
            Op::Conv2d { x, w, b, spec } => {
                let geo = ConvGeometry::new(self.shape(*x), self.shape(*w), *spec)?;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let gd = g.data();
                let ohw = geo.out_hw();
                let need_x = self.needs(*x);
                let need_w = self.needs(*w);
                let mut dw = vec![0.0f32; if need_w { wv.len() } else { 0 }];
                let mut dx = vec![0.0f32; if need_x { xv.len() } else { 0 }];
                let chunk = geo.chunk_len();
                let mut cols = vec![0.0f32; if need_w { geo.col_rows() * chunk * ohw } else { 0 }];
                let mut dcols = vec![0.0f32; if need_x { geo.col_rows() * chunk * ohw } else { 0 }];
                let mut gathered = vec![0.0f32; geo.co * chunk * ohw];
                for start in (0..geo.n).step_by(chunk) {
                    let count = chunk.min(geo.n - start);
                    let ld = count * ohw;
                    for j in 0..count {
                        let gn = &gd[(start + j) * geo.co * ohw..(start + j + 1) * geo.co * ohw];
                        for (c, plane) in gn.chunks(ohw).enumerate() {
                            gathered[c * ld + j * ohw..c * ld + (j + 1) * ohw].copy_from_slice(plane);
                        }
                    }
                    if need_w {
                        for j in 0..count {
                            im2col(&xv[(start + j) * geo.in_numel()..], &geo, &mut cols[j * ohw..], ld);
                        }
                        gemm(
                            geo.co,
                            ld,
                            geo.col_rows(),
                            &gathered,
                            MatLayout::row_major(ld),
                            &cols,
                            MatLayout::row_major(ld).transposed(),
                            &mut dw,
                            MatLayout::row_major(geo.col_rows()),
                            1.0,
                        );
                    }
                    if need_x {
                        gemm(
                            geo.col_rows(),
                            geo.co,
                            ld,
                            wv,
                            MatLayout::row_major(geo.col_rows()).transposed(),
                            &gathered,
                            MatLayout::row_major(ld),
                            &mut dcols,
                            MatLayout::row_major(ld),
                            0.0,
                        );
                        for j in 0..count {
                            col2im(&dcols[j * ohw..], &geo, &mut dx[(start + j) * geo.in_numel()..], ld);
                        }
                    }
                }
                if need_w {
                    accumulate(&mut grads[w.0], Tensor::new(self.shape(*w), dw)?);
                }
                if need_x {
                    accumulate(&mut grads[x.0], Tensor::new(self.shape(*x), dx)?);
                }
                if let Some(b) = b {
                    self.send(grads, *b, || {
                        let mut db = vec![0.0f32; geo.co];
                        for (ci, chunk) in gd.chunks(ohw).enumerate() {
                            db[ci % geo.co] += chunk.iter().sum::<f32>();
                        }
                        Tensor::new(&[geo.co], db).expect("bias shape")
                    });
                }
            }
            Op::MeanLast(a) => self.send(grads, *a, || {
                let sa = self.shape(*a);
                let len = sa[sa.len() - 1];
                let mut out = Vec::with_capacity(len * g.numel());
                for &gv in g.data() {
                    out.extend(std::iter::repeat_n(gv / len as f32, len));
                }
                Tensor::new(sa, out).expect("same shape")
            }),
            Op::SoftmaxLast(a) => {
                let y = node.value.as_ref().expect("softmax value");
                self.send(grads, *a, || {
                    let len = y.shape()[y.ndim() - 1];
                    let mut out = vec![0.0f32; y.numel()];
                    for ((o, yr), gr) in out.chunks_mut(len).zip(y.data().chunks(len)).zip(g.data().chunks(len)) {
                        let dot: f32 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..len {
                            o[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    Tensor::new(y.shape(), out).expect("same shape")
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = *self.shape(*x).last().expect("rank");
                let gam = self.value(*gamma).data();
                let gd = g.data();
                if self.needs(*gamma) {
                    let mut dg = vec![0.0f32; d];
                    for (gr, hr) in gd.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                    accumulate(&mut grads[gamma.0], Tensor::new(&[d], dg)?);
                }
                if self.needs(*beta) {
                    let mut db = vec![0.0f32; d];
                    for gr in gd.chunks(d) {
                        for j in 0..d {
                            db[j] += gr[j];
                        }
                    }
                    accumulate(&mut grads[beta.0], Tensor::new(&[d], db)?);
                }
                if self.needs(*x) {
                    let mut dx = vec![0.0f32; gd.len()];
                    for (r, (gr, hr)) in gd.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let mut mean_gh = 0.0;
                        let mut mean_ghx = 0.0;
                        for j in 0..d {
                            let gh = gr[j] * gam[j];
                            mean_gh += gh;
                            mean_ghx += gh * hr[j];
                        }
                        mean_gh /= d as f32;
                        mean_ghx /= d as f32;
                        for j in 0..d {
                            dx[r * d + j] = rstd[r] * (gr[j] * gam[j] - mean_gh - hr[j] * mean_ghx);
                        }
                    }
                    accumulate(&mut grads[x.0], Tensor::new(self.shape(*x), dx)?);
                }
            }
            Op::Reshape(a) => self.send(grads, *a, || g.clone().reshape(self.shape(*a)).expect("same numel")),
            Op::Permute(a, perm) => self.send(grads, *a, || {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                permute(g, &inv).expect("valid inverse permutation")
            }),
            Op::ConcatLast(parts) => {
                let total = g.shape()[g.ndim() - 1];
                let rows = g.numel() / total;
                let mut offset = 0;
                for &p in parts {
                    let sp = self.shape(p).to_vec();
                    let w = sp[sp.len() - 1];
                    self.send(grads, p, || {
                        let mut out = vec![0.0f32; rows * w];
                        for r in 0..rows {
                            out[r * w..(r + 1) * w]
                                .copy_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        Tensor::new(&sp, out).expect("same shape")
                    });
                    offset += w;
                }
            }
        }
        Ok(())
    }

    fn send(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce() -> Tensor) {
        if self.needs(v) {
            accumulate(&mut grads[v.0], f());
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn map(t: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    Tensor::new(t.shape(), t.data().iter().map(|&x| f(x)).collect()).expect("same shape")
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    Tensor::new(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("same shape")
}

pub(crate) fn permute(t: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let shape = t.shape();
    let mut seen = vec![false; shape.len()];
    if perm.len() != shape.len()
        || perm
            .iter()
            .any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
    {
        return Err(Error::Shape(format!("invalid permutation {perm:?} for {shape:?}")));
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(t.numel());
    let mut idx = vec![0usize; out_shape.len()];
    let data = t.data();
    for _ in 0..t.numel() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(data[off]);
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor::new(&out_shape, out)
}

/// Maps each flat index of a full shape to the flat index of a broadcast operand.
struct BroadcastMap {
    shape: Vec<usize>,
    b_strides: Vec<usize>,
}

impl BroadcastMap {
    fn new(full: &[usize], small: &[usize]) -> Self {
        let s = strides(small);
        BroadcastMap {
            shape: full.to_vec(),
            b_strides: small
                .iter()
                .zip(s)
                .map(|(&d, st)| if d == 1 { 0 } else { st })
                .collect(),
        }
    }

    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let total: usize = self.shape.iter().product();
        let mut idx = vec![0usize; self.shape.len()];
        let mut j = 0usize;
        for i in 0..total {
            f(i, j);
            for ax in (0..idx.len()).rev() {
                idx[ax] += 1;
                j += self.b_strides[ax];
                if idx[ax] < self.shape[ax] {
                    break;
                }
                j -= self.b_strides[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
    }
}

struct MatMulPlan {
    m: usize,
    k: usize,
    n: usize,
    batch: usize,
    a_batch: usize,
    b_batch: usize,
    ta: bool,
    tb: bool,
    out_shape: Vec<usize>,
}

impl MatMulPlan {
    fn new(sa: &[usize], sb: &[usize], ta: bool, tb: bool) -> Result<Self> {
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::Shape(format!("matmul needs rank >= 2: {sa:?} x {sb:?}")));
        }
        let (ra, ca) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (rb, cb) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let (m, ka) = if ta { (ca, ra) } else { (ra, ca) };
        let (kb, n) = if tb { (cb, rb) } else { (rb, cb) };
        if ka != kb {
            return Err(Error::Shape(format!(
                "matmul inner dims differ: {sa:?}{} x {sb:?}{}",
                if ta { "ᵀ" } else { "" },
                if tb { "ᵀ" } else { "" }
            )));
        }
        let lead_a = &sa[..sa.len() - 2];
        let lead_b = &sb[..sb.len() - 2];
        let a_batch: usize = lead_a.iter().product();
        let b_batch: usize = lead_b.iter().product();
        let lead = if a_batch > b_batch || (a_batch == b_batch && lead_a.len() >= lead_b.len()) {
            lead_a
        } else {
            lead_b
        };
        if a_batch != b_batch && a_batch != 1 && b_batch != 1 {
            return Err(Error::Shape(format!("matmul batch dims differ: {sa:?} x {sb:?}")));
        }
        if a_batch == b_batch && lead_a != lead_b && !lead_a.is_empty() && !lead_b.is_empty() {
            return Err(Error::Shape(format!("matmul batch dims differ: {sa:?} x {sb:?}")));
        }
        let mut out_shape = lead.to_vec();
        out_shape.push(m);
        out_shape.push(n);
        Ok(MatMulPlan {
            m,
            k: ka,
            n,
            batch: a_batch.max(b_batch),
            a_batch,
            b_batch,
            ta,
            tb,
            out_shape,
        })
    }

    fn offsets(&self, bi: usize) -> (usize, usize) {
        let ao = if self.a_batch == 1 { 0 } else { bi * self.m * self.k };
        let bo = if self.b_batch == 1 { 0 } else { bi * self.k * self.n };
        (ao, bo)
    }

    /// Layout of the logical `m × k` left operand inside its storage.
    fn a_layout(&self) -> MatLayout {
        if self.ta {
            MatLayout::row_major(self.m).transposed()
        } else {
            MatLayout::row_major(self.k)
        }
    }

    /// Layout of the logical `k × n` right operand inside its storage.
    fn b_layout(&self) -> MatLayout {
        if self.tb {
            MatLayout::row_major(self.k).transposed()
        } else {
            MatLayout::row_major(self.n)
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeometry {
    fn new(sx: &[usize], sw: &[usize], spec: Conv2dSpec) -> Result<Self> {
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sx[1] || sw[2] != sw[3] {
            return Err(Error::Shape(format!("conv2d input {sx:?} with kernel {sw:?}")));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (co, k) = (sw[0], sw[2]);
        if spec.stride == 0 || h + 2 * spec.padding < k || w + 2 * spec.padding < k {
            return Err(Error::Shape(format!("conv2d kernel {k} too large for {h}x{w}")));
        }
        Ok(ConvGeometry {
            n,
            c,
            h,
            w,
            co,
            k,
            stride: spec.stride,
            pad: spec.padding,
            ho: (h + 2 * spec.padding - k) / spec.stride + 1,
            wo: (w + 2 * spec.padding - k) / spec.stride + 1,
        })
    }

    pub fn out_hw(&self) -> usize {
        self.ho * self.wo
    }

    pub fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn in_numel(&self) -> usize {
        self.c * self.h * self.w
    }

    /// Samples unfolded together, keeping the patch buffer near cache size.
    pub fn chunk_len(&self) -> usize {
        let per_sample = self.col_rows().max(self.co) * self.out_hw();
        ((1 << 18) / per_sample.max(1)).clamp(1, self.n.max(1))
    }
}
