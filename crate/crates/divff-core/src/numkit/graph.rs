use super::tensor::{gemm_nt, gemm_tn, Tensor};
use super::{NumError, Result};
use crate::real::Real;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
enum Unary {
    Relu,
    Softplus,
    Sigmoid,
    Exp,
    Ln,
    SafeRecip,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul,
    AddBias,
    Add,
    Sub,
    Mul,
    SafeDiv,
    Unary(Unary),
    /// y = a*x + b with scalar constants (covers scale, shift, negate).
    Affine {
        a: f64,
        b: f64,
    },
    SumAll,
    MeanAll,
    /// [r,k,c] -> [r,c], summing the middle axis.
    SumMid {
        r: usize,
        k: usize,
        c: usize,
    },
    /// x[r,k,c] * w[r,k], broadcasting w over the trailing axis.
    BcastMulMid {
        r: usize,
        k: usize,
        c: usize,
    },
    /// x[r,c] * s[r], broadcasting s over columns.
    ScaleRows,
    /// Exclusive prefix sum along each row of [r,k].
    CumsumExclRows,
    /// Row gather: out[i,:] = x[idx[i],:].
    GatherRows {
        idx: Vec<usize>,
    },
    ConcatCols,
    /// Row-wise x/max(|x|,eps) with exact unit norm when |x| >= eps.
    L2NormRows {
        eps: f64,
    },
    Reshape,
}

struct Node<T> {
    op: Op,
    parents: Vec<usize>,
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    needs_grad: bool,
}

/// Append-only tape of tensor operations; creation order is topological.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn stable_softplus<T: Real>(x: T) -> T {
    let hi = T::of(20.0);
    if x > hi {
        x
    } else if x < -hi {
        x.exp()
    } else {
        (T::one() + x.exp()).ln()
    }
}

fn stable_sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, parents: Vec<usize>, value: Tensor<T>) -> Var {
        let needs_grad = match op {
            Op::Leaf => false,
            _ => parents.iter().any(|&p| self.nodes[p].needs_grad),
        };
        self.nodes.push(Node { op, parents, value, grad: None, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(Op::Leaf, vec![], value);
        self.nodes[v.0].needs_grad = true;
        v
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, vec![], value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated on a node (zeros if backward never touched it).
    pub fn grad(&self, v: Var) -> Tensor<T> {
        match &self.nodes[v.0].grad {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes[v.0].value.shape()),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(NumError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        Ok(self.push(Op::MatMul, vec![a.0, b.0], value))
    }

    /// x[M,N] + b[N] broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let cols = self.nodes[x.0].value.cols();
        if self.nodes[b.0].value.len() != cols {
            return Err(NumError::ShapeMismatch {
                op: "add_bias",
                detail: format!("x cols {} vs bias {}", cols, self.nodes[b.0].value.len()),
            });
        }
        let xv = &self.nodes[x.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = xv.clone();
        for row in out.data_mut().chunks_exact_mut(cols) {
            for (o, &add) in row.iter_mut().zip(bv.data()) {
                *o += add;
            }
        }
        Ok(self.push(Op::AddBias, vec![x.0, b.0], out))
    }

    fn binary(&mut self, op: Op, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Var {
        let out = Tensor::new(
            self.nodes[a.0].value.shape(),
            self.nodes[a.0]
                .value
                .data()
                .iter()
                .zip(self.nodes[b.0].value.data())
                .map(|(&x, &y)| f(x, y))
                .collect(),
        )
        .expect("same shape");
        self.push(op, vec![a.0, b.0], out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.binary(Op::Add, a, b, |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.binary(Op::Sub, a, b, |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.binary(Op::Mul, a, b, |x, y| x * y))
    }

    /// a/b where b==0 yields 0 (density-share convention: empty samples drop out).
    pub fn safe_div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "safe_div")?;
        Ok(self.binary(Op::SafeDiv, a, b, |x, y| if y == T::zero() { T::zero() } else { x / y }))
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Var {
        let f = |v: T| -> T {
            match kind {
                Unary::Relu => {
                    if v > T::zero() {
                        v
                    } else {
                        T::zero()
                    }
                }
                Unary::Softplus => stable_softplus(v),
                Unary::Sigmoid => stable_sigmoid(v),
                Unary::Exp => v.exp(),
                Unary::Ln => v.ln(),
                Unary::SafeRecip => {
                    if v == T::zero() {
                        T::zero()
                    } else {
                        T::one() / v
                    }
                }
            }
        };
        let out = self.nodes[x.0].value.map(f);
        self.push(Op::Unary(kind), vec![x.0], out)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(Unary::Softplus, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(Unary::Ln, x)
    }

    pub fn safe_recip(&mut self, x: Var) -> Var {
        self.unary(Unary::SafeRecip, x)
    }

    /// a*x + b elementwise, scalar constants.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        let (ta, tb) = (T::of(a), T::of(b));
        let out = self.nodes[x.0].value.map(|v| ta * v + tb);
        self.push(Op::Affine { a, b }, vec![x.0], out)
    }

    pub fn scale(&mut self, x: Var, a: f64) -> Var {
        self.affine(x, a, 0.0)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 0.0)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data().iter().copied().sum::<T>();
        self.push(Op::SumAll, vec![x.0], Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.len().max(1);
        let s = self.nodes[x.0].value.data().iter().copied().sum::<T>() / T::of(n as f64);
        self.push(Op::MeanAll, vec![x.0], Tensor::scalar(s))
    }

    /// Sum of squared differences, as a scalar.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.sum(sq))
    }

    /// [r,k,c] -> [r,c] summing over the middle axis.
    pub fn sum_mid(&mut self, x: Var, r: usize, k: usize, c: usize) -> Result<Var> {
        if self.nodes[x.0].value.len() != r * k * c {
            return Err(NumError::ShapeMismatch {
                op: "sum_mid",
                detail: format!("len {} vs {}x{}x{}", self.nodes[x.0].value.len(), r, k, c),
            });
        }
        let xd = self.nodes[x.0].value.data();
        let mut out = vec![T::zero(); r * c];
        for ri in 0..r {
            let orow = &mut out[ri * c..(ri + 1) * c];
            for ki in 0..k {
                let base = (ri * k + ki) * c;
                for (o, &v) in orow.iter_mut().zip(&xd[base..base + c]) {
                    *o += v;
                }
            }
        }
        let value = Tensor::new(&[r, c], out)?;
        Ok(self.push(Op::SumMid { r, k, c }, vec![x.0], value))
    }

    /// x[r,k,c] scaled per (r,k) by w[r,k].
    pub fn bcast_mul_mid(&mut self, x: Var, w: Var, r: usize, k: usize, c: usize) -> Result<Var> {
        if self.nodes[x.0].value.len() != r * k * c || self.nodes[w.0].value.len() != r * k {
            return Err(NumError::ShapeMismatch {
                op: "bcast_mul_mid",
                detail: format!(
                    "x len {} w len {} vs r{} k{} c{}",
                    self.nodes[x.0].value.len(),
                    self.nodes[w.0].value.len(),
                    r,
                    k,
                    c
                ),
            });
        }
        let xd = self.nodes[x.0].value.data();
        let wd = self.nodes[w.0].value.data();
        let mut out = Vec::with_capacity(r * k * c);
        for (rk, &wv) in wd.iter().enumerate() {
            let base = rk * c;
            out.extend(xd[base..base + c].iter().map(|&v| v * wv));
        }
        let shape = self.nodes[x.0].value.shape().to_vec();
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(Op::BcastMulMid { r, k, c }, vec![x.0, w.0], value))
    }

    /// x[r,c] scaled per row by s[r].
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let r = self.nodes[x.0].value.rows();
        let c = self.nodes[x.0].value.cols();
        if self.nodes[s.0].value.len() != r {
            return Err(NumError::ShapeMismatch {
                op: "scale_rows",
                detail: format!("rows {} vs scale len {}", r, self.nodes[s.0].value.len()),
            });
        }
        let xd = self.nodes[x.0].value.data();
        let sd = self.nodes[s.0].value.data();
        let mut out = Vec::with_capacity(r * c);
        for (ri, &sv) in sd.iter().enumerate() {
            out.extend(xd[ri * c..(ri + 1) * c].iter().map(|&v| v * sv));
        }
        let shape = self.nodes[x.0].value.shape().to_vec();
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(Op::ScaleRows, vec![x.0, s.0], value))
    }

    /// Exclusive prefix sums along rows of [r,k].
    pub fn cumsum_excl_rows(&mut self, x: Var) -> Result<Var> {
        let shape = self.nodes[x.0].value.shape().to_vec();
        if shape.len() != 2 {
            return Err(NumError::ShapeMismatch {
                op: "cumsum_excl_rows",
                detail: format!("expected 2-D, got {:?}", shape),
            });
        }
        let k = shape[1];
        let xd = self.nodes[x.0].value.data();
        let mut out = Vec::with_capacity(xd.len());
        for row in xd.chunks_exact(k) {
            let mut acc = T::zero();
            for &v in row {
                out.push(acc);
                acc += v;
            }
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(Op::CumsumExclRows, vec![x.0], value))
    }

    /// out[i,:] = x[idx[i],:]; rows may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let rows = self.nodes[x.0].value.rows();
        let c = self.nodes[x.0].value.cols();
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(NumError::Invalid(format!("gather_rows index {} out of {}", bad, rows)));
        }
        let xd = self.nodes[x.0].value.data();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&xd[i * c..(i + 1) * c]);
        }
        let value = Tensor::new(&[idx.len(), c], out)?;
        Ok(self.push(Op::GatherRows { idx: idx.to_vec() }, vec![x.0], value))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
        let (rb, cb) = (self.nodes[b.0].value.rows(), self.nodes[b.0].value.cols());
        if ra != rb {
            return Err(NumError::ShapeMismatch {
                op: "concat_cols",
                detail: format!("{} vs {} rows", ra, rb),
            });
        }
        let ad = self.nodes[a.0].value.data();
        let bd = self.nodes[b.0].value.data();
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            out.extend_from_slice(&ad[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&bd[i * cb..(i + 1) * cb]);
        }
        let value = Tensor::new(&[ra, ca + cb], out)?;
        Ok(self.push(Op::ConcatCols, vec![a.0, b.0], value))
    }

    /// Row-wise L2 normalization; rows with norm < eps are scaled by 1/eps instead.
    pub fn l2_normalize_rows(&mut self, x: Var, eps: f64) -> Result<Var> {
        let r = self.nodes[x.0].value.rows();
        let c = self.nodes[x.0].value.cols();
        let xd = self.nodes[x.0].value.data();
        let te = T::of(eps);
        let mut out = Vec::with_capacity(r * c);
        for row in xd.chunks_exact(c.max(1)) {
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            let d = if n >= te { n } else { te };
            out.extend(row.iter().map(|&v| v / d));
        }
        let shape = self.nodes[x.0].value.shape().to_vec();
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(Op::L2NormRows { eps }, vec![x.0], value))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[x.0].value.clone().reshaped(shape)?;
        Ok(self.push(Op::Reshape, vec![x.0], value))
    }

    fn add_grad(grad: &mut Option<Tensor<T>>, shape: &[usize], update: impl FnOnce(&mut [T])) {
        let g = grad.get_or_insert_with(|| Tensor::zeros(shape));
        update(g.data_mut());
    }

    /// Reverse sweep from a scalar loss; leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NumError::NonScalarLoss(self.nodes[loss.0].value.shape().to_vec()));
        }
        {
            let node = &mut self.nodes[loss.0];
            let shape = node.value.shape().to_vec();
            Self::add_grad(&mut node.grad, &shape, |g| g[0] += T::one());
        }
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad && !matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(grad) = self.nodes[i].grad.take() else { continue };
            self.propagate(i, &grad)?;
            // Only leaves keep gradients (accumulating across backward calls);
            // intermediate gradients are consumed by the sweep.
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].grad = Some(grad);
            }
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &Tensor<T>) -> Result<()> {
        // Split borrows: read parents' values via raw indices, write their grads.
        let parents = self.nodes[i].parents.clone();
        let wants: Vec<bool> = parents.iter().map(|&p| self.nodes[p].needs_grad).collect();
        if !wants.iter().any(|&w| w) {
            return Ok(());
        }
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul => {
                let (a, b) = (parents[0], parents[1]);
                let (am, ak) = (self.nodes[a].value.rows(), self.nodes[a].value.cols());
                let bn = self.nodes[b].value.cols();
                if wants[0] {
                    let bd = self.nodes[b].value.data().to_vec();
                    let node = &mut self.nodes[a];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        gemm_nt(am, bn, ak, gd, &bd, out);
                    });
                }
                if wants[1] {
                    let ad = self.nodes[a].value.data().to_vec();
                    let node = &mut self.nodes[b];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        gemm_tn(am, ak, bn, &ad, gd, out);
                    });
                }
            }
            Op::AddBias => {
                let (x, b) = (parents[0], parents[1]);
                let cols = self.nodes[x].value.cols();
                if wants[0] {
                    let node = &mut self.nodes[x];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        for (o, &gv) in out.iter_mut().zip(gd) {
                            *o += gv;
                        }
                    });
                }
                if wants[1] {
                    let node = &mut self.nodes[b];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        for row in gd.chunks_exact(cols) {
                            for (o, &gv) in out.iter_mut().zip(row) {
                                *o += gv;
                            }
                        }
                    });
                }
            }
            Op::Add | Op::Sub => {
                let sign = if matches!(self.nodes[i].op, Op::Add) { T::one() } else { -T::one() };
                for (slot, &p) in parents.iter().enumerate() {
                    if !wants[slot] {
                        continue;
                    }
                    let s = if slot == 0 { T::one() } else { sign };
                    let node = &mut self.nodes[p];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        for (o, &gv) in out.iter_mut().zip(gd) {
                            *o += s * gv;
                        }
                    });
                }
            }
            Op::Mul => {
                let (a, b) = (parents[0], parents[1]);
                if wants[0] {
                    let bd = self.nodes[b].value.data().to_vec();
                    let node = &mut self.nodes[a];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        for ((o, &gv), &bv) in out.iter_mut().zip(gd).zip(&bd) {
                            *o += gv * bv;
                        }
                    });
                }
                if wants[1] {
                    let ad = self.nodes[a].value.data().to_vec();
                    let node = &mut self.nodes[b];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        for ((o, &gv), &av) in out.iter_mut().zip(gd).zip(&ad) {
                            *o += gv * av;
                        }
                    });
                }
            }
            Op::SafeDiv => {
                let (a, b) = (parents[0], parents[1]);
                let ad = self.nodes[a].value.data().to_vec();
                let bd = self.nodes[b].value.data().to_vec();
                if wants[0] {
                    let node = &mut self.nodes[a];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        for ((o, &gv), &bv) in out.iter_mut().zip(gd).zip(&bd) {
                            if bv != T::zero() {
                                *o += gv / bv;
                            }
                        }
                    });
                }
                if wants[1] {
                    let node = &mut self.nodes[b];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        for (((o, &gv), &av), &bv) in out.iter_mut().zip(gd).zip(&ad).zip(&bd) {
                            if bv != T::zero() {
                                *o -= gv * av / (bv * bv);
                            }
                        }
                    });
                }
            }
            Op::Unary(kind) => {
                let kind = *kind;
                let p = parents[0];
                if wants[0] {
                    let xd = self.nodes[p].value.data().to_vec();
                    let yd = self.nodes[i].value.data().to_vec();
                    let node = &mut self.nodes[p];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        for (j, o) in out.iter_mut().enumerate() {
                            let d = match kind {
                                Unary::Relu => {
                                    if xd[j] > T::zero() {
                                        T::one()
                                    } else {
                                        T::zero()
                                    }
                                }
                                Unary::Softplus => stable_sigmoid(xd[j]),
                                Unary::Sigmoid => yd[j] * (T::one() - yd[j]),
                                Unary::Exp => yd[j],
                                Unary::Ln => T::one() / xd[j],
                                Unary::SafeRecip => {
                                    if xd[j] == T::zero() {
                                        T::zero()
                                    } else {
                                        -yd[j] * yd[j]
                                    }
                                }
                            };
                            *o += gd[j] * d;
                        }
                    });
                }
            }
            Op::Affine { a, .. } => {
                let s = T::of(*a);
                let p = parents[0];
                if wants[0] {
                    let node = &mut self.nodes[p];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        for (o, &gv) in out.iter_mut().zip(gd) {
                            *o += s * gv;
                        }
                    });
                }
            }
            Op::SumAll | Op::MeanAll => {
                let p = parents[0];
                if wants[0] {
                    let n = self.nodes[p].value.len().max(1);
                    let s = if matches!(self.nodes[i].op, Op::MeanAll) {
                        T::one() / T::of(n as f64)
                    } else {
                        T::one()
                    };
                    let gv = gd[0] * s;
                    let node = &mut self.nodes[p];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        for o in out.iter_mut() {
                            *o += gv;
                        }
                    });
                }
            }
            Op::SumMid { r, k, c } => {
                let (r, k, c) = (*r, *k, *c);
                let p = parents[0];
                if wants[0] {
                    let node = &mut self.nodes[p];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        for ri in 0..r {
                            let grow = &gd[ri * c..(ri + 1) * c];
                            for ki in 0..k {
                                let base = (ri * k + ki) * c;
                                for (o, &gv) in out[base..base + c].iter_mut().zip(grow) {
                                    *o += gv;
                                }
                            }
                        }
                    });
                }
            }
            Op::BcastMulMid { c, .. } => {
                let c = *c;
                let (x, w) = (parents[0], parents[1]);
                if wants[0] {
                    let wd = self.nodes[w].value.data().to_vec();
                    let node = &mut self.nodes[x];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        for (rk, &wv) in wd.iter().enumerate() {
                            let base = rk * c;
                            for (o, &gv) in out[base..base + c].iter_mut().zip(&gd[base..base + c])
                            {
                                *o += gv * wv;
                            }
                        }
                    });
                }
                if wants[1] {
                    let xd = self.nodes[x].value.data().to_vec();
                    let node = &mut self.nodes[w];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        for (rk, o) in out.iter_mut().enumerate() {
                            let base = rk * c;
                            let mut acc = T::zero();
                            for (gv, xv) in gd[base..base + c].iter().zip(&xd[base..base + c]) {
                                acc += *gv * *xv;
                            }
                            *o += acc;
                        }
                    });
                }
            }
            Op::ScaleRows => {
                let (x, s) = (parents[0], parents[1]);
                let c = self.nodes[x].value.cols();
                if wants[0] {
                    let sd = self.nodes[s].value.data().to_vec();
                    let node = &mut self.nodes[x];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        for (ri, &sv) in sd.iter().enumerate() {
                            for (o, &gv) in
                                out[ri * c..(ri + 1) * c].iter_mut().zip(&gd[ri * c..(ri + 1) * c])
                            {
                                *o += gv * sv;
                            }
                        }
                    });
                }
                if wants[1] {
                    let xd = self.nodes[x].value.data().to_vec();
                    let node = &mut self.nodes[s];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        for (ri, o) in out.iter_mut().enumerate() {
                            let mut acc = T::zero();
                            for (gv, xv) in
                                gd[ri * c..(ri + 1) * c].iter().zip(&xd[ri * c..(ri + 1) * c])
                            {
                                acc += *gv * *xv;
                            }
                            *o += acc;
                        }
                    });
                }
            }
            Op::CumsumExclRows => {
                let p = parents[0];
                let k = self.nodes[i].value.shape()[1];
                if wants[0] {
                    let node = &mut self.nodes[p];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        for (orow, grow) in out.chunks_exact_mut(k).zip(gd.chunks_exact(k)) {
                            // dx[j] = sum_{k>j} g[k]: reversed exclusive suffix sum.
                            let mut acc = T::zero();
                            for j in (0..k).rev() {
                                orow[j] += acc;
                                acc += grow[j];
                            }
                        }
                    });
                }
            }
            Op::GatherRows { idx } => {
                let idx = idx.clone();
                let p = parents[0];
                let c = self.nodes[p].value.cols();
                if wants[0] {
                    let node = &mut self.nodes[p];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        for (row, &src) in idx.iter().enumerate() {
                            for (o, &gv) in
                                out[src * c..(src + 1) * c].iter_mut().zip(&gd[row * c..(row + 1) * c])
                            {
                                *o += gv;
                            }
                        }
                    });
                }
            }
            Op::ConcatCols => {
                let (a, b) = (parents[0], parents[1]);
                let ca = self.nodes[a].value.cols();
                let cb = self.nodes[b].value.cols();
                let rows = self.nodes[a].value.rows();
                if wants[0] {
                    let node = &mut self.nodes[a];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        for ri in 0..rows {
                            let src = &gd[ri * (ca + cb)..ri * (ca + cb) + ca];
                            for (o, &gv) in out[ri * ca..(ri + 1) * ca].iter_mut().zip(src) {
                                *o += gv;
                            }
                        }
                    });
                }
                if wants[1] {
                    let node = &mut self.nodes[b];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        for ri in 0..rows {
                            let src = &gd[ri * (ca + cb) + ca..(ri + 1) * (ca + cb)];
                            for (o, &gv) in out[ri * cb..(ri + 1) * cb].iter_mut().zip(src) {
                                *o += gv;
                            }
                        }
                    });
                }
            }
            Op::L2NormRows { eps } => {
                let te = T::of(*eps);
                let p = parents[0];
                let c = self.nodes[p].value.cols();
                if wants[0] {
                    let xd = self.nodes[p].value.data().to_vec();
                    let yd = self.nodes[i].value.data().to_vec();
                    let node = &mut self.nodes[p];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        for ri in 0..xd.len() / c {
                            let xrow = &xd[ri * c..(ri + 1) * c];
                            let yrow = &yd[ri * c..(ri + 1) * c];
                            let grow = &gd[ri * c..(ri + 1) * c];
                            let orow = &mut out[ri * c..(ri + 1) * c];
                            let n = xrow.iter().map(|&v| v * v).sum::<T>().sqrt();
                            if n >= te {
                                let dot =
                                    grow.iter().zip(yrow).map(|(&g, &y)| g * y).sum::<T>();
                                for ((o, &gv), &yv) in orow.iter_mut().zip(grow).zip(yrow) {
                                    *o += (gv - yv * dot) / n;
                                }
                            } else {
                                for (o, &gv) in orow.iter_mut().zip(grow) {
                                    *o += gv / te;
                                }
                            }
                        }
                    });
                }
            }
            Op::Reshape => {
                let p = parents[0];
                if wants[0] {
                    let node = &mut self.nodes[p];
                    let shape = node.value.shape().to_vec();
                    Self::add_grad(&mut node.grad, &shape, |out| {
                        for (o, &gv) in out.iter_mut().zip(gd) {
                            *o += gv;
                        }
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).item(), 6.0);
    }

    #[test]
    fn relu_sum_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_vec(vec![-1.0, 2.0]));
        let y = g.relu(x);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[0.0, 1.0]);
    }

    #[test]
    fn l2_normalize_three_four_five() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_rows(1, 2, vec![3.0, 4.0]).unwrap());
        let y = g.l2_normalize_rows(x, 1e-9).unwrap();
        assert_eq!(g.value(y).data(), &[0.6, 0.8]);
    }

    #[test]
    fn softplus_at_zero_is_ln_two() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::scalar(0.0));
        let y = g.softplus(x);
        assert!((g.value(y).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(NumError::NonScalarLoss(_))));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).item(), 12.0);
    }

    #[test]
    fn cumsum_exclusive_forward_backward() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_rows(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let y = g.cumsum_excl_rows(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 1.0, 3.0]);
        // loss = y2 => dx = [1,1,0]
        let sel = g.gather_rows(y, &[0]).unwrap();
        let c = g.constant(Tensor::from_rows(1, 3, vec![0.0, 0.0, 1.0]).unwrap());
        let prod = g.mul(sel, c).unwrap();
        let loss = g.sum(prod);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).data(), &[1.0, 1.0, 0.0]);
    }
}
