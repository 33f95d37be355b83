use crate::kernels::{self, gemm};
use crate::{Real, Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Constant,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    BatchMatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, trans_b: bool },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    AddBias { a: Var, bias: Var },
    AddConst { a: Var },
    MulConst { a: Var, factor: Vec<T> },
    Scale { a: Var, c: T },
    Relu { a: Var },
    Log { a: Var },
    Sqrt { a: Var },
    Powi { a: Var, k: i32 },
    SmoothL1 { a: Var },
    Softmax { a: Var, cols: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Reshape { a: Var },
    Permute { a: Var, axes: Vec<usize> },
    Concat { inputs: Vec<Var>, sizes: Vec<usize>, outer: usize, inner: usize },
    Unfold { a: Var, batch: usize, time: usize, chans: usize, k: usize },
    Reduce { a: Var, outer: usize, len: usize, inner: usize, scale: T },
    L2Norm { a: Var },
    SoftmaxCe { logits: Var, probs: Vec<T>, labels: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Tape of recorded operations.
///
/// Nodes are only ever appended, so every parent index is smaller than its
/// child's and the tape order is a valid topological order.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    sizes: Vec<usize>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `var`; zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Vec<T> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => vec![T::zero(); self.sizes[var.0]],
        }
    }

    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads[var.0].as_deref()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Registers a tensor; it is differentiable iff `requires_grad` is set on it.
    pub fn leaf(&mut self, tensor: &Tensor<T>) -> Var {
        let op = if tensor.is_grad_enabled() {
            Op::Leaf
        } else {
            Op::Constant
        };
        let needs = tensor.is_grad_enabled();
        self.push(tensor.shape().to_vec(), tensor.values().to_vec(), op, needs)
    }

    pub fn param(&mut self, shape: impl Into<Vec<usize>>, values: Vec<T>) -> Result<Var> {
        let t = Tensor::new(shape, values)?.requires_grad();
        Ok(self.leaf(&t))
    }

    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, values: Vec<T>) -> Result<Var> {
        let t = Tensor::new(shape, values)?;
        Ok(self.leaf(&t))
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, rec: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), value, rec, needs))
    }

    fn map(&mut self, a: Var, rec: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        let needs = self.needs(&[a]);
        self.push(self.shape(a).to_vec(), value, rec, needs)
    }

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, T::zero(), &mut out);
        let needs = self.needs(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, m, k, n }, needs))
    }

    /// Batched product of `[B,m,k]·[B,k,n]`, or `[B,m,k]·[B,n,k]ᵀ` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || TensorError::Dimension {
            op: "bmm",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b {
            if sb[2] != k {
                return Err(bad());
            }
            sb[1]
        } else {
            if sb[1] != k {
                return Err(bad());
            }
            sb[2]
        };
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (av, bv) = (self.value(a), self.value(b));
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    false,
                    &bv[i * k * n..(i + 1) * k * n],
                    trans_b,
                    T::zero(),
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        let needs = self.needs(&[a, b]);
        Ok(self.push(
            vec![batch, m, n],
            out,
            Op::BatchMatMul { a, b, batch, m, k, n, trans_b },
            needs,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, Op::Add { a, b }, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, Op::Sub { a, b }, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, Op::Mul { a, b }, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("div", a, b, Op::Div { a, b }, |x, y| x / y)
    }

    /// Adds `bias` (length = last extent of `a`) to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let cols = *self.shape(a).last().unwrap_or(&1);
        if self.shape(bias) != [cols] {
            return Err(TensorError::Dimension {
                op: "add_bias",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let bv = self.value(bias);
        let value = self
            .value(a)
            .chunks(cols)
            .flat_map(|row| row.iter().zip(bv).map(|(&x, &y)| x + y))
            .collect();
        let needs = self.needs(&[a, bias]);
        Ok(self.push(self.shape(a).to_vec(), value, Op::AddBias { a, bias }, needs))
    }

    /// Adds a constant, non-differentiable offset of the same size (may contain `-inf`).
    pub fn add_const(&mut self, a: Var, offset: &[T]) -> Result<Var> {
        if offset.len() != self.value(a).len() {
            return Err(TensorError::Dimension {
                op: "add_const",
                lhs: self.shape(a).to_vec(),
                rhs: vec![offset.len()],
            });
        }
        let value = self
            .value(a)
            .iter()
            .zip(offset)
            .map(|(&x, &c)| x + c)
            .collect();
        let needs = self.needs(&[a]);
        Ok(self.push(self.shape(a).to_vec(), value, Op::AddConst { a }, needs))
    }

    /// Element-wise product with a constant, non-differentiable factor.
    pub fn mul_const(&mut self, a: Var, factor: Vec<T>) -> Result<Var> {
        if factor.len() != self.value(a).len() {
            return Err(TensorError::Dimension {
                op: "mul_const",
                lhs: self.shape(a).to_vec(),
                rhs: vec![factor.len()],
            });
        }
        let value = self
            .value(a)
            .iter()
            .zip(&factor)
            .map(|(&x, &c)| x * c)
            .collect();
        let needs = self.needs(&[a]);
        Ok(self.push(self.shape(a).to_vec(), value, Op::MulConst { a, factor }, needs))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.map(a, Op::Scale { a, c }, |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.map(a, Op::AddConst { a }, |x| x + c)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu { a }, |x| if x > T::zero() { x } else { T::zero() })
    }

    /// Natural logarithm; the input must be strictly positive.
    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, Op::Log { a }, |x| x.ln())
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.map(a, Op::Sqrt { a }, |x| x.sqrt())
    }

    pub fn powi(&mut self, a: Var, k: i32) -> Var {
        self.map(a, Op::Powi { a, k }, |x| x.powi(k))
    }

    /// Element-wise Huber-style loss with unit threshold.
    pub fn smooth_l1(&mut self, a: Var) -> Var {
        self.map(a, Op::SmoothL1 { a }, smooth_l1_value)
    }

    /// Softmax over the last axis. Rows may carry `-inf` entries.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let cols = *self.shape(a).last().unwrap_or(&1);
        let mut value = self.value(a).to_vec();
        kernels::softmax_rows_in_place(&mut value, cols)?;
        let needs = self.needs(&[a]);
        Ok(self.push(self.shape(a).to_vec(), value, Op::Softmax { a, cols }, needs))
    }

    /// Normalizes every row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let d = *self.shape(x).last().unwrap_or(&1);
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(TensorError::Dimension {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gain).to_vec(),
            });
        }
        let rows = self.value(x).len() / d.max(1);
        let mut xhat = vec![T::zero(); rows * d];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * d];
        let df = T::lit(d as f64);
        {
            let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
            for r in 0..rows {
                let row = &xv[r * d..(r + 1) * d];
                let mean = row.iter().copied().sum::<T>() / df;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / df;
                let inv = T::one() / (var + eps).sqrt();
                inv_std[r] = inv;
                for j in 0..d {
                    let h = (row[j] - mean) * inv;
                    xhat[r * d + j] = h;
                    out[r * d + j] = h * gv[j] + bv[j];
                }
            }
        }
        let needs = self.needs(&[x, gain, bias]);
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::LayerNorm { x, gain, bias, xhat, inv_std },
            needs,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if numel(&shape) != self.value(a).len() {
            return Err(TensorError::Dimension {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape,
            });
        }
        let value = self.value(a).to_vec();
        let needs = self.needs(&[a]);
        Ok(self.push(shape, value, Op::Reshape { a }, needs))
    }

    /// Output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&x| x >= shape.len() || std::mem::replace(&mut seen[x], true)) {
            return Err(TensorError::invalid("permute", format!("axes {axes:?} for shape {shape:?}")));
        }
        let value = kernels::permute(self.value(a), &shape, axes);
        let out_shape = axes.iter().map(|&x| shape[x]).collect();
        let needs = self.needs(&[a]);
        Ok(self.push(out_shape, value, Op::Permute { a, axes: axes.to_vec() }, needs))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::invalid("concat", format!("axis {axis} for shape {base:?}")));
        }
        let mut sizes = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(TensorError::Dimension {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            sizes.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &len) in inputs.iter().zip(&sizes) {
                let block = len * inner;
                out.extend_from_slice(&self.value(v)[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let needs = self.needs(inputs);
        Ok(self.push(
            shape,
            out,
            Op::Concat { inputs: inputs.to_vec(), sizes, outer, inner },
            needs,
        ))
    }

    /// Temporal im2col with zero "same" padding: `[B,T,C] -> [B,T,k·C]`.
    /// A 2-D input is treated as a batch of one.
    pub fn unfold_time(&mut self, a: Var, k: usize) -> Result<Var> {
        if k % 2 == 0 {
            return Err(TensorError::invalid("unfold_time", format!("kernel size {k} must be odd")));
        }
        let shape = self.shape(a).to_vec();
        let (batch, time, chans) = match shape.as_slice() {
            [t, c] => (1, *t, *c),
            [b, t, c] => (*b, *t, *c),
            _ => return Err(TensorError::invalid("unfold_time", format!("rank of {shape:?}"))),
        };
        let pad = k / 2;
        let src = self.value(a);
        let mut out = vec![T::zero(); batch * time * k * chans];
        for b in 0..batch {
            for t in 0..time {
                for j in 0..k {
                    let s = t as isize + j as isize - pad as isize;
                    if s < 0 || s >= time as isize {
                        continue;
                    }
                    let from = (b * time + s as usize) * chans;
                    let to = ((b * time + t) * k + j) * chans;
                    out[to..to + chans].copy_from_slice(&src[from..from + chans]);
                }
            }
        }
        let mut out_shape = shape.clone();
        *out_shape.last_mut().unwrap() = k * chans;
        let needs = self.needs(&[a]);
        Ok(self.push(out_shape, out, Op::Unfold { a, batch, time, chans, k }, needs))
    }

    /// Temporal cross-correlation of `x` (`[T,d_in]` or `[B,T,d_in]`) with a
    /// `[k,d_in,d_out]` kernel and zero "same" padding.
    pub fn conv1d(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let ws = self.shape(weight).to_vec();
        let xs = self.shape(x).to_vec();
        if ws.len() != 3 || xs.last() != Some(&ws[1]) {
            return Err(TensorError::Dimension { op: "conv1d", lhs: xs, rhs: ws });
        }
        let (k, d_in, d_out) = (ws[0], ws[1], ws[2]);
        let cols = self.unfold_time(x, k)?;
        let rows = self.value(cols).len() / (k * d_in);
        let flat = self.reshape(cols, [rows, k * d_in])?;
        let w = self.reshape(weight, [k * d_in, d_out])?;
        let y = self.matmul(flat, w)?;
        let y = self.add_bias(y, bias)?;
        let mut out_shape = xs;
        *out_shape.last_mut().unwrap() = d_out;
        self.reshape(y, out_shape)
    }

    fn reduce(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::invalid("reduce", format!("axis {axis} for shape {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let scale = if mean { T::one() / T::lit(len as f64) } else { T::one() };
        let src = self.value(a);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= scale);
        let mut out_shape = shape;
        out_shape.remove(axis);
        let needs = self.needs(&[a]);
        Ok(self.push(out_shape, out, Op::Reduce { a, outer, len, inner, scale }, needs))
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, axis, false)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, axis, true)
    }

    fn reduce_all(&mut self, a: Var, mean: bool) -> Var {
        let n = self.value(a).len();
        let flat = self.reshape(a, [n]).expect("flatten");
        let r = self.reduce(flat, 0, mean).expect("axis 0 exists");
        r
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.reduce_all(a, false)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.reduce_all(a, true)
    }

    /// Euclidean norm of the whole tensor. The gradient at the origin is zero.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let n = self.value(a).iter().map(|&v| v * v).sum::<T>().sqrt();
        let needs = self.needs(&[a]);
        self.push(Vec::new(), vec![n], Op::L2Norm { a }, needs)
    }

    /// Mean over rows of `-ln(max(softmax(logits)[label], 1e-12))`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() || labels.iter().any(|&l| l >= shape[1]) {
            return Err(TensorError::invalid(
                "softmax_cross_entropy",
                format!("logits {shape:?} with {} labels", labels.len()),
            ));
        }
        let cols = shape[1];
        let mut probs = self.value(logits).to_vec();
        kernels::softmax_rows_in_place(&mut probs, cols)?;
        let floor = T::lit(1e-12);
        let total = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| -probs[r * cols + l].max(floor).ln())
            .sum::<T>();
        let loss = total / T::lit(labels.len() as f64);
        let needs = self.needs(&[logits]);
        Ok(self.push(
            Vec::new(),
            vec![loss],
            Op::SoftmaxCe { logits, probs, labels: labels.to_vec() },
            needs,
        ))
    }

    /// Reverse-mode pass from a scalar `loss`. A graph can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        if numel(self.shape(loss)) != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        // drop gradients of intermediate nodes
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        let sizes = self.nodes.iter().map(|n| n.value.len()).collect();
        Ok(Gradients { grads, sizes })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            debug_assert!(v.0 < i, "graph nodes must be topologically ordered");
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
            f(slot);
        };
        let val = |v: Var| nodes[v.0].value.as_slice();
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                acc(*a, &mut |ga| gemm(m, n, k, g, false, val(*b), true, T::one(), ga));
                acc(*b, &mut |gb| gemm(k, m, n, val(*a), true, g, false, T::one(), gb));
            }
            Op::BatchMatMul { a, b, batch, m, k, n, trans_b } => {
                let (m, k, n) = (*m, *k, *n);
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for t in 0..*batch {
                        gemm(
                            m,
                            n,
                            k,
                            &g[t * m * n..(t + 1) * m * n],
                            false,
                            &bv[t * k * n..(t + 1) * k * n],
                            !*trans_b,
                            T::one(),
                            &mut ga[t * m * k..(t + 1) * m * k],
                        );
                    }
                });
                acc(*b, &mut |gb| {
                    for t in 0..*batch {
                        let gt = &g[t * m * n..(t + 1) * m * n];
                        let at = &av[t * m * k..(t + 1) * m * k];
                        let dst = &mut gb[t * k * n..(t + 1) * k * n];
                        if *trans_b {
                            gemm(n, m, k, gt, true, at, false, T::one(), dst);
                        } else {
                            gemm(k, m, n, at, true, gt, false, T::one(), dst);
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub { a, b } => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, &y)| *x -= y));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for ((x, &y), &w) in ga.iter_mut().zip(g).zip(bv) {
                        *x += y * w;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((x, &y), &w) in gb.iter_mut().zip(g).zip(av) {
                        *x += y * w;
                    }
                });
            }
            Op::Div { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for ((x, &y), &w) in ga.iter_mut().zip(g).zip(bv) {
                        *x += y / w;
                    }
                });
                acc(*b, &mut |gb| {
                    for (((x, &y), &u), &w) in gb.iter_mut().zip(g).zip(av).zip(bv) {
                        *x -= y * u / (w * w);
                    }
                });
            }
            Op::AddBias { a, bias } => {
                acc(*a, &mut |ga| add_into(ga, g));
                let cols = nodes[bias.0].value.len();
                acc(*bias, &mut |gb| {
                    for row in g.chunks(cols) {
                        add_into(gb, row);
                    }
                });
            }
            Op::AddConst { a } | Op::Reshape { a } => acc(*a, &mut |ga| add_into(ga, g)),
            Op::MulConst { a, factor } => acc(*a, &mut |ga| {
                for ((x, &y), &c) in ga.iter_mut().zip(g).zip(factor) {
                    *x += y * c;
                }
            }),
            Op::Scale { a, c } => acc(*a, &mut |ga| {
                for (x, &y) in ga.iter_mut().zip(g) {
                    *x += y * *c;
                }
            }),
            Op::Relu { a } => {
                let av = val(*a);
                acc(*a, &mut |ga| {
                    for ((x, &y), &u) in ga.iter_mut().zip(g).zip(av) {
                        if u > T::zero() {
                            *x += y;
                        }
                    }
                })
            }
            Op::Log { a } => {
                let av = val(*a);
                acc(*a, &mut |ga| {
                    for ((x, &y), &u) in ga.iter_mut().zip(g).zip(av) {
                        *x += y / u;
                    }
                })
            }
            Op::Sqrt { a } => {
                let out = &node.value;
                acc(*a, &mut |ga| {
                    for ((x, &y), &s) in ga.iter_mut().zip(g).zip(out) {
                        *x += y * T::lit(0.5) / s;
                    }
                })
            }
            Op::Powi { a, k } => {
                let av = val(*a);
                let kf = T::lit(*k as f64);
                acc(*a, &mut |ga| {
                    for ((x, &y), &u) in ga.iter_mut().zip(g).zip(av) {
                        *x += y * kf * u.powi(*k - 1);
                    }
                })
            }
            Op::SmoothL1 { a } => {
                let av = val(*a);
                acc(*a, &mut |ga| {
                    for ((x, &y), &u) in ga.iter_mut().zip(g).zip(av) {
                        let d = if u.abs() < T::one() { u } else { u.signum() };
                        *x += y * d;
                    }
                })
            }
            Op::Softmax { a, cols } => {
                let out = &node.value;
                let cols = *cols;
                acc(*a, &mut |ga| {
                    for ((gr, yr), dst) in g.chunks(cols).zip(out.chunks(cols)).zip(ga.chunks_mut(cols)) {
                        let dot: T = gr.iter().zip(yr).map(|(&u, &v)| u * v).sum();
                        for ((x, &u), &v) in dst.iter_mut().zip(gr).zip(yr) {
                            *x += v * (u - dot);
                        }
                    }
                })
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let d = nodes[gain.0].value.len();
                let gv = val(*gain);
                acc(*bias, &mut |gb| {
                    for row in g.chunks(d) {
                        add_into(gb, row);
                    }
                });
                acc(*gain, &mut |gg| {
                    for (row, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for ((x, &u), &h) in gg.iter_mut().zip(row).zip(hr) {
                            *x += u * h;
                        }
                    }
                });
                let df = T::lit(d as f64);
                acc(*x, &mut |gx| {
                    for (r, ((row, hr), dst)) in g.chunks(d).zip(xhat.chunks(d)).zip(gx.chunks_mut(d)).enumerate() {
                        let mut sum_g = T::zero();
                        let mut sum_gh = T::zero();
                        for j in 0..d {
                            let gh = row[j] * gv[j];
                            sum_g += gh;
                            sum_gh += gh * hr[j];
                        }
                        let scale = inv_std[r] / df;
                        for j in 0..d {
                            let gh = row[j] * gv[j];
                            dst[j] += scale * (df * gh - sum_g - hr[j] * sum_gh);
                        }
                    }
                });
            }
            Op::Permute { a, axes } => {
                let back = kernels::permute(g, &node.shape, &kernels::inverse_permutation(axes));
                acc(*a, &mut |ga| add_into(ga, &back));
            }
            Op::Concat { inputs, sizes, outer, inner } => {
                let total: usize = sizes.iter().sum();
                let mut offset = 0;
                for (&v, &len) in inputs.iter().zip(sizes) {
                    let block = len * inner;
                    acc(v, &mut |gv| {
                        for o in 0..*outer {
                            let src = o * total * inner + offset;
                            add_into(&mut gv[o * block..(o + 1) * block], &g[src..src + block]);
                        }
                    });
                    offset += block;
                }
            }
            Op::Unfold { a, batch, time, chans, k } => {
                let (time, chans, k) = (*time, *chans, *k);
                let pad = k / 2;
                acc(*a, &mut |ga| {
                    for b in 0..*batch {
                        for t in 0..time {
                            for j in 0..k {
                                let s = t as isize + j as isize - pad as isize;
                                if s < 0 || s >= time as isize {
                                    continue;
                                }
                                let to = (b * time + s as usize) * chans;
                                let from = ((b * time + t) * k + j) * chans;
                                add_into(&mut ga[to..to + chans], &g[from..from + chans]);
                            }
                        }
                    }
                });
            }
            Op::Reduce { a, outer, len, inner, scale } => acc(*a, &mut |ga| {
                for o in 0..*outer {
                    for l in 0..*len {
                        let base = (o * len + l) * inner;
                        for i in 0..*inner {
                            ga[base + i] += g[o * inner + i] * *scale;
                        }
                    }
                }
            }),
            Op::L2Norm { a } => {
                let n = node.value[0];
                if n > T::zero() {
                    let av = val(*a);
                    acc(*a, &mut |ga| {
                        for (x, &u) in ga.iter_mut().zip(av) {
                            *x += g[0] * u / n;
                        }
                    });
                }
            }
            Op::SoftmaxCe { logits, probs, labels } => {
                let cols = probs.len() / labels.len();
                let scale = g[0] / T::lit(labels.len() as f64);
                acc(*logits, &mut |gl| {
                    for (r, &l) in labels.iter().enumerate() {
                        for c in 0..cols {
                            let target = if c == l { T::one() } else { T::zero() };
                            gl[r * cols + c] += scale * (probs[r * cols + c] - target);
                        }
                    }
                });
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(x, &y)| *x += y);
}

/// `0.5x²` inside the unit interval, `|x| - 0.5` outside.
pub(crate) fn smooth_l1_value<T: Real>(x: T) -> T {
    if x.abs() < T::one() {
        T::lit(0.5) * x * x
    } else {
        x.abs() - T::lit(0.5)
    }
}
