use super::{shape_err, KernelError, ParamStore, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    Gather { table: Var, idx: Vec<Option<usize>> },
    Concat { parts: Vec<Var>, axis: usize },
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    Reshape(Var),
    Transpose(Var),
    TileRows { x: Var, times: usize },
    Blend { mask: Vec<T>, new: Var, old: Var },
    Attend { alpha: Var, mem: Var },
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Sum(Var),
    Mean(Var),
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<T> },
    SigmoidBce { logits: Var, targets: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Append-only record of executed ops.
///
/// Nodes are stored in execution order, which is a topological order;
/// [`Tape::backward`] walks it in exact reverse.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    checking: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const LN_EPS: f64 = 1e-5;

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), checking: false }
    }

    /// A tape that rejects any op producing NaN or infinity.
    pub fn checked() -> Self {
        Tape { nodes: Vec::new(), checking: true }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Records every parameter of `store` as a differentiable leaf, in store order.
    pub fn bind(&mut self, store: &ParamStore<T>) -> Vec<Var> {
        store.tensors().map(|t| self.leaf(t.clone())).collect()
    }

    /// Like [`Tape::bind`] but as constants, for inference.
    pub fn bind_constants(&mut self, store: &ParamStore<T>) -> Vec<Var> {
        store.tensors().map(|t| self.constant(t.clone())).collect()
    }

    fn node(&self, v: Var, op: &'static str) -> Result<&Node<T>, KernelError> {
        self.nodes.get(v.0).ok_or_else(|| KernelError::State(format!("{op}: variable {} is not on this tape", v.0)))
    }

    fn val(&self, v: Var, op: &'static str) -> Result<&Tensor<T>, KernelError> {
        Ok(&self.node(v, op)?.value)
    }

    fn grad_flag(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var, KernelError> {
        if self.checking && !value.is_finite() {
            return Err(KernelError::NonFinite { op: name });
        }
        let needs_grad = self.grad_flag(inputs);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize), KernelError> {
        let t = self.val(v, op)?;
        match t.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(shape_err(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, T::zero(), &mut out);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b])
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<(), KernelError> {
        let (sa, sb) = (self.val(a, op)?.shape(), self.val(b, op)?.shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.same_shape(a, b, "add")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| *x + *y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("add", t, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.same_shape(a, b, "mul")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| *x * *y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("mul", t, Op::Mul(a, b), &[a, b])
    }

    /// Adds a bias vector to every row (broadcast over the last axis).
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var, KernelError> {
        let tx = self.val(x, "add_row_bias")?;
        let tb = self.val(bias, "add_row_bias")?;
        let n = tx.last_dim();
        if tb.len() != n {
            return Err(shape_err("add_row_bias", format!("{:?} + bias {:?}", tx.shape(), tb.shape())));
        }
        let b = tb.data();
        let data = tx.data().iter().enumerate().map(|(i, v)| *v + b[i % n]).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("add_row_bias", t, Op::AddRowBias(x, bias), &[x, bias])
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, KernelError> {
        let h = self.matmul(x, w)?;
        self.add_row_bias(h, b)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var, KernelError> {
        let tx = self.val(x, "scale")?;
        let t = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| *v * c).collect())?;
        self.push("scale", t, Op::Scale(x, c), &[x])
    }

    fn unary(&mut self, x: Var, name: &'static str, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var, KernelError> {
        let tx = self.val(x, name)?;
        let t = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| f(*v)).collect())?;
        self.push(name, t, op, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, KernelError> {
        self.unary(x, "sigmoid", sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, KernelError> {
        self.unary(x, "tanh", |v| v.tanh(), Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, KernelError> {
        self.unary(x, "relu", |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, KernelError> {
        let tx = self.val(x, "softmax")?;
        let n = tx.last_dim();
        if n == 0 {
            return Err(shape_err("softmax", format!("empty last axis in {:?}", tx.shape())));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("softmax", t, Op::Softmax(x), &[x])
    }

    /// Row lookup into `table`; `None` yields a zero row.
    pub fn gather(&mut self, table: Var, idx: &[Option<usize>]) -> Result<Var, KernelError> {
        let (v, d) = self.matrix_dims(table, "gather")?;
        let tt = self.value(table).data();
        let mut out = vec![T::zero(); idx.len() * d];
        for (r, i) in idx.iter().enumerate() {
            if let Some(i) = *i {
                if i >= v {
                    return Err(KernelError::Index { op: "gather", index: i, bound: v });
                }
                out[r * d..(r + 1) * d].copy_from_slice(&tt[i * d..(i + 1) * d]);
            }
        }
        let t = Tensor::new(vec![idx.len(), d], out)?;
        self.push("gather", t, Op::Gather { table, idx: idx.to_vec() }, &[table])
    }

    /// Embedding lookup of token ids.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var, KernelError> {
        let idx: Vec<Option<usize>> = ids.iter().map(|&i| Some(i)).collect();
        self.gather(table, &idx)
    }

    /// Concatenates matrices along axis 0 (rows) or 1 (columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, KernelError> {
        if parts.is_empty() || axis > 1 {
            return Err(shape_err("concat", format!("{} parts on axis {axis}", parts.len())));
        }
        let dims: Vec<(usize, usize)> =
            parts.iter().map(|p| self.matrix_dims(*p, "concat")).collect::<Result<_, _>>()?;
        let t = if axis == 0 {
            let cols = dims[0].1;
            if dims.iter().any(|d| d.1 != cols) {
                return Err(shape_err("concat", format!("row-stacking mismatched widths {dims:?}")));
            }
            let mut data = Vec::with_capacity(dims.iter().map(|d| d.0 * d.1).sum());
            for p in parts {
                data.extend_from_slice(self.value(*p).data());
            }
            Tensor::new(vec![data.len() / cols.max(1), cols], data)?
        } else {
            let rows = dims[0].0;
            if dims.iter().any(|d| d.0 != rows) {
                return Err(shape_err("concat", format!("column-joining mismatched heights {dims:?}")));
            }
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for (p, d) in parts.iter().zip(&dims) {
                    data.extend_from_slice(&self.value(*p).data()[r * d.1..(r + 1) * d.1]);
                }
            }
            Tensor::new(vec![rows, cols], data)?
        };
        self.push("concat", t, Op::Concat { parts: parts.to_vec(), axis }, parts)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, KernelError> {
        let (m, n) = self.matrix_dims(x, "slice_cols")?;
        if start + len > n {
            return Err(shape_err("slice_cols", format!("cols {start}..{} of [{m}, {n}]", start + len)));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let t = Tensor::new(vec![m, len], data)?;
        self.push("slice_cols", t, Op::SliceCols { x, start }, &[x])
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, KernelError> {
        let (m, n) = self.matrix_dims(x, "slice_rows")?;
        if start + len > m {
            return Err(shape_err("slice_rows", format!("rows {start}..{} of [{m}, {n}]", start + len)));
        }
        let data = self.value(x).data()[start * n..(start + len) * n].to_vec();
        let t = Tensor::new(vec![len, n], data)?;
        self.push("slice_rows", t, Op::SliceRows { x, start }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, KernelError> {
        let tx = self.val(x, "reshape")?;
        if shape.iter().product::<usize>() != tx.len() || shape.len() > 3 {
            return Err(shape_err("reshape", format!("{:?} -> {shape:?}", tx.shape())));
        }
        let t = tx.clone().with_shape(shape.to_vec());
        self.push("reshape", t, Op::Reshape(x), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, KernelError> {
        let (m, n) = self.matrix_dims(x, "transpose")?;
        let src = self.value(x).data();
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let t = Tensor::new(vec![n, m], data)?;
        self.push("transpose", t, Op::Transpose(x), &[x])
    }

    /// Stacks `times` copies of the whole matrix vertically.
    pub fn tile_rows(&mut self, x: Var, times: usize) -> Result<Var, KernelError> {
        let (m, n) = self.matrix_dims(x, "tile_rows")?;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(times * m * n);
        for _ in 0..times {
            data.extend_from_slice(src);
        }
        let t = Tensor::new(vec![times * m, n], data)?;
        self.push("tile_rows", t, Op::TileRows { x, times }, &[x])
    }

    /// Row-wise `mask * new + (1 - mask) * old` with a constant per-row mask.
    pub fn blend(&mut self, mask: &[T], new: Var, old: Var) -> Result<Var, KernelError> {
        self.same_shape(new, old, "blend")?;
        let (m, n) = self.matrix_dims(new, "blend")?;
        if mask.len() != m {
            return Err(shape_err("blend", format!("mask of {} rows for [{m}, {n}]", mask.len())));
        }
        let (tn, to) = (self.value(new).data(), self.value(old).data());
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            let w = mask[r];
            for c in 0..n {
                let i = r * n + c;
                data.push(w * tn[i] + (T::one() - w) * to[i]);
            }
        }
        let t = Tensor::new(vec![m, n], data)?;
        self.push("blend", t, Op::Blend { mask: mask.to_vec(), new, old }, &[new, old])
    }

    /// Attention read-out: `out[b] = sum_t alpha[b, t] * mem[t * B + b]`.
    ///
    /// `alpha` is `[B, T]`; `mem` holds `T` time-major blocks of `B` rows.
    pub fn attend(&mut self, alpha: Var, mem: Var) -> Result<Var, KernelError> {
        let (b, steps) = self.matrix_dims(alpha, "attend")?;
        let (rows, h) = self.matrix_dims(mem, "attend")?;
        if rows != b * steps {
            return Err(shape_err("attend", format!("weights [{b}, {steps}] over memory [{rows}, {h}]")));
        }
        let (ta, tm) = (self.value(alpha).data(), self.value(mem).data());
        let mut out = vec![T::zero(); b * h];
        for bi in 0..b {
            let o = &mut out[bi * h..(bi + 1) * h];
            for t in 0..steps {
                let w = ta[bi * steps + t];
                let row = &tm[(t * b + bi) * h..(t * b + bi + 1) * h];
                for (x, y) in o.iter_mut().zip(row) {
                    *x = *x + w * *y;
                }
            }
        }
        let t = Tensor::new(vec![b, h], out)?;
        self.push("attend", t, Op::Attend { alpha, mem }, &[alpha, mem])
    }

    /// Batched product of rank-3 tensors; `b` is read as `[B, n, k]` when `trans_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, KernelError> {
        let sa = self.val(a, "batch_matmul")?.shape().to_vec();
        let sb = self.val(b, "batch_matmul")?.shape().to_vec();
        let bad = || shape_err("batch_matmul", format!("{sa:?} x {sb:?} (trans_b = {trans_b})"));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (bt, m, k) = (sa[0], sa[1], sa[2]);
        let (k2, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != k2 {
            return Err(bad());
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); bt * m * n];
        for i in 0..bt {
            T::gemm(
                m,
                k,
                n,
                &da[i * m * k..(i + 1) * m * k],
                false,
                &db[i * k * n..(i + 1) * k * n],
                trans_b,
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let t = Tensor::new(vec![bt, m, n], out)?;
        self.push("batch_matmul", t, Op::BatchMatMul { a, b, trans_b }, &[a, b])
    }

    /// Normalizes each row over the last axis, then applies gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, KernelError> {
        let tx = self.val(x, "layer_norm")?;
        let n = tx.last_dim();
        let (tg, tb) = (self.val(gain, "layer_norm")?, self.val(bias, "layer_norm")?);
        if tg.len() != n || tb.len() != n || n == 0 {
            return Err(shape_err(
                "layer_norm",
                format!("{:?} with gain {:?} bias {:?}", tx.shape(), tg.shape(), tb.shape()),
            ));
        }
        let nf = T::from_usize(n).unwrap_or_else(T::one);
        let eps = T::from_f64_lossy(LN_EPS);
        let rows = tx.rows();
        let mut xhat = vec![T::zero(); tx.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); tx.len()];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / nf;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let xh = (row[c] - mean) * rs;
                xhat[r * n + c] = xh;
                out[r * n + c] = xh * tg.data()[c] + tb.data()[c];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        self.push("layer_norm", t, Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, KernelError> {
        let s = self.val(x, "sum")?.data().iter().copied().sum::<T>();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, KernelError> {
        let tx = self.val(x, "mean")?;
        if tx.is_empty() {
            return Err(shape_err("mean", "mean of an empty tensor"));
        }
        let s = tx.data().iter().copied().sum::<T>() / T::from_usize(tx.len()).unwrap_or_else(T::one);
        self.push("mean", Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Summed categorical negative log-likelihood over rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var, KernelError> {
        let (n, v) = self.matrix_dims(logits, "cross_entropy")?;
        if targets.len() != n {
            return Err(shape_err("cross_entropy", format!("{} targets for {n} rows", targets.len())));
        }
        let tl = self.value(logits);
        let mut probs = tl.data().to_vec();
        let mut loss = T::zero();
        for (r, target) in targets.iter().enumerate() {
            let row = &mut probs[r * v..(r + 1) * v];
            let log_z = log_sum_exp(row);
            if let Some(t) = *target {
                if t >= v {
                    return Err(KernelError::Index { op: "cross_entropy", index: t, bound: v });
                }
                loss = loss + (log_z - row[t]);
            }
            for p in row.iter_mut() {
                *p = (*p - log_z).exp();
            }
        }
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), probs };
        self.push("cross_entropy", Tensor::scalar(loss), op, &[logits])
    }

    /// Summed binary cross-entropy of sigmoid outputs against 0/1 targets.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: &[T]) -> Result<Var, KernelError> {
        let tl = self.val(logits, "sigmoid_bce")?;
        if targets.len() != tl.len() {
            return Err(shape_err("sigmoid_bce", format!("{} targets for {:?}", targets.len(), tl.shape())));
        }
        let loss = tl
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (T::one() + (-z.abs()).exp()).ln())
            .sum::<T>();
        let op = Op::SigmoidBce { logits, targets: targets.to_vec() };
        self.push("sigmoid_bce", Tensor::scalar(loss), op, &[logits])
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, KernelError> {
        if self.nodes.is_empty() {
            return Err(KernelError::State("backward called on an empty tape".into()));
        }
        let root = self.node(loss, "backward")?;
        if root.value.len() != 1 {
            return Err(shape_err("backward", format!("loss must be scalar, got {:?}", root.value.shape())));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.backprop(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|g| Tensor::new(n.value.shape().to_vec(), g).expect("gradient shape")))
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let out = nodes[i].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2(&nodes[a.0].value);
                let n = nodes[b.0].value.last_dim();
                if let Some(da) = acc(nodes, grads, *a) {
                    T::gemm(m, n, k, g, false, val(*b), true, T::one(), da);
                }
                if let Some(db) = acc(nodes, grads, *b) {
                    T::gemm(k, m, n, val(*a), true, g, false, T::one(), db);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(d) = acc(nodes, grads, *v) {
                        add_into(d, g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(da) = acc(nodes, grads, *a) {
                    for ((d, gv), bv) in da.iter_mut().zip(g).zip(val(*b)) {
                        *d = *d + *gv * *bv;
                    }
                }
                if let Some(db) = acc(nodes, grads, *b) {
                    for ((d, gv), av) in db.iter_mut().zip(g).zip(val(*a)) {
                        *d = *d + *gv * *av;
                    }
                }
            }
            Op::AddRowBias(x, b) => {
                if let Some(dx) = acc(nodes, grads, *x) {
                    add_into(dx, g);
                }
                if let Some(db) = acc(nodes, grads, *b) {
                    let n = db.len();
                    for (j, gv) in g.iter().enumerate() {
                        db[j % n] = db[j % n] + *gv;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(dx) = acc(nodes, grads, *x) {
                    for (d, gv) in dx.iter_mut().zip(g) {
                        *d = *d + *c * *gv;
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(dx) = acc(nodes, grads, *x) {
                    for ((d, gv), y) in dx.iter_mut().zip(g).zip(out) {
                        *d = *d + *gv * *y * (T::one() - *y);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(dx) = acc(nodes, grads, *x) {
                    for ((d, gv), y) in dx.iter_mut().zip(g).zip(out) {
                        *d = *d + *gv * (T::one() - *y * *y);
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(dx) = acc(nodes, grads, *x) {
                    for ((d, gv), y) in dx.iter_mut().zip(g).zip(out) {
                        if *y > T::zero() {
                            *d = *d + *gv;
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let n = nodes[i].value.last_dim();
                if let Some(dx) = acc(nodes, grads, *x) {
                    for ((dr, gr), yr) in dx.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                        let s: T = gr.iter().zip(yr).map(|(a, b)| *a * *b).sum();
                        for ((d, gv), y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d = *d + *y * (*gv - s);
                        }
                    }
                }
            }
            Op::Gather { table, idx } => {
                let d = nodes[table.0].value.last_dim();
                if let Some(dt) = acc(nodes, grads, *table) {
                    for (r, ix) in idx.iter().enumerate() {
                        if let Some(ix) = *ix {
                            add_into(&mut dt[ix * d..(ix + 1) * d], &g[r * d..(r + 1) * d]);
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                if *axis == 0 {
                    let mut off = 0;
                    for p in parts {
                        let len = nodes[p.0].value.len();
                        if let Some(dp) = acc(nodes, grads, *p) {
                            add_into(dp, &g[off..off + len]);
                        }
                        off += len;
                    }
                } else {
                    let total = nodes[i].value.last_dim();
                    let mut col = 0;
                    for p in parts {
                        let (rows, w) = dims2(&nodes[p.0].value);
                        if let Some(dp) = acc(nodes, grads, *p) {
                            for r in 0..rows {
                                add_into(&mut dp[r * w..(r + 1) * w], &g[r * total + col..r * total + col + w]);
                            }
                        }
                        col += w;
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let n = nodes[x.0].value.last_dim();
                let len = nodes[i].value.last_dim();
                if let Some(dx) = acc(nodes, grads, *x) {
                    for (r, gr) in g.chunks(len.max(1)).enumerate() {
                        add_into(&mut dx[r * n + start..r * n + start + len], gr);
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let n = nodes[x.0].value.last_dim();
                if let Some(dx) = acc(nodes, grads, *x) {
                    add_into(&mut dx[start * n..start * n + g.len()], g);
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = acc(nodes, grads, *x) {
                    add_into(dx, g);
                }
            }
            Op::Transpose(x) => {
                let (m, n) = dims2(&nodes[x.0].value);
                if let Some(dx) = acc(nodes, grads, *x) {
                    for r in 0..m {
                        for c in 0..n {
                            dx[r * n + c] = dx[r * n + c] + g[c * m + r];
                        }
                    }
                }
            }
            Op::TileRows { x, times } => {
                let len = nodes[x.0].value.len();
                if let Some(dx) = acc(nodes, grads, *x) {
                    for t in 0..*times {
                        add_into(dx, &g[t * len..(t + 1) * len]);
                    }
                }
            }
            Op::Blend { mask, new, old } => {
                let n = nodes[i].value.last_dim();
                if let Some(dn) = acc(nodes, grads, *new) {
                    for (r, w) in mask.iter().enumerate() {
                        for c in 0..n {
                            dn[r * n + c] = dn[r * n + c] + *w * g[r * n + c];
                        }
                    }
                }
                if let Some(dold) = acc(nodes, grads, *old) {
                    for (r, w) in mask.iter().enumerate() {
                        for c in 0..n {
                            dold[r * n + c] = dold[r * n + c] + (T::one() - *w) * g[r * n + c];
                        }
                    }
                }
            }
            Op::Attend { alpha, mem } => {
                let (b, steps) = dims2(&nodes[alpha.0].value);
                let h = nodes[mem.0].value.last_dim();
                if let Some(da) = acc(nodes, grads, *alpha) {
                    let tm = val(*mem);
                    for bi in 0..b {
                        let gr = &g[bi * h..(bi + 1) * h];
                        for t in 0..steps {
                            let row = &tm[(t * b + bi) * h..(t * b + bi + 1) * h];
                            let dot: T = gr.iter().zip(row).map(|(x, y)| *x * *y).sum();
                            da[bi * steps + t] = da[bi * steps + t] + dot;
                        }
                    }
                }
                if let Some(dm) = acc(nodes, grads, *mem) {
                    let ta = val(*alpha);
                    for bi in 0..b {
                        let gr = &g[bi * h..(bi + 1) * h];
                        for t in 0..steps {
                            let w = ta[bi * steps + t];
                            let row = &mut dm[(t * b + bi) * h..(t * b + bi + 1) * h];
                            for (d, gv) in row.iter_mut().zip(gr) {
                                *d = *d + w * *gv;
                            }
                        }
                    }
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let sa = nodes[a.0].value.shape();
                let (bt, m, k) = (sa[0], sa[1], sa[2]);
                let n = nodes[i].value.last_dim();
                if let Some(da) = acc(nodes, grads, *a) {
                    let tb = val(*b);
                    for j in 0..bt {
                        let gj = &g[j * m * n..(j + 1) * m * n];
                        let bj = &tb[j * k * n..(j + 1) * k * n];
                        // dA = dC * B^T; B^T is stored directly when trans_b
                        T::gemm(m, n, k, gj, false, bj, !*trans_b, T::one(), &mut da[j * m * k..(j + 1) * m * k]);
                    }
                }
                if let Some(db) = acc(nodes, grads, *b) {
                    let ta = val(*a);
                    for j in 0..bt {
                        let gj = &g[j * m * n..(j + 1) * m * n];
                        let aj = &ta[j * m * k..(j + 1) * m * k];
                        let dbj = &mut db[j * k * n..(j + 1) * k * n];
                        if *trans_b {
                            T::gemm(n, m, k, gj, true, aj, false, T::one(), dbj);
                        } else {
                            T::gemm(k, m, n, aj, true, gj, false, T::one(), dbj);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let n = nodes[i].value.last_dim();
                let nf = T::from_usize(n).unwrap_or_else(T::one);
                let tg = val(*gain);
                if let Some(dg) = acc(nodes, grads, *gain) {
                    for (j, gv) in g.iter().enumerate() {
                        dg[j % n] = dg[j % n] + *gv * xhat[j];
                    }
                }
                if let Some(db) = acc(nodes, grads, *bias) {
                    for (j, gv) in g.iter().enumerate() {
                        db[j % n] = db[j % n] + *gv;
                    }
                }
                if let Some(dx) = acc(nodes, grads, *x) {
                    for (r, rs) in rstd.iter().enumerate() {
                        let gr = &g[r * n..(r + 1) * n];
                        let xr = &xhat[r * n..(r + 1) * n];
                        let mut mean_d = T::zero();
                        let mut mean_dx = T::zero();
                        for c in 0..n {
                            let dxh = gr[c] * tg[c];
                            mean_d = mean_d + dxh;
                            mean_dx = mean_dx + dxh * xr[c];
                        }
                        mean_d = mean_d / nf;
                        mean_dx = mean_dx / nf;
                        for c in 0..n {
                            let dxh = gr[c] * tg[c];
                            dx[r * n + c] = dx[r * n + c] + *rs * (dxh - mean_d - xr[c] * mean_dx);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = acc(nodes, grads, *x) {
                    for d in dx.iter_mut() {
                        *d = *d + g[0];
                    }
                }
            }
            Op::Mean(x) => {
                if let Some(dx) = acc(nodes, grads, *x) {
                    let c = g[0] / T::from_usize(dx.len()).unwrap_or_else(T::one);
                    for d in dx.iter_mut() {
                        *d = *d + c;
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let v = nodes[logits.0].value.last_dim();
                if let Some(dl) = acc(nodes, grads, *logits) {
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            for c in 0..v {
                                let onehot = if c == t { T::one() } else { T::zero() };
                                dl[r * v + c] = dl[r * v + c] + g[0] * (probs[r * v + c] - onehot);
                            }
                        }
                    }
                }
            }
            Op::SigmoidBce { logits, targets } => {
                if let Some(dl) = acc(nodes, grads, *logits) {
                    for ((d, z), t) in dl.iter_mut().zip(val(*logits)).zip(targets) {
                        *d = *d + g[0] * (sigmoid(*z) - *t);
                    }
                }
            }
        }
    }
}

fn acc<'g, T: Scalar>(nodes: &[Node<T>], grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
    let node = &nodes[v.0];
    if !node.needs_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]))
}

fn dims2<T: Scalar>(t: &Tensor<T>) -> (usize, usize) {
    let s = t.shape();
    (s[0], s[1])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|v| (*v - max).exp()).sum::<T>().ln()
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z = z + *v;
    }
    for v in row.iter_mut() {
        *v = *v / z;
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients for bound parameters, zero-filled where a parameter was unused.
    pub fn for_params(&self, tape: &Tape<T>, bound: &[Var]) -> Vec<Tensor<T>> {
        bound.iter().map(|v| self.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(*v)))).collect()
    }
}
