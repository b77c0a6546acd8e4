use super::{check_finite, matmul_into, split_axis, Result, Scalar, Tensor, TensorError};

/// Handle to a node in a [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Scale(NodeId, Scalar),
    Tanh(NodeId),
    Softmax(NodeId, usize),
    Reshape(NodeId),
    SliceCols { src: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    Bmm(NodeId, NodeId),
    TransposeLast2(NodeId),
    GatherRows { sources: Vec<NodeId>, picks: Vec<(usize, usize)> },
    EmbeddingBag { table: NodeId, bags: Vec<Vec<usize>> },
    Conv1d { input: NodeId, weight: NodeId, bias: NodeId },
    MeanLastAxis(NodeId),
    Sum(NodeId),
    Nll { probs: NodeId, labels: Vec<usize>, clamp: Scalar },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run computation graph. Nodes are appended in evaluation order,
/// so the node list is already a topological order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    clamp_count: usize,
}

/// Gradients of a scalar with respect to every node that requires grad.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not require grad.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    }
}

fn contract(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Contract { op, msg: msg.into() }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of log-probability clamps applied by [`Graph::nll`] so far.
    pub fn clamp_count(&self) -> usize {
        self.clamp_count
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: &Tensor) -> NodeId {
        self.push_raw(value.clone(), Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, shape: Vec<usize>, data: Vec<Scalar>, op: Op, parents: &[NodeId]) -> Result<NodeId> {
        check_finite(name, &data)?;
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_raw(Tensor { shape, data }, op, requires_grad))
    }

    fn v(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.v(a), self.v(b));
        let (m, k) = av.dims2("matmul")?;
        let (k2, n) = bv.dims2("matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", av, bv));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&av.data, &bv.data, &mut out, m, k, n);
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.v(a).transpose()?;
        self.push("transpose", t.shape, t.data, Op::Transpose(a), &[a])
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (av, bv) = (self.v(a), self.v(b));
        if av.shape != bv.shape {
            return Err(mismatch(op, av, bv));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data = self.v(a).data.iter().zip(&self.v(b).data).map(|(x, y)| x + y).collect();
        let shape = self.v(a).shape.clone();
        self.push("add", shape, data, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let data = self.v(a).data.iter().zip(&self.v(b).data).map(|(x, y)| x - y).collect();
        let shape = self.v(a).shape.clone();
        self.push("sub", shape, data, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let data = self.v(a).data.iter().zip(&self.v(b).data).map(|(x, y)| x * y).collect();
        let shape = self.v(a).shape.clone();
        self.push("mul", shape, data, Op::Mul(a, b), &[a, b])
    }

    /// Adds a vector along the last axis of `a`.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.v(a), self.v(bias));
        let n = *av.shape.last().unwrap_or(&0);
        if bv.rank() != 1 || bv.numel() != n {
            return Err(mismatch("add_bias", av, bv));
        }
        let data = av
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv.data[i % n])
            .collect();
        let shape = av.shape.clone();
        self.push("add_bias", shape, data, Op::AddBias(a, bias), &[a, bias])
    }

    pub fn scale(&mut self, a: NodeId, c: Scalar) -> Result<NodeId> {
        let data = self.v(a).data.iter().map(|x| x * c).collect();
        let shape = self.v(a).shape.clone();
        self.push("scale", shape, data, Op::Scale(a, c), &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.v(a).data.iter().map(|x| x.tanh()).collect();
        let shape = self.v(a).shape.clone();
        self.push("tanh", shape, data, Op::Tanh(a), &[a])
    }

    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let t = self.v(a).softmax(axis)?;
        self.push("softmax", t.shape, t.data, Op::Softmax(a, axis), &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let t = self.v(a).reshape(shape)?;
        self.push("reshape", t.shape, t.data, Op::Reshape(a), &[a])
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let av = self.v(a);
        let (m, n) = av.dims2("slice_cols")?;
        if len == 0 || start + len > n {
            return Err(contract("slice_cols", format!("columns {start}..{} out of range for width {n}", start + len)));
        }
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&av.data[r * n + start..r * n + start + len]);
        }
        self.push("slice_cols", vec![m, len], out, Op::SliceCols { src: a, start }, &[a])
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts.first().ok_or_else(|| contract("concat_cols", "no inputs"))?;
        let (m, _) = self.v(*first).dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.v(p).dims2("concat_cols")?;
            if pm != m {
                return Err(mismatch("concat_cols", self.v(*first), self.v(p)));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.v(p).data[r * w..(r + 1) * w]);
            }
        }
        self.push("concat_cols", vec![m, total], out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Batched matrix product of `[B, m, k]` and `[B, k, n]`.
    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.v(a), self.v(b));
        let (ba, m, k, bb, k2, n) = match (av.shape.as_slice(), bv.shape.as_slice()) {
            ([ba, m, k], [bb, k2, n]) => (*ba, *m, *k, *bb, *k2, *n),
            _ => return Err(mismatch("bmm", av, bv)),
        };
        if ba != bb || k != k2 {
            return Err(mismatch("bmm", av, bv));
        }
        let mut out = vec![0.0; ba * m * n];
        for i in 0..ba {
            matmul_into(
                &av.data[i * m * k..(i + 1) * m * k],
                &bv.data[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        self.push("bmm", vec![ba, m, n], out, Op::Bmm(a, b), &[a, b])
    }

    pub fn transpose_last2(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.v(a);
        let [b, m, n] = av.shape[..] else {
            return Err(contract("transpose_last2", format!("expected rank 3, got {:?}", av.shape)));
        };
        let mut out = vec![0.0; b * m * n];
        for i in 0..b {
            for r in 0..m {
                for c in 0..n {
                    out[i * m * n + c * m + r] = av.data[i * m * n + r * n + c];
                }
            }
        }
        self.push("transpose_last2", vec![b, n, m], out, Op::TransposeLast2(a), &[a])
    }

    /// Builds a matrix whose row `r` is row `picks[r].1` of `sources[picks[r].0]`.
    pub fn gather_rows(&mut self, sources: &[NodeId], picks: &[(usize, usize)]) -> Result<NodeId> {
        let first = sources.first().ok_or_else(|| contract("gather_rows", "no sources"))?;
        let (_, n) = self.v(*first).dims2("gather_rows")?;
        for &s in sources {
            let (_, sn) = self.v(s).dims2("gather_rows")?;
            if sn != n {
                return Err(mismatch("gather_rows", self.v(*first), self.v(s)));
            }
        }
        if picks.is_empty() {
            return Err(contract("gather_rows", "no rows picked"));
        }
        let mut out = Vec::with_capacity(picks.len() * n);
        for &(s, r) in picks {
            let src = sources
                .get(s)
                .map(|&id| self.v(id))
                .ok_or_else(|| contract("gather_rows", format!("source {s} out of range")))?;
            if r >= src.shape[0] {
                return Err(contract("gather_rows", format!("row {r} out of range for {:?}", src.shape)));
            }
            out.extend_from_slice(&src.data[r * n..(r + 1) * n]);
        }
        let op = Op::GatherRows {
            sources: sources.to_vec(),
            picks: picks.to_vec(),
        };
        self.push("gather_rows", vec![picks.len(), n], out, op, sources)
    }

    /// Mean of the table rows listed in each bag; one output row per bag.
    pub fn embedding_bag(&mut self, table: NodeId, bags: &[Vec<usize>]) -> Result<NodeId> {
        let tv = self.v(table);
        let (vocab, d) = tv.dims2("embedding_bag")?;
        if bags.is_empty() {
            return Err(contract("embedding_bag", "no bags"));
        }
        let mut out = vec![0.0; bags.len() * d];
        for (b, bag) in bags.iter().enumerate() {
            if bag.is_empty() {
                return Err(contract("embedding_bag", format!("bag {b} is empty")));
            }
            let w = 1.0 / bag.len() as Scalar;
            let row = &mut out[b * d..(b + 1) * d];
            for &t in bag {
                if t >= vocab {
                    return Err(contract("embedding_bag", format!("index {t} out of range for vocab {vocab}")));
                }
                for (o, e) in row.iter_mut().zip(&tv.data[t * d..(t + 1) * d]) {
                    *o += e;
                }
            }
            for o in row.iter_mut() {
                *o *= w;
            }
        }
        let op = Op::EmbeddingBag {
            table,
            bags: bags.to_vec(),
        };
        self.push("embedding_bag", vec![bags.len(), d], out, op, &[table])
    }

    /// Single-input-channel 1-D convolution, stride 1, no padding.
    /// `input` is `[B, L]`, `weight` is `[C, K]`, `bias` is `[C]`; output is `[B, C, L - K + 1]`.
    pub fn conv1d(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let (iv, wv, bv) = (self.v(input), self.v(weight), self.v(bias));
        let (batch, len) = iv.dims2("conv1d")?;
        let (channels, kernel) = wv.dims2("conv1d")?;
        if bv.shape != [channels] {
            return Err(mismatch("conv1d", wv, bv));
        }
        if kernel > len {
            return Err(mismatch("conv1d", iv, wv));
        }
        let positions = len - kernel + 1;
        let mut out = vec![0.0; batch * channels * positions];
        for b in 0..batch {
            let x = &iv.data[b * len..(b + 1) * len];
            for c in 0..channels {
                let w = &wv.data[c * kernel..(c + 1) * kernel];
                let base = (b * channels + c) * positions;
                for p in 0..positions {
                    let mut acc = bv.data[c];
                    for j in 0..kernel {
                        acc += w[j] * x[p + j];
                    }
                    out[base + p] = acc;
                }
            }
        }
        let op = Op::Conv1d { input, weight, bias };
        self.push("conv1d", vec![batch, channels, positions], out, op, &[input, weight, bias])
    }

    /// Mean over the last axis, dropping it.
    pub fn mean_last_axis(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.v(a);
        if av.rank() < 2 {
            return Err(contract("mean_last_axis", format!("expected rank >= 2, got {:?}", av.shape)));
        }
        let n = *av.shape.last().unwrap();
        let data = av.data.chunks(n).map(|c| c.iter().sum::<Scalar>() / n as Scalar).collect();
        let shape = av.shape[..av.rank() - 1].to_vec();
        self.push("mean_last_axis", shape, data, Op::MeanLastAxis(a), &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.v(a).data.iter().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(a), &[a])
    }

    /// Mean negative log-probability of the gold labels, `-(1/N) Σ log p[i, y_i]`.
    /// Probabilities below `clamp` are clamped and counted.
    pub fn nll(&mut self, probs: NodeId, labels: &[usize], clamp: Scalar) -> Result<NodeId> {
        let pv = self.v(probs);
        let (rows, classes) = pv.dims2("nll")?;
        if rows != labels.len() {
            return Err(contract("nll", format!("{rows} probability rows but {} labels", labels.len())));
        }
        let mut total = 0.0;
        let mut clamped = 0;
        for (r, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(contract("nll", format!("label {y} out of range for {classes} classes")));
            }
            let p = pv.data[r * classes + y];
            if p < clamp {
                clamped += 1;
            }
            total -= p.max(clamp).ln();
        }
        self.clamp_count += clamped;
        let loss = total / rows as Scalar;
        let op = Op::Nll {
            probs,
            labels: labels.to_vec(),
            clamp,
        };
        self.push("nll", vec![1], vec![loss], op, &[probs])
    }

    /// Reverse-mode sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.v(loss);
        if lv.numel() != 1 {
            return Err(contract("backward", format!("loss must be scalar, got shape {:?}", lv.shape)));
        }
        let mut grads: Vec<Option<Vec<Scalar>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                node.requires_grad.then(|| Tensor {
                    shape: node.value.shape.clone(),
                    data: g.unwrap_or_else(|| vec![0.0; node.value.numel()]),
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[Scalar], grads: &mut [Option<Vec<Scalar>>]) {
        let node = &self.nodes[i];
        let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut [Scalar])| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            let slot = grads[id.0].get_or_insert_with(|| vec![0.0; self.nodes[id.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.v(*a), self.v(*b));
                let (m, k) = (av.shape[0], av.shape[1]);
                let n = bv.shape[1];
                acc(*a, &mut |ga| {
                    for r in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for c in 0..n {
                                s += g[r * n + c] * bv.data[p * n + c];
                            }
                            ga[r * k + p] += s;
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for r in 0..m {
                        for p in 0..k {
                            let av = av.data[r * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for c in 0..n {
                                gb[p * n + c] += av * g[r * n + c];
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = (node.value.shape[0], node.value.shape[1]);
                acc(*a, &mut |ga| {
                    for r in 0..m {
                        for c in 0..n {
                            ga[c * m + r] += g[r * n + c];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.v(*a), self.v(*b));
                acc(*a, &mut |ga| {
                    for ((x, gi), bi) in ga.iter_mut().zip(g).zip(&bv.data) {
                        *x += gi * bi;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((x, gi), ai) in gb.iter_mut().zip(g).zip(&av.data) {
                        *x += gi * ai;
                    }
                });
            }
            Op::AddBias(a, bias) => {
                acc(*a, &mut |ga| add_into(ga, g));
                let n = self.v(*bias).numel();
                acc(*bias, &mut |gb| {
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % n] += gi;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)),
            Op::Tanh(a) => {
                let y = &node.value.data;
                acc(*a, &mut |ga| {
                    for ((x, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                        *x += gi * (1.0 - yi * yi);
                    }
                });
            }
            Op::Softmax(a, axis) => {
                let y = &node.value.data;
                let (outer, n, inner) = split_axis(&node.value.shape, *axis);
                acc(*a, &mut |ga| {
                    for o in 0..outer {
                        for s in 0..inner {
                            let idx = |j: usize| o * n * inner + j * inner + s;
                            let dot: Scalar = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                            for j in 0..n {
                                ga[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::SliceCols { src, start } => {
                let n = self.v(*src).shape[1];
                let (m, len) = (node.value.shape[0], node.value.shape[1]);
                acc(*src, &mut |gs| {
                    for r in 0..m {
                        add_into(&mut gs[r * n + start..r * n + start + len], &g[r * len..(r + 1) * len]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (m, total) = (node.value.shape[0], node.value.shape[1]);
                let mut offset = 0;
                for &p in parts {
                    let w = self.v(p).shape[1];
                    acc(p, &mut |gp| {
                        for r in 0..m {
                            add_into(&mut gp[r * w..(r + 1) * w], &g[r * total + offset..r * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::Bmm(a, b) => {
                let (av, bv) = (self.v(*a), self.v(*b));
                let (batch, m, k) = (av.shape[0], av.shape[1], av.shape[2]);
                let n = bv.shape[2];
                acc(*a, &mut |ga| {
                    for i in 0..batch {
                        let (ao, bo, go) = (i * m * k, i * k * n, i * m * n);
                        for r in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for c in 0..n {
                                    s += g[go + r * n + c] * bv.data[bo + p * n + c];
                                }
                                ga[ao + r * k + p] += s;
                            }
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..batch {
                        let (ao, bo, go) = (i * m * k, i * k * n, i * m * n);
                        for r in 0..m {
                            for p in 0..k {
                                let x = av.data[ao + r * k + p];
                                for c in 0..n {
                                    gb[bo + p * n + c] += x * g[go + r * n + c];
                                }
                            }
                        }
                    }
                });
            }
            Op::TransposeLast2(a) => {
                let (b, n, m) = (node.value.shape[0], node.value.shape[1], node.value.shape[2]);
                acc(*a, &mut |ga| {
                    for i in 0..b {
                        for r in 0..m {
                            for c in 0..n {
                                ga[i * m * n + r * n + c] += g[i * m * n + c * m + r];
                            }
                        }
                    }
                });
            }
            Op::GatherRows { sources, picks } => {
                let n = node.value.shape[1];
                for (s, &src) in sources.iter().enumerate() {
                    acc(src, &mut |gs| {
                        for (r, &(ps, row)) in picks.iter().enumerate() {
                            if ps == s {
                                add_into(&mut gs[row * n..(row + 1) * n], &g[r * n..(r + 1) * n]);
                            }
                        }
                    });
                }
            }
            Op::EmbeddingBag { table, bags } => {
                let d = node.value.shape[1];
                acc(*table, &mut |gt| {
                    for (b, bag) in bags.iter().enumerate() {
                        let w = 1.0 / bag.len() as Scalar;
                        for &t in bag {
                            for (x, gi) in gt[t * d..(t + 1) * d].iter_mut().zip(&g[b * d..(b + 1) * d]) {
                                *x += w * gi;
                            }
                        }
                    }
                });
            }
            Op::Conv1d { input, weight, bias } => {
                let (iv, wv) = (self.v(*input), self.v(*weight));
                let (batch, len) = (iv.shape[0], iv.shape[1]);
                let (channels, kernel) = (wv.shape[0], wv.shape[1]);
                let positions = len - kernel + 1;
                acc(*bias, &mut |gb| {
                    for b in 0..batch {
                        for c in 0..channels {
                            let base = (b * channels + c) * positions;
                            gb[c] += g[base..base + positions].iter().sum::<Scalar>();
                        }
                    }
                });
                acc(*weight, &mut |gw| {
                    for b in 0..batch {
                        let x = &iv.data[b * len..(b + 1) * len];
                        for c in 0..channels {
                            let base = (b * channels + c) * positions;
                            for j in 0..kernel {
                                let mut s = 0.0;
                                for p in 0..positions {
                                    s += g[base + p] * x[p + j];
                                }
                                gw[c * kernel + j] += s;
                            }
                        }
                    }
                });
                acc(*input, &mut |gi| {
                    for b in 0..batch {
                        for c in 0..channels {
                            let base = (b * channels + c) * positions;
                            for p in 0..positions {
                                for j in 0..kernel {
                                    gi[b * len + p + j] += g[base + p] * wv.data[c * kernel + j];
                                }
                            }
                        }
                    }
                });
            }
            Op::MeanLastAxis(a) => {
                let n = *self.v(*a).shape.last().unwrap();
                acc(*a, &mut |ga| {
                    for (chunk, gi) in ga.chunks_mut(n).zip(g) {
                        chunk.iter_mut().for_each(|x| *x += gi / n as Scalar);
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::Nll { probs, labels, clamp } => {
                let pv = self.v(*probs);
                let classes = pv.shape[1];
                let n = labels.len() as Scalar;
                acc(*probs, &mut |gp| {
                    for (r, &y) in labels.iter().enumerate() {
                        let p = pv.data[r * classes + y];
                        if p >= *clamp {
                            gp[r * classes + y] -= g[0] / (n * p);
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [Scalar], src: &[Scalar]) {
    dst.iter_mut().zip(src).for_each(|(x, y)| *x += y);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut g = Graph::new();
        let w = g.param(&Tensor::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]));
        let s = g.sum(w).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn square_gradient_at_three() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(g.value(y).item(), 9.0);
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(TensorError::Contract { op: "backward", .. })));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0));
        let x = g.param(&Tensor::scalar(5.0));
        let y = g.mul(c, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().item(), 2.0);
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let mut g = Graph::new();
        let unused = g.param(&Tensor::zeros(&[3]));
        let x = g.param(&Tensor::scalar(1.0));
        let y = g.scale(x, 4.0).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(unused).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn nll_clamps_zero_probability() {
        let mut g = Graph::new();
        let p = g.param(&Tensor::from_rows(&[&[1.0, 0.0]]));
        let l = g.nll(p, &[1], 1e-12).unwrap();
        assert!((g.value(l).item() - (-(1e-12f64).ln())).abs() < 1e-9);
        assert_eq!(g.clamp_count(), 1);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(p).unwrap().is_finite());
    }

    #[test]
    fn non_finite_result_is_an_error() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::scalar(1e300));
        let err = g.mul(x, x).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { op: "mul", .. }));
    }

    #[test]
    fn embedding_bag_duplicate_tokens_pool_identically() {
        let table = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, -4.0]]);
        let mut g = Graph::new();
        let t = g.param(&table);
        let out = g.embedding_bag(t, &[vec![1], vec![1, 1]]).unwrap();
        let v = g.value(out);
        assert_eq!(v.row(0), v.row(1));
    }
}
