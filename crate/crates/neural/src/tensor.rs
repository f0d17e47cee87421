//! Arena-based reverse-mode autodiff over dense 2-d tensors.
//!
//! A [`Graph`] owns every intermediate value of one forward pass. Ops
//! evaluate eagerly as nodes are added; [`Graph::backward`] sweeps the
//! arena in reverse insertion order, which is a valid topological order
//! because inputs always precede their consumers. There is no global
//! state: independent graphs never interact.
//!
//! Shape violations are caller bugs and panic with the op name and the
//! offending shapes.

/// Row-major dense matrix. Everything is f64; gradient checks need the
/// headroom.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor { shape, data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::matrix(rows, cols, vec![0.0; rows * cols])
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::matrix(1, 1, vec![v])
    }

    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "expected 2-d tensor, got {:?}", self.shape);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "expected 2-d tensor, got {:?}", self.shape);
        self.shape[1]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Handle into a [`Graph`]'s node arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    Concat { parts: Vec<NodeId>, axis: usize },
    Slice { a: NodeId, axis: usize, start: usize },
    Transpose { a: NodeId },
    Embedding { table: NodeId, ids: Vec<usize> },
    SoftmaxRows { a: NodeId },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, eps: f64 },
    Gelu { a: NodeId },
    Relu { a: NodeId },
    Sigmoid { a: NodeId },
    Tanh { a: NodeId },
    Mean { a: NodeId },
    Sum { a: NodeId },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    grad: Vec<f64>,
}

/// One forward pass worth of nodes plus their gradients.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

// (r×k)(k×c) with the k-loop in the middle so inner loops run over
// contiguous rows.
fn mm_nn(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let orow = &mut out[i * c..(i + 1) * c];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * c..(kk + 1) * c];
            for j in 0..c {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

// (r×k)(c×k)ᵀ: rows of both operands are contiguous, so each output
// cell is a straight dot product.
fn mm_nt(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..c {
            let brow = &b[j * k..(j + 1) * k];
            out[i * c + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

// (n×r)ᵀ(n×c): accumulate rank-1 updates row by row.
fn mm_tn(a: &[f64], b: &[f64], n: usize, r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..n {
        let arow = &a[i * r..(i + 1) * r];
        let brow = &b[i * c..(i + 1) * c];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[kk * c..(kk + 1) * c];
            for j in 0..c {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn gelu_forward(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let grad = vec![0.0; value.numel()];
        self.nodes.push(Node { op, value, grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert an input tensor. Leaves are where gradients are read back.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        let (r, k, c) = (av.rows(), av.cols(), bv.cols());
        assert_eq!(
            k,
            bv.rows(),
            "matmul: incompatible shapes {:?} x {:?}",
            av.shape,
            bv.shape
        );
        let data = mm_nn(&av.data, &bv.data, r, k, c);
        self.push(Op::Matmul { a, b }, Tensor::matrix(r, c, data))
    }

    /// Elementwise add; a (1×c) right operand broadcasts over rows.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        let (r, c) = (av.rows(), av.cols());
        let data = if bv.shape == av.shape {
            av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect()
        } else if bv.rows() == 1 && bv.cols() == c {
            let mut out = av.data.clone();
            for i in 0..r {
                for j in 0..c {
                    out[i * c + j] += bv.data[j];
                }
            }
            out
        } else {
            panic!("add: incompatible shapes {:?} + {:?}", av.shape, bv.shape);
        };
        self.push(Op::Add { a, b }, Tensor::matrix(r, c, data))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.shape, bv.shape,
            "mul: incompatible shapes {:?} * {:?}",
            av.shape, bv.shape
        );
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
        let shape = av.shape.clone();
        self.push(Op::Mul { a, b }, Tensor::new(shape, data))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let av = self.value(a);
        let data = av.data.iter().map(|x| x * c).collect();
        let shape = av.shape.clone();
        self.push(Op::Scale { a, c }, Tensor::new(shape, data))
    }

    /// Concatenate along `axis` (0 stacks rows, 1 widens columns).
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> NodeId {
        assert!(!parts.is_empty(), "concat: empty part list");
        assert!(axis < 2, "concat: axis {axis} out of range");
        let first = self.value(parts[0]);
        let (mut r, mut c) = (first.rows(), first.cols());
        for &p in &parts[1..] {
            let v = self.value(p);
            if axis == 0 {
                assert_eq!(
                    v.cols(),
                    c,
                    "concat axis 0: column mismatch {:?} vs {:?}",
                    v.shape,
                    first.shape
                );
                r += v.rows();
            } else {
                assert_eq!(
                    v.rows(),
                    r,
                    "concat axis 1: row mismatch {:?} vs {:?}",
                    v.shape,
                    first.shape
                );
                c += v.cols();
            }
        }
        let mut data = vec![0.0; r * c];
        if axis == 0 {
            let mut row = 0;
            for &p in parts {
                let v = self.value(p);
                let n = v.numel();
                data[row * c..row * c + n].copy_from_slice(&v.data);
                row += v.rows();
            }
        } else {
            let mut col = 0;
            for &p in parts {
                let v = self.value(p);
                let w = v.cols();
                for i in 0..r {
                    data[i * c + col..i * c + col + w]
                        .copy_from_slice(&v.data[i * w..(i + 1) * w]);
                }
                col += w;
            }
        }
        self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            Tensor::matrix(r, c, data),
        )
    }

    /// Contiguous `len` rows (axis 0) or columns (axis 1) from `start`.
    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> NodeId {
        assert!(axis < 2, "slice: axis {axis} out of range");
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        let bound = if axis == 0 { r } else { c };
        assert!(
            start + len <= bound,
            "slice: range {start}..{} exceeds axis {axis} of {:?}",
            start + len,
            av.shape
        );
        let value = if axis == 0 {
            Tensor::matrix(len, c, av.data[start * c..(start + len) * c].to_vec())
        } else {
            let mut data = Vec::with_capacity(r * len);
            for i in 0..r {
                data.extend_from_slice(&av.data[i * c + start..i * c + start + len]);
            }
            Tensor::matrix(r, len, data)
        };
        self.push(Op::Slice { a, axis, start }, value)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = av.data[i * c + j];
            }
        }
        self.push(Op::Transpose { a }, Tensor::matrix(c, r, data))
    }

    /// Gather rows of `table` by index; the standard embedding forward.
    pub fn embedding_lookup(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let tv = self.value(table);
        let (v, h) = (tv.rows(), tv.cols());
        let mut data = Vec::with_capacity(ids.len() * h);
        for &id in ids {
            assert!(
                id < v,
                "embedding_lookup: id {id} out of range for table {:?}",
                tv.shape
            );
            data.extend_from_slice(&tv.data[id * h..(id + 1) * h]);
        }
        self.push(
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            Tensor::matrix(ids.len(), h, data),
        )
    }

    /// Row-wise softmax, max-shifted for stability.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &av.data[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                data[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                data[i * c + j] /= sum;
            }
        }
        self.push(Op::SoftmaxRows { a }, Tensor::matrix(r, c, data))
    }

    /// Per-row normalization with learned gain and bias (both 1×c).
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> NodeId {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let gv = self.value(gain);
        let bv = self.value(bias);
        assert!(
            gv.rows() == 1 && gv.cols() == c && bv.rows() == 1 && bv.cols() == c,
            "layer_norm: gain {:?} / bias {:?} must be 1x{c}",
            gv.shape,
            bv.shape
        );
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv.data[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                let xh = (row[j] - mean) * inv;
                data[i * c + j] = gv.data[j] * xh + bv.data[j];
            }
        }
        self.push(
            Op::LayerNorm { x, gain, bias, eps },
            Tensor::matrix(r, c, data),
        )
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let data = av.data.iter().map(|&x| gelu_forward(x)).collect();
        let shape = av.shape.clone();
        self.push(Op::Gelu { a }, Tensor::new(shape, data))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let data = av.data.iter().map(|&x| x.max(0.0)).collect();
        let shape = av.shape.clone();
        self.push(Op::Relu { a }, Tensor::new(shape, data))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let data = av.data.iter().map(|&x| sigmoid(x)).collect();
        let shape = av.shape.clone();
        self.push(Op::Sigmoid { a }, Tensor::new(shape, data))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let data = av.data.iter().map(|&x| x.tanh()).collect();
        let shape = av.shape.clone();
        self.push(Op::Tanh { a }, Tensor::new(shape, data))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let m = av.data.iter().sum::<f64>() / av.numel() as f64;
        self.push(Op::Mean { a }, Tensor::scalar(m))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data.iter().sum::<f64>();
        self.push(Op::Sum { a }, Tensor::scalar(s))
    }

    /// Backpropagate from a scalar node, seeding with 1.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(
            self.nodes[loss.0].value.numel(),
            1,
            "backward: loss must be scalar, got {:?}",
            self.nodes[loss.0].value.shape
        );
        self.backward_seeded(&[(loss, vec![1.0])]);
    }

    /// Backpropagate from externally supplied output gradients. Used
    /// when the loss is computed outside the graph.
    pub fn backward_seeded(&mut self, seeds: &[(NodeId, Vec<f64>)]) {
        for (id, seed) in seeds {
            assert_eq!(
                seed.len(),
                self.nodes[id.0].value.numel(),
                "backward_seeded: seed length {} does not match node shape {:?}",
                seed.len(),
                self.nodes[id.0].value.shape
            );
            for (g, s) in self.nodes[id.0].grad.iter_mut().zip(seed) {
                *g += s;
            }
        }
        for i in (0..self.nodes.len()).rev() {
            self.propagate(i);
        }
    }

    fn add_grad(&mut self, id: NodeId, delta: &[f64]) {
        for (g, d) in self.nodes[id.0].grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    fn propagate(&mut self, i: usize) {
        let gout = std::mem::take(&mut self.nodes[i].grad);
        if gout.iter().all(|&g| g == 0.0) {
            self.nodes[i].grad = gout;
            return;
        }
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (r, k, c) = (av.rows(), av.cols(), bv.cols());
                let da = mm_nt(&gout, &bv.data, r, c, k);
                let db = mm_tn(&av.data, &gout, r, k, c);
                self.add_grad(a, &da);
                self.add_grad(b, &db);
            }
            Op::Add { a, b } => {
                self.add_grad(a, &gout);
                let bv = &self.nodes[b.0].value;
                if bv.numel() == gout.len() {
                    self.add_grad(b, &gout);
                } else {
                    // Row-broadcast operand: sum the gradient over rows.
                    let c = bv.cols();
                    let mut db = vec![0.0; c];
                    for (j, g) in gout.iter().enumerate() {
                        db[j % c] += g;
                    }
                    self.add_grad(b, &db);
                }
            }
            Op::Mul { a, b } => {
                let bv = &self.nodes[b.0].value.data;
                let da: Vec<f64> = gout.iter().zip(bv).map(|(g, y)| g * y).collect();
                let av = &self.nodes[a.0].value.data;
                let db: Vec<f64> = gout.iter().zip(av).map(|(g, x)| g * x).collect();
                self.add_grad(a, &da);
                self.add_grad(b, &db);
            }
            Op::Scale { a, c } => {
                let da: Vec<f64> = gout.iter().map(|g| g * c).collect();
                self.add_grad(a, &da);
            }
            Op::Concat { parts, axis } => {
                let c = self.nodes[i].value.cols();
                if axis == 0 {
                    let mut row = 0;
                    for p in parts {
                        let pr = self.nodes[p.0].value.rows();
                        let n = pr * c;
                        self.add_grad(p, &gout[row * c..row * c + n]);
                        row += pr;
                    }
                } else {
                    let r = self.nodes[i].value.rows();
                    let mut col = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.cols();
                        let mut dp = vec![0.0; r * w];
                        for ri in 0..r {
                            dp[ri * w..(ri + 1) * w]
                                .copy_from_slice(&gout[ri * c + col..ri * c + col + w]);
                        }
                        self.add_grad(p, &dp);
                        col += w;
                    }
                }
            }
            Op::Slice { a, axis, start } => {
                let (sr, sc) = {
                    let v = &self.nodes[i].value;
                    (v.rows(), v.cols())
                };
                let (ar, ac) = {
                    let v = &self.nodes[a.0].value;
                    (v.rows(), v.cols())
                };
                let mut da = vec![0.0; ar * ac];
                if axis == 0 {
                    da[start * ac..start * ac + sr * sc].copy_from_slice(&gout);
                } else {
                    for ri in 0..sr {
                        da[ri * ac + start..ri * ac + start + sc]
                            .copy_from_slice(&gout[ri * sc..(ri + 1) * sc]);
                    }
                }
                self.add_grad(a, &da);
            }
            Op::Transpose { a } => {
                let (r, c) = {
                    let v = &self.nodes[i].value;
                    (v.rows(), v.cols())
                };
                let mut da = vec![0.0; r * c];
                for ri in 0..r {
                    for ci in 0..c {
                        da[ci * r + ri] = gout[ri * c + ci];
                    }
                }
                self.add_grad(a, &da);
            }
            Op::Embedding { table, ids } => {
                let h = self.nodes[table.0].value.cols();
                let v = self.nodes[table.0].value.rows();
                let mut dt = vec![0.0; v * h];
                for (row, &id) in ids.iter().enumerate() {
                    for j in 0..h {
                        dt[id * h + j] += gout[row * h + j];
                    }
                }
                self.add_grad(table, &dt);
            }
            Op::SoftmaxRows { a } => {
                let y = &self.nodes[i].value;
                let (r, c) = (y.rows(), y.cols());
                let mut da = vec![0.0; r * c];
                for ri in 0..r {
                    let yr = &y.data[ri * c..(ri + 1) * c];
                    let gr = &gout[ri * c..(ri + 1) * c];
                    let inner: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for ci in 0..c {
                        da[ri * c + ci] = yr[ci] * (gr[ci] - inner);
                    }
                }
                self.add_grad(a, &da);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let (r, c) = {
                    let v = &self.nodes[x.0].value;
                    (v.rows(), v.cols())
                };
                let mut dx = vec![0.0; r * c];
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                {
                    let xv = &self.nodes[x.0].value.data;
                    let gv = &self.nodes[gain.0].value.data;
                    for ri in 0..r {
                        let row = &xv[ri * c..(ri + 1) * c];
                        let gr = &gout[ri * c..(ri + 1) * c];
                        let mean = row.iter().sum::<f64>() / c as f64;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        // dy = gain ⊙ gout; dx = (dy − mean(dy) − x̂·mean(dy⊙x̂))·inv
                        let mut dy_mean = 0.0;
                        let mut dyxh_mean = 0.0;
                        for ci in 0..c {
                            let xh = (row[ci] - mean) * inv;
                            let dy = gv[ci] * gr[ci];
                            dy_mean += dy;
                            dyxh_mean += dy * xh;
                            dg[ci] += gr[ci] * xh;
                            db[ci] += gr[ci];
                        }
                        dy_mean /= c as f64;
                        dyxh_mean /= c as f64;
                        for ci in 0..c {
                            let xh = (row[ci] - mean) * inv;
                            let dy = gv[ci] * gr[ci];
                            dx[ri * c + ci] = (dy - dy_mean - xh * dyxh_mean) * inv;
                        }
                    }
                }
                self.add_grad(x, &dx);
                self.add_grad(gain, &dg);
                self.add_grad(bias, &db);
            }
            Op::Gelu { a } => {
                let da: Vec<f64> = self.nodes[a.0]
                    .value
                    .data
                    .iter()
                    .zip(&gout)
                    .map(|(&x, g)| g * gelu_derivative(x))
                    .collect();
                self.add_grad(a, &da);
            }
            Op::Relu { a } => {
                let da: Vec<f64> = self.nodes[a.0]
                    .value
                    .data
                    .iter()
                    .zip(&gout)
                    .map(|(&x, g)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.add_grad(a, &da);
            }
            Op::Sigmoid { a } => {
                let da: Vec<f64> = self.nodes[i]
                    .value
                    .data
                    .iter()
                    .zip(&gout)
                    .map(|(&y, g)| g * y * (1.0 - y))
                    .collect();
                self.add_grad(a, &da);
            }
            Op::Tanh { a } => {
                let da: Vec<f64> = self.nodes[i]
                    .value
                    .data
                    .iter()
                    .zip(&gout)
                    .map(|(&y, g)| g * (1.0 - y * y))
                    .collect();
                self.add_grad(a, &da);
            }
            Op::Mean { a } => {
                let n = self.nodes[a.0].value.numel() as f64;
                let g = gout[0] / n;
                let da = vec![g; n as usize];
                self.add_grad(a, &da);
            }
            Op::Sum { a } => {
                let n = self.nodes[a.0].value.numel();
                let da = vec![gout[0]; n];
                self.add_grad(a, &da);
            }
        }
        self.nodes[i].grad = gout;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
