use super::kernels::{self, Boundary};
use super::{Result, Scalar, Shape, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op<T> {
    Leaf,
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
    },
    AddScalar(Var),
    MulScalar(Var, T),
    Exp(Var),
    Log(Var),
    Abs(Var),
    LeakyRelu(Var, T),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Down2x(Var),
    Resize(Var, Boundary),
    /// `out[i] = x[index[i]]`
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    /// `out[index[i]] += x[i]`
    ScatterAdd {
        x: Var,
        index: Vec<usize>,
    },
    Concat(Vec<Var>),
    /// `(N,C,H,W) + (1,C,H,W)`
    AddBatchBroadcast(Var, Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Attend {
        q: Var,
        k: Var,
        v: Var,
        weights: Tensor<T>,
    },
    SoftHistogram(Var, usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations in evaluation order so gradients can be propagated in
/// reverse. Parents always precede children, so a single reverse sweep
/// visits every node once.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a = *a + b),
        slot @ None => *slot = Some(g),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_from(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, rg)
    }

    /// Leaf that participates in differentiation.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let broadcast = sb.numel() == 1;
        if sa != sb && !broadcast {
            let op = match kind {
                BinaryKind::Add => "add",
                BinaryKind::Sub => "sub",
                BinaryKind::Mul => "mul",
                BinaryKind::Div => "div",
            };
            return Err(TensorError::ShapeMismatch { op, lhs: sa, rhs: sb });
        }
        let av = self.value(a);
        let bv = self.value(b);
        let f = |x: T, y: T| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let data: Vec<T> = if broadcast {
            let y = bv.data()[0];
            av.data().iter().map(|&x| f(x, y)).collect()
        } else {
            av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect()
        };
        let value = Tensor::from_vec(sa, data)?;
        Ok(self.push_from(value, Op::Binary { kind, a, b }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).map(|x| x + s);
        self.push_from(value, Op::AddScalar(a), &[a])
    }

    pub fn scalar_mul(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push_from(value, Op::MulScalar(a, s), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a).expect("same shape")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(T::exp);
        self.push_from(value, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|v| **v <= T::zero()) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        let value = self.value(a).map(T::ln);
        Ok(self.push_from(value, Op::Log(a), &[a]))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(T::abs);
        self.push_from(value, Op::Abs(a), &[a])
    }

    /// `x` for `x >= 0`, else `alpha·x`. The subgradient at zero is `alpha`.
    pub fn leaky_relu(&mut self, a: Var, alpha: T) -> Var {
        let value = self.value(a).map(|x| if x > T::zero() { x } else { alpha * x });
        self.push_from(value, Op::LeakyRelu(a, alpha), &[a])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let value = kernels::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push_from(value, Op::Conv2d { x, w, b, stride, pad }, &parents))
    }

    /// Averages disjoint 2×2 blocks.
    pub fn down2x(&mut self, x: Var) -> Result<Var> {
        let value = kernels::down2x(self.value(x))?;
        Ok(self.push_from(value, Op::Down2x(x), &[x]))
    }

    /// Doubles `H` and `W` by bilinear interpolation with edge clamping.
    pub fn up2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        self.resize(x, 2 * s.h(), 2 * s.w(), Boundary::Clamp)
    }

    pub fn resize(&mut self, x: Var, h: usize, w: usize, boundary: Boundary) -> Result<Var> {
        let value = kernels::resize_bilinear(self.value(x), h, w, boundary)?;
        Ok(self.push_from(value, Op::Resize(x, boundary), &[x]))
    }

    /// Output element `i` is input element `index[i]`.
    pub fn gather(&mut self, x: Var, shape: Shape, index: Vec<usize>) -> Result<Var> {
        let src = self.value(x);
        if index.len() != shape.numel() || index.iter().any(|&i| i >= src.numel()) {
            return Err(TensorError::InvalidArgument {
                op: "gather",
                detail: format!("index map does not fit {} -> {}", src.shape(), shape),
            });
        }
        let data = index.iter().map(|&i| src.data()[i]).collect();
        let value = Tensor::from_vec(shape, data)?;
        Ok(self.push_from(value, Op::Gather { x, index }, &[x]))
    }

    /// Input element `i` is added into output element `index[i]`.
    pub fn scatter_add(&mut self, x: Var, shape: Shape, index: Vec<usize>) -> Result<Var> {
        let src = self.value(x);
        if index.len() != src.numel() || index.iter().any(|&i| i >= shape.numel()) {
            return Err(TensorError::InvalidArgument {
                op: "scatter_add",
                detail: format!("index map does not fit {} -> {}", src.shape(), shape),
            });
        }
        let mut value = Tensor::zeros(shape);
        for (&i, &v) in index.iter().zip(src.data()) {
            value.data_mut()[i] = value.data()[i] + v;
        }
        Ok(self.push_from(value, Op::ScatterAdd { x, index }, &[x]))
    }

    /// Reflect padding (mirror without repeating the edge sample).
    pub fn pad_reflect(&mut self, x: Var, pads: [usize; 4]) -> Result<Var> {
        if pads == [0; 4] {
            return Ok(x);
        }
        let (shape, index) = kernels::reflect_pad_index(self.shape(x), pads);
        self.gather(x, shape, index)
    }

    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(x);
        if top == 0 && left == 0 && h == s.h() && w == s.w() {
            return Ok(x);
        }
        let (shape, index) = kernels::crop_index(s, top, left, h, w)?;
        self.gather(x, shape, index)
    }

    /// `(N,C,H,W)` → `(N,1,K,C·p·p)`, patches in raster order.
    pub fn unfold_patches(&mut self, x: Var, p: usize, stride: usize) -> Result<Var> {
        let (shape, index) = kernels::unfold_index(self.shape(x), p, stride)?;
        self.gather(x, shape, index)
    }

    /// Inverse of [`Tape::unfold_patches`]; overlapping patches are summed.
    pub fn fold_patches(&mut self, patches: Var, target: Shape, p: usize, stride: usize) -> Result<Var> {
        let (shape, index) = kernels::unfold_index(target, p, stride)?;
        if shape != self.shape(patches) {
            return Err(TensorError::ShapeMismatch {
                op: "fold_patches",
                lhs: shape,
                rhs: self.shape(patches),
            });
        }
        self.scatter_add(patches, target, index)
    }

    /// Batch item `n` as a `(1,C,H,W)` tensor.
    pub fn select_batch(&mut self, x: Var, n: usize) -> Result<Var> {
        let s = self.shape(x);
        if n >= s.n() {
            return Err(TensorError::InvalidArgument {
                op: "select_batch",
                detail: format!("item {n} out of range for {s}"),
            });
        }
        let start = n * s.item();
        self.gather(
            x,
            Shape::new(1, s.c(), s.h(), s.w()),
            (start..start + s.item()).collect(),
        )
    }

    /// Concatenates along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or(TensorError::Empty("concat"))?);
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if (s.n(), s.h(), s.w()) != (first.n(), first.h(), first.w()) {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s,
                });
            }
            channels += s.c();
        }
        let shape = Shape::new(first.n(), channels, first.h(), first.w());
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..first.n() {
            for &p in parts {
                let v = self.value(p);
                let item = v.shape().item();
                data.extend_from_slice(&v.data()[n * item..(n + 1) * item]);
            }
        }
        let value = Tensor::from_vec(shape, data)?;
        Ok(self.push_from(value, Op::Concat(parts.to_vec()), parts))
    }

    /// Adds a `(1,C,H,W)` tensor to every batch item of `x`.
    pub fn add_batch_broadcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.n() != 1 || (sx.c(), sx.h(), sx.w()) != (sb.c(), sb.h(), sb.w()) {
            return Err(TensorError::ShapeMismatch {
                op: "add_batch_broadcast",
                lhs: sx,
                rhs: sb,
            });
        }
        let bv = self.value(b).data().to_vec();
        let mut value = self.value(x).clone();
        for chunk in value.data_mut().chunks_mut(sx.item()) {
            chunk.iter_mut().zip(&bv).for_each(|(a, &c)| *a = *a + c);
        }
        Ok(self.push_from(value, Op::AddBatchBroadcast(x, b), &[x, b]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: T = self.value(x).data().iter().copied().sum();
        self.push_from(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let total: T = v.data().iter().copied().sum();
        let mean = total / T::of_f64(v.numel() as f64);
        self.push_from(Tensor::scalar(mean), Op::Mean(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Shape>) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push_from(value, Op::Reshape(x), &[x]))
    }

    /// Row `r` of the output is `Σ_m softmax_m(q_r·k_m)·v_m`, per batch item.
    ///
    /// Shapes: `q: (N,1,K,d)`, `k: (N,1,M,d)`, `v: (N,1,M,e)` → `(N,1,K,e)`.
    pub fn attend(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let (value, weights) = kernels::attend(self.value(q), self.value(k), self.value(v))?;
        Ok(self.push_from(value, Op::Attend { q, k, v, weights }, &[q, k, v]))
    }

    /// Soft (triangular-kernel) normalized histogram as a `(1,1,1,bins)` tensor.
    pub fn soft_histogram(&mut self, x: Var, bins: usize) -> Result<Var> {
        if bins < 2 {
            return Err(TensorError::InvalidArgument {
                op: "soft_histogram",
                detail: format!("need at least 2 bins, got {bins}"),
            });
        }
        let value = kernels::soft_histogram(self.value(x), bins);
        Ok(self.push_from(value, Op::SoftHistogram(x, bins), &[x]))
    }

    /// The linear piece every input of a piecewise-linear op lies on.
    /// Two evaluations with equal patterns sit on the same smooth region.
    pub fn piece_pattern(&self) -> Vec<i64> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Abs(x) | Op::LeakyRelu(x, _) => {
                    pattern.extend(self.value(*x).data().iter().map(|v| i64::from(v.as_f64() >= 0.0)));
                }
                Op::SoftHistogram(x, bins) => {
                    let scale = (*bins - 1) as f64;
                    pattern.extend(self.value(*x).data().iter().map(|v| {
                        let v = v.as_f64();
                        if v < 0.0 {
                            -1
                        } else if v > 1.0 {
                            *bins as i64
                        } else {
                            (v * scale).floor() as i64
                        }
                    }));
                }
                _ => {}
            }
        }
        pattern
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(TensorError::NonScalarLoss(ls));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(ls, T::one()));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let zero = T::zero();
        match &node.op {
            Op::Leaf => {}
            Op::Binary { kind, a, b } => {
                let (a, b) = (*a, *b);
                let av = self.value(a);
                let bv = self.value(b);
                let broadcast = bv.numel() == 1 && av.numel() != 1;
                let bval = |i: usize| if broadcast { bv.data()[0] } else { bv.data()[i] };
                if self.wants(a) {
                    let ga: Vec<T> = match kind {
                        BinaryKind::Add | BinaryKind::Sub => g.data().to_vec(),
                        BinaryKind::Mul => g.data().iter().enumerate().map(|(i, &gi)| gi * bval(i)).collect(),
                        BinaryKind::Div => g.data().iter().enumerate().map(|(i, &gi)| gi / bval(i)).collect(),
                    };
                    accumulate(grads, a, Tensor::from_vec(av.shape(), ga).expect("shape"));
                }
                if self.wants(b) {
                    let out = node.value.data();
                    let per: Vec<T> = match kind {
                        BinaryKind::Add => g.data().to_vec(),
                        BinaryKind::Sub => g.data().iter().map(|&gi| -gi).collect(),
                        BinaryKind::Mul => g.data().iter().zip(av.data()).map(|(&gi, &x)| gi * x).collect(),
                        BinaryKind::Div => g
                            .data()
                            .iter()
                            .enumerate()
                            .map(|(i, &gi)| -gi * out[i] / bval(i))
                            .collect(),
                    };
                    let gb = if broadcast {
                        Tensor::scalar(per.into_iter().sum())
                    } else {
                        Tensor::from_vec(bv.shape(), per).expect("shape")
                    };
                    accumulate(grads, b, gb);
                }
            }
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::MulScalar(a, s) => accumulate(grads, *a, g.map(|x| x * *s)),
            Op::Exp(a) => {
                let mut ga = g.clone();
                ga.data_mut()
                    .iter_mut()
                    .zip(node.value.data())
                    .for_each(|(gi, &y)| *gi = *gi * y);
                accumulate(grads, *a, ga);
            }
            Op::Log(a) => {
                let mut ga = g.clone();
                ga.data_mut()
                    .iter_mut()
                    .zip(self.value(*a).data())
                    .for_each(|(gi, &x)| *gi = *gi / x);
                accumulate(grads, *a, ga);
            }
            Op::Abs(a) => {
                let mut ga = g.clone();
                ga.data_mut()
                    .iter_mut()
                    .zip(self.value(*a).data())
                    .for_each(|(gi, &x)| {
                        *gi = if x > zero {
                            *gi
                        } else if x < zero {
                            -*gi
                        } else {
                            zero
                        }
                    });
                accumulate(grads, *a, ga);
            }
            Op::LeakyRelu(a, alpha) => {
                let mut ga = g.clone();
                ga.data_mut()
                    .iter_mut()
                    .zip(self.value(*a).data())
                    .for_each(|(gi, &x)| {
                        if x <= zero {
                            *gi = *gi * *alpha
                        }
                    });
                accumulate(grads, *a, ga);
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let (gx, gw, gb) =
                    kernels::conv2d_backward(self.value(*x), self.value(*w), *stride, *pad, g, self.wants(*x));
                if let Some(gx) = gx {
                    accumulate(grads, *x, gx);
                }
                if self.wants(*w) {
                    accumulate(grads, *w, gw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let gb = gb.reshaped(self.shape(*b)).expect("bias shape");
                        accumulate(grads, *b, gb);
                    }
                }
            }
            Op::Down2x(x) => accumulate(grads, *x, kernels::down2x_backward(self.shape(*x), g)),
            Op::Resize(x, boundary) => accumulate(
                grads,
                *x,
                kernels::resize_bilinear_backward(self.shape(*x), g, *boundary),
            ),
            Op::Gather { x, index } => {
                let mut gx = Tensor::zeros(self.shape(*x));
                let gd = gx.data_mut();
                for (&i, &gi) in index.iter().zip(g.data()) {
                    gd[i] = gd[i] + gi;
                }
                accumulate(grads, *x, gx);
            }
            Op::ScatterAdd { x, index } => {
                let data = index.iter().map(|&i| g.data()[i]).collect();
                accumulate(grads, *x, Tensor::from_vec(self.shape(*x), data).expect("shape"));
            }
            Op::Concat(parts) => {
                let s = node.value.shape();
                let mut offset = 0;
                for &p in parts {
                    let ps = self.shape(p);
                    let item = ps.item();
                    if self.wants(p) {
                        let mut data = Vec::with_capacity(ps.numel());
                        for n in 0..s.n() {
                            let start = n * s.item() + offset;
                            data.extend_from_slice(&g.data()[start..start + item]);
                        }
                        accumulate(grads, p, Tensor::from_vec(ps, data).expect("shape"));
                    }
                    offset += item;
                }
            }
            Op::AddBatchBroadcast(x, b) => {
                if self.wants(*x) {
                    accumulate(grads, *x, g.clone());
                }
                if self.wants(*b) {
                    let bs = self.shape(*b);
                    let mut gb = Tensor::zeros(bs);
                    for chunk in g.data().chunks(bs.item()) {
                        gb.data_mut().iter_mut().zip(chunk).for_each(|(a, &c)| *a = *a + c);
                    }
                    accumulate(grads, *b, gb);
                }
            }
            Op::Sum(x) => accumulate(grads, *x, Tensor::full(self.shape(*x), g.item())),
            Op::Mean(x) => {
                let s = self.shape(*x);
                let v = g.item() / T::of_f64(s.numel() as f64);
                accumulate(grads, *x, Tensor::full(s, v));
            }
            Op::Reshape(x) => accumulate(grads, *x, g.clone().reshaped(self.shape(*x)).expect("shape")),
            Op::Attend { q, k, v, weights } => {
                let (gq, gk, gv) = kernels::attend_backward(self.value(*q), self.value(*k), self.value(*v), weights, g);
                for (var, grad) in [(*q, gq), (*k, gk), (*v, gv)] {
                    if self.wants(var) {
                        accumulate(grads, var, grad);
                    }
                }
            }
            Op::SoftHistogram(x, bins) => {
                accumulate(grads, *x, kernels::soft_histogram_backward(self.value(*x), *bins, g))
            }
        }
    }
}
