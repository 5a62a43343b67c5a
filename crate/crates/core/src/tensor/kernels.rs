//! Forward and backward kernels shared by the tape and by non-differentiable
//! image code.

use super::{Result, Scalar, Shape, Tensor, TensorError};

/// Output spatial size of a convolution along one axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let cols = g.cols();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, x: &mut [T]) {
    let cols = g.cols();
    for ci in 0..g.cin {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_geom(x: Shape, w: Shape, bias: Option<Shape>, stride: usize, pad: usize) -> Result<ConvGeom> {
    if w.c() != x.c() {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: x,
            rhs: w,
        });
    }
    if let Some(b) = bias {
        if b.numel() != w.n() {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                lhs: w,
                rhs: b,
            });
        }
    }
    if stride == 0 {
        return Err(TensorError::InvalidArgument {
            op: "conv2d",
            detail: "stride must be positive".into(),
        });
    }
    let too_large = || TensorError::KernelTooLarge {
        kh: w.h(),
        kw: w.w(),
        h: x.h() + 2 * pad,
        w: x.w() + 2 * pad,
    };
    let oh = conv_out_len(x.h(), w.h(), stride, pad).ok_or_else(too_large)?;
    let ow = conv_out_len(x.w(), w.w(), stride, pad).ok_or_else(too_large)?;
    Ok(ConvGeom {
        cin: x.c(),
        h: x.h(),
        w: x.w(),
        kh: w.h(),
        kw: w.w(),
        stride,
        pad,
        oh,
        ow,
    })
}

/// 2-D cross-correlation with zero padding.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = conv_geom(x.shape(), weight.shape(), bias.map(|b| b.shape()), stride, pad)?;
    let (n, cout) = (x.shape().n(), weight.shape().n());
    let (k, p) = (g.rows(), g.cols());
    let mut out = Tensor::zeros([n, cout, g.oh, g.ow]);
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    let item_in = x.shape().item();
    for b in 0..n {
        let xin = &x.data()[b * item_in..(b + 1) * item_in];
        let src: &[T] = if g.is_pointwise() {
            xin
        } else {
            im2col(xin, &g, &mut col);
            &col
        };
        let dst = &mut out.data_mut()[b * cout * p..(b + 1) * cout * p];
        T::gemm(
            cout,
            k,
            p,
            T::one(),
            weight.data(),
            (k as isize, 1),
            src,
            (p as isize, 1),
            T::zero(),
            dst,
            (p as isize, 1),
        );
        if let Some(bias) = bias {
            for (co, row) in dst.chunks_mut(p).enumerate() {
                let bv = bias.data()[co];
                row.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let g = conv_geom(x.shape(), weight.shape(), None, stride, pad).expect("geometry validated in forward");
    let (n, cout) = (x.shape().n(), weight.shape().n());
    let (k, p) = (g.rows(), g.cols());
    let item_in = x.shape().item();
    let mut gx = need_input.then(|| Tensor::zeros(x.shape()));
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros([cout, 1, 1, 1]);
    let mut col = vec![T::zero(); if g.is_pointwise() { 0 } else { k * p }];
    let mut dcol = vec![T::zero(); if need_input { k * p } else { 0 }];
    for b in 0..n {
        let xin = &x.data()[b * item_in..(b + 1) * item_in];
        let go = &grad_out.data()[b * cout * p..(b + 1) * cout * p];
        let src: &[T] = if g.is_pointwise() {
            xin
        } else {
            im2col(xin, &g, &mut col);
            &col
        };
        // dW += dY · colᵀ
        T::gemm(
            cout,
            p,
            k,
            T::one(),
            go,
            (p as isize, 1),
            src,
            (1, p as isize),
            T::one(),
            gw.data_mut(),
            (k as isize, 1),
        );
        for (co, row) in go.chunks(p).enumerate() {
            gb.data_mut()[co] = gb.data()[co] + row.iter().copied().sum::<T>();
        }
        if let Some(gx) = gx.as_mut() {
            let gxin = &mut gx.data_mut()[b * item_in..(b + 1) * item_in];
            if g.is_pointwise() {
                T::gemm(
                    k,
                    cout,
                    p,
                    T::one(),
                    weight.data(),
                    (1, k as isize),
                    go,
                    (p as isize, 1),
                    T::zero(),
                    gxin,
                    (p as isize, 1),
                );
            } else {
                T::gemm(
                    k,
                    cout,
                    p,
                    T::one(),
                    weight.data(),
                    (1, k as isize),
                    go,
                    (p as isize, 1),
                    T::zero(),
                    &mut dcol,
                    (p as isize, 1),
                );
                col2im(&dcol, &g, gxin);
            }
        }
    }
    (gx, gw, gb)
}

/// Averages disjoint 2×2 blocks.
pub fn down2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if !s.h().is_multiple_of(2) || !s.w().is_multiple_of(2) {
        return Err(TensorError::OddDimension { h: s.h(), w: s.w() });
    }
    let (oh, ow) = (s.h() / 2, s.w() / 2);
    let quarter = T::of_f64(0.25);
    let mut out = Tensor::zeros([s.n(), s.c(), oh, ow]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..s.n() * s.c() {
        let ip = &src[plane * s.plane()..(plane + 1) * s.plane()];
        let op = &mut dst[plane * oh * ow..(plane + 1) * oh * ow];
        for y in 0..oh {
            let r0 = &ip[2 * y * s.w()..(2 * y + 1) * s.w()];
            let r1 = &ip[(2 * y + 1) * s.w()..(2 * y + 2) * s.w()];
            for xx in 0..ow {
                op[y * ow + xx] = (r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1]) * quarter;
            }
        }
    }
    Ok(out)
}

pub fn down2x_backward<T: Scalar>(input: Shape, grad_out: &Tensor<T>) -> Tensor<T> {
    let (oh, ow) = (input.h() / 2, input.w() / 2);
    let quarter = T::of_f64(0.25);
    let mut gx = Tensor::zeros(input);
    let go = grad_out.data();
    let gd = gx.data_mut();
    for plane in 0..input.n() * input.c() {
        for y in 0..input.h() {
            for xx in 0..input.w() {
                gd[plane * input.plane() + y * input.w() + xx] = go[plane * oh * ow + (y / 2) * ow + xx / 2] * quarter;
            }
        }
    }
    gx
}

/// Border handling for bilinear resampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// Sample positions outside the grid are clamped to the edge.
    Clamp,
    /// The grid is treated as periodic.
    Wrap,
}

struct AxisTable {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

fn axis_table(input: usize, output: usize, boundary: Boundary) -> AxisTable {
    let scale = input as f64 / output as f64;
    let mut t = AxisTable {
        lo: Vec::with_capacity(output),
        hi: Vec::with_capacity(output),
        frac: Vec::with_capacity(output),
    };
    for o in 0..output {
        // half-pixel alignment
        let src = (o as f64 + 0.5) * scale - 0.5;
        let (lo, hi, frac) = match boundary {
            Boundary::Clamp => {
                let src = src.max(0.0);
                let lo = (src.floor() as usize).min(input - 1);
                let hi = (lo + 1).min(input - 1);
                (lo, hi, src - lo as f64)
            }
            Boundary::Wrap => {
                let f = src.floor();
                let lo = (f as isize).rem_euclid(input as isize) as usize;
                ((lo), (lo + 1) % input, src - f)
            }
        };
        t.lo.push(lo);
        t.hi.push(hi);
        t.frac.push(if lo == hi { 0.0 } else { frac });
    }
    t
}

/// Bilinear resampling with half-pixel alignment.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize, boundary: Boundary) -> Result<Tensor<T>> {
    let s = x.shape();
    if oh == 0 || ow == 0 || s.h() == 0 || s.w() == 0 {
        return Err(TensorError::InvalidArgument {
            op: "resize_bilinear",
            detail: format!("cannot resize {s} to {oh}x{ow}"),
        });
    }
    let ty = axis_table(s.h(), oh, boundary);
    let tx = axis_table(s.w(), ow, boundary);
    let mut out = Tensor::zeros([s.n(), s.c(), oh, ow]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..s.n() * s.c() {
        let ip = &src[plane * s.plane()..(plane + 1) * s.plane()];
        let op = &mut dst[plane * oh * ow..(plane + 1) * oh * ow];
        for y in 0..oh {
            let fy = T::of_f64(ty.frac[y]);
            let r0 = &ip[ty.lo[y] * s.w()..(ty.lo[y] + 1) * s.w()];
            let r1 = &ip[ty.hi[y] * s.w()..(ty.hi[y] + 1) * s.w()];
            for xx in 0..ow {
                let fx = T::of_f64(tx.frac[xx]);
                let (l, h) = (tx.lo[xx], tx.hi[xx]);
                let top = r0[l] + (r0[h] - r0[l]) * fx;
                let bot = r1[l] + (r1[h] - r1[l]) * fx;
                op[y * ow + xx] = top + (bot - top) * fy;
            }
        }
    }
    Ok(out)
}

pub fn resize_bilinear_backward<T: Scalar>(input: Shape, grad_out: &Tensor<T>, boundary: Boundary) -> Tensor<T> {
    let (oh, ow) = (grad_out.shape().h(), grad_out.shape().w());
    let ty = axis_table(input.h(), oh, boundary);
    let tx = axis_table(input.w(), ow, boundary);
    let mut gx = Tensor::zeros(input);
    let go = grad_out.data();
    let gd = gx.data_mut();
    let one = T::one();
    for plane in 0..input.n() * input.c() {
        let base = plane * input.plane();
        for y in 0..oh {
            let fy = T::of_f64(ty.frac[y]);
            for xx in 0..ow {
                let fx = T::of_f64(tx.frac[xx]);
                let g = go[plane * oh * ow + y * ow + xx];
                let (l, h) = (tx.lo[xx], tx.hi[xx]);
                let r0 = base + ty.lo[y] * input.w();
                let r1 = base + ty.hi[y] * input.w();
                gd[r0 + l] = gd[r0 + l] + g * (one - fy) * (one - fx);
                gd[r0 + h] = gd[r0 + h] + g * (one - fy) * fx;
                gd[r1 + l] = gd[r1 + l] + g * fy * (one - fx);
                gd[r1 + h] = gd[r1 + h] + g * fy * fx;
            }
        }
    }
    gx
}

/// Index of `i` in a mirror-reflected axis of length `n` (no edge repeat).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Source indices for reflect padding, output-major.
pub fn reflect_pad_index(s: Shape, pads: [usize; 4]) -> (Shape, Vec<usize>) {
    let [top, bottom, left, right] = pads;
    let out = Shape::new(s.n(), s.c(), s.h() + top + bottom, s.w() + left + right);
    let mut idx = Vec::with_capacity(out.numel());
    for n in 0..s.n() {
        for c in 0..s.c() {
            for y in 0..out.h() {
                let sy = reflect_index(y as isize - top as isize, s.h());
                for x in 0..out.w() {
                    let sx = reflect_index(x as isize - left as isize, s.w());
                    idx.push(s.index(n, c, sy, sx));
                }
            }
        }
    }
    (out, idx)
}

pub fn crop_index(s: Shape, top: usize, left: usize, h: usize, w: usize) -> Result<(Shape, Vec<usize>)> {
    if top + h > s.h() || left + w > s.w() {
        return Err(TensorError::InvalidArgument {
            op: "crop",
            detail: format!("window {h}x{w} at ({top},{left}) exceeds {s}"),
        });
    }
    let out = Shape::new(s.n(), s.c(), h, w);
    let mut idx = Vec::with_capacity(out.numel());
    for n in 0..s.n() {
        for c in 0..s.c() {
            for y in 0..h {
                for x in 0..w {
                    idx.push(s.index(n, c, top + y, left + x));
                }
            }
        }
    }
    Ok((out, idx))
}

/// Patch grid for `unfold`/`fold`: `(rows, cols)` of patches.
pub fn patch_grid(h: usize, w: usize, p: usize, stride: usize) -> Result<(usize, usize)> {
    if p == 0 || stride == 0 {
        return Err(TensorError::InvalidArgument {
            op: "unfold_patches",
            detail: "patch size and stride must be positive".into(),
        });
    }
    if h < p || w < p || !(h - p).is_multiple_of(stride) || !(w - p).is_multiple_of(stride) {
        return Err(TensorError::NotDivisible { h, w, p });
    }
    Ok(((h - p) / stride + 1, (w - p) / stride + 1))
}

/// For each element of the unfolded `(N, 1, K, C·p·p)` tensor, the index of
/// the source element in the `(N, C, H, W)` tensor.
pub fn unfold_index(s: Shape, p: usize, stride: usize) -> Result<(Shape, Vec<usize>)> {
    let (gh, gw) = patch_grid(s.h(), s.w(), p, stride)?;
    let k = gh * gw;
    let d = s.c() * p * p;
    let out = Shape::new(s.n(), 1, k, d);
    let mut idx = Vec::with_capacity(out.numel());
    for n in 0..s.n() {
        for py in 0..gh {
            for px in 0..gw {
                for c in 0..s.c() {
                    for i in 0..p {
                        for j in 0..p {
                            idx.push(s.index(n, c, py * stride + i, px * stride + j));
                        }
                    }
                }
            }
        }
    }
    Ok((out, idx))
}

/// Row-wise softmax of `q·kᵀ` for one batch item, max-subtracted.
fn softmax_scores<T: Scalar>(q: &[T], k: &[T], rows: usize, keys: usize, d: usize) -> Vec<T> {
    let mut s = vec![T::zero(); rows * keys];
    T::gemm(
        rows,
        d,
        keys,
        T::one(),
        q,
        (d as isize, 1),
        k,
        (1, d as isize),
        T::zero(),
        &mut s,
        (keys as isize, 1),
    );
    for row in s.chunks_mut(keys) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        row.iter_mut().for_each(|v| *v = *v / total);
    }
    s
}

fn attend_shapes(q: Shape, k: Shape, v: Shape) -> Result<()> {
    if k.h() == 0 {
        return Err(TensorError::EmptyKeys);
    }
    if q.n() != k.n() || q.w() != k.w() || q.c() != 1 || k.c() != 1 {
        return Err(TensorError::ShapeMismatch {
            op: "attend (query/key)",
            lhs: q,
            rhs: k,
        });
    }
    if v.n() != k.n() || v.h() != k.h() || v.c() != 1 {
        return Err(TensorError::ShapeMismatch {
            op: "attend (key/value)",
            lhs: k,
            rhs: v,
        });
    }
    Ok(())
}

/// Attention weights `softmax(q·kᵀ)` for `q: (N,1,K,d)`, `k: (N,1,M,d)`,
/// returned as `(N,1,K,M)`.
pub fn attention_weights<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
    let (qs, ks) = (q.shape(), k.shape());
    attend_shapes(qs, ks, Shape::new(ks.n(), 1, ks.h(), 1))?;
    let (rows, keys, d) = (qs.h(), ks.h(), qs.w());
    let mut data = Vec::with_capacity(qs.n() * rows * keys);
    for n in 0..qs.n() {
        data.extend(softmax_scores(
            &q.data()[n * rows * d..(n + 1) * rows * d],
            &k.data()[n * keys * d..(n + 1) * keys * d],
            rows,
            keys,
            d,
        ));
    }
    Tensor::from_vec([qs.n(), 1, rows, keys], data)
}

/// `softmax(q·kᵀ)·v`; returns the output and the attention weights.
pub fn attend<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    attend_shapes(qs, ks, vs)?;
    let weights = attention_weights(q, k)?;
    let (rows, keys, dv) = (qs.h(), ks.h(), vs.w());
    let mut out = Tensor::zeros([qs.n(), 1, rows, dv]);
    for n in 0..qs.n() {
        T::gemm(
            rows,
            keys,
            dv,
            T::one(),
            &weights.data()[n * rows * keys..(n + 1) * rows * keys],
            (keys as isize, 1),
            &v.data()[n * keys * dv..(n + 1) * keys * dv],
            (dv as isize, 1),
            T::zero(),
            &mut out.data_mut()[n * rows * dv..(n + 1) * rows * dv],
            (dv as isize, 1),
        );
    }
    Ok((out, weights))
}

/// Gradients of [`attend`] with respect to `q`, `k`, `v`.
pub fn attend_backward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    let (rows, keys, d, dv) = (qs.h(), ks.h(), qs.w(), vs.w());
    let mut gq = Tensor::zeros(qs);
    let mut gk = Tensor::zeros(ks);
    let mut gv = Tensor::zeros(vs);
    let mut da = vec![T::zero(); rows * keys];
    for n in 0..qs.n() {
        let a = &weights.data()[n * rows * keys..(n + 1) * rows * keys];
        let go = &grad_out.data()[n * rows * dv..(n + 1) * rows * dv];
        let vn = &v.data()[n * keys * dv..(n + 1) * keys * dv];
        let qn = &q.data()[n * rows * d..(n + 1) * rows * d];
        let kn = &k.data()[n * keys * d..(n + 1) * keys * d];
        // dA = dY · vᵀ
        T::gemm(
            rows,
            dv,
            keys,
            T::one(),
            go,
            (dv as isize, 1),
            vn,
            (1, dv as isize),
            T::zero(),
            &mut da,
            (keys as isize, 1),
        );
        // dV = Aᵀ · dY
        T::gemm(
            keys,
            rows,
            dv,
            T::one(),
            a,
            (1, keys as isize),
            go,
            (dv as isize, 1),
            T::zero(),
            &mut gv.data_mut()[n * keys * dv..(n + 1) * keys * dv],
            (dv as isize, 1),
        );
        // softmax Jacobian: dS = A ⊙ (dA − rowsum(A ⊙ dA))
        for (arow, drow) in a.chunks(keys).zip(da.chunks_mut(keys)) {
            let dot: T = arow.iter().zip(drow.iter()).map(|(&x, &y)| x * y).sum();
            for (dval, &aval) in drow.iter_mut().zip(arow) {
                *dval = aval * (*dval - dot);
            }
        }
        T::gemm(
            rows,
            keys,
            d,
            T::one(),
            &da,
            (keys as isize, 1),
            kn,
            (d as isize, 1),
            T::zero(),
            &mut gq.data_mut()[n * rows * d..(n + 1) * rows * d],
            (d as isize, 1),
        );
        T::gemm(
            keys,
            rows,
            d,
            T::one(),
            &da,
            (1, keys as isize),
            qn,
            (d as isize, 1),
            T::zero(),
            &mut gk.data_mut()[n * keys * d..(n + 1) * keys * d],
            (d as isize, 1),
        );
    }
    (gq, gk, gv)
}

/// Normalized soft histogram of values clipped to `[0, 1]`, using a
/// triangular kernel centred on `bins` equally spaced bin centres.
pub fn soft_histogram<T: Scalar>(x: &Tensor<T>, bins: usize) -> Tensor<T> {
    let scale = (bins - 1) as f64;
    let mut hist = vec![0.0f64; bins];
    for v in x.data() {
        let t = v.as_f64().clamp(0.0, 1.0) * scale;
        let lo = (t.floor() as usize).min(bins - 1);
        let frac = t - lo as f64;
        hist[lo] += 1.0 - frac;
        if lo + 1 < bins {
            hist[lo + 1] += frac;
        }
    }
    let n = x.numel().max(1) as f64;
    Tensor::from_f64([1, 1, 1, bins], &hist.iter().map(|h| h / n).collect::<Vec<_>>()).expect("bins-sized histogram")
}

pub fn soft_histogram_backward<T: Scalar>(x: &Tensor<T>, bins: usize, grad_out: &Tensor<T>) -> Tensor<T> {
    let scale = (bins - 1) as f64;
    let n = x.numel().max(1) as f64;
    let g = grad_out.as_f64_vec();
    x.map(|v| {
        let v = v.as_f64();
        if v <= 0.0 || v >= 1.0 {
            return T::zero();
        }
        let t = v * scale;
        let lo = (t.floor() as usize).min(bins - 1);
        // d/dt of (1 - frac) into `lo` and `frac` into `lo + 1`
        let hi = if lo + 1 < bins { g[lo + 1] } else { 0.0 };
        T::of_f64((hi - g[lo]) * scale / n)
    })
}
