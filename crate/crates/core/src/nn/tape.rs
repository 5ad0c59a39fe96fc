//! Define-by-run reverse-mode differentiation over the layer set the
//! detection networks need.
//!
//! Every operation appends a node holding its forward value. `backward` walks
//! the nodes in reverse and returns parameter gradients in store order.

use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use super::layer::conv_extent;
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Conv {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Upsample {
        x: Var,
        factor: usize,
    },
    Crop {
        x: Var,
        top: usize,
        left: usize,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Output of a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    /// One buffer per parameter, aligned with the store; zeros when unused.
    pub params: Vec<Vec<T>>,
    inputs: Vec<(Var, Vec<T>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to an input node.
    pub fn input(&self, v: Var) -> Option<&[T]> {
        self.inputs
            .iter()
            .find(|(var, _)| *var == v)
            .map(|(_, g)| g.as_slice())
    }
}

fn add_into<T: Scalar>(dst: &mut Option<Vec<T>>, src: &[T]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, &b)| *a = *a + b),
        None => *dst = Some(src.to_vec()),
    }
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    /// Output columns `ox` whose tap `kj` lands inside the input row.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kj).div_ceil(self.stride);
        let hi = if self.w + self.pad > kj {
            ((self.w + self.pad - kj - 1) / self.stride + 1).min(self.wo)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// Unfolds one image into columns `col0..col0 + ho*wo` of a row-major
/// `[c*k*k, ld]` matrix.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T], ld: usize, col0: usize) {
    let plane = g.ho * g.wo;
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * ld + col0..][..plane];
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize || lo == hi {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                    out_row[..lo].fill(T::zero());
                    out_row[hi..].fill(T::zero());
                    let ix0 = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        out_row[lo..hi].copy_from_slice(&src[ix0..ix0 + hi - lo]);
                    } else {
                        for (j, v) in out_row[lo..hi].iter_mut().enumerate() {
                            *v = src[ix0 + j * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds columns back into `dx`, accumulating.
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T], ld: usize, col0: usize) {
    let plane = g.ho * g.wo;
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * ld + col0..][..plane];
                let (lo, hi) = g.valid_cols(kj);
                if lo == hi {
                    continue;
                }
                let ix0 = lo * g.stride + kj - g.pad;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dx[(c * g.h + iy as usize) * g.w..][..g.w];
                    let s = &src[oy * g.wo + lo..oy * g.wo + hi];
                    if g.stride == 1 {
                        dst[ix0..ix0 + hi - lo]
                            .iter_mut()
                            .zip(s)
                            .for_each(|(d, &v)| *d = *d + v);
                    } else {
                        for (j, &v) in s.iter().enumerate() {
                            let d = &mut dst[ix0 + j * g.stride];
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

/// Images per unfolded block: enough columns to keep the matrix product
/// efficient on small planes, few enough to stay cache-resident on large ones.
fn images_per_block(n: usize, plane: usize) -> usize {
    (COLS_PER_BLOCK / plane.max(1)).clamp(1, n.max(1))
}

const COLS_PER_BLOCK: usize = 2048;

/// Unfolds images `first..first + count` into a `[c*k*k, count*ho*wo]` matrix.
fn im2col_block<T: Scalar>(
    x: &Tensor<T>,
    g: &ConvGeom,
    first: usize,
    count: usize,
    cols: &mut Vec<T>,
) {
    let plane = g.ho * g.wo;
    let ld = count * plane;
    cols.resize(g.c * g.k * g.k * ld, T::zero());
    for j in 0..count {
        im2col(x.item(first + j), g, cols, ld, j * plane);
    }
}

/// Zero-padded 2-d cross-correlation of `x: [N, C, H, W]` with
/// `w: [O, C, k, k]` plus `b: [O]`. Several images are unfolded together so
/// each matrix product is wide enough to run efficiently.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (g, o) = conv_geometry(x, w, b, stride, pad)?;
    let n = x.shape[0];
    let plane = g.ho * g.wo;
    let ckk = g.c * g.k * g.k;
    let per = images_per_block(n, plane);
    let mut out = vec![T::zero(); n * o * plane];
    let mut cols = Vec::new();
    let mut prod = Vec::new();
    for first in (0..n).step_by(per) {
        let count = per.min(n - first);
        let ld = count * plane;
        im2col_block(x, &g, first, count, &mut cols);
        prod.clear();
        prod.resize(o * ld, T::zero());
        gemm_nn(o, ld, ckk, &w.data, &cols, &mut prod);
        for oc in 0..o {
            let bias = b.data[oc];
            for j in 0..count {
                let src = &prod[oc * ld + j * plane..][..plane];
                let dst = &mut out[((first + j) * o + oc) * plane..][..plane];
                dst.iter_mut().zip(src).for_each(|(d, &v)| *d = v + bias);
            }
        }
    }
    Tensor::new(&[n, o, g.ho, g.wo], out)
}

fn conv_geometry<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(ConvGeom, usize)> {
    let [_, c, h, wd] = x.dims4()?;
    let [o, wc, k, k2] = w.dims4()?;
    if wc != c || k != k2 || b.shape != [o] {
        return Err(Error::shape(format!(
            "conv input {:?}, weight {:?}, bias {:?}",
            x.shape, w.shape, b.shape
        )));
    }
    if stride == 0 {
        return Err(Error::config("stride must be at least 1"));
    }
    let ho = conv_extent(h, k, stride, pad)?;
    let wo = conv_extent(wd, k, stride, pad)?;
    Ok((
        ConvGeom {
            c,
            h,
            w: wd,
            k,
            stride,
            pad,
            ho,
            wo,
        },
        o,
    ))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let mut t = store.get(id).clone();
        t.grad = None;
        self.push(t, Op::Param(id))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = conv2d_forward(self.value(x), self.value(w), self.value(b), stride, pad)?;
        Ok(self.push(
            out,
            Op::Conv {
                x,
                w,
                b,
                stride,
                pad,
            },
        ))
    }

    /// Non-overlapping `size`×`size` max pooling; trailing rows and columns
    /// that do not fill a window are dropped.
    pub fn max_pool(&mut self, x: Var, size: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if size == 0 || h < size || w < size {
            return Err(Error::shape(format!("cannot pool {h}x{w} by {size}")));
        }
        let (ho, wo) = (h / size, w / size);
        let xv = &self.value(x).data;
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * size * w + ox * size;
                    for dy in 0..size {
                        for dx in 0..size {
                            let idx = base + (oy * size + dy) * w + ox * size + dx;
                            if xv[idx] > xv[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let t = Tensor::new(&[n, c, ho, wo], out)?;
        Ok(self.push(t, Op::MaxPool { x, argmax }))
    }

    /// `x: [N, D]`, `w: [O, D]`, `b: [O]` to `[N, O]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            &self.value(x).shape,
            &self.value(w).shape,
            &self.value(b).shape,
        );
        let (n, d, o) = match (&xs[..], &ws[..]) {
            (&[n, d], &[o, d2]) if d == d2 && bs[..] == [o] => (n, d, o),
            _ => {
                return Err(Error::shape(format!(
                    "dense input {xs:?}, weight {ws:?}, bias {bs:?}"
                )))
            }
        };
        let mut out = Vec::with_capacity(n * o);
        for _ in 0..n {
            out.extend_from_slice(&self.value(b).data);
        }
        gemm_nt(n, o, d, &self.value(x).data, &self.value(w).data, &mut out);
        let t = Tensor::new(&[n, o], out)?;
        Ok(self.push(t, Op::Dense { x, w, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let t = Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().map(|&v| v.max(T::zero())).collect(),
            grad: None,
        };
        self.push(t, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let t = Tensor {
            shape: src.shape.clone(),
            data: src
                .data
                .iter()
                .map(|&v| T::one() / (T::one() + (-v).exp()))
                .collect(),
            grad: None,
        };
        self.push(t, Op::Sigmoid(x))
    }

    /// Channel-axis concatenation of `[N, C_i, H, W]` tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]).dims4()?;
        let mut channels = 0;
        for &p in parts {
            let [n, c, h, w] = self.value(p).dims4()?;
            if (n, h, w) != (first[0], first[2], first[3]) {
                return Err(Error::shape(format!(
                    "concat of {:?} with {:?}",
                    self.value(parts[0]).shape,
                    self.value(p).shape
                )));
            }
            channels += c;
        }
        let [n, _, h, w] = first;
        let mut out = Vec::with_capacity(n * channels * h * w);
        for i in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).item(i));
            }
        }
        let t = Tensor::new(&[n, channels, h, w], out)?;
        Ok(self.push(t, Op::Concat(parts.to_vec())))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let (ho, wo) = (h * factor, w * factor);
        let src = &self.value(x).data;
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            for oy in 0..ho {
                let row = &src[plane * h * w + (oy / factor) * w..][..w];
                for ox in 0..wo {
                    out.push(row[ox / factor]);
                }
            }
        }
        let t = Tensor::new(&[n, c, ho, wo], out)?;
        Ok(self.push(t, Op::Upsample { x, factor }))
    }

    /// Spatial window `[top, top + h) × [left, left + w)`.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let [n, c, hi, wi] = self.value(x).dims4()?;
        if top + h > hi || left + w > wi {
            return Err(Error::shape(format!(
                "crop {h}x{w} at ({top}, {left}) of {hi}x{wi}"
            )));
        }
        let src = &self.value(x).data;
        let mut out = Vec::with_capacity(n * c * h * w);
        for plane in 0..n * c {
            for y in top..top + h {
                let start = plane * hi * wi + y * wi + left;
                out.extend_from_slice(&src[start..start + w]);
            }
        }
        let t = Tensor::new(&[n, c, h, w], out)?;
        Ok(self.push(t, Op::Crop { x, top, left }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Propagates `seed` (the gradient of a scalar objective with respect to
    /// `out`) back through the recorded graph.
    pub fn backward(&self, out: Var, seed: &[T], store: &ParamStore<T>) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || out.0 >= self.nodes.len() {
            return Err(Error::NoForward);
        }
        if seed.len() != self.value(out).len() {
            return Err(Error::shape(format!(
                "seed gradient has {} values for output {:?}",
                seed.len(),
                self.value(out).shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed.to_vec());
        let mut params: Vec<Vec<T>> = store
            .iter()
            .map(|(_, _, t)| vec![T::zero(); t.len()])
            .collect();
        let mut inputs = Vec::new();

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => inputs.push((Var(idx), g)),
                Op::Param(id) => params[id.0]
                    .iter_mut()
                    .zip(&g)
                    .for_each(|(a, &b)| *a = *a + b),
                Op::Relu(x) => {
                    let dx: Vec<T> = g
                        .iter()
                        .zip(&node.value.data)
                        .map(|(&gv, &y)| if y > T::zero() { gv } else { T::zero() })
                        .collect();
                    add_into(&mut grads[x.0], &dx);
                }
                Op::Sigmoid(x) => {
                    let dx: Vec<T> = g
                        .iter()
                        .zip(&node.value.data)
                        .map(|(&gv, &y)| gv * y * (T::one() - y))
                        .collect();
                    add_into(&mut grads[x.0], &dx);
                }
                Op::Reshape(x) => add_into(&mut grads[x.0], &g),
                Op::MaxPool { x, argmax } => {
                    let mut dx = vec![T::zero(); self.value(*x).len()];
                    for (&src, &gv) in argmax.iter().zip(&g) {
                        dx[src] = dx[src] + gv;
                    }
                    add_into(&mut grads[x.0], &dx);
                }
                Op::Upsample { x, factor } => {
                    let [n, c, h, w] = self.value(*x).dims4()?;
                    let wo = w * factor;
                    let mut dx = vec![T::zero(); n * c * h * w];
                    for plane in 0..n * c {
                        for oy in 0..h * factor {
                            for ox in 0..wo {
                                let d = &mut dx[plane * h * w + (oy / factor) * w + ox / factor];
                                *d = *d + g[plane * h * factor * wo + oy * wo + ox];
                            }
                        }
                    }
                    add_into(&mut grads[x.0], &dx);
                }
                Op::Crop { x, top, left } => {
                    let [n, c, hi, wi] = self.value(*x).dims4()?;
                    let [_, _, h, w] = node.value.dims4()?;
                    let mut dx = vec![T::zero(); n * c * hi * wi];
                    for plane in 0..n * c {
                        for y in 0..h {
                            let dst = plane * hi * wi + (y + top) * wi + left;
                            dx[dst..dst + w].copy_from_slice(&g[(plane * h + y) * w..][..w]);
                        }
                    }
                    add_into(&mut grads[x.0], &dx);
                }
                Op::Concat(parts) => {
                    let [n, total, h, w] = node.value.dims4()?;
                    let plane = h * w;
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).shape[1];
                        let mut dp = Vec::with_capacity(n * c * plane);
                        for i in 0..n {
                            let start = (i * total + offset) * plane;
                            dp.extend_from_slice(&g[start..start + c * plane]);
                        }
                        add_into(&mut grads[p.0], &dp);
                        offset += c;
                    }
                }
                Op::Dense { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (n, d) = (xv.shape[0], xv.shape[1]);
                    let o = wv.shape[0];
                    let mut dw = vec![T::zero(); o * d];
                    gemm_tn(o, d, n, &g, &xv.data, &mut dw);
                    let mut db = vec![T::zero(); o];
                    for row in g.chunks(o) {
                        db.iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
                    }
                    let mut dx = vec![T::zero(); n * d];
                    gemm_nn(n, d, o, &g, &wv.data, &mut dx);
                    add_into(&mut grads[w.0], &dw);
                    add_into(&mut grads[b.0], &db);
                    add_into(&mut grads[x.0], &dx);
                }
                Op::Conv {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (geom, o) = conv_geometry(xv, wv, self.value(*b), *stride, *pad)?;
                    let n = xv.shape[0];
                    let plane = geom.ho * geom.wo;
                    let ckk = geom.c * geom.k * geom.k;
                    let item = geom.c * geom.h * geom.w;
                    let per = images_per_block(n, plane);
                    let mut dw = vec![T::zero(); o * ckk];
                    let mut db = vec![T::zero(); o];
                    let mut dx = vec![T::zero(); n * item];
                    let (mut gt, mut cols, mut dcols) = (Vec::new(), Vec::new(), Vec::new());
                    for first in (0..n).step_by(per) {
                        let count = per.min(n - first);
                        let ld = count * plane;
                        // Gradient block as [o, count*plane], matching the unfolded layout.
                        gt.clear();
                        gt.resize(o * ld, T::zero());
                        for j in 0..count {
                            for oc in 0..o {
                                gt[oc * ld + j * plane..][..plane]
                                    .copy_from_slice(&g[((first + j) * o + oc) * plane..][..plane]);
                            }
                        }
                        for (d, row) in db.iter_mut().zip(gt.chunks(ld)) {
                            *d = row.iter().fold(*d, |a, &v| a + v);
                        }
                        im2col_block(xv, &geom, first, count, &mut cols);
                        gemm_nt(o, ckk, ld, &gt, &cols, &mut dw);
                        dcols.clear();
                        dcols.resize(ckk * ld, T::zero());
                        gemm_tn(ckk, ld, o, &wv.data, &gt, &mut dcols);
                        for j in 0..count {
                            let i = first + j;
                            col2im(
                                &dcols,
                                &geom,
                                &mut dx[i * item..(i + 1) * item],
                                ld,
                                j * plane,
                            );
                        }
                    }
                    add_into(&mut grads[w.0], &dw);
                    add_into(&mut grads[b.0], &db);
                    add_into(&mut grads[x.0], &dx);
                }
            }
        }
        Ok(Gradients { params, inputs })
    }
}
