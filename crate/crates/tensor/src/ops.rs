//! Differentiable operations on [`Var`].
//!
//! Shape errors are programming errors here and panic; callers validate
//! user-facing shapes before building a graph.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::conv::{ConvGeometry, PadMode};
use crate::scalar::gemm;
use crate::{Scalar, Tensor, Var};

thread_local! {
    static GEOMETRY_CACHE: RefCell<HashMap<(usize, usize, usize, usize, usize, PadMode), Rc<ConvGeometry>>> =
        RefCell::new(HashMap::new());
}

fn geometry(h: usize, w: usize, k: usize, stride: usize, pad: usize, mode: PadMode) -> Rc<ConvGeometry> {
    GEOMETRY_CACHE.with(|c| {
        c.borrow_mut()
            .entry((h, w, k, stride, pad, mode))
            .or_insert_with(|| Rc::new(ConvGeometry::new(h, w, k, stride, pad, mode)))
            .clone()
    })
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Broadcast layout of a per-channel operand: `[C]` (shared over the batch) or `[N, C]`.
fn channel_operand(v: &[usize], n: usize, c: usize) -> bool {
    if v == [c] {
        false
    } else if v == [n, c] {
        true
    } else {
        panic!("per-channel operand of shape {v:?} does not fit [{n}, {c}] or [{c}]")
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    fn unary(self, value: Tensor<T>, back: impl Fn(&Tensor<T>) -> Tensor<T> + 'static) -> Var<'g, T> {
        self.graph
            .record(value, &[self.id], Box::new(move |g, _| vec![Some(back(g))]))
    }

    pub fn add(self, other: Var<'g, T>) -> Var<'g, T> {
        self.same_graph(&other);
        let v = self.value().zip_map(&other.value(), |a, b| a + b);
        self.graph.record(
            v,
            &[self.id, other.id],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(self, other: Var<'g, T>) -> Var<'g, T> {
        self.same_graph(&other);
        let v = self.value().zip_map(&other.value(), |a, b| a - b);
        self.graph.record(
            v,
            &[self.id, other.id],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.map(|x| -x))]),
        )
    }

    pub fn mul(self, other: Var<'g, T>) -> Var<'g, T> {
        self.same_graph(&other);
        let (a, b) = (self.value(), other.value());
        let v = a.zip_map(&b, |x, y| x * y);
        self.graph.record(
            v,
            &[self.id, other.id],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| g.zip_map(&b, |x, y| x * y)),
                    need[1].then(|| g.zip_map(&a, |x, y| x * y)),
                ]
            }),
        )
    }

    pub fn neg(self) -> Var<'g, T> {
        let v = self.value().map(|x| -x);
        self.unary(v, |g| g.map(|x| -x))
    }

    pub fn add_scalar(self, c: T) -> Var<'g, T> {
        let v = self.value().map(|x| x + c);
        self.unary(v, |g| g.clone())
    }

    pub fn mul_scalar(self, c: T) -> Var<'g, T> {
        let v = self.value().map(|x| x * c);
        self.unary(v, move |g| g.map(|x| x * c))
    }

    pub fn square(self) -> Var<'g, T> {
        let x = self.value();
        let v = x.map(|a| a * a);
        let two = T::one() + T::one();
        self.unary(v, move |g| g.zip_map(&x, |gy, a| gy * two * a))
    }

    pub fn abs(self) -> Var<'g, T> {
        let x = self.value();
        let v = x.map(|a| a.abs());
        self.unary(v, move |g| {
            g.zip_map(&x, |gy, a| {
                if a > T::zero() {
                    gy
                } else if a < T::zero() {
                    -gy
                } else {
                    T::zero()
                }
            })
        })
    }

    pub fn ln(self) -> Var<'g, T> {
        let x = self.value();
        let v = x.map(|a| a.ln());
        self.unary(v, move |g| g.zip_map(&x, |gy, a| gy / a))
    }

    pub fn relu(self) -> Var<'g, T> {
        let x = self.value();
        let v = x.map(|a| a.max(T::zero()));
        self.unary(v, move |g| g.zip_map(&x, |gy, a| if a > T::zero() { gy } else { T::zero() }))
    }

    pub fn silu(self) -> Var<'g, T> {
        let x = self.value();
        let v = x.map(|a| a * sigmoid(a));
        self.unary(v, move |g| {
            g.zip_map(&x, |gy, a| {
                let s = sigmoid(a);
                gy * s * (T::one() + a * (T::one() - s))
            })
        })
    }

    pub fn tanh(self) -> Var<'g, T> {
        let y = Rc::new(self.value().map(|a| a.tanh()));
        let yc = y.clone();
        self.unary((*y).clone(), move |g| g.zip_map(&yc, |gy, t| gy * (T::one() - t * t)))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(self) -> Var<'g, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let v = Tensor::scalar(x.sum());
        self.unary(v, move |g| Tensor::full(&shape, g.data()[0]))
    }

    pub fn mean(self) -> Var<'g, T> {
        let n = T::from_usize(self.value().numel()).unwrap();
        self.sum().mul_scalar(T::one() / n)
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g, T> {
        let x = self.value();
        let old = x.shape().to_vec();
        let v = (*x).clone().reshape(shape);
        self.unary(v, move |g| g.clone().reshape(&old))
    }

    /// `x[n, c, ..] * v[n, c]` with `v` of shape `[N, C]` or `[C]`.
    pub fn mul_channels(self, v: Var<'g, T>) -> Var<'g, T> {
        self.same_graph(&v);
        let (x, s) = (self.value(), v.value());
        let (n, c) = (x.shape()[0], x.shape()[1]);
        let per_batch = channel_operand(s.shape(), n, c);
        let inner = x.numel() / (n * c);
        let sidx = move |b: usize, ch: usize| if per_batch { b * c + ch } else { ch };
        let mut out = (*x).clone();
        for b in 0..n {
            for ch in 0..c {
                let k = s.data()[sidx(b, ch)];
                let o = (b * c + ch) * inner;
                out.data_mut()[o..o + inner].iter_mut().for_each(|e| *e *= k);
            }
        }
        let sshape = s.shape().to_vec();
        self.graph.record(
            out,
            &[self.id, v.id],
            Box::new(move |g, need| {
                let dx = need[0].then(|| {
                    let mut dx = g.clone();
                    for b in 0..n {
                        for ch in 0..c {
                            let k = s.data()[sidx(b, ch)];
                            let o = (b * c + ch) * inner;
                            dx.data_mut()[o..o + inner].iter_mut().for_each(|e| *e *= k);
                        }
                    }
                    dx
                });
                let ds = need[1].then(|| {
                    let mut ds = Tensor::zeros(&sshape);
                    for b in 0..n {
                        for ch in 0..c {
                            let o = (b * c + ch) * inner;
                            let acc: T = g.data()[o..o + inner]
                                .iter()
                                .zip(&x.data()[o..o + inner])
                                .map(|(&a, &b)| a * b)
                                .sum();
                            ds.data_mut()[sidx(b, ch)] += acc;
                        }
                    }
                    ds
                });
                vec![dx, ds]
            }),
        )
    }

    /// `x[n, c, ..] + v[n, c]` with `v` of shape `[N, C]` or `[C]`.
    pub fn add_channels(self, v: Var<'g, T>) -> Var<'g, T> {
        self.same_graph(&v);
        let (x, s) = (self.value(), v.value());
        let (n, c) = (x.shape()[0], x.shape()[1]);
        let per_batch = channel_operand(s.shape(), n, c);
        let inner = x.numel() / (n * c);
        let sidx = move |b: usize, ch: usize| if per_batch { b * c + ch } else { ch };
        let mut out = (*x).clone();
        for b in 0..n {
            for ch in 0..c {
                let k = s.data()[sidx(b, ch)];
                let o = (b * c + ch) * inner;
                out.data_mut()[o..o + inner].iter_mut().for_each(|e| *e += k);
            }
        }
        let sshape = s.shape().to_vec();
        self.graph.record(
            out,
            &[self.id, v.id],
            Box::new(move |g, need| {
                let ds = need[1].then(|| {
                    let mut ds = Tensor::zeros(&sshape);
                    for b in 0..n {
                        for ch in 0..c {
                            let o = (b * c + ch) * inner;
                            let acc: T = g.data()[o..o + inner].iter().copied().sum();
                            ds.data_mut()[sidx(b, ch)] += acc;
                        }
                    }
                    ds
                });
                vec![need[0].then(|| g.clone()), ds]
            }),
        )
    }

    /// 2-d convolution of an NCHW input with `weight: [Cout, Cin, k, k]` and
    /// optional `bias: [Cout]`.
    pub fn conv2d(
        self,
        weight: Var<'g, T>,
        bias: Option<Var<'g, T>>,
        stride: usize,
        pad: usize,
        mode: PadMode,
    ) -> Var<'g, T> {
        self.same_graph(&weight);
        let x = self.value();
        let w = weight.value();
        let (n, cin, h, wd) = x.dims4();
        let (cout, wcin, k, k2) = w.dims4();
        assert_eq!(k, k2, "square kernels only");
        assert_eq!(cin, wcin, "conv input has {cin} channels, weight expects {wcin}");
        let bias_v = bias.map(|b| {
            self.same_graph(&b);
            let bv = b.value();
            assert_eq!(bv.shape(), [cout], "conv bias shape");
            bv
        });
        let direct = k == 1 && stride == 1 && pad == 0;
        let geo = geometry(h, wd, k, stride, pad, mode);
        let (ho, wo) = (geo.ho, geo.wo);
        let l = ho * wo;
        let rows = cin * k * k;
        let mut out = Tensor::zeros(&[n, cout, ho, wo]);
        let mut col = if direct { Vec::new() } else { vec![T::zero(); rows * l] };
        for b in 0..n {
            let xb = &x.data()[b * cin * h * wd..(b + 1) * cin * h * wd];
            let ob = &mut out.data_mut()[b * cout * l..(b + 1) * cout * l];
            if let Some(bv) = &bias_v {
                for (co, chunk) in ob.chunks_mut(l).enumerate() {
                    chunk.fill(bv.data()[co]);
                }
            }
            let beta = if bias_v.is_some() { T::one() } else { T::zero() };
            if direct {
                gemm(false, false, cout, rows, l, w.data(), xb, beta, ob);
            } else {
                geo.im2col(xb, cin, &mut col);
                gemm(false, false, cout, rows, l, w.data(), &col, beta, ob);
            }
        }
        let mut inputs = vec![self.id, weight.id];
        if let Some(b) = bias {
            inputs.push(b.id);
        }
        let has_bias = bias_v.is_some();
        self.graph.record(
            out,
            &inputs,
            Box::new(move |g, need| {
                let mut dx = need[0].then(|| Tensor::zeros(x.shape()));
                let mut dw = need[1].then(|| Tensor::zeros(w.shape()));
                let mut db = (has_bias && need[2]).then(|| Tensor::zeros(&[cout]));
                let mut col = if direct { Vec::new() } else { vec![T::zero(); rows * l] };
                let mut dcol = vec![T::zero(); if direct { 0 } else { rows * l }];
                for b in 0..n {
                    let gb = &g.data()[b * cout * l..(b + 1) * cout * l];
                    let xb = &x.data()[b * cin * h * wd..(b + 1) * cin * h * wd];
                    if let Some(dw) = dw.as_mut() {
                        if direct {
                            gemm(false, true, cout, l, rows, gb, xb, T::one(), dw.data_mut());
                        } else {
                            geo.im2col(xb, cin, &mut col);
                            gemm(false, true, cout, l, rows, gb, &col, T::one(), dw.data_mut());
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dxb = &mut dx.data_mut()[b * cin * h * wd..(b + 1) * cin * h * wd];
                        if direct {
                            gemm(true, false, rows, cout, l, w.data(), gb, T::one(), dxb);
                        } else {
                            gemm(true, false, rows, cout, l, w.data(), gb, T::zero(), &mut dcol);
                            geo.col2im(&dcol, cin, dxb);
                        }
                    }
                    if let Some(db) = db.as_mut() {
                        for (co, chunk) in gb.chunks(l).enumerate() {
                            db.data_mut()[co] += chunk.iter().copied().sum::<T>();
                        }
                    }
                }
                let mut grads = vec![dx, dw];
                if has_bias {
                    grads.push(db);
                }
                grads
            }),
        )
    }

    /// Group normalization without affine parameters: every group of
    /// `C / groups` channels is standardized per batch item.
    pub fn group_norm(self, groups: usize, eps: f64) -> Var<'g, T> {
        let x = self.value();
        let n = x.shape()[0];
        let c = x.shape()[1];
        assert!(groups >= 1 && c % groups == 0, "{groups} groups do not divide {c} channels");
        let m = x.numel() / (n * groups);
        let eps = T::from_f64_lossy(eps);
        let mf = T::from_usize(m).unwrap();
        let mut y = Tensor::zeros(x.shape());
        let mut rstd = vec![T::zero(); n * groups];
        for (gi, (xs, ys)) in x.data().chunks(m).zip(y.data_mut().chunks_mut(m)).enumerate() {
            let mean = xs.iter().copied().sum::<T>() / mf;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / mf;
            let r = T::one() / (var + eps).sqrt();
            rstd[gi] = r;
            for (o, &v) in ys.iter_mut().zip(xs) {
                *o = (v - mean) * r;
            }
        }
        let y = Rc::new(y);
        let yc = y.clone();
        self.unary((*y).clone(), move |g| {
            let mut dx = Tensor::zeros(g.shape());
            for (gi, ((gs, ys), ds)) in g
                .data()
                .chunks(m)
                .zip(yc.data().chunks(m))
                .zip(dx.data_mut().chunks_mut(m))
                .enumerate()
            {
                let mean_g = gs.iter().copied().sum::<T>() / mf;
                let mean_gy = gs.iter().zip(ys).map(|(&a, &b)| a * b).sum::<T>() / mf;
                let r = rstd[gi];
                for ((d, &gv), &yv) in ds.iter_mut().zip(gs).zip(ys) {
                    *d = r * (gv - mean_g - yv * mean_gy);
                }
            }
            dx
        })
    }

    /// `x: [N, I]`, `weight: [O, I]`, `bias: [O]` → `[N, O]`.
    pub fn linear(self, weight: Var<'g, T>, bias: Option<Var<'g, T>>) -> Var<'g, T> {
        self.same_graph(&weight);
        let x = self.value();
        let w = weight.value();
        assert_eq!(x.shape().len(), 2, "linear expects [N, I]");
        let (n, i) = (x.shape()[0], x.shape()[1]);
        let (o, wi) = (w.shape()[0], w.shape()[1]);
        assert_eq!(i, wi, "linear input width {i}, weight expects {wi}");
        let mut out = Tensor::zeros(&[n, o]);
        let bias_v = bias.map(|b| b.value());
        if let Some(bv) = &bias_v {
            assert_eq!(bv.shape(), [o], "linear bias shape");
            for row in out.data_mut().chunks_mut(o) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(false, true, n, i, o, x.data(), w.data(), T::one(), out.data_mut());
        let mut inputs = vec![self.id, weight.id];
        if let Some(b) = bias {
            self.same_graph(&b);
            inputs.push(b.id);
        }
        let has_bias = bias_v.is_some();
        self.graph.record(
            out,
            &inputs,
            Box::new(move |g, need| {
                let dx = need[0].then(|| {
                    let mut dx = Tensor::zeros(&[n, i]);
                    gemm(false, false, n, o, i, g.data(), w.data(), T::zero(), dx.data_mut());
                    dx
                });
                let dw = need[1].then(|| {
                    let mut dw = Tensor::zeros(&[o, i]);
                    gemm(true, false, o, n, i, g.data(), x.data(), T::zero(), dw.data_mut());
                    dw
                });
                let mut grads = vec![dx, dw];
                if has_bias {
                    grads.push(need[2].then(|| {
                        let mut db = Tensor::zeros(&[o]);
                        for row in g.data().chunks(o) {
                            for (d, &v) in db.data_mut().iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        db
                    }));
                }
                grads
            }),
        )
    }

    /// Batched matrix product of `[B, M, K]` and `[B, K, N]` operands, either
    /// of which may be stored transposed.
    pub fn bmm(self, other: Var<'g, T>, trans_a: bool, trans_b: bool) -> Var<'g, T> {
        self.same_graph(&other);
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape().len(), 3);
        assert_eq!(b.shape().len(), 3);
        let batch = a.shape()[0];
        assert_eq!(b.shape()[0], batch, "bmm batch mismatch");
        let (m, k) = if trans_a { (a.shape()[2], a.shape()[1]) } else { (a.shape()[1], a.shape()[2]) };
        let (kb, nn) = if trans_b { (b.shape()[2], b.shape()[1]) } else { (b.shape()[1], b.shape()[2]) };
        assert_eq!(k, kb, "bmm inner dimension mismatch");
        let mut out = Tensor::zeros(&[batch, m, nn]);
        for i in 0..batch {
            gemm(
                trans_a,
                trans_b,
                m,
                k,
                nn,
                &a.data()[i * m * k..(i + 1) * m * k],
                &b.data()[i * k * nn..(i + 1) * k * nn],
                T::zero(),
                &mut out.data_mut()[i * m * nn..(i + 1) * m * nn],
            );
        }
        self.graph.record(
            out,
            &[self.id, other.id],
            Box::new(move |g, need| {
                let da = need[0].then(|| {
                    let mut da = Tensor::zeros(a.shape());
                    for i in 0..batch {
                        let gi = &g.data()[i * m * nn..(i + 1) * m * nn];
                        let bi = &b.data()[i * k * nn..(i + 1) * k * nn];
                        let di = &mut da.data_mut()[i * m * k..(i + 1) * m * k];
                        if trans_a {
                            gemm(trans_b, true, k, nn, m, bi, gi, T::zero(), di);
                        } else {
                            gemm(false, !trans_b, m, nn, k, gi, bi, T::zero(), di);
                        }
                    }
                    da
                });
                let db = need[1].then(|| {
                    let mut db = Tensor::zeros(b.shape());
                    for i in 0..batch {
                        let gi = &g.data()[i * m * nn..(i + 1) * m * nn];
                        let ai = &a.data()[i * m * k..(i + 1) * m * k];
                        let di = &mut db.data_mut()[i * k * nn..(i + 1) * k * nn];
                        if trans_b {
                            gemm(true, trans_a, nn, m, k, gi, ai, T::zero(), di);
                        } else {
                            gemm(!trans_a, false, k, m, nn, ai, gi, T::zero(), di);
                        }
                    }
                    db
                });
                vec![da, db]
            }),
        )
    }

    /// Softmax over the last dimension.
    pub fn softmax_last(self) -> Var<'g, T> {
        let x = self.value();
        let d = *x.shape().last().unwrap();
        let mut y = Tensor::zeros(x.shape());
        for (xs, ys) in x.data().chunks(d).zip(y.data_mut().chunks_mut(d)) {
            let mx = xs.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut s = T::zero();
            for (o, &v) in ys.iter_mut().zip(xs) {
                *o = (v - mx).exp();
                s += *o;
            }
            ys.iter_mut().for_each(|o| *o = *o / s);
        }
        let y = Rc::new(y);
        let yc = y.clone();
        self.unary((*y).clone(), move |g| {
            let mut dx = Tensor::zeros(g.shape());
            for ((gs, ys), ds) in g.data().chunks(d).zip(yc.data().chunks(d)).zip(dx.data_mut().chunks_mut(d)) {
                let dot: T = gs.iter().zip(ys).map(|(&a, &b)| a * b).sum();
                for ((o, &gv), &yv) in ds.iter_mut().zip(gs).zip(ys) {
                    *o = yv * (gv - dot);
                }
            }
            dx
        })
    }

    /// Channel-wise concatenation of two NCHW tensors.
    pub fn concat_channels(self, other: Var<'g, T>) -> Var<'g, T> {
        self.same_graph(&other);
        let (a, b) = (self.value(), other.value());
        let (n, ca, h, w) = a.dims4();
        let (nb, cb, hb, wb) = b.dims4();
        assert_eq!((n, h, w), (nb, hb, wb), "concat spatial/batch mismatch");
        let (sa, sb) = (ca * h * w, cb * h * w);
        let mut data = Vec::with_capacity(n * (sa + sb));
        for i in 0..n {
            data.extend_from_slice(&a.data()[i * sa..(i + 1) * sa]);
            data.extend_from_slice(&b.data()[i * sb..(i + 1) * sb]);
        }
        let out = Tensor::from_vec(&[n, ca + cb, h, w], data);
        self.graph.record(
            out,
            &[self.id, other.id],
            Box::new(move |g, need| {
                let pick = |off: usize, len: usize, shape: [usize; 4]| {
                    let mut d = Vec::with_capacity(n * len);
                    for i in 0..n {
                        let base = i * (sa + sb) + off;
                        d.extend_from_slice(&g.data()[base..base + len]);
                    }
                    Tensor::from_vec(&shape, d)
                };
                vec![
                    need[0].then(|| pick(0, sa, [n, ca, h, w])),
                    need[1].then(|| pick(sa, sb, [n, cb, h, w])),
                ]
            }),
        )
    }

    /// Nearest-neighbour 2x spatial upsampling.
    pub fn upsample_nearest2x(self) -> Var<'g, T> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(ho * wo)) {
            for oy in 0..ho {
                for ox in 0..wo {
                    dst[oy * wo + ox] = src[(oy / 2) * w + ox / 2];
                }
            }
        }
        self.unary(out, move |g| {
            let mut dx = Tensor::zeros(&[n, c, h, w]);
            for (src, dst) in g.data().chunks(ho * wo).zip(dx.data_mut().chunks_mut(h * w)) {
                for oy in 0..ho {
                    for ox in 0..wo {
                        dst[(oy / 2) * w + ox / 2] += src[oy * wo + ox];
                    }
                }
            }
            dx
        })
    }

    /// Bilinear resize with half-pixel centres (`align_corners = false`):
    /// output sample `d` reads source coordinate `(d + 0.5) * in / out - 0.5`,
    /// clamped to the valid range. Same-size resize is an exact copy.
    pub fn resize_bilinear(self, out_h: usize, out_w: usize) -> Var<'g, T> {
        assert!(out_h >= 1 && out_w >= 1, "resize target must be at least 1x1");
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        if (h, w) == (out_h, out_w) {
            let v = (*x).clone();
            return self.unary(v, |g| g.clone());
        }
        let ty = bilinear_taps::<T>(h, out_h);
        let tx = bilinear_taps::<T>(w, out_w);
        let mut out = Tensor::zeros(&[n, c, out_h, out_w]);
        for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(out_h * out_w)) {
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    dst[oy * out_w + ox] = wy0 * (wx0 * src[y0 * w + x0] + wx1 * src[y0 * w + x1])
                        + wy1 * (wx0 * src[y1 * w + x0] + wx1 * src[y1 * w + x1]);
                }
            }
        }
        self.unary(out, move |g| {
            let mut dx = Tensor::zeros(&[n, c, h, w]);
            for (gs, dst) in g.data().chunks(out_h * out_w).zip(dx.data_mut().chunks_mut(h * w)) {
                for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                        let gv = gs[oy * out_w + ox];
                        dst[y0 * w + x0] += gv * wy0 * wx0;
                        dst[y0 * w + x1] += gv * wy0 * wx1;
                        dst[y1 * w + x0] += gv * wy1 * wx0;
                        dst[y1 * w + x1] += gv * wy1 * wx1;
                    }
                }
            }
            dx
        })
    }
}

/// Per-output `(i0, i1, w0, w1)` taps along one axis.
pub fn bilinear_taps<T: Scalar>(input: usize, output: usize) -> Vec<(usize, usize, T, T)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let l = src - i0 as f64;
            let l = if i0 == i1 { 0.0 } else { l };
            (i0, i1, T::from_f64_lossy(1.0 - l), T::from_f64_lossy(l))
        })
        .collect()
}
