//! Fused neural-network kernels with hand-written backward passes.

use super::check_axis;
use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::{BackwardCtx, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self {
            stride: (1, 1),
            padding: (0, 0),
        }
    }
}

impl ConvGeometry {
    pub fn new(stride: (usize, usize), padding: (usize, usize)) -> Self {
        Self { stride, padding }
    }

    /// Output extent along one axis, or `None` when the kernel does not fit.
    pub fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = input + 2 * pad;
        (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
    }
}

/// Which elements share normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormMode {
    /// Per channel over batch and spatial positions.
    Batch,
    /// Per sample over channels and spatial positions.
    Layer,
    /// Per sample and channel over spatial positions.
    Instance,
}

/// Per-channel batch statistics (biased variance) from a training pass.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats<T: Real> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Elements per channel the statistics were computed over.
    pub count: usize,
}

struct ConvDims {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    g: ConvGeometry,
}

impl ConvDims {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn p(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds one sample `[c,h,w]` into `[c·kh·kw, oh·ow]`.
fn im2col<T: Real>(x: &[T], d: &ConvDims, cols: &mut [T]) {
    let (sh, sw) = d.g.stride;
    let (ph, pw) = (d.g.padding.0 as isize, d.g.padding.1 as isize);
    let p = d.p();
    let mut row = 0;
    for ci in 0..d.c {
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..d.oh {
                    let iy = (oy * sh + ki) as isize - ph;
                    let line = &mut dst[oy * d.ow..(oy + 1) * d.ow];
                    if iy < 0 || iy >= d.h as isize {
                        line.iter_mut().for_each(|v| *v = T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * sw + kj) as isize - pw;
                        *v = if ix < 0 || ix >= d.w as isize {
                            T::ZERO
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back into `[c,h,w]`.
fn col2im<T: Real>(cols: &[T], d: &ConvDims, x: &mut [T]) {
    let (sh, sw) = d.g.stride;
    let (ph, pw) = (d.g.padding.0 as isize, d.g.padding.1 as isize);
    let p = d.p();
    let mut row = 0;
    for ci in 0..d.c {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..d.oh {
                    let iy = (oy * sh + ki) as isize - ph;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let base = ci * d.h * d.w + iy as usize * d.w;
                    for ox in 0..d.ow {
                        let ix = (ox * sw + kj) as isize - pw;
                        if ix >= 0 && ix < d.w as isize {
                            x[base + ix as usize] += src[oy * d.ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// 2-D cross-correlation. `x: [b,c,h,w]`, `weight: [o,c,kh,kw]`,
    /// `bias: [o]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    ) -> Result<Var> {
        let tx = self.value(x)?;
        let tw = self.value(weight)?;
        let (sx, sw) = (tx.shape(), tw.shape());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let (oh, ow) = match (
            ConvGeometry::out_extent(sx[2], sw[2], geom.stride.0, geom.padding.0),
            ConvGeometry::out_extent(sx[3], sw[3], geom.stride.1, geom.padding.1),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(TensorError::Invalid {
                    op: "conv2d",
                    msg: format!(
                        "kernel {:?} larger than padded input {:?}",
                        &sw[2..],
                        &sx[2..]
                    ),
                })
            }
        };
        let d = ConvDims {
            b: sx[0],
            c: sx[1],
            h: sx[2],
            w: sx[3],
            o: sw[0],
            kh: sw[2],
            kw: sw[3],
            oh,
            ow,
            g: geom,
        };
        let bias_data = match bias {
            Some(bv) => {
                let tb = self.value(bv)?;
                if tb.shape() != [d.o] {
                    return Err(TensorError::ShapeMismatch {
                        op: "conv2d bias",
                        lhs: vec![d.o],
                        rhs: tb.shape().to_vec(),
                    });
                }
                Some(tb.data().to_vec())
            }
            None => None,
        };
        let (k, p) = (d.k(), d.p());
        let mut cols = vec![T::ZERO; d.b * k * p];
        let mut out = vec![T::ZERO; d.b * d.o * p];
        let xd = self.value(x)?.data();
        let wd = self.value(weight)?.data();
        for bi in 0..d.b {
            let col = &mut cols[bi * k * p..(bi + 1) * k * p];
            im2col(&xd[bi * d.c * d.h * d.w..], &d, col);
            let dst = &mut out[bi * d.o * p..(bi + 1) * d.o * p];
            if let Some(bd) = &bias_data {
                for (oi, chunk) in dst.chunks_mut(p).enumerate() {
                    chunk.iter_mut().for_each(|v| *v = bd[oi]);
                }
            }
            let beta = if bias_data.is_some() { T::ONE } else { T::ZERO };
            T::gemm(
                d.o,
                k,
                p,
                T::ONE,
                wd,
                (k as isize, 1),
                col,
                (p as isize, 1),
                beta,
                dst,
                (p as isize, 1),
            );
        }
        let out = Tensor::new(&[d.b, d.o, oh, ow], out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.push_op(
            "conv2d",
            &inputs,
            out,
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let g = ctx.grad();
                let wd = ctx.input(1).data();
                let gx = ctx.needs(0).then(|| {
                    let mut gx = vec![T::ZERO; d.b * d.c * d.h * d.w];
                    let mut dcol = vec![T::ZERO; k * p];
                    for bi in 0..d.b {
                        // dcols = Wᵀ · dOut
                        T::gemm(
                            k,
                            d.o,
                            p,
                            T::ONE,
                            wd,
                            (1, k as isize),
                            &g[bi * d.o * p..],
                            (p as isize, 1),
                            T::ZERO,
                            &mut dcol,
                            (p as isize, 1),
                        );
                        col2im(
                            &dcol,
                            &d,
                            &mut gx[bi * d.c * d.h * d.w..(bi + 1) * d.c * d.h * d.w],
                        );
                    }
                    gx
                });
                let gw = ctx.needs(1).then(|| {
                    let mut gw = vec![T::ZERO; d.o * k];
                    for bi in 0..d.b {
                        // dW += dOut · colsᵀ
                        T::gemm(
                            d.o,
                            p,
                            k,
                            T::ONE,
                            &g[bi * d.o * p..],
                            (p as isize, 1),
                            &cols[bi * k * p..],
                            (1, p as isize),
                            T::ONE,
                            &mut gw,
                            (k as isize, 1),
                        );
                    }
                    gw
                });
                let mut grads = vec![gx, gw];
                if bias_data.is_some() {
                    grads.push(ctx.needs(2).then(|| {
                        let mut gb = vec![T::ZERO; d.o];
                        for bi in 0..d.b {
                            for (oi, chunk) in
                                g[bi * d.o * p..(bi + 1) * d.o * p].chunks(p).enumerate()
                            {
                                gb[oi] += chunk.iter().copied().sum::<T>();
                            }
                        }
                        gb
                    }));
                }
                grads
            }),
        )
    }

    /// Max pooling over `[b,c,h,w]` without padding; ties go to the first
    /// position in row-major window order.
    pub fn maxpool2d(
        &mut self,
        x: Var,
        kernel: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Var> {
        let tx = self.value(x)?;
        let s = tx.shape();
        if s.len() != 4 {
            return Err(TensorError::Invalid {
                op: "maxpool2d",
                msg: format!("expected rank 4, got {s:?}"),
            });
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = match (
            ConvGeometry::out_extent(h, kernel.0, stride.0, 0),
            ConvGeometry::out_extent(w, kernel.1, stride.1, 0),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(TensorError::Invalid {
                    op: "maxpool2d",
                    msg: format!("window {kernel:?} larger than input {h}x{w}"),
                })
            }
        };
        let xd = tx.data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut arg = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride.0 * w + ox * stride.1;
                    for ky in 0..kernel.0 {
                        for kx in 0..kernel.1 {
                            let i = base + (oy * stride.0 + ky) * w + ox * stride.1 + kx;
                            if xd[i] > xd[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(xd[best]);
                    arg.push(best);
                }
            }
        }
        let n_in = tx.numel();
        let out = Tensor::new(&[b, c, oh, ow], out)?;
        self.push_op(
            "maxpool2d",
            &[x],
            out,
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let g = ctx.grad();
                let mut gx = vec![T::ZERO; n_in];
                for (o, &i) in arg.iter().enumerate() {
                    gx[i] += g[o];
                }
                vec![Some(gx)]
            }),
        )
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(x, axis, false)
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(x, axis, true)
    }

    fn softmax_impl(&mut self, x: Var, axis: usize, log: bool) -> Result<Var> {
        let tx = self.value(x)?;
        let shape = tx.shape().to_vec();
        check_axis(axis, shape.len())?;
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xd = tx.data();
        let mut out = vec![T::ZERO; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let mut m = xd[at(0)];
                for j in 1..len {
                    m = m.max(xd[at(j)]);
                }
                let mut z = T::ZERO;
                for j in 0..len {
                    z += (xd[at(j)] - m).exp();
                }
                let lz = z.ln() + m;
                for j in 0..len {
                    out[at(j)] = if log {
                        xd[at(j)] - lz
                    } else {
                        (xd[at(j)] - lz).exp()
                    };
                }
            }
        }
        let out = Tensor::new(&shape, out)?;
        self.push_op(
            if log { "log_softmax" } else { "softmax" },
            &[x],
            out,
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let g = ctx.grad();
                let y = ctx.output().data();
                let mut gx = vec![T::ZERO; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        if log {
                            let s: T = (0..len).map(|j| g[at(j)]).sum();
                            for j in 0..len {
                                gx[at(j)] = g[at(j)] - y[at(j)].exp() * s;
                            }
                        } else {
                            let s: T = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..len {
                                gx[at(j)] = y[at(j)] * (g[at(j)] - s);
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Normalization with per-channel affine parameters. `x: [b,c,...]`,
    /// `gamma`, `beta: [c]`. Batch mode also returns the batch statistics.
    pub fn norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode,
        eps: f64,
    ) -> Result<(Var, Option<NormStats<T>>)> {
        let tx = self.value(x)?;
        let shape = tx.shape().to_vec();
        if shape.len() < 2 {
            return Err(TensorError::Invalid {
                op: "norm",
                msg: format!("expected [batch, channels, ...], got {shape:?}"),
            });
        }
        let (b, c) = (shape[0], shape[1]);
        let s: usize = shape[2..].iter().product();
        for v in [gamma, beta] {
            if self.shape(v)? != [c] {
                return Err(TensorError::ShapeMismatch {
                    op: "norm",
                    lhs: vec![c],
                    rhs: self.shape(v)?.to_vec(),
                });
            }
        }
        let groups = match mode {
            NormMode::Batch => c,
            NormMode::Layer => b,
            NormMode::Instance => b * c,
        };
        let group = move |bi: usize, ci: usize| match mode {
            NormMode::Batch => ci,
            NormMode::Layer => bi,
            NormMode::Instance => bi * c + ci,
        };
        let n_group = (b * c * s / groups) as f64;
        let xd = self.value(x)?.data();
        let mut mean = vec![0.0f64; groups];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * s;
                mean[group(bi, ci)] += xd[base..base + s].iter().map(|v| v.to_f64()).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n_group);
        let mut var = vec![0.0f64; groups];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * s;
                let m = mean[group(bi, ci)];
                var[group(bi, ci)] += xd[base..base + s]
                    .iter()
                    .map(|v| (v.to_f64() - m).powi(2))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= n_group);
        let inv_std: Vec<T> = var.iter().map(|&v| T::of(1.0 / (v + eps).sqrt())).collect();
        let mean_t: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();

        let gd = self.value(gamma)?.data().to_vec();
        let bd = self.value(beta)?.data().to_vec();
        let mut xhat = vec![T::ZERO; xd.len()];
        let mut out = vec![T::ZERO; xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                let gi = group(bi, ci);
                let base = (bi * c + ci) * s;
                for j in base..base + s {
                    let xh = (xd[j] - mean_t[gi]) * inv_std[gi];
                    xhat[j] = xh;
                    out[j] = gd[ci] * xh + bd[ci];
                }
            }
        }
        let stats = (mode == NormMode::Batch).then(|| NormStats {
            mean: mean_t.clone(),
            var: var.iter().map(|&v| T::of(v)).collect(),
            count: b * s,
        });
        let out = Tensor::new(&shape, out)?;
        let v = self.push_op(
            "norm",
            &[x, gamma, beta],
            out,
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let g = ctx.grad();
                let gd = ctx.input(1).data();
                let mut ggamma = vec![T::ZERO; c];
                let mut gbeta = vec![T::ZERO; c];
                let mut sum_dxh = vec![T::ZERO; groups];
                let mut sum_dxh_xh = vec![T::ZERO; groups];
                for bi in 0..b {
                    for ci in 0..c {
                        let gi = group(bi, ci);
                        let base = (bi * c + ci) * s;
                        for j in base..base + s {
                            ggamma[ci] += g[j] * xhat[j];
                            gbeta[ci] += g[j];
                            let dxh = g[j] * gd[ci];
                            sum_dxh[gi] += dxh;
                            sum_dxh_xh[gi] += dxh * xhat[j];
                        }
                    }
                }
                let gx = ctx.needs(0).then(|| {
                    let n = T::of(n_group);
                    let mut gx = vec![T::ZERO; g.len()];
                    for bi in 0..b {
                        for ci in 0..c {
                            let gi = group(bi, ci);
                            let base = (bi * c + ci) * s;
                            let k = inv_std[gi] / n;
                            for j in base..base + s {
                                let dxh = g[j] * gd[ci];
                                gx[j] = k * (n * dxh - sum_dxh[gi] - xhat[j] * sum_dxh_xh[gi]);
                            }
                        }
                    }
                    gx
                });
                vec![gx, Some(ggamma), Some(gbeta)]
            }),
        )?;
        Ok((v, stats))
    }

    /// Normalization with fixed per-channel statistics (inference mode).
    pub fn norm_frozen(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let tx = self.value(x)?;
        let shape = tx.shape().to_vec();
        if shape.len() < 2 || mean.len() != shape[1] || var.len() != shape[1] {
            return Err(TensorError::Invalid {
                op: "norm_frozen",
                msg: format!("statistics for {} channels, input {shape:?}", mean.len()),
            });
        }
        let (b, c) = (shape[0], shape[1]);
        let s: usize = shape[2..].iter().product();
        let inv_std: Vec<T> = var
            .iter()
            .map(|&v| T::ONE / (v + T::of(eps)).sqrt())
            .collect();
        let mean = mean.to_vec();
        let gd = self.value(gamma)?.data().to_vec();
        let bd = self.value(beta)?.data().to_vec();
        if gd.len() != c || bd.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "norm_frozen",
                lhs: vec![c],
                rhs: vec![gd.len()],
            });
        }
        let xd = self.value(x)?.data();
        let mut out = vec![T::ZERO; xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * s;
                for j in base..base + s {
                    out[j] = gd[ci] * (xd[j] - mean[ci]) * inv_std[ci] + bd[ci];
                }
            }
        }
        let out = Tensor::new(&shape, out)?;
        self.push_op(
            "norm_frozen",
            &[x, gamma, beta],
            out,
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let g = ctx.grad();
                let xd = ctx.input(0).data();
                let gd = ctx.input(1).data();
                let mut gx = vec![T::ZERO; g.len()];
                let mut ggamma = vec![T::ZERO; c];
                let mut gbeta = vec![T::ZERO; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * s;
                        for j in base..base + s {
                            let xh = (xd[j] - mean[ci]) * inv_std[ci];
                            ggamma[ci] += g[j] * xh;
                            gbeta[ci] += g[j];
                            gx[j] = g[j] * gd[ci] * inv_std[ci];
                        }
                    }
                }
                vec![Some(gx), Some(ggamma), Some(gbeta)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_1x1() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..12).map(|v| v as f64 * 0.25).collect();
        let x = tape.constant(Tensor::from_f64(&[1, 1, 3, 4], &data).unwrap());
        let w = tape.constant(Tensor::ones(&[1, 1, 1, 1]).unwrap());
        let y = tape.conv2d(x, w, None, ConvGeometry::default()).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), data.as_slice());
    }

    #[test]
    fn conv_all_ones_sums_window() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 3, 3]).unwrap());
        let w = tape.constant(Tensor::ones(&[1, 1, 3, 3]).unwrap());
        let b = tape.constant(Tensor::from_f64(&[1], &[0.5]).unwrap());
        let y = tape.conv2d(x, w, Some(b), ConvGeometry::default()).unwrap();
        assert_eq!(tape.shape(y).unwrap(), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).unwrap().data(), &[9.5]);
    }

    #[test]
    fn conv_output_extent_formula() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[2, 3, 8, 25]).unwrap());
        let w = tape.constant(Tensor::ones(&[4, 3, 2, 2]).unwrap());
        let y = tape
            .conv2d(x, w, None, ConvGeometry::new((2, 1), (0, 1)))
            .unwrap();
        assert_eq!(tape.shape(y).unwrap(), &[2, 4, 4, 26]);
    }

    #[test]
    fn conv_rejects_channel_mismatch_and_oversized_kernel() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[1, 2, 3, 3]).unwrap());
        let w = tape.constant(Tensor::ones(&[1, 1, 3, 3]).unwrap());
        assert!(tape.conv2d(x, w, None, ConvGeometry::default()).is_err());
        let w = tape.constant(Tensor::ones(&[1, 2, 5, 5]).unwrap());
        assert!(tape.conv2d(x, w, None, ConvGeometry::default()).is_err());
    }

    #[test]
    fn maxpool_2x2() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.maxpool2d(x, (2, 2), (2, 2)).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), &[4.0]);
    }

    #[test]
    fn softmax_of_zeros() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2]).unwrap());
        let y = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..24).map(|v| ((v * 7) % 11) as f64 - 5.0).collect();
        let x = tape.constant(Tensor::from_f64(&[2, 3, 4], &data).unwrap());
        let y = tape.softmax(x, 1).unwrap();
        let y = tape.value(y).unwrap().data();
        for o in 0..2 {
            for i in 0..4 {
                let s: f64 = (0..3).map(|j| y[(o * 3 + j) * 4 + i]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_norm_standardizes() {
        let mut tape = Tape::<f64>::new();
        // mean 5, std 2 within the single channel
        let data = [3.0, 7.0, 3.0, 7.0, 5.0 - 2.0, 5.0 + 2.0];
        let x = tape.constant(Tensor::from_f64(&[3, 1, 2], &data).unwrap());
        let g = tape.constant(Tensor::ones(&[1]).unwrap());
        let b = tape.constant(Tensor::zeros(&[1]).unwrap());
        let (y, stats) = tape.norm(x, g, b, NormMode::Batch, 1e-5).unwrap();
        let stats = stats.unwrap();
        assert!((stats.mean[0] - 5.0).abs() < 1e-12);
        assert!((stats.var[0] - 4.0).abs() < 1e-12);
        let y = tape.value(y).unwrap().data();
        let m: f64 = y.iter().sum::<f64>() / 6.0;
        let sd = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 6.0).sqrt();
        assert!(m.abs() < 1e-6);
        assert!((sd - 1.0).abs() < 1e-5);
    }

    #[test]
    fn constant_channel_collapses_to_shift() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::create(&[2, 1, 3], crate::Fill::Constant(4.2)).unwrap());
        let g = tape.constant(Tensor::from_f64(&[1], &[3.0]).unwrap());
        let b = tape.constant(Tensor::from_f64(&[1], &[-0.7]).unwrap());
        let (y, _) = tape.norm(x, g, b, NormMode::Batch, 1e-5).unwrap();
        assert!(tape.value(y).unwrap().data().iter().all(|&v| v == -0.7));
    }
}
