use super::{check_axis, strides};
use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::{BackwardCtx, Tape, Var};
use crate::tensor::{check_shape, Tensor};

impl<T: Real> Tape<T> {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ta = self.value(a)?;
        if check_shape(shape)? != ta.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: ta.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = Tensor::new(shape, ta.data().to_vec())?;
        self.push_op(
            "reshape",
            &[a],
            out,
            Box::new(|ctx: &BackwardCtx<'_, T>| vec![Some(ctx.grad().to_vec())]),
        )
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let ta = self.value(a)?;
        let rank = ta.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank {
            return Err(TensorError::Invalid {
                op: "permute",
                msg: format!("permutation {perm:?} for rank {rank}"),
            });
        }
        for &p in perm {
            check_axis(p, rank)?;
            if std::mem::replace(&mut seen[p], true) {
                return Err(TensorError::Invalid {
                    op: "permute",
                    msg: format!("axis {p} repeated"),
                });
            }
        }
        let in_shape = ta.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let src = gather_index(&in_shape, perm);
        let x = ta.data();
        let out: Vec<T> = src.iter().map(|&i| x[i]).collect();
        let out = Tensor::new(&out_shape, out)?;
        self.push_op(
            "permute",
            &[a],
            out,
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let g = ctx.grad();
                let mut gx = vec![T::ZERO; g.len()];
                for (o, &i) in src.iter().enumerate() {
                    gx[i] = g[o];
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::Invalid {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let base = self.shape(*first)?.to_vec();
        check_axis(axis, base.len())?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p)?;
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            widths.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = widths.iter().sum();
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &w) in parts.iter().zip(&widths) {
                let d = self.value(p)?.data();
                out.extend_from_slice(&d[o * w * inner..(o + 1) * w * inner]);
            }
        }
        let out = Tensor::new(&out_shape, out)?;
        self.push_op(
            "concat",
            parts,
            out,
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let g = ctx.grad();
                let mut offset = 0;
                widths
                    .iter()
                    .enumerate()
                    .map(|(k, &w)| {
                        let part = ctx.needs(k).then(|| {
                            let mut gp = Vec::with_capacity(outer * w * inner);
                            for o in 0..outer {
                                let start = o * total * inner + offset * inner;
                                gp.extend_from_slice(&g[start..start + w * inner]);
                            }
                            gp
                        });
                        offset += w;
                        part
                    })
                    .collect()
            }),
        )
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a)?;
        let shape = ta.shape().to_vec();
        check_axis(axis, shape.len())?;
        if len == 0 || start + len > shape[axis] {
            return Err(TensorError::Invalid {
                op: "slice",
                msg: format!(
                    "range {start}..{} outside extent {}",
                    start + len,
                    shape[axis]
                ),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let x = ta.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * full + start) * inner;
            out.extend_from_slice(&x[s..s + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let n_in = ta.numel();
        let out = Tensor::new(&out_shape, out)?;
        self.push_op(
            "slice",
            &[a],
            out,
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let g = ctx.grad();
                let mut gx = vec![T::ZERO; n_in];
                for o in 0..outer {
                    let s = (o * full + start) * inner;
                    gx[s..s + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        )
    }
}

/// For each output position of a permutation, the source flat index.
fn gather_index(in_shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n: usize = out_shape.iter().product();
    let rank = out_shape.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += step[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= step[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}
