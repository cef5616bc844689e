use super::{check_axis, strides};
use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::{BackwardCtx, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    /// Gradient flows to the first maximal element.
    Max,
}

impl<T: Real> Tape<T> {
    /// Reduces over `axes`, dropping them from the shape.
    pub fn reduce(&mut self, op: ReduceOp, a: Var, axes: &[usize]) -> Result<Var> {
        if axes.is_empty() {
            self.value(a)?;
            return Ok(a);
        }
        let kept = self.reduce_keep(op, a, axes)?;
        let shape: Vec<usize> = self
            .shape(a)?
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &d)| d)
            .collect();
        self.reshape(kept, &shape)
    }

    /// Reduces over `axes`, keeping them as size-1 extents.
    pub fn reduce_keep(&mut self, op: ReduceOp, a: Var, axes: &[usize]) -> Result<Var> {
        let ta = self.value(a)?;
        let in_shape = ta.shape().to_vec();
        let rank = in_shape.len();
        for (i, &ax) in axes.iter().enumerate() {
            check_axis(ax, rank)?;
            if axes[..i].contains(&ax) {
                return Err(TensorError::Invalid {
                    op: "reduce",
                    msg: format!("axis {ax} listed twice"),
                });
            }
        }
        if axes.is_empty() {
            return Ok(a);
        }
        let out_shape: Vec<usize> = in_shape
            .iter()
            .enumerate()
            .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
            .collect();
        let out_strides = strides(&out_shape);
        // Offset into the output for each input axis step.
        let map: Vec<usize> = (0..rank)
            .map(|i| if axes.contains(&i) { 0 } else { out_strides[i] })
            .collect();
        let targets = output_offsets(&in_shape, &map);
        let out_n: usize = out_shape.iter().product();
        let count = ta.numel() / out_n;
        let x = ta.data();

        let (out, argmax) = match op {
            ReduceOp::Sum | ReduceOp::Mean => {
                let mut out = vec![T::ZERO; out_n];
                for (i, &o) in targets.iter().enumerate() {
                    out[o] += x[i];
                }
                if op == ReduceOp::Mean {
                    let c = T::of(count as f64);
                    out.iter_mut().for_each(|v| *v /= c);
                }
                (out, None)
            }
            ReduceOp::Max => {
                let mut out = vec![T::ZERO; out_n];
                let mut arg = vec![usize::MAX; out_n];
                for (i, &o) in targets.iter().enumerate() {
                    if arg[o] == usize::MAX || x[i] > out[o] {
                        out[o] = x[i];
                        arg[o] = i;
                    }
                }
                (out, Some(arg))
            }
        };
        let out = Tensor::new(&out_shape, out)?;
        let n_in = ta.numel();
        self.push_op(
            "reduce",
            &[a],
            out,
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let g = ctx.grad();
                let mut gx = vec![T::ZERO; n_in];
                match (op, argmax) {
                    (ReduceOp::Max, Some(arg)) => {
                        for (o, &i) in arg.iter().enumerate() {
                            gx[i] += g[o];
                        }
                    }
                    _ => {
                        let scale = if op == ReduceOp::Mean {
                            T::ONE / T::of(count as f64)
                        } else {
                            T::ONE
                        };
                        for (i, &o) in targets.iter().enumerate() {
                            gx[i] = g[o] * scale;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Sum of every element, as a rank-0 scalar.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a)?;
        let n = ta.numel();
        let s: T = ta.data().iter().copied().sum();
        self.push_op(
            "sum",
            &[a],
            Tensor::scalar(s),
            Box::new(move |ctx: &BackwardCtx<'_, T>| vec![Some(vec![ctx.grad()[0]; n])]),
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a)?.numel();
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n as f64)
    }
}

fn output_offsets(shape: &[usize], map: &[usize]) -> Vec<usize> {
    let n: usize = shape.iter().product();
    let mut out = Vec::with_capacity(n);
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += map[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            off -= map[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
    out
}
