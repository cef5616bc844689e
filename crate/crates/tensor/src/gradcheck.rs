//! Central finite-difference gradient checks.

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Denominator guard in the relative error.
pub const REL_EPS: f64 = 1e-8;

/// Worst coordinate found by a check.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub analytic: f64,
    pub numeric: f64,
    pub coords: usize,
}

impl GradReport {
    fn record(&mut self, analytic: f64, numeric: f64) {
        let err = (analytic - numeric).abs() / (analytic.abs() + REL_EPS);
        self.coords += 1;
        if err >= self.max_rel_error {
            self.max_rel_error = err;
            self.analytic = analytic;
            self.numeric = numeric;
        }
    }
}

fn scalar_of(tape: &Tape<f64>, v: Var) -> Result<f64> {
    let t = tape.value(v)?;
    t.item()
        .ok_or_else(|| TensorError::NonScalarLoss(t.shape().to_vec()))
}

/// Max over coordinates of `|analytic − numeric| / (|analytic| + 1e-8)` for a
/// scalar function of one tensor.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    check_inputs(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}

/// Like [`finite_diff_check`] over every coordinate of several inputs.
pub fn check_inputs<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>], grads: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.set_requires_grad(grads);
                tape.leaf(t)
            })
            .collect();
        let loss = f(&mut tape, &vars)?;
        let value = scalar_of(&tape, loss)?;
        if !grads {
            return Ok((value, Vec::new()));
        }
        let g = tape.backward(loss)?;
        let per_input = vars
            .iter()
            .zip(values)
            .map(|(&v, t)| {
                g.wrt(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; t.numel()])
            })
            .collect();
        Ok((value, per_input))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut report = GradReport::default();
    let mut probe = inputs.to_vec();
    for (k, grad) in analytic.iter().enumerate() {
        for (i, &g) in grad.iter().enumerate() {
            let orig = probe[k].data()[i];
            probe[k].data_mut()[i] = orig + h;
            let (up, _) = eval(&probe, false)?;
            probe[k].data_mut()[i] = orig - h;
            let (down, _) = eval(&probe, false)?;
            probe[k].data_mut()[i] = orig;
            report.record(g, (up - down) / (2.0 * h));
        }
    }
    Ok(report)
}

/// Checks selected parameter coordinates of a store-driven scalar function.
/// Each coordinate is `(parameter, flat index)`.
pub fn check_params<F>(
    f: F,
    store: &mut ParamStore<f64>,
    coords: &[(ParamId, usize)],
    h: f64,
) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss)?;
    let mut report = GradReport::default();
    for &(id, i) in coords {
        let analytic = grads.param(id).map_or(0.0, |g| g[i]);
        let orig = store.get(id).data()[i];
        let mut value_at = |x: f64| -> Result<f64> {
            store.get_mut(id).data_mut()[i] = x;
            let mut tape = Tape::new();
            let loss = f(&mut tape, store)?;
            scalar_of(&tape, loss)
        };
        let up = value_at(orig + h)?;
        let down = value_at(orig - h)?;
        store.get_mut(id).data_mut()[i] = orig;
        report.record(analytic, (up - down) / (2.0 * h));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exact() {
        let x = Tensor::from_f64(&[3], &[0.3, -1.0, 2.0]).unwrap();
        let r = finite_diff_check(|t, v| t.sum_all(v), &x, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.coords, 3);
    }

    #[test]
    fn sigmoid_of_sum_at_zero() {
        let x = Tensor::from_f64(&[1], &[0.0]).unwrap();
        let r = finite_diff_check(
            |t, v| {
                let s = t.sum_all(v)?;
                t.sigmoid(s)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!((r.analytic - 0.25).abs() < 1e-12);
        assert!((r.numeric - 0.25).abs() < 1e-6);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // scale by 2 forward but claim gradient 1 via a custom op
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let r = finite_diff_check(
            |t, v| {
                let out = Tensor::new(&[2], t.value(v)?.data().iter().map(|a| 2.0 * a).collect())?;
                let y = t.push_op(
                    "bad",
                    &[v],
                    out,
                    Box::new(|ctx| vec![Some(ctx.grad().to_vec())]),
                )?;
                t.sum_all(y)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error > 0.5);
    }
}
