use super::{broadcast_shape, broadcast_strides, for_each_broadcast};
use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::{BackwardCtx, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }

    #[inline]
    fn apply<T: Real>(self, a: T, b: T) -> T {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
        }
    }

    /// Partial derivatives (d/da, d/db) scaled by the incoming gradient.
    #[inline]
    fn partials<T: Real>(self, a: T, b: T, g: T) -> (T, T) {
        match self {
            BinOp::Add => (g, g),
            BinOp::Sub => (g, -g),
            BinOp::Mul => (g * b, g * a),
            BinOp::Div => (g / b, -g * a / (b * b)),
        }
    }
}

/// Pointwise single-input functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    /// Natural log; input must be positive.
    Log,
    Neg,
    /// Input must be nonnegative.
    Sqrt,
    Square,
    Scale(f64),
    AddScalar(f64),
    /// `x^p`; input must be positive.
    Powf(f64),
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Relu => "relu",
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Neg => "neg",
            Unary::Sqrt => "sqrt",
            Unary::Square => "square",
            Unary::Scale(_) => "scale",
            Unary::AddScalar(_) => "add_scalar",
            Unary::Powf(_) => "powf",
        }
    }

    fn in_domain<T: Real>(self, x: T) -> bool {
        match self {
            Unary::Log | Unary::Powf(_) => x > T::ZERO,
            Unary::Sqrt => x >= T::ZERO,
            _ => true,
        }
    }

    #[inline]
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Unary::Relu => {
                if x > T::ZERO {
                    x
                } else {
                    T::ZERO
                }
            }
            Unary::Sigmoid => x.sigmoid(),
            Unary::Tanh => x.tanh(),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Neg => -x,
            Unary::Sqrt => x.sqrt(),
            Unary::Square => x * x,
            Unary::Scale(c) => x * T::of(c),
            Unary::AddScalar(c) => x + T::of(c),
            Unary::Powf(p) => x.powf(T::of(p)),
        }
    }

    /// dy/dx given input `x` and output `y`.
    #[inline]
    fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Unary::Relu => {
                if x > T::ZERO {
                    T::ONE
                } else {
                    T::ZERO
                }
            }
            Unary::Sigmoid => y * (T::ONE - y),
            Unary::Tanh => T::ONE - y * y,
            Unary::Exp => y,
            Unary::Log => T::ONE / x,
            Unary::Neg => -T::ONE,
            Unary::Sqrt => T::of(0.5) / y,
            Unary::Square => T::of(2.0) * x,
            Unary::Scale(c) => T::of(c),
            Unary::AddScalar(_) => T::ONE,
            Unary::Powf(p) => T::of(p) * x.powf(T::of(p - 1.0)),
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Mul, a, b)
    }

    /// Elementwise quotient; every evaluated divisor must be nonzero.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Div, a, b)
    }

    fn binary(&mut self, op: BinOp, a: Var, b: Var) -> Result<Var> {
        let ta = self.value(a)?;
        let tb = self.value(b)?;
        let out_shape = broadcast_shape(op.name(), ta.shape(), tb.shape())?;
        if op == BinOp::Div && tb.data().contains(&T::ZERO) {
            return Err(TensorError::Domain { op: "div" });
        }
        let same = ta.shape() == tb.shape();
        let out = if same {
            ta.data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| op.apply(x, y))
                .collect()
        } else {
            let n: usize = out_shape.iter().product();
            let mut out = vec![T::ZERO; n];
            let sa = broadcast_strides(ta.shape(), &out_shape);
            let sb = broadcast_strides(tb.shape(), &out_shape);
            let (da, db) = (ta.data(), tb.data());
            for_each_broadcast(&out_shape, &sa, &sb, |o, i, j| {
                out[o] = op.apply(da[i], db[j])
            });
            out
        };
        let out = Tensor::new(&out_shape, out)?;
        let shape_c = out_shape.clone();
        self.push_op(
            op.name(),
            &[a, b],
            out,
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let (xa, xb) = (ctx.input(0), ctx.input(1));
                let g = ctx.grad();
                let (na, nb) = (ctx.needs(0), ctx.needs(1));
                let mut ga = na.then(|| vec![T::ZERO; xa.numel()]);
                let mut gb = nb.then(|| vec![T::ZERO; xb.numel()]);
                let (da, db) = (xa.data(), xb.data());
                if same {
                    for i in 0..g.len() {
                        let (pa, pb) = op.partials(da[i], db[i], g[i]);
                        if let Some(ga) = ga.as_mut() {
                            ga[i] = pa;
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[i] = pb;
                        }
                    }
                } else {
                    let sa = broadcast_strides(xa.shape(), &shape_c);
                    let sb = broadcast_strides(xb.shape(), &shape_c);
                    for_each_broadcast(&shape_c, &sa, &sb, |o, i, j| {
                        let (pa, pb) = op.partials(da[i], db[j], g[o]);
                        if let Some(ga) = ga.as_mut() {
                            ga[i] += pa;
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[j] += pb;
                        }
                    });
                }
                vec![ga, gb]
            }),
        )
    }

    pub fn unary(&mut self, f: Unary, a: Var) -> Result<Var> {
        let ta = self.value(a)?;
        if !ta.data().iter().all(|&x| f.in_domain(x)) {
            return Err(TensorError::Domain { op: f.name() });
        }
        let out = Tensor::new(ta.shape(), ta.data().iter().map(|&x| f.apply(x)).collect())?;
        self.push_op(
            f.name(),
            &[a],
            out,
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let x = ctx.input(0).data();
                let y = ctx.output().data();
                let g = ctx.grad();
                let gx = (0..g.len())
                    .map(|i| g[i] * f.derivative(x[i], y[i]))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Neg, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Square, a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(Unary::Scale(c), a)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(Unary::AddScalar(c), a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape<f64>, shape: &[usize], data: &[f64]) -> Var {
        let mut t = Tensor::from_f64(shape, data).unwrap();
        t.set_requires_grad(true);
        tape.leaf(t)
    }

    #[test]
    fn add_vectors() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2], &[1.0, 2.0]);
        let b = leaf(&mut tape, &[2], &[3.0, 4.0]);
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[1], &[0.0]);
        let s = tape.sigmoid(a).unwrap();
        assert_eq!(tape.value(s).unwrap().data(), &[0.5]);
    }

    #[test]
    fn multiplicative_identity() {
        let mut tape = Tape::new();
        let data = [0.3, -1.7, 2.5, 1e-9];
        let a = leaf(&mut tape, &[2, 2], &data);
        let ones = tape.constant(Tensor::ones(&[2, 2]).unwrap());
        let p = tape.mul(a, ones).unwrap();
        assert_eq!(tape.value(p).unwrap().data(), &data);
    }

    #[test]
    fn broadcast_gradient_reduces_over_expanded_axis() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = leaf(&mut tape, &[1, 3], &[10.0, 20.0, 30.0]);
        let p = tape.mul(a, b).unwrap();
        let s = tape.sum_all(p).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(b).unwrap(), &[5.0, 7.0, 9.0]);
        assert_eq!(g.wrt(a).unwrap(), &[10.0, 20.0, 30.0, 10.0, 20.0, 30.0]);
    }

    #[test]
    fn log_of_nonpositive_is_domain_error() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2], &[1.0, 0.0]);
        assert_eq!(tape.log(a).unwrap_err(), TensorError::Domain { op: "log" });
    }

    #[test]
    fn division_by_zero_is_domain_error() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2], &[1.0, 1.0]);
        let b = leaf(&mut tape, &[2], &[1.0, 0.0]);
        assert_eq!(
            tape.div(a, b).unwrap_err(),
            TensorError::Domain { op: "div" }
        );
    }

    #[test]
    fn rank_promotion_is_refused() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2, 2], &[1.0; 4]);
        let b = leaf(&mut tape, &[2], &[1.0; 2]);
        assert!(matches!(
            tape.add(a, b),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }
}
