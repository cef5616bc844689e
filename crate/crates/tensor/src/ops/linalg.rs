use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::{BackwardCtx, Tape, Var};
use crate::tensor::Tensor;

impl<T: Real> Tape<T> {
    /// `[m,k] · [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a)?, self.value(b)?);
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::ZERO; m * n];
        T::gemm(
            m,
            k,
            n,
            T::ONE,
            ta.data(),
            (k as isize, 1),
            tb.data(),
            (n as isize, 1),
            T::ZERO,
            &mut out,
            (n as isize, 1),
        );
        let out = Tensor::new(&[m, n], out)?;
        self.push_op(
            "matmul",
            &[a, b],
            out,
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let g = ctx.grad();
                let (xa, xb) = (ctx.input(0).data(), ctx.input(1).data());
                // dA = dC · Bᵀ
                let ga = ctx.needs(0).then(|| {
                    let mut ga = vec![T::ZERO; m * k];
                    T::gemm(
                        m,
                        n,
                        k,
                        T::ONE,
                        g,
                        (n as isize, 1),
                        xb,
                        (1, n as isize),
                        T::ZERO,
                        &mut ga,
                        (k as isize, 1),
                    );
                    ga
                });
                // dB = Aᵀ · dC
                let gb = ctx.needs(1).then(|| {
                    let mut gb = vec![T::ZERO; k * n];
                    T::gemm(
                        k,
                        m,
                        n,
                        T::ONE,
                        xa,
                        (1, k as isize),
                        g,
                        (n as isize, 1),
                        T::ZERO,
                        &mut gb,
                        (n as isize, 1),
                    );
                    gb
                });
                vec![ga, gb]
            }),
        )
    }

    /// Batched product `[b,m,k] · [b,k,n] -> [b,m,n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a)?, self.value(b)?);
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(TensorError::ShapeMismatch {
                op: "bmm",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::ZERO; bs * m * n];
        for i in 0..bs {
            T::gemm(
                m,
                k,
                n,
                T::ONE,
                &ta.data()[i * m * k..],
                (k as isize, 1),
                &tb.data()[i * k * n..],
                (n as isize, 1),
                T::ZERO,
                &mut out[i * m * n..],
                (n as isize, 1),
            );
        }
        let out = Tensor::new(&[bs, m, n], out)?;
        self.push_op(
            "bmm",
            &[a, b],
            out,
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let g = ctx.grad();
                let (xa, xb) = (ctx.input(0).data(), ctx.input(1).data());
                let ga = ctx.needs(0).then(|| {
                    let mut ga = vec![T::ZERO; bs * m * k];
                    for i in 0..bs {
                        T::gemm(
                            m,
                            n,
                            k,
                            T::ONE,
                            &g[i * m * n..],
                            (n as isize, 1),
                            &xb[i * k * n..],
                            (1, n as isize),
                            T::ZERO,
                            &mut ga[i * m * k..],
                            (k as isize, 1),
                        );
                    }
                    ga
                });
                let gb = ctx.needs(1).then(|| {
                    let mut gb = vec![T::ZERO; bs * k * n];
                    for i in 0..bs {
                        T::gemm(
                            k,
                            m,
                            n,
                            T::ONE,
                            &xa[i * m * k..],
                            (1, k as isize),
                            &g[i * m * n..],
                            (n as isize, 1),
                            T::ZERO,
                            &mut gb[i * k * n..],
                            (n as isize, 1),
                        );
                    }
                    gb
                });
                vec![ga, gb]
            }),
        )
    }
}
